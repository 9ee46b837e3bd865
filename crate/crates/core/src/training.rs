//! Losses, the Adam optimizer and the experiment loop.

use std::io::Write;
use std::time::Instant;

use crate::benchmarks::{BatchTargets, BenchmarkKind, LabeledSequence, MnistDataset, PixelLayout, SampleSpec, SequenceBatch};
use crate::error::{Error, Result};
use crate::network::{clip_global_norm, Network, NetworkSpec, OutputHead};
use crate::numerics::{Matrix, RngState, Vector};

/// Mean squared error over the `n` outputs and its gradient `2(pred - target)/n`.
pub fn mse_loss(pred: &Vector, target: &Vector) -> Result<(f64, Vector)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(
            "mse_loss",
            format!("pred {} vs target {}", pred.len(), target.len()),
        ));
    }
    let n = pred.len() as f64;
    let diff: Vec<f64> = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| p - t)
        .collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, Vector::from(diff.iter().map(|d| 2.0 * d / n).collect::<Vec<_>>())))
}

/// Softmax cross-entropy on raw logits, stabilized by log-sum-exp.
pub fn cross_entropy_loss(logits: &Vector, class: usize) -> Result<(f64, Vector)> {
    if class >= logits.len() {
        return Err(Error::shape(
            "cross_entropy_loss",
            format!("class {class} with {} logits", logits.len()),
        ));
    }
    let l = logits.as_slice();
    let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = l.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad: Vec<f64> = l.iter().map(|v| (v - lse).exp()).collect();
    grad[class] -= 1.0;
    Ok((lse - l[class], Vector::from(grad)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Per-row losses over a batch of logits. Returns the mean loss and the
/// per-sample gradients (row `b` is dL_b/dlogits_b, not divided by batch).
pub fn batch_loss(logits: &Matrix, targets: &BatchTargets) -> Result<(f64, Matrix)> {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for r in 0..logits.rows() {
        let pred = Vector::from(logits.row(r).to_vec());
        let (loss, g) = match targets {
            BatchTargets::Values(t) => mse_loss(&pred, &Vector::from(t.row(r).to_vec()))?,
            BatchTargets::Classes(c) => cross_entropy_loss(&pred, c[r])?,
        };
        total += loss;
        grad.row_mut(r).copy_from_slice(g.as_slice());
    }
    Ok((total / logits.rows().max(1) as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a list of parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize], config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_network(net: &Network, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = net.tensors().iter().map(|(_, _, d)| d.len()).collect();
        AdamState::new(&sizes, config)
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != self.m.len()
            || params
                .iter()
                .zip(&grads)
                .zip(&self.m)
                .any(|((p, g), m)| p.len() != m.len() || g.len() != m.len())
        {
            return Err(Error::shape("adam_step", "parameter/gradient/moment shapes differ"));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to a network given a gradient of the same shape.
pub fn adam_step(net: &mut Network, grads: &Network, state: &mut AdamState) -> Result<()> {
    let g: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, _, d)| d).collect();
    state.update(net.tensors_mut(), g)
}

/// Where training and test samples come from.
#[derive(Debug, Clone)]
pub enum Task {
    Synthetic(SampleSpec),
    Mnist {
        train: MnistDataset,
        test: MnistDataset,
        layout: PixelLayout,
        n_black: usize,
    },
}

impl Task {
    pub fn benchmark(&self) -> BenchmarkKind {
        match self {
            Task::Synthetic(s) => s.benchmark,
            Task::Mnist { .. } => BenchmarkKind::SeqMnist,
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        if self.benchmark().is_classification() {
            LossKind::CrossEntropy
        } else {
            LossKind::Mse
        }
    }

    /// Network shape matching this task's input and output widths.
    pub fn network_spec(&self, cell: crate::cells::CellKind, layers: Vec<usize>) -> NetworkSpec {
        let b = self.benchmark();
        let head = if b.is_classification() {
            OutputHead::Softmax
        } else {
            OutputHead::Linear
        };
        NetworkSpec::new(cell, layers, b.input_dim(), b.output_dim()).with_head(head)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Task::Synthetic(s) => s.validate(),
            Task::Mnist { train, .. } if train.is_empty() => {
                Err(Error::InvalidArgument("empty MNIST training set".into()))
            }
            Task::Mnist { .. } => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut RngState) -> Result<LabeledSequence> {
        match self {
            Task::Synthetic(s) => s.sample(rng),
            Task::Mnist { train, layout, n_black, .. } => {
                let i = rng.below(train.len() as u64) as usize;
                Ok(train.sequence(i, *layout, *n_black))
            }
        }
    }

    pub fn sample_batch(&self, size: usize, rng: &mut RngState) -> Result<SequenceBatch> {
        let samples = (0..size).map(|_| self.sample(rng)).collect::<Result<Vec<_>>>()?;
        SequenceBatch::from_samples(&samples.iter().collect::<Vec<_>>())
    }

    /// Fixed evaluation set: `size` fresh synthetic samples, or the first
    /// `size` test images.
    pub fn test_set(&self, size: usize, rng: &mut RngState) -> Result<Vec<LabeledSequence>> {
        match self {
            Task::Synthetic(s) => s.generate(size, rng),
            Task::Mnist { test, layout, n_black, .. } => Ok((0..size.min(test.len()))
                .map(|i| test.sequence(i, *layout, *n_black))
                .collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub test_size: usize,
    pub adam: AdamConfig,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Worker threads for the per-sample fan-out inside an iteration.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 30_000,
            batch_size: 100,
            eval_every: 1000,
            seed: 0,
            test_size: 2000,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.eval_every == 0 || self.test_size == 0 || self.workers == 0 {
            return Err(Error::InvalidArgument(
                "iterations, batch_size, eval_every, test_size and workers must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Mean mini-batch loss since the previous record (the first batch's
    /// loss before any update for iteration 0).
    pub train_loss: f64,
    /// Test MSE for regression tasks, accuracy for classification.
    pub test_metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EvalRecord>,
}

impl RunLog {
    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,train_loss,test_metric,seconds")?;
        for r in &self.records {
            writeln!(w, "{},{:?},{:?},{:.3}", r.iteration, r.train_loss, r.test_metric, r.seconds)?;
        }
        Ok(())
    }
}

/// Mean loss and summed (not averaged) gradients over a batch, split across
/// `workers` threads. Partial gradients are reduced in chunk order.
pub fn batch_gradients(net: &Network, batch: &SequenceBatch, workers: usize) -> Result<(f64, Network)> {
    let size = batch.batch_size();
    let chunk_grad = |sub: &SequenceBatch| -> Result<(f64, Network)> {
        let (logits, cache) = net.forward_batch(&sub.inputs)?;
        let (loss, grad_logits) = batch_loss(&logits, &sub.targets)?;
        let mut grads = net.zeros_like();
        net.accumulate_gradients(&cache, &grad_logits, &mut grads)?;
        Ok((loss * sub.batch_size() as f64, grads))
    };
    let workers = workers.clamp(1, size.max(1));
    let parts: Vec<Result<(f64, Network)>> = if workers == 1 {
        vec![chunk_grad(batch)]
    } else {
        let per = size.div_ceil(workers);
        let subs: Vec<SequenceBatch> = (0..size)
            .step_by(per)
            .map(|lo| batch.slice(lo..(lo + per).min(size)))
            .collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = subs.iter().map(|sub| s.spawn(|| chunk_grad(sub))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };
    let mut total_loss = 0.0;
    let mut grads: Option<Network> = None;
    for part in parts {
        let (loss, g) = part?;
        total_loss += loss;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                    for (x, y) in a.iter_mut().zip(b.2) {
                        *x += y;
                    }
                }
            }
        }
    }
    let mut grads = grads.expect("at least one chunk");
    let inv = 1.0 / size as f64;
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|g| *g *= inv);
    }
    Ok((total_loss * inv, grads))
}

/// Test metric and mean loss over a fixed sample set, evaluated in chunks.
pub fn evaluate(net: &Network, samples: &[LabeledSequence], chunk: usize) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut metric_sum = 0.0;
    for part in samples.chunks(chunk.max(1)) {
        let batch = SequenceBatch::from_samples(&part.iter().collect::<Vec<_>>())?;
        let (logits, _) = net.forward_batch(&batch.inputs)?;
        let (loss, _) = batch_loss(&logits, &batch.targets)?;
        loss_sum += loss * part.len() as f64;
        metric_sum += match &batch.targets {
            BatchTargets::Values(_) => loss * part.len() as f64,
            BatchTargets::Classes(c) => (0..logits.rows())
                .filter(|&r| argmax(logits.row(r)) == c[r])
                .count() as f64,
        };
    }
    let n = samples.len().max(1) as f64;
    Ok((metric_sum / n, loss_sum / n))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Random-stream ids derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const TEST: u64 = 2;
}

pub fn train(spec: NetworkSpec, task: &Task, config: &TrainConfig) -> Result<(Network, RunLog)> {
    train_with(spec, task, config, |_| {})
}

/// Trains from a fresh seeded initialization, calling `on_eval` after each record.
pub fn train_with(
    spec: NetworkSpec,
    task: &Task,
    config: &TrainConfig,
    mut on_eval: impl FnMut(&EvalRecord),
) -> Result<(Network, RunLog)> {
    config.validate()?;
    task.validate()?;
    let b = task.benchmark();
    if spec.input_dim != b.input_dim() || spec.output_dim != b.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "network {}->{} does not fit benchmark {b} ({}->{})",
            spec.input_dim,
            spec.output_dim,
            b.input_dim(),
            b.output_dim()
        )));
    }
    let mut net = Network::init(spec, &mut RngState::with_stream(config.seed, streams::INIT))?;
    let mut data_rng = RngState::with_stream(config.seed, streams::TRAIN);
    let test = task.test_set(config.test_size, &mut RngState::with_stream(config.seed, streams::TEST))?;
    let mut adam = AdamState::for_network(&net, config.adam);
    let start = Instant::now();
    let mut log = RunLog::default();
    let mut window = (0.0, 0usize);
    let eval_chunk = 256;

    for it in 0..config.iterations {
        let batch = task.sample_batch(config.batch_size, &mut data_rng)?;
        let (loss, mut grads) = batch_gradients(&net, &batch, config.workers)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        if it == 0 {
            let (metric, _) = evaluate(&net, &test, eval_chunk)?;
            let rec = EvalRecord {
                iteration: 0,
                train_loss: loss,
                test_metric: metric,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_eval(&rec);
            log.records.push(rec);
        }
        if let Some(max) = config.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        adam_step(&mut net, &grads, &mut adam)?;
        window = (window.0 + loss, window.1 + 1);
        let done = it + 1;
        if done % config.eval_every == 0 || done == config.iterations {
            let (metric, _) = evaluate(&net, &test, eval_chunk)?;
            let rec = EvalRecord {
                iteration: done,
                train_loss: window.0 / window.1 as f64,
                test_metric: metric,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_eval(&rec);
            log.records.push(rec);
            window = (0.0, 0);
        }
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;

    fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], k: usize) -> f64 {
        let mut p = x.to_vec();
        let eps = 1e-6;
        p[k] += eps;
        let up = f(&p);
        p[k] -= 2.0 * eps;
        (up - f(&p)) / (2.0 * eps)
    }

    #[test]
    fn mse_values() {
        let v = |d: &[f64]| Vector::from(d.to_vec());
        let (l, g) = mse_loss(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap();
        assert_eq!((l, g), (0.0, v(&[0.0, 0.0])));
        let (l, g) = mse_loss(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, v(&[1.0, 0.0]));
        assert!(mse_loss(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn losses_match_finite_differences() {
        let mut rng = RngState::new(4);
        let pred: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let target = Vector::from((0..5).map(|_| rng.normal()).collect::<Vec<_>>());
        let (_, g) = mse_loss(&Vector::from(pred.clone()), &target).unwrap();
        let f = |p: &[f64]| mse_loss(&Vector::from(p.to_vec()), &target).unwrap().0;
        for k in 0..5 {
            assert!((g[k] - fd(f, &pred, k)).abs() < 1e-8);
        }
        let (_, g) = cross_entropy_loss(&Vector::from(pred.clone()), 3).unwrap();
        let f = |p: &[f64]| cross_entropy_loss(&Vector::from(p.to_vec()), 3).unwrap().0;
        for k in 0..5 {
            assert!((g[k] - fd(f, &pred, k)).abs() < 1e-8);
        }
    }

    #[test]
    fn cross_entropy_is_stable() {
        let (l, g) = cross_entropy_loss(&Vector::from(vec![1000.0, 0.0]), 0).unwrap();
        assert!(l.abs() < 1e-12 && g.as_slice().iter().all(|v| v.is_finite()));
        let (l, _) = cross_entropy_loss(&Vector::from(vec![0.0; 10]), 7).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!(cross_entropy_loss(&Vector::from(vec![0.0; 3]), 3).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = vec![1.5, -2.0];
        let mut s = AdamState::new(&[2], AdamConfig::default());
        s.update(vec![&mut p], vec![&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(s.step, 1);
        assert!(s.update(vec![&mut p[..1]], vec![&[0.0]]).is_err());
    }

    #[test]
    fn adam_first_step_closed_form() {
        // m_hat = g, v_hat = g^2 after bias correction: step = lr * g / (|g| + eps).
        for g in [0.3, -2.0, 1e-3] {
            let mut p = vec![0.0];
            let mut s = AdamState::new(&[1], AdamConfig::default());
            s.update(vec![&mut p], vec![&[g]]).unwrap();
            let want = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p[0] - want).abs() < 1e-15, "{g}: {} vs {want}", p[0]);
        }
    }

    #[test]
    fn adam_descends_scalar_quadratic() {
        let mut w = vec![1.0];
        let mut s = AdamState::new(&[1], AdamConfig::default());
        let mut prev = f64::INFINITY;
        for step in 0..200 {
            let g = 2.0 * w[0];
            s.update(vec![&mut w], vec![&[g]]).unwrap();
            if step < 10 {
                assert!(w[0].abs() < prev);
            }
            if step >= 3 {
                assert!(w[0] * w[0] < prev * prev);
            }
            prev = w[0].abs();
        }
    }

    fn small_task() -> (NetworkSpec, Task) {
        let task = Task::Synthetic(SampleSpec::new(BenchmarkKind::CopyFirst, 5));
        (task.network_spec(CellKind::Gru, vec![6]), task)
    }

    #[test]
    fn one_iteration_logs_two_records() {
        let (spec, task) = small_task();
        let cfg = TrainConfig { iterations: 1, batch_size: 4, test_size: 8, ..Default::default() };
        let (_, log) = train(spec, &task, &cfg).unwrap();
        let its: Vec<usize> = log.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![0, 1]);
    }

    #[test]
    fn training_is_deterministic() {
        let (spec, task) = small_task();
        let cfg = TrainConfig { iterations: 30, batch_size: 4, eval_every: 10, test_size: 16, seed: 5, ..Default::default() };
        let (n1, l1) = train(spec.clone(), &task, &cfg).unwrap();
        let (n2, l2) = train(spec, &task, &cfg).unwrap();
        assert_eq!(n1, n2);
        let strip = |l: &RunLog| l.records.iter().map(|r| (r.iteration, r.train_loss, r.test_metric)).collect::<Vec<_>>();
        assert_eq!(strip(&l1), strip(&l2));
        assert!(l1.records.windows(2).all(|w| w[0].iteration < w[1].iteration));
    }

    #[test]
    fn workers_split_matches_single_within_rounding() {
        let (spec, task) = small_task();
        let net = Network::init(spec, &mut RngState::new(1)).unwrap();
        let batch = task.sample_batch(7, &mut RngState::new(2)).unwrap();
        let (l1, g1) = batch_gradients(&net, &batch, 1).unwrap();
        let (l3, g3) = batch_gradients(&net, &batch, 3).unwrap();
        assert!((l1 - l3).abs() < 1e-12);
        for (a, b) in g1.tensors().iter().zip(g3.tensors().iter()) {
            for (x, y) in a.2.iter().zip(b.2) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let (l3b, g3b) = batch_gradients(&net, &batch, 3).unwrap();
        assert_eq!((l3, &g3), (l3b, &g3b));
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let (spec, _) = small_task();
        let other = Task::Synthetic(SampleSpec { benchmark: BenchmarkKind::Denoising, t: 20, n: 5, n_black: 0 });
        assert!(train(spec, &other, &TrainConfig { iterations: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn run_log_csv() {
        let log = RunLog {
            records: vec![EvalRecord { iteration: 0, train_loss: 1.5, test_metric: 0.25, seconds: 0.0 }],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,train_loss,test_metric,seconds\n0,1.5,0.25,0.000\n");
    }
}
