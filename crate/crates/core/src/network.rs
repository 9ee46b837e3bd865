//! Stacked recurrent layers with a linear readout on the final hidden state,
//! backpropagation through time, and the checkpoint file format.
//!
//! Sequences are fed as one `[batch x input]` matrix per timestep. Every
//! layer starts from a zero state. The readout sees only the deepest layer's
//! last hidden state.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::cells::{CellKind, CellParams, State, StepCache};
use crate::error::{Error, Result};
use crate::numerics::{gemm, glorot_init, Matrix, RngState, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    Linear,
    /// Linear readout followed by a softmax over classes.
    Softmax,
}

impl fmt::Display for OutputHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputHead::Linear => "linear",
            OutputHead::Softmax => "softmax",
        })
    }
}

impl FromStr for OutputHead {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(OutputHead::Linear),
            "softmax" | "linear+softmax" => Ok(OutputHead::Softmax),
            _ => Err(Error::InvalidArgument(format!("unknown output head '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub cell: CellKind,
    pub layer_sizes: Vec<usize>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub head: OutputHead,
}

impl NetworkSpec {
    pub fn new(cell: CellKind, layer_sizes: Vec<usize>, input_dim: usize, output_dim: usize) -> Self {
        NetworkSpec {
            cell,
            layer_sizes,
            input_dim,
            output_dim,
            head: OutputHead::Linear,
        }
    }

    pub fn with_head(mut self, head: OutputHead) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("network sizes must be >= 1".into()));
        }
        Ok(())
    }

    fn last_hidden(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }
}

/// Parses the `NxM` layer shorthand (N layers of M neurons) or a comma list.
pub fn parse_layers(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("bad layer spec '{s}'"));
    let sizes: Vec<usize> = if let Some((n, m)) = s.split_once(['x', 'X']) {
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        let m: usize = m.trim().parse().map_err(|_| bad())?;
        vec![m; n]
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(bad());
    }
    Ok(sizes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    pub layers: Vec<CellParams>,
    /// `[output x last_hidden]`
    pub readout: Matrix,
    pub bias: Vector,
}

/// Everything the backward pass needs from one batched forward pass.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    /// `steps[layer][t]`
    pub steps: Vec<Vec<StepCache>>,
    /// State of every layer after the last timestep.
    pub final_states: Vec<State>,
    pub logits: Matrix,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self) -> usize {
        self.logits.rows()
    }

    /// Hidden state `[batch x hidden]` of `layer` after timestep `t`.
    pub fn hidden(&self, layer: usize, t: usize) -> &Matrix {
        if t + 1 < self.len() {
            self.steps[layer][t + 1].h_prev()
        } else {
            &self.final_states[layer].h
        }
    }

    /// `trace[layer][t]` hidden states.
    pub fn hidden_trace(&self) -> Vec<Vec<&Matrix>> {
        (0..self.steps.len())
            .map(|l| (0..self.len()).map(|t| self.hidden(l, t)).collect())
            .collect()
    }
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

impl Network {
    /// Randomly initialized network; the readout is Glorot-uniform with zero bias.
    pub fn init(spec: NetworkSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let mut input = spec.input_dim;
        let mut layers = Vec::with_capacity(spec.layer_sizes.len());
        for &h in &spec.layer_sizes {
            layers.push(CellParams::init(spec.cell, input, h, rng));
            input = h;
        }
        let readout = glorot_init(spec.output_dim, spec.last_hidden(), rng);
        Ok(Network {
            bias: Vector::zeros(spec.output_dim),
            readout,
            layers,
            spec,
        })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut input = spec.input_dim;
        let mut layers = Vec::with_capacity(spec.layer_sizes.len());
        for &h in &spec.layer_sizes {
            layers.push(CellParams::zeros(spec.cell, input, h));
            input = h;
        }
        Ok(Network {
            readout: Matrix::zeros(spec.output_dim, spec.last_hidden()),
            bias: Vector::zeros(spec.output_dim),
            layers,
            spec,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Network::zeros(self.spec.clone()).expect("spec already validated")
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// Named parameter arrays: `layer{i}.{name}`, then `readout.W`, `readout.b`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, shape, data) in layer.tensors() {
                out.push((format!("layer{i}.{name}"), shape, data));
            }
        }
        out.push((
            "readout.W".to_string(),
            vec![self.readout.rows(), self.readout.cols()],
            self.readout.as_slice(),
        ));
        out.push(("readout.b".to_string(), vec![self.bias.len()], self.bias.as_slice()));
        out
    }

    /// Mutable views in the order of [`Network::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(self.readout.as_mut_slice());
        out.push(self.bias.as_mut_slice());
        out
    }

    pub fn zero_state(&self, batch: usize) -> Vec<State> {
        self.spec
            .layer_sizes
            .iter()
            .map(|&h| State::zeros(self.spec.cell, batch, h))
            .collect()
    }

    /// Batched forward pass from zero initial states; returns readout logits.
    pub fn forward_batch(&self, steps: &[Matrix]) -> Result<(Matrix, SequenceCache)> {
        let batch = steps.first().map_or(0, Matrix::rows);
        self.forward_batch_from(steps, self.zero_state(batch))
    }

    /// Batched forward pass from the given per-layer initial states.
    pub fn forward_batch_from(
        &self,
        steps: &[Matrix],
        initial: Vec<State>,
    ) -> Result<(Matrix, SequenceCache)> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("sequence must have T >= 1".into()));
        }
        let batch = steps[0].rows();
        if steps
            .iter()
            .any(|s| s.rows() != batch || s.cols() != self.spec.input_dim)
        {
            return Err(Error::shape(
                "forward_sequence",
                format!("expected [{batch} x {}] at every step", self.spec.input_dim),
            ));
        }
        if initial.len() != self.layers.len() {
            return Err(Error::shape("forward_sequence", "one initial state per layer"));
        }
        let mut states = initial;
        let mut caches: Vec<Vec<StepCache>> = (0..self.layers.len())
            .map(|_| Vec::with_capacity(steps.len()))
            .collect();
        for x in steps {
            let mut input = x;
            for (l, layer) in self.layers.iter().enumerate() {
                let (next, cache) = layer.forward(input, &states[l])?;
                states[l] = next;
                caches[l].push(cache);
                input = &states[l].h;
            }
        }
        let top = &states.last().expect("at least one layer").h;
        let mut logits = Matrix::zeros(batch, self.spec.output_dim);
        for r in 0..batch {
            logits.row_mut(r).copy_from_slice(self.bias.as_slice());
        }
        gemm(1.0, top, false, &self.readout, true, 1.0, &mut logits);
        Ok((
            logits.clone(),
            SequenceCache {
                steps: caches,
                final_states: states,
                logits,
            },
        ))
    }

    /// Applies the output head to readout logits.
    pub fn head_output(&self, logits: &Matrix) -> Matrix {
        match self.spec.head {
            OutputHead::Linear => logits.clone(),
            OutputHead::Softmax => softmax_rows(logits),
        }
    }

    /// Single-sequence forward on a `[T x input]` matrix.
    ///
    /// Returns the head output, the cache, and `trace[layer][t]` hidden vectors.
    pub fn forward_sequence(&self, seq: &Matrix) -> Result<(Vector, SequenceCache, Vec<Vec<Vector>>)> {
        let steps = sequence_steps(seq);
        let (logits, cache) = self.forward_batch(&steps)?;
        let out = Vector::from(self.head_output(&logits).into_vec());
        let trace = cache
            .hidden_trace()
            .into_iter()
            .map(|layer| {
                layer
                    .into_iter()
                    .map(|h| Vector::from(h.as_slice().to_vec()))
                    .collect()
            })
            .collect();
        Ok((out, cache, trace))
    }

    /// BPTT: adds into `grads` the gradient of `sum_b <grad_logits[b], logits[b]>`.
    ///
    /// `grad_logits` is taken with respect to the readout logits, i.e. before
    /// any softmax.
    pub fn accumulate_gradients(
        &self,
        cache: &SequenceCache,
        grad_logits: &Matrix,
        grads: &mut Network,
    ) -> Result<()> {
        let batch = cache.batch();
        if grad_logits.shape() != (batch, self.spec.output_dim) {
            return Err(Error::shape("backward_sequence", "grad_output shape"));
        }
        if cache.steps.len() != self.layers.len() || grads.spec != self.spec {
            return Err(Error::shape("backward_sequence", "cache or gradient does not match network"));
        }
        let t_len = cache.len();
        let top = &cache.final_states.last().expect("layers").h;
        gemm(1.0, grad_logits, true, top, false, 1.0, &mut grads.readout);
        for r in 0..batch {
            for (acc, g) in grads.bias.as_mut_slice().iter_mut().zip(grad_logits.row(r)) {
                *acc += g;
            }
        }
        let top_hidden = self.spec.last_hidden();
        let mut d_top = Matrix::zeros(batch, top_hidden);
        gemm(1.0, grad_logits, false, &self.readout, false, 0.0, &mut d_top);

        // Gradient arriving at each layer's output, per timestep. Only the
        // final step of the top layer receives the readout gradient.
        let mut d_out: Vec<Option<Matrix>> = vec![None; t_len];
        d_out[t_len - 1] = Some(d_top);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let hidden = layer.hidden_dim();
            let mut carry = State::zeros(self.spec.cell, batch, hidden);
            let mut d_in: Vec<Option<Matrix>> = vec![None; t_len];
            for t in (0..t_len).rev() {
                if let Some(d) = &d_out[t] {
                    carry.h.add_assign(d);
                }
                let (dx, dprev) = layer.backward(&cache.steps[l][t], &carry, &mut grads.layers[l])?;
                if l > 0 {
                    d_in[t] = Some(dx);
                }
                carry = dprev;
            }
            d_out = d_in;
        }
        Ok(())
    }

    /// Mean gradient over the batch rows of `grad_logits`.
    pub fn backward_batch(&self, cache: &SequenceCache, grad_logits: &Matrix) -> Result<Network> {
        let mut scaled = grad_logits.clone();
        scaled.scale(1.0 / cache.batch().max(1) as f64);
        let mut grads = self.zeros_like();
        self.accumulate_gradients(cache, &scaled, &mut grads)?;
        Ok(grads)
    }

    /// Single-sequence gradient with respect to every parameter.
    pub fn backward_sequence(&self, cache: &SequenceCache, grad_output: &Vector) -> Result<Network> {
        self.backward_batch(cache, &grad_output.to_row())
    }
}

/// Splits a `[T x d]` sequence into `T` one-row step matrices.
pub fn sequence_steps(seq: &Matrix) -> Vec<Matrix> {
    (0..seq.rows()).map(|t| seq.select_rows(&[t])).collect()
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Network, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, _, d)| d.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

pub const CHECKPOINT_FORMAT: &str = "brc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Run metadata stored alongside parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub iteration: u64,
}

/// Writes the text checkpoint.
///
/// Layout: a `format brc-checkpoint 1` line, `key value` header lines, then
/// for each tensor a `tensor <name> <dims...>` line followed by one value per
/// line in shortest round-trip decimal, and a closing `end`.
pub fn write_checkpoint(w: &mut impl Write, net: &Network, meta: CheckpointMeta) -> std::io::Result<()> {
    let spec = net.spec();
    writeln!(w, "format {CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}")?;
    writeln!(w, "cell {}", spec.cell)?;
    writeln!(w, "input_dim {}", spec.input_dim)?;
    writeln!(w, "output_dim {}", spec.output_dim)?;
    let layers: Vec<String> = spec.layer_sizes.iter().map(usize::to_string).collect();
    writeln!(w, "layers {}", layers.join(","))?;
    writeln!(w, "head {}", spec.head)?;
    writeln!(w, "seed {}", meta.seed)?;
    writeln!(w, "iteration {}", meta.iteration)?;
    for (name, shape, data) in net.tensors() {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        writeln!(w, "tensor {name} {}", dims.join(" "))?;
        for v in data {
            writeln!(w, "{v:?}")?;
        }
    }
    writeln!(w, "end")
}

pub fn save_checkpoint(path: &Path, net: &Network, meta: CheckpointMeta) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, net, meta)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn parse_checkpoint(text: &str) -> Result<(Network, CheckpointMeta)> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let mut header = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing '{key}'")))?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(bad(format!("expected '{key}', found '{line}'"))),
        }
    };
    let format = header("format")?;
    if format != format!("{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}") {
        return Err(bad(format!("unsupported format '{format}'")));
    }
    let num = |s: String, key: &str| -> Result<u64> {
        s.parse().map_err(|_| bad(format!("bad value for {key}: '{s}'")))
    };
    let cell: CellKind = header("cell")?.parse()?;
    let input_dim = num(header("input_dim")?, "input_dim")? as usize;
    let output_dim = num(header("output_dim")?, "output_dim")? as usize;
    let layer_sizes = parse_layers(&header("layers")?)?;
    let head: OutputHead = header("head")?.parse()?;
    let seed = num(header("seed")?, "seed")?;
    let iteration = num(header("iteration")?, "iteration")?;
    let spec = NetworkSpec {
        cell,
        layer_sizes,
        input_dim,
        output_dim,
        head,
    };
    let mut net = Network::zeros(spec)?;
    let expected: Vec<(String, Vec<usize>)> = net
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    for ((name, shape), dst) in expected.iter().zip(net.tensors_mut()) {
        let line = lines.next().ok_or_else(|| bad(format!("missing tensor {name}")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") || parts.next() != Some(name.as_str()) {
            return Err(bad(format!("expected tensor {name}, found '{line}'")));
        }
        let dims: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| bad(format!("bad dim in '{line}'"))))
            .collect::<Result<_>>()?;
        if &dims != shape {
            return Err(bad(format!("tensor {name}: shape {dims:?}, expected {shape:?}")));
        }
        for slot in dst.iter_mut() {
            let v = lines.next().ok_or_else(|| bad(format!("tensor {name} truncated")))?;
            let x: f64 = v.parse().map_err(|_| bad(format!("bad number '{v}' in {name}")))?;
            if !x.is_finite() {
                return Err(Error::NonFinite("checkpoint"));
            }
            *slot = x;
        }
    }
    match lines.next() {
        Some("end") => Ok((net, CheckpointMeta { seed, iteration })),
        other => Err(bad(format!("expected 'end', found {other:?}"))),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}
