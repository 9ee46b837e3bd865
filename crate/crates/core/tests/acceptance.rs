//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//!
//! Criteria 5-7 train networks for thousands of iterations and dominate the
//! runtime (hours on a single core). `BRC_MNIST_DIR` switches criterion 10 from
//! synthetic digits to the real IDX files.

use std::io::Write;
use std::time::Instant;

use brc::benchmarks::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, synthetic_digits, BenchmarkKind,
    PixelLayout, SampleSpec, Target,
};
use brc::cells::CellParams;
use brc::cli::{build_task, TaskArgs};
use brc::dynamics::{check_pitchfork_conditions, find_fixed_points, simulate_scalar_cell, ScalarCellConfig, Stability};
use brc::gradcheck::{check_network, random_problem};
use brc::training::{evaluate, streams, train_with, Task, TrainConfig};
use brc::{CellKind, Network, RngState, Vector};

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn progress(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "    {line}");
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = Vec::new();
    let mut pass = true;
    for cell in CellKind::ALL {
        let mut max = 0.0f64;
        for k in 0..100u64 {
            let mut shape = RngState::with_stream(k, 7);
            let depth = 1 + shape.below(2) as usize;
            let hidden = 1 + shape.below(8) as usize;
            let t_len = 1 + shape.below(10) as usize;
            let batch = 1 + shape.below(3) as usize;
            let (net, data) = random_problem(cell, vec![hidden; depth], t_len, batch, 1000 + k).unwrap();
            let r = check_network(&net, &data).unwrap();
            max = max.max(r.max_rel_error);
        }
        pass &= max < 1e-5;
        worst.push(format!("{cell}={max:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    Outcome {
        pass,
        detail: format!("max rel error {} (limit 1e-5), {secs:.1}s (limit 120s)", worst.join(" ")),
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut checked = 0;
    for c in [0.1, 0.3, 0.5, 0.7, 0.9] {
        for k in 1..=50 {
            for a in [k as f64 / 51.0, 1.0 + k as f64 / 51.0] {
                let r = find_fixed_points(&ScalarCellConfig::new(a, c, 0.0).unwrap());
                let kinds: Vec<Stability> = r.points.iter().map(|p| p.stability).collect();
                let ok = if a < 1.0 {
                    kinds == [Stability::Stable]
                } else {
                    kinds == [Stability::Stable, Stability::Unstable, Stability::Stable]
                };
                checked += 1;
                if !ok {
                    bad.push(format!("(a={a:.4}, c={c}): {kinds:?}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: bad.is_empty() && secs < 10.0,
        detail: format!(
            "{checked} configurations, {} wrong{}, {secs:.2}s (limit 10s)",
            bad.len(),
            bad.first().map(|b| format!(", first {b}")).unwrap_or_default()
        ),
    }
}

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in [0.1, 0.5, 0.9] {
        let r = check_pitchfork_conditions(c).unwrap();
        let mut eq_max = 0.0f64;
        for name in ["G", "dG/dh", "d2G/dh2", "dG/da"] {
            let k = r.get(name).unwrap();
            eq_max = eq_max.max(k.closed_form.abs()).max(k.finite_difference.abs());
        }
        let d3 = r.get("d3G/dh3").unwrap();
        let dha = r.get("d2G/dhda").unwrap();
        let d3_err = (d3.closed_form - 2.0 * (1.0 - c)).abs().max((d3.finite_difference - 2.0 * (1.0 - c)).abs());
        let dha_err = (dha.closed_form - (c - 1.0)).abs().max((dha.finite_difference - (c - 1.0)).abs());
        pass &= eq_max < 1e-9 && d3_err < 1e-6 && dha_err < 1e-6 && d3.closed_form > 0.0 && dha.closed_form < 0.0;
        parts.push(format!("c={c}: eq {eq_max:.1e}, d3 {d3_err:.1e}, dhda {dha_err:.1e}"));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

/// Central-difference Jacobian of one cell step with respect to the previous state.
fn fd_jacobian(p: &CellParams, x: &Vector, h: &Vector) -> Vec<Vec<f64>> {
    let n = h.len();
    let eps = 1e-6;
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut up = h.clone();
        up[j] += eps;
        let mut down = h.clone();
        down[j] -= eps;
        let (fu, _) = p.forward_vec(x, &up).unwrap();
        let (fd, _) = p.forward_vec(x, &down).unwrap();
        for (i, row) in jac.iter_mut().enumerate() {
            row[j] = (fu[i] - fd[i]) / (2.0 * eps);
        }
    }
    jac
}

fn max_off_diagonal(jac: &[Vec<f64>]) -> f64 {
    let mut m = 0.0f64;
    for (i, row) in jac.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                m = m.max(v.abs());
            }
        }
    }
    m
}

fn criterion_4() -> Outcome {
    let mut brc_max = 0.0f64;
    let mut nbrc_min = f64::INFINITY;
    for k in 0..50u64 {
        let mut rng = RngState::new(500 + k);
        let input = 1 + rng.below(4) as usize;
        let hidden = 2 + rng.below(7) as usize;
        let x = Vector::from((0..input).map(|_| rng.normal()).collect::<Vec<_>>());
        let h = Vector::from((0..hidden).map(|_| rng.uniform_in(-1.0, 1.0)).collect::<Vec<_>>());
        let brc = CellParams::init(CellKind::Brc, input, hidden, &mut rng);
        brc_max = brc_max.max(max_off_diagonal(&fd_jacobian(&brc, &x, &h)));
        let nbrc = CellParams::init(CellKind::Nbrc, input, hidden, &mut rng);
        nbrc_min = nbrc_min.min(max_off_diagonal(&fd_jacobian(&nbrc, &x, &h)));
    }
    Outcome {
        pass: brc_max < 1e-8 && nbrc_min > 1e-3,
        detail: format!(
            "BRC max |off-diagonal| {brc_max:.1e} (< 1e-8); nBRC smallest per-config max {nbrc_min:.2e} (> 1e-3)"
        ),
    }
}

fn run_training(cell: CellKind, spec: SampleSpec, iterations: usize, batch: usize, seed: u64) -> f64 {
    let task = Task::Synthetic(spec);
    let config = TrainConfig {
        iterations,
        batch_size: batch,
        eval_every: iterations / 10,
        seed,
        test_size: 2000,
        ..TrainConfig::default()
    };
    let label = format!("{cell} {} T={} N={}", spec.benchmark, spec.t, spec.n);
    let (_, log) = train_with(task.network_spec(cell, vec![50, 50]), &task, &config, |r| {
        progress(&format!(
            "{label}: iter {} train_loss {:.4} test_mse {:.4} ({:.0}s)",
            r.iteration, r.train_loss, r.test_metric, r.seconds
        ))
    })
    .unwrap();
    log.last().unwrap().test_metric
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for cell in [CellKind::Brc, CellKind::Nbrc, CellKind::Gru] {
        let start = Instant::now();
        let mse = run_training(cell, SampleSpec::new(BenchmarkKind::CopyFirst, 5), 5000, 32, 1);
        pass &= mse < 0.05;
        parts.push(format!("{cell} {mse:.4} ({:.0}s)", start.elapsed().as_secs_f64()));
    }
    Outcome {
        pass,
        detail: format!("T=5 test MSE (limit 0.05): {}", parts.join(", ")),
    }
}

fn copy_first_t50_info() -> String {
    let mut parts = Vec::new();
    for cell in [CellKind::Brc, CellKind::Nbrc, CellKind::Gru] {
        let mse = run_training(cell, SampleSpec::new(BenchmarkKind::CopyFirst, 50), 5000, 32, 1);
        parts.push(format!("{cell} {mse:.4}"));
    }
    format!("copy_first T=50, 5000 iterations, batch 32, test MSE: {}", parts.join(", "))
}

fn criterion_6() -> Outcome {
    let spec = SampleSpec::new(BenchmarkKind::CopyFirst, 300);
    let nbrc = run_training(CellKind::Nbrc, spec, 10_000, 32, 1);
    let lstm = run_training(CellKind::Lstm, spec, 10_000, 32, 1);
    let gru = run_training(CellKind::Gru, spec, 10_000, 32, 1);
    Outcome {
        pass: nbrc < 0.1 && lstm > 0.5 && nbrc < gru,
        detail: format!("T=300 test MSE: nbrc {nbrc:.4} (< 0.1), lstm {lstm:.4} (> 0.5), gru {gru:.4} (> nbrc)"),
    }
}

fn criterion_7() -> Outcome {
    let spec = SampleSpec {
        n: 80,
        ..SampleSpec::new(BenchmarkKind::Denoising, 100)
    };
    let mse: Vec<(CellKind, f64)> = [CellKind::Brc, CellKind::Nbrc, CellKind::Gru, CellKind::Lstm]
        .into_iter()
        .map(|c| (c, run_training(c, spec, 10_000, 32, 1)))
        .collect();
    let pass = mse.iter().all(|&(c, m)| if c.is_bistable() { m < 0.2 } else { m > 0.5 });
    let parts: Vec<String> = mse.iter().map(|(c, m)| format!("{c} {m:.4}")).collect();
    Outcome {
        pass,
        detail: format!("T=100 N=80 test MSE (bistable < 0.2, gated > 0.5): {}", parts.join(", ")),
    }
}

fn criterion_8() -> Outcome {
    let specs = [
        SampleSpec::new(BenchmarkKind::CopyFirst, 50),
        SampleSpec {
            n: 80,
            ..SampleSpec::new(BenchmarkKind::Denoising, 100)
        },
        SampleSpec::new(BenchmarkKind::SparseCopy, 50),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for spec in specs {
        let samples = spec
            .generate(10_000, &mut RngState::with_stream(8, streams::TEST))
            .unwrap();
        let task = Task::Synthetic(spec);
        let zero = Network::zeros(task.network_spec(CellKind::Gru, vec![4])).unwrap();
        let (mse, _) = evaluate(&zero, &samples, 500).unwrap();
        let (mut sum, mut count) = (0.0, 0usize);
        for s in &samples {
            if let Target::Values(v) = &s.target {
                sum += v.as_slice().iter().map(|y| y * y).sum::<f64>();
                count += v.len();
            }
        }
        let direct = sum / count as f64;
        pass &= (mse - 1.0).abs() <= 0.05 && (mse - direct).abs() < 1e-12;
        parts.push(format!("{} {mse:.4}", spec.benchmark));
    }
    Outcome {
        pass,
        detail: format!("predict-zero MSE on 10000 samples (1.0 +/- 0.05): {}", parts.join(", ")),
    }
}

fn criterion_9() -> Outcome {
    let (pulse, settle, hold) = (5usize, 500usize, 1000usize);
    let n = pulse + settle + hold;
    let drive: Vec<f64> = (0..n).map(|k| if k < pulse { 1.0 } else { 0.0 }).collect();
    let c = vec![0.5; n];

    let h1 = find_fixed_points(&ScalarCellConfig::new(1.5, 0.5, 0.0).unwrap())
        .upper_stable()
        .unwrap();
    let high = simulate_scalar_cell(&vec![1.5; n], &c, &drive, 0.0).unwrap();
    let settled_at = high.iter().position(|h| (h - h1).abs() < 1e-6);
    let held = settled_at.is_some_and(|s| s <= pulse + settle && high[s..].iter().all(|h| (h - h1).abs() < 1e-6));
    let low = simulate_scalar_cell(&vec![0.5; n], &c, &drive, 0.0).unwrap();
    let decayed = low.last().unwrap().abs() < 1e-6;
    Outcome {
        pass: held && decayed,
        detail: format!(
            "a=1.5: settles to h1={h1:.6} at step {settled_at:?} and holds {} steps: {held}; a=0.5 final |h|={:.1e}",
            high.len() - 1 - settled_at.unwrap_or(n),
            low.last().unwrap().abs()
        ),
    }
}

fn criterion_10() -> Outcome {
    let set = synthetic_digits(4, &mut RngState::new(10));
    let img_bytes = encode_idx_images(&set.images);
    let lbl_bytes = encode_idx_labels(&set.labels);
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    set.write_idx(&ip, &lp).unwrap();
    let (ib, lb) = (std::fs::read(&ip).unwrap(), std::fs::read(&lp).unwrap());
    let images = parse_idx_images(&ib).unwrap();
    let labels = parse_idx_labels(&lb).unwrap();
    let round_trip = ib == img_bytes
        && lb == lbl_bytes
        && images == set.images
        && labels == set.labels
        && encode_idx_images(&images) == ib
        && encode_idx_labels(&labels) == lb;

    let args = TaskArgs {
        benchmark: BenchmarkKind::SeqMnist,
        t: 0,
        n: 0,
        n_black: 0,
        layout: PixelLayout::Downsample(8),
        mnist_dir: None,
        mnist_train: 2000,
    };
    let source = if std::env::var_os("BRC_MNIST_DIR").is_some() { "MNIST" } else { "synthetic digits" };
    let task = build_task(&args, 1, 500).unwrap();
    let config = TrainConfig {
        iterations: 2000,
        batch_size: 32,
        eval_every: 100,
        seed: 1,
        test_size: 500,
        ..TrainConfig::default()
    };
    let (_, log) = train_with(task.network_spec(CellKind::Brc, vec![50, 50]), &task, &config, |r| {
        progress(&format!(
            "seq_mnist 8x8: iter {} train_loss {:.4} test_accuracy {:.3}",
            r.iteration, r.train_loss, r.test_metric
        ))
    })
    .unwrap();
    let initial = log.records[0].train_loss;
    let last = log.last().unwrap();
    let ratio = last.train_loss / initial;
    Outcome {
        pass: round_trip && ratio <= 0.5,
        detail: format!(
            "{source}, 2000 images at 8x8: train loss {initial:.4} -> {:.4} ({:.0}% drop, need >= 50%), test accuracy {:.3}; IDX round trip {}",
            last.train_loss,
            100.0 * (1.0 - ratio),
            last.test_metric,
            if round_trip { "bit-exact" } else { "MISMATCH" }
        ),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient correctness", criterion_1),
        (2, "bistability fixed-point counts", criterion_2),
        (3, "pitchfork conditions", criterion_3),
        (4, "diagonal Jacobian", criterion_4),
        (8, "random-guess baseline", criterion_8),
        (9, "scalar-cell memory", criterion_9),
        (10, "sequential MNIST pipeline", criterion_10),
        (5, "copy-first short horizon", criterion_5),
        (7, "denoising forgetting effect", criterion_7),
        (6, "copy-first long-horizon ordering", criterion_6),
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.strip_prefix("criterion_").and_then(|n| n.parse().ok()))
        .collect();
    let mut failed = Vec::new();
    let total = Instant::now();
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        say(&format!(
            "criterion {id:>2} {}: {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        ));
        if id == 5 {
            say(&format!("info: {}", copy_first_t50_info()));
        }
        if !o.pass {
            failed.push(id);
        }
    }
    say(&format!(
        "acceptance: {} failed {:?} in {:.0}s",
        failed.len(),
        failed,
        total.elapsed().as_secs_f64()
    ));
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
