//! Dynamical analysis of the bistable update in scalar form,
//!
//! `h_t = c h_{t-1} + (1 - c) tanh(d + a h_{t-1}) = F(h_{t-1})`,
//!
//! where `d` is the drive `U x_t`. Fixed points are the roots of
//! `G(h) = h - F(h) = (1 - c)(h - tanh(d + a h))`; the multiplier
//! `F'(h*) = c + (1 - c) a (1 - tanh^2(d + a h*))` decides stability.
//! Also here: the intrinsic-current curve, bifurcation sweeps, the pitchfork
//! conditions at `a = 1`, and per-layer gate statistics of trained networks.

use std::io::Write;

use crate::cells::CellKind;
use crate::error::{Error, Result};
use crate::network::{sequence_steps, Network};
use crate::numerics::{Matrix, Vector};

/// Half-width of the fixed-point search interval. `|F(h)| <= c|h| + (1-c)`
/// keeps every fixed point inside `[-1, 1]`.
pub const SEARCH_RADIUS: f64 = 2.0;
const GRID_PER_UNIT: usize = 1000;
pub const ROOT_TOL: f64 = 1e-12;
pub const SINGULAR_TOL: f64 = 1e-6;

/// `I = v - alpha tanh(v)` at every grid point.
pub fn iv_curve(alpha: f64, v_grid: &Vector) -> Vector {
    v_grid.map(|v| v - alpha * v.tanh())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarCellConfig {
    pub a: f64,
    pub c: f64,
    pub drive: f64,
}

impl ScalarCellConfig {
    pub fn new(a: f64, c: f64, drive: f64) -> Result<Self> {
        let cfg = ScalarCellConfig { a, c, drive };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 2.0) || !(self.c > 0.0 && self.c < 1.0) || !self.drive.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need a in (0,2), c in (0,1), finite drive; got a={}, c={}, drive={}",
                self.a, self.c, self.drive
            )));
        }
        Ok(())
    }

    /// One application of the update map.
    pub fn step(&self, h: f64) -> f64 {
        self.c * h + (1.0 - self.c) * (self.drive + self.a * h).tanh()
    }

    pub fn residual(&self, h: f64) -> f64 {
        (1.0 - self.c) * (h - (self.drive + self.a * h).tanh())
    }

    pub fn multiplier(&self, h: f64) -> f64 {
        let t = (self.drive + self.a * h).tanh();
        self.c + (1.0 - self.c) * self.a * (1.0 - t * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
    Singular,
}

impl Stability {
    pub fn from_multiplier(m: f64) -> Self {
        if (m - 1.0).abs() < SINGULAR_TOL {
            Stability::Singular
        } else if m.abs() < 1.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Singular => "singular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub h_star: f64,
    pub stability: Stability,
    pub multiplier: f64,
}

/// Fixed points sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub config: ScalarCellConfig,
    pub points: Vec<FixedPoint>,
}

impl FixedPointReport {
    pub fn stable(&self) -> impl Iterator<Item = &FixedPoint> {
        self.points.iter().filter(|p| p.stability == Stability::Stable)
    }

    /// Largest stable fixed point, the `+h1` branch when bistable.
    pub fn upper_stable(&self) -> Option<f64> {
        self.stable().map(|p| p.h_star).last()
    }
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || mid <= lo || mid >= hi {
            return mid;
        }
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of `f` on `[-radius, radius]` by grid bracketing and bisection.
///
/// Grid points are exact multiples of `1/GRID_PER_UNIT`, so a root at 0 is
/// found exactly. Next to an exact grid root, the bracket restarts a hair
/// away from it so that a second root inside the same cell is not missed.
fn grid_roots(f: impl Fn(f64) -> f64, radius: f64) -> Vec<f64> {
    let n = (2.0 * radius * GRID_PER_UNIT as f64).round() as i64;
    let x_at = |k: i64| (k as f64 - n as f64 / 2.0) / GRID_PER_UNIT as f64;
    let nudge = 1e-9;
    let mut roots = Vec::new();
    let mut x0 = x_at(0);
    let mut f0 = f(x0);
    for k in 0..n {
        let x1 = x_at(k + 1);
        let f1 = f(x1);
        if f0 == 0.0 {
            roots.push(x0);
            let xs = x0 + nudge;
            let fs = f(xs);
            if fs != 0.0 && f1 != 0.0 && (fs < 0.0) != (f1 < 0.0) {
                roots.push(bisect(&f, xs, x1));
            }
        } else if f1 != 0.0 && (f0 < 0.0) != (f1 < 0.0) {
            roots.push(bisect(&f, x0, x1));
        }
        if f1 == 0.0 && k + 1 == n {
            roots.push(x1);
        }
        // Interval ending on an exact root: look just before it.
        if f1 == 0.0 && f0 != 0.0 {
            let xs = x1 - nudge;
            let fs = f(xs);
            if fs != 0.0 && (fs < 0.0) != (f0 < 0.0) {
                roots.push(bisect(&f, x0, xs));
            }
        }
        x0 = x1;
        f0 = f1;
    }
    roots.sort_by(|a, b| a.partial_cmp(b).expect("finite roots"));
    roots.dedup();
    roots
}

/// All fixed points of the scalar update in `[-2, 2]`, classified.
pub fn find_fixed_points(cfg: &ScalarCellConfig) -> FixedPointReport {
    let points = grid_roots(|h| cfg.residual(h), SEARCH_RADIUS)
        .into_iter()
        .map(|h| {
            let m = cfg.multiplier(h);
            FixedPoint {
                h_star: h,
                stability: Stability::from_multiplier(m),
                multiplier: m,
            }
        })
        .collect();
    FixedPointReport { config: *cfg, points }
}

/// Zero crossings of the intrinsic-current curve on `[-radius, radius]`.
pub fn iv_zeros(alpha: f64, radius: f64) -> Vec<f64> {
    grid_roots(|v| v - alpha * v.tanh(), radius)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchPoint {
    /// Swept parameter value (feedback gain `a`, or drive for drive sweeps).
    pub param: f64,
    pub point: FixedPoint,
}

fn linspace(lo: f64, hi: f64, steps: usize) -> impl Iterator<Item = f64> {
    (0..steps).map(move |k| {
        if steps == 1 {
            lo
        } else {
            lo + (hi - lo) * k as f64 / (steps - 1) as f64
        }
    })
}

/// Fixed points for `steps` evenly spaced gains in `[a_min, a_max]`.
pub fn bifurcation_sweep(a_min: f64, a_max: f64, c: f64, drive: f64, steps: usize) -> Result<Vec<BranchPoint>> {
    if steps == 0 || !(a_min > 0.0 && a_max < 2.0 && a_min <= a_max) {
        return Err(Error::InvalidArgument(format!(
            "gain range must lie in (0,2) with at least one step; got [{a_min}, {a_max}] x {steps}"
        )));
    }
    let mut rows = Vec::new();
    for a in linspace(a_min, a_max, steps) {
        let report = find_fixed_points(&ScalarCellConfig::new(a, c, drive)?);
        rows.extend(report.points.into_iter().map(|point| BranchPoint { param: a, point }));
    }
    Ok(rows)
}

/// Fixed points for `steps` evenly spaced drives at fixed gain.
pub fn drive_sweep(a: f64, c: f64, d_min: f64, d_max: f64, steps: usize) -> Result<Vec<BranchPoint>> {
    if steps == 0 || d_min > d_max {
        return Err(Error::InvalidArgument("empty drive range".into()));
    }
    let mut rows = Vec::new();
    for d in linspace(d_min, d_max, steps) {
        let report = find_fixed_points(&ScalarCellConfig::new(a, c, d)?);
        rows.extend(report.points.into_iter().map(|point| BranchPoint { param: d, point }));
    }
    Ok(rows)
}

/// Drive magnitude at which the outer branch folds away, for `a > 1`.
///
/// Three fixed points exist for `|drive| < fold_drive(a)`. At the fold
/// `G = G' = 0`, giving `h = -s`, `d = a s - atanh(s)` with `s = sqrt(1 - 1/a)`.
pub fn fold_drive(a: f64) -> Option<f64> {
    (a > 1.0).then(|| {
        let s = (1.0 - 1.0 / a).sqrt();
        a * s - s.atanh()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchforkCondition {
    pub name: &'static str,
    /// Closed-form derivative expression evaluated at `(h, a) = (0, 1)`.
    pub closed_form: f64,
    /// Richardson-refined central difference at the same point.
    pub finite_difference: f64,
    /// Required sign: 0 for equality conditions, +1 / -1 for inequalities.
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchforkReport {
    pub c: f64,
    pub conditions: Vec<PitchforkCondition>,
}

impl PitchforkReport {
    /// Equalities below `eq_tol` in both evaluations, inequalities of the
    /// right sign, and closed forms within `fd_tol` of the differences.
    pub fn holds(&self, eq_tol: f64, fd_tol: f64) -> bool {
        self.conditions.iter().all(|k| {
            let agree = (k.closed_form - k.finite_difference).abs() < fd_tol;
            let sign_ok = match k.sign {
                0 => k.closed_form.abs() < eq_tol && k.finite_difference.abs() < eq_tol,
                s => (k.closed_form * s as f64) > 0.0,
            };
            agree && sign_ok
        })
    }

    pub fn get(&self, name: &str) -> Option<&PitchforkCondition> {
        self.conditions.iter().find(|k| k.name == name)
    }
}

/// Evaluates the six pitchfork conditions for `G` at `h = 0`, `a = 1`, `d = 0`.
pub fn check_pitchfork_conditions(c: f64) -> Result<PitchforkReport> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!("c must lie in (0,1), got {c}")));
    }
    let (h0, a0) = (0.0f64, 1.0f64);
    let g = |h: f64, a: f64| (1.0 - c) * (h - (a * h).tanh());
    let t = (a0 * h0).tanh();
    let t2 = t * t;
    let closed = [
        ("G", (1.0 - c) * (h0 - t), 0),
        ("dG/dh", (1.0 - c) * (a0 * (t2 - 1.0) + 1.0), 0),
        ("d2G/dh2", (1.0 - c) * 2.0 * a0 * a0 * t * (1.0 - t2), 0),
        ("dG/da", (1.0 - c) * h0 * (t2 - 1.0), 0),
        (
            "d3G/dh3",
            (1.0 - c) * (2.0 * a0.powi(3) * (t2 - 1.0).powi(2) + 4.0 * a0.powi(3) * t2 * (t2 - 1.0)),
            1,
        ),
        (
            "d2G/dhda",
            (1.0 - c) * ((t2 - 1.0) + 2.0 * a0 * h0 * t * (1.0 - t2)),
            -1,
        ),
    ];

    let richardson = |d: &dyn Fn(f64) -> f64, step: f64| (4.0 * d(step / 2.0) - d(step)) / 3.0;
    let step = 1e-3;
    let d1 = |s: f64| (g(h0 + s, a0) - g(h0 - s, a0)) / (2.0 * s);
    let d2 = |s: f64| (g(h0 + s, a0) - 2.0 * g(h0, a0) + g(h0 - s, a0)) / (s * s);
    let d3 = |s: f64| {
        (g(h0 + 2.0 * s, a0) - 2.0 * g(h0 + s, a0) + 2.0 * g(h0 - s, a0) - g(h0 - 2.0 * s, a0))
            / (2.0 * s * s * s)
    };
    let da = |s: f64| (g(h0, a0 + s) - g(h0, a0 - s)) / (2.0 * s);
    let dha = |s: f64| {
        (g(h0 + s, a0 + s) - g(h0 + s, a0 - s) - g(h0 - s, a0 + s) + g(h0 - s, a0 - s)) / (4.0 * s * s)
    };
    let numeric = [
        g(h0, a0),
        richardson(&d1, step),
        richardson(&d2, step),
        richardson(&da, step),
        richardson(&d3, step),
        richardson(&dha, step),
    ];
    Ok(PitchforkReport {
        c,
        conditions: closed
            .iter()
            .zip(numeric)
            .map(|(&(name, closed_form, sign), finite_difference)| PitchforkCondition {
                name,
                closed_form,
                finite_difference,
                sign,
            })
            .collect(),
    })
}

/// Iterates the scalar update over per-step gain, update gate and drive.
/// The trajectory starts with `h0` and has one more entry than the series.
pub fn simulate_scalar_cell(a: &[f64], c: &[f64], drive: &[f64], h0: f64) -> Result<Vec<f64>> {
    if a.len() != c.len() || a.len() != drive.len() {
        return Err(Error::shape(
            "simulate_scalar_cell",
            format!("series lengths {}, {}, {}", a.len(), c.len(), drive.len()),
        ));
    }
    let mut traj = Vec::with_capacity(a.len() + 1);
    let mut h = h0;
    traj.push(h);
    for k in 0..a.len() {
        h = c[k] * h + (1.0 - c[k]) * (drive[k] + a[k] * h).tanh();
        traj.push(h);
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerTraceRow {
    pub t: usize,
    pub layer: usize,
    /// Share of neurons with `a_t > 1` strictly.
    pub bistable_fraction: f64,
    pub mean_c: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerTrace {
    pub rows: Vec<LayerTraceRow>,
}

impl LayerTrace {
    /// `mean_c` over time for one layer.
    pub fn mean_c_series(&self, layer: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.layer == layer).map(|r| r.mean_c).collect()
    }

    pub fn bistable_series(&self, layer: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.layer == layer)
            .map(|r| r.bistable_fraction)
            .collect()
    }
}

/// Runs one `[T x input]` sequence and records gate statistics per step and layer.
pub fn trace_layers(net: &Network, seq: &Matrix) -> Result<LayerTrace> {
    let kind = net.spec().cell;
    if !kind.is_bistable() {
        return Err(Error::InvalidArgument(format!(
            "layer tracing needs BRC or nBRC cells, network uses {kind}"
        )));
    }
    let (_, cache) = net.forward_batch(&sequence_steps(seq))?;
    let mut rows = Vec::new();
    for t in 0..cache.len() {
        for (layer, steps) in cache.steps.iter().enumerate() {
            let (a, c) = steps[t].bistable_gates().expect("bistable cell caches gates");
            let n = a.as_slice().len() as f64;
            rows.push(LayerTraceRow {
                t,
                layer,
                bistable_fraction: a.as_slice().iter().filter(|&&v| v > 1.0).count() as f64 / n,
                mean_c: c.as_slice().iter().sum::<f64>() / n,
            });
        }
    }
    Ok(LayerTrace { rows })
}

pub fn write_fixed_points_csv(w: &mut impl Write, report: &FixedPointReport) -> std::io::Result<()> {
    writeln!(w, "h_star,stability,multiplier")?;
    for p in &report.points {
        writeln!(w, "{:?},{},{:?}", p.h_star, p.stability.name(), p.multiplier)?;
    }
    Ok(())
}

/// `param_name,h_star,stability,multiplier` rows.
pub fn write_branches_csv(w: &mut impl Write, param_name: &str, rows: &[BranchPoint]) -> std::io::Result<()> {
    writeln!(w, "{param_name},h_star,stability,multiplier")?;
    for r in rows {
        writeln!(
            w,
            "{:?},{:?},{},{:?}",
            r.param,
            r.point.h_star,
            r.point.stability.name(),
            r.point.multiplier
        )?;
    }
    Ok(())
}

pub fn write_trajectory_csv(w: &mut impl Write, traj: &[f64]) -> std::io::Result<()> {
    writeln!(w, "t,h")?;
    for (t, h) in traj.iter().enumerate() {
        writeln!(w, "{t},{h:?}")?;
    }
    Ok(())
}

pub fn write_layer_trace_csv(w: &mut impl Write, trace: &LayerTrace) -> std::io::Result<()> {
    writeln!(w, "t,layer,bistable_fraction,mean_c")?;
    for r in &trace.rows {
        writeln!(w, "{},{},{:?},{:?}", r.t, r.layer, r.bistable_fraction, r.mean_c)?;
    }
    Ok(())
}

/// True for the cells whose recurrent gains can be inspected by [`trace_layers`].
pub fn traceable(kind: CellKind) -> bool {
    kind.is_bistable()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::numerics::RngState;

    /// Independent bisection for the positive root of `h = tanh(k h)`, k > 1.
    fn positive_root_oracle(k: f64) -> f64 {
        let (mut lo, mut hi) = (1e-6, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - (k * mid).tanh() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn iv_curve_cases() {
        let grid = Vector::from(vec![-3.0, -0.5, 0.0, 0.7, 2.5]);
        assert_eq!(iv_curve(0.0, &grid), grid);
        assert_eq!(iv_curve(1.7, &Vector::from(vec![0.0]))[0], 0.0);
        // v = 2 tanh(v)  <=>  v/2 = tanh(2 (v/2))
        let v_star = 2.0 * positive_root_oracle(2.0);
        assert!((v_star - 1.9150).abs() < 1e-4);
        let zeros = iv_zeros(2.0, 4.0);
        assert_eq!(zeros.len(), 3);
        assert!((zeros[0] + v_star).abs() < 1e-9 && zeros[1] == 0.0 && (zeros[2] - v_star).abs() < 1e-9);
        assert_eq!(iv_zeros(0.8, 4.0), vec![0.0]);
    }

    #[test]
    fn monostable_case() {
        let r = find_fixed_points(&ScalarCellConfig::new(0.5, 0.5, 0.0).unwrap());
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.points[0].h_star, 0.0);
        assert_eq!(r.points[0].stability, Stability::Stable);
        assert!((r.points[0].multiplier - 0.75).abs() < 1e-15);
    }

    #[test]
    fn bistable_case() {
        let r = find_fixed_points(&ScalarCellConfig::new(2.0 - 1e-12, 0.5, 0.0).unwrap());
        let h1 = positive_root_oracle(2.0);
        assert!((h1 - 0.9575).abs() < 1e-4);
        let kinds: Vec<Stability> = r.points.iter().map(|p| p.stability).collect();
        assert_eq!(kinds, vec![Stability::Stable, Stability::Unstable, Stability::Stable]);
        assert!((r.points[0].h_star + h1).abs() < 1e-9);
        assert_eq!(r.points[1].h_star, 0.0);
        assert!((r.points[2].h_star - h1).abs() < 1e-9);
        for p in &r.points {
            assert!(r.config.residual(p.h_star).abs() < ROOT_TOL);
        }
    }

    #[test]
    fn locations_do_not_depend_on_c() {
        let pts: Vec<Vec<f64>> = [0.1, 0.5, 0.9]
            .iter()
            .map(|&c| {
                find_fixed_points(&ScalarCellConfig::new(1.5, c, 0.0).unwrap())
                    .points
                    .iter()
                    .map(|p| p.h_star)
                    .collect()
            })
            .collect();
        assert_eq!(pts[0].len(), 3);
        for other in &pts[1..] {
            for (x, y) in pts[0].iter().zip(other) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn roots_near_the_bifurcation_are_resolved() {
        // h1 ~ sqrt(3(a-1)) is far below the grid spacing here.
        let r = find_fixed_points(&ScalarCellConfig::new(1.0 + 1e-7, 0.5, 0.0).unwrap());
        assert_eq!(r.points.len(), 3);
        let h1 = positive_root_oracle(1.0 + 1e-7);
        assert!((r.points[2].h_star - h1).abs() < 1e-7);
    }

    #[test]
    fn sweep_shapes_the_pitchfork() {
        let rows = bifurcation_sweep(0.05, 0.95, 0.5, 0.0, 19).unwrap();
        assert_eq!(rows.len(), 19);
        assert!(rows.iter().all(|r| r.point.h_star == 0.0 && r.point.stability == Stability::Stable));
        let rows = bifurcation_sweep(1.05, 1.95, 0.5, 0.0, 19).unwrap();
        assert_eq!(rows.len(), 57);
        let uppers: Vec<f64> = rows.chunks(3).map(|ch| {
            assert_eq!(ch[0].point.stability, Stability::Stable);
            assert_eq!(ch[1].point.stability, Stability::Unstable);
            assert_eq!(ch[2].point.stability, Stability::Stable);
            ch[2].point.h_star
        }).collect();
        assert!(uppers.windows(2).all(|w| w[0] < w[1]));
        let near = find_fixed_points(&ScalarCellConfig::new(1.0001, 0.5, 0.0).unwrap());
        assert!(near.upper_stable().unwrap() < 0.02);
        assert!(bifurcation_sweep(0.0, 1.0, 0.5, 0.0, 10).is_err());
    }

    #[test]
    fn fold_drive_bounds_bistability() {
        let a = 1.5;
        let fold = fold_drive(a).unwrap();
        assert!(fold > 0.0);
        let count = |d: f64| find_fixed_points(&ScalarCellConfig::new(a, 0.5, d).unwrap()).points.len();
        assert_eq!(count(0.9 * fold), 3);
        assert_eq!(count(-0.9 * fold), 3);
        assert_eq!(count(1.1 * fold), 1);
        assert_eq!(count(-1.1 * fold), 1);
        assert!(fold_drive(0.8).is_none());
        let rows = drive_sweep(a, 0.5, -0.5, 0.5, 11).unwrap();
        assert!(rows.len() >= 11);
    }

    #[test]
    fn pitchfork_conditions_hold() {
        let r = check_pitchfork_conditions(0.5).unwrap();
        assert!(r.holds(1e-9, 1e-6), "{r:?}");
        assert_eq!(r.get("d3G/dh3").unwrap().closed_form, 1.0);
        assert_eq!(r.get("d2G/dhda").unwrap().closed_form, -0.5);
        let near_one = check_pitchfork_conditions(1.0 - 1e-9).unwrap();
        assert!(near_one.get("d3G/dh3").unwrap().closed_form < 1e-8);
        assert!(check_pitchfork_conditions(1.0).is_err());
    }

    #[test]
    fn multiplier_at_origin_matches_numeric_derivative() {
        for (a, c) in [(0.3, 0.2), (1.0, 0.5), (1.7, 0.9)] {
            let cfg = ScalarCellConfig::new(a, c, 0.0).unwrap();
            let eps = 1e-5;
            let numeric = (cfg.step(eps) - cfg.step(-eps)) / (2.0 * eps);
            assert!((cfg.multiplier(0.0) - (c + (1.0 - c) * a)).abs() < 1e-15);
            assert!((cfg.multiplier(0.0) - numeric).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_simulation() {
        let n = 400;
        let mut drive = vec![0.0; n];
        drive[..5].fill(1.0);
        let low = simulate_scalar_cell(&vec![0.5; n], &vec![0.5; n], &drive, 0.0).unwrap();
        assert!(low.last().unwrap().abs() < 1e-6);
        let high = simulate_scalar_cell(&vec![1.5; n], &vec![0.5; n], &drive, 0.0).unwrap();
        let h1 = find_fixed_points(&ScalarCellConfig::new(1.5, 0.5, 0.0).unwrap()).upper_stable().unwrap();
        assert!((high.last().unwrap() - h1).abs() < 1e-6);
        let frozen = simulate_scalar_cell(&vec![1.2; 50], &vec![1.0; 50], &vec![0.7; 50], 0.3).unwrap();
        assert!(frozen.iter().all(|&h| h == 0.3));
        assert!(simulate_scalar_cell(&[1.0], &[0.5, 0.5], &[0.0], 0.0).is_err());
    }

    #[test]
    fn basins_split_at_zero() {
        let cfg = ScalarCellConfig::new(1.4, 0.3, 0.0).unwrap();
        let h1 = find_fixed_points(&cfg).upper_stable().unwrap();
        for h0 in [-0.9, -1e-3, 1e-3, 0.9] {
            let mut h = h0;
            for _ in 0..3000 {
                h = cfg.step(h);
            }
            assert!((h - h1 * f64::signum(h0)).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_of_zero_network() {
        let spec = NetworkSpec::new(CellKind::Nbrc, vec![4, 4], 1, 1);
        let net = Network::zeros(spec).unwrap();
        let seq = Matrix::from_fn(6, 1, |t, _| t as f64);
        let trace = trace_layers(&net, &seq).unwrap();
        assert_eq!(trace.rows.len(), 12);
        assert!(trace.rows.iter().all(|r| r.bistable_fraction == 0.0 && r.mean_c == 0.5));
        let gru = Network::zeros(NetworkSpec::new(CellKind::Gru, vec![2], 1, 1)).unwrap();
        assert!(trace_layers(&gru, &seq).is_err());
    }

    #[test]
    fn trace_fractions_in_range() {
        let net = Network::init(NetworkSpec::new(CellKind::Brc, vec![8, 8], 2, 1), &mut RngState::new(3)).unwrap();
        let mut rng = RngState::new(4);
        let seq = Matrix::from_fn(30, 2, |_, _| rng.normal());
        let trace = trace_layers(&net, &seq).unwrap();
        assert!(trace.rows.iter().all(|r| (0.0..=1.0).contains(&r.bistable_fraction) && r.mean_c > 0.0 && r.mean_c < 1.0));
    }
}
