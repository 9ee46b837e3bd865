//! One-timestep forward and backward passes for every cell kind.
//!
//! All passes are batched: inputs are `[batch x input]` matrices and states
//! are `[batch x hidden]`. Weight matrices are stored `[hidden x input]` (or
//! `[hidden x hidden]`) so a pre-activation is `x * U^T`. None of the cells
//! except the LSTM carry bias terms.
//!
//! Backward passes accumulate (`+=`) into a gradient value of the same type
//! as the parameters, which lets BPTT sum contributions over timesteps.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{gemm, glorot_init, sigmoid, uniform_vector, Matrix, RngState, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Brc,
    Nbrc,
    Gru,
    Lstm,
    Rnn,
}

impl CellKind {
    pub const ALL: [CellKind; 5] = [
        CellKind::Brc,
        CellKind::Nbrc,
        CellKind::Gru,
        CellKind::Lstm,
        CellKind::Rnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Brc => "brc",
            CellKind::Nbrc => "nbrc",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
            CellKind::Rnn => "rnn",
        }
    }

    /// Whether the cell exposes the feedback gain `a` and update gate `c`.
    pub fn is_bistable(self) -> bool {
        matches!(self, CellKind::Brc | CellKind::Nbrc)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cell kind '{s}'")))
    }
}

/// Recurrent state carried between timesteps. Only the LSTM uses `cell`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub h: Matrix,
    pub cell: Option<Matrix>,
}

impl State {
    pub fn zeros(kind: CellKind, batch: usize, hidden: usize) -> Self {
        State {
            h: Matrix::zeros(batch, hidden),
            cell: (kind == CellKind::Lstm).then(|| Matrix::zeros(batch, hidden)),
        }
    }

    pub fn from_h(h: Matrix) -> Self {
        State { h, cell: None }
    }
}

/// Bistable recurrent cell: diagonal recurrence, gates from `x` and own state.
#[derive(Debug, Clone, PartialEq)]
pub struct BrcParams {
    pub u: Matrix,
    pub u_a: Matrix,
    pub u_c: Matrix,
    pub w_a: Vector,
    pub w_c: Vector,
}

/// Neuromodulated BRC: gates see the whole previous layer state.
#[derive(Debug, Clone, PartialEq)]
pub struct NbrcParams {
    pub u: Matrix,
    pub u_a: Matrix,
    pub u_c: Matrix,
    pub w_a: Matrix,
    pub w_c: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
}

/// LSTM with gate blocks stacked row-wise in the order input, forget,
/// candidate, output: `u` is `[4h x input]`, `w` is `[4h x h]`, `b` has `4h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub u: Matrix,
    pub w: Matrix,
    pub b: Vector,
}

/// Plain tanh RNN.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    pub u: Matrix,
    pub w: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Brc(BrcParams),
    Nbrc(NbrcParams),
    Gru(GruParams),
    Lstm(LstmParams),
    Rnn(RnnParams),
}

/// Intermediates of one forward step, enough to run the backward step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepCache {
    /// Shared by BRC and nBRC.
    Bistable {
        x: Matrix,
        h_prev: Matrix,
        a: Matrix,
        c: Matrix,
        cand: Matrix,
    },
    Gru {
        x: Matrix,
        h_prev: Matrix,
        z: Matrix,
        r: Matrix,
        /// `h_prev * W_h^T`
        m: Matrix,
        cand: Matrix,
    },
    Lstm {
        x: Matrix,
        h_prev: Matrix,
        c_prev: Matrix,
        /// Activated gates `[batch x 4h]` in i, f, g, o order.
        gates: Matrix,
        tanh_c: Matrix,
    },
    Rnn {
        x: Matrix,
        h_prev: Matrix,
        h: Matrix,
    },
}

impl StepCache {
    pub fn input(&self) -> &Matrix {
        match self {
            StepCache::Bistable { x, .. }
            | StepCache::Gru { x, .. }
            | StepCache::Lstm { x, .. }
            | StepCache::Rnn { x, .. } => x,
        }
    }

    pub fn h_prev(&self) -> &Matrix {
        match self {
            StepCache::Bistable { h_prev, .. }
            | StepCache::Gru { h_prev, .. }
            | StepCache::Lstm { h_prev, .. }
            | StepCache::Rnn { h_prev, .. } => h_prev,
        }
    }

    /// `(a_t, c_t)` for bistable cells.
    pub fn bistable_gates(&self) -> Option<(&Matrix, &Matrix)> {
        match self {
            StepCache::Bistable { a, c, .. } => Some((a, c)),
            _ => None,
        }
    }

    fn prev_state(&self) -> State {
        match self {
            StepCache::Lstm { h_prev, c_prev, .. } => State {
                h: h_prev.clone(),
                cell: Some(c_prev.clone()),
            },
            other => State::from_h(other.h_prev().clone()),
        }
    }
}

// out = x * U^T
fn project(out: &mut Matrix, x: &Matrix, u: &Matrix) {
    gemm(1.0, x, false, u, true, 0.0, out);
}

// out += h * W^T
fn project_acc(out: &mut Matrix, h: &Matrix, w: &Matrix) {
    gemm(1.0, h, false, w, true, 1.0, out);
}

// grad_w += dpre^T * input
fn outer_acc(grad_w: &mut Matrix, dpre: &Matrix, input: &Matrix) {
    gemm(1.0, dpre, true, input, false, 1.0, grad_w);
}

// dx += dpre * W
fn pullback_acc(dx: &mut Matrix, dpre: &Matrix, w: &Matrix) {
    gemm(1.0, dpre, false, w, false, 1.0, dx);
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let mut out = a.clone();
    for (o, &y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o = f(*o, y);
    }
    out
}

fn zeros_like(m: &Matrix) -> Matrix {
    Matrix::zeros(m.rows(), m.cols())
}

impl CellParams {
    /// Glorot-uniform matrices; `w_a`, `w_c` uniform in [-1, 1]; LSTM forget bias 1.
    pub fn init(kind: CellKind, input: usize, hidden: usize, rng: &mut RngState) -> Self {
        let mut ih = || glorot_init(hidden, input, rng);
        match kind {
            CellKind::Brc => {
                let (u, u_a, u_c) = (ih(), ih(), ih());
                CellParams::Brc(BrcParams {
                    u,
                    u_a,
                    u_c,
                    w_a: uniform_vector(hidden, -1.0, 1.0, rng),
                    w_c: uniform_vector(hidden, -1.0, 1.0, rng),
                })
            }
            CellKind::Nbrc => {
                let (u, u_a, u_c) = (ih(), ih(), ih());
                CellParams::Nbrc(NbrcParams {
                    u,
                    u_a,
                    u_c,
                    w_a: glorot_init(hidden, hidden, rng),
                    w_c: glorot_init(hidden, hidden, rng),
                })
            }
            CellKind::Gru => {
                let (u_z, u_r, u_h) = (ih(), ih(), ih());
                let mut hh = || glorot_init(hidden, hidden, rng);
                let (w_z, w_r, w_h) = (hh(), hh(), hh());
                CellParams::Gru(GruParams {
                    u_z,
                    u_r,
                    u_h,
                    w_z,
                    w_r,
                    w_h,
                })
            }
            CellKind::Lstm => {
                let u_lim = (6.0 / (hidden + input) as f64).sqrt();
                let w_lim = (6.0 / (2 * hidden) as f64).sqrt();
                let u = Matrix::from_fn(4 * hidden, input, |_, _| rng.uniform_in(-u_lim, u_lim));
                let w = Matrix::from_fn(4 * hidden, hidden, |_, _| rng.uniform_in(-w_lim, w_lim));
                let mut b = Vector::zeros(4 * hidden);
                b.as_mut_slice()[hidden..2 * hidden].fill(1.0);
                CellParams::Lstm(LstmParams { u, w, b })
            }
            CellKind::Rnn => {
                let u = ih();
                CellParams::Rnn(RnnParams {
                    u,
                    w: glorot_init(hidden, hidden, rng),
                })
            }
        }
    }

    /// All-zero parameters of the given shape (also the gradient accumulator).
    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        let ih = || Matrix::zeros(hidden, input);
        let hh = || Matrix::zeros(hidden, hidden);
        match kind {
            CellKind::Brc => CellParams::Brc(BrcParams {
                u: ih(),
                u_a: ih(),
                u_c: ih(),
                w_a: Vector::zeros(hidden),
                w_c: Vector::zeros(hidden),
            }),
            CellKind::Nbrc => CellParams::Nbrc(NbrcParams {
                u: ih(),
                u_a: ih(),
                u_c: ih(),
                w_a: hh(),
                w_c: hh(),
            }),
            CellKind::Gru => CellParams::Gru(GruParams {
                u_z: ih(),
                u_r: ih(),
                u_h: ih(),
                w_z: hh(),
                w_r: hh(),
                w_h: hh(),
            }),
            CellKind::Lstm => CellParams::Lstm(LstmParams {
                u: Matrix::zeros(4 * hidden, input),
                w: Matrix::zeros(4 * hidden, hidden),
                b: Vector::zeros(4 * hidden),
            }),
            CellKind::Rnn => CellParams::Rnn(RnnParams { u: ih(), w: hh() }),
        }
    }

    pub fn zeros_like(&self) -> Self {
        CellParams::zeros(self.kind(), self.input_dim(), self.hidden_dim())
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Brc(_) => CellKind::Brc,
            CellParams::Nbrc(_) => CellKind::Nbrc,
            CellParams::Gru(_) => CellKind::Gru,
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Rnn(_) => CellKind::Rnn,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Brc(p) => p.u.cols(),
            CellParams::Nbrc(p) => p.u.cols(),
            CellParams::Gru(p) => p.u_h.cols(),
            CellParams::Lstm(p) => p.u.cols(),
            CellParams::Rnn(p) => p.u.cols(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            CellParams::Brc(p) => p.u.rows(),
            CellParams::Nbrc(p) => p.u.rows(),
            CellParams::Gru(p) => p.u_h.rows(),
            CellParams::Lstm(p) => p.w.cols(),
            CellParams::Rnn(p) => p.u.rows(),
        }
    }

    /// Named parameter arrays with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        fn m<'a>(name: &'static str, x: &'a Matrix) -> (&'static str, Vec<usize>, &'a [f64]) {
            (name, vec![x.rows(), x.cols()], x.as_slice())
        }
        fn v<'a>(name: &'static str, x: &'a Vector) -> (&'static str, Vec<usize>, &'a [f64]) {
            (name, vec![x.len()], x.as_slice())
        }
        match self {
            CellParams::Brc(p) => vec![
                m("U", &p.u),
                m("U_a", &p.u_a),
                m("U_c", &p.u_c),
                v("w_a", &p.w_a),
                v("w_c", &p.w_c),
            ],
            CellParams::Nbrc(p) => vec![
                m("U", &p.u),
                m("U_a", &p.u_a),
                m("U_c", &p.u_c),
                m("W_a", &p.w_a),
                m("W_c", &p.w_c),
            ],
            CellParams::Gru(p) => vec![
                m("U_z", &p.u_z),
                m("U_r", &p.u_r),
                m("U_h", &p.u_h),
                m("W_z", &p.w_z),
                m("W_r", &p.w_r),
                m("W_h", &p.w_h),
            ],
            CellParams::Lstm(p) => vec![m("U", &p.u), m("W", &p.w), v("b", &p.b)],
            CellParams::Rnn(p) => vec![m("U", &p.u), m("W", &p.w)],
        }
    }

    /// Mutable views in the same order as [`CellParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            CellParams::Brc(p) => vec![
                p.u.as_mut_slice(),
                p.u_a.as_mut_slice(),
                p.u_c.as_mut_slice(),
                p.w_a.as_mut_slice(),
                p.w_c.as_mut_slice(),
            ],
            CellParams::Nbrc(p) => vec![
                p.u.as_mut_slice(),
                p.u_a.as_mut_slice(),
                p.u_c.as_mut_slice(),
                p.w_a.as_mut_slice(),
                p.w_c.as_mut_slice(),
            ],
            CellParams::Gru(p) => vec![
                p.u_z.as_mut_slice(),
                p.u_r.as_mut_slice(),
                p.u_h.as_mut_slice(),
                p.w_z.as_mut_slice(),
                p.w_r.as_mut_slice(),
                p.w_h.as_mut_slice(),
            ],
            CellParams::Lstm(p) => {
                vec![p.u.as_mut_slice(), p.w.as_mut_slice(), p.b.as_mut_slice()]
            }
            CellParams::Rnn(p) => vec![p.u.as_mut_slice(), p.w.as_mut_slice()],
        }
    }

    fn check_inputs(&self, op: &'static str, x: &Matrix, prev: &State) -> Result<()> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        if x.cols() != i || prev.h.cols() != h || x.rows() != prev.h.rows() {
            return Err(Error::shape(
                op,
                format!(
                    "cell {i}->{h}, x {}x{}, h_prev {}x{}",
                    x.rows(),
                    x.cols(),
                    prev.h.rows(),
                    prev.h.cols()
                ),
            ));
        }
        match (self.kind(), &prev.cell) {
            (CellKind::Lstm, Some(c)) if c.shape() == prev.h.shape() => Ok(()),
            (CellKind::Lstm, _) => Err(Error::shape(op, "LSTM state needs a cell matrix")),
            _ => Ok(()),
        }
    }

    /// One batched forward step.
    pub fn forward(&self, x: &Matrix, prev: &State) -> Result<(State, StepCache)> {
        self.check_inputs("cell forward", x, prev)?;
        Ok(match self {
            CellParams::Brc(p) => brc_step(p, x, &prev.h),
            CellParams::Nbrc(p) => nbrc_step(p, x, &prev.h),
            CellParams::Gru(p) => gru_step(p, x, &prev.h),
            CellParams::Lstm(p) => lstm_step(p, x, &prev.h, prev.cell.as_ref().unwrap()),
            CellParams::Rnn(p) => rnn_step(p, x, &prev.h),
        })
    }

    /// One batched backward step.
    ///
    /// `grad` holds dL/dh_t (and dL/dcell_t for the LSTM). Parameter
    /// gradients are added into `grads`; the return value is
    /// `(dL/dx_t, dL/dstate_{t-1})`.
    pub fn backward(
        &self,
        cache: &StepCache,
        grad: &State,
        grads: &mut CellParams,
    ) -> Result<(Matrix, State)> {
        let x = cache.input();
        self.check_inputs("cell backward", x, &cache.prev_state())?;
        if grad.h.shape() != cache.h_prev().shape() {
            return Err(Error::shape("cell backward", "upstream gradient shape"));
        }
        if grads.kind() != self.kind()
            || grads.input_dim() != self.input_dim()
            || grads.hidden_dim() != self.hidden_dim()
        {
            return Err(Error::shape("cell backward", "gradient accumulator shape"));
        }
        Ok(match (self, cache, grads) {
            (CellParams::Brc(p), StepCache::Bistable { .. }, CellParams::Brc(g)) => {
                bistable_backward(Recurrence::Diagonal(p, g), cache, &grad.h)
            }
            (CellParams::Nbrc(p), StepCache::Bistable { .. }, CellParams::Nbrc(g)) => {
                bistable_backward(Recurrence::Dense(p, g), cache, &grad.h)
            }
            (CellParams::Gru(p), StepCache::Gru { .. }, CellParams::Gru(g)) => {
                gru_backward(p, cache, &grad.h, g)
            }
            (CellParams::Lstm(p), StepCache::Lstm { .. }, CellParams::Lstm(g)) => {
                lstm_backward(p, cache, grad, g)
            }
            (CellParams::Rnn(p), StepCache::Rnn { .. }, CellParams::Rnn(g)) => {
                rnn_backward(p, cache, &grad.h, g)
            }
            _ => return Err(Error::shape("cell backward", "cache does not match cell kind")),
        })
    }

    /// Single-sample forward on vectors. LSTM starts from a zero cell state.
    pub fn forward_vec(&self, x: &Vector, h_prev: &Vector) -> Result<(Vector, StepCache)> {
        let mut prev = State::from_h(h_prev.to_row());
        if self.kind() == CellKind::Lstm {
            prev.cell = Some(Matrix::zeros(1, h_prev.len()));
        }
        let (next, cache) = self.forward(&x.to_row(), &prev)?;
        Ok((Vector::from(next.h.into_vec()), cache))
    }

    /// Single-sample backward on vectors: returns `(grads, dL/dx, dL/dh_prev)`.
    pub fn backward_vec(
        &self,
        cache: &StepCache,
        grad_h: &Vector,
    ) -> Result<(CellParams, Vector, Vector)> {
        let mut grads = self.zeros_like();
        let mut grad = State::from_h(grad_h.to_row());
        if self.kind() == CellKind::Lstm {
            grad.cell = Some(Matrix::zeros(1, grad_h.len()));
        }
        let (dx, dprev) = self.backward(cache, &grad, &mut grads)?;
        Ok((
            grads,
            Vector::from(dx.into_vec()),
            Vector::from(dprev.h.into_vec()),
        ))
    }
}

fn bistable_finish(x: &Matrix, h_prev: &Matrix, a: Matrix, c: Matrix, mut pre_h: Matrix) -> (State, StepCache) {
    // pre_h holds x U^T; add a ⊙ h_prev and squash.
    for ((p, &ai), &hi) in pre_h.as_mut_slice().iter_mut().zip(a.as_slice()).zip(h_prev.as_slice()) {
        *p = (*p + ai * hi).tanh();
    }
    let cand = pre_h;
    let mut h = zeros_like(h_prev);
    for (k, out) in h.as_mut_slice().iter_mut().enumerate() {
        let ck = c.as_slice()[k];
        *out = ck * h_prev.as_slice()[k] + (1.0 - ck) * cand.as_slice()[k];
    }
    (
        State::from_h(h),
        StepCache::Bistable {
            x: x.clone(),
            h_prev: h_prev.clone(),
            a,
            c,
            cand,
        },
    )
}

fn brc_step(p: &BrcParams, x: &Matrix, h_prev: &Matrix) -> (State, StepCache) {
    let (b, n) = h_prev.shape();
    let mut a = Matrix::zeros(b, n);
    let mut c = Matrix::zeros(b, n);
    let mut pre_h = Matrix::zeros(b, n);
    project(&mut a, x, &p.u_a);
    project(&mut c, x, &p.u_c);
    project(&mut pre_h, x, &p.u);
    let (wa, wc) = (p.w_a.as_slice(), p.w_c.as_slice());
    for r in 0..b {
        let hr = h_prev.row(r);
        for (j, v) in a.row_mut(r).iter_mut().enumerate() {
            *v = 1.0 + (*v + wa[j] * hr[j]).tanh();
        }
        for (j, v) in c.row_mut(r).iter_mut().enumerate() {
            *v = sigmoid(*v + wc[j] * hr[j]);
        }
    }
    bistable_finish(x, h_prev, a, c, pre_h)
}

fn nbrc_step(p: &NbrcParams, x: &Matrix, h_prev: &Matrix) -> (State, StepCache) {
    let (b, n) = h_prev.shape();
    let mut a = Matrix::zeros(b, n);
    let mut c = Matrix::zeros(b, n);
    let mut pre_h = Matrix::zeros(b, n);
    project(&mut a, x, &p.u_a);
    project_acc(&mut a, h_prev, &p.w_a);
    project(&mut c, x, &p.u_c);
    project_acc(&mut c, h_prev, &p.w_c);
    project(&mut pre_h, x, &p.u);
    a.as_mut_slice().iter_mut().for_each(|v| *v = 1.0 + v.tanh());
    c.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
    bistable_finish(x, h_prev, a, c, pre_h)
}

enum Recurrence<'a> {
    Diagonal(&'a BrcParams, &'a mut BrcParams),
    Dense(&'a NbrcParams, &'a mut NbrcParams),
}

fn bistable_backward(rec: Recurrence<'_>, cache: &StepCache, g: &Matrix) -> (Matrix, State) {
    let StepCache::Bistable { x, h_prev, a, c, cand } = cache else {
        unreachable!("checked by caller")
    };
    let (b, n) = h_prev.shape();
    let mut dpre_h = Matrix::zeros(b, n);
    let mut dpre_a = Matrix::zeros(b, n);
    let mut dpre_c = Matrix::zeros(b, n);
    let mut dh_prev = Matrix::zeros(b, n);
    for k in 0..b * n {
        let gk = g.as_slice()[k];
        let (ak, ck, tk, hk) = (
            a.as_slice()[k],
            c.as_slice()[k],
            cand.as_slice()[k],
            h_prev.as_slice()[k],
        );
        let dh = gk * (1.0 - ck) * (1.0 - tk * tk);
        let ta = ak - 1.0;
        dpre_h.as_mut_slice()[k] = dh;
        dpre_a.as_mut_slice()[k] = dh * hk * (1.0 - ta * ta);
        dpre_c.as_mut_slice()[k] = gk * (hk - tk) * ck * (1.0 - ck);
        dh_prev.as_mut_slice()[k] = gk * ck + dh * ak;
    }
    let mut dx = Matrix::zeros(b, x.cols());
    match rec {
        Recurrence::Diagonal(p, gp) => {
            let (wa, wc) = (p.w_a.as_slice(), p.w_c.as_slice());
            for r in 0..b {
                let (da, dc, hr) = (dpre_a.row(r), dpre_c.row(r), h_prev.row(r));
                let out = dh_prev.row_mut(r);
                for j in 0..n {
                    out[j] += da[j] * wa[j] + dc[j] * wc[j];
                    gp.w_a.as_mut_slice()[j] += da[j] * hr[j];
                    gp.w_c.as_mut_slice()[j] += dc[j] * hr[j];
                }
            }
            outer_acc(&mut gp.u, &dpre_h, x);
            outer_acc(&mut gp.u_a, &dpre_a, x);
            outer_acc(&mut gp.u_c, &dpre_c, x);
            pullback_acc(&mut dx, &dpre_h, &p.u);
            pullback_acc(&mut dx, &dpre_a, &p.u_a);
            pullback_acc(&mut dx, &dpre_c, &p.u_c);
        }
        Recurrence::Dense(p, gp) => {
            pullback_acc(&mut dh_prev, &dpre_a, &p.w_a);
            pullback_acc(&mut dh_prev, &dpre_c, &p.w_c);
            outer_acc(&mut gp.w_a, &dpre_a, h_prev);
            outer_acc(&mut gp.w_c, &dpre_c, h_prev);
            outer_acc(&mut gp.u, &dpre_h, x);
            outer_acc(&mut gp.u_a, &dpre_a, x);
            outer_acc(&mut gp.u_c, &dpre_c, x);
            pullback_acc(&mut dx, &dpre_h, &p.u);
            pullback_acc(&mut dx, &dpre_a, &p.u_a);
            pullback_acc(&mut dx, &dpre_c, &p.u_c);
        }
    }
    (dx, State::from_h(dh_prev))
}

fn gru_step(p: &GruParams, x: &Matrix, h_prev: &Matrix) -> (State, StepCache) {
    let (b, n) = h_prev.shape();
    let mut z = Matrix::zeros(b, n);
    let mut r = Matrix::zeros(b, n);
    let mut m = Matrix::zeros(b, n);
    let mut cand = Matrix::zeros(b, n);
    project(&mut z, x, &p.u_z);
    project_acc(&mut z, h_prev, &p.w_z);
    project(&mut r, x, &p.u_r);
    project_acc(&mut r, h_prev, &p.w_r);
    project(&mut m, h_prev, &p.w_h);
    project(&mut cand, x, &p.u_h);
    z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
    r.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut h = Matrix::zeros(b, n);
    for k in 0..b * n {
        let t = (cand.as_slice()[k] + r.as_slice()[k] * m.as_slice()[k]).tanh();
        cand.as_mut_slice()[k] = t;
        let zk = z.as_slice()[k];
        h.as_mut_slice()[k] = zk * h_prev.as_slice()[k] + (1.0 - zk) * t;
    }
    (
        State::from_h(h),
        StepCache::Gru {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z,
            r,
            m,
            cand,
        },
    )
}

fn gru_backward(p: &GruParams, cache: &StepCache, g: &Matrix, gp: &mut GruParams) -> (Matrix, State) {
    let StepCache::Gru { x, h_prev, z, r, m, cand } = cache else {
        unreachable!("checked by caller")
    };
    let (b, n) = h_prev.shape();
    let mut dpre_h = Matrix::zeros(b, n);
    let mut dpre_z = Matrix::zeros(b, n);
    let mut dpre_r = Matrix::zeros(b, n);
    let mut dm = Matrix::zeros(b, n);
    let mut dh_prev = Matrix::zeros(b, n);
    for k in 0..b * n {
        let gk = g.as_slice()[k];
        let (zk, rk, mk, tk, hk) = (
            z.as_slice()[k],
            r.as_slice()[k],
            m.as_slice()[k],
            cand.as_slice()[k],
            h_prev.as_slice()[k],
        );
        let dh = gk * (1.0 - zk) * (1.0 - tk * tk);
        dpre_h.as_mut_slice()[k] = dh;
        dm.as_mut_slice()[k] = dh * rk;
        dpre_r.as_mut_slice()[k] = dh * mk * rk * (1.0 - rk);
        dpre_z.as_mut_slice()[k] = gk * (hk - tk) * zk * (1.0 - zk);
        dh_prev.as_mut_slice()[k] = gk * zk;
    }
    pullback_acc(&mut dh_prev, &dm, &p.w_h);
    pullback_acc(&mut dh_prev, &dpre_z, &p.w_z);
    pullback_acc(&mut dh_prev, &dpre_r, &p.w_r);
    outer_acc(&mut gp.w_h, &dm, h_prev);
    outer_acc(&mut gp.w_z, &dpre_z, h_prev);
    outer_acc(&mut gp.w_r, &dpre_r, h_prev);
    outer_acc(&mut gp.u_h, &dpre_h, x);
    outer_acc(&mut gp.u_z, &dpre_z, x);
    outer_acc(&mut gp.u_r, &dpre_r, x);
    let mut dx = Matrix::zeros(b, x.cols());
    pullback_acc(&mut dx, &dpre_h, &p.u_h);
    pullback_acc(&mut dx, &dpre_z, &p.u_z);
    pullback_acc(&mut dx, &dpre_r, &p.u_r);
    (dx, State::from_h(dh_prev))
}

fn lstm_step(p: &LstmParams, x: &Matrix, h_prev: &Matrix, c_prev: &Matrix) -> (State, StepCache) {
    let (b, n) = h_prev.shape();
    let mut gates = Matrix::zeros(b, 4 * n);
    project(&mut gates, x, &p.u);
    project_acc(&mut gates, h_prev, &p.w);
    let bias = p.b.as_slice();
    let mut cell = Matrix::zeros(b, n);
    let mut tanh_c = Matrix::zeros(b, n);
    let mut h = Matrix::zeros(b, n);
    for r in 0..b {
        let row = gates.row_mut(r);
        for (j, v) in row.iter_mut().enumerate() {
            let pre = *v + bias[j];
            *v = if (2 * n..3 * n).contains(&j) { pre.tanh() } else { sigmoid(pre) };
        }
        let row = gates.row(r);
        for j in 0..n {
            let (i, f, gg, o) = (row[j], row[n + j], row[2 * n + j], row[3 * n + j]);
            let cn = f * c_prev.get(r, j) + i * gg;
            let tc = cn.tanh();
            cell.set(r, j, cn);
            tanh_c.set(r, j, tc);
            h.set(r, j, o * tc);
        }
    }
    (
        State {
            h,
            cell: Some(cell),
        },
        StepCache::Lstm {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            gates,
            tanh_c,
        },
    )
}

fn lstm_backward(p: &LstmParams, cache: &StepCache, grad: &State, gp: &mut LstmParams) -> (Matrix, State) {
    let StepCache::Lstm { x, h_prev, c_prev, gates, tanh_c } = cache else {
        unreachable!("checked by caller")
    };
    let (b, n) = h_prev.shape();
    let mut dpre = Matrix::zeros(b, 4 * n);
    let mut dc_prev = Matrix::zeros(b, n);
    for r in 0..b {
        let row = gates.row(r);
        for j in 0..n {
            let (i, f, gg, o) = (row[j], row[n + j], row[2 * n + j], row[3 * n + j]);
            let dh = grad.h.get(r, j);
            let dc_in = grad.cell.as_ref().map_or(0.0, |m| m.get(r, j));
            let tc = tanh_c.get(r, j);
            let dc = dc_in + dh * o * (1.0 - tc * tc);
            let d = dpre.row_mut(r);
            d[j] = dc * gg * i * (1.0 - i);
            d[n + j] = dc * c_prev.get(r, j) * f * (1.0 - f);
            d[2 * n + j] = dc * i * (1.0 - gg * gg);
            d[3 * n + j] = dh * tc * o * (1.0 - o);
            dc_prev.set(r, j, dc * f);
        }
    }
    let mut dh_prev = Matrix::zeros(b, n);
    pullback_acc(&mut dh_prev, &dpre, &p.w);
    outer_acc(&mut gp.w, &dpre, h_prev);
    outer_acc(&mut gp.u, &dpre, x);
    let gb = gp.b.as_mut_slice();
    for r in 0..b {
        for (acc, d) in gb.iter_mut().zip(dpre.row(r)) {
            *acc += d;
        }
    }
    let mut dx = Matrix::zeros(b, x.cols());
    pullback_acc(&mut dx, &dpre, &p.u);
    (
        dx,
        State {
            h: dh_prev,
            cell: Some(dc_prev),
        },
    )
}

fn rnn_step(p: &RnnParams, x: &Matrix, h_prev: &Matrix) -> (State, StepCache) {
    let mut h = zeros_like(h_prev);
    project(&mut h, x, &p.u);
    project_acc(&mut h, h_prev, &p.w);
    h.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
    (
        State::from_h(h.clone()),
        StepCache::Rnn {
            x: x.clone(),
            h_prev: h_prev.clone(),
            h,
        },
    )
}

fn rnn_backward(p: &RnnParams, cache: &StepCache, g: &Matrix, gp: &mut RnnParams) -> (Matrix, State) {
    let StepCache::Rnn { x, h_prev, h } = cache else {
        unreachable!("checked by caller")
    };
    let dpre = zip_map(g, h, |gk, hk| gk * (1.0 - hk * hk));
    let mut dh_prev = zeros_like(h_prev);
    pullback_acc(&mut dh_prev, &dpre, &p.w);
    outer_acc(&mut gp.w, &dpre, h_prev);
    outer_acc(&mut gp.u, &dpre, x);
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    pullback_acc(&mut dx, &dpre, &p.u);
    (dx, State::from_h(dh_prev))
}

/// Central-difference Jacobian `dh_t / dh_{t-1}` for one sample.
///
/// Entry `(i, j)` is the sensitivity of `h_t[i]` to `h_{t-1}[j]`. The LSTM
/// cell state is held at zero.
pub fn state_jacobian(params: &CellParams, x: &Vector, h_prev: &Vector) -> Result<Matrix> {
    const EPS: f64 = 1e-6;
    let n = params.hidden_dim();
    let mut jac = Matrix::zeros(n, n);
    let mut probe = h_prev.clone();
    for j in 0..n {
        let orig = probe[j];
        probe[j] = orig + EPS;
        let (plus, _) = params.forward_vec(x, &probe)?;
        probe[j] = orig - EPS;
        let (minus, _) = params.forward_vec(x, &probe)?;
        probe[j] = orig;
        for i in 0..n {
            jac.set(i, j, (plus[i] - minus[i]) / (2.0 * EPS));
        }
    }
    Ok(jac)
}
