//! C ABI over the `brc` crate.
//!
//! Networks are opaque `BrcNetwork` handles created by `brc_network_new` or
//! `brc_network_load` and released with `brc_network_free`. Every fallible
//! call returns a `BrcStatus`; on failure `brc_last_error` gives a message
//! for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use brc::dynamics::{self, ScalarCellConfig, Stability};
use brc::network::{load_checkpoint, save_checkpoint, sequence_steps, CheckpointMeta};
use brc::{CellKind, Error, Matrix, Network, NetworkSpec, OutputHead, RngState};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Checkpoint = 5,
    NonFinite = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrcCell {
    Brc = 0,
    Nbrc = 1,
    Gru = 2,
    Lstm = 3,
    Rnn = 4,
}

impl From<BrcCell> for CellKind {
    fn from(c: BrcCell) -> Self {
        match c {
            BrcCell::Brc => CellKind::Brc,
            BrcCell::Nbrc => CellKind::Nbrc,
            BrcCell::Gru => CellKind::Gru,
            BrcCell::Lstm => CellKind::Lstm,
            BrcCell::Rnn => CellKind::Rnn,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrcStability {
    Stable = 0,
    Unstable = 1,
    Singular = 2,
}

impl From<Stability> for BrcStability {
    fn from(s: Stability) -> Self {
        match s {
            Stability::Stable => BrcStability::Stable,
            Stability::Unstable => BrcStability::Unstable,
            Stability::Singular => BrcStability::Singular,
        }
    }
}

/// Opaque network handle.
pub struct BrcNetwork {
    net: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BrcStatus {
    match e {
        Error::Shape { .. } => BrcStatus::Shape,
        Error::InvalidArgument(_) | Error::Config(_) => BrcStatus::InvalidArgument,
        Error::NonFinite(_) => BrcStatus::NonFinite,
        Error::Idx(_) | Error::Checkpoint(_) => BrcStatus::Checkpoint,
        Error::Io { .. } => BrcStatus::Io,
    }
}

fn fail(status: BrcStatus, msg: &str) -> BrcStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (BrcStatus, String)>) -> BrcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BrcStatus::Ok
        }
        Ok(Err((status, msg))) => fail(status, &msg),
        Err(_) => fail(BrcStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: brc::Result<T>) -> Result<T, (BrcStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (BrcStatus, String) {
    (BrcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (BrcStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (BrcStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn brc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version string (static).
#[no_mangle]
pub extern "C" fn brc_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

/// Creates a randomly initialized network with `n_layers` recurrent layers.
/// `softmax` selects a softmax output head instead of a linear one.
///
/// # Safety
/// `layers` must point to `n_layers` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brc_network_new(
    cell: BrcCell,
    layers: *const usize,
    n_layers: usize,
    input_dim: usize,
    output_dim: usize,
    softmax: bool,
    seed: u64,
    out: *mut *mut BrcNetwork,
) -> BrcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if layers.is_null() && n_layers > 0 {
            return Err(null("layers"));
        }
        let sizes = if n_layers == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(layers, n_layers).to_vec()
        };
        let head = if softmax { OutputHead::Softmax } else { OutputHead::Linear };
        let spec = NetworkSpec::new(cell.into(), sizes, input_dim, output_dim).with_head(head);
        let net = lift(Network::init(spec, &mut RngState::new(seed)))?;
        *out = Box::into_raw(Box::new(BrcNetwork { net }));
        Ok(())
    })
}

/// Loads a network from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn brc_network_load(path: *const c_char, out: *mut *mut BrcNetwork) -> BrcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (net, _) = lift(load_checkpoint(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(BrcNetwork { net }));
        Ok(())
    })
}

/// Writes a network checkpoint.
///
/// # Safety
/// `net` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn brc_network_save(net: *const BrcNetwork, path: *const c_char) -> BrcStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        lift(save_checkpoint(path_arg(path)?, &net.net, CheckpointMeta::default()))
    })
}

/// Runs one `[t_len x input_dim]` row-major sequence and writes the
/// `output_dim` head outputs to `out`.
///
/// # Safety
/// `seq` must hold `t_len * input_dim` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn brc_network_forward(
    net: *const BrcNetwork,
    seq: *const f64,
    t_len: usize,
    input_dim: usize,
    out: *mut f64,
    out_len: usize,
) -> BrcStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        if seq.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let spec = net.spec();
        if input_dim != spec.input_dim || t_len == 0 {
            return Err((
                BrcStatus::Shape,
                format!("expected [T x {}] with T >= 1, got [{t_len} x {input_dim}]", spec.input_dim),
            ));
        }
        if out_len < spec.output_dim {
            return Err((
                BrcStatus::BufferTooSmall,
                format!("output needs {} values, buffer has {out_len}", spec.output_dim),
            ));
        }
        let data = std::slice::from_raw_parts(seq, t_len * input_dim).to_vec();
        let m = lift(Matrix::from_vec(t_len, input_dim, data))?;
        let (logits, _) = lift(net.forward_batch(&sequence_steps(&m)))?;
        let y = net.head_output(&logits);
        std::slice::from_raw_parts_mut(out, spec.output_dim).copy_from_slice(y.row(0));
        Ok(())
    })
}

/// Input width of the network, 0 for a null handle.
///
/// # Safety
/// `net` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn brc_network_input_dim(net: *const BrcNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.spec().input_dim)
}

/// Output width of the network, 0 for a null handle.
///
/// # Safety
/// `net` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn brc_network_output_dim(net: *const BrcNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.spec().output_dim)
}

/// Total number of trainable parameters, 0 for a null handle.
///
/// # Safety
/// `net` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn brc_network_num_params(net: *const BrcNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.num_params())
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn brc_network_free(net: *mut BrcNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Fixed points of the scalar bistable update, ascending. `count` receives
/// the number found; if it exceeds `capacity` the call returns
/// `BufferTooSmall` and writes nothing else.
///
/// # Safety
/// `h_out` and `stability_out` must hold `capacity` entries; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn brc_fixed_points(
    a: f64,
    c: f64,
    drive: f64,
    h_out: *mut f64,
    stability_out: *mut BrcStability,
    capacity: usize,
    count: *mut usize,
) -> BrcStatus {
    guard(|| {
        if count.is_null() {
            return Err(null("count"));
        }
        let cfg = lift(ScalarCellConfig::new(a, c, drive))?;
        let report = dynamics::find_fixed_points(&cfg);
        *count = report.points.len();
        if report.points.len() > capacity {
            return Err((
                BrcStatus::BufferTooSmall,
                format!("{} fixed points, capacity {capacity}", report.points.len()),
            ));
        }
        if h_out.is_null() || stability_out.is_null() {
            return Err(null("output buffer"));
        }
        for (k, p) in report.points.iter().enumerate() {
            *h_out.add(k) = p.h_star;
            *stability_out.add(k) = p.stability.into();
        }
        Ok(())
    })
}

/// Iterates the scalar cell over `n` steps; `traj_out` receives `n + 1` values.
///
/// # Safety
/// `a`, `c`, `drive` must hold `n` values and `traj_out` `n + 1`.
#[no_mangle]
pub unsafe extern "C" fn brc_simulate_scalar_cell(
    a: *const f64,
    c: *const f64,
    drive: *const f64,
    n: usize,
    h0: f64,
    traj_out: *mut f64,
) -> BrcStatus {
    guard(|| {
        if traj_out.is_null() || (n > 0 && (a.is_null() || c.is_null() || drive.is_null())) {
            return Err(null("buffer"));
        }
        let view = |p: *const f64| if n == 0 { &[][..] } else { std::slice::from_raw_parts(p, n) };
        let traj = lift(dynamics::simulate_scalar_cell(view(a), view(c), view(drive), h0))?;
        std::slice::from_raw_parts_mut(traj_out, n + 1).copy_from_slice(&traj);
        Ok(())
    })
}

/// Drive magnitude where bistability ends for gain `a > 1`; NaN otherwise.
#[no_mangle]
pub extern "C" fn brc_fold_drive(a: f64) -> f64 {
    dynamics::fold_drive(a).unwrap_or(f64::NAN)
}
