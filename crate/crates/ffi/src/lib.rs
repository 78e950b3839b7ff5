//! C ABI over the simulator.
//!
//! Every fallible call returns a [`FedcpStatus`]; on failure the message is
//! available from [`fedcp_last_error`] on the same thread until the next
//! failing call. Strings handed out by the library must be released with
//! [`fedcp_string_free`], simulations with [`fedcp_simulation_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedcp_core::config::parse_config_str;
use fedcp_core::experiment::build_simulation;
use fedcp_core::federation::{rounds_csv, RoundReport, Simulation};
use fedcp_core::nn::{Activation, Cpn, CpnSpec, Module, Norm};
use fedcp_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FedcpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    Input = 5,
    Dimension = 6,
    Numeric = 7,
    Protocol = 8,
    Io = 9,
    Finished = 10,
    Panic = 11,
}

/// Opaque simulation handle.
pub struct FedcpSimulation {
    inner: Simulation,
}

/// Metrics of one completed round. `pir_mean` is NaN for variants without a
/// policy network.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FedcpRoundSummary {
    pub t: usize,
    pub n_selected: usize,
    pub loss_bef: f64,
    pub loss_aft: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub acc_best: f64,
    pub pir_mean: f64,
}

impl From<&RoundReport> for FedcpRoundSummary {
    fn from(r: &RoundReport) -> Self {
        Self {
            t: r.t,
            n_selected: r.selected.len(),
            loss_bef: r.loss_bef,
            loss_aft: r.loss_aft,
            acc_mean: r.acc_mean,
            acc_std: r.acc_std,
            acc_best: r.acc_best,
            pir_mean: r.pir_mean.unwrap_or(f64::NAN),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FedcpStatus {
    match e {
        Error::Dimension { .. } => FedcpStatus::Dimension,
        Error::Numeric { .. } => FedcpStatus::Numeric,
        Error::Input(_) | Error::Format { .. } => FedcpStatus::Input,
        Error::Usage(_) | Error::Config { .. } => FedcpStatus::Config,
        Error::Protocol(_) => FedcpStatus::Protocol,
        Error::Io(_) => FedcpStatus::Io,
        Error::Parse { .. } => FedcpStatus::Parse,
    }
}

/// Runs `f`, turning errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), (FedcpStatus, String)>) -> FedcpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FedcpStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FedcpStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (FedcpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FedcpStatus, String) {
    (FedcpStatus::NullPointer, format!("{what} is null"))
}

fn into_c_string(s: String) -> Result<*mut c_char, (FedcpStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (FedcpStatus::Input, "string contains a NUL byte".into()))
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fedcp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedcp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a simulation from a JSON config document (the same schema the
/// command-line tool reads). `workers` of 0 means one worker.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string and `out` a valid
/// pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_new(
    config_json: *const c_char,
    workers: usize,
    out: *mut *mut FedcpSimulation,
) -> FedcpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|e| (FedcpStatus::InvalidUtf8, e.to_string()))?;
        let cfg = parse_config_str(text).map_err(core_err)?;
        let inner = build_simulation(&cfg, workers.max(1)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(FedcpSimulation { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from [`fedcp_simulation_new`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_free(sim: *mut FedcpSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs the next round and optionally reports its metrics. Returns
/// `FEDCP_STATUS_FINISHED` once every configured round has run.
///
/// # Safety
/// `sim` must be a live handle; `out` may be null or point to writable
/// storage.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_run_round(
    sim: *mut FedcpSimulation,
    out: *mut FedcpRoundSummary,
) -> FedcpStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        if sim.inner.is_finished() {
            return Err((FedcpStatus::Finished, "all rounds have run".into()));
        }
        let report = sim.inner.run_round().map_err(core_err)?;
        if let Some(out) = out.as_mut() {
            *out = FedcpRoundSummary::from(&report);
        }
        Ok(())
    })
}

/// Runs every remaining round.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_run(sim: *mut FedcpSimulation) -> FedcpStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        sim.inner.run().map_err(core_err)?;
        Ok(())
    })
}

/// Rounds completed so far; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_round(sim: *const FedcpSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.inner.round())
}

/// Configured number of rounds; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_total_rounds(sim: *const FedcpSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.inner.config().rounds)
}

/// Number of clients; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_num_clients(sim: *const FedcpSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.inner.clients().len())
}

/// Best mean accuracy seen so far.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_best_accuracy(sim: *const FedcpSimulation, out: *mut f64) -> FedcpStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = sim.inner.best_accuracy();
        Ok(())
    })
}

/// Per-round CSV (header plus one row per completed round) as a new string
/// owned by the caller.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_rounds_csv(sim: *const FedcpSimulation, out: *mut *mut c_char) -> FedcpStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = into_c_string(rounds_csv(sim.inner.reports()))?;
        Ok(())
    })
}

/// Partition sidecar text (one client per line) as a new caller-owned string.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedcp_simulation_partition(sim: *const FedcpSimulation, out: *mut *mut c_char) -> FedcpStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = into_c_string(sim.inner.plan().to_sidecar())?;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fedcp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parameter count of a policy network over `k` features, with or without
/// layer normalization.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedcp_cpn_param_count(k: usize, layer_norm: c_int, out: *mut usize) -> FedcpStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if k == 0 {
            return Err((FedcpStatus::Config, "k must be positive".into()));
        }
        let spec = CpnSpec {
            activation: Activation::Relu,
            norm: if layer_norm != 0 { Norm::LayerNorm } else { Norm::None },
        };
        // Parameter values do not affect the count.
        let mut rng = fedcp_core::seed::SeedTree::new(0).stream("init", 0, 0);
        *out = Cpn::init(k, spec, &mut rng).param_count();
        Ok(())
    })
}
