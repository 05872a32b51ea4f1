//! C ABI for building, loading and quoting from adaptive-mm catalogs.
//!
//! Every fallible function returns an [`AmmStatus`] code; on failure the
//! message is available from [`amm_last_error`] on the same thread until the
//! next failing call. Catalogs are opaque [`AmmCatalog`] handles owned by the
//! caller and released with [`amm_catalog_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use adaptive_mm::calibration::CalibrationResult;
use adaptive_mm::model::{msft_reference_moments, MoHistory, ObjectiveParams, ScenarioKind, ScenarioMap, TradingSchedule};
use adaptive_mm::policy::{quote_with, DriftForecast, MarketState, QuoteOptions};
use adaptive_mm::recursion::{build_catalog, Catalog, CatalogSpec, DriftMode};
use adaptive_mm::simulate::activity_arrivals;
use adaptive_mm::Error;

/// Result codes. Values 2–9 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmmStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Io = 3,
    Parse = 4,
    Model = 5,
    Integrity = 6,
    Data = 7,
    Grid = 8,
    Verification = 9,
    InvalidUtf8 = 10,
    Panic = 11,
}

/// Opaque catalog handle.
pub struct AmmCatalog {
    inner: Catalog,
}

/// Market state for [`amm_quote`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AmmState {
    pub step: usize,
    pub reference_price: f64,
    pub mid_price: f64,
    pub tick: f64,
    pub inventory: f64,
    /// Expected price change over the next interval (ignored by martingale
    /// catalogs).
    pub drift: f64,
    /// Market-order history, most recent pair first, e.g. `"10,01,00"`.
    pub history: *const c_char,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AmmQuote {
    pub ask: f64,
    pub bid: f64,
    pub spread_ask: f64,
    pub spread_bid: f64,
    pub ask_clamped: bool,
    pub bid_clamped: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AmmStatus {
    match e {
        Error::Config(_) => AmmStatus::Config,
        Error::Io { .. } => AmmStatus::Io,
        Error::Parse(_) => AmmStatus::Parse,
        Error::Model(_) => AmmStatus::Model,
        Error::Integrity { .. } => AmmStatus::Integrity,
        Error::Data(_) => AmmStatus::Data,
        Error::Grid(_) => AmmStatus::Grid,
        Error::Verification(_) => AmmStatus::Verification,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Run `body`, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AmmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AmmStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AmmStatus::NullPointer
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(format!("{what} is not valid UTF-8"));
            AmmStatus::InvalidUtf8
        }
        Err(_) => {
            set_error("internal panic".into());
            AmmStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

/// # Safety
/// `out` must be null or valid for writes.
unsafe fn emit(out: *mut *mut AmmCatalog, catalog: Catalog) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(AmmCatalog { inner: catalog }));
    Ok(())
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn amm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a catalog file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn amm_catalog_load(path: *const c_char, out: *mut *mut AmmCatalog) -> AmmStatus {
    guard(|| {
        let path = text(path, "path")?;
        emit(out, Catalog::read_file(Path::new(path))?)
    })
}

/// Write a catalog file.
///
/// # Safety
/// `catalog` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn amm_catalog_save(catalog: *const AmmCatalog, path: *const c_char) -> AmmStatus {
    guard(|| {
        let cat = catalog.as_ref().ok_or(Failure::Null("catalog"))?;
        let path = text(path, "path")?;
        cat.inner.write_file(Path::new(path))?;
        Ok(())
    })
}

/// Build a martingale catalog on the built-in reference model: reference
/// demand moments with activity-driven arrivals `π± = 0.15 + 0.25·activity`.
/// `scenario` is `"g1"`, `"g2"`, `"g3"` or `"constant"` (lag 1).
///
/// # Safety
/// `scenario` must be NUL-terminated and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn amm_catalog_build_reference(
    scenario: *const c_char,
    n_steps: usize,
    lambda: f64,
    phi: f64,
    out: *mut *mut AmmCatalog,
) -> AmmStatus {
    guard(|| {
        let kind: ScenarioKind = text(scenario, "scenario")?.parse()?;
        let map = match kind {
            ScenarioKind::Constant => ScenarioMap::constant(1)?,
            other => ScenarioMap::standard(other)?,
        };
        let spec = CatalogSpec {
            schedule: TradingSchedule::new(n_steps, 1.0)?,
            arrivals: activity_arrivals(&map, 0.15, 0.25)?,
            map,
            moments: msft_reference_moments(),
            objective: ObjectiveParams::new(lambda, phi)?,
            mode: DriftMode::Martingale,
        };
        emit(out, build_catalog(spec)?)
    })
}

/// Build a catalog from a calibration file. `drift_mode` is 0 for
/// martingale and 1 for one-step drift.
///
/// # Safety
/// `calibration_path` must be NUL-terminated and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn amm_catalog_build_from_calibration(
    calibration_path: *const c_char,
    n_steps: usize,
    lambda: f64,
    phi: f64,
    drift_mode: u32,
    out: *mut *mut AmmCatalog,
) -> AmmStatus {
    guard(|| {
        let cal = CalibrationResult::read_file(Path::new(text(calibration_path, "calibration_path")?))?;
        let mode = match drift_mode {
            0 => DriftMode::Martingale,
            1 => DriftMode::OneStep,
            other => return Err(Error::Config(format!("drift_mode must be 0 or 1, got {other}")).into()),
        };
        let spec = CatalogSpec {
            schedule: TradingSchedule::new(n_steps, 1.0)?,
            map: cal.map,
            arrivals: cal.arrivals.model,
            moments: cal.moments,
            objective: ObjectiveParams::new(lambda, phi)?,
            mode,
        };
        emit(out, build_catalog(spec)?)
    })
}

/// Release a catalog. Null is ignored.
///
/// # Safety
/// `catalog` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn amm_catalog_free(catalog: *mut AmmCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// Last quote step `N` (quotes at `0..=N`); 0 for null.
///
/// # Safety
/// `catalog` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn amm_catalog_n_steps(catalog: *const AmmCatalog) -> usize {
    catalog.as_ref().map_or(0, |c| c.inner.n_steps())
}

/// Number of scenarios; 0 for null.
///
/// # Safety
/// `catalog` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn amm_catalog_scenario_count(catalog: *const AmmCatalog) -> usize {
    catalog.as_ref().map_or(0, |c| c.inner.scenario_count())
}

/// History length the catalog's scenario map expects; 0 for null.
///
/// # Safety
/// `catalog` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn amm_catalog_lag(catalog: *const AmmCatalog) -> usize {
    catalog.as_ref().map_or(0, |c| c.inner.map().lag())
}

/// Quote for one market state.
///
/// # Safety
/// `catalog` must come from this library, `state` and `state.history` be
/// valid, and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn amm_quote(
    catalog: *const AmmCatalog,
    state: *const AmmState,
    round_to_tick: bool,
    out: *mut AmmQuote,
) -> AmmStatus {
    guard(|| {
        let cat = &catalog.as_ref().ok_or(Failure::Null("catalog"))?.inner;
        let st = state.as_ref().ok_or(Failure::Null("state"))?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if st.step > cat.n_steps() {
            return Err(Error::Config(format!("step {} is past the last quote step {}", st.step, cat.n_steps())).into());
        }
        let history: MoHistory = text(st.history, "history")?.parse()?;
        let market = MarketState {
            step: st.step,
            reference_price: st.reference_price,
            mid_price: st.mid_price,
            tick: st.tick,
            inventory: st.inventory,
            history,
        };
        let q = quote_with(&market, &DriftForecast::one_step(st.drift), cat, QuoteOptions { round_to_tick })?;
        *out = AmmQuote {
            ask: q.ask,
            bid: q.bid,
            spread_ask: q.spread_ask,
            spread_bid: q.spread_bid,
            ask_clamped: q.ask_clamped,
            bid_clamped: q.bid_clamped,
        };
        Ok(())
    })
}
