//! Online quoting from a built catalog.
//!
//! Quotes are affine in inventory. A one-step drift forecast shifts both
//! sides; in multi-step mode, forecasts further out are weighted by the
//! catalog's ξ-table. Raw quotes are clamped so that neither side crosses the
//! midprice.

use crate::error::{Error, Result};
use crate::model::{DemandMoments, MoHistory, SideMoments};
use crate::recursion::{Catalog, DriftMode, PolicyCoefs};

/// Observable state at a quote time.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub step: usize,
    /// Reference price the spreads are measured from.
    pub reference_price: f64,
    pub mid_price: f64,
    pub tick: f64,
    /// Signed share inventory.
    pub inventory: f64,
    pub history: MoHistory,
}

/// Forecasts of expected price changes seen from the current step.
///
/// `multi_step[j]` is the expected change over interval `k + 1 + j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DriftForecast {
    pub one_step: f64,
    pub multi_step: Vec<f64>,
}

impl DriftForecast {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn one_step(delta: f64) -> Self {
        Self {
            one_step: delta,
            multi_step: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub ask: f64,
    pub bid: f64,
    /// `ask − S` after clamping.
    pub spread_ask: f64,
    /// `S − bid` after clamping.
    pub spread_bid: f64,
    pub ask_clamped: bool,
    pub bid_clamped: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuoteOptions {
    /// Round each side to the tick grid, away from the midprice.
    pub round_to_tick: bool,
}

/// Raw (unclamped) spreads at `(step, scenario)` including forecast terms
/// allowed by the catalog's drift mode.
pub fn raw_spreads(
    catalog: &Catalog,
    step: usize,
    scenario: usize,
    inventory: f64,
    forecast: &DriftForecast,
) -> Result<(f64, f64)> {
    let n = catalog.n_steps();
    if step > n {
        return Err(Error::Config(format!("step {step} is past the last quote step {n}")));
    }
    if scenario >= catalog.scenario_count() {
        return Err(Error::Integrity {
            step,
            scenario,
            detail: "scenario not present in catalog".into(),
        });
    }
    if !forecast.one_step.is_finite() || forecast.multi_step.iter().any(|d| !d.is_finite()) {
        return Err(Error::Config("drift forecasts must be finite".into()));
    }
    if forecast.multi_step.len() > n - step {
        return Err(Error::Config(format!(
            "{} multi-step forecasts given but only {} intervals remain after step {step}",
            forecast.multi_step.len(),
            n - step
        )));
    }
    let pol = catalog.policy(step, scenario);
    let (mut ask, mut bid) = pol.spreads(inventory);
    match catalog.mode() {
        DriftMode::Martingale => {}
        DriftMode::OneStep => {
            ask += pol.drift_coef_p() * forecast.one_step;
            bid -= pol.drift_coef_m() * forecast.one_step;
        }
        DriftMode::MultiStep { .. } => {
            ask += pol.drift_coef_p() * forecast.one_step;
            bid -= pol.drift_coef_m() * forecast.one_step;
            let (dp, dm) = multi_step_terms(catalog, pol, step, scenario, &forecast.multi_step)?;
            ask += dp;
            bid -= dm;
        }
    }
    Ok((ask, bid))
}

/// Forecast terms beyond the current interval. Forecasts past the ξ-table
/// horizon are ignored.
fn multi_step_terms(
    catalog: &Catalog,
    pol: &PolicyCoefs,
    step: usize,
    scenario: usize,
    deltas: &[f64],
) -> Result<(f64, f64)> {
    let xi = catalog.xi_table().ok_or_else(|| Error::Integrity {
        step,
        scenario,
        detail: "multi-step catalog has no xi table".into(),
    })?;
    let last = xi.last_horizon(step);
    let (mut ask, mut bid) = (0.0, 0.0);
    for (j, &delta) in deltas.iter().enumerate() {
        let i = step + 1 + j;
        if i > last {
            break;
        }
        if delta == 0.0 {
            continue;
        }
        let (Some(mp), Some(mm)) = (xi.m_plus(step, scenario, i), xi.m_minus(step, scenario, i)) else {
            break;
        };
        ask += delta * (pol.rho_p * mp - pol.psi_p * mm);
        bid += delta * (pol.rho_m * mm - pol.psi_m * mp);
    }
    let den = 2.0 * pol.gamma;
    Ok((ask / den, bid / den))
}

pub fn quote(state: &MarketState, forecast: &DriftForecast, catalog: &Catalog) -> Result<Quote> {
    quote_with(state, forecast, catalog, QuoteOptions::default())
}

pub fn quote_with(
    state: &MarketState,
    forecast: &DriftForecast,
    catalog: &Catalog,
    options: QuoteOptions,
) -> Result<Quote> {
    if !(state.tick > 0.0 && state.tick.is_finite()) {
        return Err(Error::Config(format!("tick must be positive, got {}", state.tick)));
    }
    if !(state.reference_price.is_finite() && state.mid_price.is_finite() && state.inventory.is_finite()) {
        return Err(Error::Config("market state must be finite".into()));
    }
    let scenario = catalog.map().encode_history(&state.history)?;
    let (lp, lm) = raw_spreads(catalog, state.step, scenario.index(), state.inventory, forecast)?;
    Ok(place(state.reference_price, state.mid_price, state.tick, lp, lm, options))
}

/// Turn raw spreads into a valid quote around `mid`.
pub fn place(reference: f64, mid: f64, tick: f64, spread_ask: f64, spread_bid: f64, options: QuoteOptions) -> Quote {
    let mut ask = reference + spread_ask;
    let mut bid = reference - spread_bid;
    let mut ask_clamped = false;
    let mut bid_clamped = false;
    if options.round_to_tick {
        // Small slack so values already on the grid stay put.
        ask = ((ask / tick) - 1e-9).ceil() * tick;
        bid = ((bid / tick) + 1e-9).floor() * tick;
    }
    if !(ask >= mid + tick) {
        ask = mid + tick;
        ask_clamped = true;
    }
    if !(bid <= mid - tick) {
        bid = mid - tick;
        bid_clamped = true;
    }
    if ask <= bid {
        ask = mid + tick;
        bid = mid - tick;
        ask_clamped = true;
        bid_clamped = true;
    }
    Quote {
        ask,
        bid,
        spread_ask: ask - reference,
        spread_bid: reference - bid,
        ask_clamped,
        bid_clamped,
    }
}

/// Largest symmetric-market inventory at which the optimal quotes stay on
/// their own side of the reference price.
pub fn critical_inventory(side: &SideMoments) -> f64 {
    side.mu_c2 * side.mu_p / (2.0 * side.mu_c)
}

/// [`critical_inventory`] on the side-averaged moments.
pub fn critical_inventory_of(moments: &DemandMoments) -> f64 {
    critical_inventory(&moments.averaged())
}

/// Location of the most negative raw spread sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstSpread {
    pub step: usize,
    pub scenario: usize,
    pub inventory: i64,
    pub spread_sum: f64,
}

/// A `(step, scenario)` pair with violations on an inventory range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationRange {
    pub step: usize,
    pub scenario: usize,
    pub inventory_lo: i64,
    pub inventory_hi: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub i_max: i64,
    pub pairs_checked: usize,
    /// Integer inventories, summed over all pairs, with `L⁺ + L⁻ ≤ 0`.
    pub violation_count: u64,
    pub pairs_with_violations: usize,
    pub worst: WorstSpread,
    /// At most [`AdmissibilityReport::MAX_EXAMPLES`] violating ranges.
    pub examples: Vec<ViolationRange>,
}

impl AdmissibilityReport {
    pub const MAX_EXAMPLES: usize = 32;

    pub fn is_admissible(&self) -> bool {
        self.violation_count == 0
    }
}

/// Default scan range: ten times the critical inventory when it is positive
/// and finite, else 10⁴ shares.
pub fn default_i_max(moments: &DemandMoments) -> i64 {
    let i0 = critical_inventory_of(moments);
    if i0.is_finite() && i0 > 0.0 {
        (10.0 * i0).ceil().min(1e12) as i64
    } else {
        10_000
    }
}

/// Scan raw martingale spreads for `L⁺ + L⁻ ≤ 0` at every `(k, ι)` and every
/// integer inventory in `[−i_max, i_max]`.
///
/// The spread sum is affine in inventory, so each pair is resolved by its
/// root instead of a per-inventory loop.
pub fn check_admissibility(catalog: &Catalog, i_max: i64) -> AdmissibilityReport {
    let i_max = i_max.max(0);
    let mut report = AdmissibilityReport {
        i_max,
        pairs_checked: 0,
        violation_count: 0,
        pairs_with_violations: 0,
        worst: WorstSpread {
            step: 0,
            scenario: 0,
            inventory: 0,
            spread_sum: f64::INFINITY,
        },
        examples: Vec::new(),
    };
    for k in 0..=catalog.n_steps() {
        for s in 0..catalog.scenario_count() {
            let pol = catalog.policy(k, s);
            let sum = |inv: i64| {
                let (a, b) = pol.spreads(inv as f64);
                a + b
            };
            report.pairs_checked += 1;
            let (lo_val, hi_val) = (sum(-i_max), sum(i_max));
            let (worst_inv, worst_val) = if lo_val <= hi_val { (-i_max, lo_val) } else { (i_max, hi_val) };
            if worst_val < report.worst.spread_sum {
                report.worst = WorstSpread {
                    step: k,
                    scenario: s,
                    inventory: worst_inv,
                    spread_sum: worst_val,
                };
            }
            if let Some((lo, hi)) = violating_range(&sum, i_max) {
                report.violation_count += (hi - lo + 1) as u64;
                report.pairs_with_violations += 1;
                if report.examples.len() < AdmissibilityReport::MAX_EXAMPLES {
                    report.examples.push(ViolationRange {
                        step: k,
                        scenario: s,
                        inventory_lo: lo,
                        inventory_hi: hi,
                    });
                }
            }
        }
    }
    report
}

/// Contiguous integer range in `[−i_max, i_max]` where an affine `sum` is
/// non-positive.
fn violating_range(sum: &impl Fn(i64) -> f64, i_max: i64) -> Option<(i64, i64)> {
    let bad = |i: i64| !(sum(i) > 0.0);
    let (left, right) = (bad(-i_max), bad(i_max));
    match (left, right) {
        (true, true) => Some((-i_max, i_max)),
        (false, false) => {
            // An affine function positive at both ends is positive between.
            None
        }
        (true, false) => {
            // Largest violating inventory by bisection on the sign change.
            let (mut lo, mut hi) = (-i_max, i_max);
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if bad(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some((-i_max, lo))
        }
        (false, true) => {
            let (mut lo, mut hi) = (-i_max, i_max);
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if bad(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Some((hi, i_max))
        }
    }
}

/// Expected-inventory contraction per step in a symmetric market with
/// disjoint arrivals: `E[I_{k+1} | I_k] = factor · I_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum InventoryDiagnostics {
    NotApplicable { reason: String },
    Factors(ContractionFactors),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionFactors {
    n_steps: usize,
    scenarios: usize,
    factors: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// Factors outside `[−1, 1]` beyond rounding slack.
    pub out_of_bounds: usize,
}

impl ContractionFactors {
    pub fn factor(&self, step: usize, scenario: usize) -> f64 {
        self.factors[step * self.scenarios + scenario]
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn scenario_count(&self) -> usize {
        self.scenarios
    }
}

/// Relative tolerance used to accept the two sides as equal.
const SIDE_TOLERANCE: f64 = 1e-12;

pub fn inventory_diagnostics(catalog: &Catalog) -> InventoryDiagnostics {
    let d = catalog.moments();
    let close = |a: f64, b: f64| (a - b).abs() <= SIDE_TOLERANCE * a.abs().max(b.abs());
    if !(close(d.plus.mu_c, d.minus.mu_c) && close(d.plus.mu_c2, d.minus.mu_c2)) {
        return InventoryDiagnostics::NotApplicable {
            reason: "ask and bid demand moments differ".into(),
        };
    }
    for (s, p) in catalog.arrivals().all().iter().enumerate() {
        if p.pi_11 != 0.0 {
            return InventoryDiagnostics::NotApplicable {
                reason: format!("scenario {s} has simultaneous arrivals (pi11 = {})", p.pi_11),
            };
        }
        if !close(p.pi_plus, p.pi_minus) {
            return InventoryDiagnostics::NotApplicable {
                reason: format!("scenario {s} has unbalanced arrivals"),
            };
        }
    }
    let n = catalog.n_steps();
    let sc = catalog.scenario_count();
    let (mu_c, mu_c2) = (d.plus.mu_c, d.plus.mu_c2);
    let mut factors = Vec::with_capacity((n + 1) * sc);
    let (mut min, mut max, mut out_of_bounds) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    for k in 0..=n {
        for s in 0..sc {
            let inp = catalog.step_inputs(k, s);
            let a1 = inp.alpha1p;
            let f = 1.0 + 2.0 * inp.pi_plus * mu_c * mu_c * a1 / (mu_c - a1 * mu_c2);
            if f.abs() > 1.0 + 1e-12 {
                out_of_bounds += 1;
            }
            min = min.min(f);
            max = max.max(f);
            factors.push(f);
        }
    }
    InventoryDiagnostics::Factors(ContractionFactors {
        n_steps: n,
        scenarios: sc,
        factors,
        min,
        max,
        out_of_bounds,
    })
}
