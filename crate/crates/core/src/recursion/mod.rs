//! Backward construction of the coefficient catalog.
//!
//! The value function at step `k` is `W + S·I + α_k I² + h_k I + g_k`, with
//! scenario-dependent coefficients. Each backward step needs the one-step
//! conditional expectations of the next layer (see [`conditional_expectations`])
//! and produces the quote coefficients of [`PolicyCoefs`].

mod io;
mod xi;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ArrivalModel, DemandMoments, JointCells, ObjectiveParams, ScenarioId, ScenarioMap,
    TradingSchedule,
};

pub use xi::{xi_factor, XiTable, DEFAULT_XI_ENTRY_CAP};

/// Relative slack for the sign and ordering assertions of the backward sweep.
pub const INTEGRITY_SLACK: f64 = 1e-12;

/// One-step-ahead conditional expectations of a per-scenario table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditionals {
    /// Unconditional one-step expectation.
    pub x0: f64,
    /// Expectation given a buy market order.
    pub x1p: f64,
    /// Expectation given a sell market order.
    pub x1m: f64,
    /// Value after both arrive.
    pub x11: f64,
    /// Value after only a buy arrives.
    pub x10: f64,
    /// Value after only a sell arrives.
    pub x01: f64,
}

/// Conditional expectations of `x` (indexed by next-step scenario) seen from
/// scenario `iota`.
pub fn conditional_expectations(
    x: &[f64],
    iota: ScenarioId,
    arrivals: &ArrivalModel,
    map: &ScenarioMap,
) -> Result<Conditionals> {
    if x.len() != map.scenario_count() {
        return Err(Error::Model(format!(
            "table has {} entries, scenario map has {}",
            x.len(),
            map.scenario_count()
        )));
    }
    let cells = arrivals.joint_cells(iota)?;
    Ok(conditionals_unchecked(x, iota.0, &cells, map))
}

#[inline]
fn conditionals_unchecked(x: &[f64], iota: usize, cells: &JointCells, map: &ScenarioMap) -> Conditionals {
    let x11 = x[map.next(iota, 3)];
    let x10 = x[map.next(iota, 2)];
    let x01 = x[map.next(iota, 1)];
    let x00 = x[map.next(iota, 0)];
    let pi_plus = cells.p11 + cells.p10;
    let pi_minus = cells.p11 + cells.p01;
    Conditionals {
        x0: x11 * cells.p11 + x10 * cells.p10 + x01 * cells.p01 + x00 * cells.p00,
        x1p: (x11 * cells.p11 + x10 * cells.p10) / pi_plus,
        x1m: (x11 * cells.p11 + x01 * cells.p01) / pi_minus,
        x11,
        x10,
        x01,
    }
}

/// Everything one closed-form step needs at a single scenario.
///
/// The α-conditionals are expected to be already shifted by the running
/// penalty; the h-conditionals already include any known price drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInputs {
    pub pi_plus: f64,
    pub pi_minus: f64,
    pub pi_11: f64,
    pub alpha0: f64,
    pub alpha1p: f64,
    pub alpha1m: f64,
    pub alpha11: f64,
    pub h0: f64,
    pub h1p: f64,
    pub h1m: f64,
    pub g0: f64,
}

/// Value-function coefficients at one `(step, scenario)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueCoefs {
    pub alpha: f64,
    pub h: f64,
    pub g: f64,
}

/// Auxiliaries and quote coefficients at one `(step, scenario)`.
///
/// Optimal spreads are `L⁺ = a1p·I + a2p + a3p` and `L⁻ = −a1m·I − a2m + a3m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyCoefs {
    pub rho_p: f64,
    pub rho_m: f64,
    pub psi_p: f64,
    pub psi_m: f64,
    pub gamma: f64,
    pub a1p: f64,
    pub a1m: f64,
    pub a2p: f64,
    pub a2m: f64,
    pub a3p: f64,
    pub a3m: f64,
}

impl PolicyCoefs {
    /// Ask sensitivity to the one-step drift forecast.
    pub fn drift_coef_p(&self) -> f64 {
        (self.rho_p - self.psi_p) / (2.0 * self.gamma)
    }

    /// Bid sensitivity to the one-step drift forecast.
    pub fn drift_coef_m(&self) -> f64 {
        (self.rho_m - self.psi_m) / (2.0 * self.gamma)
    }

    /// Raw martingale spreads `(L⁺, L⁻)` at inventory `inventory`.
    #[inline]
    pub fn spreads(&self, inventory: f64) -> (f64, f64) {
        (
            self.a1p * inventory + self.a2p + self.a3p,
            -self.a1m * inventory - self.a2m + self.a3m,
        )
    }
}

/// Closed-form solution of one backward step at one scenario.
pub fn solve_step(inp: &StepInputs, d: &DemandMoments) -> (PolicyCoefs, ValueCoefs) {
    let (p, m) = (&d.plus, &d.minus);
    let StepInputs {
        pi_plus,
        pi_minus,
        pi_11,
        alpha0,
        alpha1p,
        alpha1m,
        alpha11,
        h0,
        h1p,
        h1m,
        g0,
    } = *inp;

    // Curvatures of the one-sided expected gain; negative when alpha < 0.
    let kp = alpha1p * p.mu_c2 - p.mu_c;
    let km = alpha1m * m.mu_c2 - m.mu_c;
    let pp = pi_plus * pi_minus;

    let rho_p = pp * p.mu_c * km;
    let rho_m = pp * m.mu_c * kp;
    let psi_p = pi_minus * pi_11 * alpha11 * p.mu_c * m.mu_c * m.mu_c;
    let psi_m = pi_plus * pi_11 * alpha11 * m.mu_c * p.mu_c * p.mu_c;
    let cross = pi_11 * alpha11 * p.mu_c * m.mu_c;
    let gamma = cross * cross - pp * kp * km;

    let a1p = (alpha1p * rho_p - alpha1m * psi_p) / gamma;
    let a1m = (alpha1m * rho_m - alpha1p * psi_m) / gamma;
    let a2p = (h1p * rho_p - h1m * psi_p) / (2.0 * gamma);
    let a2m = (h1m * rho_m - h1p * psi_m) / (2.0 * gamma);

    let lin_p = pi_plus * (p.mu_cp - 2.0 * alpha1p * p.mu_c2p)
        + 2.0 * psi_p * m.mu_cp / (pi_minus * m.mu_c * m.mu_c);
    let lin_m = pi_minus * (m.mu_cp - 2.0 * alpha1m * m.mu_c2p)
        + 2.0 * psi_m * p.mu_cp / (pi_plus * p.mu_c * p.mu_c);
    let a3p = rho_p / (2.0 * pi_plus * p.mu_c * gamma) * lin_p
        + psi_p / (2.0 * pi_minus * m.mu_c * gamma) * lin_m;
    let a3m = rho_m / (2.0 * pi_minus * m.mu_c * gamma) * lin_m
        + psi_m / (2.0 * pi_plus * p.mu_c * gamma) * lin_p;

    // Inventory-free parts of the spreads: L⁺ = a1p·I + bp, L⁻ = −a1m·I + bm.
    let bp = a2p + a3p;
    let bm = a3m - a2m;
    let two_cross = 2.0 * alpha11 * pi_11 * p.mu_c * m.mu_c;
    let ratio_p = p.mu_cp / p.mu_c;
    let ratio_m = m.mu_cp / m.mu_c;
    let lin_hp = p.mu_cp + h1p * p.mu_c - 2.0 * alpha1p * p.mu_c2p;
    let lin_hm = m.mu_cp - h1m * m.mu_c - 2.0 * alpha1m * m.mu_c2p;

    let alpha = alpha0
        + pi_plus * (kp * a1p * a1p + 2.0 * alpha1p * p.mu_c * a1p)
        + pi_minus * (km * a1m * a1m + 2.0 * alpha1m * m.mu_c * a1m)
        + two_cross * a1p * a1m;

    let h = h0
        + pi_plus
            * (2.0 * kp * a1p * bp + 2.0 * alpha1p * p.mu_c * bp - 2.0 * alpha1p * p.mu_cp
                + a1p * lin_hp)
        + pi_minus
            * (-2.0 * km * a1m * bm - 2.0 * alpha1m * m.mu_c * bm + 2.0 * alpha1m * m.mu_cp
                - a1m * lin_hm)
        - two_cross * (a1p * bm - a1m * bp + a1m * ratio_p - a1p * ratio_m);

    let g = g0
        + pi_plus * (kp * bp * bp + alpha1p * p.mu_c2p2 - h1p * p.mu_cp + lin_hp * bp)
        + pi_minus * (km * bm * bm + alpha1m * m.mu_c2p2 + h1m * m.mu_cp + lin_hm * bm)
        - two_cross * (bp * bm - ratio_p * bm - ratio_m * bp + ratio_p * ratio_m);

    (
        PolicyCoefs {
            rho_p,
            rho_m,
            psi_p,
            psi_m,
            gamma,
            a1p,
            a1m,
            a2p,
            a2m,
            a3p,
            a3m,
        },
        ValueCoefs { alpha, h, g },
    )
}

/// Value coefficients of one step for all scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientLayer {
    pub step: usize,
    pub alpha: Vec<f64>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
}

impl CoefficientLayer {
    pub fn scenario_count(&self) -> usize {
        self.alpha.len()
    }

    pub fn value(&self, iota: usize) -> ValueCoefs {
        ValueCoefs {
            alpha: self.alpha[iota],
            h: self.h[iota],
            g: self.g[iota],
        }
    }
}

/// Quote coefficients of one step for all scenarios, with the conditionals of
/// the following layer that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLayer {
    pub step: usize,
    pub coefs: Vec<PolicyCoefs>,
    pub inputs: Vec<StepInputs>,
}

/// Terminal layer at index `N + 1`: `α ≡ −λ`, `h ≡ g ≡ 0`.
pub fn terminal_layer(schedule: &TradingSchedule, scenarios: usize, p: &ObjectiveParams) -> CoefficientLayer {
    CoefficientLayer {
        step: schedule.terminal_index(),
        alpha: vec![-p.lambda; scenarios],
        h: vec![0.0; scenarios],
        g: vec![0.0; scenarios],
    }
}

/// Assemble the step inputs at scenario `iota` from the next layer's tables.
#[allow(clippy::too_many_arguments)]
#[inline]
fn step_inputs(
    alpha: &[f64],
    h: &[f64],
    g: &[f64],
    iota: usize,
    arrivals: &ArrivalModel,
    map: &ScenarioMap,
    phi: f64,
    drift: f64,
) -> StepInputs {
    let probs = arrivals.probs(iota);
    let cells = probs.cells();
    let a = conditionals_unchecked(alpha, iota, &cells, map);
    let hc = conditionals_unchecked(h, iota, &cells, map);
    let gc = conditionals_unchecked(g, iota, &cells, map);
    StepInputs {
        pi_plus: probs.pi_plus,
        pi_minus: probs.pi_minus,
        pi_11: probs.pi_11,
        alpha0: a.x0 - phi,
        alpha1p: a.x1p - phi,
        alpha1m: a.x1m - phi,
        alpha11: a.x11 - phi,
        h0: hc.x0 + drift,
        h1p: hc.x1p + drift,
        h1m: hc.x1m + drift,
        g0: gc.x0,
    }
}

fn check_integrity(step: usize, iota: usize, inp: &StepInputs, pol: &PolicyCoefs, val: &ValueCoefs) -> Result<()> {
    let fail = |detail: String| {
        Err(Error::Integrity {
            step,
            scenario: iota,
            detail,
        })
    };
    let scale = inp.alpha0.abs();
    if !(val.alpha.is_finite() && val.h.is_finite() && val.g.is_finite() && pol.gamma.is_finite()) {
        return fail("non-finite coefficient".into());
    }
    let gamma_scale = pol.gamma.abs().max(pol.rho_p.abs() * pol.rho_m.abs()).max(f64::MIN_POSITIVE);
    if pol.gamma >= INTEGRITY_SLACK * gamma_scale {
        return fail(format!("gamma = {} is not negative", pol.gamma));
    }
    if val.alpha >= INTEGRITY_SLACK * scale {
        return fail(format!("alpha = {} is not negative", val.alpha));
    }
    if val.alpha <= inp.alpha0 - INTEGRITY_SLACK * scale {
        return fail(format!(
            "alpha = {} does not exceed the next-step conditional {}",
            val.alpha, inp.alpha0
        ));
    }
    Ok(())
}

/// One backward step for every scenario.
///
/// `next` must be the layer at `step + 1`. `drift` is a known expected price
/// change over the step (zero in the martingale case).
pub fn backward_step(
    next: &CoefficientLayer,
    arrivals: &ArrivalModel,
    moments: &DemandMoments,
    map: &ScenarioMap,
    objective: &ObjectiveParams,
) -> Result<(CoefficientLayer, PolicyLayer)> {
    backward_step_with_drift(next, arrivals, moments, map, objective, 0.0)
}

/// [`backward_step`] with a known expected price change `drift` over the step.
pub fn backward_step_with_drift(
    next: &CoefficientLayer,
    arrivals: &ArrivalModel,
    moments: &DemandMoments,
    map: &ScenarioMap,
    objective: &ObjectiveParams,
    drift: f64,
) -> Result<(CoefficientLayer, PolicyLayer)> {
    check_inputs(map, arrivals, moments, objective)?;
    if next.step == 0 {
        return Err(Error::Model("cannot step back from step 0".into()));
    }
    let step = next.step - 1;
    let n = map.scenario_count();
    let mut layer = CoefficientLayer {
        step,
        alpha: vec![0.0; n],
        h: vec![0.0; n],
        g: vec![0.0; n],
    };
    let mut policy = PolicyLayer {
        step,
        coefs: Vec::with_capacity(n),
        inputs: Vec::with_capacity(n),
    };
    for iota in 0..n {
        let inp = step_inputs(&next.alpha, &next.h, &next.g, iota, arrivals, map, objective.phi, drift);
        let (pol, val) = solve_step(&inp, moments);
        check_integrity(step, iota, &inp, &pol, &val)?;
        layer.alpha[iota] = val.alpha;
        layer.h[iota] = val.h;
        layer.g[iota] = val.g;
        policy.coefs.push(pol);
        policy.inputs.push(inp);
    }
    Ok((layer, policy))
}

fn check_inputs(
    map: &ScenarioMap,
    arrivals: &ArrivalModel,
    moments: &DemandMoments,
    objective: &ObjectiveParams,
) -> Result<()> {
    arrivals.check_map(map)?;
    for (s, p) in arrivals.all().iter().enumerate() {
        p.validate(s)?;
    }
    moments.plus.validate("ask-side")?;
    moments.minus.validate("bid-side")?;
    if objective.lambda == 0.0 && objective.phi == 0.0 {
        return Err(Error::Model(
            "lambda = 0 and phi = 0 leave alpha at zero; at least one penalty must be positive".into(),
        ));
    }
    ObjectiveParams::new(objective.lambda, objective.phi)?;
    Ok(())
}

/// How online drift forecasts enter the quotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftMode {
    /// Midprice treated as a martingale; forecasts are ignored.
    Martingale,
    /// Only the next-interval forecast is used.
    OneStep,
    /// Forecasts up to `horizon` intervals ahead are used via a [`XiTable`].
    MultiStep { horizon: usize },
}

impl DriftMode {
    pub fn name(&self) -> &'static str {
        match self {
            DriftMode::Martingale => "martingale",
            DriftMode::OneStep => "one-step-drift",
            DriftMode::MultiStep { .. } => "multi-step-drift",
        }
    }
}

/// Complete model specification a catalog is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogSpec {
    pub schedule: TradingSchedule,
    pub map: ScenarioMap,
    pub arrivals: ArrivalModel,
    pub moments: DemandMoments,
    pub objective: ObjectiveParams,
    pub mode: DriftMode,
}

/// Per-step, per-scenario value and quote coefficients.
///
/// Layers are stored flat, indexed by `step * scenario_count + scenario`.
#[derive(Debug, Clone)]
pub struct Catalog {
    spec: CatalogSpec,
    /// `N + 2` value layers, `k = 0..=N+1`.
    values: Vec<ValueCoefs>,
    /// `N + 1` policy layers, `k = 0..=N`.
    policy: Vec<PolicyCoefs>,
    /// Known per-step drift folded into the coefficients, if any.
    known_drift: Option<Vec<f64>>,
    xi: Option<Arc<XiTable>>,
}

impl Catalog {
    pub fn spec(&self) -> &CatalogSpec {
        &self.spec
    }

    pub fn n_steps(&self) -> usize {
        self.spec.schedule.n_steps()
    }

    pub fn scenario_count(&self) -> usize {
        self.spec.map.scenario_count()
    }

    pub fn map(&self) -> &ScenarioMap {
        &self.spec.map
    }

    pub fn arrivals(&self) -> &ArrivalModel {
        &self.spec.arrivals
    }

    pub fn moments(&self) -> &DemandMoments {
        &self.spec.moments
    }

    pub fn objective(&self) -> &ObjectiveParams {
        &self.spec.objective
    }

    pub fn mode(&self) -> DriftMode {
        self.spec.mode
    }

    pub fn known_drift(&self) -> Option<&[f64]> {
        self.known_drift.as_deref()
    }

    pub fn xi_table(&self) -> Option<&XiTable> {
        self.xi.as_deref()
    }

    /// Value coefficients at `step ∈ 0..=N+1`.
    #[inline]
    pub fn value(&self, step: usize, iota: usize) -> ValueCoefs {
        self.values[step * self.scenario_count() + iota]
    }

    /// Quote coefficients at `step ∈ 0..=N`.
    #[inline]
    pub fn policy(&self, step: usize, iota: usize) -> &PolicyCoefs {
        &self.policy[step * self.scenario_count() + iota]
    }

    /// Value layer at `step` as a standalone table.
    pub fn layer(&self, step: usize) -> CoefficientLayer {
        let n = self.scenario_count();
        let slice = &self.values[step * n..(step + 1) * n];
        CoefficientLayer {
            step,
            alpha: slice.iter().map(|v| v.alpha).collect(),
            h: slice.iter().map(|v| v.h).collect(),
            g: slice.iter().map(|v| v.g).collect(),
        }
    }

    /// Step inputs at `(step, iota)` recomputed from layer `step + 1`.
    pub fn step_inputs(&self, step: usize, iota: usize) -> StepInputs {
        let n = self.scenario_count();
        let next = &self.values[(step + 1) * n..(step + 2) * n];
        let alpha: Vec<f64> = next.iter().map(|v| v.alpha).collect();
        let h: Vec<f64> = next.iter().map(|v| v.h).collect();
        let g: Vec<f64> = next.iter().map(|v| v.g).collect();
        let drift = self.known_drift.as_ref().map_or(0.0, |d| d[step]);
        step_inputs(&alpha, &h, &g, iota, &self.spec.arrivals, &self.spec.map, self.spec.objective.phi, drift)
    }

    /// Expected terminal objective from `(step, iota)` with wealth `wealth`,
    /// reference price `price` and inventory `inventory`.
    pub fn value_at(&self, step: usize, iota: usize, wealth: f64, price: f64, inventory: f64) -> f64 {
        let v = self.value(step, iota);
        wealth + price * inventory + v.alpha * inventory * inventory + v.h * inventory + v.g
    }

    pub(crate) fn from_parts(
        spec: CatalogSpec,
        values: Vec<ValueCoefs>,
        policy: Vec<PolicyCoefs>,
        known_drift: Option<Vec<f64>>,
        xi_cap: usize,
    ) -> Result<Self> {
        let mut cat = Catalog {
            spec,
            values,
            policy,
            known_drift,
            xi: None,
        };
        if let DriftMode::MultiStep { horizon } = cat.spec.mode {
            cat.xi = Some(Arc::new(XiTable::build(&cat, horizon, xi_cap)?));
        }
        Ok(cat)
    }
}

/// Build the full catalog by backward induction.
pub fn build_catalog(spec: CatalogSpec) -> Result<Catalog> {
    build_with_options(spec, None, DEFAULT_XI_ENTRY_CAP)
}

/// Build a catalog for a price process whose expected increment over step
/// `k` is `drift[k]`, known in advance. The drift is folded into the value
/// and quote coefficients, so quoting such a catalog needs no online forecast.
pub fn build_catalog_with_known_drift(spec: CatalogSpec, drift: Vec<f64>) -> Result<Catalog> {
    if drift.len() != spec.schedule.n_steps() + 1 {
        return Err(Error::Config(format!(
            "known drift needs {} entries (one per quote step), got {}",
            spec.schedule.n_steps() + 1,
            drift.len()
        )));
    }
    if drift.iter().any(|d| !d.is_finite()) {
        return Err(Error::Config("known drift values must be finite".into()));
    }
    build_with_options(spec, Some(drift), DEFAULT_XI_ENTRY_CAP)
}

/// [`build_catalog`] with an explicit cap on ξ-table entries.
pub fn build_catalog_with_xi_cap(spec: CatalogSpec, xi_cap: usize) -> Result<Catalog> {
    build_with_options(spec, None, xi_cap)
}

fn build_with_options(spec: CatalogSpec, known_drift: Option<Vec<f64>>, xi_cap: usize) -> Result<Catalog> {
    check_inputs(&spec.map, &spec.arrivals, &spec.moments, &spec.objective)?;
    let n_steps = spec.schedule.n_steps();
    let n = spec.map.scenario_count();
    let phi = spec.objective.phi;

    let mut values = vec![
        ValueCoefs {
            alpha: 0.0,
            h: 0.0,
            g: 0.0
        };
        (n_steps + 2) * n
    ];
    let mut policy = vec![
        PolicyCoefs {
            rho_p: 0.0,
            rho_m: 0.0,
            psi_p: 0.0,
            psi_m: 0.0,
            gamma: 0.0,
            a1p: 0.0,
            a1m: 0.0,
            a2p: 0.0,
            a2m: 0.0,
            a3p: 0.0,
            a3m: 0.0,
        };
        (n_steps + 1) * n
    ];
    for v in &mut values[(n_steps + 1) * n..] {
        v.alpha = -spec.objective.lambda;
    }

    let mut alpha = vec![-spec.objective.lambda; n];
    let mut h = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut next_alpha = vec![0.0; n];
    let mut next_h = vec![0.0; n];
    let mut next_g = vec![0.0; n];
    for step in (0..=n_steps).rev() {
        std::mem::swap(&mut alpha, &mut next_alpha);
        std::mem::swap(&mut h, &mut next_h);
        std::mem::swap(&mut g, &mut next_g);
        let drift = known_drift.as_ref().map_or(0.0, |d| d[step]);
        for iota in 0..n {
            let inp = step_inputs(&next_alpha, &next_h, &next_g, iota, &spec.arrivals, &spec.map, phi, drift);
            let (pol, val) = solve_step(&inp, &spec.moments);
            check_integrity(step, iota, &inp, &pol, &val)?;
            alpha[iota] = val.alpha;
            h[iota] = val.h;
            g[iota] = val.g;
            values[step * n + iota] = val;
            policy[step * n + iota] = pol;
        }
    }
    Catalog::from_parts(spec, values, policy, known_drift, xi_cap)
}
