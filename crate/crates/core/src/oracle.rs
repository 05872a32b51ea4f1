//! Brute-force checks for small instances.
//!
//! [`exhaustive_dp`] maximizes over a quote lattice by search, taking
//! expectations by enumerating indicator cells and demand atoms.
//! [`exact_policy_value`] sums the terminal objective over every outcome
//! path, price moves included. Neither uses the closed-form coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    ArrivalModel, ArrivalProbs, DemandMoments, ObjectiveParams, ScenarioMap, TradingSchedule,
};
use crate::recursion::{build_catalog, build_catalog_with_known_drift, Catalog, CatalogSpec, DriftMode};
use crate::simulate::{DemandAtom, DemandLaw};

pub const MAX_STEPS: usize = 3;
pub const MAX_SCENARIOS: usize = 4;

/// Quote lattice `lo + m·step`, `m = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuoteGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl QuoteGrid {
    fn points(&self) -> i64 {
        ((self.hi - self.lo) / self.step).round() as i64
    }

    fn at(&self, m: i64) -> f64 {
        self.lo + m as f64 * self.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallInstance {
    /// Last quote step; quotes at `0..=n_steps`.
    pub n_steps: usize,
    pub map: ScenarioMap,
    pub arrivals: ArrivalModel,
    pub plus: DemandLaw,
    pub minus: DemandLaw,
    pub objective: ObjectiveParams,
    /// Price change law per step as `(change, probability)`.
    pub price_moves: Vec<(f64, f64)>,
    /// Extra deterministic change per step, `n_steps + 1` entries.
    pub drift: Vec<f64>,
    pub grid: QuoteGrid,
}

impl SmallInstance {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps > MAX_STEPS {
            return Err(Error::Config(format!("oracle instances allow at most {MAX_STEPS} steps")));
        }
        if self.map.scenario_count() > MAX_SCENARIOS {
            return Err(Error::Config(format!("oracle instances allow at most {MAX_SCENARIOS} scenarios")));
        }
        self.arrivals.check_map(&self.map)?;
        if self.drift.len() != self.n_steps + 1 {
            return Err(Error::Config("oracle drift needs one entry per quote step".into()));
        }
        let total: f64 = self.price_moves.iter().map(|m| m.1).sum();
        if self.price_moves.is_empty() || (total - 1.0).abs() > 1e-12 || self.price_moves.iter().any(|m| m.1 < 0.0) {
            return Err(Error::Config("price move probabilities must be nonnegative and sum to 1".into()));
        }
        let g = self.grid;
        if !(g.step > 0.0 && g.hi > g.lo && g.points() >= 2) {
            return Err(Error::Config("quote grid needs lo < hi and a positive step".into()));
        }
        Ok(())
    }

    /// Expected price change over step `k`.
    pub fn expected_change(&self, step: usize) -> f64 {
        self.price_moves.iter().map(|(d, p)| d * p).sum::<f64>() + self.drift[step]
    }

    pub fn moments(&self) -> Result<DemandMoments> {
        DemandMoments::new(self.plus.moments(), self.minus.moments())
    }

    /// Closed-form catalog of the same model.
    pub fn catalog(&self) -> Result<Catalog> {
        let spec = CatalogSpec {
            schedule: TradingSchedule::new(self.n_steps, 1.0)?,
            map: self.map.clone(),
            arrivals: self.arrivals.clone(),
            moments: self.moments()?,
            objective: self.objective,
            mode: DriftMode::Martingale,
        };
        let drift: Vec<f64> = (0..=self.n_steps).map(|k| self.expected_change(k)).collect();
        if drift.iter().all(|&d| d == 0.0) {
            build_catalog(spec)
        } else {
            build_catalog_with_known_drift(spec, drift)
        }
    }

    /// Random valid instance on unit scale, with a lattice of spacing `h`
    /// sized around the closed-form quotes.
    pub fn random(seed: u64, h: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = match rng.gen_range(0..4) {
            0 => ScenarioMap::constant(1)?,
            1 => ScenarioMap::sums_of_lag(1)?,
            2 => ScenarioMap::identity_of_lag(1)?,
            _ => ScenarioMap::constant(2)?,
        };
        let probs = (0..map.scenario_count())
            .map(|_| {
                let pi_plus: f64 = rng.gen_range(0.1..0.9);
                let pi_minus: f64 = rng.gen_range(0.1..0.9);
                let lo = (pi_plus + pi_minus - 1.0).max(0.0);
                let hi = pi_plus.min(pi_minus);
                let pi_11 = if rng.gen_bool(0.25) { lo } else { rng.gen_range(lo..=hi) };
                ArrivalProbs::new(pi_plus, pi_minus, pi_11)
            })
            .collect();
        let mut law = || -> Result<DemandLaw> {
            let n = rng.gen_range(1..=DemandLaw::MAX_ATOMS);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            DemandLaw::new(
                raw.iter()
                    .map(|w| DemandAtom {
                        c: rng.gen_range(0.2..1.2),
                        p: rng.gen_range(0.5..3.0),
                        weight: w / total,
                    })
                    .collect(),
            )
        };
        let plus = law()?;
        let minus = law()?;
        let n_steps = rng.gen_range(0..=MAX_STEPS);
        let phi = if rng.gen_bool(0.3) { rng.gen_range(0.01..0.1) } else { 0.0 };
        let objective = ObjectiveParams::new(rng.gen_range(0.05..1.0), phi)?;
        let jump: f64 = rng.gen_range(0.0..0.5);
        let drift = if rng.gen_bool(0.3) {
            (0..=n_steps).map(|_| rng.gen_range(-0.2..0.2)).collect()
        } else {
            vec![0.0; n_steps + 1]
        };
        let mut inst = SmallInstance {
            n_steps,
            map,
            arrivals: ArrivalModel::new(probs)?,
            plus,
            minus,
            objective,
            price_moves: vec![(-jump, 0.5), (jump, 0.5)],
            drift,
            grid: QuoteGrid { lo: 0.0, hi: 1.0, step: h },
        };
        inst.grid = inst.fitted_grid(h)?;
        Ok(inst)
    }

    /// Lattice covering the closed-form quotes at the sample inventories
    /// with one unit of margin, aligned to the coarsest search step.
    pub fn fitted_grid(&self, h: f64) -> Result<QuoteGrid> {
        let cat = self.catalog()?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=self.n_steps {
            for s in 0..cat.scenario_count() {
                for &inv in SAMPLE_INVENTORIES.iter() {
                    let (a, b) = cat.policy(k, s).spreads(inv);
                    lo = lo.min(a.min(b));
                    hi = hi.max(a.max(b));
                }
            }
        }
        let unit = h * COARSE as f64;
        Ok(QuoteGrid {
            lo: ((lo - 1.0) / unit).floor() * unit,
            hi: ((hi + 1.0) / unit).ceil() * unit,
            step: h,
        })
    }
}

/// Inventories at which each value function is sampled and fitted.
pub const SAMPLE_INVENTORIES: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

/// Coarsest search spacing in lattice units, then successive refinements.
const COARSE: i64 = 250;
const REFINE: [i64; 3] = [50, 10, 1];

/// `A·I² + B·I + C`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadratic {
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    /// Least-squares fit through the sample inventories.
    fn fit(values: &[f64; 5]) -> (Self, f64) {
        let xs = SAMPLE_INVENTORIES;
        // Symmetric design: closed-form normal equations.
        let n = 5.0;
        let sx2: f64 = xs.iter().map(|x| x * x).sum();
        let sx4: f64 = xs.iter().map(|x| x.powi(4)).sum();
        let sy: f64 = values.iter().sum();
        let sxy: f64 = xs.iter().zip(values).map(|(x, y)| x * y).sum();
        let sx2y: f64 = xs.iter().zip(values).map(|(x, y)| x * x * y).sum();
        let b = sxy / sx2;
        let a = (n * sx2y - sx2 * sy) / (n * sx4 - sx2 * sx2);
        let c = (sy - a * sx2) / n;
        let q = Quadratic { a, b, c };
        let resid = xs.iter().zip(values).map(|(&x, y)| (q.eval(x) - y).abs()).fold(0.0, f64::max);
        (q, resid)
    }
}

/// Expectations by enumeration for one `(step, scenario)`.
struct StepProblem<'a> {
    inst: &'a SmallInstance,
    scenario: usize,
    /// Continuation per next scenario, including drift and running penalty.
    next: Vec<Quadratic>,
}

impl StepProblem<'_> {
    fn new<'a>(inst: &'a SmallInstance, step: usize, scenario: usize, u_next: &[Quadratic]) -> StepProblem<'a> {
        let delta = inst.expected_change(step);
        let phi = inst.objective.phi;
        StepProblem {
            inst,
            scenario,
            next: u_next
                .iter()
                .map(|q| Quadratic {
                    a: q.a - phi,
                    b: q.b + delta,
                    c: q.c,
                })
                .collect(),
        }
    }

    /// Expected gain from quoting `(lp, lm)` at inventory `inv`.
    fn objective(&self, lp: f64, lm: f64, inv: f64) -> f64 {
        let cells = self.inst.arrivals.probs(self.scenario).cells();
        let map = &self.inst.map;
        let mut total = 0.0;
        for code in 0..4 {
            let prob = cells.by_code(code);
            if prob == 0.0 {
                continue;
            }
            let cont = &self.next[map.next(self.scenario, code)];
            let buys: &[DemandAtom] = if code & 2 != 0 { self.inst.plus.atoms() } else { &[NO_ARRIVAL] };
            let sells: &[DemandAtom] = if code & 1 != 0 { self.inst.minus.atoms() } else { &[NO_ARRIVAL] };
            let mut cell = 0.0;
            for bp in buys {
                let qp = bp.c * (bp.p - lp);
                for sm in sells {
                    let qm = sm.c * (sm.p - lm);
                    let next_inv = inv - qp + qm;
                    cell += bp.weight * sm.weight * (lp * qp + lm * qm + cont.eval(next_inv));
                }
            }
            total += prob * cell;
        }
        total
    }

    /// Lattice maximizer by coarse-to-fine search.
    fn maximize(&self, inv: f64, step: usize) -> Result<(f64, f64, f64)> {
        let grid = self.inst.grid;
        let top = grid.points();
        let eval = |mp: i64, mm: i64| self.objective(grid.at(mp), grid.at(mm), inv);
        let mut best = (0i64, 0i64, f64::NEG_INFINITY);
        let scan = |lo_p: i64, hi_p: i64, lo_m: i64, hi_m: i64, stride: i64, best: &mut (i64, i64, f64)| {
            let mut mp = lo_p;
            while mp <= hi_p {
                let mut mm = lo_m;
                while mm <= hi_m {
                    let v = eval(mp, mm);
                    if v > best.2 {
                        *best = (mp, mm, v);
                    }
                    mm += stride;
                }
                mp += stride;
            }
        };
        scan(0, top, 0, top, COARSE, &mut best);
        let on_edge = |m: i64, stride: i64| m < stride || m > top - stride;
        if on_edge(best.0, COARSE) || on_edge(best.1, COARSE) {
            return Err(self.widen_error(step, inv));
        }
        let mut stride = COARSE;
        for &next in REFINE.iter() {
            let (cp, cm) = (best.0, best.1);
            let r = 2 * stride;
            scan(
                (cp - r).max(0),
                (cp + r).min(top),
                (cm - r).max(0),
                (cm + r).min(top),
                next,
                &mut best,
            );
            stride = next;
        }
        if best.0 == 0 || best.0 == top || best.1 == 0 || best.1 == top {
            return Err(self.widen_error(step, inv));
        }
        Ok((grid.at(best.0), grid.at(best.1), best.2))
    }

    fn widen_error(&self, step: usize, inv: f64) -> Error {
        Error::Grid(format!(
            "argmax at step {step}, scenario {}, inventory {inv} lies on the lattice boundary [{}, {}]; widen the grid",
            self.scenario, self.inst.grid.lo, self.inst.grid.hi
        ))
    }
}

const NO_ARRIVAL: DemandAtom = DemandAtom {
    c: 0.0,
    p: 0.0,
    weight: 1.0,
};

/// Lattice-optimal value functions.
#[derive(Debug, Clone, PartialEq)]
pub struct DpResult {
    /// Fitted `u_k(·, ι)` so that `V = W + S·I + u`, for `k = 0..=N+1`.
    pub value: Vec<Vec<Quadratic>>,
    /// Argmax `(L⁺, L⁻)` per `[step][scenario][sample inventory]`.
    pub argmax: Vec<Vec<[(f64, f64); 5]>>,
    /// Largest deviation of sampled values from their quadratic fit.
    pub fit_residual: f64,
    /// Lattice optimum from the start state.
    pub initial_value: f64,
    pub initial_argmax: (f64, f64),
}

/// Backward induction over the quote lattice, started at
/// `(scenario, wealth, price, inventory)` at step 0.
pub fn exhaustive_dp(inst: &SmallInstance, scenario: usize, wealth: f64, price: f64, inventory: f64) -> Result<DpResult> {
    inst.validate()?;
    let n_scen = inst.map.scenario_count();
    if scenario >= n_scen {
        return Err(Error::Config(format!("start scenario {scenario} out of range")));
    }
    let n = inst.n_steps;
    let mut value = vec![Vec::new(); n + 2];
    let mut argmax = vec![Vec::new(); n + 1];
    value[n + 1] = vec![
        Quadratic {
            a: -inst.objective.lambda,
            b: 0.0,
            c: 0.0,
        };
        n_scen
    ];
    let mut fit_residual = 0.0f64;
    for k in (0..=n).rev() {
        let mut layer = Vec::with_capacity(n_scen);
        let mut arg_layer = Vec::with_capacity(n_scen);
        for s in 0..n_scen {
            let prob = StepProblem::new(inst, k, s, &value[k + 1]);
            let mut samples = [0.0; 5];
            let mut args = [(0.0, 0.0); 5];
            for (j, &inv) in SAMPLE_INVENTORIES.iter().enumerate() {
                let (lp, lm, v) = prob.maximize(inv, k)?;
                samples[j] = v;
                args[j] = (lp, lm);
            }
            let (q, resid) = Quadratic::fit(&samples);
            fit_residual = fit_residual.max(resid);
            layer.push(q);
            arg_layer.push(args);
        }
        value[k] = layer;
        argmax[k] = arg_layer;
    }
    let start = StepProblem::new(inst, 0, scenario, &value[1]);
    let (lp, lm, u0) = start.maximize(inventory, 0)?;
    Ok(DpResult {
        value,
        argmax,
        fit_residual,
        initial_value: wealth + price * inventory + u0,
        initial_argmax: (lp, lm),
    })
}

/// Exact expected `W + S·I − λI² − φΣI²` at the horizon when quoting
/// `policy(step, scenario, inventory) -> (L⁺, L⁻)` around the current price.
pub fn exact_policy_value<F>(
    inst: &SmallInstance,
    policy: F,
    scenario: usize,
    wealth: f64,
    price: f64,
    inventory: f64,
) -> Result<f64>
where
    F: Fn(usize, usize, f64) -> (f64, f64),
{
    inst.validate()?;
    if scenario >= inst.map.scenario_count() {
        return Err(Error::Config(format!("start scenario {scenario} out of range")));
    }
    struct Walk<'a, F> {
        inst: &'a SmallInstance,
        policy: F,
    }
    impl<F: Fn(usize, usize, f64) -> (f64, f64)> Walk<'_, F> {
        fn go(&self, step: usize, scenario: usize, wealth: f64, price: f64, inv: f64, penalty: f64) -> f64 {
            let inst = self.inst;
            if step > inst.n_steps {
                return wealth + price * inv - inst.objective.lambda * inv * inv - penalty;
            }
            let (lp, lm) = (self.policy)(step, scenario, inv);
            let (ask, bid) = (price + lp, price - lm);
            let cells = inst.arrivals.probs(scenario).cells();
            let mut total = 0.0;
            for code in 0..4 {
                let prob = cells.by_code(code);
                if prob == 0.0 {
                    continue;
                }
                let next_scen = inst.map.next(scenario, code);
                let buys: &[DemandAtom] = if code & 2 != 0 { inst.plus.atoms() } else { &[NO_ARRIVAL] };
                let sells: &[DemandAtom] = if code & 1 != 0 { inst.minus.atoms() } else { &[NO_ARRIVAL] };
                for bp in buys {
                    let qp = bp.c * (bp.p - lp);
                    for sm in sells {
                        let qm = sm.c * (sm.p - lm);
                        let w = wealth + ask * qp - bid * qm;
                        let i = inv - qp + qm;
                        let pen = penalty + inst.objective.phi * i * i;
                        let weight = prob * bp.weight * sm.weight;
                        for &(dp, pp) in &inst.price_moves {
                            if pp == 0.0 {
                                continue;
                            }
                            let s = price + dp + inst.drift[step];
                            total += weight * pp * self.go(step + 1, next_scen, w, s, i, pen);
                        }
                    }
                }
            }
            total
        }
    }
    let walk = Walk { inst, policy };
    Ok(walk.go(0, scenario, wealth, price, inventory, 0.0))
}

/// Outcome of one certified instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceCheck {
    pub seed: u64,
    pub n_steps: usize,
    pub scenarios: usize,
    /// `|closed form − lattice DP|` at the start state.
    pub value_gap: f64,
    /// Largest distance between lattice and closed-form argmax at the start.
    pub argmax_gap: f64,
    /// `|exact value of the catalog policy − closed form|`.
    pub policy_gap: f64,
    /// Largest `grid policy value − catalog policy value` over the tried
    /// lattice policies (≤ 0 when the catalog dominates).
    pub dominance_excess: f64,
}

/// Certify one random instance against its closed-form catalog.
pub fn check_instance(seed: u64, h: f64, grid_policies: usize) -> Result<InstanceCheck> {
    let inst = SmallInstance::random(seed, h)?;
    let cat = inst.catalog()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let scenario = rng.gen_range(0..inst.map.scenario_count());
    let inventory = rng.gen_range(-1.5..1.5);
    let (wealth, price) = (0.0, 10.0);
    let dp = exhaustive_dp(&inst, scenario, wealth, price, inventory)?;
    let closed = cat.value_at(0, scenario, wealth, price, inventory);
    let (cp, cm) = cat.policy(0, scenario).spreads(inventory);
    let catalog_policy = |k: usize, s: usize, i: f64| cat.policy(k, s).spreads(i);
    let policy_value = exact_policy_value(&inst, catalog_policy, scenario, wealth, price, inventory)?;
    let mut dominance_excess = f64::NEG_INFINITY;
    for _ in 0..grid_policies {
        // Catalog quotes snapped to the lattice and jittered a few points.
        let jitter: Vec<(i64, i64)> = (0..(inst.n_steps + 1) * inst.map.scenario_count())
            .map(|_| (rng.gen_range(-20..=20), rng.gen_range(-20..=20)))
            .collect();
        let n_scen = inst.map.scenario_count();
        let grid = inst.grid;
        let snap = |x: f64, j: i64| grid.lo + (((x - grid.lo) / grid.step).round() as i64 + j) as f64 * grid.step;
        let grid_policy = |k: usize, s: usize, i: f64| {
            let (a, b) = cat.policy(k, s).spreads(i);
            let (ja, jb) = jitter[k * n_scen + s];
            (snap(a, ja), snap(b, jb))
        };
        let v = exact_policy_value(&inst, grid_policy, scenario, wealth, price, inventory)?;
        dominance_excess = dominance_excess.max(v - policy_value);
    }
    Ok(InstanceCheck {
        seed,
        n_steps: inst.n_steps,
        scenarios: inst.map.scenario_count(),
        value_gap: (closed - dp.initial_value).abs(),
        argmax_gap: (cp - dp.initial_argmax.0).abs().max((cm - dp.initial_argmax.1).abs()),
        policy_gap: (policy_value - closed).abs(),
        dominance_excess,
    })
}
