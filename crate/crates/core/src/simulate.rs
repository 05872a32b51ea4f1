//! Synthetic markets consistent with the model.
//!
//! Indicators follow the scenario chain, `(c, p)` are drawn from finite-support
//! laws on arrival, and the midprice moves by independent increments. Path
//! `i` of a run with seed `s` draws from `ChaCha8Rng::seed_from_u64(s)` with
//! its stream set to `i`, so paths are reproducible in isolation and in any
//! order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{IntervalRecord, LevelObs};
use crate::error::{Error, Result};
use crate::model::{ArrivalModel, ArrivalProbs, DemandMoments, MoHistory, MoPair, ScenarioMap, SideMoments, TradingSchedule};

/// One support point of a demand law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandAtom {
    pub c: f64,
    pub p: f64,
    pub weight: f64,
}

/// Finite-support joint law of `(c, p)` with at most [`DemandLaw::MAX_ATOMS`]
/// atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandLaw {
    atoms: Vec<DemandAtom>,
}

impl DemandLaw {
    pub const MAX_ATOMS: usize = 4;

    pub fn new(atoms: Vec<DemandAtom>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() > Self::MAX_ATOMS {
            return Err(Error::Config(format!(
                "a demand law needs 1..={} atoms, got {}",
                Self::MAX_ATOMS,
                atoms.len()
            )));
        }
        for a in &atoms {
            if !(a.c > 0.0 && a.p > 0.0 && a.weight > 0.0 && a.c.is_finite() && a.p.is_finite()) {
                return Err(Error::Config(format!(
                    "demand atoms need c > 0, p > 0 and positive weight, got {a:?}"
                )));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("demand atom weights sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    pub fn point(c: f64, p: f64) -> Result<Self> {
        Self::new(vec![DemandAtom { c, p, weight: 1.0 }])
    }

    pub fn atoms(&self) -> &[DemandAtom] {
        &self.atoms
    }

    /// Exact moments of the law.
    pub fn moments(&self) -> SideMoments {
        let mut m = [0.0; 6];
        for a in &self.atoms {
            let (c, p, w) = (a.c, a.p, a.weight);
            m[0] += w * c;
            m[1] += w * p;
            m[2] += w * c * c;
            m[3] += w * c * p;
            m[4] += w * c * c * p;
            m[5] += w * c * c * p * p;
        }
        SideMoments {
            mu_c: m[0],
            mu_p: m[1],
            mu_c2: m[2],
            mu_cp: m[3],
            mu_c2p: m[4],
            mu_c2p2: m[5],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.weight;
            if u < acc {
                return (a.c, a.p);
            }
        }
        let last = self.atoms[self.atoms.len() - 1];
        (last.c, last.p)
    }
}

/// A fitted law with its moment residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandFit {
    pub law: DemandLaw,
    pub target: SideMoments,
    pub achieved: SideMoments,
    /// `(achieved − target) / |target|` per moment, in
    /// [`SideMoments::as_array`] order.
    pub relative_residuals: [f64; 6],
}

impl DemandFit {
    pub fn max_residual(&self) -> f64 {
        self.relative_residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

/// Two-point `c` and conditional `p` fitted to the two-point `c` law.
struct TwoPoint {
    c: [f64; 2],
    w: [f64; 2],
    p: [f64; 2],
}

impl TwoPoint {
    /// Low atom at `κ·μ_c`, high atom placed to match the variance, then `p`
    /// per atom solved from `μ_p` and `μ_cp`.
    fn at(kappa: f64, t: &SideMoments) -> Self {
        let m = t.mu_c;
        let var = t.mu_c2 - m * m;
        let lo = kappa * m;
        let hi = m + var / (m - lo);
        let w_hi = (m - lo) / (hi - lo);
        let w = [1.0 - w_hi, w_hi];
        let p = [
            (t.mu_p * hi - t.mu_cp) / (w[0] * (hi - lo)),
            (t.mu_cp - t.mu_p * lo) / (w[1] * (hi - lo)),
        ];
        Self { c: [lo, hi], w, p }
    }

    fn feasible(&self) -> bool {
        self.p.iter().all(|&p| p > 0.0 && p.is_finite()) && self.w.iter().all(|&w| w > 0.0)
    }

    fn mu_c2p(&self) -> f64 {
        (0..2).map(|j| self.w[j] * self.c[j] * self.c[j] * self.p[j]).sum()
    }

    fn mu_c2p2(&self) -> f64 {
        (0..2)
            .map(|j| self.w[j] * self.c[j] * self.c[j] * self.p[j] * self.p[j])
            .sum()
    }
}

fn rel(achieved: f64, target: f64) -> f64 {
    if target == 0.0 {
        achieved
    } else {
        (achieved - target) / target.abs()
    }
}

/// Moment-matched law with at most four atoms.
///
/// `μ_c`, `μ_c²`, `μ_p` and `μ_cp` are matched exactly. `μ_c²p` is matched
/// by choosing where the low `c` atom sits, and `μ_c²p²` by splitting each
/// atom's `p` symmetrically; both are best effort and reported.
pub fn fit_demand_law(target: &SideMoments) -> Result<DemandFit> {
    target.validate("target")?;
    let t = target;
    let m = t.mu_c;
    let var = (t.mu_c2 - m * m).max(0.0);
    let atoms = if var <= 1e-14 * m * m {
        let cov = t.mu_cp - m * t.mu_p;
        if cov.abs() > 1e-12 * t.mu_cp.abs() {
            return Err(Error::Model(format!(
                "infeasible demand targets: mu_c2 = mu_c^2 forces mu_cp = mu_c*mu_p, off by {cov}"
            )));
        }
        let var_p = (t.mu_c2p2 / (m * m) - t.mu_p * t.mu_p).max(0.0);
        let spread = var_p.sqrt().min(0.999 * t.mu_p);
        if spread == 0.0 {
            vec![DemandAtom {
                c: m,
                p: t.mu_p,
                weight: 1.0,
            }]
        } else {
            [-spread, spread]
                .iter()
                .map(|d| DemandAtom {
                    c: m,
                    p: t.mu_p + d,
                    weight: 0.5,
                })
                .collect()
        }
    } else {
        let two = best_two_point(t)?;
        let extra = t.mu_c2p2 - two.mu_c2p2();
        let limit = 0.999 * two.p[0].min(two.p[1]);
        let split = if extra > 0.0 { (extra / t.mu_c2).sqrt().min(limit) } else { 0.0 };
        let mut atoms = Vec::with_capacity(4);
        for j in 0..2 {
            if split > 0.0 {
                for d in [-split, split] {
                    atoms.push(DemandAtom {
                        c: two.c[j],
                        p: two.p[j] + d,
                        weight: 0.5 * two.w[j],
                    });
                }
            } else {
                atoms.push(DemandAtom {
                    c: two.c[j],
                    p: two.p[j],
                    weight: two.w[j],
                });
            }
        }
        atoms
    };
    let law = DemandLaw::new(atoms)?;
    let achieved = law.moments();
    let (a, b) = (achieved.as_array(), target.as_array());
    let relative_residuals = std::array::from_fn(|j| rel(a[j], b[j]));
    Ok(DemandFit {
        law,
        target: *target,
        achieved,
        relative_residuals,
    })
}

fn best_two_point(t: &SideMoments) -> Result<TwoPoint> {
    let m = t.mu_c;
    let sd = (t.mu_c2 - m * m).sqrt();
    // Equal masses when possible; keep them if they already match μ_c²p.
    if sd < m {
        let equal = TwoPoint::at(1.0 - sd / m, t);
        if equal.feasible() && rel(equal.mu_c2p(), t.mu_c2p).abs() <= 1e-12 {
            return Ok(equal);
        }
    }
    let score = |kappa: f64| {
        let tp = TwoPoint::at(kappa, t);
        if tp.feasible() {
            rel(tp.mu_c2p(), t.mu_c2p).abs()
        } else {
            f64::INFINITY
        }
    };
    const GRID: usize = 2000;
    let (mut best_k, mut best) = (f64::NAN, f64::INFINITY);
    for j in 1..GRID {
        let kappa = j as f64 / GRID as f64;
        let s = score(kappa);
        if s < best {
            best = s;
            best_k = kappa;
        }
    }
    if !best.is_finite() {
        return Err(Error::Model(format!(
            "infeasible demand targets: no two-point c law keeps p > 0 (mu_cp = {} against mu_c*mu_p = {})",
            t.mu_cp,
            m * t.mu_p
        )));
    }
    // Golden-section refinement inside the neighbouring grid cells.
    let (mut lo, mut hi) = ((best_k - 1.0 / GRID as f64).max(1e-9), (best_k + 1.0 / GRID as f64).min(1.0 - 1e-9));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if score(x1) <= score(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let mid = 0.5 * (lo + hi);
    let kappa = if score(mid) <= best { mid } else { best_k };
    Ok(TwoPoint::at(kappa, t))
}

/// Arrival model where recent activity raises the chance of further orders.
///
/// Each history gets a recency-weighted activity per side in `[0, 1]`
/// (weights halve with every lag); a scenario takes the average over the
/// histories it summarizes. Then `π± = base + span·activity±` and
/// `π(1,1) = π⁺π⁻`.
pub fn activity_arrivals(map: &ScenarioMap, base: f64, span: f64) -> Result<ArrivalModel> {
    if !(base > 0.0 && span >= 0.0 && base + span <= 1.0) {
        return Err(Error::Config(format!(
            "activity arrivals need base > 0, span >= 0 and base + span <= 1, got {base} and {span}"
        )));
    }
    let lag = map.lag();
    let weights: Vec<f64> = (0..lag).map(|j| 0.5f64.powi(j as i32)).collect();
    let total: f64 = weights.iter().sum();
    let n = map.scenario_count();
    let mut acc = vec![(0.0, 0.0, 0usize); n];
    for code in 0..1usize << (2 * lag) {
        let history = MoHistory::from_code(code, lag);
        let s = map.encode_history(&history)?.index();
        let (mut buy, mut sell) = (0.0, 0.0);
        for (w, pair) in weights.iter().zip(history.pairs()) {
            buy += w * pair.buy as u8 as f64;
            sell += w * pair.sell as u8 as f64;
        }
        acc[s].0 += buy / total;
        acc[s].1 += sell / total;
        acc[s].2 += 1;
    }
    ArrivalModel::new(
        acc.into_iter()
            .map(|(buy, sell, count)| {
                let pi_plus = base + span * buy / count as f64;
                let pi_minus = base + span * sell / count as f64;
                ArrivalProbs::new(pi_plus, pi_minus, pi_plus * pi_minus)
            })
            .collect(),
    )
}

/// Midprice dynamics: a zero-mean jump of one tick up or down, each with
/// probability `move_prob / 2`, plus a deterministic drift per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSpec {
    pub initial: f64,
    pub tick: f64,
    pub move_prob: f64,
    /// Expected change over interval `k`; missing entries are zero.
    #[serde(default)]
    pub drift: Vec<f64>,
}

impl PriceSpec {
    pub fn drift_at(&self, step: usize) -> f64 {
        self.drift.get(step).copied().unwrap_or(0.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::Config("initial price must be positive".into()));
        }
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return Err(Error::Config("tick must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.move_prob) {
            return Err(Error::Config("price move probability must be in [0, 1]".into()));
        }
        if self.drift.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("price drift must be finite".into()));
        }
        Ok(())
    }
}

/// Geometric depth profile: level `j ≥ 1` holds `first_depth · ratio^(j−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BookSpec {
    pub levels: usize,
    pub first_depth: f64,
    pub ratio: f64,
}

impl Default for BookSpec {
    fn default() -> Self {
        Self {
            levels: 20,
            first_depth: 2000.0,
            ratio: 1.2,
        }
    }
}

impl BookSpec {
    pub fn snapshot(&self, mid: f64, tick: f64) -> BookSnapshot {
        let depth = |j: usize| self.first_depth * self.ratio.powi(j as i32);
        BookSnapshot {
            mid,
            bids: (0..self.levels).map(|j| (mid - (j + 1) as f64 * tick, depth(j))).collect(),
            asks: (0..self.levels).map(|j| (mid + (j + 1) as f64 * tick, depth(j))).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.first_depth >= 0.0 && self.ratio > 0.0 && self.first_depth.is_finite() && self.ratio.is_finite()) {
            return Err(Error::Config("book depth and ratio must be finite and positive".into()));
        }
        Ok(())
    }
}

/// Resting liquidity, best level first, as `(price, shares)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookSnapshot {
    pub mid: f64,
    pub bids: Vec<(f64, f64)>,
    pub asks: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Liquidation {
    /// Volume-weighted execution price; the mid when nothing is traded.
    pub average_price: f64,
    /// Signed cash proceeds `S̄·I`.
    pub proceeds: f64,
    /// True when the book ran out and the rest was priced at the last level.
    pub exhausted: bool,
}

/// Unwind `inventory` with a market order: sell into bids when long, buy from
/// asks when short.
pub fn walk_book_liquidation(inventory: f64, book: &BookSnapshot) -> Result<Liquidation> {
    if inventory == 0.0 {
        return Ok(Liquidation {
            average_price: book.mid,
            proceeds: 0.0,
            exhausted: false,
        });
    }
    let levels = if inventory > 0.0 { &book.bids } else { &book.asks };
    if levels.iter().all(|&(_, d)| d <= 0.0) {
        return Err(Error::Data("cannot liquidate into an empty book".into()));
    }
    let mut remaining = inventory.abs();
    let mut cash = 0.0;
    let mut last_price = levels[0].0;
    for &(price, depth) in levels {
        if depth <= 0.0 {
            continue;
        }
        let take = remaining.min(depth);
        cash += take * price;
        remaining -= take;
        last_price = price;
        if remaining <= 0.0 {
            break;
        }
    }
    let exhausted = remaining > 0.0;
    cash += remaining * last_price;
    let average_price = cash / inventory.abs();
    Ok(Liquidation {
        average_price,
        proceeds: average_price * inventory,
        exhausted,
    })
}

/// Everything needed to generate paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Quotes are placed at steps `0..=N`, so a path has `N + 1` intervals.
    pub schedule: TradingSchedule,
    pub map: ScenarioMap,
    pub arrivals: ArrivalModel,
    pub demand_plus: DemandLaw,
    pub demand_minus: DemandLaw,
    pub price: PriceSpec,
    pub book: BookSpec,
    pub initial_history: MoHistory,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.arrivals.check_map(&self.map)?;
        self.map.encode_history(&self.initial_history)?;
        self.price.validate()?;
        self.book.validate()
    }

    pub fn intervals(&self) -> usize {
        self.schedule.n_steps() + 1
    }

    /// Moments induced by the two demand laws.
    pub fn moments(&self) -> DemandMoments {
        DemandMoments {
            plus: self.demand_plus.moments(),
            minus: self.demand_minus.moments(),
        }
    }

    pub fn initial_scenario(&self) -> usize {
        self.map
            .encode_history(&self.initial_history)
            .expect("validated history")
            .index()
    }
}

/// One simulated interval `[t_k, t_{k+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStep {
    pub scenario: usize,
    pub pair: MoPair,
    /// Midprice at the start of the interval.
    pub mid: f64,
    /// `(c⁺, p⁺)` when a buy market order arrived.
    pub plus: Option<(f64, f64)>,
    /// `(c⁻, p⁻)` when a sell market order arrived.
    pub minus: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub index: u64,
    pub initial_history: MoHistory,
    pub steps: Vec<SimStep>,
    pub terminal_mid: f64,
    pub book: BookSnapshot,
}

impl SimPath {
    /// Interval records with a level at every offset `1..=max_offset` whose
    /// linear demand is positive. `tick` converts offsets to spreads.
    pub fn to_interval_records(&self, max_offset: u32, tick: f64) -> Vec<IntervalRecord> {
        let levels = |draw: Option<(f64, f64)>| -> Vec<LevelObs> {
            let Some((c, p)) = draw else { return Vec::new() };
            (1..=max_offset)
                .map(|offset| LevelObs {
                    offset,
                    volume: c * (p - offset as f64 * tick),
                })
                .filter(|l| l.volume > 0.0)
                .collect()
        };
        self.steps
            .iter()
            .enumerate()
            .map(|(index, s)| IntervalRecord {
                index,
                buy_mo: s.pair.buy,
                sell_mo: s.pair.sell,
                mid_price: s.mid,
                ask_levels: levels(s.plus),
                bid_levels: levels(s.minus),
            })
            .collect()
    }
}

/// The per-path generator.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn simulate_path(cfg: &SimConfig, index: u64) -> SimPath {
    let mut rng = path_rng(cfg.seed, index);
    let mut scenario = cfg.initial_scenario();
    let mut mid = cfg.price.initial;
    let tick = cfg.price.tick;
    let n = cfg.intervals();
    let mut steps = Vec::with_capacity(n);
    for k in 0..n {
        let cells = cfg.arrivals.probs(scenario).cells();
        let u: f64 = rng.gen();
        // Cells in code order 0..4: none, sell only, buy only, both.
        let mut acc = 0.0;
        let mut code = 3;
        for c in 0..4 {
            acc += cells.by_code(c);
            if u < acc {
                code = c;
                break;
            }
        }
        let pair = MoPair::from_code(code);
        let plus = pair.buy.then(|| cfg.demand_plus.sample(&mut rng));
        let minus = pair.sell.then(|| cfg.demand_minus.sample(&mut rng));
        steps.push(SimStep {
            scenario,
            pair,
            mid,
            plus,
            minus,
        });
        let v: f64 = rng.gen();
        let half = 0.5 * cfg.price.move_prob;
        let jump = if v < half {
            -tick
        } else if v < 2.0 * half {
            tick
        } else {
            0.0
        };
        // Floor at one tick; unreachable for realistic horizons.
        mid = (mid + jump + cfg.price.drift_at(k)).max(tick);
        scenario = cfg.map.next(scenario, code);
    }
    SimPath {
        index,
        initial_history: cfg.initial_history.clone(),
        steps,
        terminal_mid: mid,
        book: cfg.book.snapshot(mid, tick),
    }
}

/// Paths `0..n_paths`, generated in parallel.
pub fn simulate_paths(cfg: &SimConfig, n_paths: u64) -> Result<Vec<SimPath>> {
    cfg.validate()?;
    Ok((0..n_paths).into_par_iter().map(|i| simulate_path(cfg, i)).collect())
}

/// Scenario transition matrix, row-stochastic, `P[from][to]`.
pub fn transition_matrix(map: &ScenarioMap, arrivals: &ArrivalModel) -> Result<Vec<Vec<f64>>> {
    arrivals.check_map(map)?;
    let n = map.scenario_count();
    let mut p = vec![vec![0.0; n]; n];
    for (from, row) in p.iter_mut().enumerate() {
        let cells = arrivals.probs(from).cells();
        for code in 0..4 {
            row[map.next(from, code)] += cells.by_code(code);
        }
    }
    Ok(p)
}

/// Stationary distribution of the scenario chain. Errors when it is not
/// unique.
pub fn stationary_distribution(map: &ScenarioMap, arrivals: &ArrivalModel) -> Result<Vec<f64>> {
    let p = transition_matrix(map, arrivals)?;
    let n = p.len();
    // Solve (Pᵀ − I)x = 0 with the last equation replaced by Σx = 1.
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a[n - 1] = vec![1.0; n + 1];
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty");
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Model("scenario chain has no unique stationary distribution".into()));
        }
        a.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    let pivot_row = a[col].clone();
                    for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                        *x -= f * p;
                    }
                }
            }
        }
    }
    Ok((0..n).map(|i| (a[i][n] / a[i][i]).max(0.0)).collect())
}
