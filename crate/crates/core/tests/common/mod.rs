//! Shared fixtures: random model generators and an independent one-step
//! objective derived directly from the wealth and inventory dynamics.
#![allow(dead_code)]

use adaptive_mm::model::{
    ArrivalModel, ArrivalProbs, DemandMoments, MoPair, ObjectiveParams, ScenarioId, ScenarioMap,
    SideMoments, TradingSchedule,
};
use adaptive_mm::recursion::{Catalog, CatalogSpec, DriftMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random finite-support `(c, p)` law summarized by its moments.
pub fn random_side(rng: &mut impl Rng) -> SideMoments {
    let atoms = rng.gen_range(1..=3);
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for _ in 0..atoms {
        samples.push((rng.gen_range(0.2..3.0), rng.gen_range(0.5..4.0)));
        weights.push(rng.gen_range(0.1..1.0));
    }
    let total: f64 = weights.iter().sum();
    let mut acc = [0.0; 6];
    for (&(c, p), w) in samples.iter().zip(&weights) {
        let w = w / total;
        acc[0] += w * c;
        acc[1] += w * p;
        acc[2] += w * c * c;
        acc[3] += w * c * p;
        acc[4] += w * c * c * p;
        acc[5] += w * c * c * p * p;
    }
    SideMoments {
        mu_c: acc[0],
        mu_p: acc[1],
        mu_c2: acc[2].max(acc[0] * acc[0]),
        mu_cp: acc[3],
        mu_c2p: acc[4],
        mu_c2p2: acc[5],
    }
}

pub fn random_probs(rng: &mut impl Rng) -> ArrivalProbs {
    let pi_plus: f64 = rng.gen_range(0.05..0.95);
    let pi_minus: f64 = rng.gen_range(0.05..0.95);
    let lo = (pi_plus + pi_minus - 1.0).max(0.0);
    let hi = pi_plus.min(pi_minus);
    let pi_11 = match rng.gen_range(0..4) {
        0 => lo,
        _ => rng.gen_range(lo..=hi),
    };
    ArrivalProbs::new(pi_plus, pi_minus, pi_11)
}

pub fn random_map(rng: &mut impl Rng) -> ScenarioMap {
    match rng.gen_range(0..5) {
        0 => ScenarioMap::constant(1).unwrap(),
        1 => ScenarioMap::sums_of_lag(1).unwrap(),
        2 => ScenarioMap::identity_of_lag(1).unwrap(),
        3 => ScenarioMap::g2(),
        _ => ScenarioMap::sums_of_lag(2).unwrap(),
    }
}

pub struct RandomSpecOptions {
    pub max_steps: usize,
    pub allow_phi: bool,
}

/// A random valid model specification.
pub fn random_spec(seed: u64, opts: &RandomSpecOptions) -> CatalogSpec {
    let mut rng = rng(seed);
    let map = random_map(&mut rng);
    let probs = (0..map.scenario_count()).map(|_| random_probs(&mut rng)).collect();
    let arrivals = ArrivalModel::new(probs).unwrap();
    let moments = DemandMoments::new(random_side(&mut rng), random_side(&mut rng)).unwrap();
    let lambda = 10f64.powf(rng.gen_range(-3.0..0.5));
    let phi = if opts.allow_phi && rng.gen_bool(0.5) {
        10f64.powf(rng.gen_range(-4.0..-1.0))
    } else {
        0.0
    };
    CatalogSpec {
        schedule: TradingSchedule::new(rng.gen_range(1..=opts.max_steps), 1.0).unwrap(),
        map,
        arrivals,
        moments,
        objective: ObjectiveParams::new(lambda, phi).unwrap(),
        mode: DriftMode::Martingale,
    }
}

/// Symmetric unit-scale model: equal sides, balanced arrivals, uncorrelated
/// demand, G2 map.
pub fn symmetric_spec(n_steps: usize, lambda: f64, pi_11_zero: bool) -> CatalogSpec {
    let map = ScenarioMap::g2();
    let probs = (0..map.scenario_count())
        .map(|s| {
            let pi = 0.1 + 0.05 * (s % 7) as f64;
            ArrivalProbs::new(pi, pi, if pi_11_zero { 0.0 } else { pi * pi })
        })
        .collect();
    let side = SideMoments {
        mu_c: 1.0,
        mu_p: 2.0,
        mu_c2: 1.5,
        mu_cp: 2.0,
        mu_c2p: 3.0,
        mu_c2p2: 7.0,
    };
    CatalogSpec {
        schedule: TradingSchedule::new(n_steps, 1.0).unwrap(),
        map,
        arrivals: ArrivalModel::new(probs).unwrap(),
        moments: DemandMoments::symmetric(side).unwrap(),
        objective: ObjectiveParams::terminal(lambda).unwrap(),
        mode: DriftMode::Martingale,
    }
}

/// Conditionals of the next layer computed by explicit enumeration of the
/// four indicator cells, with the running-penalty shift on the α-terms and a
/// known drift added to the h-terms.
#[derive(Debug, Clone, Copy)]
pub struct Enumerated {
    pub pi_plus: f64,
    pub pi_minus: f64,
    pub pi_11: f64,
    pub alpha: [f64; 4],
    pub h: [f64; 4],
    pub g: [f64; 4],
}

impl Enumerated {
    pub fn from_catalog(cat: &Catalog, step: usize, iota: usize, drift: f64) -> Self {
        let map = cat.map();
        let pr = cat.arrivals().probs(iota);
        let phi = cat.objective().phi;
        let mut alpha = [0.0; 4];
        let mut h = [0.0; 4];
        let mut g = [0.0; 4];
        for code in 0..4 {
            let next = map
                .step_scenario(MoPair::from_code(code), ScenarioId(iota))
                .unwrap()
                .index();
            let v = cat.value(step + 1, next);
            alpha[code] = v.alpha - phi;
            h[code] = v.h + drift;
            g[code] = v.g;
        }
        Self {
            pi_plus: pr.pi_plus,
            pi_minus: pr.pi_minus,
            pi_11: pr.pi_11,
            alpha,
            h,
            g,
        }
    }

    /// Probability of cell with code `2·buy + sell`.
    pub fn cell(&self, code: usize) -> f64 {
        match code {
            3 => self.pi_11,
            2 => self.pi_plus - self.pi_11,
            1 => self.pi_minus - self.pi_11,
            _ => 1.0 - self.pi_plus - self.pi_minus + self.pi_11,
        }
    }

    /// Expected one-step gain over `W + S·I` from quoting `(lp, lm)` at
    /// inventory `inv`, evaluated cell by cell.
    pub fn objective(&self, d: &DemandMoments, lp: f64, lm: f64, inv: f64) -> f64 {
        let (p, m) = (&d.plus, &d.minus);
        let mut total = 0.0;
        for code in 0..4 {
            let prob = self.cell(code);
            let buy = code & 2 != 0;
            let sell = code & 1 != 0;
            // Moments of X⁺ = c⁺(p⁺ − L⁺) and X⁻ = c⁻(p⁻ − L⁻) on arrival.
            let (ex_p, ex2_p) = if buy {
                (p.mu_cp - p.mu_c * lp, p.mu_c2p2 - 2.0 * lp * p.mu_c2p + lp * lp * p.mu_c2)
            } else {
                (0.0, 0.0)
            };
            let (ex_m, ex2_m) = if sell {
                (m.mu_cp - m.mu_c * lm, m.mu_c2p2 - 2.0 * lm * m.mu_c2p + lm * lm * m.mu_c2)
            } else {
                (0.0, 0.0)
            };
            let spread_gain = lp * ex_p + lm * ex_m;
            // E[(I − X⁺ + X⁻)²] with independent sides.
            let e_inv = inv - ex_p + ex_m;
            let e_inv2 = inv * inv + ex2_p + ex2_m - 2.0 * inv * ex_p + 2.0 * inv * ex_m - 2.0 * ex_p * ex_m;
            total += prob * (spread_gain + self.alpha[code] * e_inv2 + self.h[code] * e_inv + self.g[code]);
        }
        total
    }

    /// Gradient of [`Enumerated::objective`] in `(lp, lm)`.
    pub fn gradient(&self, d: &DemandMoments, lp: f64, lm: f64, inv: f64) -> (f64, f64) {
        let (p, m) = (&d.plus, &d.minus);
        let mut gp = 0.0;
        let mut gm = 0.0;
        for code in 0..4 {
            let prob = self.cell(code);
            let buy = code & 2 != 0;
            let sell = code & 1 != 0;
            let ex_p = if buy { p.mu_cp - p.mu_c * lp } else { 0.0 };
            let ex_m = if sell { m.mu_cp - m.mu_c * lm } else { 0.0 };
            let a = self.alpha[code];
            let h = self.h[code];
            if buy {
                let dex = -p.mu_c;
                let dex2 = -2.0 * p.mu_c2p + 2.0 * lp * p.mu_c2;
                gp += prob
                    * (ex_p + lp * dex + a * (dex2 - 2.0 * inv * dex - 2.0 * dex * ex_m) - h * dex);
            }
            if sell {
                let dex = -m.mu_c;
                let dex2 = -2.0 * m.mu_c2p + 2.0 * lm * m.mu_c2;
                gm += prob
                    * (ex_m + lm * dex + a * (dex2 + 2.0 * inv * dex - 2.0 * ex_p * dex) + h * dex);
            }
        }
        (gp, gm)
    }

    /// Maximizer of the quadratic objective by solving the first-order
    /// conditions with a 2×2 linear solve (gradient is affine in the spreads).
    pub fn argmax(&self, d: &DemandMoments, inv: f64) -> (f64, f64) {
        let g0 = self.gradient(d, 0.0, 0.0, inv);
        let gx = self.gradient(d, 1.0, 0.0, inv);
        let gy = self.gradient(d, 0.0, 1.0, inv);
        let (a11, a21) = (gx.0 - g0.0, gx.1 - g0.1);
        let (a12, a22) = (gy.0 - g0.0, gy.1 - g0.1);
        let det = a11 * a22 - a12 * a21;
        let lp = (-g0.0 * a22 + a12 * g0.1) / det;
        let lm = (-a11 * g0.1 + a21 * g0.0) / det;
        (lp, lm)
    }

    /// Maximized objective as a function of inventory.
    pub fn value(&self, d: &DemandMoments, inv: f64) -> f64 {
        let (lp, lm) = self.argmax(d, inv);
        self.objective(d, lp, lm, inv)
    }

    /// `(α, h, g)` recovered from the maximized objective at `I = −1, 0, 1`.
    pub fn quadratic_coefficients(&self, d: &DemandMoments) -> (f64, f64, f64) {
        let vm = self.value(d, -1.0);
        let v0 = self.value(d, 0.0);
        let vp = self.value(d, 1.0);
        (0.5 * (vp + vm) - v0, 0.5 * (vp - vm), v0)
    }
}

pub fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(scale))
}
