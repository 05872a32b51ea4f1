use crate::error::{Error, Result};
use crate::model::DemandMoments;

use super::{Catalog, PolicyCoefs, StepInputs};

/// Default cap on the entries of one side of a [`XiTable`] (64 MiB of `f64`).
pub const DEFAULT_XI_ENTRY_CAP: usize = 1 << 23;

/// Propagation factor of the linear value coefficient from step `k + 1` back
/// to step `k`, for the indicator pair with code `2·buy + sell`.
///
/// `inputs` and `policy` are those of step `k` at the current scenario.
#[inline]
pub fn xi_factor(inputs: &StepInputs, policy: &PolicyCoefs, d: &DemandMoments, pair_code: usize) -> f64 {
    let buy = pair_code & 2 != 0;
    let sell = pair_code & 1 != 0;
    let wp = inputs.pi_plus * d.plus.mu_c * inputs.alpha1p;
    let wm = inputs.pi_minus * d.minus.mu_c * inputs.alpha1m;
    let mut xi = 1.0;
    if buy {
        xi += (wp * policy.rho_p - wm * policy.psi_m) / (inputs.pi_plus * policy.gamma);
    }
    if sell {
        xi += (wm * policy.rho_m - wp * policy.psi_p) / (inputs.pi_minus * policy.gamma);
    }
    xi
}

/// Conditional expectations of products of propagation factors, used to turn
/// multi-step drift forecasts into quote adjustments.
///
/// `m_plus(k, ι, i)` is the expectation, given scenario `ι` at step `k` and a
/// buy arrival in the next interval, of `∏_{l=k+2}^{i+1} ξ_l`; `m_minus`
/// conditions on a sell arrival. Horizons `i = k+1 ..= min(N, k + horizon)`
/// are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct XiTable {
    n_steps: usize,
    scenarios: usize,
    horizon: usize,
    m_plus: Vec<f64>,
    m_minus: Vec<f64>,
}

impl XiTable {
    /// Build the table for a catalog whose layers are already computed.
    pub fn build(catalog: &Catalog, horizon: usize, entry_cap: usize) -> Result<Self> {
        let n_steps = catalog.n_steps();
        let s_count = catalog.scenario_count();
        let horizon = horizon.min(n_steps);
        let entries = (n_steps + 1)
            .checked_mul(s_count)
            .and_then(|x| x.checked_mul(horizon))
            .unwrap_or(usize::MAX);
        if entries > entry_cap {
            return Err(Error::Config(format!(
                "xi table would need {entries} entries per side, above the cap of {entry_cap}; \
                 reduce the forecast horizon"
            )));
        }
        let map = catalog.map();
        let arrivals = catalog.arrivals();
        let moments = catalog.moments();

        // factors[(m * S + s) * 4 + code] = ξ_{m+1} for the transition out of step m.
        let mut factors = vec![0.0; if horizon == 0 { 0 } else { (n_steps + 1) * s_count * 4 }];
        if horizon > 0 {
            for m in 0..=n_steps {
                for s in 0..s_count {
                    let inputs = catalog.step_inputs(m, s);
                    let pol = catalog.policy(m, s);
                    for code in 0..4 {
                        factors[(m * s_count + s) * 4 + code] = xi_factor(&inputs, pol, moments, code);
                    }
                }
            }
        }

        let mut m_plus = vec![f64::NAN; entries];
        let mut m_minus = vec![f64::NAN; entries];
        let mut q = vec![0.0; s_count];
        let mut q_prev = vec![0.0; s_count];
        let last_i = if horizon == 0 { 0 } else { n_steps };
        for i in 1..=last_i {
            let k_lo = i.saturating_sub(horizon);
            // Q_i(i+1) = 1 (empty product).
            q.iter_mut().for_each(|v| *v = 1.0);
            let mut m = i + 1;
            loop {
                // Q_i(m-1) = Σ cells · ξ_m · Q_i(m)(Γ), using the factors of step m-1.
                let from = m - 1;
                for s in 0..s_count {
                    let cells = arrivals.probs(s).cells();
                    let f = &factors[(from * s_count + s) * 4..(from * s_count + s) * 4 + 4];
                    q_prev[s] = (0..4)
                        .map(|code| cells.by_code(code) * f[code] * q[map.next(s, code)])
                        .sum();
                }
                std::mem::swap(&mut q, &mut q_prev);
                m = from;
                // `q` holds Q_i(m); it feeds the entries of step k = m - 1.
                let k = m - 1;
                let j = i - k - 1;
                for s in 0..s_count {
                    let cells = arrivals.probs(s).cells();
                    let q11 = q[map.next(s, 3)];
                    let q10 = q[map.next(s, 2)];
                    let q01 = q[map.next(s, 1)];
                    let idx = (k * s_count + s) * horizon + j;
                    m_plus[idx] = (cells.p11 * q11 + cells.p10 * q10) / (cells.p11 + cells.p10);
                    m_minus[idx] = (cells.p11 * q11 + cells.p01 * q01) / (cells.p11 + cells.p01);
                }
                if k <= k_lo {
                    break;
                }
            }
        }
        Ok(Self {
            n_steps,
            scenarios: s_count,
            horizon,
            m_plus,
            m_minus,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Largest stored horizon index at step `k`.
    pub fn last_horizon(&self, k: usize) -> usize {
        (k + self.horizon).min(self.n_steps)
    }

    fn index(&self, k: usize, iota: usize, i: usize) -> Option<usize> {
        if k > self.n_steps || iota >= self.scenarios || i <= k || i > self.last_horizon(k) {
            return None;
        }
        Some((k * self.scenarios + iota) * self.horizon + (i - k - 1))
    }

    pub fn m_plus(&self, k: usize, iota: usize, i: usize) -> Option<f64> {
        self.index(k, iota, i).map(|idx| self.m_plus[idx])
    }

    pub fn m_minus(&self, k: usize, iota: usize, i: usize) -> Option<f64> {
        self.index(k, iota, i).map(|idx| self.m_minus[idx])
    }
}
