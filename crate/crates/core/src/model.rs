//! Domain types and scenario algebra.
//!
//! A *scenario* is the value of a summary function applied to the last
//! `lag` market-order indicator pairs. Scenario ids are dense integers with a
//! lexicographic ordering per map kind:
//!
//! * `G1` (lag 3): the tuple `(b1, s1, b2, s2, b3, s3)` read as a binary
//!   number, most recent pair most significant. 64 scenarios.
//! * `G2` (lag 3) and `G3` (lag 4): the per-pair sums `b_j + s_j` read as a
//!   base-3 number, most recent most significant. 27 and 81 scenarios.
//! * `Constant`: a single scenario `0`.
//! * `Custom`: explicit encode and transition tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported history lag; encode tables have `4^lag` entries.
pub const MAX_LAG: usize = 8;

/// Dense scenario index in `0..scenario_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScenarioId(pub usize);

impl ScenarioId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Quote times `t_0..t_N`; the terminal time `T` has index `N + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradingSchedule {
    n_steps: usize,
    step_seconds: f64,
}

impl TradingSchedule {
    pub fn new(n_steps: usize, step_seconds: f64) -> Result<Self> {
        if !(step_seconds.is_finite() && step_seconds > 0.0) {
            return Err(Error::Config(format!(
                "step_seconds must be positive, got {step_seconds}"
            )));
        }
        Ok(Self {
            n_steps,
            step_seconds,
        })
    }

    /// `N`: index of the last quote time.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_seconds
    }

    /// Index of the terminal time `T`.
    pub fn terminal_index(&self) -> usize {
        self.n_steps + 1
    }
}

/// One interval's market-order indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MoPair {
    pub buy: bool,
    pub sell: bool,
}

impl MoPair {
    pub const NONE: MoPair = MoPair {
        buy: false,
        sell: false,
    };

    pub fn new(buy: bool, sell: bool) -> Self {
        Self { buy, sell }
    }

    /// Two-bit code `2·buy + sell`.
    pub fn code(self) -> usize {
        (self.buy as usize) * 2 + self.sell as usize
    }

    pub fn from_code(code: usize) -> Self {
        Self {
            buy: code & 2 != 0,
            sell: code & 1 != 0,
        }
    }

    pub fn sum(self) -> usize {
        self.buy as usize + self.sell as usize
    }

    pub fn swapped(self) -> Self {
        Self {
            buy: self.sell,
            sell: self.buy,
        }
    }
}

/// The last `lag` indicator pairs, most recent first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MoHistory {
    pairs: Vec<MoPair>,
}

impl MoHistory {
    pub fn new(pairs: Vec<MoPair>) -> Result<Self> {
        if pairs.is_empty() || pairs.len() > MAX_LAG {
            return Err(Error::Config(format!(
                "history lag must be in 1..={MAX_LAG}, got {}",
                pairs.len()
            )));
        }
        Ok(Self { pairs })
    }

    /// A history of `lag` empty intervals.
    pub fn quiet(lag: usize) -> Result<Self> {
        Self::new(vec![MoPair::NONE; lag])
    }

    pub fn lag(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[MoPair] {
        &self.pairs
    }

    /// History after observing `pair`: prepend it and drop the oldest.
    pub fn shifted(&self, pair: MoPair) -> Self {
        let mut pairs = Vec::with_capacity(self.pairs.len());
        pairs.push(pair);
        pairs.extend_from_slice(&self.pairs[..self.pairs.len() - 1]);
        Self { pairs }
    }

    /// In-place variant of [`MoHistory::shifted`].
    pub fn push(&mut self, pair: MoPair) {
        self.pairs.rotate_right(1);
        self.pairs[0] = pair;
    }

    /// Base-4 code with the most recent pair most significant.
    pub fn code(&self) -> usize {
        self.pairs.iter().fold(0, |acc, p| acc * 4 + p.code())
    }

    pub fn from_code(code: usize, lag: usize) -> Self {
        let mut pairs = vec![MoPair::NONE; lag];
        let mut rest = code;
        for slot in pairs.iter_mut().rev() {
            *slot = MoPair::from_code(rest % 4);
            rest /= 4;
        }
        Self { pairs }
    }
}

impl fmt::Display for MoHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}{}", p.buy as u8, p.sell as u8)?;
        }
        Ok(())
    }
}

/// Parses `"10,01,00"`: comma-separated `buy sell` bit pairs, most recent first.
impl FromStr for MoHistory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for token in s.split(',') {
            let token = token.trim();
            let bits: Vec<char> = token.chars().collect();
            let bit = |c: char| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Parse(format!("invalid history pair {token:?}"))),
            };
            if bits.len() != 2 {
                return Err(Error::Parse(format!("invalid history pair {token:?}")));
            }
            pairs.push(MoPair::new(bit(bits[0])?, bit(bits[1])?));
        }
        MoHistory::new(pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    G1,
    G2,
    G3,
    Constant,
    Custom,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioKind::G1 => "G1",
            ScenarioKind::G2 => "G2",
            ScenarioKind::G3 => "G3",
            ScenarioKind::Constant => "Constant",
            ScenarioKind::Custom => "Custom",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "g1" => Ok(ScenarioKind::G1),
            "g2" => Ok(ScenarioKind::G2),
            "g3" => Ok(ScenarioKind::G3),
            "constant" => Ok(ScenarioKind::Constant),
            "custom" => Ok(ScenarioKind::Custom),
            other => Err(Error::Parse(format!("unknown scenario kind {other:?}"))),
        }
    }
}

/// History summary function with its transition map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioMap {
    kind: ScenarioKind,
    lag: usize,
    count: usize,
    encode: Vec<usize>,
    transition: Vec<usize>,
    symmetric: bool,
}

impl ScenarioMap {
    /// Identity on three lags of `(buy, sell)` pairs.
    pub fn g1() -> Self {
        Self::lagged_identity(3, ScenarioKind::G1)
    }

    /// Three lags of per-interval sums.
    pub fn g2() -> Self {
        Self::lagged_sums(3, ScenarioKind::G2)
    }

    /// Four lags of per-interval sums.
    pub fn g3() -> Self {
        Self::lagged_sums(4, ScenarioKind::G3)
    }

    /// Single-scenario map; `lag` only fixes the expected history length.
    pub fn constant(lag: usize) -> Result<Self> {
        check_lag(lag)?;
        let encode = vec![0; 1 << (2 * lag)];
        Ok(Self::from_encoding(ScenarioKind::Constant, lag, 1, encode)
            .expect("constant map is consistent"))
    }

    /// Build a standard kind with its default lag.
    pub fn standard(kind: ScenarioKind) -> Result<Self> {
        match kind {
            ScenarioKind::G1 => Ok(Self::g1()),
            ScenarioKind::G2 => Ok(Self::g2()),
            ScenarioKind::G3 => Ok(Self::g3()),
            ScenarioKind::Constant => Self::constant(1),
            ScenarioKind::Custom => Err(Error::Config(
                "custom scenario maps need explicit tables".into(),
            )),
        }
    }

    /// Rebuild a map from its kind and lag; `Custom` needs the encode table.
    pub fn from_kind(kind: ScenarioKind, lag: usize, encode: Option<Vec<usize>>) -> Result<Self> {
        let map = match kind {
            ScenarioKind::Custom => {
                let encode = encode.ok_or_else(|| Error::Config("custom scenario map needs an encode table".into()))?;
                Self::custom_from_encoding(lag, encode)?
            }
            ScenarioKind::Constant => Self::constant(lag)?,
            other => Self::standard(other)?,
        };
        if map.lag != lag {
            return Err(Error::Config(format!("lag {lag} does not match scenario kind {kind} (lag {})", map.lag)));
        }
        Ok(map)
    }

    /// Per-pair sums over `lag` intervals as a `Custom` map (e.g. lag 1 gives
    /// three scenarios).
    pub fn sums_of_lag(lag: usize) -> Result<Self> {
        check_lag(lag)?;
        Ok(Self::lagged_sums(lag, ScenarioKind::Custom))
    }

    /// Identity over `lag` pairs as a `Custom` map (lag 1 gives four scenarios).
    pub fn identity_of_lag(lag: usize) -> Result<Self> {
        check_lag(lag)?;
        Ok(Self::lagged_identity(lag, ScenarioKind::Custom))
    }

    /// Custom map from an encode table over all `4^lag` history codes (see
    /// [`MoHistory::code`]) and a transition table indexed by
    /// `scenario * 4 + pair.code()`. Consistency with the encode table is
    /// verified exhaustively.
    pub fn custom(lag: usize, encode: Vec<usize>, transition: Vec<usize>) -> Result<Self> {
        let derived = Self::custom_from_encoding(lag, encode)?;
        let count = derived.count;
        if transition.len() != count * 4 {
            return Err(Error::Config(format!(
                "transition table needs {} entries, got {}",
                count * 4,
                transition.len()
            )));
        }
        if derived.transition != transition {
            return Err(Error::Config(
                "transition table disagrees with the encoding of shifted histories".into(),
            ));
        }
        Ok(derived)
    }

    /// Custom map from an encode table alone; the transition table is derived
    /// and its existence checked over every history.
    pub fn custom_from_encoding(lag: usize, encode: Vec<usize>) -> Result<Self> {
        check_lag(lag)?;
        let histories = 1usize << (2 * lag);
        if encode.len() != histories {
            return Err(Error::Config(format!(
                "encode table needs {histories} entries, got {}",
                encode.len()
            )));
        }
        let count = encode.iter().copied().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; count];
        for &s in &encode {
            seen[s] = true;
        }
        if seen.iter().any(|v| !v) {
            return Err(Error::Config(
                "encode table image must be dense 0..count".into(),
            ));
        }
        Self::from_encoding(ScenarioKind::Custom, lag, count, encode)
    }

    fn lagged_identity(lag: usize, kind: ScenarioKind) -> Self {
        let encode = (0..1usize << (2 * lag)).collect();
        Self::from_encoding(kind, lag, 1 << (2 * lag), encode).expect("identity is consistent")
    }

    fn lagged_sums(lag: usize, kind: ScenarioKind) -> Self {
        let encode = (0..1usize << (2 * lag))
            .map(|code| {
                MoHistory::from_code(code, lag)
                    .pairs()
                    .iter()
                    .fold(0, |acc, p| acc * 3 + p.sum())
            })
            .collect();
        Self::from_encoding(kind, lag, 3usize.pow(lag as u32), encode)
            .expect("lagged sums are consistent")
    }

    /// Derive the transition map from an encoding and check that the shift of
    /// every history lands on a well-defined scenario.
    fn from_encoding(
        kind: ScenarioKind,
        lag: usize,
        count: usize,
        encode: Vec<usize>,
    ) -> Result<Self> {
        const UNSET: usize = usize::MAX;
        let mut transition = vec![UNSET; count * 4];
        for code in 0..encode.len() {
            let hist = MoHistory::from_code(code, lag);
            let from = encode[code];
            for pc in 0..4 {
                let to = encode[hist.shifted(MoPair::from_code(pc)).code()];
                let slot = &mut transition[from * 4 + pc];
                if *slot == UNSET {
                    *slot = to;
                } else if *slot != to {
                    return Err(Error::Config(format!(
                        "scenario {from} has no well-defined transition under pair code {pc}"
                    )));
                }
            }
        }
        let symmetric = (0..encode.len()).all(|code| {
            let hist = MoHistory::from_code(code, lag);
            let swapped: Vec<MoPair> = hist.pairs().iter().map(|p| p.swapped()).collect();
            let balanced: Vec<MoPair> = hist
                .pairs()
                .iter()
                .map(|p| match p.sum() {
                    1 => MoPair::new(true, false),
                    _ => *p,
                })
                .collect();
            let id = encode[code];
            id == encode[MoHistory { pairs: swapped }.code()]
                && id == encode[MoHistory { pairs: balanced }.code()]
        });
        Ok(Self {
            kind,
            lag,
            count,
            encode,
            transition,
            symmetric,
        })
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn scenario_count(&self) -> usize {
        self.count
    }

    /// True iff the summary depends on the history only through `e⁺ + e⁻`.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn encode_table(&self) -> &[usize] {
        &self.encode
    }

    pub fn transition_table(&self) -> &[usize] {
        &self.transition
    }

    pub fn encode_history(&self, history: &MoHistory) -> Result<ScenarioId> {
        if history.lag() != self.lag {
            return Err(Error::Config(format!(
                "history lag {} does not match scenario map lag {}",
                history.lag(),
                self.lag
            )));
        }
        Ok(ScenarioId(self.encode[history.code()]))
    }

    pub fn step_scenario(&self, pair: MoPair, iota: ScenarioId) -> Result<ScenarioId> {
        if iota.0 >= self.count {
            return Err(Error::Model(format!(
                "scenario {} outside image of size {}",
                iota.0, self.count
            )));
        }
        Ok(ScenarioId(self.transition[iota.0 * 4 + pair.code()]))
    }

    /// Unchecked transition for hot loops; `iota < scenario_count`.
    #[inline]
    pub fn next(&self, iota: usize, pair_code: usize) -> usize {
        self.transition[iota * 4 + pair_code]
    }

    /// Scenario tuple for display: the identity bits for `G1`-like maps, the
    /// per-lag sums for `G2`/`G3`, the id itself otherwise.
    pub fn describe(&self, iota: ScenarioId) -> Vec<usize> {
        match self.kind {
            ScenarioKind::G1 => (0..2 * self.lag)
                .rev()
                .map(|bit| (iota.0 >> bit) & 1)
                .collect(),
            ScenarioKind::G2 | ScenarioKind::G3 => {
                let mut digits = vec![0; self.lag];
                let mut rest = iota.0;
                for d in digits.iter_mut().rev() {
                    *d = rest % 3;
                    rest /= 3;
                }
                digits
            }
            _ => vec![iota.0],
        }
    }
}

fn check_lag(lag: usize) -> Result<()> {
    if lag == 0 || lag > MAX_LAG {
        return Err(Error::Config(format!("lag must be in 1..={MAX_LAG}, got {lag}")));
    }
    Ok(())
}

/// Arrival probabilities for the next interval given the current scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProbs {
    pub pi_plus: f64,
    pub pi_minus: f64,
    pub pi_11: f64,
}

/// Joint law of the next pair of indicators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointCells {
    pub p11: f64,
    pub p10: f64,
    pub p01: f64,
    pub p00: f64,
}

impl JointCells {
    /// Probability of the pair with code `2·buy + sell`.
    #[inline]
    pub fn by_code(&self, code: usize) -> f64 {
        match code {
            3 => self.p11,
            2 => self.p10,
            1 => self.p01,
            _ => self.p00,
        }
    }
}

impl ArrivalProbs {
    pub fn new(pi_plus: f64, pi_minus: f64, pi_11: f64) -> Self {
        Self {
            pi_plus,
            pi_minus,
            pi_11,
        }
    }

    /// Independent buy and sell arrivals.
    pub fn independent(pi_plus: f64, pi_minus: f64) -> Self {
        Self::new(pi_plus, pi_minus, pi_plus * pi_minus)
    }

    pub fn validate(&self, scenario: usize) -> Result<()> {
        let Self {
            pi_plus,
            pi_minus,
            pi_11,
        } = *self;
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !(in_unit(pi_plus) && in_unit(pi_minus) && in_unit(pi_11)) {
            return Err(Error::Model(format!(
                "scenario {scenario}: probabilities must lie in [0,1] (pi+={pi_plus}, pi-={pi_minus}, pi11={pi_11})"
            )));
        }
        if pi_plus <= 0.0 || pi_minus <= 0.0 {
            return Err(Error::Model(format!(
                "scenario {scenario}: pi+ and pi- must be strictly positive (pi+={pi_plus}, pi-={pi_minus})"
            )));
        }
        if pi_11 > pi_plus.min(pi_minus) {
            return Err(Error::Model(format!(
                "scenario {scenario}: pi11={pi_11} exceeds min(pi+, pi-)"
            )));
        }
        // A few ulps of slack so the boundary π11 = π⁺ + π⁻ − 1 stays valid.
        if 1.0 - pi_plus - pi_minus + pi_11 < -4.0 * f64::EPSILON {
            return Err(Error::Model(format!(
                "scenario {scenario}: 1 - pi+ - pi- + pi11 is negative"
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> JointCells {
        JointCells {
            p11: self.pi_11,
            p10: self.pi_plus - self.pi_11,
            p01: self.pi_minus - self.pi_11,
            p00: (1.0 - self.pi_plus - self.pi_minus + self.pi_11).max(0.0),
        }
    }
}

/// Scenario-conditional arrival probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    probs: Vec<ArrivalProbs>,
}

impl ArrivalModel {
    pub fn new(probs: Vec<ArrivalProbs>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Model("arrival model needs at least one scenario".into()));
        }
        for (s, p) in probs.iter().enumerate() {
            p.validate(s)?;
        }
        Ok(Self { probs })
    }

    /// Same probabilities in every one of `count` scenarios.
    pub fn uniform(count: usize, probs: ArrivalProbs) -> Result<Self> {
        Self::new(vec![probs; count])
    }

    pub fn scenario_count(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self, iota: usize) -> ArrivalProbs {
        self.probs[iota]
    }

    pub fn all(&self) -> &[ArrivalProbs] {
        &self.probs
    }

    pub fn check_map(&self, map: &ScenarioMap) -> Result<()> {
        if self.probs.len() != map.scenario_count() {
            return Err(Error::Model(format!(
                "arrival model has {} scenarios, scenario map has {}",
                self.probs.len(),
                map.scenario_count()
            )));
        }
        Ok(())
    }

    pub fn joint_cells(&self, iota: ScenarioId) -> Result<JointCells> {
        let p = self
            .probs
            .get(iota.0)
            .ok_or_else(|| Error::Model(format!("scenario {iota} not in arrival model")))?;
        p.validate(iota.0)?;
        Ok(p.cells())
    }
}

/// Conditional demand moments `μ_{cᵐpⁿ}` for one side given an arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideMoments {
    pub mu_c: f64,
    pub mu_p: f64,
    pub mu_c2: f64,
    pub mu_cp: f64,
    pub mu_c2p: f64,
    pub mu_c2p2: f64,
}

impl SideMoments {
    /// Point mass at `(c, p)`.
    pub fn deterministic(c: f64, p: f64) -> Self {
        Self {
            mu_c: c,
            mu_p: p,
            mu_c2: c * c,
            mu_cp: c * p,
            mu_c2p: c * c * p,
            mu_c2p2: c * c * p * p,
        }
    }

    /// Sample moments of `(c, p)` observations.
    pub fn from_samples(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("no demand observations".into()));
        }
        let n = samples.len() as f64;
        let mut acc = [0.0f64; 6];
        for &(c, p) in samples {
            acc[0] += c;
            acc[1] += p;
            acc[2] += c * c;
            acc[3] += c * p;
            acc[4] += c * c * p;
            acc[5] += c * c * p * p;
        }
        Ok(Self {
            mu_c: acc[0] / n,
            mu_p: acc[1] / n,
            mu_c2: acc[2] / n,
            mu_cp: acc[3] / n,
            mu_c2p: acc[4] / n,
            mu_c2p2: acc[5] / n,
        })
    }

    /// Same first moments of `c`, `p` and `cp`, with zero variance in `c` and
    /// no correlation.
    pub fn without_demand_noise(&self) -> Self {
        Self::deterministic(self.mu_c, self.mu_p)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.mu_c,
            self.mu_p,
            self.mu_c2,
            self.mu_cp,
            self.mu_c2p,
            self.mu_c2p2,
        ]
    }

    pub fn validate(&self, side: &str) -> Result<()> {
        let values = self.as_array();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("{side} moments must be finite")));
        }
        if self.mu_c <= 0.0 || self.mu_p <= 0.0 || self.mu_c2 <= 0.0 || self.mu_cp <= 0.0 {
            return Err(Error::Model(format!(
                "{side} moments mu_c, mu_p, mu_c2, mu_cp must be positive"
            )));
        }
        if self.mu_c2p2 < 0.0 {
            return Err(Error::Model(format!("{side} mu_c2p2 must be nonnegative")));
        }
        // Tolerate the rounding of a sample second moment around a constant.
        if self.mu_c2 < self.mu_c * self.mu_c * (1.0 - 1e-12) {
            return Err(Error::Model(format!(
                "{side} moments violate mu_c2 >= mu_c^2 ({} < {})",
                self.mu_c2,
                self.mu_c * self.mu_c
            )));
        }
        Ok(())
    }
}

/// Demand moments for both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandMoments {
    pub plus: SideMoments,
    pub minus: SideMoments,
}

impl DemandMoments {
    pub fn new(plus: SideMoments, minus: SideMoments) -> Result<Self> {
        plus.validate("ask-side")?;
        minus.validate("bid-side")?;
        Ok(Self { plus, minus })
    }

    pub fn symmetric(side: SideMoments) -> Result<Self> {
        Self::new(side, side)
    }

    /// Per-side [`SideMoments::without_demand_noise`].
    pub fn without_demand_noise(&self) -> Self {
        Self {
            plus: self.plus.without_demand_noise(),
            minus: self.minus.without_demand_noise(),
        }
    }

    /// Sample averages of the two sides used by the critical-inventory formula.
    pub fn averaged(&self) -> SideMoments {
        let a = self.plus.as_array();
        let b = self.minus.as_array();
        let m = |i: usize| 0.5 * (a[i] + b[i]);
        SideMoments {
            mu_c: m(0),
            mu_p: m(1),
            mu_c2: m(2),
            mu_cp: m(3),
            mu_c2p: m(4),
            mu_c2p2: m(5),
        }
    }
}

/// Terminal and running inventory penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub lambda: f64,
    pub phi: f64,
}

impl ObjectiveParams {
    pub fn new(lambda: f64, phi: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(phi.is_finite() && phi >= 0.0) {
            return Err(Error::Config(format!("phi must be >= 0, got {phi}")));
        }
        Ok(Self { lambda, phi })
    }

    pub fn terminal(lambda: f64) -> Result<Self> {
        Self::new(lambda, 0.0)
    }
}

/// Which of the four positive-spread conditions hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryReport {
    /// `μ_c⁺ = μ_c⁻` and `μ_{c²}⁺ = μ_{c²}⁻` exactly.
    pub equal_sides: bool,
    /// Largest relative gap between the two sides' `μ_c` and `μ_{c²}`.
    pub side_gap: f64,
    /// `π⁺(ι) = π⁻(ι)` in every scenario.
    pub balanced_arrivals: bool,
    /// `μ_cp = μ_c μ_p` and `μ_{c²p} = μ_{c²} μ_p` on both sides.
    pub uncorrelated: bool,
    /// Scenario map depends only on `e⁺ + e⁻`.
    pub symmetric_map: bool,
}

impl SymmetryReport {
    pub fn all_hold(&self) -> bool {
        self.equal_sides && self.balanced_arrivals && self.uncorrelated && self.symmetric_map
    }

    pub fn equal_sides_within(&self, rel_tol: f64) -> bool {
        self.side_gap <= rel_tol
    }
}

pub fn validate_symmetry(
    arrivals: &ArrivalModel,
    moments: &DemandMoments,
    map: &ScenarioMap,
) -> SymmetryReport {
    let (p, m) = (&moments.plus, &moments.minus);
    let rel = |a: f64, b: f64| {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    };
    let uncorrelated_side =
        |s: &SideMoments| s.mu_cp == s.mu_c * s.mu_p && s.mu_c2p == s.mu_c2 * s.mu_p;
    SymmetryReport {
        equal_sides: p.mu_c == m.mu_c && p.mu_c2 == m.mu_c2,
        side_gap: rel(p.mu_c, m.mu_c).max(rel(p.mu_c2, m.mu_c2)),
        balanced_arrivals: arrivals.all().iter().all(|a| a.pi_plus == a.pi_minus),
        uncorrelated: uncorrelated_side(p) && uncorrelated_side(m),
        symmetric_map: map.is_symmetric(),
    }
}

/// Calibrated Table-1 style moments, in ticks and shares.
pub fn msft_reference_moments() -> DemandMoments {
    // Table of average demand moments for MSFT, 2019; mu_c2p2 is not reported
    // and is filled with the Cauchy-Schwarz floor (mu_c2p)^2 / mu_c2.
    let side = |mu_c: f64, mu_p: f64, mu_cp: f64, mu_c2: f64, mu_c2p: f64| SideMoments {
        mu_c,
        mu_p,
        mu_c2,
        mu_cp,
        mu_c2p,
        mu_c2p2: mu_c2p * mu_c2p / mu_c2,
    };
    DemandMoments {
        plus: side(125.512, 3.287, 451.263, 8.47e4, 3.53e5),
        minus: side(130.622, 3.292, 471.685, 5.45e4, 2.25e5),
    }
}
