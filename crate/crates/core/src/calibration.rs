//! Model estimation from interval-summarized order flow.
//!
//! # Interval CSV
//!
//! Header and one row per interval:
//!
//! ```text
//! interval_index,buy_mo,sell_mo,mid_price,ask_levels,bid_levels
//! 0,1,0,13000,"1:350;2:250;3:150",""
//! ```
//!
//! `buy_mo`/`sell_mo` are `0` or `1`. A level list is
//! `levels := "" | pair (";" pair)*`, `pair := offset ":" volume`, with
//! `offset` a positive integer number of ticks from the mid and `volume` the
//! non-negative share count a limit order resting at that offset would have
//! filled during the interval. Ask levels describe buy market orders, bid
//! levels sell market orders.
//!
//! # Raw trades CSV
//!
//! ```text
//! timestamp_ns,side,price,volume,book_depth_ahead
//! 1000000,buy,13000,500,"100;250;400"
//! ```
//!
//! One market order per row. `side` is the aggressor (`buy` lifts asks),
//! `price` the midprice when it arrived, `volume` its size and
//! `book_depth_ahead` the cumulative resting depth on the opposing side up to
//! and including offsets `1, 2, …` ticks. Rows are bucketed into intervals of
//! a fixed length; a placement at offset `ℓ` is credited
//! `min(max(volume − depth_ahead[ℓ], 0), cap)` per order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backtest::fill_volume;
use crate::error::{Error, Result};
use crate::model::{
    ArrivalModel, ArrivalProbs, DemandMoments, MoHistory, MoPair, ScenarioKind, ScenarioMap, SideMoments,
};
use crate::policy::DriftForecast;

/// Demand a placement at `offset` ticks would have received.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelObs {
    pub offset: u32,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub index: usize,
    pub buy_mo: bool,
    pub sell_mo: bool,
    pub mid_price: f64,
    pub ask_levels: Vec<LevelObs>,
    pub bid_levels: Vec<LevelObs>,
}

impl IntervalRecord {
    pub fn pair(&self) -> MoPair {
        MoPair::new(self.buy_mo, self.sell_mo)
    }

    fn validate(&self) -> Result<()> {
        if !self.mid_price.is_finite() {
            return Err(Error::Data(format!("interval {}: mid price is not finite", self.index)));
        }
        for l in self.ask_levels.iter().chain(&self.bid_levels) {
            if l.offset == 0 {
                return Err(Error::Data(format!("interval {}: offsets must be positive", self.index)));
            }
            if !(l.volume.is_finite() && l.volume >= 0.0) {
                return Err(Error::Data(format!("interval {}: volumes must be >= 0", self.index)));
            }
        }
        Ok(())
    }
}

/// Raw counts behind the arrival estimates of one scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalCounts {
    pub visits: u64,
    pub buys: u64,
    pub sells: u64,
    pub both: u64,
}

impl ArrivalCounts {
    fn add(&mut self, pair: MoPair) {
        self.visits += 1;
        self.buys += pair.buy as u64;
        self.sells += pair.sell as u64;
        self.both += (pair.buy && pair.sell) as u64;
    }

    fn merge(&mut self, other: &ArrivalCounts) {
        self.visits += other.visits;
        self.buys += other.buys;
        self.sells += other.sells;
        self.both += other.both;
    }

    /// Unfloored empirical frequencies `(f⁺, f⁻, f¹¹)`.
    pub fn frequencies(&self) -> (f64, f64, f64) {
        let n = self.visits as f64;
        (self.buys as f64 / n, self.sells as f64 / n, self.both as f64 / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalEstimate {
    pub model: ArrivalModel,
    pub counts: Vec<ArrivalCounts>,
    /// Scenarios never visited, filled with the pooled estimate.
    pub pooled: Vec<bool>,
    /// Scenarios where flooring or clipping changed an estimate.
    pub clipped: Vec<bool>,
}

/// Floor `π±` into `[ε, 1 − ε]` and clip `π¹¹` into its feasible range.
pub fn floor_probs(raw: (f64, f64, f64), epsilon: f64) -> (ArrivalProbs, bool) {
    let (fp, fm, f11) = raw;
    let pi_plus = fp.clamp(epsilon, 1.0 - epsilon);
    let pi_minus = fm.clamp(epsilon, 1.0 - epsilon);
    let lo = (pi_plus + pi_minus - 1.0).max(0.0);
    let hi = pi_plus.min(pi_minus);
    let pi_11 = f11.clamp(lo, hi);
    let changed = pi_plus != fp || pi_minus != fm || pi_11 != f11;
    (ArrivalProbs::new(pi_plus, pi_minus, pi_11), changed)
}

/// Scenario-conditional arrival frequencies.
///
/// The first `lag` intervals only seed the history; each later interval is
/// counted under the scenario of the `lag` intervals before it.
pub fn estimate_arrivals(data: &[IntervalRecord], map: &ScenarioMap, epsilon: f64) -> Result<ArrivalEstimate> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Config(format!("probability floor must be in (0, 0.5), got {epsilon}")));
    }
    let counts = count_arrivals(data, map)?;
    let mut pooled_counts = ArrivalCounts::default();
    counts.iter().for_each(|c| pooled_counts.merge(c));
    let pooled_raw = pooled_counts.frequencies();
    let mut probs = Vec::with_capacity(counts.len());
    let mut pooled = Vec::with_capacity(counts.len());
    let mut clipped = Vec::with_capacity(counts.len());
    for c in &counts {
        let raw = if c.visits == 0 { pooled_raw } else { c.frequencies() };
        let (p, changed) = floor_probs(raw, epsilon);
        probs.push(p);
        pooled.push(c.visits == 0);
        clipped.push(changed);
    }
    Ok(ArrivalEstimate {
        model: ArrivalModel::new(probs)?,
        counts,
        pooled,
        clipped,
    })
}

/// Per-scenario counts over the stream.
pub fn count_arrivals(data: &[IntervalRecord], map: &ScenarioMap) -> Result<Vec<ArrivalCounts>> {
    let lag = map.lag();
    if data.len() <= lag {
        return Err(Error::Data(format!(
            "need more than {lag} intervals to estimate arrivals, got {}",
            data.len()
        )));
    }
    // Most recent first.
    let seed: Vec<MoPair> = data[..lag].iter().rev().map(IntervalRecord::pair).collect();
    let mut scenario = map.encode_history(&MoHistory::new(seed)?)?.index();
    let mut counts = vec![ArrivalCounts::default(); map.scenario_count()];
    for rec in &data[lag..] {
        let pair = rec.pair();
        counts[scenario].add(pair);
        scenario = map.next(scenario, pair.code());
    }
    Ok(counts)
}

/// Regression weights over offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    #[default]
    InverseOffset,
    InverseOffsetSquared,
    Uniform,
}

impl WeightScheme {
    pub fn weight(self, offset: f64) -> f64 {
        match self {
            WeightScheme::InverseOffset => 1.0 / offset,
            WeightScheme::InverseOffsetSquared => 1.0 / (offset * offset),
            WeightScheme::Uniform => 1.0,
        }
    }
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inverse-offset" => Ok(WeightScheme::InverseOffset),
            "inverse-offset-squared" => Ok(WeightScheme::InverseOffsetSquared),
            "uniform" => Ok(WeightScheme::Uniform),
            other => Err(Error::Parse(format!("unknown weight scheme {other:?}"))),
        }
    }
}

/// Outcome of the per-interval demand regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalFit {
    Fit { c: f64, p: f64, r_squared: f64 },
    /// Slope ≥ 0, so no positive `c`.
    NonPositiveSlope { slope: f64 },
    /// Fewer than two distinct weighted offsets.
    Degenerate,
}

/// Weighted least squares of volume on spread: `Q = β₀ + s·L`, giving
/// `c = −s` and `p = β₀ / c`. Points are `(spread, volume)`.
pub fn fit_interval_demand(obs: &[(f64, f64)], weights: &[f64]) -> IntervalFit {
    assert_eq!(obs.len(), weights.len(), "one weight per observation");
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (&(x, y), &w) in obs.iter().zip(weights) {
        if w > 0.0 {
            sw += w;
            sx += w * x;
            sy += w * y;
        }
    }
    if sw <= 0.0 {
        return IntervalFit::Degenerate;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&(x, y), &w) in obs.iter().zip(weights) {
        if w > 0.0 {
            sxx += w * (x - mx) * (x - mx);
            sxy += w * (x - mx) * (y - my);
            syy += w * (y - my) * (y - my);
        }
    }
    if !(sxx > 1e-12 * sw * (1.0 + mx * mx)) {
        return IntervalFit::Degenerate;
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return IntervalFit::NonPositiveSlope { slope };
    }
    let intercept = my - slope * mx;
    let c = -slope;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    IntervalFit::Fit {
        c,
        p: intercept / c,
        r_squared,
    }
}

/// Six sample moments of a `(ĉ, p̂)` series.
pub fn estimate_moments(series: &[(f64, f64)]) -> Result<SideMoments> {
    let mut m = SideMoments::from_samples(series)?;
    // Exact for any sample; guard against rounding.
    m.mu_c2 = m.mu_c2.max(m.mu_c * m.mu_c);
    Ok(m)
}

/// Standard errors of the six sample moments, in [`SideMoments::as_array`]
/// order.
pub fn moment_standard_errors(series: &[(f64, f64)]) -> [f64; 6] {
    let n = series.len() as f64;
    let mut out = [f64::NAN; 6];
    if series.len() < 2 {
        return out;
    }
    let f = |c: f64, p: f64| [c, p, c * c, c * p, c * c * p, c * c * p * p];
    let mut sum = [0.0; 6];
    let mut sum2 = [0.0; 6];
    for &(c, p) in series {
        for (j, v) in f(c, p).into_iter().enumerate() {
            sum[j] += v;
            sum2[j] += v * v;
        }
    }
    for j in 0..6 {
        let mean = sum[j] / n;
        let var = ((sum2[j] / n - mean * mean) * n / (n - 1.0)).max(0.0);
        out[j] = (var / n).sqrt();
    }
    out
}

/// One-step forecast from the last six reference prices: the mean of the last
/// five increments. Further forecasts are zero.
pub fn forecast_drift(prices: &[f64]) -> Result<DriftForecast> {
    if prices.len() < 6 {
        return Err(Error::Data(format!("drift forecast needs 6 prices, got {}", prices.len())));
    }
    let last = prices[prices.len() - 1];
    let first = prices[prices.len() - 6];
    Ok(DriftForecast::one_step((last - first) / 5.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub weights: WeightScheme,
    /// Largest offset used in the regression.
    pub max_offset: u32,
    /// Floor for `π±`.
    pub epsilon: f64,
    /// Currency per tick; spreads and `p` are reported in this unit.
    pub tick: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            weights: WeightScheme::InverseOffset,
            max_offset: 10,
            epsilon: 1e-4,
            tick: 1.0,
        }
    }
}

/// Regression bookkeeping for one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideDiagnostics {
    /// Intervals with this side's market order.
    pub intervals: u64,
    pub accepted: u64,
    pub rejected_slope: u64,
    pub degenerate: u64,
    pub mean_r_squared: f64,
    pub c_mean: f64,
    pub c_sd: f64,
    pub p_mean: f64,
    pub p_sd: f64,
    /// Standard errors of the moment estimates.
    pub moment_se: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub map: ScenarioMap,
    pub arrivals: ArrivalEstimate,
    pub moments: DemandMoments,
    pub ask: SideDiagnostics,
    pub bid: SideDiagnostics,
    pub options: CalibrationOptions,
}

/// Accepted `(ĉ, p̂)` series for one side and its diagnostics.
pub fn fit_side(data: &[IntervalRecord], ask_side: bool, options: &CalibrationOptions) -> (Vec<(f64, f64)>, SideDiagnostics) {
    let mut series = Vec::new();
    let mut diag = SideDiagnostics {
        intervals: 0,
        accepted: 0,
        rejected_slope: 0,
        degenerate: 0,
        mean_r_squared: f64::NAN,
        c_mean: f64::NAN,
        c_sd: f64::NAN,
        p_mean: f64::NAN,
        p_sd: f64::NAN,
        moment_se: [f64::NAN; 6],
    };
    let mut r2_sum = 0.0;
    let mut obs = Vec::new();
    let mut weights = Vec::new();
    for rec in data {
        let (active, levels) = if ask_side {
            (rec.buy_mo, &rec.ask_levels)
        } else {
            (rec.sell_mo, &rec.bid_levels)
        };
        if !active {
            continue;
        }
        diag.intervals += 1;
        obs.clear();
        weights.clear();
        for l in levels.iter().filter(|l| l.offset <= options.max_offset) {
            obs.push((l.offset as f64 * options.tick, l.volume));
            weights.push(options.weights.weight(l.offset as f64));
        }
        match fit_interval_demand(&obs, &weights) {
            IntervalFit::Fit { c, p, r_squared } => {
                diag.accepted += 1;
                r2_sum += r_squared;
                series.push((c, p));
            }
            IntervalFit::NonPositiveSlope { .. } => diag.rejected_slope += 1,
            IntervalFit::Degenerate => diag.degenerate += 1,
        }
    }
    if !series.is_empty() {
        let n = series.len() as f64;
        diag.mean_r_squared = r2_sum / n;
        let (cm, pm) = series.iter().fold((0.0, 0.0), |a, &(c, p)| (a.0 + c / n, a.1 + p / n));
        let (cv, pv) = series
            .iter()
            .fold((0.0, 0.0), |a, &(c, p)| (a.0 + (c - cm).powi(2) / n, a.1 + (p - pm).powi(2) / n));
        diag.c_mean = cm;
        diag.p_mean = pm;
        diag.c_sd = cv.sqrt();
        diag.p_sd = pv.sqrt();
        diag.moment_se = moment_standard_errors(&series);
    }
    (series, diag)
}

/// Full calibration of arrivals and demand moments.
pub fn calibrate(data: &[IntervalRecord], map: &ScenarioMap, options: &CalibrationOptions) -> Result<CalibrationResult> {
    if data.is_empty() {
        return Err(Error::Data("no intervals to calibrate from".into()));
    }
    if !(options.tick > 0.0 && options.tick.is_finite()) || options.max_offset < 2 {
        return Err(Error::Config("calibration needs tick > 0 and max_offset >= 2".into()));
    }
    data.iter().try_for_each(IntervalRecord::validate)?;
    let arrivals = estimate_arrivals(data, map, options.epsilon)?;
    let (ask_series, ask) = fit_side(data, true, options);
    let (bid_series, bid) = fit_side(data, false, options);
    let plus = estimate_moments(&ask_series).map_err(|_| Error::Data("no accepted ask-side demand fits".into()))?;
    let minus = estimate_moments(&bid_series).map_err(|_| Error::Data("no accepted bid-side demand fits".into()))?;
    Ok(CalibrationResult {
        map: map.clone(),
        arrivals,
        moments: DemandMoments::new(plus, minus)?,
        ask,
        bid,
        options: *options,
    })
}

fn parse_levels(field: &str, index: usize) -> Result<Vec<LevelObs>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|pair| {
            let (o, v) = pair
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("interval {index}: level {pair:?} is not offset:volume")))?;
            let offset: u32 = o
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("interval {index}: bad offset {o:?}")))?;
            let volume: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("interval {index}: bad volume {v:?}")))?;
            Ok(LevelObs { offset, volume })
        })
        .collect()
}

fn format_levels(levels: &[LevelObs]) -> String {
    levels
        .iter()
        .map(|l| format!("{}:{}", l.offset, l.volume))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_bit(s: &str, what: &str, index: usize) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse(format!("interval {index}: {what} must be 0 or 1, got {other:?}"))),
    }
}

const INTERVAL_HEADER: [&str; 6] = ["interval_index", "buy_mo", "sell_mo", "mid_price", "ask_levels", "bid_levels"];

pub fn read_intervals<R: Read>(reader: R) -> Result<Vec<IntervalRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse(format!("interval csv: {e}")))?.clone();
    if headers.iter().map(str::trim).ne(INTERVAL_HEADER.iter().copied()) {
        return Err(Error::Parse(format!(
            "interval csv header must be {}",
            INTERVAL_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("interval csv row {}: {e}", row + 1)))?;
        if rec.len() != 6 {
            return Err(Error::Parse(format!("interval csv row {} has {} fields", row + 1, rec.len())));
        }
        let index: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("interval csv row {}: bad interval_index", row + 1)))?;
        let mid_price: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("interval {index}: bad mid_price")))?;
        out.push(IntervalRecord {
            index,
            buy_mo: parse_bit(&rec[1], "buy_mo", index)?,
            sell_mo: parse_bit(&rec[2], "sell_mo", index)?,
            mid_price,
            ask_levels: parse_levels(&rec[4], index)?,
            bid_levels: parse_levels(&rec[5], index)?,
        });
    }
    Ok(out)
}

/// Level lists are always quoted, numbers never.
pub fn write_intervals<W: Write>(mut writer: W, data: &[IntervalRecord]) -> Result<()> {
    writeln!(writer, "{}", INTERVAL_HEADER.join(","))
        .map_err(|e| Error::Data(format!("writing interval csv: {e}")))?;
    let mut wtr = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(writer);
    let io_err = |e: csv::Error| Error::Data(format!("writing interval csv: {e}"));
    for r in data {
        wtr.write_record([
            r.index.to_string(),
            (r.buy_mo as u8).to_string(),
            (r.sell_mo as u8).to_string(),
            r.mid_price.to_string(),
            format_levels(&r.ask_levels),
            format_levels(&r.bid_levels),
        ])
        .map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::Data(format!("writing interval csv: {e}")))?;
    Ok(())
}

pub fn read_intervals_file(path: &Path) -> Result<Vec<IntervalRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_intervals(BufReader::new(f))
}

pub fn write_intervals_file(path: &Path, data: &[IntervalRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_intervals(BufWriter::new(f), data)
}

/// One market order from a raw trades file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrade {
    pub timestamp_ns: u64,
    pub buy: bool,
    pub mid_price: f64,
    pub volume: f64,
    /// Cumulative opposing depth at offsets `1, 2, …`.
    pub depth_ahead: Vec<f64>,
}

pub fn read_raw_trades<R: Read>(reader: R) -> Result<Vec<RawTrade>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("trades csv row {}: {e}", row + 1)))?;
        let bad = |what: &str| Error::Parse(format!("trades csv row {}: bad {what}", row + 1));
        if rec.len() != 5 {
            return Err(Error::Parse(format!("trades csv row {} has {} fields", row + 1, rec.len())));
        }
        let buy = match rec[1].trim().to_ascii_lowercase().as_str() {
            "buy" | "b" | "+" => true,
            "sell" | "s" | "-" => false,
            _ => return Err(bad("side")),
        };
        let depth_ahead = if rec[4].trim().is_empty() {
            Vec::new()
        } else {
            rec[4]
                .split(';')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad("book_depth_ahead")))
                .collect::<Result<Vec<_>>>()?
        };
        out.push(RawTrade {
            timestamp_ns: rec[0].trim().parse().map_err(|_| bad("timestamp_ns"))?,
            buy,
            mid_price: rec[2].trim().parse().map_err(|_| bad("price"))?,
            volume: rec[3].trim().parse().map_err(|_| bad("volume"))?,
            depth_ahead,
        });
    }
    Ok(out)
}

/// Bucket market orders into intervals of `interval_ns` starting at the
/// first timestamp. Intervals without orders carry the previous mid.
/// `order_cap` bounds each credited fill (use `f64::INFINITY` for none).
pub fn aggregate_trades(trades: &[RawTrade], interval_ns: u64, order_cap: f64) -> Result<Vec<IntervalRecord>> {
    if interval_ns == 0 {
        return Err(Error::Config("interval length must be positive".into()));
    }
    let Some(t0) = trades.iter().map(|t| t.timestamp_ns).min() else {
        return Err(Error::Data("no trades to aggregate".into()));
    };
    let mut buckets: BTreeMap<usize, Vec<&RawTrade>> = BTreeMap::new();
    for t in trades {
        buckets.entry(((t.timestamp_ns - t0) / interval_ns) as usize).or_default().push(t);
    }
    let last = *buckets.keys().next_back().expect("non-empty");
    let mut out = Vec::with_capacity(last + 1);
    let mut mid = trades.iter().min_by_key(|t| t.timestamp_ns).expect("non-empty").mid_price;
    for index in 0..=last {
        let mut rec = IntervalRecord {
            index,
            buy_mo: false,
            sell_mo: false,
            mid_price: mid,
            ask_levels: Vec::new(),
            bid_levels: Vec::new(),
        };
        if let Some(orders) = buckets.get_mut(&index) {
            orders.sort_by_key(|t| t.timestamp_ns);
            rec.mid_price = orders[0].mid_price;
            mid = rec.mid_price;
            let mut ask: BTreeMap<u32, f64> = BTreeMap::new();
            let mut bid: BTreeMap<u32, f64> = BTreeMap::new();
            for t in orders.iter() {
                let side = if t.buy {
                    rec.buy_mo = true;
                    &mut ask
                } else {
                    rec.sell_mo = true;
                    &mut bid
                };
                for (l, &ahead) in t.depth_ahead.iter().enumerate() {
                    *side.entry(l as u32 + 1).or_default() += fill_volume(t.volume, ahead, order_cap);
                }
            }
            let to_levels = |m: BTreeMap<u32, f64>| {
                m.into_iter()
                    .map(|(offset, volume)| LevelObs { offset, volume })
                    .collect::<Vec<_>>()
            };
            rec.ask_levels = to_levels(ask);
            rec.bid_levels = to_levels(bid);
        }
        out.push(rec);
    }
    Ok(out)
}

const CALIBRATION_FORMAT: &str = "adaptive-mm-calibration/1";

#[derive(Serialize, Deserialize)]
struct MapDoc {
    kind: ScenarioKind,
    lag: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encode: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    pi_plus: f64,
    pi_minus: f64,
    pi_11: f64,
    visits: u64,
    buys: u64,
    sells: u64,
    both: u64,
    pooled: bool,
    clipped: bool,
}

#[derive(Serialize, Deserialize)]
struct CalibrationDoc {
    format: String,
    options: CalibrationOptions,
    map: MapDoc,
    moments: DemandMoments,
    ask: SideDiagnostics,
    bid: SideDiagnostics,
    scenario: Vec<ScenarioDoc>,
}

impl CalibrationResult {
    /// TOML document holding everything a catalog build needs.
    pub fn to_toml(&self) -> Result<String> {
        let doc = CalibrationDoc {
            format: CALIBRATION_FORMAT.into(),
            options: self.options,
            map: MapDoc {
                kind: self.map.kind(),
                lag: self.map.lag(),
                encode: (self.map.kind() == ScenarioKind::Custom).then(|| self.map.encode_table().to_vec()),
            },
            moments: self.moments,
            ask: nan_free(&self.ask),
            bid: nan_free(&self.bid),
            scenario: self
                .arrivals
                .model
                .all()
                .iter()
                .zip(&self.arrivals.counts)
                .enumerate()
                .map(|(s, (p, c))| ScenarioDoc {
                    pi_plus: p.pi_plus,
                    pi_minus: p.pi_minus,
                    pi_11: p.pi_11,
                    visits: c.visits,
                    buys: c.buys,
                    sells: c.sells,
                    both: c.both,
                    pooled: self.arrivals.pooled[s],
                    clipped: self.arrivals.clipped[s],
                })
                .collect(),
        };
        toml::to_string(&doc).map_err(|e| Error::Data(format!("serializing calibration: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: CalibrationDoc = toml::from_str(text).map_err(|e| Error::Parse(format!("calibration file: {e}")))?;
        if doc.format != CALIBRATION_FORMAT {
            return Err(Error::Parse(format!("unsupported calibration format {:?}", doc.format)));
        }
        let map = ScenarioMap::from_kind(doc.map.kind, doc.map.lag, doc.map.encode)?;
        if doc.scenario.len() != map.scenario_count() {
            return Err(Error::Parse(format!(
                "calibration has {} scenarios, map needs {}",
                doc.scenario.len(),
                map.scenario_count()
            )));
        }
        let model = ArrivalModel::new(
            doc.scenario
                .iter()
                .map(|s| ArrivalProbs::new(s.pi_plus, s.pi_minus, s.pi_11))
                .collect(),
        )?;
        Ok(Self {
            arrivals: ArrivalEstimate {
                model,
                counts: doc
                    .scenario
                    .iter()
                    .map(|s| ArrivalCounts {
                        visits: s.visits,
                        buys: s.buys,
                        sells: s.sells,
                        both: s.both,
                    })
                    .collect(),
                pooled: doc.scenario.iter().map(|s| s.pooled).collect(),
                clipped: doc.scenario.iter().map(|s| s.clipped).collect(),
            },
            map,
            moments: DemandMoments::new(doc.moments.plus, doc.moments.minus)?,
            ask: doc.ask,
            bid: doc.bid,
            options: doc.options,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// TOML has no NaN-free guarantee across readers; store unavailable
/// statistics as zero.
fn nan_free(d: &SideDiagnostics) -> SideDiagnostics {
    let z = |x: f64| if x.is_finite() { x } else { 0.0 };
    SideDiagnostics {
        mean_r_squared: z(d.mean_r_squared),
        c_mean: z(d.c_mean),
        c_sd: z(d.c_sd),
        p_mean: z(d.p_mean),
        p_sd: z(d.p_sd),
        moment_se: d.moment_se.map(z),
        ..d.clone()
    }
}
