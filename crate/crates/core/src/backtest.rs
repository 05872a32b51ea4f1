//! Strategy evaluation over simulated or recorded interval streams.
//!
//! Wealth and inventory move as `W' = W + a·Q̃⁺ − b·Q̃⁻` and
//! `I' = I − Q̃⁺ + Q̃⁻`. At the horizon the position is marked both with the
//! quadratic proxy `W + S·I − λI²` and by walking the book.

use std::io::Write;

use rayon::prelude::*;

use crate::calibration::{forecast_drift, IntervalRecord, LevelObs};
use crate::error::{Error, Result};
use crate::model::{MoHistory, ObjectiveParams};
use crate::policy::{place, raw_spreads, DriftForecast, QuoteOptions};
use crate::recursion::{Catalog, DriftMode};
use crate::simulate::{simulate_path, walk_book_liquidation, BookSnapshot, Liquidation, SimConfig, SimPath};

/// Shares a resting order of size `v_lo` receives when a market order of
/// size `v_m` arrives with `v_l` shares queued ahead.
pub fn fill_volume(v_m: f64, v_l: f64, v_lo: f64) -> f64 {
    (v_m - v_l).max(0.0).min(v_lo)
}

/// Where drift forecasts come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftSource {
    /// Mean of the last five observed mid changes; zero until six are seen.
    Trailing,
    /// Expected change over each interval, known in advance.
    Known(Vec<f64>),
}

#[derive(Debug, Clone)]
pub enum Strategy<'a> {
    Catalog { catalog: &'a Catalog, drift: DriftSource },
    /// Catalog spreads widened by `widen` on both sides, for sensitivity
    /// checks.
    Widened { catalog: &'a Catalog, widen: f64 },
    /// Quote `mid ± level·tick`.
    FixedLevel(u32),
}

impl<'a> Strategy<'a> {
    pub fn catalog(catalog: &'a Catalog) -> Self {
        Strategy::Catalog {
            catalog,
            drift: DriftSource::Trailing,
        }
    }

    fn catalog_ref(&self) -> Option<&'a Catalog> {
        match self {
            Strategy::Catalog { catalog, .. } | Strategy::Widened { catalog, .. } => Some(catalog),
            Strategy::FixedLevel(_) => None,
        }
    }

    pub fn fixed_level(level: u32) -> Result<Self> {
        if level == 0 {
            return Err(Error::Config("fixed-level strategies need level >= 1".into()));
        }
        Ok(Strategy::FixedLevel(level))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillModel {
    /// `clamp(c·(p − L), 0, order_volume)` on arrival.
    Clamped { order_volume: f64 },
    /// The unclamped linear demand `c·(p − L)`, possibly negative.
    Linear,
}

/// How catalog spreads become prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// `S + L⁺`, `S − L⁻` as computed, even if they cross.
    Raw,
    /// Clamped to the book, optionally rounded to ticks.
    Market(QuoteOptions),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestParams {
    pub objective: ObjectiveParams,
    pub fill: FillModel,
    pub placement: Placement,
    pub tick: f64,
    pub initial_wealth: f64,
    pub initial_inventory: f64,
}

impl BacktestParams {
    fn validate(&self) -> Result<()> {
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return Err(Error::Config("tick must be positive".into()));
        }
        if let FillModel::Clamped { order_volume } = self.fill {
            if !(order_volume >= 0.0) {
                return Err(Error::Config("order volume must be >= 0".into()));
            }
        }
        if !(self.initial_wealth.is_finite() && self.initial_inventory.is_finite()) {
            return Err(Error::Config("initial wealth and inventory must be finite".into()));
        }
        Ok(())
    }
}

/// Recorded intervals with the history preceding the first one.
#[derive(Debug, Clone, Copy)]
pub struct RecordedStream<'a> {
    pub records: &'a [IntervalRecord],
    pub initial_history: &'a MoHistory,
    pub terminal_mid: f64,
    pub book: Option<&'a BookSnapshot>,
}

#[derive(Debug, Clone, Copy)]
pub enum Stream<'a> {
    Simulated(&'a SimPath),
    Recorded(RecordedStream<'a>),
}

impl Stream<'_> {
    fn len(&self) -> usize {
        match self {
            Stream::Simulated(p) => p.steps.len(),
            Stream::Recorded(r) => r.records.len(),
        }
    }

    fn initial_history(&self) -> &MoHistory {
        match self {
            Stream::Simulated(p) => &p.initial_history,
            Stream::Recorded(r) => r.initial_history,
        }
    }
}

/// One interval of a run; wealth and inventory are after the fills.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub step: usize,
    pub scenario: usize,
    pub mid: f64,
    pub ask: f64,
    pub bid: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub wealth: f64,
    pub inventory: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalSummary {
    pub wealth: f64,
    pub inventory: f64,
    pub price: f64,
    /// `W + S·I − λI²`.
    pub objective: f64,
    /// `φ·Σ I²` over the inventories after each interval.
    pub running_penalty: f64,
    /// Walk-the-book outcome, when a book is available.
    pub liquidation: Option<Liquidation>,
}

impl TerminalSummary {
    /// `objective − running_penalty`, the quantity the catalog maximizes.
    pub fn penalized_objective(&self) -> f64 {
        self.objective - self.running_penalty
    }

    /// `W + S̄·I` with the walk-the-book price.
    pub fn actual_pnl(&self) -> Option<f64> {
        self.liquidation.map(|l| self.wealth + l.proceeds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestLedger {
    pub initial_wealth: f64,
    pub initial_inventory: f64,
    pub rows: Vec<LedgerRow>,
    pub terminal: TerminalSummary,
}

impl BacktestLedger {
    /// Largest deviation from the wealth and inventory identities.
    pub fn identity_error(&self) -> f64 {
        let mut w = self.initial_wealth;
        let mut i = self.initial_inventory;
        let mut worst = 0.0f64;
        for r in &self.rows {
            let w_next = w + r.ask * r.q_plus - r.bid * r.q_minus;
            let i_next = i - r.q_plus + r.q_minus;
            worst = worst.max((w_next - r.wealth).abs()).max((i_next - r.inventory).abs());
            w = r.wealth;
            i = r.inventory;
        }
        worst
    }

    /// Per-interval CSV: `step,scenario,a,b,q_plus,q_minus,W,I,S`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Data(format!("writing ledger: {e}"));
        wtr.write_record(["step", "scenario", "a", "b", "q_plus", "q_minus", "W", "I", "S"])
            .map_err(err)?;
        for r in &self.rows {
            wtr.write_record([
                r.step.to_string(),
                r.scenario.to_string(),
                r.ask.to_string(),
                r.bid.to_string(),
                r.q_plus.to_string(),
                r.q_minus.to_string(),
                r.wealth.to_string(),
                r.inventory.to_string(),
                r.mid.to_string(),
            ])
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::Data(format!("writing ledger: {e}")))
    }
}

fn catalog_forecast(source: &DriftSource, mids: &[f64], step: usize, mode: DriftMode, n_steps: usize) -> DriftForecast {
    match (mode, source) {
        (DriftMode::Martingale, _) => DriftForecast::none(),
        (_, DriftSource::Trailing) => {
            forecast_drift(mids).unwrap_or_else(|_| DriftForecast::none())
        }
        (DriftMode::OneStep, DriftSource::Known(d)) => DriftForecast::one_step(d.get(step).copied().unwrap_or(0.0)),
        (DriftMode::MultiStep { .. }, DriftSource::Known(d)) => DriftForecast {
            one_step: d.get(step).copied().unwrap_or(0.0),
            multi_step: (step + 1..=n_steps).map(|i| d.get(i).copied().unwrap_or(0.0)).collect(),
        },
    }
}

fn level_fill(levels: &[LevelObs], offset: u32) -> f64 {
    levels.iter().find(|l| l.offset == offset).map_or(0.0, |l| l.volume)
}

fn linear_fill(draw: Option<(f64, f64)>, spread: f64, fill: FillModel) -> f64 {
    let Some((c, p)) = draw else { return 0.0 };
    let q = c * (p - spread);
    match fill {
        FillModel::Linear => q,
        FillModel::Clamped { order_volume } => q.clamp(0.0, order_volume),
    }
}

/// Run one strategy over one stream.
pub fn run_backtest(strategy: &Strategy<'_>, stream: Stream<'_>, params: &BacktestParams) -> Result<BacktestLedger> {
    params.validate()?;
    let n = stream.len();
    if n == 0 {
        return Err(Error::Data("stream has no intervals".into()));
    }
    if let Some(catalog) = strategy.catalog_ref() {
        if catalog.n_steps() + 1 != n {
            return Err(Error::Config(format!(
                "catalog quotes {} intervals but the stream has {n}",
                catalog.n_steps() + 1
            )));
        }
    }
    let tick = params.tick;
    let lambda = params.objective.lambda;
    let phi = params.objective.phi;
    let mut wealth = params.initial_wealth;
    let mut inventory = params.initial_inventory;
    let mut sum_sq = 0.0;
    let mut rows = Vec::with_capacity(n);
    let mut mids: Vec<f64> = Vec::with_capacity(n);
    let history = stream.initial_history();
    let mut scenario = match strategy.catalog_ref() {
        Some(catalog) => catalog.map().encode_history(history)?.index(),
        None => 0,
    };
    for k in 0..n {
        let (mid, pair) = match stream {
            Stream::Simulated(p) => (p.steps[k].mid, p.steps[k].pair),
            Stream::Recorded(r) => (r.records[k].mid_price, r.records[k].pair()),
        };
        mids.push(mid);
        if let Stream::Simulated(p) = stream {
            if strategy.catalog_ref().is_some() && p.steps[k].scenario != scenario {
                return Err(Error::Integrity {
                    step: k,
                    scenario,
                    detail: format!("stream scenario {} differs from the catalog map", p.steps[k].scenario),
                });
            }
        }
        let (ask, bid) = match strategy {
            Strategy::FixedLevel(level) => (mid + *level as f64 * tick, mid - *level as f64 * tick),
            Strategy::Catalog { catalog, drift } => {
                let forecast = catalog_forecast(drift, &mids, k, catalog.mode(), catalog.n_steps());
                let (lp, lm) = raw_spreads(catalog, k, scenario, inventory, &forecast)?;
                match params.placement {
                    Placement::Raw => (mid + lp, mid - lm),
                    Placement::Market(opts) => {
                        let q = place(mid, mid, tick, lp, lm, opts);
                        (q.ask, q.bid)
                    }
                }
            }
            Strategy::Widened { catalog, widen } => {
                let (lp, lm) = raw_spreads(catalog, k, scenario, inventory, &DriftForecast::none())?;
                (mid + lp + widen, mid - lm - widen)
            }
        };
        let (q_plus, q_minus) = match stream {
            Stream::Simulated(p) => {
                let s = &p.steps[k];
                (linear_fill(s.plus, ask - mid, params.fill), linear_fill(s.minus, mid - bid, params.fill))
            }
            Stream::Recorded(r) => {
                let rec = &r.records[k];
                let offset = |d: f64| ((d / tick) - 1e-9).ceil().max(1.0) as u32;
                let cap = match params.fill {
                    FillModel::Clamped { order_volume } => order_volume,
                    FillModel::Linear => f64::INFINITY,
                };
                let qp = if rec.buy_mo {
                    fill_volume(level_fill(&rec.ask_levels, offset(ask - mid)), 0.0, cap)
                } else {
                    0.0
                };
                let qm = if rec.sell_mo {
                    fill_volume(level_fill(&rec.bid_levels, offset(mid - bid)), 0.0, cap)
                } else {
                    0.0
                };
                (qp, qm)
            }
        };
        wealth += ask * q_plus - bid * q_minus;
        inventory += q_minus - q_plus;
        sum_sq += inventory * inventory;
        rows.push(LedgerRow {
            step: k,
            scenario,
            mid,
            ask,
            bid,
            q_plus,
            q_minus,
            wealth,
            inventory,
        });
        if let Some(catalog) = strategy.catalog_ref() {
            scenario = catalog.map().next(scenario, pair.code());
        }
    }
    let (price, book) = match stream {
        Stream::Simulated(p) => (p.terminal_mid, Some(&p.book)),
        Stream::Recorded(r) => (r.terminal_mid, r.book),
    };
    let liquidation = match book {
        Some(b) => Some(walk_book_liquidation(inventory, b)?),
        None => None,
    };
    Ok(BacktestLedger {
        initial_wealth: params.initial_wealth,
        initial_inventory: params.initial_inventory,
        rows,
        terminal: TerminalSummary {
            wealth,
            inventory,
            price,
            objective: wealth + price * inventory - lambda * inventory * inventory,
            running_penalty: phi * sum_sq,
            liquidation,
        },
    })
}

/// A strategy with a display name.
#[derive(Debug, Clone)]
pub struct NamedStrategy<'a> {
    pub name: String,
    pub strategy: Strategy<'a>,
}

/// Terminal numbers of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub objective: f64,
    pub penalized_objective: f64,
    pub actual_pnl: f64,
    pub inventory: f64,
    pub sum_inventory_sq: f64,
}

impl RunOutcome {
    fn of(ledger: &BacktestLedger, phi: f64) -> Self {
        let t = &ledger.terminal;
        Self {
            objective: t.objective,
            penalized_objective: t.penalized_objective(),
            actual_pnl: t.actual_pnl().unwrap_or(f64::NAN),
            inventory: t.inventory,
            sum_inventory_sq: if phi > 0.0 {
                t.running_penalty / phi
            } else {
                ledger.rows.iter().map(|r| r.inventory * r.inventory).sum()
            },
        }
    }
}

/// Sample mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub std_dev: f64,
    pub n: usize,
}

impl SampleStats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_dev: var.sqrt(),
            n,
        }
    }

    pub fn std_error(&self) -> f64 {
        self.std_dev / (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub name: String,
    pub objective: SampleStats,
    pub actual_pnl: SampleStats,
    /// Per-run difference from the reference strategy (index 0).
    pub objective_diff: SampleStats,
    pub actual_pnl_diff: SampleStats,
    pub mean_sum_inventory_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub names: Vec<String>,
    /// `outcomes[run][strategy]`.
    pub outcomes: Vec<Vec<RunOutcome>>,
    pub summaries: Vec<StrategySummary>,
}

impl ComparisonReport {
    pub fn summary(&self, name: &str) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    /// Paired difference `a − b` of the objective across runs.
    pub fn paired_objective_diff(&self, a: usize, b: usize) -> SampleStats {
        SampleStats::of(self.outcomes.iter().map(|r| r[a].objective - r[b].objective))
    }

    /// Paired difference `a − b` of the walk-the-book PnL across runs.
    pub fn paired_actual_diff(&self, a: usize, b: usize) -> SampleStats {
        SampleStats::of(self.outcomes.iter().map(|r| r[a].actual_pnl - r[b].actual_pnl))
    }

    /// Summary table, one row per strategy.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Data(format!("writing report: {e}"));
        wtr.write_record([
            "strategy",
            "runs",
            "objective_mean",
            "objective_sd",
            "objective_diff_mean",
            "objective_diff_se",
            "actual_pnl_mean",
            "actual_pnl_sd",
            "actual_pnl_diff_mean",
            "actual_pnl_diff_se",
            "mean_sum_inventory_sq",
        ])
        .map_err(err)?;
        for s in &self.summaries {
            wtr.write_record([
                s.name.clone(),
                s.objective.n.to_string(),
                s.objective.mean.to_string(),
                s.objective.std_dev.to_string(),
                s.objective_diff.mean.to_string(),
                s.objective_diff.std_error().to_string(),
                s.actual_pnl.mean.to_string(),
                s.actual_pnl.std_dev.to_string(),
                s.actual_pnl_diff.mean.to_string(),
                s.actual_pnl_diff.std_error().to_string(),
                s.mean_sum_inventory_sq.to_string(),
            ])
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::Data(format!("writing report: {e}")))
    }

    /// Long-format plot data: `run,strategy,objective,actual_pnl`.
    pub fn write_plot_data<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Data(format!("writing plot data: {e}"));
        wtr.write_record(["run", "strategy", "objective", "actual_pnl"]).map_err(err)?;
        for (run, row) in self.outcomes.iter().enumerate() {
            for (name, o) in self.names.iter().zip(row) {
                wtr.write_record([
                    run.to_string(),
                    name.clone(),
                    o.objective.to_string(),
                    o.actual_pnl.to_string(),
                ])
                .map_err(err)?;
            }
        }
        wtr.flush().map_err(|e| Error::Data(format!("writing plot data: {e}")))
    }
}

/// Run every strategy on the same simulated paths `0..n_runs`.
pub fn compare_strategies(
    strategies: &[NamedStrategy<'_>],
    cfg: &SimConfig,
    n_runs: u64,
    params: &BacktestParams,
) -> Result<ComparisonReport> {
    if strategies.is_empty() || n_runs == 0 {
        return Err(Error::Config("need at least one strategy and one run".into()));
    }
    cfg.validate()?;
    let phi = params.objective.phi;
    let outcomes = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let path = simulate_path(cfg, run);
            strategies
                .iter()
                .map(|s| run_backtest(&s.strategy, Stream::Simulated(&path), params).map(|l| RunOutcome::of(&l, phi)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = strategies
        .iter()
        .enumerate()
        .map(|(j, s)| StrategySummary {
            name: s.name.clone(),
            objective: SampleStats::of(outcomes.iter().map(|r| r[j].objective)),
            actual_pnl: SampleStats::of(outcomes.iter().map(|r| r[j].actual_pnl)),
            objective_diff: SampleStats::of(outcomes.iter().map(|r| r[j].objective - r[0].objective)),
            actual_pnl_diff: SampleStats::of(outcomes.iter().map(|r| r[j].actual_pnl - r[0].actual_pnl)),
            mean_sum_inventory_sq: outcomes.iter().map(|r| r[j].sum_inventory_sq).sum::<f64>() / outcomes.len() as f64,
        })
        .collect();
    Ok(ComparisonReport {
        names: strategies.iter().map(|s| s.name.clone()).collect(),
        outcomes,
        summaries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    /// Mean of `W + S·I − λI² − φΣI²` at the horizon.
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
    /// Mean inventory after each interval, with standard errors.
    pub inventory_mean: Vec<f64>,
    pub inventory_se: Vec<f64>,
    /// Set when the simulator's demand moments differ from the catalog's.
    pub warning: Option<String>,
}

const CHUNK: u64 = 1024;

/// Per-chunk running sums, combined in chunk order for reproducibility.
#[derive(Clone)]
struct Sums {
    n: f64,
    value: f64,
    value_sq: f64,
    inv: Vec<f64>,
    inv_sq: Vec<f64>,
}

/// Expected penalized objective of a strategy by simulation.
pub fn monte_carlo_value(
    strategy: &Strategy<'_>,
    cfg: &SimConfig,
    n_paths: u64,
    params: &BacktestParams,
) -> Result<MonteCarloEstimate> {
    if n_paths < 2 {
        return Err(Error::Config("monte carlo needs at least two paths".into()));
    }
    cfg.validate()?;
    let warning = strategy.catalog_ref().and_then(|c| moment_gap_warning(c, cfg));
    let len = cfg.intervals();
    let chunks: Vec<Sums> = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s = Sums {
                n: 0.0,
                value: 0.0,
                value_sq: 0.0,
                inv: vec![0.0; len],
                inv_sq: vec![0.0; len],
            };
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                let path = simulate_path(cfg, i);
                let ledger = run_backtest(strategy, Stream::Simulated(&path), params)?;
                let v = ledger.terminal.penalized_objective();
                s.n += 1.0;
                s.value += v;
                s.value_sq += v * v;
                for (k, r) in ledger.rows.iter().enumerate() {
                    s.inv[k] += r.inventory;
                    s.inv_sq[k] += r.inventory * r.inventory;
                }
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = chunks[0].clone();
    for c in &chunks[1..] {
        total.n += c.n;
        total.value += c.value;
        total.value_sq += c.value_sq;
        for k in 0..len {
            total.inv[k] += c.inv[k];
            total.inv_sq[k] += c.inv_sq[k];
        }
    }
    let n = total.n;
    let se = |sum: f64, sum_sq: f64| {
        let mean = sum / n;
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    };
    let (mean, std_error) = se(total.value, total.value_sq);
    let (inventory_mean, inventory_se) = (0..len).map(|k| se(total.inv[k], total.inv_sq[k])).unzip();
    Ok(MonteCarloEstimate {
        mean,
        std_error,
        n_paths,
        inventory_mean,
        inventory_se,
        warning,
    })
}

fn moment_gap_warning(catalog: &Catalog, cfg: &SimConfig) -> Option<String> {
    let sim = cfg.moments();
    let cat = catalog.moments();
    let gap = sim
        .plus
        .as_array()
        .iter()
        .chain(sim.minus.as_array().iter())
        .zip(cat.plus.as_array().iter().chain(cat.minus.as_array().iter()))
        .map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    (gap > 1e-9).then(|| format!("simulator demand moments differ from the catalog's by up to {gap:.3e} (relative)"))
}
