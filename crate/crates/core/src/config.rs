//! Run configuration for the command-line front end.
//!
//! A TOML file with the sections below. Every key can be overridden on the
//! command line as `--section.key=value` (or `--section.key value`), where
//! `value` is read as a TOML value and falls back to a string.
//!
//! ```toml
//! [paths]
//! data = "intervals.csv"        # interval CSV (calibrate, backtest)
//! trades = "trades.csv"         # raw trades CSV, used when `data` is unset
//! calibration = "calib.toml"    # calibration file (written / read)
//! catalog = "catalog.txt"       # catalog file (written / read)
//! out_dir = "out"               # reports, ledgers, simulated paths
//!
//! [model]
//! source = "reference"          # reference | calibration
//! scenario = "g3"               # g1 | g2 | g3 | constant
//! lag = 1                       # constant maps only
//! mode = "martingale"           # martingale | one-step-drift | multi-step-drift
//! xi_horizon = 0                # forecast horizon for multi-step-drift
//! lambda = 0.0005
//! phi = 0.0
//! n_steps = 19800
//! step_seconds = 1.0
//! arrival_base = 0.15           # reference arrivals: π± = base + span·activity
//! arrival_span = 0.25
//!
//! [calibration]
//! weights = "inverse-offset"    # inverse-offset | inverse-offset-squared | uniform
//! max_offset = 10
//! epsilon = 1e-4
//! interval_ns = 1000000000      # raw-trade bucketing
//! order_cap = 5000.0            # per-order fill cap for raw trades
//!
//! [trading]
//! tick = 1.0
//! fill = "clamped"              # clamped | linear
//! order_volume = 5000.0
//! placement = "market"          # market | raw
//! round_to_tick = false
//! drift = "trailing"            # trailing | none
//! initial_wealth = 0.0
//! initial_inventory = 0.0
//!
//! [simulator]
//! initial_price = 13000.0
//! move_prob = 0.01
//! drift = []                    # expected change per interval
//! book_levels = 20
//! book_first_depth = 2000.0
//! book_ratio = 1.2
//! initial_history = ""          # e.g. "10,01,00,00"; empty means no orders
//!
//! [run]
//! seed = 7
//! paths = 10
//! runs = 100
//! levels = [1, 2, 3, 4, 5, 6]
//! deterministic_benchmark = true
//! oracle_instances = 200
//! oracle_grid_step = 1e-3
//! ```
//!
//! All randomness derives from `run.seed`: simulated path `i` uses stream
//! `i` of that seed, and `compare` pairs strategies on paths `0..runs`.
//! Oracle instance `i` is generated from seed `run.seed + i`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestParams, DriftSource, FillModel, Placement};
use crate::calibration::{CalibrationOptions, CalibrationResult, WeightScheme};
use crate::error::{Error, Result};
use crate::model::{msft_reference_moments, ArrivalModel, DemandMoments, MoHistory, ObjectiveParams, ScenarioKind, ScenarioMap, TradingSchedule};
use crate::policy::QuoteOptions;
use crate::recursion::{CatalogSpec, DriftMode};
use crate::simulate::{activity_arrivals, fit_demand_law, BookSpec, PriceSpec, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub trades: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data: None,
            trades: None,
            calibration: None,
            catalog: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSource {
    /// Table-1 style moments with activity-driven arrivals.
    Reference,
    /// The calibration file named by `paths.calibration`.
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub source: ModelSource,
    pub scenario: String,
    pub lag: usize,
    pub mode: String,
    pub xi_horizon: usize,
    pub lambda: f64,
    pub phi: f64,
    pub n_steps: usize,
    pub step_seconds: f64,
    pub arrival_base: f64,
    pub arrival_span: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            source: ModelSource::Reference,
            scenario: "g3".into(),
            lag: 1,
            mode: "martingale".into(),
            xi_horizon: 0,
            lambda: 0.0005,
            phi: 0.0,
            n_steps: 19_800,
            step_seconds: 1.0,
            arrival_base: 0.15,
            arrival_span: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub weights: String,
    pub max_offset: u32,
    pub epsilon: f64,
    pub interval_ns: u64,
    pub order_cap: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            weights: "inverse-offset".into(),
            max_offset: 10,
            epsilon: 1e-4,
            interval_ns: 1_000_000_000,
            order_cap: 5000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillKind {
    Clamped,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementKind {
    Market,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftInput {
    Trailing,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TradingSection {
    pub tick: f64,
    pub fill: FillKind,
    pub order_volume: f64,
    pub placement: PlacementKind,
    pub round_to_tick: bool,
    pub drift: DriftInput,
    pub initial_wealth: f64,
    pub initial_inventory: f64,
}

impl Default for TradingSection {
    fn default() -> Self {
        Self {
            tick: 1.0,
            fill: FillKind::Clamped,
            order_volume: 5000.0,
            placement: PlacementKind::Market,
            round_to_tick: false,
            drift: DriftInput::Trailing,
            initial_wealth: 0.0,
            initial_inventory: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub initial_price: f64,
    pub move_prob: f64,
    pub drift: Vec<f64>,
    pub book_levels: usize,
    pub book_first_depth: f64,
    pub book_ratio: f64,
    pub initial_history: String,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        let book = BookSpec::default();
        Self {
            initial_price: 13_000.0,
            move_prob: 0.01,
            drift: Vec::new(),
            book_levels: book.levels,
            book_first_depth: book.first_depth,
            book_ratio: book.ratio,
            initial_history: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub paths: u64,
    pub runs: u64,
    pub levels: Vec<u32>,
    pub deterministic_benchmark: bool,
    pub oracle_instances: u64,
    pub oracle_grid_step: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 7,
            paths: 10,
            runs: 100,
            levels: (1..=6).collect(),
            deterministic_benchmark: true,
            oracle_instances: 200,
            oracle_grid_step: 1e-3,
        }
    }
}

/// Parsed, validated configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub model: ModelSection,
    pub calibration: CalibrationSection,
    pub trading: TradingSection,
    pub simulator: SimulatorSection,
    pub run: RunSection,
}

/// A `section.key = value` override.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Override {
    pub section: String,
    pub key: String,
    pub value: String,
}

impl std::str::FromStr for Override {
    type Err = Error;

    /// Parses `section.key=value`.
    fn from_str(s: &str) -> Result<Self> {
        let (path, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {s:?} needs the form section.key=value")))?;
        let (section, key) = path
            .split_once('.')
            .filter(|(a, b)| !a.is_empty() && !b.is_empty() && !b.contains('.'))
            .ok_or_else(|| Error::Config(format!("override key {path:?} needs the form section.key")))?;
        Ok(Override {
            section: section.to_string(),
            key: key.to_string(),
            value: value.to_string(),
        })
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Parse TOML text and apply overrides in order.
    pub fn from_toml_with(text: &str, overrides: &[Override]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))?;
        for o in overrides {
            let section = table
                .entry(o.section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(section) = section else {
                return Err(Error::Config(format!("config entry {:?} is not a section", o.section)));
            };
            section.insert(o.key.clone(), parse_value(&o.value));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read the optional config file, then apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    /// Effective configuration as TOML, for reproducibility records.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario_map()?;
        self.drift_mode()?;
        self.objective()?;
        self.weight_scheme()?;
        TradingSchedule::new(self.model.n_steps, self.model.step_seconds)?;
        let t = &self.trading;
        if !(t.tick > 0.0 && t.tick.is_finite()) {
            return Err(Error::Config("trading.tick must be positive".into()));
        }
        if !(t.order_volume >= 0.0 && t.order_volume.is_finite()) {
            return Err(Error::Config("trading.order_volume must be >= 0".into()));
        }
        let s = &self.simulator;
        if !(0.0..=1.0).contains(&s.move_prob) {
            return Err(Error::Config("simulator.move_prob must be in [0, 1]".into()));
        }
        if !(s.initial_price > 0.0 && s.initial_price.is_finite()) {
            return Err(Error::Config("simulator.initial_price must be positive".into()));
        }
        if !(s.book_first_depth > 0.0 && s.book_ratio > 0.0 && s.book_levels > 0) {
            return Err(Error::Config("simulator book parameters must be positive".into()));
        }
        if self.run.levels.contains(&0) {
            return Err(Error::Config("run.levels must be >= 1".into()));
        }
        if !(self.run.oracle_grid_step > 0.0) {
            return Err(Error::Config("run.oracle_grid_step must be positive".into()));
        }
        let c = &self.calibration;
        if !(c.epsilon > 0.0 && c.epsilon < 0.5) {
            return Err(Error::Config("calibration.epsilon must be in (0, 0.5)".into()));
        }
        if c.max_offset == 0 || c.interval_ns == 0 {
            return Err(Error::Config("calibration.max_offset and interval_ns must be positive".into()));
        }
        Ok(())
    }

    pub fn scenario_map(&self) -> Result<ScenarioMap> {
        let kind: ScenarioKind = self
            .model
            .scenario
            .parse()
            .map_err(|_| Error::Config(format!("model.scenario: unknown kind {:?}", self.model.scenario)))?;
        match kind {
            ScenarioKind::Constant => ScenarioMap::constant(self.model.lag),
            ScenarioKind::Custom => Err(Error::Config(
                "model.scenario = custom is only available through calibration files".into(),
            )),
            other => ScenarioMap::standard(other),
        }
    }

    pub fn drift_mode(&self) -> Result<DriftMode> {
        match self.model.mode.as_str() {
            "martingale" => Ok(DriftMode::Martingale),
            "one-step-drift" => Ok(DriftMode::OneStep),
            "multi-step-drift" => Ok(DriftMode::MultiStep {
                horizon: self.model.xi_horizon,
            }),
            other => Err(Error::Config(format!("model.mode: unknown mode {other:?}"))),
        }
    }

    pub fn objective(&self) -> Result<ObjectiveParams> {
        ObjectiveParams::new(self.model.lambda, self.model.phi)
    }

    pub fn weight_scheme(&self) -> Result<WeightScheme> {
        self.calibration
            .weights
            .parse()
            .map_err(|_| Error::Config(format!("calibration.weights: unknown scheme {:?}", self.calibration.weights)))
    }

    pub fn schedule(&self) -> Result<TradingSchedule> {
        TradingSchedule::new(self.model.n_steps, self.model.step_seconds)
    }

    pub fn calibration_options(&self) -> Result<CalibrationOptions> {
        Ok(CalibrationOptions {
            weights: self.weight_scheme()?,
            max_offset: self.calibration.max_offset,
            epsilon: self.calibration.epsilon,
            tick: self.trading.tick,
        })
    }

    pub fn backtest_params(&self) -> Result<BacktestParams> {
        let t = &self.trading;
        Ok(BacktestParams {
            objective: self.objective()?,
            fill: match t.fill {
                FillKind::Clamped => FillModel::Clamped {
                    order_volume: t.order_volume,
                },
                FillKind::Linear => FillModel::Linear,
            },
            placement: match t.placement {
                PlacementKind::Market => Placement::Market(QuoteOptions {
                    round_to_tick: t.round_to_tick,
                }),
                PlacementKind::Raw => Placement::Raw,
            },
            tick: t.tick,
            initial_wealth: t.initial_wealth,
            initial_inventory: t.initial_inventory,
        })
    }

    /// Drift input for catalog strategies.
    pub fn drift_source(&self) -> DriftSource {
        match self.trading.drift {
            DriftInput::Trailing => DriftSource::Trailing,
            DriftInput::None => DriftSource::Known(vec![0.0; self.model.n_steps + 1]),
        }
    }

    pub fn initial_history(&self, lag: usize) -> Result<MoHistory> {
        let text = self.simulator.initial_history.trim();
        if text.is_empty() {
            return MoHistory::quiet(lag);
        }
        let h: MoHistory = text.parse()?;
        if h.lag() != lag {
            return Err(Error::Config(format!(
                "simulator.initial_history has lag {}, the scenario map needs {lag}",
                h.lag()
            )));
        }
        Ok(h)
    }
}

/// The market model a run is built on.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub map: ScenarioMap,
    pub arrivals: ArrivalModel,
    /// Calibrated or reference moments.
    pub moments: DemandMoments,
}

/// Finite-support demand laws standing in for a [`MarketModel`]'s moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedMarket {
    pub sim: SimConfig,
    /// Largest relative mismatch between the model's moments and the laws'.
    pub law_residual: f64,
}

impl SimulatedMarket {
    /// Catalog spec matching the simulator exactly.
    pub fn catalog_spec(&self, cfg: &RunConfig) -> Result<CatalogSpec> {
        Ok(CatalogSpec {
            schedule: self.sim.schedule,
            map: self.sim.map.clone(),
            arrivals: self.sim.arrivals.clone(),
            moments: self.sim.moments(),
            objective: cfg.objective()?,
            mode: cfg.drift_mode()?,
        })
    }
}

impl MarketModel {
    /// Resolve the model selected by `model.source`.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        match cfg.model.source {
            ModelSource::Reference => {
                let map = cfg.scenario_map()?;
                let arrivals = activity_arrivals(&map, cfg.model.arrival_base, cfg.model.arrival_span)?;
                Ok(Self {
                    map,
                    arrivals,
                    moments: msft_reference_moments(),
                })
            }
            ModelSource::Calibration => {
                let path = cfg
                    .paths
                    .calibration
                    .as_deref()
                    .ok_or_else(|| Error::Config("model.source = calibration needs paths.calibration".into()))?;
                let cal = CalibrationResult::read_file(path)?;
                Ok(Self {
                    map: cal.map,
                    arrivals: cal.arrivals.model,
                    moments: cal.moments,
                })
            }
        }
    }

    pub fn catalog_spec(&self, cfg: &RunConfig) -> Result<CatalogSpec> {
        Ok(CatalogSpec {
            schedule: cfg.schedule()?,
            map: self.map.clone(),
            arrivals: self.arrivals.clone(),
            moments: self.moments,
            objective: cfg.objective()?,
            mode: cfg.drift_mode()?,
        })
    }

    /// Simulator whose demand laws are fitted to the model's moments.
    pub fn simulated(&self, cfg: &RunConfig) -> Result<SimulatedMarket> {
        let plus = fit_demand_law(&self.moments.plus)?;
        let minus = fit_demand_law(&self.moments.minus)?;
        let s = &cfg.simulator;
        let sim = SimConfig {
            schedule: cfg.schedule()?,
            map: self.map.clone(),
            arrivals: self.arrivals.clone(),
            demand_plus: plus.law.clone(),
            demand_minus: minus.law.clone(),
            price: PriceSpec {
                initial: s.initial_price,
                tick: cfg.trading.tick,
                move_prob: s.move_prob,
                drift: s.drift.clone(),
            },
            book: BookSpec {
                levels: s.book_levels,
                first_depth: s.book_first_depth,
                ratio: s.book_ratio,
            },
            initial_history: cfg.initial_history(self.map.lag())?,
            seed: cfg.run.seed,
        };
        sim.validate()?;
        Ok(SimulatedMarket {
            sim,
            law_residual: plus.max_residual().max(minus.max_residual()),
        })
    }
}
