use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use adaptive_mm::backtest::{
    compare_strategies, run_backtest, NamedStrategy, RecordedStream, Stream, Strategy,
};
use adaptive_mm::calibration::{aggregate_trades, calibrate, read_intervals_file, read_raw_trades, write_intervals_file};
use adaptive_mm::config::{MarketModel, Override, RunConfig};
use adaptive_mm::model::{validate_symmetry, MoHistory};
use adaptive_mm::oracle::check_instance;
use adaptive_mm::policy::{
    check_admissibility, default_i_max, inventory_diagnostics, quote_with, DriftForecast, InventoryDiagnostics,
    MarketState, QuoteOptions,
};
use adaptive_mm::recursion::{build_catalog, Catalog, CatalogSpec};
use adaptive_mm::simulate::simulate_paths;
use adaptive_mm::{Error, Result};

const FORMATS: &str = "\
CONFIGURATION
  TOML with sections [paths], [model], [calibration], [trading], [simulator]
  and [run]. Any key may be overridden as --section.key=value (or
  --section.key value); the value is read as TOML and falls back to a string,
  e.g. --model.lambda=0.001 --run.levels=[1,2] --model.scenario=g2.
  Defaults: scenario g3, lambda 0.0005, phi 0, n_steps 19800, tick 1,
  clamped fills of 5000 shares, reference moments, seed 7.

EXIT CODES
  0 success            5 model validation       9 verification failed
  2 configuration      6 numerical integrity
  3 file i/o           7 data
  4 parse              8 oracle grid too narrow
  Failures print one line to stderr:
    error kind=<kind> code=<exit code> message=\"<text>\"

INTERVAL CSV (calibrate input, simulate output, backtest input)
  interval_index,buy_mo,sell_mo,mid_price,ask_levels,bid_levels
  levels := \"\" | offset:volume (\";\" offset:volume)*
  buy_mo/sell_mo in {0,1}; offsets are positive ticks from the mid; volume is
  what a resting order at that offset would have filled in the interval.

RAW TRADES CSV (calibrate input when paths.data is unset)
  timestamp_ns,side,price,volume,book_depth_ahead
  side := buy | sell; book_depth_ahead := depth1;depth2;... cumulative
  opposing depth at offsets 1, 2, ... ticks. Rows are bucketed into
  calibration.interval_ns intervals.

CALIBRATION FILE (TOML, format = \"adaptive-mm-calibration/1\")
  [map] kind, lag, encode; [[scenarios]] pi_plus, pi_minus, pi_11 and counts;
  [moments.plus]/[moments.minus] mu_c, mu_p, mu_c2, mu_cp, mu_c2p, mu_c2p2;
  regression diagnostics per side.

CATALOG FILE (text, format = 1)
  key = value header (n_steps, step_seconds, map_kind, lag, scenario_count,
  lambda, phi, mode, xi_horizon, known_drift), then sections [map] (custom
  maps), [moments], [arrivals] and [records] with one CSV row per
  (step, scenario):
  step,scenario,alpha,h,g,a1p,a1m,a2p,a2m,a3p,a3m,drift_coef_p,drift_coef_m
  Reals carry 17 significant digits; read + write is byte-identical.

QUOTE STATE LINE (quote input, --state or first line of stdin)
  step=<k> inventory=<I> mid=<S> history=<h> [reference=<S>] [drift=<d>]
  [forecast=<d1;d2;...>]
  h := pairs most recent first, e.g. 10,01,00 (buy bit, sell bit).
  Output: ask,bid header then one CSV row.

LEDGER CSV (backtest output, <out_dir>/ledger.csv)
  step,scenario,a,b,q_plus,q_minus,W,I,S

REPORT CSV (compare output)
  <out_dir>/compare_summary.csv:
  strategy,runs,objective_mean,objective_sd,objective_diff_mean,
  objective_diff_se,actual_pnl_mean,actual_pnl_sd,actual_pnl_diff_mean,
  actual_pnl_diff_se,mean_sum_inventory_sq
  (diffs are paired against the first strategy, the adaptive catalog)
  <out_dir>/compare_runs.csv: run,strategy,objective,actual_pnl

ORACLE CSV (oracle-check output, <out_dir>/oracle.csv)
  seed,n_steps,scenarios,value_gap,argmax_gap,policy_gap,dominance_excess

RANDOMNESS
  Simulated path i uses ChaCha8 seeded with run.seed on stream i; compare
  pairs every strategy on paths 0..run.runs; oracle instance i uses seed
  run.seed + i. Identical config and seed give byte-identical outputs.";

#[derive(Parser, Debug)]
#[command(
    name = "adaptive-mm",
    version,
    about = "Scenario-adaptive market making: calibrate, build quote catalogs, simulate and backtest",
    after_long_help = FORMATS
)]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate arrivals and demand moments from interval or raw-trade data.
    Calibrate,
    /// Build a quote catalog from the configured model and write it.
    Catalog,
    /// Print the quote for one market state.
    Quote {
        /// State line; read from stdin when absent.
        #[arg(long)]
        state: Option<String>,
    },
    /// Write simulated interval CSVs.
    Simulate,
    /// Run a catalog over recorded or simulated data and write the ledger.
    Backtest,
    /// Compare the adaptive catalog with benchmarks on paired simulated paths.
    Compare,
    /// Admissibility, symmetry and inventory diagnostics for a catalog.
    Diagnose,
    /// Certify closed forms against brute force on random small instances.
    OracleCheck,
}

/// Split `--section.key[=value]` overrides from the arguments clap sees.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let name = body.split('=').next().unwrap_or("");
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let spec = if body.contains('=') {
            body.to_string()
        } else {
            let value = iter
                .next()
                .ok_or_else(|| Error::Config(format!("override --{name} needs a value")))?;
            format!("{name}={value}")
        };
        overrides.push(spec.parse()?);
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (args, overrides) = match split_overrides(args) {
        Ok(split) => split,
        Err(e) => return report(&e),
    };
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    eprintln!("error kind={} code={} message={:?}", e.kind(), e.exit_code(), e.to_string());
    ExitCode::from(e.exit_code() as u8)
}

fn run(cli: Cli, overrides: &[Override]) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), overrides)?;
    match cli.command {
        Command::Calibrate => cmd_calibrate(&cfg),
        Command::Catalog => cmd_catalog(&cfg),
        Command::Quote { state } => cmd_quote(&cfg, state),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Backtest => cmd_backtest(&cfg),
        Command::Compare => cmd_compare(&cfg),
        Command::Diagnose => cmd_diagnose(&cfg),
        Command::OracleCheck => cmd_oracle_check(&cfg),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.paths.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    Ok(dir)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn write_effective_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| io_error(&path, e))
}

fn catalog_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths
        .catalog
        .clone()
        .unwrap_or_else(|| cfg.paths.out_dir.join("catalog.txt"))
}

fn load_catalog(cfg: &RunConfig) -> Result<Catalog> {
    Catalog::read_file(&catalog_path(cfg))
}

fn cmd_calibrate(cfg: &RunConfig) -> Result<()> {
    let data = if let Some(path) = &cfg.paths.data {
        read_intervals_file(path)?
    } else if let Some(path) = &cfg.paths.trades {
        let file = File::open(path).map_err(|e| io_error(path, e))?;
        let trades = read_raw_trades(file)?;
        aggregate_trades(&trades, cfg.calibration.interval_ns, cfg.calibration.order_cap)?
    } else {
        return Err(Error::Config("calibrate needs paths.data or paths.trades".into()));
    };
    let map = cfg.scenario_map()?;
    let result = calibrate(&data, &map, &cfg.calibration_options()?)?;
    let path = cfg
        .paths
        .calibration
        .clone()
        .unwrap_or_else(|| cfg.paths.out_dir.join("calibration.toml"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    result.write_file(&path)?;
    let visited = result.arrivals.pooled.iter().filter(|p| !**p).count();
    println!(
        "calibration intervals={} scenarios={} visited={} clipped={} ask_accepted={} bid_accepted={} file={}",
        data.len(),
        map.scenario_count(),
        visited,
        result.arrivals.clipped.iter().filter(|c| **c).count(),
        result.ask.accepted,
        result.bid.accepted,
        path.display()
    );
    Ok(())
}

fn cmd_catalog(cfg: &RunConfig) -> Result<()> {
    let model = MarketModel::from_config(cfg)?;
    let spec = model.catalog_spec(cfg)?;
    let start = Instant::now();
    let catalog = build_catalog(spec)?;
    let seconds = start.elapsed().as_secs_f64();
    let path = catalog_path(cfg);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    catalog.write_file(&path)?;
    println!(
        "catalog quote_steps={} scenarios={} records={} build_seconds={seconds:.3} file={}",
        catalog.n_steps() + 1,
        catalog.scenario_count(),
        (catalog.n_steps() + 1) * catalog.scenario_count(),
        path.display()
    );
    Ok(())
}

struct StateLine {
    step: usize,
    inventory: f64,
    mid: f64,
    reference: Option<f64>,
    history: MoHistory,
    forecast: DriftForecast,
}

fn parse_state(line: &str) -> Result<StateLine> {
    let (mut step, mut inventory, mut mid, mut history) = (None, None, None, None);
    let mut reference = None;
    let mut forecast = DriftForecast::none();
    let num = |key: &str, v: &str| -> Result<f64> {
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::Parse(format!("state {key}: {v:?} is not a finite number")))
    };
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("state token {token:?} needs key=value")))?;
        match key {
            "step" => {
                step = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| Error::Parse(format!("state step: {value:?}")))?,
                )
            }
            "inventory" => inventory = Some(num(key, value)?),
            "mid" => mid = Some(num(key, value)?),
            "reference" => reference = Some(num(key, value)?),
            "history" => history = Some(value.parse::<MoHistory>()?),
            "drift" => forecast.one_step = num(key, value)?,
            "forecast" => {
                forecast.multi_step = value
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|v| num(key, v))
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Parse(format!("unknown state key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Parse(format!("state line is missing {k}="));
    Ok(StateLine {
        step: step.ok_or_else(|| missing("step"))?,
        inventory: inventory.ok_or_else(|| missing("inventory"))?,
        mid: mid.ok_or_else(|| missing("mid"))?,
        reference,
        history: history.ok_or_else(|| missing("history"))?,
        forecast,
    })
}

fn cmd_quote(cfg: &RunConfig, state: Option<String>) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let line = match state {
        Some(s) => s,
        None => {
            let mut s = String::new();
            std::io::stdin()
                .lock()
                .read_line(&mut s)
                .map_err(|e| io_error(Path::new("<stdin>"), e))?;
            s
        }
    };
    let st = parse_state(&line)?;
    if st.step > catalog.n_steps() {
        return Err(Error::Config(format!(
            "step {} is past the catalog's last quote step {}",
            st.step,
            catalog.n_steps()
        )));
    }
    let market = MarketState {
        step: st.step,
        reference_price: st.reference.unwrap_or(st.mid),
        mid_price: st.mid,
        tick: cfg.trading.tick,
        inventory: st.inventory,
        history: st.history,
    };
    let options = QuoteOptions {
        round_to_tick: cfg.trading.round_to_tick,
    };
    let q = quote_with(&market, &st.forecast, &catalog, options)?;
    println!("ask,bid");
    println!("{},{}", q.ask, q.bid);
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let market = MarketModel::from_config(cfg)?.simulated(cfg)?;
    let dir = out_dir(cfg)?.join("paths");
    std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let paths = simulate_paths(&market.sim, cfg.run.paths)?;
    for path in &paths {
        let records = path.to_interval_records(cfg.calibration.max_offset, cfg.trading.tick);
        write_intervals_file(&dir.join(format!("path_{:05}.csv", path.index)), &records)?;
    }
    write_effective_config(cfg, &cfg.paths.out_dir)?;
    println!(
        "simulate paths={} intervals={} law_residual={:e} dir={}",
        paths.len(),
        market.sim.intervals(),
        market.law_residual,
        dir.display()
    );
    Ok(())
}

fn cmd_backtest(cfg: &RunConfig) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let strategy = Strategy::Catalog {
        catalog: &catalog,
        drift: cfg.drift_source(),
    };
    let params = cfg.backtest_params()?;
    let ledger = if let Some(path) = &cfg.paths.data {
        let records = read_intervals_file(path)?;
        let last = records
            .last()
            .ok_or_else(|| Error::Data(format!("{} has no intervals", path.display())))?;
        let history = cfg.initial_history(catalog.map().lag())?;
        let stream = RecordedStream {
            records: &records,
            initial_history: &history,
            terminal_mid: last.mid_price,
            book: None,
        };
        run_backtest(&strategy, Stream::Recorded(stream), &params)?
    } else {
        let market = MarketModel::from_config(cfg)?.simulated(cfg)?;
        let path = adaptive_mm::simulate::simulate_path(&market.sim, 0);
        run_backtest(&strategy, Stream::Simulated(&path), &params)?
    };
    let dir = out_dir(cfg)?;
    let ledger_path = dir.join("ledger.csv");
    ledger.write_csv(create(&ledger_path)?)?;
    write_effective_config(cfg, dir)?;
    let t = &ledger.terminal;
    let actual = t.actual_pnl().map_or("na".to_string(), |v| v.to_string());
    println!(
        "backtest intervals={} wealth={} inventory={} price={} objective={} running_penalty={} actual_pnl={actual} ledger={}",
        ledger.rows.len(),
        t.wealth,
        t.inventory,
        t.price,
        t.objective,
        t.running_penalty,
        ledger_path.display()
    );
    Ok(())
}

fn cmd_compare(cfg: &RunConfig) -> Result<()> {
    let market = MarketModel::from_config(cfg)?.simulated(cfg)?;
    let spec = market.catalog_spec(cfg)?;
    let adaptive = build_catalog(spec.clone())?;
    let deterministic = if cfg.run.deterministic_benchmark {
        Some(build_catalog(CatalogSpec {
            moments: spec.moments.without_demand_noise(),
            ..spec
        })?)
    } else {
        None
    };
    let mut strategies = vec![NamedStrategy {
        name: "adaptive".into(),
        strategy: Strategy::Catalog {
            catalog: &adaptive,
            drift: cfg.drift_source(),
        },
    }];
    if let Some(det) = &deterministic {
        strategies.push(NamedStrategy {
            name: "deterministic-demand".into(),
            strategy: Strategy::Catalog {
                catalog: det,
                drift: cfg.drift_source(),
            },
        });
    }
    for &level in &cfg.run.levels {
        strategies.push(NamedStrategy {
            name: format!("level-{level}"),
            strategy: Strategy::fixed_level(level)?,
        });
    }
    let start = Instant::now();
    let report = compare_strategies(&strategies, &market.sim, cfg.run.runs, &cfg.backtest_params()?)?;
    let seconds = start.elapsed().as_secs_f64();
    let dir = out_dir(cfg)?;
    report.write_summary_csv(create(&dir.join("compare_summary.csv"))?)?;
    report.write_plot_data(create(&dir.join("compare_runs.csv"))?)?;
    write_effective_config(cfg, dir)?;
    println!("compare runs={} strategies={} seconds={seconds:.2}", cfg.run.runs, strategies.len());
    for s in &report.summaries {
        let se = s.objective_diff.std_error();
        let z = if se > 0.0 { s.objective_diff.mean / se } else { 0.0 };
        println!(
            "strategy={} objective_mean={:.1} objective_sd={:.1} diff_vs_adaptive={:.1} z={z:.2}",
            s.name, s.objective.mean, s.objective.std_dev, s.objective_diff.mean
        );
    }
    Ok(())
}

fn cmd_diagnose(cfg: &RunConfig) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let i_max = default_i_max(catalog.moments());
    let adm = check_admissibility(&catalog, i_max);
    let sym = validate_symmetry(catalog.arrivals(), catalog.moments(), catalog.map());
    println!(
        "symmetry equal_sides={} side_gap={:e} balanced_arrivals={} uncorrelated={} symmetric_map={}",
        sym.equal_sides, sym.side_gap, sym.balanced_arrivals, sym.uncorrelated, sym.symmetric_map
    );
    println!(
        "admissibility i_max={} pairs={} violations={} pairs_with_violations={} worst_step={} worst_scenario={} worst_inventory={} worst_spread_sum={}",
        adm.i_max,
        adm.pairs_checked,
        adm.violation_count,
        adm.pairs_with_violations,
        adm.worst.step,
        adm.worst.scenario,
        adm.worst.inventory,
        adm.worst.spread_sum
    );
    for v in &adm.examples {
        println!(
            "violation step={} scenario={} inventory_lo={} inventory_hi={}",
            v.step, v.scenario, v.inventory_lo, v.inventory_hi
        );
    }
    match inventory_diagnostics(&catalog) {
        InventoryDiagnostics::NotApplicable { reason } => println!("inventory applicable=false reason={reason:?}"),
        InventoryDiagnostics::Factors(f) => println!(
            "inventory applicable=true min_factor={} max_factor={} out_of_bounds={}",
            f.min, f.max, f.out_of_bounds
        ),
    }
    Ok(())
}

const ORACLE_VALUE_TOL: f64 = 1e-6;
const ORACLE_EXACT_TOL: f64 = 1e-10;

fn cmd_oracle_check(cfg: &RunConfig) -> Result<()> {
    let h = cfg.run.oracle_grid_step;
    let start = Instant::now();
    let checks = (0..cfg.run.oracle_instances)
        .into_par_iter()
        .map(|i| check_instance(cfg.run.seed.wrapping_add(i), h, 10))
        .collect::<Result<Vec<_>>>()?;
    let seconds = start.elapsed().as_secs_f64();
    let dir = out_dir(cfg)?;
    let path = dir.join("oracle.csv");
    let mut out = create(&path)?;
    let io = |e| io_error(&path, e);
    writeln!(out, "seed,n_steps,scenarios,value_gap,argmax_gap,policy_gap,dominance_excess").map_err(io)?;
    for c in &checks {
        writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e}",
            c.seed, c.n_steps, c.scenarios, c.value_gap, c.argmax_gap, c.policy_gap, c.dominance_excess
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)?;
    let worst = |f: fn(&adaptive_mm::oracle::InstanceCheck) -> f64| checks.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let (value, policy, dominance) = (worst(|c| c.value_gap), worst(|c| c.policy_gap), worst(|c| c.dominance_excess));
    println!(
        "oracle instances={} grid_step={h} max_value_gap={value:e} max_argmax_gap={:e} max_policy_gap={policy:e} max_dominance_excess={dominance:e} seconds={seconds:.2} report={}",
        checks.len(),
        worst(|c| c.argmax_gap),
        path.display()
    );
    if value > ORACLE_VALUE_TOL || policy > ORACLE_EXACT_TOL || dominance > ORACLE_EXACT_TOL {
        return Err(Error::Verification(format!(
            "oracle tolerances exceeded: value gap {value:e} (tol {ORACLE_VALUE_TOL:e}), policy gap {policy:e}, dominance excess {dominance:e} (tol {ORACLE_EXACT_TOL:e})"
        )));
    }
    Ok(())
}
