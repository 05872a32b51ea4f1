mod common;

use adaptive_mm::backtest::{
    compare_strategies, fill_volume, monte_carlo_value, run_backtest, BacktestParams, FillModel,
    NamedStrategy, Placement, RecordedStream, Stream, Strategy,
};
use adaptive_mm::calibration::{IntervalRecord, LevelObs};
use adaptive_mm::model::{ArrivalModel, ArrivalProbs, MoHistory, MoPair, ObjectiveParams, ScenarioMap, TradingSchedule};
use adaptive_mm::policy::QuoteOptions;
use adaptive_mm::recursion::{build_catalog, build_catalog_with_known_drift, CatalogSpec, DriftMode};
use adaptive_mm::simulate::{
    fit_demand_law, simulate_path, BookSnapshot, BookSpec, DemandAtom, DemandLaw, PriceSpec, SimConfig, SimPath,
    SimStep,
};
use adaptive_mm::Error;
use proptest::prelude::*;

fn params(lambda: f64, phi: f64) -> BacktestParams {
    BacktestParams {
        objective: ObjectiveParams::new(lambda, phi).unwrap(),
        fill: FillModel::Linear,
        placement: Placement::Raw,
        tick: 1.0,
        initial_wealth: 0.0,
        initial_inventory: 0.0,
    }
}

fn quiet_path(len: usize, mid: f64) -> SimPath {
    SimPath {
        index: 0,
        initial_history: MoHistory::quiet(1).unwrap(),
        steps: (0..len)
            .map(|_| SimStep {
                scenario: 0,
                pair: MoPair::NONE,
                mid,
                plus: None,
                minus: None,
            })
            .collect(),
        terminal_mid: mid,
        book: BookSpec::default().snapshot(mid, 0.01),
    }
}

/// Unit-scale G2 model whose demand laws match the catalog moments exactly.
fn g2_setup(n_steps: usize, lambda: f64, phi: f64, symmetric: bool, seed: u64) -> (CatalogSpec, SimConfig) {
    let map = ScenarioMap::g2();
    let arrivals = ArrivalModel::new(
        (0..27)
            .map(|s| {
                let pp = 0.2 + 0.04 * (s % 5) as f64;
                let pm = if symmetric { pp } else { 0.25 + 0.03 * (s % 4) as f64 };
                ArrivalProbs::new(pp, pm, 0.3 * pp.min(pm))
            })
            .collect(),
    )
    .unwrap();
    let plus = DemandLaw::new(vec![
        DemandAtom { c: 0.6, p: 2.2, weight: 0.5 },
        DemandAtom { c: 1.4, p: 2.8, weight: 0.5 },
    ])
    .unwrap();
    let minus = if symmetric {
        plus.clone()
    } else {
        DemandLaw::new(vec![
            DemandAtom { c: 0.8, p: 3.0, weight: 0.3 },
            DemandAtom { c: 1.2, p: 2.0, weight: 0.7 },
        ])
        .unwrap()
    };
    let cfg = SimConfig {
        schedule: TradingSchedule::new(n_steps, 1.0).unwrap(),
        map: map.clone(),
        arrivals: arrivals.clone(),
        demand_plus: plus,
        demand_minus: minus,
        price: PriceSpec {
            initial: 100.0,
            tick: 1.0,
            move_prob: 0.2,
            drift: Vec::new(),
        },
        book: BookSpec::default(),
        initial_history: "10,01,00".parse().unwrap(),
        seed,
    };
    let spec = CatalogSpec {
        schedule: cfg.schedule,
        map,
        arrivals,
        moments: cfg.moments(),
        objective: ObjectiveParams::new(lambda, phi).unwrap(),
        mode: DriftMode::Martingale,
    };
    (spec, cfg)
}

#[test]
fn fill_volume_examples() {
    assert_eq!(fill_volume(300.0, 250.0, 100.0), 50.0);
    assert_eq!(fill_volume(200.0, 250.0, 100.0), 0.0);
    assert_eq!(fill_volume(500.0, 250.0, 100.0), 100.0);
}

#[test]
fn no_arrivals_means_no_pnl() {
    let path = quiet_path(20, 100.0);
    for s in [Strategy::fixed_level(1).unwrap(), Strategy::fixed_level(4).unwrap()] {
        let l = run_backtest(&s, Stream::Simulated(&path), &params(0.1, 0.0)).unwrap();
        assert_eq!((l.terminal.wealth, l.terminal.inventory, l.terminal.objective), (0.0, 0.0, 0.0));
        assert_eq!(l.terminal.actual_pnl(), Some(0.0));
    }
}

#[test]
fn terminal_objective_with_inventory() {
    let path = quiet_path(3, 50.0);
    let p = BacktestParams {
        initial_inventory: 100.0,
        ..params(0.0005, 0.0)
    };
    let l = run_backtest(&Strategy::fixed_level(2).unwrap(), Stream::Simulated(&path), &p).unwrap();
    assert!((l.terminal.objective - 4995.0).abs() < 1e-9);
}

#[test]
fn single_interval_hand_example() {
    let mut path = quiet_path(1, 50.0);
    path.steps[0].pair = MoPair::new(true, true);
    path.steps[0].plus = Some((100.0, 3.0));
    path.steps[0].minus = Some((100.0, 3.0));
    // Level 1 with a tick of 1.5 quotes L± = 1.5.
    let p = BacktestParams {
        tick: 1.5,
        fill: FillModel::Clamped { order_volume: 1000.0 },
        ..params(0.0005, 0.0)
    };
    let l = run_backtest(&Strategy::fixed_level(1).unwrap(), Stream::Simulated(&path), &p).unwrap();
    let r = l.rows[0];
    assert_eq!((r.ask, r.bid, r.q_plus, r.q_minus), (51.5, 48.5, 150.0, 150.0));
    assert!((r.wealth - 450.0).abs() < 1e-9);
    assert_eq!(r.inventory, 0.0);
    // The cap binds when the order is smaller than the demand.
    let capped = BacktestParams {
        fill: FillModel::Clamped { order_volume: 100.0 },
        ..p
    };
    let l = run_backtest(&Strategy::fixed_level(1).unwrap(), Stream::Simulated(&path), &capped).unwrap();
    assert_eq!((l.rows[0].q_plus, l.rows[0].q_minus), (100.0, 100.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn ledger_identities_hold(seed in 0u64..1_000, level in 1u32..6, clamp in any::<bool>()) {
        let (spec, cfg) = g2_setup(40, 0.05, 0.0, false, seed);
        let cat = build_catalog(spec).unwrap();
        let path = simulate_path(&cfg, 0);
        let p = BacktestParams {
            fill: if clamp { FillModel::Clamped { order_volume: 1.5 } } else { FillModel::Linear },
            placement: if clamp { Placement::Market(QuoteOptions { round_to_tick: true }) } else { Placement::Raw },
            ..params(0.05, 0.01)
        };
        for s in [Strategy::catalog(&cat), Strategy::fixed_level(level).unwrap()] {
            let l = run_backtest(&s, Stream::Simulated(&path), &p).unwrap();
            prop_assert!(l.identity_error() < 1e-9);
            if clamp {
                prop_assert!(l.rows.iter().all(|r| (0.0..=1.5).contains(&r.q_plus) && (0.0..=1.5).contains(&r.q_minus)));
                prop_assert!(l.rows.iter().all(|r| r.ask > r.mid && r.bid < r.mid));
            }
            let sum_sq: f64 = l.rows.iter().map(|r| r.inventory * r.inventory).sum();
            prop_assert!((l.terminal.running_penalty - 0.01 * sum_sq).abs() < 1e-9 * sum_sq.max(1.0));
        }
    }
}

#[test]
fn step_count_mismatch_is_an_error() {
    let (spec, cfg) = g2_setup(10, 0.05, 0.0, true, 0);
    let cat = build_catalog(spec).unwrap();
    let path = simulate_path(&SimConfig { schedule: TradingSchedule::new(12, 1.0).unwrap(), ..cfg }, 0);
    assert!(matches!(
        run_backtest(&Strategy::catalog(&cat), Stream::Simulated(&path), &params(0.05, 0.0)),
        Err(Error::Config(_))
    ));
    assert!(matches!(Strategy::fixed_level(0), Err(Error::Config(_))));
}

#[test]
fn single_strategy_comparison_is_self_consistent() {
    let (_, cfg) = g2_setup(30, 0.05, 0.0, true, 3);
    let strategies = [NamedStrategy {
        name: "level-1".into(),
        strategy: Strategy::fixed_level(1).unwrap(),
    }];
    let report = compare_strategies(&strategies, &cfg, 50, &params(0.05, 0.0)).unwrap();
    let direct: Vec<f64> = (0..50)
        .map(|r| {
            let path = simulate_path(&cfg, r);
            run_backtest(&strategies[0].strategy, Stream::Simulated(&path), &params(0.05, 0.0))
                .unwrap()
                .terminal
                .objective
        })
        .collect();
    let mean = direct.iter().sum::<f64>() / 50.0;
    let s = report.summary("level-1").unwrap();
    assert!((s.objective.mean - mean).abs() < 1e-9 * mean.abs().max(1.0));
    assert_eq!(s.objective_diff.mean, 0.0);
    let mut a = Vec::new();
    let mut b = Vec::new();
    report.write_summary_csv(&mut a).unwrap();
    compare_strategies(&strategies, &cfg, 50, &params(0.05, 0.0))
        .unwrap()
        .write_summary_csv(&mut b)
        .unwrap();
    assert_eq!(a, b, "reports must be reproducible");
    let mut plot = Vec::new();
    report.write_plot_data(&mut plot).unwrap();
    assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 51);
}

#[test]
fn monte_carlo_matches_the_value_function() {
    let (spec, cfg) = g2_setup(20, 0.05, 0.0, false, 7);
    let cat = build_catalog(spec).unwrap();
    let s0 = cfg.initial_scenario();
    for q in [0.0, 3.0] {
        let p = BacktestParams {
            initial_inventory: q,
            ..params(0.05, 0.0)
        };
        let est = monte_carlo_value(&Strategy::catalog(&cat), &cfg, 20_000, &p).unwrap();
        assert!(est.warning.is_none());
        let ansatz = cat.value_at(0, s0, 0.0, cfg.price.initial, q);
        assert!(
            (est.mean - ansatz).abs() < 3.0 * est.std_error,
            "q={q}: mc {} ± {} vs {ansatz}",
            est.mean,
            est.std_error
        );
    }
}

#[test]
fn shifted_quotes_do_not_beat_the_catalog() {
    let (spec, cfg) = g2_setup(20, 0.05, 0.0, false, 8);
    let cat = build_catalog(spec).unwrap();
    let base = monte_carlo_value(&Strategy::catalog(&cat), &cfg, 20_000, &params(0.05, 0.0)).unwrap();
    let mut rivals = vec![
        Strategy::Widened { catalog: &cat, widen: 1.0 },
        Strategy::Widened { catalog: &cat, widen: -0.5 },
    ];
    rivals.extend((1..=3).map(|l| Strategy::fixed_level(l).unwrap()));
    for s in &rivals {
        let alt = monte_carlo_value(s, &cfg, 20_000, &params(0.05, 0.0)).unwrap();
        assert!(alt.mean <= base.mean + 3.0 * base.std_error.hypot(alt.std_error), "{s:?}");
    }
}

#[test]
fn known_drift_catalog_matches_simulation() {
    let (spec, mut cfg) = g2_setup(15, 0.05, 0.0, false, 9);
    let drift: Vec<f64> = (0..=15).map(|k| 0.05 * ((k % 4) as f64 - 1.5)).collect();
    cfg.price.drift = drift.clone();
    let cat = build_catalog_with_known_drift(spec, drift).unwrap();
    let est = monte_carlo_value(&Strategy::catalog(&cat), &cfg, 20_000, &params(0.05, 0.0)).unwrap();
    let ansatz = cat.value_at(0, cfg.initial_scenario(), 0.0, cfg.price.initial, 0.0);
    assert!((est.mean - ansatz).abs() < 3.0 * est.std_error, "{} ± {} vs {ansatz}", est.mean, est.std_error);
}

#[test]
fn symmetric_model_keeps_mean_inventory_at_zero() {
    let (spec, cfg) = g2_setup(30, 0.05, 0.0, true, 10);
    let cat = build_catalog(spec).unwrap();
    let est = monte_carlo_value(&Strategy::catalog(&cat), &cfg, 10_000, &params(0.05, 0.0)).unwrap();
    let worst = est
        .inventory_mean
        .iter()
        .zip(&est.inventory_se)
        .map(|(m, s)| (m / s).abs())
        .fold(0.0, f64::max);
    println!("largest |mean I_k| / SE over 31 steps: {worst:.2}");
    assert!(worst < 3.0);
}

#[test]
fn running_penalty_reduces_inventory_exposure() {
    let (spec, cfg) = g2_setup(40, 0.01, 0.0, false, 11);
    let plain = build_catalog(spec.clone()).unwrap();
    let penalized = build_catalog(CatalogSpec {
        objective: ObjectiveParams::new(0.01, 0.05).unwrap(),
        ..spec
    })
    .unwrap();
    let strategies = [
        NamedStrategy {
            name: "plain".into(),
            strategy: Strategy::catalog(&plain),
        },
        NamedStrategy {
            name: "penalized".into(),
            strategy: Strategy::catalog(&penalized),
        },
    ];
    let report = compare_strategies(&strategies, &cfg, 400, &params(0.01, 0.0)).unwrap();
    let a = report.summary("plain").unwrap().mean_sum_inventory_sq;
    let b = report.summary("penalized").unwrap().mean_sum_inventory_sq;
    assert!(b < a, "penalized {b} vs plain {a}");
}

#[test]
fn proxy_and_book_liquidation_agree_on_ordering() {
    // Moment-matched demand at desk scale; a deep book so liquidation costs
    // are modest, as on a liquid stock.
    let target = adaptive_mm::model::msft_reference_moments();
    let plus = fit_demand_law(&target.plus).unwrap().law;
    let minus = fit_demand_law(&target.minus).unwrap().law;
    let (spec, mut cfg) = g2_setup(400, 0.0005, 0.0, true, 12);
    cfg.demand_plus = plus;
    cfg.demand_minus = minus;
    // Flat depth of 1/(2λ) per tick makes the walk-the-book cost match λI².
    cfg.book = BookSpec {
        levels: 400,
        first_depth: 1000.0,
        ratio: 1.0,
    };
    let cat = build_catalog(CatalogSpec {
        moments: cfg.moments(),
        ..spec
    })
    .unwrap();
    let mut strategies = vec![NamedStrategy {
        name: "catalog".into(),
        strategy: Strategy::catalog(&cat),
    }];
    for level in 1..=4 {
        strategies.push(NamedStrategy {
            name: format!("level-{level}"),
            strategy: Strategy::fixed_level(level).unwrap(),
        });
    }
    let p = BacktestParams {
        fill: FillModel::Clamped { order_volume: 5000.0 },
        placement: Placement::Market(QuoteOptions { round_to_tick: true }),
        ..params(0.0005, 0.0)
    };
    let report = compare_strategies(&strategies, &cfg, 200, &p).unwrap();
    let mut agree = 0usize;
    let mut total = 0usize;
    for run in &report.outcomes {
        for a in 0..run.len() {
            for b in a + 1..run.len() {
                total += 1;
                let proxy = run[a].objective > run[b].objective;
                let actual = run[a].actual_pnl > run[b].actual_pnl;
                agree += (proxy == actual) as usize;
            }
        }
    }
    let rate = agree as f64 / total as f64;
    println!("proxy/book ordering agreement {rate:.3}");
    assert!(rate >= 0.95);
}

#[test]
fn recorded_streams_fill_from_levels() {
    let records = vec![
        IntervalRecord {
            index: 0,
            buy_mo: true,
            sell_mo: false,
            mid_price: 100.0,
            ask_levels: vec![LevelObs { offset: 1, volume: 300.0 }, LevelObs { offset: 2, volume: 120.0 }],
            bid_levels: vec![LevelObs { offset: 1, volume: 999.0 }],
        },
        IntervalRecord {
            index: 1,
            buy_mo: false,
            sell_mo: true,
            mid_price: 101.0,
            ask_levels: Vec::new(),
            bid_levels: vec![LevelObs { offset: 2, volume: 80.0 }],
        },
    ];
    let history = MoHistory::quiet(1).unwrap();
    let book = BookSnapshot {
        mid: 101.0,
        bids: vec![(100.0, 1e6)],
        asks: vec![(102.0, 1e6)],
    };
    let stream = Stream::Recorded(RecordedStream {
        records: &records,
        initial_history: &history,
        terminal_mid: 101.0,
        book: Some(&book),
    });
    let p = BacktestParams {
        fill: FillModel::Clamped { order_volume: 200.0 },
        ..params(0.001, 0.0)
    };
    let l = run_backtest(&Strategy::fixed_level(2).unwrap(), stream, &p).unwrap();
    assert_eq!((l.rows[0].q_plus, l.rows[0].q_minus), (120.0, 0.0));
    assert_eq!((l.rows[1].q_plus, l.rows[1].q_minus), (0.0, 80.0));
    assert_eq!(l.terminal.inventory, -40.0);
    assert_eq!(l.terminal.wealth, 102.0 * 120.0 - 99.0 * 80.0);
    let l1 = run_backtest(&Strategy::fixed_level(1).unwrap(), stream, &p).unwrap();
    assert_eq!(l1.rows[0].q_plus, 200.0);
    let mut csv = Vec::new();
    l.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("step,scenario,a,b,q_plus,q_minus,W,I,S\n0,0,102,98,120,0,"), "{text}");
}
