use std::collections::BTreeMap;

use modeflow::backtest::{correlation_metrics, forward_returns, simulate, Execution};
use modeflow::market::{PriceBar, PriceTable};
use modeflow::signal::{signals_by_day, PortfolioWeights, StockSignal};
use modeflow::Day;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn day(n: u32) -> Day {
    Day::from_ymd_opt(2024, 3, n).unwrap()
}

fn bar(d: u32, t: &str, open: f64, close: f64) -> PriceBar {
    PriceBar {
        day: day(d),
        ticker: t.into(),
        open,
        close,
    }
}

fn weights(d: u32, a: f64, b: f64) -> PortfolioWeights {
    PortfolioWeights {
        day: day(d),
        weights: BTreeMap::from([("A".to_string(), a), ("B".to_string(), b)]),
    }
}

#[test]
fn two_periods_walked_by_hand() {
    let prices = PriceTable::from_bars([
        bar(4, "A", 9.0, 9.5),
        bar(4, "B", 19.0, 19.5),
        bar(5, "A", 10.0, 10.5),
        bar(5, "B", 20.0, 20.5),
        bar(6, "A", 11.0, 11.0),
        bar(6, "B", 20.0, 21.0),
        bar(7, "A", 11.0, 12.0),
        bar(7, "B", 22.0, 22.0),
    ])
    .unwrap();
    let c = 1e-3;
    // the last decision has no exit day and is dropped
    let w = [weights(4, 1.0, 0.0), weights(5, 0.0, 1.0), weights(6, 0.5, 0.5)];
    let sim = simulate(&w, &prices, c, Execution::OpenToOpen).unwrap();
    assert_eq!(sim.rows.len(), 2);

    // bought A at 10, sold at 11
    let r1 = &sim.rows[0];
    assert_eq!((r1.entry, r1.exit), (day(5), day(6)));
    assert!((r1.gross - 0.1).abs() < 1e-15);
    assert_eq!(r1.turnover, 1.0);
    assert!((r1.net - (0.1 - c)).abs() < 1e-15);
    assert!((r1.benchmark - 0.05).abs() < 1e-15);

    // A drifted to a full book, so switching to B trades both legs
    let r2 = &sim.rows[1];
    assert!((r2.gross - 0.1).abs() < 1e-15);
    assert!((r2.turnover - 2.0).abs() < 1e-15);
    assert!((r2.wealth - (1.1 - c) * (1.1 - 2.0 * c)).abs() < 1e-14);
    assert!((r2.benchmark_wealth - 1.05 * 1.05).abs() < 1e-14);

    let close = simulate(&w, &prices, 0.0, Execution::CloseToClose).unwrap();
    assert!((close.rows[0].gross - (11.0 / 10.5 - 1.0)).abs() < 1e-15);
}

#[test]
fn unrelated_signals_have_no_information() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tickers: Vec<String> = (0..50).map(|i| format!("S{i:02}")).collect();
    let days = modeflow::extraction::synthetic::business_days(day(1), 201);
    let mut bars = Vec::new();
    let mut px = vec![10.0; tickers.len()];
    for d in &days {
        for (p, t) in px.iter_mut().zip(&tickers) {
            *p *= 1.0 + rng.gen_range(-0.02..0.02);
            bars.push(PriceBar {
                day: *d,
                ticker: t.clone(),
                open: *p,
                close: *p,
            });
        }
    }
    let prices = PriceTable::from_bars(bars).unwrap();
    let signals: Vec<StockSignal> = days[..200]
        .iter()
        .flat_map(|d| {
            tickers
                .iter()
                .map(|t| StockSignal {
                    day: *d,
                    ticker: t.clone(),
                    value: rng.gen_range(-1.0..1.0),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let m = correlation_metrics(&signals_by_day(&signals), &forward_returns(&prices, &tickers));
    assert_eq!(m.days_used, 200);
    // daily correlations have sd about 1/sqrt(50); their mean over 200 days about 0.01
    assert!(m.ic.unwrap().abs() < 0.05, "{:?}", m.ic);
    assert!(m.rank_ic.unwrap().abs() < 0.05, "{:?}", m.rank_ic);
}
