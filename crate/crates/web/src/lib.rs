//! Browser demo: three operations over the core crate, each taking plain
//! numbers and returning a JSON string for the page to draw.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use modeflow::alignment::align_modes;
use modeflow::extraction::synthetic::{synthesize_arguments, SyntheticSpec};
use modeflow::modes::{fit_daily_modes, GmmOptions};
use modeflow::pipeline::{synthetic_pipeline, DailyState, ProjectionMode, RunConfig};
use modeflow::Day;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

#[derive(Serialize)]
struct PlantedRun {
    days: Vec<Day>,
    wealth: Vec<f64>,
    benchmark: Vec<f64>,
    /// Memory of the mode holding most of each theme's arguments, per day.
    theme_perf: Vec<Vec<Option<f64>>>,
    modes_per_day: Vec<usize>,
    ic: Option<f64>,
    rank_ic: Option<f64>,
    mean_excess: f64,
}

fn theme_perf(prev: &DailyState, state: &DailyState, themes: &BTreeMap<&str, usize>, theme: usize) -> Option<f64> {
    let resp = prev.responsibilities.as_ref()?;
    let mut mass = vec![0.0; resp.k()];
    for (id, row) in resp.ids.iter().zip(&resp.rows) {
        if themes.get(id.as_str()) == Some(&theme) {
            for (m, r) in mass.iter_mut().zip(row) {
                *m += r;
            }
        }
    }
    let best = (0..mass.len()).max_by(|a, b| mass[*a].total_cmp(&mass[*b]))?;
    if mass[best] <= 0.0 || !state.perf_updated {
        return None;
    }
    state.perf.as_ref()?.perf.get(best).copied()
}

/// Runs the full pipeline on a planted-theme scenario and returns wealth
/// curves, per-theme mode memory and correlation metrics.
#[wasm_bindgen]
pub fn planted_run(seed: u32, days: u32, stocks: u32, k: u32, lambda: f64) -> Result<String, JsValue> {
    let scenario = synthesize_arguments(&SyntheticSpec::planted(days as usize, stocks as usize), seed as u64);
    let config = RunConfig {
        k: k.max(1) as usize,
        lambda,
        seed: seed as u64,
        projection: ProjectionMode::Off,
        parallelism: 1,
        ..RunConfig::default()
    };
    let mut pipeline = synthetic_pipeline(config, &scenario).map_err(js_err)?;
    let out = pipeline.run(None).map_err(js_err)?;
    let bt = out
        .report
        .backtest
        .ok_or_else(|| js_err("range too short to hold a position"))?;
    let themes: BTreeMap<&str, usize> = scenario
        .arguments
        .iter()
        .map(|t| (t.argument.id.as_str(), t.theme))
        .collect();
    let n_themes = scenario.arguments.iter().map(|t| t.theme + 1).max().unwrap_or(0);
    let theme_perf = (0..n_themes)
        .map(|theme| {
            std::iter::once(None)
                .chain(out.states.windows(2).map(|w| theme_perf(&w[0], &w[1], &themes, theme)))
                .collect()
        })
        .collect();
    to_json(&PlantedRun {
        days: bt.rows.iter().map(|r| r.exit).collect(),
        wealth: bt.rows.iter().map(|r| r.wealth).collect(),
        benchmark: bt.rows.iter().map(|r| r.benchmark_wealth).collect(),
        theme_perf,
        modes_per_day: out.states.iter().map(|s| s.modes.as_ref().map_or(0, |m| m.k)).collect(),
        ic: bt.correlation.ic,
        rank_ic: bt.correlation.rank_ic,
        mean_excess: bt.relative.mean,
    })
}

#[derive(Serialize)]
struct GmmDemo {
    points: Vec<Vec<f64>>,
    truth: Vec<usize>,
    labels: Vec<usize>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    weights: Vec<f64>,
    trace: Vec<f64>,
}

/// Samples `clusters` planar Gaussian blobs and fits a `k`-component mixture.
#[wasm_bindgen]
pub fn gmm_demo(seed: u32, points: u32, clusters: u32, k: u32, spread: f64) -> Result<String, JsValue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let clusters = clusters.max(1) as usize;
    let centres: Vec<[f64; 2]> = (0..clusters)
        .map(|_| [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)])
        .collect();
    let noise = Normal::new(0.0, spread.max(1e-3)).map_err(js_err)?;
    let mut xs = Vec::with_capacity(points as usize);
    let mut truth = Vec::with_capacity(points as usize);
    for _ in 0..points {
        let c = rng.gen_range(0..clusters);
        xs.push(vec![centres[c][0] + noise.sample(&mut rng), centres[c][1] + noise.sample(&mut rng)]);
        truth.push(c);
    }
    let ids: Vec<String> = (0..xs.len()).map(|i| i.to_string()).collect();
    let opts = GmmOptions {
        k_target: k.max(1) as usize,
        seed: seed as u64,
        ..GmmOptions::default()
    };
    let day = Day::from_ymd_opt(2024, 1, 2).expect("valid date");
    let fit = fit_daily_modes(day, &ids, &xs, &opts, None).map_err(js_err)?;
    let labels = fit
        .responsibilities
        .rows
        .iter()
        .map(|r| (0..r.len()).max_by(|a, b| r[*a].total_cmp(&r[*b])).unwrap_or(0))
        .collect();
    to_json(&GmmDemo {
        points: xs,
        truth,
        labels,
        means: fit.modes.means,
        variances: fit.modes.variances,
        weights: fit.modes.weights,
        trace: fit.trace,
    })
}

#[derive(Serialize)]
struct AlignDemo {
    prev: Vec<Vec<f64>>,
    curr: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
    retired: Vec<usize>,
    born: Vec<usize>,
    cost: f64,
}

/// Yesterday's centroids drift by `drift` and some modes appear or vanish;
/// returns the minimum-cost matching between the two sets.
#[wasm_bindgen]
pub fn align_demo(seed: u32, k_prev: u32, k_curr: u32, drift: f64) -> Result<String, JsValue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let point = |rng: &mut ChaCha8Rng| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let prev: Vec<Vec<f64>> = (0..k_prev.max(1)).map(|_| point(&mut rng)).collect();
    let step = Normal::new(0.0, drift.max(0.0) + 1e-12).map_err(js_err)?;
    let mut curr: Vec<Vec<f64>> = prev
        .iter()
        .take(k_curr as usize)
        .map(|p| p.iter().map(|x| x + step.sample(&mut rng)).collect())
        .collect();
    while curr.len() < k_curr.max(1) as usize {
        curr.push(point(&mut rng));
    }
    // shuffle so the matching has something to recover
    for i in (1..curr.len()).rev() {
        let j = rng.gen_range(0..=i);
        curr.swap(i, j);
    }
    let m = align_modes(&prev, &curr).map_err(js_err)?;
    to_json(&AlignDemo {
        prev,
        curr,
        pairs: m.pairs,
        retired: m.retired,
        born: m.born,
        cost: m.cost,
    })
}
