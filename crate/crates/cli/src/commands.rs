//! One function per subcommand. Each reads its inputs, runs the library
//! and writes its files into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use tipnet::bargaining_engine::{simulate_ensemble, SimulationRun};
use tipnet::data_ingest::{derive_fundamentals, format_month, parse_shiller_csv, FundamentalsSeries, MonthlySeries};
use tipnet::econometrics::cointegration_report;
use tipnet::intrinsic_value::{intrinsic_series, ratio_series, IntrinsicSeries};
use tipnet::rng::substream;
use tipnet::tipping_analysis::{
    ensemble_hysteresis, forecast_pipeline, run_series_from_csv, sp500_hysteresis, tipping_point, HysteresisCurve,
    TippingPointEstimate,
};

use crate::config::Config;
use crate::manifest::OutputDir;
use crate::Failure;

type Outcome = Result<(), Failure>;

const COINTEGRATION_DOMAIN: u64 = 0xC017;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path)
        .with_context(|| format!("cannot read input file {}", path.display()))
        .map_err(Failure::Validation)
}

fn invalid<E: Into<anyhow::Error>>(path: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Validation(e.into().context(format!("invalid input {}", path.display())))
}

fn failed<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Computation(e.into())
}

fn io(e: anyhow::Error) -> Failure {
    Failure::Computation(e)
}

fn load_fundamentals(path: &Path) -> Result<FundamentalsSeries, Failure> {
    FundamentalsSeries::from_csv(&read(path)?).map_err(invalid(path))
}

fn load_intrinsic(path: &Path) -> Result<IntrinsicSeries, Failure> {
    IntrinsicSeries::from_csv(&read(path)?).map_err(invalid(path))
}

fn load_market(path: &Path) -> Result<MonthlySeries, Failure> {
    MonthlySeries::from_csv(&read(path)?).map_err(invalid(path))
}

#[derive(Serialize)]
struct IngestSummary {
    records: usize,
    months: usize,
    first_month: String,
    last_month: String,
}

pub fn ingest(csv: &Path, cfg: &Config, out: &mut OutputDir) -> Outcome {
    let records = parse_shiller_csv(&read(csv)?, &cfg.ingest.columns).map_err(invalid(csv))?;
    let fund = derive_fundamentals(&records, &cfg.intrinsic).map_err(invalid(csv))?;
    out.write("fundamentals.csv", fund.to_csv().as_bytes()).map_err(io)?;
    out.write("market.csv", fund.market().to_csv("real_price").as_bytes())
        .map_err(io)?;
    let summary = IngestSummary {
        records: records.len(),
        months: fund.len(),
        first_month: fund.months.first().map(|m| format_month(*m)).unwrap_or_default(),
        last_month: fund.months.last().map(|m| format_month(*m)).unwrap_or_default(),
    };
    out.write_json("ingest.json", cfg, &summary).map_err(io)
}

#[derive(Serialize)]
struct IntrinsicSummary {
    months: usize,
    first_month: String,
    last_month: String,
    corrected: bool,
    ratio_mean: f64,
}

pub fn intrinsic(fundamentals: &Path, cfg: &Config, out: &mut OutputDir) -> Outcome {
    let fund = load_fundamentals(fundamentals)?;
    let series = intrinsic_series(&fund, &cfg.intrinsic).map_err(failed)?;
    let ratio = ratio_series(&fund.market(), &series).map_err(failed)?;
    out.write("intrinsic.csv", series.to_csv().as_bytes()).map_err(io)?;
    out.write("ratio.csv", ratio.to_csv("ratio").as_bytes()).map_err(io)?;
    let summary = IntrinsicSummary {
        months: series.len(),
        first_month: format_month(series.months[0]),
        last_month: format_month(*series.months.last().expect("nonempty")),
        corrected: series.corrected,
        ratio_mean: ratio.values.iter().sum::<f64>() / ratio.len() as f64,
    };
    out.write_json("intrinsic.json", cfg, &summary).map_err(io)
}

#[derive(Serialize)]
struct RunSummary {
    run_index: u64,
    file: String,
    ticks: usize,
    aborted_ticks: usize,
    ratio_mean: f64,
    ratio_min: f64,
    ratio_max: f64,
}

pub fn simulate(intrinsic: &Path, runs: usize, ticks: Option<usize>, cfg: &Config, out: &mut OutputDir) -> Outcome {
    if runs == 0 {
        return Err(Failure::Validation(anyhow!("--runs must be at least 1")));
    }
    let series = load_intrinsic(intrinsic)?;
    let ticks = ticks.unwrap_or(series.len());
    if ticks > series.len() {
        return Err(Failure::Validation(anyhow!(
            "--ticks {ticks} exceeds the {} months in {}",
            series.len(),
            intrinsic.display()
        )));
    }
    let mut sim = cfg.simulation.clone();
    sim.ticks = ticks;
    let results: Vec<SimulationRun> = simulate_ensemble(&sim, &series.s_i, runs)
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(failed)?;
    let mut summary = Vec::with_capacity(runs);
    for run in &results {
        let file = format!("runs/run_{:04}.csv", run.run_index);
        out.write(&file, run.to_csv().as_bytes()).map_err(io)?;
        let r = run.ratio();
        summary.push(RunSummary {
            run_index: run.run_index,
            file,
            ticks: run.len(),
            aborted_ticks: run.aborted_ticks,
            ratio_mean: r.iter().sum::<f64>() / r.len().max(1) as f64,
            ratio_min: r.iter().copied().fold(f64::INFINITY, f64::min),
            ratio_max: r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    out.write_json("simulate.json", cfg, &summary).map_err(io)
}

/// Run files named directly or found as `*.csv` under a directory.
pub fn collect_runs(files: &[PathBuf], dir: Option<&Path>) -> Result<Vec<PathBuf>, Failure> {
    let mut all = files.to_vec();
    if let Some(dir) = dir {
        let entries = fs::read_dir(dir)
            .with_context(|| format!("cannot read run directory {}", dir.display()))
            .map_err(Failure::Validation)?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        found.sort();
        all.extend(found);
    }
    if all.is_empty() {
        return Err(Failure::Validation(anyhow!("no run files given")));
    }
    Ok(all)
}

#[derive(Serialize)]
struct ModelHysteresis<'a> {
    runs: usize,
    gap_bins: usize,
    overlap_bins: usize,
    tipping: &'a Option<TippingPointEstimate>,
    pooled_r_c: Option<f64>,
    curve: &'a HysteresisCurve,
}

pub fn hysteresis_runs(files: &[PathBuf], cfg: &Config, out: &mut OutputDir) -> Outcome {
    let mut paths = Vec::with_capacity(files.len());
    for f in files {
        paths.push(run_series_from_csv(&read(f)?).map_err(invalid(f))?);
    }
    let e = ensemble_hysteresis(paths.iter().map(|(p, i)| (p.as_slice(), i.as_slice())), &cfg.hysteresis)
        .map_err(failed)?;
    let (gap_bins, overlap_bins) = e.gap_counts();
    out.write("curve.csv", e.curve.to_csv().as_bytes()).map_err(io)?;
    let result = ModelHysteresis {
        runs: files.len(),
        gap_bins,
        overlap_bins,
        tipping: &e.tipping,
        pooled_r_c: e.pooled_r_c,
        curve: &e.curve,
    };
    out.write_json("hysteresis.json", cfg, &result).map_err(io)
}

#[derive(Serialize)]
struct MarketCurve {
    curve: HysteresisCurve,
    tipping: Option<TippingPointEstimate>,
    tipping_error: Option<String>,
}

#[derive(Serialize)]
struct MarketHysteresis {
    full_sample: MarketCurve,
    episodes: MarketCurve,
}

fn market_curve(curve: HysteresisCurve, cfg: &Config) -> MarketCurve {
    let (tipping, tipping_error) = match tipping_point(&curve, cfg.hysteresis.rule) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    MarketCurve {
        curve,
        tipping,
        tipping_error,
    }
}

pub fn hysteresis_market(market: &Path, intrinsic: &Path, cfg: &Config, out: &mut OutputDir) -> Outcome {
    let m = load_market(market)?;
    let i = load_intrinsic(intrinsic)?;
    let full = sp500_hysteresis(&m, &i, &cfg.hysteresis, false).map_err(failed)?;
    let episodes = sp500_hysteresis(&m, &i, &cfg.hysteresis, true).map_err(failed)?;
    out.write("curve_full.csv", full.to_csv().as_bytes()).map_err(io)?;
    out.write("curve_episodes.csv", episodes.to_csv().as_bytes())
        .map_err(io)?;
    let result = MarketHysteresis {
        full_sample: market_curve(full, cfg),
        episodes: market_curve(episodes, cfg),
    };
    out.write_json("hysteresis.json", cfg, &result).map_err(io)
}

pub fn cointegration(market: &Path, intrinsic: &Path, cfg: &Config, out: &mut OutputDir) -> Outcome {
    let m = load_market(market)?;
    let i = load_intrinsic(intrinsic)?;
    let ratio = ratio_series(&m, &i).map_err(failed)?;
    let iv = i.values();
    let mk: Vec<f64> = ratio.months.iter().map(|t| m.get(*t).expect("aligned")).collect();
    let iv: Vec<f64> = ratio.months.iter().map(|t| iv.get(*t).expect("aligned")).collect();
    let mut rng = substream(cfg.seed, COINTEGRATION_DOMAIN, 0);
    let report = cointegration_report(&mk, &iv, &cfg.cointegration, &mut rng).map_err(failed)?;
    out.write_json("cointegration.json", cfg, &report).map_err(io)
}

pub fn forecast(fundamentals: &Path, cfg: &Config, out: &mut OutputDir) -> Outcome {
    let fund = load_fundamentals(fundamentals)?;
    let result = forecast_pipeline(&fund, &cfg.intrinsic, &cfg.simulation, &cfg.forecast).map_err(failed)?;
    out.write("forecast.csv", result.to_csv().as_bytes()).map_err(io)?;
    let mut paths = String::from("run,step,price\n");
    for (k, p) in result.paths.iter().enumerate() {
        for (s, v) in p.iter().enumerate() {
            paths.push_str(&format!("{k},{s},{v}\n"));
        }
    }
    out.write("paths.csv", paths.as_bytes()).map_err(io)?;
    out.write_json("forecast.json", cfg, &result).map_err(io)
}
