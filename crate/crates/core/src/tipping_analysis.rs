//! Decline-probability hysteresis, tipping points, bubble episodes and the
//! loss/gain forecast built on simulated fundamentals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bargaining_engine::{simulate_run, variance_indicator, EngineError, SimulationConfig, SimulationRun};
use crate::data_ingest::{format_month, free_cash_flow, parse_month, FundamentalsSeries, MonthIndex, MonthlySeries};
use crate::econometrics::{fit_ar, fit_ar_order, simulate_ar, ArModel, EconError};
use crate::intrinsic_value::{intrinsic_series, ratio_series, IntrinsicConfig, IntrinsicSeries, ValuationError};
use crate::rng::substream;
use crate::stats;

#[derive(Debug, Error)]
pub enum TippingError {
    #[error("horizon {horizon} from index {t} exceeds series length {len}")]
    Horizon { t: usize, horizon: usize, len: usize },
    #[error("series of length {len} too short for window {window}")]
    TooShort { len: usize, window: usize },
    #[error("no (ratio, decline) pairs")]
    NoPairs,
    #[error("bin width must be positive, got {0}")]
    BinWidth(f64),
    #[error("ascending branch has {0} populated bins, need 3")]
    SparseCurve(usize),
    #[error("no ascending bin reaches probability {0}")]
    ThresholdNotReached(f64),
    #[error("no run produced a tipping point")]
    NoEstimates,
    #[error("unreadable run file: {0}")]
    Parse(String),
    #[error("invalid analysis config: {0}")]
    Config(String),
    #[error(transparent)]
    Valuation(#[from] ValuationError),
    #[error(transparent)]
    Econometrics(#[from] EconError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Share of the next `n` prices, spaced `step` apart, strictly below `prices[t]`.
pub fn decline_indicator_stepped(prices: &[f64], t: usize, n: usize, step: usize) -> Result<f64, TippingError> {
    let reach = n * step;
    if n == 0 || step == 0 || t + reach >= prices.len() {
        return Err(TippingError::Horizon {
            t,
            horizon: reach,
            len: prices.len(),
        });
    }
    let now = prices[t];
    let lower = (1..=n).filter(|k| prices[t + k * step] < now).count();
    Ok(lower as f64 / n as f64)
}

/// Share of the next `n` prices strictly below `prices[t]`.
pub fn decline_indicator(prices: &[f64], t: usize, n: usize) -> Result<f64, TippingError> {
    decline_indicator_stepped(prices, t, n, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Ascending,
    Descending,
}

/// Labels each point by the sign of the slope of a centered moving average
/// of `r`. Flat stretches keep the previous label; a flat start is ascending.
pub fn label_branches(r: &[f64], smoothing_window: usize) -> Result<Vec<Branch>, TippingError> {
    let n = r.len();
    if n <= smoothing_window || n < 2 {
        return Err(TippingError::TooShort {
            len: n,
            window: smoothing_window,
        });
    }
    let half = smoothing_window / 2;
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in r.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let smooth: Vec<f64> = (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect();
    let mut labels = Vec::with_capacity(n);
    let mut current = Branch::Ascending;
    for t in 0..n {
        let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
        let slope = smooth[b] - smooth[a];
        if slope > 0.0 {
            current = Branch::Ascending;
        } else if slope < 0.0 {
            current = Branch::Descending;
        }
        labels.push(current);
    }
    Ok(labels)
}

/// One ratio value with its forward decline share and branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HysteresisPair {
    pub ratio: f64,
    pub decline: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HysteresisBin {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    /// `None` when the bin holds fewer than `min_count` pairs.
    pub p_ascending: Option<f64>,
    pub p_descending: Option<f64>,
    pub n_ascending: usize,
    pub n_descending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HysteresisCurve {
    pub bin_width: f64,
    pub min_count: usize,
    pub bins: Vec<HysteresisBin>,
}

impl HysteresisCurve {
    /// Bins where both branches are populated.
    pub fn overlap(&self) -> impl Iterator<Item = (&HysteresisBin, f64, f64)> {
        self.bins
            .iter()
            .filter_map(|b| Some((b, b.p_ascending?, b.p_descending?)))
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("bin_center,p_asc,p_desc,n_asc,n_desc\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.center,
                opt(b.p_ascending),
                opt(b.p_descending),
                b.n_ascending,
                b.n_descending
            ));
        }
        out
    }
}

/// Mean decline share per ratio bin and branch. Bins are `[k w, (k+1) w)`
/// and span every index between the lowest and highest populated one.
pub fn hysteresis_curve(
    pairs: &[HysteresisPair],
    bin_width: f64,
    min_count: usize,
) -> Result<HysteresisCurve, TippingError> {
    if !(bin_width > 0.0) {
        return Err(TippingError::BinWidth(bin_width));
    }
    let finite: Vec<&HysteresisPair> = pairs.iter().filter(|p| p.ratio.is_finite()).collect();
    if finite.is_empty() {
        return Err(TippingError::NoPairs);
    }
    let index = |r: f64| (r / bin_width).floor() as i64;
    let lo = finite.iter().map(|p| index(p.ratio)).min().unwrap();
    let hi = finite.iter().map(|p| index(p.ratio)).max().unwrap();
    let len = (hi - lo + 1) as usize;
    let mut sums = vec![[0.0f64; 2]; len];
    let mut counts = vec![[0usize; 2]; len];
    for p in finite {
        let k = (index(p.ratio) - lo) as usize;
        let b = usize::from(p.branch == Branch::Descending);
        sums[k][b] += p.decline;
        counts[k][b] += 1;
    }
    let mean = |s: f64, c: usize| (c >= min_count.max(1)).then(|| s / c as f64);
    let bins = (0..len)
        .map(|k| {
            let left = (lo + k as i64) as f64 * bin_width;
            HysteresisBin {
                lo: left,
                hi: left + bin_width,
                center: left + bin_width / 2.0,
                p_ascending: mean(sums[k][0], counts[k][0]),
                p_descending: mean(sums[k][1], counts[k][1]),
                n_ascending: counts[k][0],
                n_descending: counts[k][1],
            }
        })
        .collect();
    Ok(HysteresisCurve {
        bin_width,
        min_count,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "level")]
pub enum TippingRule {
    /// Midpoint of the consecutive populated ascending bins with the
    /// steepest rise.
    MaxSlope,
    /// Lowest ascending bin center whose probability reaches the level.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingPointEstimate {
    pub r_c_mean: f64,
    pub r_c_std: f64,
    pub per_run: Vec<f64>,
    /// Runs whose curve did not support the rule.
    pub skipped: usize,
    pub rule: TippingRule,
}

fn single_tipping_point(curve: &HysteresisCurve, rule: TippingRule) -> Result<f64, TippingError> {
    let asc: Vec<(f64, f64)> = curve
        .bins
        .iter()
        .filter_map(|b| Some((b.center, b.p_ascending?)))
        .collect();
    if asc.len() < 3 {
        return Err(TippingError::SparseCurve(asc.len()));
    }
    match rule {
        TippingRule::MaxSlope => {
            let mut best: Option<(f64, f64)> = None;
            for w in asc.windows(2) {
                let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                if best.is_none_or(|(s, _)| slope > s) {
                    best = Some((slope, 0.5 * (w[0].0 + w[1].0)));
                }
            }
            Ok(best.expect("at least two bins").1)
        }
        TippingRule::Threshold(level) => asc
            .iter()
            .find(|(_, p)| *p >= level)
            .map(|(c, _)| *c)
            .ok_or(TippingError::ThresholdNotReached(level)),
    }
}

fn summarize(values: Vec<f64>, skipped: usize, rule: TippingRule) -> Result<TippingPointEstimate, TippingError> {
    if values.is_empty() {
        return Err(TippingError::NoEstimates);
    }
    let mean = stats::mean(&values);
    let std = if values.len() > 1 {
        (stats::variance(&values) * values.len() as f64 / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(TippingPointEstimate {
        r_c_mean: mean,
        r_c_std: std,
        per_run: values,
        skipped,
        rule,
    })
}

/// Tipping point of one curve (standard deviation zero).
pub fn tipping_point(curve: &HysteresisCurve, rule: TippingRule) -> Result<TippingPointEstimate, TippingError> {
    summarize(vec![single_tipping_point(curve, rule)?], 0, rule)
}

/// Applies the rule to each curve and reports mean and sample standard
/// deviation over the curves that support it.
pub fn tipping_point_ensemble(
    curves: &[HysteresisCurve],
    rule: TippingRule,
) -> Result<TippingPointEstimate, TippingError> {
    let mut values = Vec::new();
    let mut skipped = 0;
    for c in curves {
        match single_tipping_point(c, rule) {
            Ok(v) => values.push(v),
            Err(TippingError::SparseCurve(_)) | Err(TippingError::ThresholdNotReached(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    summarize(values, skipped, rule)
}

/// Settings shared by the model and market hysteresis analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HysteresisConfig {
    /// Forward steps in the decline indicator.
    pub horizon: usize,
    /// Ticks between forward steps.
    pub step: usize,
    pub smoothing_window: usize,
    pub bin_width: f64,
    pub min_count: usize,
    /// Minimum bin count for the per-run curves behind the tipping spread.
    pub per_run_min_count: usize,
    pub rule: TippingRule,
    /// Inclusive `YYYY-MM` windows for the market analysis.
    pub episodes: Vec<(String, String)>,
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        HysteresisConfig {
            horizon: 12,
            step: 1,
            smoothing_window: 12,
            bin_width: 0.05,
            min_count: 20,
            per_run_min_count: 5,
            rule: TippingRule::MaxSlope,
            episodes: vec![
                ("1997-01".into(), "2003-03".into()),
                ("2004-01".into(), "2009-06".into()),
            ],
        }
    }
}

impl HysteresisConfig {
    pub fn validate(&self) -> Result<(), TippingError> {
        if self.horizon == 0 || self.step == 0 {
            return Err(TippingError::Config("horizon and step must be positive".into()));
        }
        if !(self.bin_width > 0.0) {
            return Err(TippingError::BinWidth(self.bin_width));
        }
        if let TippingRule::Threshold(level) = self.rule {
            if !(0.0..=1.0).contains(&level) {
                return Err(TippingError::Config(format!("threshold {level} outside [0, 1]")));
            }
        }
        for (a, b) in &self.episodes {
            match (parse_month(a), parse_month(b)) {
                (Some(x), Some(y)) if x <= y => {}
                _ => return Err(TippingError::Config(format!("bad episode window {a}..{b}"))),
            }
        }
        Ok(())
    }

    fn episode_months(&self) -> Vec<(MonthIndex, MonthIndex)> {
        self.episodes
            .iter()
            .filter_map(|(a, b)| Some((parse_month(a)?, parse_month(b)?)))
            .collect()
    }
}

/// Pairs for every tick whose forward window fits in the series.
pub fn series_pairs(
    prices: &[f64],
    ratio: &[f64],
    cfg: &HysteresisConfig,
) -> Result<Vec<HysteresisPair>, TippingError> {
    if prices.len() != ratio.len() {
        return Err(TippingError::Config(format!(
            "price and ratio lengths differ ({} vs {})",
            prices.len(),
            ratio.len()
        )));
    }
    let labels = label_branches(ratio, cfg.smoothing_window)?;
    let reach = cfg.horizon * cfg.step;
    let mut out = Vec::with_capacity(prices.len().saturating_sub(reach));
    for t in 0..prices.len().saturating_sub(reach) {
        out.push(HysteresisPair {
            ratio: ratio[t],
            decline: decline_indicator_stepped(prices, t, cfg.horizon, cfg.step)?,
            branch: labels[t],
        });
    }
    Ok(out)
}

/// Pairs of a simulated run against its intrinsic input.
pub fn run_pairs(run: &SimulationRun, cfg: &HysteresisConfig) -> Result<Vec<HysteresisPair>, TippingError> {
    series_pairs(&run.prices, &run.ratio(), cfg)
}

/// Prices and intrinsic values of a run written by [`SimulationRun::to_csv`].
pub fn run_series_from_csv(bytes: &[u8]) -> Result<(Vec<f64>, Vec<f64>), TippingError> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| TippingError::Parse(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TippingError::Parse(format!("missing column {name}")))
    };
    let (ip, ii) = (col("price")?, col("intrinsic")?);
    let (mut prices, mut intrinsic) = (Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| TippingError::Parse(e.to_string()))?;
        let num = |i: usize| {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| TippingError::Parse(format!("row {}: bad number {raw:?}", row + 1)))
        };
        prices.push(num(ip)?);
        intrinsic.push(num(ii)?);
    }
    Ok((prices, intrinsic))
}

/// Pooled curve and per-run tipping points of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHysteresis {
    pub curve: HysteresisCurve,
    /// `None` when no run supports the rule.
    pub tipping: Option<TippingPointEstimate>,
    /// Tipping point of the pooled curve.
    pub pooled_r_c: Option<f64>,
}

impl EnsembleHysteresis {
    /// Overlapping bins where the descending branch is at least the
    /// ascending one, and the number of overlapping bins.
    pub fn gap_counts(&self) -> (usize, usize) {
        let overlap: Vec<(f64, f64)> = self.curve.overlap().map(|(_, a, d)| (a, d)).collect();
        (overlap.iter().filter(|(a, d)| d >= a).count(), overlap.len())
    }
}

/// Hysteresis of `(prices, intrinsic)` paths pooled over runs, with the
/// tipping rule applied to each run separately.
pub fn ensemble_hysteresis<'a, I>(paths: I, cfg: &HysteresisConfig) -> Result<EnsembleHysteresis, TippingError>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    cfg.validate()?;
    let per_run: Vec<Vec<HysteresisPair>> = paths
        .into_iter()
        .map(|(p, i)| {
            let ratio: Vec<f64> = p.iter().zip(i).map(|(a, b)| a / b).collect();
            series_pairs(p, &ratio, cfg)
        })
        .collect::<Result<_, _>>()?;
    let pooled: Vec<HysteresisPair> = per_run.iter().flatten().copied().collect();
    let curve = hysteresis_curve(&pooled, cfg.bin_width, cfg.min_count)?;
    let curves: Vec<HysteresisCurve> = per_run
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| hysteresis_curve(p, cfg.bin_width, cfg.per_run_min_count))
        .collect::<Result<_, _>>()?;
    let tipping = match tipping_point_ensemble(&curves, cfg.rule) {
        Ok(t) => Some(t),
        Err(TippingError::NoEstimates) => None,
        Err(e) => return Err(e),
    };
    let pooled_r_c = single_tipping_point(&curve, cfg.rule).ok();
    Ok(EnsembleHysteresis {
        curve,
        tipping,
        pooled_r_c,
    })
}

/// Hysteresis of an observed market against its intrinsic value. With
/// `restrict` set only months inside the configured episode windows
/// contribute pairs; labels and forward windows still use the full series.
pub fn sp500_hysteresis(
    market: &MonthlySeries,
    intrinsic: &IntrinsicSeries,
    cfg: &HysteresisConfig,
    restrict: bool,
) -> Result<HysteresisCurve, TippingError> {
    cfg.validate()?;
    let ratio = ratio_series(market, intrinsic)?;
    let prices: Vec<f64> = ratio
        .months
        .iter()
        .map(|m| market.get(*m).expect("aligned month"))
        .collect();
    let pairs = series_pairs(&prices, &ratio.values, cfg)?;
    let windows = cfg.episode_months();
    let kept: Vec<HysteresisPair> = pairs
        .into_iter()
        .zip(&ratio.months)
        .filter(|(_, m)| !restrict || windows.iter().any(|(a, b)| (*a..=*b).contains(*m)))
        .map(|(p, _)| p)
        .collect();
    hysteresis_curve(&kept, cfg.bin_width, cfg.min_count)
}

/// A run-up above a ratio threshold followed by a price fall from the
/// running peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BubbleEpisode {
    /// First tick above the ratio threshold.
    pub start: usize,
    /// Highest price between `start` and `crash`.
    pub peak: usize,
    /// First tick at least `drop` below the running peak.
    pub crash: usize,
    /// Lowest price after the crash, before the ratio next rises above the
    /// threshold.
    pub end: usize,
}

/// Finds bubble episodes: the ratio exceeds `threshold`, then the price
/// falls by at least `drop` from its peak since the episode began.
pub fn bubble_episodes(prices: &[f64], ratio: &[f64], threshold: f64, drop: f64) -> Vec<BubbleEpisode> {
    let n = prices.len().min(ratio.len());
    let mut out = Vec::new();
    let mut t = 0;
    while t < n {
        if ratio[t] <= threshold {
            t += 1;
            continue;
        }
        let start = t;
        let mut peak = t;
        let mut crash = None;
        for u in start..n {
            if prices[u] > prices[peak] {
                peak = u;
            }
            if prices[u] <= (1.0 - drop) * prices[peak] {
                crash = Some(u);
                break;
            }
        }
        let Some(crash) = crash else { break };
        let mut end = crash;
        let mut u = crash;
        while u < n {
            if u > crash && ratio[u] > threshold && ratio[u - 1] <= threshold {
                break;
            }
            if prices[u] < prices[end] {
                end = u;
            }
            u += 1;
        }
        out.push(BubbleEpisode {
            start,
            peak,
            crash,
            end,
        });
        t = u.max(end + 1);
    }
    out
}

/// Per-episode check that the rolling variance indicator peaks no later
/// than the crash tick; the search runs from the episode start to its end.
pub fn warning_precedes_crash(prices: &[f64], episode: &BubbleEpisode, window: usize) -> Result<bool, TippingError> {
    let v = variance_indicator(prices, window)?;
    // v[i] covers ticks i..i+window-1 and is reported at its last tick
    let at = |tick: usize| tick.checked_sub(window - 1).and_then(|i| v.get(i).copied());
    let mut best: Option<(usize, f64)> = None;
    for tick in episode.start..=episode.end {
        if let Some(x) = at(tick) {
            if best.is_none_or(|(_, b)| x > b) {
                best = Some((tick, x));
            }
        }
    }
    Ok(best.is_some_and(|(tick, _)| tick <= episode.crash))
}

/// Forecast settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizon_months: usize,
    pub n_runs: usize,
    pub earnings_order: usize,
    pub wacc_order: usize,
    /// Pick orders up to the configured ones by AIC instead of fixing them.
    pub select_by_aic: bool,
    /// Simulated months before the forecast origin.
    pub warmup_months: usize,
    /// Loss/gain grid spacing and upper end.
    pub grid_step: f64,
    pub grid_max: f64,
    /// Replace the fitted innovation variances by zero.
    pub zero_noise: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizon_months: 21,
            n_runs: 100,
            earnings_order: 5,
            wacc_order: 2,
            select_by_aic: true,
            warmup_months: 120,
            grid_step: 0.01,
            grid_max: 1.0,
            zero_noise: false,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<(), TippingError> {
        let bad = |m: &str| Err(TippingError::Config(m.into()));
        if self.horizon_months < 2 {
            return bad("horizon_months must be at least 2");
        }
        if self.n_runs < 1 {
            return bad("n_runs must be at least 1");
        }
        if self.earnings_order < 1 || self.wacc_order < 1 {
            return bad("AR orders must be at least 1");
        }
        if !(self.grid_step > 0.0 && self.grid_max > 0.0) {
            return bad("grid_step and grid_max must be positive");
        }
        Ok(())
    }
}

/// Loss from the peak when the peak comes first, gain from the trough when
/// the trough comes first; the other quantity is zero.
pub fn loss_gain(path: &[f64]) -> (f64, f64) {
    if path.is_empty() {
        return (0.0, 0.0);
    }
    let (mut imax, mut imin) = (0, 0);
    for (i, v) in path.iter().enumerate() {
        if *v > path[imax] {
            imax = i;
        }
        if *v < path[imin] {
            imin = i;
        }
    }
    if imax <= imin {
        let peak = path[imax];
        let trough = path[imax..].iter().copied().fold(f64::INFINITY, f64::min);
        ((peak - trough) / peak, 0.0)
    } else {
        let trough = path[imin];
        let peak = path[imin..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0.0, (peak - trough) / trough)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub grid: Vec<f64>,
    /// `P(L < x)` on the grid.
    pub loss_cdf: Vec<f64>,
    /// `P(G > x)` on the grid.
    pub gain_cdf: Vec<f64>,
    pub losses: Vec<f64>,
    pub gains: Vec<f64>,
    pub n_runs: usize,
    pub first_month: String,
    pub last_month: String,
    pub earnings_model: ArModel,
    pub wacc_model: ArModel,
    /// Model prices over the horizon, one row per run.
    pub paths: Vec<Vec<f64>>,
}

impl ForecastResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,p_loss_below,p_gain_above\n");
        for i in 0..self.grid.len() {
            out.push_str(&format!("{},{},{}\n", self.grid[i], self.loss_cdf[i], self.gain_cdf[i]));
        }
        out
    }
}

/// Empirical `P(L < x)` and `P(G > x)` on a grid.
pub fn loss_gain_cdfs(losses: &[f64], gains: &[f64], grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let loss = grid
        .iter()
        .map(|x| frac(losses.iter().filter(|l| **l < *x).count(), losses.len()))
        .collect();
    let gain = grid
        .iter()
        .map(|x| frac(gains.iter().filter(|g| **g > *x).count(), gains.len()))
        .collect();
    (loss, gain)
}

const FORECAST_DOMAIN: u64 = 0xF0CA;

/// Projects earnings and cost of capital with AR models, values the
/// projected fundamentals and runs one bargaining simulation per projection.
///
/// Each simulation starts `warmup_months` before the end of the data, so the
/// networks have evolved by the forecast origin; the horizon covers the
/// `horizon_months` after the last observed month.
pub fn forecast_pipeline(
    fund: &FundamentalsSeries,
    icfg: &IntrinsicConfig,
    scfg: &SimulationConfig,
    fcfg: &ForecastConfig,
) -> Result<ForecastResult, TippingError> {
    fcfg.validate()?;
    icfg.validate()?;
    scfg.validate()?;
    let n = fund.len();
    let fit = |x: &[f64], order: usize| {
        if x.windows(2).all(|w| w[0] == w[1]) {
            // a flat history has no regression signal; carry the level forward
            return Ok(ArModel {
                order: 1,
                intercept: x.first().copied().unwrap_or(0.0),
                coefficients: vec![0.0],
                noise_variance: 0.0,
                aic: f64::NEG_INFINITY,
            });
        }
        if fcfg.select_by_aic {
            fit_ar(x, order, true)
        } else {
            fit_ar_order(x, order, true)
        }
    };
    let mut earnings_model = fit(&fund.real_earnings, fcfg.earnings_order)?;
    let mut wacc_model = fit(&fund.wacc, fcfg.wacc_order)?;
    if fcfg.zero_noise {
        earnings_model.noise_variance = 0.0;
        wacc_model.noise_variance = 0.0;
    }
    let h = fcfg.horizon_months;
    let warm = fcfg.warmup_months.min(n.saturating_sub(icfg.window_steps()));
    let origin = *fund
        .months
        .last()
        .ok_or(TippingError::Config("empty fundamentals".into()))?;

    let outcomes: Vec<Result<Vec<f64>, TippingError>> = (0..fcfg.n_runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(scfg.seed, FORECAST_DOMAIN, k);
            let e = simulate_ar(&earnings_model, h, 1, &mut rng, &fund.real_earnings)?.remove(0);
            let w = simulate_ar(&wacc_model, h, 1, &mut rng, &fund.wacc)?.remove(0);
            let mut ext = fund.clone();
            let last_price = *fund.real_price.last().expect("nonempty");
            for i in 0..h {
                ext.months.push(origin + 1 + i as MonthIndex);
                ext.real_price.push(last_price);
                ext.real_earnings.push(e[i]);
                ext.fcf.push(free_cash_flow(e[i], icfg.growth, icfg.roic));
                ext.wacc.push(w[i]);
            }
            let mut vcfg = icfg.clone();
            vcfg.forward_correction = true;
            // keep the long-run rate fixed by the observed history
            vcfg.wacc_inf = Some(icfg.wacc_inf.unwrap_or_else(|| stats::median(&fund.wacc)));
            let intrinsic = intrinsic_series(&ext, &vcfg)?;
            let take = warm + h;
            let values = &intrinsic.s_i[intrinsic.len().saturating_sub(take)..];
            let mut sim = scfg.clone();
            sim.ticks = values.len();
            sim.record_clustering = false;
            let run = simulate_run(&sim, values, k)?;
            Ok(run.prices[run.len() - h..].to_vec())
        })
        .collect();
    let paths: Vec<Vec<f64>> = outcomes.into_iter().collect::<Result<_, _>>()?;

    let (losses, gains): (Vec<f64>, Vec<f64>) = paths.iter().map(|p| loss_gain(p)).unzip();
    let steps = (fcfg.grid_max / fcfg.grid_step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 * fcfg.grid_step).collect();
    let (loss_cdf, gain_cdf) = loss_gain_cdfs(&losses, &gains, &grid);
    Ok(ForecastResult {
        grid,
        loss_cdf,
        gain_cdf,
        losses,
        gains,
        n_runs: fcfg.n_runs,
        first_month: format_month(origin + 1),
        last_month: format_month(origin + h as MonthIndex),
        earnings_model,
        wacc_model,
        paths,
    })
}
