//! Time-series statistics: Phillips–Perron unit-root tests, Engle–Granger
//! cointegration, autoregressive fitting and simulation, and a
//! two-component Gaussian mixture.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum EconError {
    #[error("need more than {need} observations, have {have}")]
    TooShort { have: usize, need: usize },
    #[error("series is constant")]
    Constant,
    #[error("regressor matrix is singular")]
    Singular,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("critical values must satisfy 1% < 5% < 10%, got {0}, {1}, {2}")]
    Unordered(f64, f64, f64),
    #[error("critical value table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("unknown critical value entry {0:?}")]
    UnknownTable(String),
    #[error("initial history has {have} values, model order is {need}")]
    ShortHistory { have: usize, need: usize },
    #[error("mixture component variance collapsed")]
    VarianceCollapse,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deterministic {
    None,
    Constant,
    Trend,
}

impl Deterministic {
    fn columns(self) -> usize {
        match self {
            Deterministic::None => 0,
            Deterministic::Constant => 1,
            Deterministic::Trend => 2,
        }
    }

    /// Name of the matching Dickey–Fuller row in the bundled table.
    pub fn table_name(self) -> &'static str {
        match self {
            Deterministic::None => "df_rho_none",
            Deterministic::Constant => "df_rho_constant",
            Deterministic::Trend => "df_rho_trend",
        }
    }
}

/// Critical values at 1%, 5% and 10%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub one: f64,
    pub five: f64,
    pub ten: f64,
}

impl CriticalValues {
    pub fn new(one: f64, five: f64, ten: f64) -> Result<Self, EconError> {
        if !(one < five && five < ten) {
            return Err(EconError::Unordered(one, five, ten));
        }
        Ok(CriticalValues { one, five, ten })
    }
}

const TABLE_TEXT: &str = include_str!("../data/critical_values.txt");

/// Parses `name one five ten` lines; `#` starts a comment.
pub fn parse_critical_table(text: &str) -> Result<BTreeMap<String, CriticalValues>, EconError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| EconError::Table { line: i + 1, msg };
        if parts.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", parts.len())));
        }
        let mut v = [0.0; 3];
        for (k, p) in parts[1..].iter().enumerate() {
            v[k] = p.parse().map_err(|_| err(format!("bad number {p:?}")))?;
        }
        out.insert(parts[0].to_string(), CriticalValues::new(v[0], v[1], v[2])?);
    }
    Ok(out)
}

/// Entry of the bundled critical value table.
pub fn critical_values(name: &str) -> Result<CriticalValues, EconError> {
    static TABLE: OnceLock<BTreeMap<String, CriticalValues>> = OnceLock::new();
    TABLE
        .get_or_init(|| parse_critical_table(TABLE_TEXT).expect("bundled table parses"))
        .get(name)
        .copied()
        .ok_or_else(|| EconError::UnknownTable(name.to_string()))
}

struct Ols {
    coef: DVector<f64>,
    resid: Vec<f64>,
    rss: f64,
    xtx_inv: DMatrix<f64>,
}

fn ols(x: DMatrix<f64>, y: &DVector<f64>) -> Result<Ols, EconError> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 {
        return Err(EconError::Singular);
    }
    let coef = svd.solve(y, 0.0).map_err(|_| EconError::Singular)?;
    let v_t = svd.v_t.as_ref().ok_or(EconError::Singular)?;
    let inv_sq = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let xtx_inv = v_t.transpose() * inv_sq * v_t;
    let fitted = &x * &coef;
    let resid: Vec<f64> = (y - fitted).iter().copied().collect();
    let rss = resid.iter().map(|e| e * e).sum();
    Ok(Ols {
        coef,
        resid,
        rss,
        xtx_inv,
    })
}

/// Bartlett-weighted long-run variance of residuals assumed to have mean
/// zero.
pub fn newey_west_lrv(residuals: &[f64], lags: usize) -> Result<f64, EconError> {
    let n = residuals.len();
    if n == 0 || lags >= n {
        return Err(EconError::TooShort { have: n, need: lags });
    }
    let gamma = |j: usize| residuals[j..].iter().zip(residuals).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let mut lrv = gamma(0);
    for j in 1..=lags {
        lrv += 2.0 * (1.0 - j as f64 / (lags as f64 + 1.0)) * gamma(j);
    }
    Ok(lrv)
}

/// `round(0.75 * n^(1/3))`.
pub fn stock_watson_lags(n_obs: usize) -> usize {
    (0.75 * (n_obs as f64).cbrt()).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRootResult {
    /// Normalized-bias statistic.
    pub z_rho: f64,
    /// Studentized statistic.
    pub z_t: f64,
    pub rho: f64,
    pub lags: usize,
    pub deterministic: Deterministic,
    /// Observations in the test regression.
    pub n_obs: usize,
}

/// Phillips–Perron test of a unit root in `series`.
pub fn pp_test(series: &[f64], lags: usize, deterministic: Deterministic) -> Result<UnitRootResult, EconError> {
    let n = series.len();
    if n <= lags + 5 {
        return Err(EconError::TooShort {
            have: n,
            need: lags + 5,
        });
    }
    let first = series[0];
    if series.iter().all(|v| *v == first) {
        return Err(EconError::Constant);
    }
    let t_obs = n - 1;
    let k = deterministic.columns() + 1;
    let x = DMatrix::from_fn(t_obs, k, |r, c| match (deterministic, c) {
        (Deterministic::None, _) => series[r],
        (_, 0) => 1.0,
        (Deterministic::Trend, 1) => (r + 1) as f64,
        _ => series[r],
    });
    let y = DVector::from_iterator(t_obs, series[1..].iter().copied());
    let fit = ols(x, &y)?;
    let rho = fit.coef[k - 1];
    let s2 = fit.rss / (t_obs - k) as f64;
    let se = (s2 * fit.xtx_inv[(k - 1, k - 1)]).sqrt();
    let gamma0 = fit.rss / t_obs as f64;
    let lambda2 = newey_west_lrv(&fit.resid, lags)?;
    let tn = t_obs as f64;
    let z_rho = tn * (rho - 1.0) - 0.5 * (tn * tn * se * se / s2) * (lambda2 - gamma0);
    let t_stat = (rho - 1.0) / se;
    let z_t = (gamma0 / lambda2).sqrt() * t_stat - 0.5 * (lambda2 - gamma0) / lambda2.sqrt() * (tn * se / s2.sqrt());
    Ok(UnitRootResult {
        z_rho,
        z_t,
        rho,
        lags,
        deterministic,
        n_obs: t_obs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CointegrationSpec {
    /// Regress `y` on a constant and `x`, test the residuals.
    Estimated,
    /// Test `y - x` directly.
    Imposed,
}

impl CointegrationSpec {
    /// Default critical values for the residual test.
    pub fn default_critical_values(self) -> CriticalValues {
        let name = match self {
            CointegrationSpec::Estimated => "phillips_ouliaris_constant",
            CointegrationSpec::Imposed => "engle_granger_reference",
        };
        critical_values(name).expect("bundled entry")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CointegrationResult {
    pub residual_test: UnitRootResult,
    pub intercept: f64,
    pub slope: f64,
    pub spec: CointegrationSpec,
    pub critical_values: CriticalValues,
}

impl CointegrationResult {
    /// Whether the residual statistic rejects "no cointegration" at 5%.
    pub fn rejects_at_5pct(&self) -> bool {
        self.residual_test.z_rho < self.critical_values.five
    }
}

/// Engle–Granger test on the `z_rho` statistic of the residuals.
///
/// Estimated residuals have mean zero by construction and are tested
/// without deterministic terms; imposed residuals `y - x` keep a constant.
pub fn engle_granger(
    y: &[f64],
    x: &[f64],
    lags: usize,
    spec: CointegrationSpec,
    critical: Option<CriticalValues>,
) -> Result<CointegrationResult, EconError> {
    if y.len() != x.len() {
        return Err(EconError::LengthMismatch(y.len(), x.len()));
    }
    let critical_values = critical.unwrap_or_else(|| spec.default_critical_values());
    let (intercept, slope, resid, det) = match spec {
        CointegrationSpec::Estimated => {
            if x.len() < 3 {
                return Err(EconError::TooShort { have: x.len(), need: 3 });
            }
            let xm = DMatrix::from_fn(x.len(), 2, |r, c| if c == 0 { 1.0 } else { x[r] });
            let fit = ols(xm, &DVector::from_column_slice(y))?;
            (fit.coef[0], fit.coef[1], fit.resid, Deterministic::None)
        }
        CointegrationSpec::Imposed => (
            0.0,
            1.0,
            y.iter().zip(x).map(|(a, b)| a - b).collect(),
            Deterministic::Constant,
        ),
    };
    Ok(CointegrationResult {
        residual_test: pp_test(&resid, lags, det)?,
        intercept,
        slope,
        spec,
        critical_values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub noise_variance: f64,
    pub aic: f64,
}

impl ArModel {
    /// Mean of the stationary distribution, if the coefficients sum below one.
    pub fn stationary_mean(&self) -> Option<f64> {
        let s: f64 = self.coefficients.iter().sum();
        (s < 1.0).then(|| self.intercept / (1.0 - s))
    }
}

fn fit_ar_on(series: &[f64], order: usize, start: usize, use_constant: bool) -> Result<ArModel, EconError> {
    let rows = series.len() - start;
    let k = order + usize::from(use_constant);
    let x = DMatrix::from_fn(rows, k, |r, c| {
        let t = start + r;
        if use_constant && c == 0 {
            1.0
        } else {
            let lag = c + 1 - usize::from(use_constant);
            series[t - lag]
        }
    });
    let y = DVector::from_column_slice(&series[start..]);
    let fit = ols(x, &y)?;
    let intercept = if use_constant { fit.coef[0] } else { 0.0 };
    let coefficients = fit.coef.iter().skip(usize::from(use_constant)).copied().collect();
    let n = rows as f64;
    Ok(ArModel {
        order,
        intercept,
        coefficients,
        noise_variance: fit.rss / (rows - k) as f64,
        aic: n * (fit.rss / n).ln() + 2.0 * k as f64,
    })
}

/// Least-squares AR(p) for p in `1..=max_order` on a common sample, keeping
/// the lowest AIC `n ln(RSS/n) + 2k`.
pub fn fit_ar(series: &[f64], max_order: usize, use_constant: bool) -> Result<ArModel, EconError> {
    if max_order == 0 {
        return Err(EconError::Invalid("max_order must be at least 1".into()));
    }
    let need = 2 * max_order + 3;
    if series.len() < need {
        return Err(EconError::TooShort {
            have: series.len(),
            need,
        });
    }
    let mut best: Option<ArModel> = None;
    for p in 1..=max_order {
        let m = fit_ar_on(series, p, max_order, use_constant)?;
        if best.as_ref().is_none_or(|b| m.aic < b.aic) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one order"))
}

/// AR fit of exactly `order`, using all available observations.
pub fn fit_ar_order(series: &[f64], order: usize, use_constant: bool) -> Result<ArModel, EconError> {
    if order == 0 {
        return Err(EconError::Invalid("order must be at least 1".into()));
    }
    let need = 2 * order + 3;
    if series.len() < need {
        return Err(EconError::TooShort {
            have: series.len(),
            need,
        });
    }
    fit_ar_on(series, order, order, use_constant)
}

/// Forward paths of the recursion with Gaussian shocks, continuing from the
/// last `order` values of `history`.
pub fn simulate_ar<R: Rng + ?Sized>(
    model: &ArModel,
    horizon: usize,
    n_paths: usize,
    rng: &mut R,
    history: &[f64],
) -> Result<Vec<Vec<f64>>, EconError> {
    let p = model.order;
    if history.len() < p {
        return Err(EconError::ShortHistory {
            have: history.len(),
            need: p,
        });
    }
    let sd = model.noise_variance.max(0.0).sqrt();
    let tail = &history[history.len() - p..];
    let mut out = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let mut buf = tail.to_vec();
        let mut path = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut x = model.intercept;
            for (i, phi) in model.coefficients.iter().enumerate() {
                x += phi * buf[buf.len() - 1 - i];
            }
            if sd > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                x += sd * z;
            }
            buf.push(x);
            path.push(x);
        }
        out.push(path);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Means closer than three pooled standard errors, or a fitted density
    /// with a single mode.
    pub degenerate: bool,
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn log_likelihood(x: &[f64], w: &[f64; 2], m: &[f64; 2], v: &[f64; 2]) -> f64 {
    x.iter()
        .map(|&xi| {
            (w[0] * normal_pdf(xi, m[0], v[0]) + w[1] * normal_pdf(xi, m[1], v[1]))
                .max(f64::MIN_POSITIVE)
                .ln()
        })
        .sum()
}

fn run_em(
    x: &[f64],
    mut w: [f64; 2],
    mut m: [f64; 2],
    mut v: [f64; 2],
    floor: f64,
    tol: f64,
    max_iter: usize,
) -> Option<GmmFit> {
    let n = x.len();
    let mut ll = log_likelihood(x, &w, &m, &v);
    let mut resp = vec![0.0; n];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        for (r, &xi) in resp.iter_mut().zip(x) {
            let a = w[0] * normal_pdf(xi, m[0], v[0]);
            let b = w[1] * normal_pdf(xi, m[1], v[1]);
            *r = if a + b > 0.0 {
                a / (a + b)
            } else if (xi - m[0]).abs() <= (xi - m[1]).abs() {
                1.0
            } else {
                0.0
            };
        }
        let n0: f64 = resp.iter().sum();
        let n1 = n as f64 - n0;
        if n0 <= 0.0 || n1 <= 0.0 {
            return None;
        }
        m = [
            resp.iter().zip(x).map(|(r, xi)| r * xi).sum::<f64>() / n0,
            resp.iter().zip(x).map(|(r, xi)| (1.0 - r) * xi).sum::<f64>() / n1,
        ];
        v = [
            resp.iter().zip(x).map(|(r, xi)| r * (xi - m[0]).powi(2)).sum::<f64>() / n0,
            resp.iter()
                .zip(x)
                .map(|(r, xi)| (1.0 - r) * (xi - m[1]).powi(2))
                .sum::<f64>()
                / n1,
        ];
        if v[0] < floor || v[1] < floor {
            return None;
        }
        w = [n0 / n as f64, n1 / n as f64];
        let next = log_likelihood(x, &w, &m, &v);
        assert!(
            next >= ll - 1e-9 * ll.abs().max(1.0),
            "EM log-likelihood decreased from {ll} to {next}"
        );
        let gain = next - ll;
        ll = next;
        if gain < tol {
            break;
        }
    }
    if m[0] > m[1] {
        m.swap(0, 1);
        v.swap(0, 1);
        w.swap(0, 1);
    }
    let se = (v[0] / (n as f64 * w[0]) + v[1] / (n as f64 * w[1])).sqrt();
    Some(GmmFit {
        weights: w,
        means: m,
        variances: v,
        log_likelihood: ll,
        iterations,
        degenerate: (m[1] - m[0]).abs() < 3.0 * se || unimodal(&w, &m, &v),
    })
}

/// Whether the mixture density has no dip between the two means.
fn unimodal(w: &[f64; 2], m: &[f64; 2], v: &[f64; 2]) -> bool {
    const STEPS: usize = 512;
    let density = |x: f64| w[0] * normal_pdf(x, m[0], v[0]) + w[1] * normal_pdf(x, m[1], v[1]);
    let h = (m[1] - m[0]) / STEPS as f64;
    let mut falling = false;
    let mut prev = density(m[0]);
    for k in 1..=STEPS {
        let d = density(m[0] + h * k as f64);
        if d < prev {
            falling = true;
        } else if d > prev && falling {
            return false;
        }
        prev = d;
    }
    true
}

/// Expectation–maximization for a two-component univariate Gaussian
/// mixture, started from the halves below and above the median.
pub fn fit_gmm2<R: Rng + ?Sized>(samples: &[f64], tol: f64, max_iter: usize, rng: &mut R) -> Result<GmmFit, EconError> {
    if samples.len() < 10 {
        return Err(EconError::TooShort {
            have: samples.len(),
            need: 10,
        });
    }
    let total_var = stats::variance(samples);
    if !(total_var > 0.0) {
        return Err(EconError::Constant);
    }
    let floor = 1e-6 * total_var;
    let sorted = stats::sorted(samples);
    let half = sorted.len() / 2;
    let (lo, hi) = sorted.split_at(half);
    let init_v = |s: &[f64]| stats::variance(s).max(floor * 10.0);
    let m0 = [stats::mean(lo), stats::mean(hi)];
    let v0 = [init_v(lo), init_v(hi)];
    if let Some(fit) = run_em(samples, [0.5, 0.5], m0, v0, floor, tol, max_iter) {
        return Ok(fit);
    }
    let sd = total_var.sqrt();
    let jitter = |rng: &mut R| 0.1 * sd * rng.sample::<f64, _>(StandardNormal);
    let m1 = [m0[0] + jitter(rng), m0[1] + jitter(rng)];
    let v1 = [total_var, total_var];
    run_em(samples, [0.5, 0.5], m1, v1, floor, tol, max_iter).ok_or(EconError::VarianceCollapse)
}

/// Settings for [`cointegration_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CointegrationConfig {
    /// Newey–West lags; `None` applies the Stock–Watson rule.
    pub lags: Option<usize>,
    /// Deterministic terms for the level and difference unit-root tests.
    pub level_deterministic: Deterministic,
    /// Mode whose verdict is reported first.
    pub spec: CointegrationSpec,
    pub gmm_tol: f64,
    pub gmm_max_iter: usize,
}

impl Default for CointegrationConfig {
    fn default() -> Self {
        CointegrationConfig {
            lags: None,
            level_deterministic: Deterministic::Constant,
            spec: CointegrationSpec::Imposed,
            gmm_tol: 1e-9,
            gmm_max_iter: 2000,
        }
    }
}

/// Unit-root tests of one series in levels and first differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDifferenceTests {
    pub levels: UnitRootResult,
    pub differences: UnitRootResult,
    pub critical_values: CriticalValues,
    pub levels_reject_5pct: bool,
    pub differences_reject_5pct: bool,
}

fn level_difference(series: &[f64], lags: usize, det: Deterministic) -> Result<LevelDifferenceTests, EconError> {
    let diff: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let levels = pp_test(series, lags, det)?;
    let differences = pp_test(&diff, lags, det)?;
    let critical_values = critical_values(det.table_name())?;
    Ok(LevelDifferenceTests {
        levels_reject_5pct: levels.z_rho < critical_values.five,
        differences_reject_5pct: differences.z_rho < critical_values.five,
        levels,
        differences,
        critical_values,
    })
}

/// Unit-root, cointegration and ratio-mixture summary of a market and its
/// intrinsic value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CointegrationReport {
    pub n_obs: usize,
    pub lags: usize,
    pub log_market: LevelDifferenceTests,
    pub log_intrinsic: LevelDifferenceTests,
    /// Test in the configured mode.
    pub engle_granger: CointegrationResult,
    /// Test in the other mode.
    pub engle_granger_alternative: CointegrationResult,
    /// Mean of market over intrinsic.
    pub ratio_mean: f64,
    pub ratio_mixture: GmmFit,
}

/// Runs the tests on `ln market` and `ln intrinsic` (aligned, positive).
pub fn cointegration_report<R: Rng + ?Sized>(
    market: &[f64],
    intrinsic: &[f64],
    cfg: &CointegrationConfig,
    rng: &mut R,
) -> Result<CointegrationReport, EconError> {
    if market.len() != intrinsic.len() {
        return Err(EconError::LengthMismatch(market.len(), intrinsic.len()));
    }
    if market.iter().chain(intrinsic).any(|v| !(*v > 0.0)) {
        return Err(EconError::Invalid("prices must be positive".into()));
    }
    let lm: Vec<f64> = market.iter().map(|v| v.ln()).collect();
    let li: Vec<f64> = intrinsic.iter().map(|v| v.ln()).collect();
    let lags = cfg.lags.unwrap_or_else(|| stock_watson_lags(lm.len()));
    let other = match cfg.spec {
        CointegrationSpec::Estimated => CointegrationSpec::Imposed,
        CointegrationSpec::Imposed => CointegrationSpec::Estimated,
    };
    let ratio: Vec<f64> = market.iter().zip(intrinsic).map(|(m, i)| m / i).collect();
    Ok(CointegrationReport {
        n_obs: lm.len(),
        lags,
        log_market: level_difference(&lm, lags, cfg.level_deterministic)?,
        log_intrinsic: level_difference(&li, lags, cfg.level_deterministic)?,
        engle_granger: engle_granger(&lm, &li, lags, cfg.spec, None)?,
        engle_granger_alternative: engle_granger(&lm, &li, lags, other, None)?,
        ratio_mean: stats::mean(&ratio),
        ratio_mixture: fit_gmm2(&ratio, cfg.gmm_tol, cfg.gmm_max_iter, rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_walk(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x += rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    fn noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn report_on_cointegrated_prices() {
        let mut rng = seeded(21);
        let walk = random_walk(1200, &mut rng);
        let intrinsic: Vec<f64> = walk.iter().map(|w| 100.0 * (0.02 * w).exp()).collect();
        let mut u = 0.0;
        let market: Vec<f64> = intrinsic
            .iter()
            .map(|i| {
                u = 0.9 * u + 0.05 * rng.sample::<f64, _>(StandardNormal);
                i * u.exp()
            })
            .collect();
        let r = cointegration_report(&market, &intrinsic, &CointegrationConfig::default(), &mut rng).unwrap();
        assert_eq!(r.lags, 8);
        assert_eq!(r.n_obs, 1200);
        assert!(r.log_market.differences_reject_5pct && r.log_intrinsic.differences_reject_5pct);
        assert!(r.engle_granger.rejects_at_5pct());
        assert_eq!(r.engle_granger.spec, CointegrationSpec::Imposed);
        assert_eq!(r.engle_granger_alternative.spec, CointegrationSpec::Estimated);
        let ratio: Vec<f64> = market.iter().zip(&intrinsic).map(|(m, i)| m / i).collect();
        assert_relative_eq!(r.ratio_mean, ratio.iter().sum::<f64>() / 1200.0, max_relative = 1e-12);
        let bad = cointegration_report(&[1.0, -1.0], &[1.0, 1.0], &CointegrationConfig::default(), &mut rng);
        assert!(matches!(bad, Err(EconError::Invalid(_))));
    }

    #[test]
    fn lag_rule() {
        assert_eq!(stock_watson_lags(1143), 8);
        assert_eq!(stock_watson_lags(8), 2);
        assert_eq!(stock_watson_lags(1000), 8);
    }

    #[test]
    fn bundled_table() {
        let eg = critical_values("engle_granger_reference").unwrap();
        assert_eq!((eg.one, eg.five, eg.ten), (-20.5032, -14.034, -11.213));
        assert!(critical_values("nope").is_err());
        for d in [Deterministic::None, Deterministic::Constant, Deterministic::Trend] {
            critical_values(d.table_name()).unwrap();
        }
        assert!(matches!(
            parse_critical_table("x -1 -2 -3"),
            Err(EconError::Unordered(..))
        ));
        assert!(matches!(
            parse_critical_table("x -3 -2"),
            Err(EconError::Table { line: 1, .. })
        ));
    }

    #[test]
    fn lrv_lag_zero_is_second_moment() {
        let e = [1.0, -2.0, 0.5, 0.5];
        assert_relative_eq!(newey_west_lrv(&e, 0).unwrap(), (1.0 + 4.0 + 0.25 + 0.25) / 4.0);
        assert!(newey_west_lrv(&[], 0).is_err());
    }

    #[test]
    fn lrv_hand_value() {
        let e = [1.0, 2.0, -1.0];
        // gamma0 = 6/3, gamma1 = (2 - 2)/3 = 0, gamma2 = -1/3, weights 2/3, 1/3
        let expected = 2.0 + 2.0 * (2.0 / 3.0) * 0.0 + 2.0 * (1.0 / 3.0) * (-1.0 / 3.0);
        assert_relative_eq!(newey_west_lrv(&e, 2).unwrap(), expected, max_relative = 1e-15);
    }

    #[test]
    fn lrv_white_noise_and_ar1() {
        let mut rng = seeded(11);
        let e = noise(10_000, &mut rng);
        assert!((newey_west_lrv(&e, 8).unwrap() - 1.0).abs() < 0.1);
        let mut x = 0.0;
        let ar: Vec<f64> = (0..20_000)
            .map(|_| {
                x = 0.5 * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let lrv = newey_west_lrv(&ar, 40).unwrap();
        assert!((lrv - 4.0).abs() < 0.8, "lrv {lrv}");
    }

    #[test]
    fn pp_random_walk_vs_noise() {
        let mut accepted = 0;
        for seed in 0..40 {
            let mut rng = seeded(1000 + seed);
            let rw = random_walk(10_000, &mut rng);
            let r = pp_test(&rw, stock_watson_lags(rw.len()), Deterministic::Constant).unwrap();
            if r.z_rho > critical_values("df_rho_constant").unwrap().one {
                accepted += 1;
            }
            let wn = noise(10_000, &mut rng);
            let w = pp_test(&wn, stock_watson_lags(wn.len()), Deterministic::Constant).unwrap();
            assert!(w.z_rho < -8.025 && w.z_t < -2.86);
        }
        assert!(accepted >= 38, "{accepted}/40");
    }

    #[test]
    fn pp_magnitude_grows_with_sample() {
        let mut rng = seeded(5);
        let rw = random_walk(4_001, &mut rng);
        let d: Vec<f64> = rw.windows(2).map(|w| w[1] - w[0]).collect();
        let small = pp_test(&d[..400], 8, Deterministic::None).unwrap().z_rho;
        let large = pp_test(&d, 8, Deterministic::None).unwrap().z_rho;
        assert!(large < 2.0 * small, "{small} {large}");
    }

    #[test]
    fn pp_errors() {
        assert_eq!(
            pp_test(&[2.0; 50], 4, Deterministic::Constant),
            Err(EconError::Constant)
        );
        assert!(matches!(
            pp_test(&[1.0, 2.0, 3.0], 1, Deterministic::None),
            Err(EconError::TooShort { .. })
        ));
    }

    #[test]
    fn pp_matches_direct_formula() {
        let mut rng = seeded(3);
        let y = random_walk(300, &mut rng);
        let lags = 4;
        let r = pp_test(&y, lags, Deterministic::Constant).unwrap();
        // independent normal-equation regression of y_t on (1, y_{t-1})
        let n = y.len() - 1;
        let xs = &y[..n];
        let ys = &y[1..];
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let rho = sxy / sxx;
        let c = my - rho * mx;
        let e: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - c - rho * x).collect();
        let rss: f64 = e.iter().map(|v| v * v).sum();
        let s2 = rss / (n - 2) as f64;
        let se2 = s2 / sxx;
        let g0 = rss / n as f64;
        let mut lam = g0;
        for j in 1..=lags {
            let gj: f64 = (j..n).map(|t| e[t] * e[t - j]).sum::<f64>() / n as f64;
            lam += 2.0 * (1.0 - j as f64 / (lags + 1) as f64) * gj;
        }
        let nn = n as f64;
        let z_rho = nn * (rho - 1.0) - 0.5 * nn * nn * se2 / s2 * (lam - g0);
        let z_t =
            (g0 / lam).sqrt() * (rho - 1.0) / se2.sqrt() - 0.5 * (lam - g0) / lam.sqrt() * nn * se2.sqrt() / s2.sqrt();
        assert_relative_eq!(r.rho, rho, max_relative = 1e-10);
        assert_relative_eq!(r.z_rho, z_rho, max_relative = 1e-8);
        assert_relative_eq!(r.z_t, z_t, max_relative = 1e-8);
        assert_eq!(r.n_obs, n);
    }

    #[test]
    fn eg_imposed_equals_pp_on_difference() {
        let mut rng = seeded(8);
        let x = random_walk(500, &mut rng);
        let y: Vec<f64> = x
            .iter()
            .map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let eg = engle_granger(&y, &x, 6, CointegrationSpec::Imposed, None).unwrap();
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        assert_eq!(eg.residual_test, pp_test(&d, 6, Deterministic::Constant).unwrap());
        assert_eq!(eg.slope, 1.0);
        assert!(eg.rejects_at_5pct());
    }

    #[test]
    fn eg_errors() {
        assert_eq!(
            engle_granger(&[1.0, 2.0], &[1.0], 1, CointegrationSpec::Estimated, None).unwrap_err(),
            EconError::LengthMismatch(2, 1)
        );
        let x = [3.0; 40];
        let y: Vec<f64> = (0..40).map(|i| i as f64).collect();
        assert_eq!(
            engle_granger(&y, &x, 2, CointegrationSpec::Estimated, None).unwrap_err(),
            EconError::Singular
        );
    }

    #[test]
    fn ar_recovers_fixed_order() {
        let mut rng = seeded(21);
        let mut x = vec![0.0, 0.0];
        for _ in 0..10_000 {
            let n = x.len();
            let e: f64 = rng.sample(StandardNormal);
            x.push(1.0 + 0.5 * x[n - 1] - 0.3 * x[n - 2] + e);
        }
        let m = fit_ar_order(&x, 2, true).unwrap();
        assert!((m.coefficients[0] - 0.5).abs() < 0.05);
        assert!((m.coefficients[1] + 0.3).abs() < 0.05);
        assert!((m.intercept - 1.0).abs() < 0.1);
        assert!((m.noise_variance - 1.0).abs() < 0.05);
    }

    #[test]
    fn ar_constant_series_is_singular() {
        assert_eq!(fit_ar(&[4.0; 100], 3, true), Err(EconError::Singular));
    }

    #[test]
    fn ar_white_noise_small_coefficients() {
        let mut rng = seeded(4);
        let x = noise(10_000, &mut rng);
        let m = fit_ar(&x, 4, true).unwrap();
        assert!(m.coefficients.iter().all(|c| c.abs() < 0.05), "{:?}", m.coefficients);
    }

    #[test]
    fn ar_selected_minimizes_aic() {
        let mut rng = seeded(6);
        let mut x = vec![0.0];
        for _ in 0..2_000 {
            let e: f64 = rng.sample(StandardNormal);
            x.push(0.7 * x[x.len() - 1] + e);
        }
        let best = fit_ar(&x, 6, true).unwrap();
        for p in 1..=6 {
            let m = fit_ar_on(&x, p, 6, true).unwrap();
            assert!(best.aic <= m.aic);
        }
    }

    #[test]
    fn ar_simulation_deterministic_cases() {
        let model = ArModel {
            order: 2,
            intercept: 1.0,
            coefficients: vec![0.5, 0.25],
            noise_variance: 0.0,
            aic: 0.0,
        };
        let mut rng = seeded(0);
        let paths = simulate_ar(&model, 4, 2, &mut rng, &[9.0, 2.0, 4.0]).unwrap();
        let mut h = vec![2.0, 4.0];
        for k in 0..4 {
            let v = 1.0 + 0.5 * h[h.len() - 1] + 0.25 * h[h.len() - 2];
            h.push(v);
            assert_eq!(paths[0][k], v);
            assert_eq!(paths[1][k], v);
        }
        assert!(matches!(
            simulate_ar(&model, 1, 1, &mut rng, &[1.0]),
            Err(EconError::ShortHistory { .. })
        ));

        let noisy = ArModel {
            noise_variance: 2.0,
            ..model
        };
        let a = simulate_ar(&noisy, 10, 3, &mut seeded(9), &[0.0, 0.0]).unwrap();
        let b = simulate_ar(&noisy, 10, 3, &mut seeded(9), &[0.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ar_simulation_mean() {
        let model = ArModel {
            order: 1,
            intercept: 3.0,
            coefficients: vec![0.0],
            noise_variance: 1.0,
            aic: 0.0,
        };
        let paths = simulate_ar(&model, 1, 10_000, &mut seeded(2), &[0.0]).unwrap();
        let m = paths.iter().map(|p| p[0]).sum::<f64>() / 10_000.0;
        assert!((m - 3.0).abs() < 3.0 / 100.0);

        let ar = ArModel {
            order: 1,
            intercept: 1.0,
            coefficients: vec![0.6],
            noise_variance: 1.0,
            aic: 0.0,
        };
        let paths = simulate_ar(&ar, 200, 2_000, &mut seeded(3), &[0.0]).unwrap();
        let last: Vec<f64> = paths.iter().map(|p| p[199]).collect();
        let mean = stats::mean(&last);
        let se = (stats::variance(&last) / last.len() as f64).sqrt();
        assert!((mean - ar.stationary_mean().unwrap()).abs() < 3.0 * se);
    }

    #[test]
    fn gmm_separated_mixture() {
        let mut rng = seeded(12);
        let x: Vec<f64> = (0..10_000)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                if i % 2 == 0 {
                    z
                } else {
                    5.0 + z
                }
            })
            .collect();
        let fit = fit_gmm2(&x, 1e-8, 500, &mut rng).unwrap();
        assert!(fit.means[0].abs() < 0.1 && (fit.means[1] - 5.0).abs() < 0.1);
        assert!((fit.weights[0] + fit.weights[1] - 1.0).abs() < 1e-12);
        assert!(!fit.degenerate);
    }

    #[test]
    fn equal_mixture_is_bimodal_beyond_two_sigma() {
        let (w, v) = ([0.5, 0.5], [1.0, 1.0]);
        assert!(unimodal(&w, &[0.0, 1.95], &v));
        assert!(!unimodal(&w, &[0.0, 2.05], &v));
    }

    #[test]
    fn gmm_errors() {
        let mut rng = seeded(0);
        assert!(matches!(
            fit_gmm2(&[1.0; 5], 1e-8, 10, &mut rng),
            Err(EconError::TooShort { .. })
        ));
        assert_eq!(fit_gmm2(&[1.0; 20], 1e-8, 10, &mut rng), Err(EconError::Constant));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pp_affine_invariant(seed in 0u64..1000, a in -50.0f64..50.0, b in 0.1f64..20.0) {
            let mut rng = seeded(seed);
            let y = random_walk(200, &mut rng);
            let base = pp_test(&y, 5, Deterministic::Constant).unwrap();
            let t: Vec<f64> = y.iter().map(|v| a + b * v).collect();
            let moved = pp_test(&t, 5, Deterministic::Constant).unwrap();
            prop_assert!((base.z_rho - moved.z_rho).abs() < 1e-8 * (1.0 + base.z_rho.abs()));
            prop_assert!((base.z_t - moved.z_t).abs() < 1e-8 * (1.0 + base.z_t.abs()));
        }

        #[test]
        fn gmm_weights_and_order(seed in 0u64..1000, shift in 0.5f64..6.0) {
            let mut rng = seeded(seed);
            let x: Vec<f64> = (0..300)
                .map(|i| rng.sample::<f64, _>(StandardNormal) + if i % 3 == 0 { shift } else { 0.0 })
                .collect();
            let fit = fit_gmm2(&x, 1e-9, 300, &mut rng).unwrap();
            prop_assert!(fit.means[0] <= fit.means[1]);
            prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(fit.weights.iter().all(|w| *w > 0.0 && *w < 1.0));
            prop_assert!(fit.variances.iter().all(|v| *v > 0.0));
        }
    }
}
