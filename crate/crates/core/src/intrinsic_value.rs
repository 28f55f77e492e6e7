//! Discounted-cash-flow intrinsic value from realized fundamentals.
//!
//! At each month the value at the start of a trailing window is the
//! discounted realized free cash flow over the window plus a Gordon
//! continuing value; growing it over the window gives today's estimate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_ingest::{
    format_month, parse_month, read_monthly_table, FundamentalsSeries, IngestError, MonthIndex, MonthlySeries,
};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum ValuationError {
    #[error("long-run cost of capital {wacc_inf} does not exceed growth {g}{}", at.as_ref().map(|m| format!(" at {m}")).unwrap_or_default())]
    Pole { wacc_inf: f64, g: f64, at: Option<String> },
    #[error("empty discounting window")]
    EmptyWindow,
    #[error("window lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("discount rate {value} at step {index} is not above -1")]
    BadRate { index: usize, value: f64 },
    #[error("value {0} is not positive")]
    NonPositive(f64),
    #[error("need at least {need} months of fundamentals, have {have}")]
    SpanTooShort { have: usize, need: usize },
    #[error("market and intrinsic series do not overlap")]
    EmptyIntersection,
    #[error("return undefined at index {0}")]
    NoReturn(usize),
    #[error("invalid valuation config: {0}")]
    Config(String),
}

/// Valuation constants. Rates are annual fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntrinsicConfig {
    /// Backdating window in years.
    pub horizon_years: u32,
    pub growth: f64,
    pub roic: f64,
    pub debt_to_equity: f64,
    /// Marginal tax applied to the cost of debt; `None` uses the long rate as is.
    pub tax_rate: Option<f64>,
    /// Subtract trailing twelve-month CPI inflation from the long rate.
    pub real_long_rate: bool,
    /// Long-run cost of capital; `None` uses the median of the series.
    pub wacc_inf: Option<f64>,
    pub steps_per_year: u32,
    pub forward_correction: bool,
    /// Month whose prices real values are expressed in (`YYYY-MM`); `None`
    /// uses the last month.
    pub base_month: Option<String>,
    pub band_low_quantile: f64,
    pub band_high_quantile: f64,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        IntrinsicConfig {
            horizon_years: 5,
            growth: 0.017,
            roic: 0.07,
            debt_to_equity: 0.197,
            tax_rate: None,
            real_long_rate: false,
            wacc_inf: None,
            steps_per_year: 12,
            forward_correction: true,
            base_month: None,
            band_low_quantile: 0.05,
            band_high_quantile: 0.95,
        }
    }
}

impl IntrinsicConfig {
    pub fn validate(&self) -> Result<(), ValuationError> {
        let bad = |m: String| Err(ValuationError::Config(m));
        if self.horizon_years < 1 {
            return bad("horizon_years must be at least 1".into());
        }
        if self.steps_per_year < 1 {
            return bad("steps_per_year must be at least 1".into());
        }
        if !(self.roic > 0.0) {
            return bad(format!("roic must be positive, got {}", self.roic));
        }
        if !(self.growth > -1.0) {
            return bad(format!("growth must exceed -1, got {}", self.growth));
        }
        if let Some(t) = self.tax_rate {
            if !(0.0..1.0).contains(&t) {
                return bad(format!("tax_rate must lie in [0, 1), got {t}"));
            }
        }
        let (lo, hi) = (self.band_low_quantile, self.band_high_quantile);
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad(format!(
                "band quantiles must satisfy 0 <= low < high <= 1, got {lo}, {hi}"
            ));
        }
        if let Some(m) = &self.base_month {
            if parse_month(m).is_none() {
                return bad(format!("bad base_month {m:?}"));
            }
        }
        Ok(())
    }

    pub fn window_steps(&self) -> usize {
        (self.horizon_years * self.steps_per_year) as usize
    }
}

/// Converts an annual rate to the rate per step when a year has `steps`.
pub fn per_step_rate(annual: f64, steps: u32) -> f64 {
    (1.0 + annual).powf(1.0 / steps as f64) - 1.0
}

/// Value of a cash flow growing at `g` forever, first payment `fcf_next`.
pub fn gordon_value(fcf_next: f64, wacc_inf: f64, g: f64) -> Result<f64, ValuationError> {
    if !(wacc_inf > g) {
        return Err(ValuationError::Pole { wacc_inf, g, at: None });
    }
    Ok(fcf_next / (wacc_inf - g))
}

/// Value at the start of a window of realized cash flows: discounted
/// realized flows plus the continuing value discounted through the window.
/// All quantities are per step.
pub fn intrinsic_backdated(
    fcf_window: &[f64],
    wacc_window: &[f64],
    fcf_next: f64,
    wacc_inf: f64,
    g: f64,
) -> Result<f64, ValuationError> {
    if fcf_window.is_empty() {
        return Err(ValuationError::EmptyWindow);
    }
    if fcf_window.len() != wacc_window.len() {
        return Err(ValuationError::LengthMismatch(fcf_window.len(), wacc_window.len()));
    }
    let continuing = gordon_value(fcf_next, wacc_inf, g)?;
    let mut discount = 1.0;
    let mut realized = 0.0;
    for (index, (&f, &w)) in fcf_window.iter().zip(wacc_window).enumerate() {
        if !(w > -1.0) {
            return Err(ValuationError::BadRate { index, value: w });
        }
        discount *= 1.0 + w;
        realized += f / discount;
    }
    Ok(realized + continuing / discount)
}

/// Grows a backdated value over `years` at rate `g`.
pub fn forward_correct(s_back: f64, g: f64, years: f64) -> Result<f64, ValuationError> {
    if !(s_back > 0.0) {
        return Err(ValuationError::NonPositive(s_back));
    }
    Ok(s_back * (1.0 + g).powf(years))
}

/// Intrinsic value per month with a confidence band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicSeries {
    pub months: Vec<MonthIndex>,
    pub s_i: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub corrected: bool,
}

impl IntrinsicSeries {
    pub fn len(&self) -> usize {
        self.s_i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_i.is_empty()
    }

    pub fn values(&self) -> MonthlySeries {
        MonthlySeries {
            months: self.months.clone(),
            values: self.s_i.clone(),
        }
    }

    /// CSV `month,<value>,ci_low,ci_high`; the value column is `s_i` for
    /// forward-corrected series and `s_i_raw` otherwise.
    pub fn to_csv(&self) -> String {
        let name = if self.corrected { "s_i" } else { "s_i_raw" };
        let mut out = format!("month,{name},ci_low,ci_high\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                format_month(self.months[i]),
                self.s_i[i],
                self.ci_low[i],
                self.ci_high[i]
            ));
        }
        out
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, IngestError> {
        let (headers, months, cols) = read_monthly_table(bytes, &["s_i", "ci_low", "ci_high"])?;
        let mut cols = cols.into_iter();
        let mut next = || cols.next().expect("three columns");
        Ok(IntrinsicSeries {
            months,
            s_i: next(),
            ci_low: next(),
            ci_high: next(),
            corrected: headers.get(1).map(String::as_str) != Some("s_i_raw"),
        })
    }
}

/// Values each month that closes a full window.
///
/// With forward correction the value is dated at the window end. Without it
/// the raw backdated value is dated at the start of the window, one month
/// before its first cash flow. The band comes from the spread between the
/// corrected estimate for a month and the backdated value later computed
/// for the same month.
pub fn intrinsic_series(fund: &FundamentalsSeries, cfg: &IntrinsicConfig) -> Result<IntrinsicSeries, ValuationError> {
    cfg.validate()?;
    let w = cfg.window_steps();
    let n = fund.len();
    if n < w {
        return Err(ValuationError::SpanTooShort { have: n, need: w });
    }
    let steps = cfg.steps_per_year;
    let wacc_inf_annual = cfg.wacc_inf.unwrap_or_else(|| stats::median(&fund.wacc));
    let g_step = per_step_rate(cfg.growth, steps);
    let wacc_inf = per_step_rate(wacc_inf_annual, steps);
    if !(wacc_inf > g_step) {
        return Err(ValuationError::Pole {
            wacc_inf: wacc_inf_annual,
            g: cfg.growth,
            at: fund.months.last().map(|m| format_month(*m)),
        });
    }
    let fcf: Vec<f64> = fund.fcf.iter().map(|f| f / steps as f64).collect();
    let wacc: Vec<f64> = fund.wacc.iter().map(|r| per_step_rate(*r, steps)).collect();

    let mut raw = Vec::with_capacity(n - w + 1);
    for t in (w - 1)..n {
        let lo = t + 1 - w;
        let v = intrinsic_backdated(&fcf[lo..=t], &wacc[lo..=t], fcf[t] * (1.0 + g_step), wacc_inf, g_step).map_err(
            |e| match e {
                ValuationError::BadRate { index, value } => ValuationError::Config(format!(
                    "cost of capital {value} at {} is not above -1",
                    format_month(fund.months[lo + index])
                )),
                other => other,
            },
        )?;
        if !(v > 0.0) {
            return Err(ValuationError::Config(format!(
                "intrinsic value {v} at {} is not positive",
                format_month(fund.months[t])
            )));
        }
        raw.push(v);
    }
    let factor = (1.0 + cfg.growth).powi(cfg.horizon_years as i32);
    let first = fund.months[0];

    if !cfg.forward_correction {
        let months = (0..raw.len()).map(|k| first - 1 + k as MonthIndex).collect();
        return Ok(IntrinsicSeries {
            months,
            ci_low: raw.clone(),
            ci_high: raw.clone(),
            s_i: raw,
            corrected: false,
        });
    }

    let corrected: Vec<f64> = raw.iter().map(|v| v * factor).collect();
    // corrected[k] is dated at index k + w - 1; raw[j] at index j - 1, so
    // the same month pairs corrected[k] with raw[k + w].
    let ratios: Vec<f64> = (0..corrected.len())
        .filter(|k| k + w < raw.len())
        .map(|k| corrected[k] / raw[k + w])
        .collect();
    let (q_low, q_high) = if ratios.is_empty() {
        (1.0, 1.0)
    } else {
        let s = stats::sorted(&ratios);
        (
            stats::quantile_sorted(&s, cfg.band_low_quantile),
            stats::quantile_sorted(&s, cfg.band_high_quantile),
        )
    };
    let ci_low = corrected.iter().map(|c| c.min(c / q_high)).collect();
    let ci_high = corrected.iter().map(|c| c.max(c / q_low)).collect();
    let months = (0..corrected.len())
        .map(|k| first + (w - 1 + k) as MonthIndex)
        .collect();
    Ok(IntrinsicSeries {
        months,
        s_i: corrected,
        ci_low,
        ci_high,
        corrected: true,
    })
}

/// Market-to-intrinsic ratio on the months both series cover.
pub fn ratio_series(market: &MonthlySeries, intrinsic: &IntrinsicSeries) -> Result<MonthlySeries, ValuationError> {
    let mut months = Vec::new();
    let mut values = Vec::new();
    for (m, s) in intrinsic.months.iter().zip(&intrinsic.s_i) {
        if let Some(p) = market.get(*m) {
            months.push(*m);
            values.push(p / s);
        }
    }
    if months.is_empty() {
        return Err(ValuationError::EmptyIntersection);
    }
    Ok(MonthlySeries { months, values })
}

/// Proportional change from `t - 1` to `t`.
pub fn intrinsic_return(values: &[f64], t: usize) -> Result<f64, ValuationError> {
    if t == 0 || t >= values.len() {
        return Err(ValuationError::NoReturn(t));
    }
    Ok((values[t] - values[t - 1]) / values[t - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn brute_force(fcf: &[f64], wacc: &[f64], fcf_next: f64, wacc_inf: f64, g: f64) -> f64 {
        let mut total = 0.0;
        for j in 0..fcf.len() {
            let mut d = 1.0;
            for k in 0..=j {
                d *= 1.0 + wacc[k];
            }
            total += fcf[j] / d;
        }
        let mut d = 1.0;
        for w in wacc {
            d *= 1.0 + w;
        }
        total + fcf_next / (d * (wacc_inf - g))
    }

    fn flat_fundamentals(n: usize, fcf: f64, wacc: f64) -> FundamentalsSeries {
        FundamentalsSeries {
            months: (0..n as i32).map(|m| 24_000 + m).collect(),
            real_price: vec![100.0; n],
            real_earnings: vec![fcf; n],
            fcf: vec![fcf; n],
            wacc: vec![wacc; n],
        }
    }

    #[test]
    fn zero_cash_flows() {
        assert_eq!(
            intrinsic_backdated(&[0.0; 4], &[0.05; 4], 0.0, 0.07, 0.017).unwrap(),
            0.0
        );
    }

    #[test]
    fn single_step_hand_value() {
        let v = intrinsic_backdated(&[10.0], &[0.1], 10.17, 0.07, 0.017).unwrap();
        let first = 10.0 / 1.1;
        let second = 10.17 / 1.1 / (0.07 - 0.017);
        assert_relative_eq!(first, 9.090_909_090_909, epsilon = 1e-9);
        assert_relative_eq!(second, 174.442_538_593_482, epsilon = 1e-9);
        assert_relative_eq!(v, first + second, max_relative = 1e-14);
        assert_relative_eq!(v, 183.533_447_684_391, epsilon = 1e-9);
    }

    #[test]
    fn sixty_month_window_against_loop() {
        let fcf = vec![2.5; 60];
        let wacc = vec![per_step_rate(0.08, 12); 60];
        let g = per_step_rate(0.017, 12);
        let inf = per_step_rate(0.065, 12);
        let v = intrinsic_backdated(&fcf, &wacc, 2.5 * (1.0 + g), inf, g).unwrap();
        let oracle = brute_force(&fcf, &wacc, 2.5 * (1.0 + g), inf, g);
        assert_relative_eq!(v, oracle, max_relative = 1e-10);
    }

    #[test]
    fn pole_and_shape_errors() {
        assert!(matches!(
            intrinsic_backdated(&[1.0], &[0.1], 1.0, 0.017, 0.017),
            Err(ValuationError::Pole { .. })
        ));
        assert_eq!(
            intrinsic_backdated(&[], &[], 1.0, 0.07, 0.017),
            Err(ValuationError::EmptyWindow)
        );
        assert_eq!(
            intrinsic_backdated(&[1.0, 1.0], &[0.1], 1.0, 0.07, 0.0),
            Err(ValuationError::LengthMismatch(2, 1))
        );
        assert!(matches!(
            intrinsic_backdated(&[1.0], &[-1.0], 1.0, 0.07, 0.0),
            Err(ValuationError::BadRate { index: 0, .. })
        ));
    }

    #[test]
    fn degenerate_window_is_gordon() {
        let v = intrinsic_backdated(&[0.0], &[0.0], 3.0, 0.06, 0.01).unwrap();
        assert_relative_eq!(v, 3.0 / 0.05, max_relative = 1e-15);
        assert_eq!(gordon_value(3.0, 0.06, 0.01).unwrap(), v);
    }

    #[test]
    fn forward_correction_examples() {
        assert_eq!(forward_correct(123.0, 0.0, 5.0).unwrap(), 123.0);
        assert_relative_eq!(
            forward_correct(1.0, 0.017, 5.0).unwrap(),
            1.087_939_549_025,
            epsilon = 1e-11
        );
        assert_relative_eq!(forward_correct(80.0, -0.5, 1.0).unwrap(), 40.0, max_relative = 1e-15);
        assert!(forward_correct(0.0, 0.01, 1.0).is_err());
    }

    #[test]
    fn constant_inputs_give_constant_series() {
        let fund = flat_fundamentals(200, 6.0, 0.08);
        let cfg = IntrinsicConfig {
            forward_correction: false,
            ..IntrinsicConfig::default()
        };
        let s = intrinsic_series(&fund, &cfg).unwrap();
        assert_eq!(s.len(), 200 - 60 + 1);
        assert!(!s.corrected);
        for v in &s.s_i {
            assert_relative_eq!(*v, s.s_i[0], max_relative = 1e-12);
        }
        assert_eq!(s.months[0], 24_000 - 1);
        // raw values pass through untouched
        let g = per_step_rate(0.017, 12);
        let w = per_step_rate(0.08, 12);
        let raw = intrinsic_backdated(&[0.5; 60], &[w; 60], 0.5 * (1.0 + g), w, g).unwrap();
        assert_relative_eq!(s.s_i[0], raw, max_relative = 1e-14);
        assert_eq!(s.ci_low, s.s_i);
    }

    #[test]
    fn corrected_series_and_band() {
        let mut fund = flat_fundamentals(240, 6.0, 0.08);
        for (i, f) in fund.fcf.iter_mut().enumerate() {
            *f *= 1.0 + 0.2 * (i as f64 / 17.0).sin();
        }
        let cfg = IntrinsicConfig::default();
        let s = intrinsic_series(&fund, &cfg).unwrap();
        let raw = intrinsic_series(
            &fund,
            &IntrinsicConfig {
                forward_correction: false,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert!(s.corrected);
        assert_eq!(s.months[0], 24_000 + 59);
        assert_eq!(*s.months.last().unwrap(), 24_000 + 239);
        let factor = 1.017f64.powi(5);
        for k in 0..s.len() {
            assert_relative_eq!(s.s_i[k], raw.s_i[k] * factor, max_relative = 1e-14);
            assert!(s.ci_low[k] <= s.s_i[k] && s.s_i[k] <= s.ci_high[k]);
        }
        assert!(s.ci_low.iter().zip(&s.ci_high).any(|(l, h)| h > l));
    }

    #[test]
    fn series_errors() {
        let fund = flat_fundamentals(30, 6.0, 0.08);
        assert_eq!(
            intrinsic_series(&fund, &IntrinsicConfig::default()),
            Err(ValuationError::SpanTooShort { have: 30, need: 60 })
        );
        let fund = flat_fundamentals(80, 6.0, 0.01);
        assert!(matches!(
            intrinsic_series(&fund, &IntrinsicConfig::default()),
            Err(ValuationError::Pole { at: Some(_), .. })
        ));
    }

    #[test]
    fn ratio_examples() {
        let months: Vec<MonthIndex> = vec![10, 11, 12];
        let s = IntrinsicSeries {
            months: months.clone(),
            s_i: vec![100.0; 3],
            ci_low: vec![100.0; 3],
            ci_high: vec![100.0; 3],
            corrected: true,
        };
        let same = MonthlySeries::new(months.clone(), vec![100.0; 3]).unwrap();
        assert_eq!(ratio_series(&same, &s).unwrap().values, vec![1.0; 3]);
        let double = MonthlySeries::new(vec![11, 12, 13], vec![200.0; 3]).unwrap();
        let r = ratio_series(&double, &s).unwrap();
        assert_eq!(r.months, vec![11, 12]);
        assert_eq!(r.values, vec![2.0, 2.0]);
        let far = MonthlySeries::new(vec![50], vec![1.0]).unwrap();
        assert_eq!(ratio_series(&far, &s), Err(ValuationError::EmptyIntersection));
    }

    #[test]
    fn csv_round_trip_keeps_correction_flag() {
        for corrected in [true, false] {
            let s = IntrinsicSeries {
                months: vec![24_000, 24_001],
                s_i: vec![100.5, 101.25],
                ci_low: vec![90.0, 91.0],
                ci_high: vec![110.0, 111.0],
                corrected,
            };
            assert_eq!(IntrinsicSeries::from_csv(s.to_csv().as_bytes()).unwrap(), s);
        }
    }

    #[test]
    fn return_examples() {
        assert_eq!(intrinsic_return(&[5.0, 5.0], 1).unwrap(), 0.0);
        assert_relative_eq!(
            intrinsic_return(&[100.0, 102.0], 1).unwrap(),
            0.02,
            max_relative = 1e-15
        );
        assert_eq!(intrinsic_return(&[1.0], 0), Err(ValuationError::NoReturn(0)));
    }

    proptest! {
        #[test]
        fn returns_match_lag_difference(v in prop::collection::vec(0.1f64..1e3, 2..50)) {
            for t in 1..v.len() {
                let oracle = v[t] / v[t - 1] - 1.0;
                prop_assert!((intrinsic_return(&v, t).unwrap() - oracle).abs() < 1e-12 * (1.0 + oracle.abs()));
            }
        }

        #[test]
        fn homogeneous_in_cash_flows(
            flows in prop::collection::vec(0.0f64..10.0, 1..30),
            c in 0.01f64..100.0,
            w in 0.0f64..0.02,
        ) {
            let wacc = vec![w; flows.len()];
            let base = intrinsic_backdated(&flows, &wacc, 1.0, 0.01, 0.001).unwrap();
            let scaled: Vec<f64> = flows.iter().map(|f| f * c).collect();
            let v = intrinsic_backdated(&scaled, &wacc, c, 0.01, 0.001).unwrap();
            prop_assert!((v - c * base).abs() <= 1e-10 * v.abs());
        }

        #[test]
        fn correction_composes(s in 0.1f64..1e4, g in -0.2f64..0.2, t1 in 0.0f64..10.0, t2 in 0.0f64..10.0) {
            let two = forward_correct(forward_correct(s, g, t1).unwrap(), g, t2).unwrap();
            let one = forward_correct(s, g, t1 + t2).unwrap();
            prop_assert!((two - one).abs() <= 1e-12 * one);
        }

        #[test]
        fn positive_flows_positive_value(
            flows in prop::collection::vec(1e-3f64..10.0, 1..30),
            w in -0.5f64..0.5,
            next in 1e-3f64..10.0,
        ) {
            let wacc = vec![w; flows.len()];
            prop_assert!(intrinsic_backdated(&flows, &wacc, next, 0.05, 0.01).unwrap() > 0.0);
        }
    }
}
