//! Monthly market data: Shiller-layout CSV parsing, CPI deflation and the
//! derived fundamentals (free cash flow, cost of capital) used for valuation.
//!
//! Months are integer indices `year * 12 + (month - 1)`, so consecutive
//! months differ by exactly one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intrinsic_value::IntrinsicConfig;

/// Month counted from January of year 0.
pub type MonthIndex = i32;

pub fn month_index(year: i32, month: u32) -> MonthIndex {
    year * 12 + month as i32 - 1
}

pub fn year_month(index: MonthIndex) -> (i32, u32) {
    (index.div_euclid(12), index.rem_euclid(12) as u32 + 1)
}

/// Formats a month as `YYYY-MM`.
pub fn format_month(index: MonthIndex) -> String {
    let (y, m) = year_month(index);
    format!("{y:04}-{m:02}")
}

/// Parses `YYYY-MM`, `YYYY-MM-DD` or the fractional `YYYY.MM` encoding used
/// in the Shiller spreadsheet, where `1871.1` means October.
pub fn parse_month(text: &str) -> Option<MonthIndex> {
    let text = text.trim();
    if let Some((y, rest)) = text.split_once('-') {
        let year: i32 = y.parse().ok()?;
        let month: u32 = rest.split('-').next()?.parse().ok()?;
        return (1..=12).contains(&month).then(|| month_index(year, month));
    }
    let (y, frac) = match text.split_once('.') {
        Some((y, f)) => (y, f),
        None => (text, "01"),
    };
    let year: i32 = y.parse().ok()?;
    let month: u32 = match frac.len() {
        1 => frac.parse::<u32>().ok()? * 10,
        2 => frac.parse().ok()?,
        _ => return None,
    };
    (1..=12).contains(&month).then(|| month_index(year, month))
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no column for {field} (tried {candidates:?})")]
    MissingColumn {
        field: &'static str,
        candidates: Vec<String>,
    },
    #[error("row {row}: cannot read {field} from {value:?}")]
    BadValue {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("row {row}: cpi {value} is not positive")]
    NonPositiveCpi { row: usize, value: f64 },
    #[error("row {row}: price {value} is not positive")]
    NonPositivePrice { row: usize, value: f64 },
    #[error("row {row}: date {date} does not follow {previous} by one month")]
    DateOrder { row: usize, date: String, previous: String },
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("base month {0} not in series")]
    BaseNotFound(String),
    #[error("{field} missing at {month}")]
    MissingValue { field: &'static str, month: String },
    #[error("real price {value} at {month} is not positive")]
    NonPositiveRealPrice { month: String, value: f64 },
    #[error("invalid fundamentals config: {0}")]
    Config(String),
}

/// One month of raw market data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketRecord {
    pub month: MonthIndex,
    pub nominal_price: f64,
    /// Trailing twelve-month earnings; absent for the latest months.
    pub earnings: Option<f64>,
    pub dividend: Option<f64>,
    pub cpi: f64,
    /// Long-term interest rate as a fraction per year.
    pub long_rate: Option<f64>,
}

/// Accepted header names per field, matched case-insensitively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub date: Vec<String>,
    pub price: Vec<String>,
    pub dividend: Vec<String>,
    pub earnings: Vec<String>,
    pub cpi: Vec<String>,
    pub long_rate: Vec<String>,
    /// Long rate column is quoted in percent.
    pub rate_in_percent: bool,
}

impl Default for ColumnMap {
    fn default() -> Self {
        let v = |names: &[&str]| names.iter().map(|s| s.to_string()).collect();
        ColumnMap {
            date: v(&["Date"]),
            price: v(&["P"]),
            dividend: v(&["D"]),
            earnings: v(&["E"]),
            cpi: v(&["CPI"]),
            long_rate: v(&["GS10", "Rate GS10", "Long Interest Rate GS10"]),
            rate_in_percent: true,
        }
    }
}

fn find_column(headers: &csv::StringRecord, field: &'static str, names: &[String]) -> Result<usize, IngestError> {
    names
        .iter()
        .find_map(|name| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name.trim())))
        .ok_or_else(|| IngestError::MissingColumn {
            field,
            candidates: names.to_vec(),
        })
}

fn optional_number(raw: &str, row: usize, field: &'static str) -> Result<Option<f64>, IngestError> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| IngestError::BadValue {
        row,
        field,
        value: raw.to_string(),
    })
}

fn required_number(raw: &str, row: usize, field: &'static str) -> Result<f64, IngestError> {
    optional_number(raw, row, field)?.ok_or_else(|| IngestError::BadValue {
        row,
        field,
        value: raw.to_string(),
    })
}

/// Parses monthly records. Rows are numbered from 1 after the header; rows
/// whose cells are all blank are skipped.
pub fn parse_shiller_csv(bytes: &[u8], columns: &ColumnMap) -> Result<Vec<MarketRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let c_date = find_column(&headers, "date", &columns.date)?;
    let c_price = find_column(&headers, "price", &columns.price)?;
    let c_div = find_column(&headers, "dividend", &columns.dividend)?;
    let c_earn = find_column(&headers, "earnings", &columns.earnings)?;
    let c_cpi = find_column(&headers, "cpi", &columns.cpi)?;
    let c_rate = find_column(&headers, "long_rate", &columns.long_rate)?;
    let rate_scale = if columns.rate_in_percent { 0.01 } else { 1.0 };

    let mut out: Vec<MarketRecord> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let month = parse_month(cell(c_date)).ok_or_else(|| IngestError::BadValue {
            row,
            field: "date",
            value: cell(c_date).to_string(),
        })?;
        let nominal_price = required_number(cell(c_price), row, "price")?;
        if !(nominal_price > 0.0) {
            return Err(IngestError::NonPositivePrice {
                row,
                value: nominal_price,
            });
        }
        let cpi = required_number(cell(c_cpi), row, "cpi")?;
        if !(cpi > 0.0) {
            return Err(IngestError::NonPositiveCpi { row, value: cpi });
        }
        if let Some(prev) = out.last() {
            if month != prev.month + 1 {
                return Err(IngestError::DateOrder {
                    row,
                    date: format_month(month),
                    previous: format_month(prev.month),
                });
            }
        }
        out.push(MarketRecord {
            month,
            nominal_price,
            earnings: optional_number(cell(c_earn), row, "earnings")?,
            dividend: optional_number(cell(c_div), row, "dividend")?,
            cpi,
            long_rate: optional_number(cell(c_rate), row, "long_rate")?.map(|r| r * rate_scale),
        });
    }
    Ok(out)
}

/// Values on a contiguous monthly axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub months: Vec<MonthIndex>,
    pub values: Vec<f64>,
}

impl MonthlySeries {
    pub fn new(months: Vec<MonthIndex>, values: Vec<f64>) -> Result<Self, IngestError> {
        if months.len() != values.len() {
            return Err(IngestError::LengthMismatch(months.len(), values.len()));
        }
        Ok(MonthlySeries { months, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, month: MonthIndex) -> Option<f64> {
        let first = *self.months.first()?;
        let i = usize::try_from(month - first).ok()?;
        (self.months.get(i) == Some(&month)).then(|| self.values[i])
    }

    /// Two-column CSV `month,<name>`.
    pub fn to_csv(&self, name: &str) -> String {
        let mut out = format!("month,{name}\n");
        for (m, v) in self.months.iter().zip(&self.values) {
            out.push_str(&format!("{},{}\n", format_month(*m), v));
        }
        out
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, IngestError> {
        let (_, months, mut cols) = read_monthly_table(bytes, &["value"])?;
        Ok(MonthlySeries {
            months,
            values: cols.remove(0),
        })
    }
}

/// Header row, months and one column per requested field.
pub type MonthlyTable = (Vec<String>, Vec<MonthIndex>, Vec<Vec<f64>>);

/// Reads a CSV whose first column is a consecutive month and whose next
/// columns are required numbers named by `fields` in error messages.
/// Returns the header row, the months and one vector per field.
pub fn read_monthly_table(bytes: &[u8], fields: &[&'static str]) -> Result<MonthlyTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader.headers()?.iter().map(str::to_string).collect();
    let mut months: Vec<MonthIndex> = Vec::new();
    let mut cols = vec![Vec::new(); fields.len()];
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let raw = rec.get(0).unwrap_or("");
        let m = parse_month(raw).ok_or_else(|| IngestError::BadValue {
            row,
            field: "month",
            value: raw.to_string(),
        })?;
        if let Some(&prev) = months.last() {
            if m != prev + 1 {
                return Err(IngestError::DateOrder {
                    row,
                    date: format_month(m),
                    previous: format_month(prev),
                });
            }
        }
        months.push(m);
        for (j, field) in fields.iter().enumerate() {
            cols[j].push(required_number(rec.get(j + 1).unwrap_or(""), row, field)?);
        }
    }
    Ok((headers, months, cols))
}

/// Expresses `nominal` in prices of `base`: `nominal * cpi(base) / cpi(t)`.
pub fn deflate(nominal: &[f64], cpi: &[f64], months: &[MonthIndex], base: MonthIndex) -> Result<Vec<f64>, IngestError> {
    if nominal.len() != cpi.len() || nominal.len() != months.len() {
        return Err(IngestError::LengthMismatch(nominal.len(), cpi.len().min(months.len())));
    }
    let b = months
        .iter()
        .position(|&m| m == base)
        .ok_or_else(|| IngestError::BaseNotFound(format_month(base)))?;
    let base_cpi = cpi[b];
    if !(base_cpi > 0.0) {
        return Err(IngestError::NonPositiveCpi {
            row: b + 1,
            value: base_cpi,
        });
    }
    Ok(nominal.iter().zip(cpi).map(|(x, c)| x * (base_cpi / c)).collect())
}

/// Debt share `D / (D + E)` for a debt-to-equity ratio.
pub fn debt_weight(debt_to_equity: f64) -> f64 {
    debt_to_equity / (1.0 + debt_to_equity)
}

/// Free cash flow from earnings when reinvestment funds growth `g` at
/// return `roic`.
pub fn free_cash_flow(earnings: f64, g: f64, roic: f64) -> f64 {
    earnings * (1.0 - g / roic)
}

/// Annual fundamentals on a common monthly axis, in real terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalsSeries {
    pub months: Vec<MonthIndex>,
    pub real_price: Vec<f64>,
    pub real_earnings: Vec<f64>,
    pub fcf: Vec<f64>,
    pub wacc: Vec<f64>,
}

impl FundamentalsSeries {
    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn market(&self) -> MonthlySeries {
        MonthlySeries {
            months: self.months.clone(),
            values: self.real_price.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("month,real_price,real_earnings,fcf,wacc\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                format_month(self.months[i]),
                self.real_price[i],
                self.real_earnings[i],
                self.fcf[i],
                self.wacc[i]
            ));
        }
        out
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, IngestError> {
        let (_, months, cols) = read_monthly_table(bytes, &["real_price", "real_earnings", "fcf", "wacc"])?;
        let mut cols = cols.into_iter();
        let mut next = || cols.next().expect("four columns");
        Ok(FundamentalsSeries {
            months,
            real_price: next(),
            real_earnings: next(),
            fcf: next(),
            wacc: next(),
        })
    }
}

/// Deflates prices and earnings and derives free cash flow and the cost of
/// capital.
///
/// The cost of equity is the earnings yield; the cost of debt is the long
/// rate, optionally reduced by a tax rate or by trailing CPI inflation.
/// Trailing months without earnings or long rate are dropped.
pub fn derive_fundamentals(records: &[MarketRecord], cfg: &IntrinsicConfig) -> Result<FundamentalsSeries, IngestError> {
    if !(cfg.roic > 0.0) {
        return Err(IngestError::Config(format!("roic must be positive, got {}", cfg.roic)));
    }
    if !(cfg.debt_to_equity >= 0.0) {
        return Err(IngestError::Config(format!(
            "debt_to_equity must be >= 0, got {}",
            cfg.debt_to_equity
        )));
    }
    let end = records
        .iter()
        .rposition(|r| r.earnings.is_some() && r.long_rate.is_some())
        .map_or(0, |i| i + 1);
    let records = &records[..end];
    let months: Vec<MonthIndex> = records.iter().map(|r| r.month).collect();
    let cpi: Vec<f64> = records.iter().map(|r| r.cpi).collect();
    let mut empty = FundamentalsSeries {
        months: Vec::new(),
        real_price: Vec::new(),
        real_earnings: Vec::new(),
        fcf: Vec::new(),
        wacc: Vec::new(),
    };
    if records.is_empty() {
        return Ok(empty);
    }
    let base = match &cfg.base_month {
        Some(text) => parse_month(text).ok_or_else(|| IngestError::Config(format!("bad base_month {text:?}")))?,
        None => *months.last().unwrap(),
    };

    let mut earnings = Vec::with_capacity(records.len());
    let mut rates = Vec::with_capacity(records.len());
    for r in records {
        let month = format_month(r.month);
        earnings.push(r.earnings.ok_or_else(|| IngestError::MissingValue {
            field: "earnings",
            month: month.clone(),
        })?);
        rates.push(r.long_rate.ok_or(IngestError::MissingValue {
            field: "long_rate",
            month,
        })?);
    }
    let nominal: Vec<f64> = records.iter().map(|r| r.nominal_price).collect();
    let real_price = deflate(&nominal, &cpi, &months, base)?;
    let real_earnings = deflate(&earnings, &cpi, &months, base)?;

    let wd = debt_weight(cfg.debt_to_equity);
    let we = 1.0 - wd;
    let tax = cfg.tax_rate.unwrap_or(0.0);
    let mut wacc = Vec::with_capacity(records.len());
    for i in 0..records.len() {
        if !(real_price[i] > 0.0) {
            return Err(IngestError::NonPositiveRealPrice {
                month: format_month(months[i]),
                value: real_price[i],
            });
        }
        let mut kd = rates[i];
        if cfg.real_long_rate {
            let j = i.saturating_sub(12);
            let inflation = if i >= 12 { cpi[i] / cpi[j] - 1.0 } else { 0.0 };
            kd -= inflation;
        }
        let ke = real_earnings[i] / real_price[i];
        wacc.push(wd * (1.0 - tax) * kd + we * ke);
    }
    empty.fcf = real_earnings
        .iter()
        .map(|e| free_cash_flow(*e, cfg.growth, cfg.roic))
        .collect();
    empty.months = months;
    empty.real_price = real_price;
    empty.real_earnings = real_earnings;
    empty.wacc = wacc;
    Ok(empty)
}
