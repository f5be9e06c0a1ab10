//! Return series with missing values: CSV ingestion, writing and splitting.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvError};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReturnSeries {
    /// Log-returns; `None` marks a missing value.
    pub values: Vec<Option<f64>>,
    pub dates: Option<Vec<NaiveDate>>,
}

impl ReturnSeries {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        Self { values, dates: None }
    }

    pub fn from_returns(values: &[f64]) -> Self {
        Self::new(values.iter().map(|v| Some(*v)).collect())
    }

    pub fn with_dates(values: Vec<Option<f64>>, dates: Vec<NaiveDate>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(SvError::invalid(format!("{} dates for {} values", dates.len(), values.len())));
        }
        Ok(Self { values, dates: Some(dates) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_mask(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_none).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().flatten().count()
    }

    pub fn view(&self) -> SeriesView<'_> {
        SeriesView {
            values: &self.values,
            dates: self.dates.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesView<'a> {
    pub values: &'a [Option<f64>],
    pub dates: Option<&'a [NaiveDate]>,
}

impl SeriesView<'_> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_owned(&self) -> ReturnSeries {
        ReturnSeries {
            values: self.values.to_vec(),
            dates: self.dates.map(<[NaiveDate]>::to_vec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// First out-of-sample index (0-based), i.e. the in-sample length.
    Index(usize),
    /// First out-of-sample date.
    Date(NaiveDate),
}

impl std::str::FromStr for Boundary {
    type Err = SvError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return Ok(Boundary::Index(i));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(Boundary::Date)
            .map_err(|_| SvError::Usage(format!("split '{s}' is neither an index nor an ISO date")))
    }
}

/// In-sample and out-of-sample views; the boundary must leave both nonempty.
pub fn split_series(series: &ReturnSeries, boundary: Boundary) -> Result<(SeriesView<'_>, SeriesView<'_>)> {
    let n = series.len();
    let at = match boundary {
        Boundary::Index(i) => i,
        Boundary::Date(d) => {
            let dates = series
                .dates
                .as_ref()
                .ok_or_else(|| SvError::invalid("date split on a series without dates"))?;
            dates.iter().position(|x| *x >= d).unwrap_or(n)
        }
    };
    if at == 0 || at >= n {
        return Err(SvError::invalid(format!(
            "split {boundary:?} falls outside the series (length {n}); both parts must be nonempty"
        )));
    }
    let v = series.view();
    let (a, b) = v.values.split_at(at);
    let (da, db) = match v.dates {
        Some(d) => {
            let (x, y) = d.split_at(at);
            (Some(x), Some(y))
        }
        None => (None, None),
    };
    Ok((SeriesView { values: a, dates: da }, SeriesView { values: b, dates: db }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub series: ReturnSeries,
    /// File line numbers (header is line 1) whose value could not be parsed.
    pub malformed_lines: Vec<u64>,
    pub from_prices: bool,
}

const RETURN_NAMES: [&str; 4] = ["return", "returns", "log_return", "ret"];
const PRICE_NAMES: [&str; 6] = ["adj close", "adj_close", "adjusted", "adjclose", "close", "price"];

fn normalize(h: &str) -> String {
    h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase()
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| SvError::Data(format!("line {line}: date '{s}' is not ISO-8601 (YYYY-MM-DD)")))
}

fn is_blank(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("null")
}

/// Reads a `date,price` or `date,return` CSV, choosing the column by header name.
/// Prices become `log(p_t / p_{t-1})`; a return next to an unreadable price is missing.
pub fn read_series<R: Read>(input: R) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(normalize).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(SvError::Data("empty file".into()));
    }
    let date_col = header.iter().position(|h| h == "date");
    let (col, from_prices) = if let Some(c) = header.iter().position(|h| RETURN_NAMES.contains(&h.as_str())) {
        (c, false)
    } else if let Some(c) = PRICE_NAMES
        .iter()
        .find_map(|name| header.iter().position(|h| h == name))
    {
        (c, true)
    } else {
        return Err(SvError::Data(format!(
            "no price or return column in header {header:?}; expected one of {PRICE_NAMES:?} or {RETURN_NAMES:?}"
        )));
    };

    let mut raw: Vec<Option<f64>> = Vec::new();
    let mut dates = date_col.map(|_| Vec::new());
    let mut lines = Vec::new();
    let mut malformed = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if let (Some(c), Some(d)) = (date_col, dates.as_mut()) {
            d.push(parse_date(rec.get(c).unwrap_or(""), line)?);
        }
        let field = rec.get(col).unwrap_or("");
        let value = if is_blank(field) {
            None
        } else {
            match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    malformed.push(line);
                    None
                }
            }
        };
        raw.push(value);
        lines.push(line);
    }
    if raw.is_empty() {
        return Err(SvError::Data("empty file: no data rows".into()));
    }

    let series = if from_prices {
        let bad: Vec<u64> = raw
            .iter()
            .zip(&lines)
            .filter(|(p, _)| p.is_some_and(|p| p <= 0.0))
            .map(|(_, l)| *l)
            .collect();
        if !bad.is_empty() {
            return Err(SvError::Data(format!("nonpositive prices on lines {bad:?}")));
        }
        if raw.iter().flatten().count() < 2 {
            return Err(SvError::Data("need at least two valid prices".into()));
        }
        let values = raw
            .windows(2)
            .map(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => Some((b / a).ln()),
                _ => None,
            })
            .collect();
        ReturnSeries {
            values,
            dates: dates.map(|d| d[1..].to_vec()),
        }
    } else {
        ReturnSeries { values: raw, dates }
    };
    if !malformed.is_empty() {
        log::warn!("{} unparseable value(s) treated as missing (lines {malformed:?})", malformed.len());
    }
    Ok(Ingested {
        series,
        malformed_lines: malformed,
        from_prices,
    })
}

pub fn ingest_prices(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| SvError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_series(file)
}

/// Writes `date,return` (or `t,return` with 1-based `t`); missing values are empty cells.
/// Floats use the shortest representation that parses back to the same double.
pub fn write_series<W: Write>(series: &ReturnSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let first = if series.dates.is_some() { "date" } else { "t" };
    w.write_record([first, "return"])?;
    for (t, v) in series.values.iter().enumerate() {
        let key = match &series.dates {
            Some(d) => d[t].format("%Y-%m-%d").to_string(),
            None => (t + 1).to_string(),
        };
        w.write_record([key, v.map(|x| x.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_series(series: &ReturnSeries, path: impl AsRef<Path>) -> Result<()> {
    write_series(series, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn read(text: &str) -> Result<Ingested> {
        read_series(text.as_bytes())
    }

    #[test]
    fn single_return_from_two_prices() {
        let got = read("date,adj close\n2020-01-02,100\n2020-01-03,110\n").unwrap();
        assert!(got.from_prices);
        assert_eq!(got.series.len(), 1);
        assert_abs_diff_eq!(got.series.values[0].unwrap(), 0.095_310_179_804_324_87, epsilon = 1e-15);
        assert_eq!(got.series.dates.unwrap(), vec![NaiveDate::from_ymd_opt(2020, 1, 3).unwrap()]);
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let got = read("Date,Close\n2020-01-01,5\n2020-01-02,5\n2020-01-03,5\n").unwrap();
        assert_eq!(got.series.values, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn malformed_price_becomes_missing() {
        let got = read("date,price\n2020-01-01,100\n2020-01-02,101\n2020-01-03,abc\n").unwrap();
        assert_eq!(got.series.values.len(), 2);
        assert!(got.series.values[0].is_some());
        assert!(got.series.values[1].is_none());
        assert_eq!(got.malformed_lines, vec![4]);
    }

    #[test]
    fn return_column_is_detected() {
        let got = read("t,close,return\n1,3,0.01\n2,4,\n3,5,-0.02\n").unwrap();
        assert!(!got.from_prices);
        assert_eq!(got.series.values, vec![Some(0.01), None, Some(-0.02)]);
        assert!(got.series.dates.is_none());
        assert!(got.malformed_lines.is_empty());
    }

    #[test]
    fn hard_errors() {
        assert!(read("").is_err());
        assert!(read("date,price\n").is_err());
        assert!(read("date,price\n2020-01-01,100\n").is_err());
        assert!(read("date,price\n2020-01-01,100\n2020-01-02,x\n").is_err());
        let err = read("date,price\n2020-01-01,100\n2020-01-02,-1\n2020-01-03,0\n").unwrap_err().to_string();
        assert!(err.contains("[3, 4]"), "{err}");
        assert!(read("date,volume\n2020-01-01,100\n").is_err());
        assert!(read("date,price\n01.02.2020,100\n02.02.2020,101\n").is_err());
    }

    #[test]
    fn split_by_index_and_date() {
        let s = ReturnSeries::from_returns(&vec![0.0; 4000]);
        let (a, b) = split_series(&s, Boundary::Index(3000)).unwrap();
        assert_eq!((a.len(), b.len()), (3000, 1000));
        assert!(split_series(&s, Boundary::Index(0)).is_err());
        assert!(split_series(&s, Boundary::Index(4000)).is_err());

        let d0 = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
        let dates: Vec<NaiveDate> = (0..10).map(|i| d0 + chrono::Days::new(i)).collect();
        let s = ReturnSeries::with_dates(vec![Some(1.0); 10], dates).unwrap();
        let (a, b) = split_series(&s, "2000-01-08".parse().unwrap()).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        assert_eq!(b.dates.unwrap()[0], NaiveDate::from_ymd_opt(2000, 1, 8).unwrap());
        assert!(split_series(&s, "1999-12-31".parse().unwrap()).is_err());
        assert!(split_series(&s, "2001-01-01".parse().unwrap()).is_err());
    }

    #[test]
    fn boundary_parse() {
        assert_eq!("3000".parse::<Boundary>().unwrap(), Boundary::Index(3000));
        assert!("31.12.2007".parse::<Boundary>().is_err());
    }

    fn series_strategy() -> impl Strategy<Value = ReturnSeries> {
        (
            proptest::collection::vec(proptest::option::weighted(0.9, -1.0f64..1.0), 2..60),
            any::<bool>(),
        )
            .prop_map(|(values, dated)| {
                let mut s = ReturnSeries::new(values);
                if dated {
                    let d0 = NaiveDate::from_ymd_opt(1999, 12, 30).unwrap();
                    s.dates = Some((0..s.len() as u64).map(|i| d0 + chrono::Days::new(i)).collect());
                }
                s
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(s in series_strategy()) {
            let mut buf = Vec::new();
            write_series(&s, &mut buf).unwrap();
            let back = read_series(buf.as_slice()).unwrap();
            prop_assert_eq!(back.series, s);
            prop_assert!(back.malformed_lines.is_empty());
        }

        #[test]
        fn split_then_concatenate(s in series_strategy(), at in 1usize..59) {
            prop_assume!(at < s.len());
            let (a, b) = split_series(&s, Boundary::Index(at)).unwrap();
            let mut joined = a.to_owned();
            let tail = b.to_owned();
            joined.values.extend(tail.values);
            if let (Some(d), Some(e)) = (joined.dates.as_mut(), tail.dates) {
                d.extend(e);
            }
            prop_assert_eq!(joined, s);
        }
    }
}
