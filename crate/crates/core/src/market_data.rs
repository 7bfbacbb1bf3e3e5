//! Daily closing-price series: ingestion, calendar alignment, splitting,
//! windowing and synthetic fixtures.
//!
//! Wide CSV is the canonical fixture format:
//!
//! ```text
//! date,AAA,BBB
//! 2020-01-02,101.5,33.2
//! 2020-01-03,102.0,
//! ```
//!
//! An empty cell (or `NA`, `NaN`, `null`) marks the price as missing. Long
//! CSV carries one observation per row with a `date` column, an asset column
//! (`ticker`, `symbol` or `asset`) and a close column (`adj_close` preferred
//! over `close`). Header matching is case-insensitive and treats spaces as
//! underscores, so Yahoo-style `Adj Close` works.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of unique asset identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetUniverse {
    asset_ids: Vec<String>,
}

impl AssetUniverse {
    pub fn new(asset_ids: Vec<String>) -> Result<Self> {
        if asset_ids.is_empty() {
            return Err(Error::InvalidData("asset universe is empty".into()));
        }
        let mut seen = HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate asset id `{id}`")));
            }
        }
        Ok(Self { asset_ids })
    }

    pub fn ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn len(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asset_ids.is_empty()
    }
}

/// Closing prices for every asset of a universe over a shared calendar.
///
/// `prices` is `n × T`: one row per asset, one column per trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    universe: AssetUniverse,
    dates: Vec<NaiveDate>,
    prices: Array2<f64>,
}

impl PriceSeries {
    pub fn new(universe: AssetUniverse, dates: Vec<NaiveDate>, prices: Array2<f64>) -> Result<Self> {
        if prices.nrows() != universe.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} price rows for {} assets",
                prices.nrows(),
                universe.len()
            )));
        }
        if prices.ncols() != dates.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} price columns for {} dates",
                prices.ncols(),
                dates.len()
            )));
        }
        if dates.windows(2).any(|d| d[0] >= d[1]) {
            return Err(Error::InvalidData("dates must be strictly increasing".into()));
        }
        for ((i, t), &p) in prices.indexed_iter() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::NonPositivePrice {
                    asset: universe.ids()[i].clone(),
                    date: dates[t],
                    value: p,
                });
            }
        }
        Ok(Self {
            universe,
            dates,
            prices,
        })
    }

    pub fn universe(&self) -> &AssetUniverse {
        &self.universe
    }

    pub fn n_assets(&self) -> usize {
        self.universe.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> ArrayView2<'_, f64> {
        self.prices.view()
    }

    /// Columns `[start, end)` of the series as a new series.
    pub fn slice_days(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_days() {
            return Err(Error::InvalidData(format!(
                "day slice {start}..{end} out of bounds for {} days",
                self.n_days()
            )));
        }
        Ok(Self {
            universe: self.universe.clone(),
            dates: self.dates[start..end].to_vec(),
            prices: self.prices.slice(s![.., start..end]).to_owned(),
        })
    }

    /// Stable content hash over ids, dates and price bits.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for id in self.universe.ids() {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        for d in &self.dates {
            h.update(d.to_string().as_bytes());
        }
        for p in self.prices.iter() {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Inclusive date bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidConfig(format!("range start {start} after end {end}")));
        }
        Ok(Self { start, end })
    }

    /// From the first day of `start` month to the last day of `end` month,
    /// both given as `(year, month)`.
    pub fn months(start: (i32, u32), end: (i32, u32)) -> Result<Self> {
        let first = NaiveDate::from_ymd_opt(start.0, start.1, 1)
            .ok_or_else(|| Error::InvalidConfig(format!("bad month {start:?}")))?;
        let (ny, nm) = if end.1 == 12 { (end.0 + 1, 1) } else { (end.0, end.1 + 1) };
        let last = NaiveDate::from_ymd_opt(ny, nm, 1)
            .ok_or_else(|| Error::InvalidConfig(format!("bad month {end:?}")))?
            - Duration::days(1);
        Self::new(first, last)
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Chronologically ordered, non-overlapping train/dev/test ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSplit")]
pub struct DataSplit {
    train: DateRange,
    dev: DateRange,
    test: DateRange,
}

#[derive(Deserialize)]
struct RawSplit {
    train: DateRange,
    dev: DateRange,
    test: DateRange,
}

impl TryFrom<RawSplit> for DataSplit {
    type Error = Error;
    fn try_from(r: RawSplit) -> Result<Self> {
        DataSplit::new(r.train, r.dev, r.test)
    }
}

impl DataSplit {
    pub fn new(train: DateRange, dev: DateRange, test: DateRange) -> Result<Self> {
        for r in [&train, &dev, &test] {
            DateRange::new(r.start, r.end)?;
        }
        if train.end >= dev.start || dev.end >= test.start {
            return Err(Error::InvalidConfig(
                "split ranges must be ordered train < dev < test without overlap".into(),
            ));
        }
        Ok(Self { train, dev, test })
    }

    pub fn train(&self) -> DateRange {
        self.train
    }

    pub fn dev(&self) -> DateRange {
        self.dev
    }

    pub fn test(&self) -> DateRange {
        self.test
    }
}

/// One supervised example: `w` input days strictly before the anchor and
/// `h` target days starting at the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub window: Array2<f64>,
    pub target: Array2<f64>,
    pub anchor_date: NaiveDate,
    /// Column index of the anchor within the parent series.
    pub anchor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsvFormat {
    CsvWide,
    CsvLong,
}

fn normalize_header(h: &str) -> String {
    h.trim().to_ascii_lowercase().replace([' ', '-'], "_")
}

fn parse_date(raw: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d")
        .map_err(|e| Error::InvalidData(format!("bad date `{raw}`: {e}")))
}

/// `None` for an explicitly missing cell.
fn parse_cell(raw: &str, asset: &str, date: NaiveDate) -> Result<Option<f64>> {
    let t = raw.trim();
    if t.is_empty() || ["na", "nan", "null", "n/a"].contains(&t.to_ascii_lowercase().as_str()) {
        return Ok(None);
    }
    let v: f64 = t
        .parse()
        .map_err(|_| Error::InvalidData(format!("unparseable price `{t}` for `{asset}` on {date}")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::NonPositivePrice {
            asset: asset.to_string(),
            date,
            value: v,
        });
    }
    Ok(Some(v))
}

/// Load a price file and align all assets on the dates they share.
pub fn load_prices(path: impl AsRef<Path>, format: CsvFormat) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = rdr.headers()?.iter().map(normalize_header).collect();
    let raw_headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let date_col = headers
        .iter()
        .position(|h| h == "date")
        .ok_or_else(|| Error::MissingColumn("date".into()))?;

    let mut ids: Vec<String> = Vec::new();
    let mut obs: Vec<HashMap<NaiveDate, f64>> = Vec::new();

    match format {
        CsvFormat::CsvWide => {
            let asset_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != date_col).collect();
            if asset_cols.is_empty() {
                return Err(Error::MissingColumn("asset price column".into()));
            }
            ids = asset_cols.iter().map(|&c| raw_headers[c].clone()).collect();
            obs = vec![HashMap::new(); ids.len()];
            for rec in rdr.records() {
                let rec = rec?;
                let date = parse_date(&rec[date_col])?;
                for (k, &c) in asset_cols.iter().enumerate() {
                    if let Some(v) = parse_cell(&rec[c], &ids[k], date)? {
                        if obs[k].insert(date, v).is_some() {
                            return Err(Error::InvalidData(format!("duplicate date {date}")));
                        }
                    }
                }
            }
        }
        CsvFormat::CsvLong => {
            let find = |names: &[&str]| names.iter().find_map(|n| headers.iter().position(|h| h == n));
            let asset_col = find(&["ticker", "symbol", "asset"])
                .ok_or_else(|| Error::MissingColumn("ticker".into()))?;
            let close_col = find(&["adj_close", "adjclose", "close"])
                .ok_or_else(|| Error::MissingColumn("close".into()))?;
            let mut index: HashMap<String, usize> = HashMap::new();
            for rec in rdr.records() {
                let rec = rec?;
                let date = parse_date(&rec[date_col])?;
                let asset = rec[asset_col].to_string();
                let k = *index.entry(asset.clone()).or_insert_with(|| {
                    ids.push(asset.clone());
                    obs.push(HashMap::new());
                    ids.len() - 1
                });
                if let Some(v) = parse_cell(&rec[close_col], &asset, date)? {
                    if obs[k].insert(date, v).is_some() {
                        return Err(Error::InvalidData(format!("duplicate row for `{asset}` on {date}")));
                    }
                }
            }
            if ids.is_empty() {
                return Err(Error::EmptyIntersection);
            }
        }
    }

    let mut common: BTreeSet<NaiveDate> = obs[0].keys().copied().collect();
    for o in &obs[1..] {
        common.retain(|d| o.contains_key(d));
    }
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let dates: Vec<NaiveDate> = common.into_iter().collect();
    let prices = Array2::from_shape_fn((ids.len(), dates.len()), |(i, t)| obs[i][&dates[t]]);
    PriceSeries::new(AssetUniverse::new(ids)?, dates, prices)
}

/// Write a series in the canonical wide format.
pub fn write_wide_csv(series: &PriceSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["date".to_string()];
    header.extend(series.universe().ids().iter().cloned());
    w.write_record(&header)?;
    for (t, d) in series.dates().iter().enumerate() {
        let mut row = vec![d.to_string()];
        row.extend(series.prices().column(t).iter().map(|p| format!("{p:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Restrict a series to each range of the split.
pub fn split_series(series: &PriceSeries, split: &DataSplit) -> Result<(PriceSeries, PriceSeries, PriceSeries)> {
    let pick = |r: DateRange| -> Result<PriceSeries> {
        let idx: Vec<usize> = (0..series.n_days()).filter(|&t| r.contains(series.dates[t])).collect();
        let (Some(&first), Some(&last)) = (idx.first(), idx.last()) else {
            return Err(Error::EmptyRange {
                start: r.start,
                end: r.end,
            });
        };
        // dates are sorted, so the matching days form one contiguous block
        series.slice_days(first, last + 1)
    };
    Ok((pick(split.train)?, pick(split.dev)?, pick(split.test)?))
}

/// Sliding windows with `count == floor((T − w − h) / stride) + 1`.
pub fn make_windows(series: &PriceSeries, w: usize, h: usize, stride: usize) -> Result<Vec<WindowSample>> {
    if w == 0 || h == 0 || stride == 0 {
        return Err(Error::InvalidConfig("window, horizon and stride must be at least 1".into()));
    }
    let t_len = series.n_days();
    if t_len < w + h {
        return Err(Error::SeriesTooShort {
            needed: w + h,
            available: t_len,
        });
    }
    let p = series.prices();
    Ok((w..=t_len - h)
        .step_by(stride)
        .map(|t| WindowSample {
            window: p.slice(s![.., t - w..t]).to_owned(),
            target: p.slice(s![.., t..t + h]).to_owned(),
            anchor_date: series.dates[t],
            anchor: t,
        })
        .collect())
}

/// Simple returns `δ[i, t] = (p[i, t+1] − p[i, t]) / p[i, t]`, shape `n × (T − 1)`.
pub fn rate_of_return(series: &PriceSeries) -> Result<Array2<f64>> {
    if series.n_days() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            available: series.n_days(),
        });
    }
    let p = series.prices();
    Ok(Array2::from_shape_fn((series.n_assets(), series.n_days() - 1), |(i, t)| {
        (p[[i, t + 1]] - p[[i, t]]) / p[[i, t]]
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Period in trading days.
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthAsset {
    pub id: String,
    /// Starting price level.
    pub level: f64,
    /// Log-price drift per day.
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub seasonal: Vec<Sinusoid>,
}

/// Log-price model `log p = log level + slope·t + Σ A·sin(2πt/period + phase) + noise·ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub assets: Vec<SynthAsset>,
    pub n_days: usize,
    #[serde(default)]
    pub noise_scale: f64,
    pub start_date: NaiveDate,
}

/// Largest absolute log-price the generator accepts, keeping `exp` finite and
/// well away from 0.
const MAX_LOG_PRICE: f64 = 600.0;

/// Monday–Friday calendar starting at (or after) `start`.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

pub fn synth_market(spec: &SynthSpec, seed: u64) -> Result<PriceSeries> {
    if spec.n_days < 2 {
        return Err(Error::InvalidSpec("need at least 2 days".into()));
    }
    if spec.assets.is_empty() {
        return Err(Error::InvalidSpec("need at least one asset".into()));
    }
    if !(spec.noise_scale.is_finite() && spec.noise_scale >= 0.0) {
        return Err(Error::InvalidSpec("noise scale must be finite and non-negative".into()));
    }
    let horizon = (spec.n_days - 1) as f64;
    for a in &spec.assets {
        if !(a.level.is_finite() && a.level > 0.0) {
            return Err(Error::InvalidSpec(format!("asset `{}` level must be positive", a.id)));
        }
        if !a.slope.is_finite() {
            return Err(Error::InvalidSpec(format!("asset `{}` slope not finite", a.id)));
        }
        let mut bound = a.level.ln().abs() + a.slope.abs() * horizon + 10.0 * spec.noise_scale;
        for c in &a.seasonal {
            if !(c.period.is_finite() && c.period > 0.0 && c.amplitude.is_finite() && c.phase.is_finite()) {
                return Err(Error::InvalidSpec(format!("asset `{}` has a bad seasonal component", a.id)));
            }
            bound += c.amplitude.abs();
        }
        if bound > MAX_LOG_PRICE {
            return Err(Error::InvalidSpec(format!(
                "asset `{}` log-price may reach {bound:.1}, prices would leave the representable range",
                a.id
            )));
        }
    }
    let universe = AssetUniverse::new(spec.assets.iter().map(|a| a.id.clone()).collect())
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prices = Array2::zeros((spec.assets.len(), spec.n_days));
    for (i, a) in spec.assets.iter().enumerate() {
        for t in 0..spec.n_days {
            let tf = t as f64;
            let mut x = a.level.ln() + a.slope * tf;
            for c in &a.seasonal {
                x += c.amplitude * (std::f64::consts::TAU * tf / c.period + c.phase).sin();
            }
            if spec.noise_scale > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                x += spec.noise_scale * z;
            }
            prices[[i, t]] = x.exp();
        }
    }
    PriceSeries::new(universe, business_days(spec.start_date, spec.n_days), prices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn series_1d(prices: &[f64]) -> PriceSeries {
        let u = AssetUniverse::new(vec!["A".into()]).unwrap();
        let dates = business_days(d("2020-01-01"), prices.len());
        PriceSeries::new(u, dates, Array2::from_shape_vec((1, prices.len()), prices.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn wide_csv_parses() {
        let f = write_tmp("date,A,B\n2020-01-02,1,2\n2020-01-03,1.5,2.5\n2020-01-06,2,3\n");
        let s = load_prices(f.path(), CsvFormat::CsvWide).unwrap();
        assert_eq!(s.n_assets(), 2);
        assert_eq!(s.n_days(), 3);
        assert_eq!(s.prices()[[1, 2]], 3.0);
    }

    #[test]
    fn missing_cell_shrinks_calendar() {
        let f = write_tmp("date,A,B\n2020-01-02,1,2\n2020-01-03,1.5,2.5\n2020-01-06,2,\n");
        let s = load_prices(f.path(), CsvFormat::CsvWide).unwrap();
        assert_eq!(s.n_days(), 2);
        assert_eq!(s.dates(), &[d("2020-01-02"), d("2020-01-03")]);
    }

    #[test]
    fn zero_price_is_rejected_with_location() {
        let f = write_tmp("date,A,B\n2020-01-02,1,2\n2020-01-03,0.0,2.5\n");
        match load_prices(f.path(), CsvFormat::CsvWide) {
            Err(Error::NonPositivePrice { asset, date, .. }) => {
                assert_eq!(asset, "A");
                assert_eq!(date, d("2020-01-03"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn long_csv_yahoo_style() {
        let f = write_tmp(
            "Date,Ticker,Open,Close,Adj Close\n\
             2020-01-02,X,1,1,0.9\n2020-01-02,Y,1,5,5\n2020-01-03,X,1,1,1.1\n2020-01-03,Y,1,6,6\n2020-01-06,X,1,1,1.2\n",
        );
        let s = load_prices(f.path(), CsvFormat::CsvLong).unwrap();
        assert_eq!(s.universe().ids(), &["X".to_string(), "Y".to_string()]);
        assert_eq!(s.n_days(), 2);
        assert_eq!(s.prices()[[0, 0]], 0.9);
    }

    #[test]
    fn long_csv_missing_close_column() {
        let f = write_tmp("date,ticker,open\n2020-01-02,X,1\n");
        assert!(matches!(load_prices(f.path(), CsvFormat::CsvLong), Err(Error::MissingColumn(c)) if c == "close"));
    }

    #[test]
    fn disjoint_dates_give_empty_intersection() {
        let f = write_tmp("date,A,B\n2020-01-02,1,\n2020-01-03,,2\n");
        assert!(matches!(load_prices(f.path(), CsvFormat::CsvWide), Err(Error::EmptyIntersection)));
    }

    #[test]
    fn wide_round_trip_through_file() {
        let spec = SynthSpec {
            assets: vec![SynthAsset {
                id: "A".into(),
                level: 50.0,
                slope: 0.001,
                seasonal: vec![Sinusoid {
                    amplitude: 0.1,
                    period: 7.0,
                    phase: 0.3,
                }],
            }],
            n_days: 20,
            noise_scale: 0.01,
            start_date: d("2021-03-01"),
        };
        let s = synth_market(&spec, 3).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_wide_csv(&s, f.path()).unwrap();
        assert_eq!(load_prices(f.path(), CsvFormat::CsvWide).unwrap(), s);
    }

    #[test]
    fn split_counts_and_overlap_rejection() {
        let s = synth_market(
            &SynthSpec {
                assets: vec![SynthAsset {
                    id: "A".into(),
                    level: 1.0,
                    slope: 0.0,
                    seasonal: vec![],
                }],
                n_days: 100,
                noise_scale: 0.0,
                start_date: d("2020-01-01"),
            },
            0,
        )
        .unwrap();
        let ds = s.dates();
        let split = DataSplit::new(
            DateRange::new(ds[0], ds[59]).unwrap(),
            DateRange::new(ds[60], ds[79]).unwrap(),
            DateRange::new(ds[80], ds[99]).unwrap(),
        )
        .unwrap();
        let (a, b, c) = split_series(&s, &split).unwrap();
        assert_eq!((a.n_days(), b.n_days(), c.n_days()), (60, 20, 20));

        assert!(DataSplit::new(
            DateRange::new(ds[0], ds[60]).unwrap(),
            DateRange::new(ds[60], ds[79]).unwrap(),
            DateRange::new(ds[80], ds[99]).unwrap(),
        )
        .is_err());

        let empty = DataSplit::new(
            DateRange::new(ds[0], ds[59]).unwrap(),
            DateRange::new(ds[60], ds[79]).unwrap(),
            DateRange::new(d("2031-01-01"), d("2031-02-01")).unwrap(),
        )
        .unwrap();
        assert!(matches!(split_series(&s, &empty), Err(Error::EmptyRange { .. })));
    }

    #[test]
    fn table_split_bounds_are_valid() {
        let split = DataSplit::new(
            DateRange::months((1992, 1), (2004, 9)).unwrap(),
            DateRange::months((2004, 10), (2006, 5)).unwrap(),
            DateRange::months((2006, 6), (2022, 12)).unwrap(),
        )
        .unwrap();
        assert_eq!(split.train().end, d("2004-09-30"));
        assert_eq!(split.test().end, d("2022-12-31"));
    }

    #[test]
    fn window_counts() {
        let s = series_1d(&[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]);
        assert_eq!(make_windows(&s, 5, 1, 1).unwrap().len(), 5);
        assert_eq!(make_windows(&s, 5, 5, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&s, 2, 1, 3).unwrap().len(), (10 - 2 - 1) / 3 + 1);
        let s9 = series_1d(&[1.; 9]);
        assert!(matches!(make_windows(&s9, 5, 5, 1), Err(Error::SeriesTooShort { .. })));
        let w = &make_windows(&s, 3, 2, 1).unwrap()[0];
        assert_eq!(w.window.row(0).to_vec(), vec![1., 2., 3.]);
        assert_eq!(w.target.row(0).to_vec(), vec![4., 5.]);
        assert_eq!(w.anchor, 3);
    }

    #[test]
    fn returns_by_definition() {
        let r = rate_of_return(&series_1d(&[100., 110.])).unwrap();
        assert!((r[[0, 0]] - 0.10).abs() < 1e-15);
        let r = rate_of_return(&series_1d(&[100., 90., 99.])).unwrap();
        assert!((r[[0, 0]] + 0.10).abs() < 1e-15 && (r[[0, 1]] - 0.10).abs() < 1e-15);
        let r = rate_of_return(&series_1d(&[7.; 4])).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
        assert!(rate_of_return(&series_1d(&[7.])).is_err());
    }

    fn one_asset_spec(slope: f64, amp: f64, noise: f64) -> SynthSpec {
        SynthSpec {
            assets: vec![SynthAsset {
                id: "A".into(),
                level: 100.0,
                slope,
                seasonal: vec![Sinusoid {
                    amplitude: amp,
                    period: 10.0,
                    phase: 0.0,
                }],
            }],
            n_days: 50,
            noise_scale: noise,
            start_date: d("2020-01-01"),
        }
    }

    #[test]
    fn synth_degenerate_and_monotone() {
        let flat = synth_market(&one_asset_spec(0.0, 0.0, 0.0), 1).unwrap();
        let p0 = flat.prices()[[0, 0]];
        assert!(flat.prices().iter().all(|&p| p == p0));

        let up = synth_market(&one_asset_spec(0.001, 0.0, 0.0), 1).unwrap();
        assert!(up.prices().row(0).windows(2).into_iter().all(|w| w[1] > w[0]));

        let a = synth_market(&one_asset_spec(0.0, 0.2, 0.05), 9).unwrap();
        let b = synth_market(&one_asset_spec(0.0, 0.2, 0.05), 9).unwrap();
        assert!(a.prices().iter().zip(b.prices().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn synth_rejects_unbounded_spec() {
        assert!(matches!(
            synth_market(&one_asset_spec(0.0, 1e4, 0.0), 0),
            Err(Error::InvalidSpec(_))
        ));
        let mut spec = one_asset_spec(0.0, 0.0, 0.0);
        spec.n_days = 1;
        assert!(matches!(synth_market(&spec, 0), Err(Error::InvalidSpec(_))));
    }
}
