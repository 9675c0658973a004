//! Price / return panel ingestion, log-returns, horizon aggregation and
//! rolling estimation windows.
//!
//! Files are UTF-8 delimited text with a header `date,TICKER1,TICKER2,...`,
//! ISO-8601 dates in the first column and dot-decimal numbers elsewhere.
//! Rows holding any missing or non-numeric cell are dropped whole.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::ReturnsMatrix;

/// What the numeric columns of a panel file hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelKind {
    Prices,
    Returns,
}

impl std::str::FromStr for PanelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prices" => Ok(Self::Prices),
            "returns" => Ok(Self::Returns),
            other => Err(Error::InvalidInput(format!("unknown panel kind '{other}' (prices|returns)"))),
        }
    }
}

/// T×p panel of closing prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub values: DMatrix<f64>,
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
}

impl PricePanel {
    /// Checks shape and date order; price positivity is checked by [`log_returns`].
    pub fn new(values: DMatrix<f64>, dates: Vec<String>, tickers: Vec<String>) -> Result<Self> {
        if dates.len() != values.nrows() {
            return Err(Error::DimensionMismatch { expected: values.nrows(), found: dates.len() });
        }
        if tickers.len() != values.ncols() {
            return Err(Error::DimensionMismatch { expected: values.ncols(), found: tickers.len() });
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("price dates not strictly increasing".into()));
        }
        Ok(Self { values, dates, tickers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Panel {
    Prices(PricePanel),
    Returns(ReturnsMatrix),
}

/// A loaded panel plus how many rows were discarded.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: Panel,
    pub dropped_rows: usize,
}

struct RawTable {
    tickers: Vec<String>,
    dates: Vec<String>,
    rows: Vec<Vec<f64>>,
    dropped: usize,
}

fn looks_like_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() >= 10
        && b[..4].iter().all(u8::is_ascii_digit)
        && b[4] == b'-'
        && b[5..7].iter().all(u8::is_ascii_digit)
        && b[7] == b'-'
        && b[8..10].iter().all(u8::is_ascii_digit)
}

fn read_table(path: &Path) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse("header needs a date column and at least one ticker".into()));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("record {}: {e}", line + 2)))?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!(
                "record {} has {} fields, header has {}",
                line + 2,
                rec.len(),
                headers.len()
            )));
        }
        let date = rec[0].to_string();
        if !looks_like_iso_date(&date) {
            return Err(Error::Parse(format!("record {}: '{date}' is not an ISO-8601 date", line + 2)));
        }
        let parsed: Option<Vec<f64>> = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(v) => {
                dates.push(date);
                rows.push(v);
            }
            None => dropped += 1,
        }
    }
    Ok(RawTable { tickers, dates, rows, dropped })
}

fn to_matrix(rows: &[Vec<f64>], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

/// Reads a panel file. Incomplete rows are dropped and the count logged.
pub fn load_panel(path: impl AsRef<Path>, kind: PanelKind) -> Result<LoadedPanel> {
    let path = path.as_ref();
    let table = read_table(path)?;
    if table.dropped > 0 {
        log::warn!("{}: dropped {} incomplete row(s)", path.display(), table.dropped);
    }
    if table.rows.len() < 2 {
        return Err(Error::EmptyPanel { rows: table.rows.len() });
    }
    let values = to_matrix(&table.rows, table.tickers.len());
    let panel = match kind {
        PanelKind::Prices => Panel::Prices(PricePanel::new(values, table.dates, table.tickers)?),
        PanelKind::Returns => Panel::Returns(ReturnsMatrix::new(values, table.dates, table.tickers)?),
    };
    Ok(LoadedPanel { panel, dropped_rows: table.dropped })
}

/// Loads a file and converts prices to log-returns when needed.
pub fn load_returns(path: impl AsRef<Path>, kind: PanelKind) -> Result<ReturnsMatrix> {
    match load_panel(path, kind)?.panel {
        Panel::Returns(r) => Ok(r),
        Panel::Prices(p) => log_returns(&p),
    }
}

/// Writes a panel in the same layout `load_panel` reads. Values use the
/// shortest representation that round-trips exactly.
pub fn write_panel(
    path: impl AsRef<Path>,
    values: &DMatrix<f64>,
    dates: &[String],
    tickers: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Parse(e.to_string()))?;
    let mut header = vec!["date".to_string()];
    header.extend(tickers.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for (i, d) in dates.iter().enumerate() {
        let mut rec = vec![d.clone()];
        rec.extend(values.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `r[t, j] = ln(P[t+1, j] / P[t, j])`, dated by the later observation.
pub fn log_returns(prices: &PricePanel) -> Result<ReturnsMatrix> {
    let (t, p) = prices.values.shape();
    if t < 2 {
        return Err(Error::TooFewRows { required: 2, rows: t });
    }
    if let Some((idx, _)) = prices.values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        // column-major storage
        return Err(Error::NonPositivePrice { row: idx % t, col: idx / t });
    }
    let values = DMatrix::from_fn(t - 1, p, |i, j| (prices.values[(i + 1, j)] / prices.values[(i, j)]).ln());
    ReturnsMatrix::new(values, prices.dates[1..].to_vec(), prices.tickers.clone())
}

/// Sums non-overlapping blocks of `h` consecutive rows anchored at the first row.
/// Trailing rows that do not fill a block are dropped. Each block is labelled
/// with its last date.
pub fn aggregate_horizon(r: &ReturnsMatrix, h: usize) -> Result<ReturnsMatrix> {
    let t = r.n_periods();
    if h == 0 || h > t {
        return Err(Error::HorizonTooLarge { horizon: h, rows: t });
    }
    let blocks = t / h;
    let p = r.n_assets();
    let x = r.values();
    let values = DMatrix::from_fn(blocks, p, |b, j| (b * h..(b + 1) * h).map(|i| x[(i, j)]).sum());
    let dates = (0..blocks).map(|b| r.dates()[(b + 1) * h - 1].clone()).collect();
    if blocks < 2 {
        return Err(Error::TooFewRows { required: 2 * h, rows: t });
    }
    ReturnsMatrix::new(values, dates, r.tickers().to_vec())
}

/// Rebalancing horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Horizon {
    Daily,
    Weekly,
    Monthly,
}

impl Horizon {
    /// Trading days per period.
    pub fn days(self) -> usize {
        match self {
            Horizon::Daily => 1,
            Horizon::Weekly => 5,
            Horizon::Monthly => 20,
        }
    }

    /// Default estimation window in periods: 150 days, 100 weeks, 50 months.
    pub fn default_window(self) -> usize {
        match self {
            Horizon::Daily => 150,
            Horizon::Weekly => 100,
            Horizon::Monthly => 50,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Horizon::Daily => "daily",
            Horizon::Weekly => "weekly",
            Horizon::Monthly => "monthly",
        }
    }
}

impl std::str::FromStr for Horizon {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" | "1" => Ok(Self::Daily),
            "weekly" | "5" => Ok(Self::Weekly),
            "monthly" | "20" => Ok(Self::Monthly),
            other => Err(Error::InvalidInput(format!("unknown horizon '{other}' (daily|weekly|monthly)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollingWindowPlan {
    pub window_length: usize,
    pub step: usize,
    pub horizon: Horizon,
}

impl RollingWindowPlan {
    pub fn new(window_length: usize, step: usize, horizon: Horizon) -> Result<Self> {
        if window_length < 2 || step == 0 {
            return Err(Error::InvalidInput(format!(
                "window_length must be > 1 and step >= 1 (got {window_length}, {step})"
            )));
        }
        Ok(Self { window_length, step, horizon })
    }

    /// The default window for `horizon`, stepping one period.
    pub fn for_horizon(horizon: Horizon) -> Self {
        Self { window_length: horizon.default_window(), step: 1, horizon }
    }
}

/// Train / test row ranges of one rolling window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Row-level windows over a panel of `n_rows`: window `k` trains on
/// `[k·step, k·step + W)` and tests on the following `h = horizon.days()` rows.
pub fn rolling_windows(n_rows: usize, plan: &RollingWindowPlan) -> Result<Vec<Window>> {
    let h = plan.horizon.days();
    if plan.window_length + h > n_rows {
        return Err(Error::TooFewRows { required: plan.window_length + h, rows: n_rows });
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + plan.window_length + h <= n_rows {
        let split = start + plan.window_length;
        out.push(Window { train: start..split, test: split..split + h });
        start += plan.step;
    }
    Ok(out)
}

/// A window whose training rows index the aggregated panel and whose test rows
/// index the underlying daily panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonWindow {
    pub train: Range<usize>,
    pub test_daily: Range<usize>,
}

/// Windows for multi-day horizons: train on `W` aggregated periods, test on the
/// `h` daily returns making up the next period. Steps by whole aggregated periods.
pub fn horizon_windows(n_daily: usize, plan: &RollingWindowPlan) -> Result<Vec<HorizonWindow>> {
    let h = plan.horizon.days();
    let periods = n_daily / h;
    if plan.window_length + 1 > periods {
        return Err(Error::TooFewRows { required: (plan.window_length + 1) * h, rows: n_daily });
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + plan.window_length < periods {
        let split = start + plan.window_length;
        out.push(HorizonWindow { train: start..split, test_daily: split * h..(split + 1) * h });
        start += plan.step;
    }
    Ok(out)
}

/// Intra-day returns grouped by calendar date (the first ten characters of
/// the timestamp column).
#[derive(Debug, Clone, Default)]
pub struct IntradayReturns {
    pub tickers: Vec<String>,
    pub by_date: BTreeMap<String, DMatrix<f64>>,
}

impl IntradayReturns {
    pub fn for_date(&self, date: &str) -> Option<&DMatrix<f64>> {
        self.by_date.get(date.get(..10).unwrap_or(date))
    }
}

pub fn load_intraday(path: impl AsRef<Path>) -> Result<IntradayReturns> {
    let table = read_table(path.as_ref())?;
    let p = table.tickers.len();
    let mut grouped: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (d, row) in table.dates.into_iter().zip(table.rows) {
        grouped.entry(d[..10].to_string()).or_default().push(row);
    }
    let by_date = grouped.into_iter().map(|(d, rows)| (d, to_matrix(&rows, p))).collect();
    Ok(IntradayReturns { tickers: table.tickers, by_date })
}

/// Restricts a panel to rows whose date lies in `[from, to]` (inclusive,
/// lexicographic on ISO dates).
pub fn filter_dates(r: &ReturnsMatrix, from: Option<&str>, to: Option<&str>) -> Result<ReturnsMatrix> {
    let idx: Vec<usize> = r
        .dates()
        .iter()
        .enumerate()
        .filter(|(_, d)| from.is_none_or(|f| d.as_str() >= f) && to.is_none_or(|t| &d[..t.len().min(d.len())] <= t))
        .map(|(i, _)| i)
        .collect();
    if idx.len() < 2 {
        return Err(Error::EmptyPanel { rows: idx.len() });
    }
    r.select_rows(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn panel(values: &[f64], t: usize, p: usize) -> ReturnsMatrix {
        ReturnsMatrix::from_values(DMatrix::from_row_slice(t, p, values)).unwrap()
    }

    #[test]
    fn loads_well_formed_file() {
        let f = write("date,AAA,BBB\n2020-01-01,1.0,2.0\n2020-01-02,1.5,2.5\n2020-01-03,1.2,2.2\n");
        let loaded = load_panel(f.path(), PanelKind::Prices).unwrap();
        assert_eq!(loaded.dropped_rows, 0);
        match loaded.panel {
            Panel::Prices(p) => {
                assert_eq!(p.values.shape(), (3, 2));
                assert_eq!(p.tickers, vec!["AAA", "BBB"]);
            }
            _ => panic!("expected prices"),
        }
    }

    #[test]
    fn drops_rows_with_missing_cells() {
        let f = write("date,AAA,BBB\n2020-01-01,1.0,2.0\n2020-01-02,NA,2.5\n2020-01-03,1.2,2.2\n");
        let loaded = load_panel(f.path(), PanelKind::Returns).unwrap();
        assert_eq!(loaded.dropped_rows, 1);
        match loaded.panel {
            Panel::Returns(r) => {
                assert_eq!(r.values().shape(), (2, 2));
                assert_eq!(r.dates(), &["2020-01-01".to_string(), "2020-01-03".to_string()]);
            }
            _ => panic!("expected returns"),
        }
    }

    #[test]
    fn too_few_rows_is_empty_panel() {
        let f = write("date,AAA,BBB\n2020-01-01,1.0,2.0\n2020-01-02,,2.5\n");
        assert!(matches!(load_panel(f.path(), PanelKind::Prices), Err(Error::EmptyPanel { rows: 1 })));
    }

    #[test]
    fn malformed_date_is_parse_error() {
        let f = write("date,AAA,BBB\n01/02/2020,1.0,2.0\n2020-01-02,1.0,2.5\n");
        assert!(matches!(load_panel(f.path(), PanelKind::Prices), Err(Error::Parse(_))));
    }

    #[test]
    fn write_then_load_is_identity() {
        let values = DMatrix::from_row_slice(3, 2, &[0.1, -1.0 / 3.0, 1e-17, 2.5e10, -0.0, std::f64::consts::PI]);
        let dates: Vec<String> = vec!["2021-01-01".into(), "2021-01-02".into(), "2021-01-03".into()];
        let tickers: Vec<String> = vec!["A".into(), "B".into()];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_panel(f.path(), &values, &dates, &tickers).unwrap();
        let back = load_returns(f.path(), PanelKind::Returns).unwrap();
        assert_eq!(back.values(), &values);
        assert_eq!(back.dates(), dates.as_slice());
    }

    fn prices(vals: &[f64], p: usize) -> PricePanel {
        let t = vals.len() / p;
        let dates = (0..t).map(|i| format!("2020-01-{:02}", i + 1)).collect();
        let tickers = (0..p).map(|j| format!("T{j}")).collect();
        PricePanel::new(DMatrix::from_row_slice(t, p, vals), dates, tickers).unwrap()
    }

    #[test]
    fn log_return_hand_values() {
        let r = log_returns(&prices(&[1.0, 100.0, std::f64::consts::E, 110.0, 1.0, 121.0], 2)).unwrap();
        assert!((r.values()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((r.values()[(0, 1)] - 1.1f64.ln()).abs() < 1e-15);
        assert!((r.values()[(1, 1)] - 1.1f64.ln()).abs() < 1e-14);
        assert_eq!(r.dates()[0], "2020-01-02");
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let r = log_returns(&prices(&[5.0, 7.0, 5.0, 7.0, 5.0, 7.0], 2)).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_positive_price_rejected() {
        let err = log_returns(&prices(&[5.0, 7.0, 5.0, 0.0, 5.0, 7.0], 2)).unwrap_err();
        assert!(matches!(err, Error::NonPositivePrice { row: 1, col: 1 }));
    }

    #[test]
    fn weekly_and_monthly_sums() {
        let r = panel(&[0.01; 10], 5, 2);
        let w = aggregate_horizon(&r, 5);
        // one block only: below the two-row panel minimum
        assert!(w.is_err());
        let r = panel(&[0.01; 20], 10, 2);
        let w = aggregate_horizon(&r, 5).unwrap();
        assert!((w.values()[(0, 0)] - 0.05).abs() < 1e-15);
        let r = panel(&vec![0.002; 80], 40, 2);
        let m = aggregate_horizon(&r, 20).unwrap();
        assert!((m.values()[(1, 1)] - 20.0 * 0.002).abs() < 1e-15);
    }

    #[test]
    fn aggregation_drops_remainder() {
        let vals: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let r = panel(&vals, 12, 2);
        let a = aggregate_horizon(&r, 5).unwrap();
        assert_eq!(a.n_periods(), 2);
        assert_eq!(a.dates()[1], r.dates()[9]);
        assert!(matches!(aggregate_horizon(&r, 13), Err(Error::HorizonTooLarge { .. })));
    }

    #[test]
    fn small_window_example() {
        let plan = RollingWindowPlan::new(2, 1, Horizon::Daily).unwrap();
        let w = rolling_windows(4, &plan).unwrap();
        assert_eq!(w, vec![Window { train: 0..2, test: 2..3 }, Window { train: 1..3, test: 3..4 }]);
        assert_eq!(rolling_windows(3, &plan).unwrap().len(), 1);
    }

    #[test]
    fn window_count_matches_enumeration() {
        for horizon in [Horizon::Daily, Horizon::Weekly, Horizon::Monthly] {
            let h = horizon.days();
            for t in 25..60 {
                for wl in 2..(t - h + 1) {
                    let plan = RollingWindowPlan::new(wl, 1, horizon).unwrap();
                    let windows = rolling_windows(t, &plan).unwrap();
                    let mut brute = 0;
                    for k in 0..t {
                        if k + wl + h <= t {
                            brute += 1;
                        }
                    }
                    assert_eq!(windows.len(), brute);
                    assert_eq!(windows.len(), t - wl - h + 1);
                    assert!(windows.iter().all(|w| w.train.end <= w.test.start));
                }
            }
        }
    }

    #[test]
    fn horizon_windows_step_whole_periods() {
        let plan = RollingWindowPlan::new(3, 1, Horizon::Weekly).unwrap();
        let w = horizon_windows(27, &plan).unwrap();
        // 5 full weeks: windows train on weeks 0..3 and 1..4
        assert_eq!(w.len(), 2);
        assert_eq!(w[0], HorizonWindow { train: 0..3, test_daily: 15..20 });
        assert_eq!(w[1], HorizonWindow { train: 1..4, test_daily: 20..25 });
    }

    #[test]
    fn intraday_groups_by_day() {
        let f = write("time,A,B\n2020-01-01T10:00,0.1,0.2\n2020-01-01T11:00,0.0,0.1\n2020-01-02T10:00,0.3,0.3\n");
        let intra = load_intraday(f.path()).unwrap();
        assert_eq!(intra.for_date("2020-01-01").unwrap().nrows(), 2);
        assert_eq!(intra.for_date("2020-01-02").unwrap().nrows(), 1);
        assert!(intra.for_date("2020-01-03").is_none());
    }

    #[test]
    fn date_filter_is_inclusive() {
        let r = ReturnsMatrix::new(
            DMatrix::from_row_slice(4, 2, &[0.0; 8]),
            vec!["2019-12-31".into(), "2020-01-01".into(), "2020-06-30".into(), "2021-01-01".into()],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let f = filter_dates(&r, Some("2020-01-01"), Some("2020-12-31")).unwrap();
        assert_eq!(f.n_periods(), 2);
    }

    proptest::proptest! {
        #[test]
        fn aggregation_preserves_kept_sums(seed in 0u64..200, t in 10usize..60, h in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..t * 3).map(|_| rng.random_range(-0.05..0.05)).collect();
            let r = panel(&vals, t, 3);
            if let Ok(a) = aggregate_horizon(&r, h) {
                let kept = (t / h) * h;
                for j in 0..3 {
                    let lhs: f64 = a.values().column(j).sum();
                    let rhs: f64 = r.values().column(j).rows(0, kept).sum();
                    proptest::prop_assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn log_returns_invert_cumulative_exp(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = 30;
            let r: Vec<f64> = (0..t * 2).map(|_| rng.random_range(-0.1..0.1)).collect();
            let mut p = vec![100.0, 50.0];
            let mut all = p.clone();
            for i in 0..t {
                for j in 0..2 {
                    p[j] *= r[i * 2 + j].exp();
                }
                all.extend_from_slice(&p);
            }
            let back = log_returns(&prices(&all, 2)).unwrap();
            for i in 0..t {
                for j in 0..2 {
                    proptest::prop_assert!((back.values()[(i, j)] - r[i * 2 + j]).abs() < 1e-12);
                }
            }
        }
    }
}
