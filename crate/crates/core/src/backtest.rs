//! Daily-rebalancing simulation, investment metrics and baseline strategies.

use std::path::Path;

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceSeries;
use crate::policy::{select_positions, Policy, PortfolioVector, ScoreMode, SelectionConfig};

pub const TRADING_DAYS: f64 = 252.0;
/// Standard deviations at or below this count as zero.
const DEGENERATE: f64 = 1e-12;

/// Prices strictly before the decision day.
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    prices: ArrayView2<'a, f64>,
    dates: &'a [NaiveDate],
}

impl<'a> HistoryView<'a> {
    pub fn new(prices: ArrayView2<'a, f64>, dates: &'a [NaiveDate]) -> Self {
        Self { prices, dates }
    }

    pub fn n_assets(&self) -> usize {
        self.prices.nrows()
    }

    /// Number of visible days.
    pub fn len(&self) -> usize {
        self.prices.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dates(&self) -> &[NaiveDate] {
        self.dates
    }

    pub fn price(&self, asset: usize, day: usize) -> Result<f64> {
        if day >= self.len() {
            return Err(Error::LookaheadViolation {
                requested: day,
                cutoff: self.len(),
            });
        }
        Ok(self.prices[[asset, day]])
    }

    /// The last `w` visible days, `n × w`.
    pub fn window(&self, w: usize) -> Result<Array2<f64>> {
        if w > self.len() {
            return Err(Error::InsufficientHistory {
                needed: w,
                available: self.len(),
            });
        }
        Ok(self.prices.slice(s![.., self.len() - w..]).to_owned())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyDecision {
    pub portfolio: PortfolioVector,
    pub rho: Option<f64>,
}

pub trait Strategy {
    fn name(&self) -> String;

    /// Minimum visible days before the first decision.
    fn warmup(&self) -> usize;

    fn decide(&self, history: &HistoryView<'_>, date: NaiveDate) -> Result<StrategyDecision>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub strategy: String,
    pub asset_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    /// Equity after each day, starting from 1 before the first.
    pub equity: Vec<f64>,
    pub portfolios: Vec<PortfolioVector>,
    pub rho: Vec<Option<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// `date, r_p, equity, rho, long_<id>..., short_<id>...`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string(), "r_p".into(), "equity".into(), "rho".into()];
        header.extend(self.asset_ids.iter().map(|id| format!("long_{id}")));
        header.extend(self.asset_ids.iter().map(|id| format!("short_{id}")));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![
                self.dates[t].to_string(),
                format!("{:e}", self.returns[t]),
                format!("{:e}", self.equity[t]),
                self.rho[t].map(|r| format!("{r:e}")).unwrap_or_default(),
            ];
            row.extend(self.portfolios[t].long_alloc.iter().map(|x| format!("{x:e}")));
            row.extend(self.portfolios[t].short_alloc.iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, strategy: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let ids: Vec<String> = header
            .iter()
            .filter_map(|h| h.strip_prefix("long_").map(str::to_string))
            .collect();
        let n = ids.len();
        if header.len() != 4 + 2 * n {
            return Err(Error::InvalidData("trajectory header is malformed".into()));
        }
        let bad = |what: &str| Error::InvalidData(format!("trajectory: bad {what}"));
        let mut traj = Trajectory {
            strategy: strategy.into(),
            asset_ids: ids,
            dates: Vec::new(),
            returns: Vec::new(),
            equity: Vec::new(),
            portfolios: Vec::new(),
            rho: Vec::new(),
        };
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&header[i]));
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| bad("date"))?;
            traj.dates.push(date);
            traj.returns.push(num(1)?);
            traj.equity.push(num(2)?);
            traj.rho.push(if rec[3].is_empty() { None } else { Some(num(3)?) });
            let long: Vec<f64> = (0..n).map(|i| num(4 + i)).collect::<Result<_>>()?;
            let short: Vec<f64> = (0..n).map(|i| num(4 + n + i)).collect::<Result<_>>()?;
            traj.portfolios.push(PortfolioVector {
                long_alloc: Array1::from(long),
                short_alloc: Array1::from(short),
                date: Some(date),
            });
        }
        Ok(traj)
    }
}

/// Simulate daily rebalancing from day `warmup` to the end of `series`.
/// The decision for day `t` sees days `0..t`; it earns `Σ δ_t∘(long + short)`.
pub fn run_backtest(strategy: &dyn Strategy, series: &PriceSeries, warmup: usize) -> Result<Trajectory> {
    let warmup = warmup.max(1);
    if series.n_days() <= warmup + 1 {
        return Err(Error::SeriesTooShort {
            needed: warmup + 2,
            available: series.n_days(),
        });
    }
    let p = series.prices();
    let n = series.n_assets();
    let mut traj = Trajectory {
        strategy: strategy.name(),
        asset_ids: series.universe().ids().to_vec(),
        dates: Vec::new(),
        returns: Vec::new(),
        equity: Vec::new(),
        portfolios: Vec::new(),
        rho: Vec::new(),
    };
    let mut e = 1.0;
    for t in warmup..series.n_days() {
        let view = HistoryView::new(p.slice(s![.., ..t]), &series.dates()[..t]);
        let date = series.dates()[t];
        let d = strategy.decide(&view, date)?;
        if d.portfolio.n_assets() != n {
            return Err(Error::ShapeMismatch(format!(
                "strategy `{}` allocated {} assets, universe has {n}",
                strategy.name(),
                d.portfolio.n_assets()
            )));
        }
        let net = d.portfolio.net();
        let r: f64 = (0..n).map(|i| (p[[i, t]] / p[[i, t - 1]] - 1.0) * net[i]).sum();
        e *= 1.0 + r;
        traj.dates.push(date);
        traj.returns.push(r);
        traj.equity.push(e);
        let mut pv = d.portfolio;
        pv.date = Some(date);
        traj.portfolios.push(pv);
        traj.rho.push(d.rho);
    }
    Ok(traj)
}

/// Table-2 metrics. Ratios with a zero denominator are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arr: f64,
    pub asr: Option<f64>,
    pub avol: f64,
    pub mdd: f64,
    pub cr: Option<f64>,
    pub sor: Option<f64>,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 6] = ["ARR", "ASR", "AVol", "MDD", "CR", "SoR"];

    /// Values in [`COLUMNS`] order.
    pub fn row(&self) -> [Option<f64>; 6] {
        [Some(self.arr), self.asr, Some(self.avol), Some(self.mdd), self.cr, self.sor]
    }
}

/// Largest peak-to-trough fall of an equity curve, with the peak starting at 1.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = 1.0f64;
    let mut mdd = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        mdd = mdd.max((peak - e) / peak);
    }
    mdd
}

pub fn compute_metrics(traj: &Trajectory) -> Result<MetricsReport> {
    metrics_from_returns(&traj.returns, TRADING_DAYS)
}

pub fn metrics_from_returns(returns: &[f64], days_per_year: f64) -> Result<MetricsReport> {
    if returns.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            available: returns.len(),
        });
    }
    let k = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / k;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k;
    let std = var.sqrt();
    let down = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / k).sqrt();
    let mut equity = Vec::with_capacity(returns.len());
    let mut e = 1.0;
    for r in returns {
        e *= 1.0 + r;
        equity.push(e);
    }
    let ann = days_per_year.sqrt();
    let arr = mean * days_per_year;
    let avol = std * ann;
    let mdd = max_drawdown(&equity);
    Ok(MetricsReport {
        arr,
        asr: (std > DEGENERATE).then(|| arr / avol),
        avol,
        mdd,
        cr: (mdd > DEGENERATE).then(|| arr / mdd),
        sor: (down > DEGENERATE).then(|| arr / (down * ann)),
    })
}

fn trailing_returns(history: &HistoryView<'_>, lookback: usize) -> Result<Vec<f64>> {
    if history.len() < lookback + 1 {
        return Err(Error::InsufficientHistory {
            needed: lookback + 1,
            available: history.len(),
        });
    }
    let last = history.len() - 1;
    (0..history.n_assets())
        .map(|i| Ok(history.price(i, last)? / history.price(i, last - lookback)? - 1.0))
        .collect()
}

fn equal_books(n: usize, long: &[usize], short: &[usize], rho: f64, date: NaiveDate) -> PortfolioVector {
    let mut pv = PortfolioVector::flat(n, Some(date));
    for &i in long {
        pv.long_alloc[i] = rho / long.len() as f64;
    }
    for &i in short {
        pv.short_alloc[i] = -(1.0 - rho) / short.len() as f64;
    }
    pv
}

/// Long recent winners, short recent losers, equal weights, ρ = 0.5.
/// With `reverse` it buys losers and sells winners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumStrategy {
    pub lookback: usize,
    pub selection: SelectionConfig,
    pub reverse: bool,
}

pub fn csm_strategy(lookback: usize, selection: SelectionConfig) -> Result<MomentumStrategy> {
    if lookback == 0 {
        return Err(Error::InvalidConfig("lookback must be at least 1".into()));
    }
    Ok(MomentumStrategy {
        lookback,
        selection,
        reverse: false,
    })
}

pub fn blsw_strategy(lookback: usize, selection: SelectionConfig) -> Result<MomentumStrategy> {
    Ok(MomentumStrategy {
        reverse: true,
        ..csm_strategy(lookback, selection)?
    })
}

impl Strategy for MomentumStrategy {
    fn name(&self) -> String {
        if self.reverse { "BLSW" } else { "CSM" }.into()
    }

    fn warmup(&self) -> usize {
        self.lookback + 1
    }

    fn decide(&self, history: &HistoryView<'_>, date: NaiveDate) -> Result<StrategyDecision> {
        let mut r = trailing_returns(history, self.lookback)?;
        if self.reverse {
            r.iter_mut().for_each(|x| *x = -*x);
        }
        let (long, short) = select_positions(&r, self.selection)?;
        Ok(StrategyDecision {
            portfolio: equal_books(history.n_assets(), &long, &short, 0.5, date),
            rho: Some(0.5),
        })
    }
}

/// Equal-weighted long-only basket over the universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkIndex;

pub fn benchmark_index() -> BenchmarkIndex {
    BenchmarkIndex
}

impl Strategy for BenchmarkIndex {
    fn name(&self) -> String {
        "Benchmark".into()
    }

    fn warmup(&self) -> usize {
        1
    }

    fn decide(&self, history: &HistoryView<'_>, date: NaiveDate) -> Result<StrategyDecision> {
        let n = history.n_assets();
        let mut pv = PortfolioVector::flat(n, Some(date));
        pv.long_alloc.fill(1.0 / n as f64);
        Ok(StrategyDecision {
            portfolio: pv,
            rho: Some(1.0),
        })
    }
}

/// No positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cash;

impl Strategy for Cash {
    fn name(&self) -> String {
        "Cash".into()
    }

    fn warmup(&self) -> usize {
        1
    }

    fn decide(&self, history: &HistoryView<'_>, date: NaiveDate) -> Result<StrategyDecision> {
        Ok(StrategyDecision {
            portfolio: PortfolioVector::flat(history.n_assets(), Some(date)),
            rho: None,
        })
    }
}

/// The trained policy in test mode.
#[derive(Debug, Clone)]
pub struct PolicyStrategy {
    pub name: String,
    pub policy: Policy,
}

impl Strategy for PolicyStrategy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn warmup(&self) -> usize {
        self.policy.window()
    }

    fn decide(&self, history: &HistoryView<'_>, date: NaiveDate) -> Result<StrategyDecision> {
        let window = history.window(self.policy.window())?;
        let d = self.policy.decide(&window, ScoreMode::Test, 0.0, Some(date))?;
        Ok(StrategyDecision {
            portfolio: d.portfolio,
            rho: Some(d.score.rho),
        })
    }
}
