//! The six pipeline verbs. Each claims a run directory, writes its artifacts
//! and seals the manifest last.

use std::collections::BTreeMap;
use std::path::PathBuf;

use folio_core::backtest::{
    benchmark_index, blsw_strategy, csm_strategy, metrics_from_returns, run_backtest, MetricsReport, PolicyStrategy,
    Strategy, Trajectory,
};
use folio_core::checkpoint::{load_json, ForecasterCheckpoint};
use folio_core::forecast::{Architecture, ForecastModel, ForecasterConfig};
use folio_core::lora::{inject, trainable_parameters, InjectionPlan};
use folio_core::market_data::{make_windows, split_series, write_wide_csv, PriceSeries};
use folio_core::policy::{AssetScorer, ForecasterStage, MarketScorer, Policy};
use folio_core::rl::{finetune, AblationMode, EpisodeRecord, FinetuneOutcome};
use folio_core::train::{evaluate_forecasts, pretrain};

use crate::components::PolicyComponents;
use crate::config::{Baseline, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::runs::{file_sha256, RunReader, RunStore, RunWriter};
use crate::table::{cell, metric_cells, parse_cell, rounded, Table};

pub const FORECASTER_FILE: &str = "forecaster.json";
pub const COMPONENTS_FILE: &str = "components.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const POLICY_NAME: &str = "policy";
pub const BENCHMARK_NAME: &str = "Benchmark";

/// A finished command: its sealed run plus what it printed.
#[derive(Debug)]
pub struct Outcome {
    pub run: RunReader,
    pub text: String,
}

struct Splits {
    full: PriceSeries,
    train: PriceSeries,
    dev: PriceSeries,
    test: PriceSeries,
}

fn load_splits(cfg: &ExperimentConfig) -> CliResult<Splits> {
    let full = cfg.load_series()?;
    let (train, dev, test) = split_series(&full, &cfg.data.split)?;
    Ok(Splits { full, train, dev, test })
}

fn begin(store: &RunStore, run_id: &str, command: &str, cfg: &ExperimentConfig, data: &PriceSeries) -> CliResult<RunWriter> {
    let mut run = store.create(run_id, command, cfg.seed)?;
    run.manifest.config = cfg.to_toml();
    run.manifest.universe = data.universe().ids().to_vec();
    run.manifest.inputs.insert("prices".into(), data.content_hash());
    if let Some(p) = &cfg.data.path {
        run.manifest.inputs.insert("data_file".into(), file_sha256(p)?);
    }
    Ok(run)
}

pub fn ingest(store: &RunStore, run_id: &str, cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let s = load_splits(cfg)?;
    let mut run = begin(store, run_id, "ingest", cfg, &s.full)?;
    write_wide_csv(&s.full, run.dir().join("prices.csv"))?;
    run.adopt("prices.csv")?;

    let mut t = Table::new(["segment", "start", "end", "days"]);
    for (name, part) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
        let d = part.dates();
        t.push(vec![
            name.into(),
            d[0].to_string(),
            d[d.len() - 1].to_string(),
            d.len().to_string(),
        ]);
        run.summary(&format!("{name}_days"), d.len());
    }
    run.write("split.csv", t.to_csv().as_bytes())?;
    run.summary("n_assets", s.full.n_assets());
    run.summary("n_days", s.full.n_days());
    let text = format!(
        "{} assets, {} days\n{}",
        s.full.n_assets(),
        s.full.n_days(),
        t.render()
    );
    Ok(Outcome { run: run.finish()?, text })
}

/// Feed-forward width giving `other` about as many parameters as `cfg`.
pub fn matched_d_ff(cfg: &ForecasterConfig, other: Architecture) -> CliResult<usize> {
    let target = ForecastModel::init(cfg.clone(), 0)?.param_count() as f64;
    let count = |f: usize| -> CliResult<f64> {
        let c = ForecasterConfig {
            architecture: other,
            d_ff: f,
            ..cfg.clone()
        };
        Ok(ForecastModel::init(c, 0)?.param_count() as f64)
    };
    let (a, b) = (count(1)?, count(2)?);
    let slope = b - a;
    Ok((1.0 + (target - a) / slope).round().max(1.0) as usize)
}

pub fn pretrain_cmd(store: &RunStore, run_id: &str, cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let s = load_splits(cfg)?;
    let f = &cfg.forecaster;
    let windows = |p: &PriceSeries| make_windows(p, f.window, f.horizon, f.stride);
    let (train, dev, test) = (windows(&s.train)?, windows(&s.dev)?, windows(&s.test)?);
    let primary = cfg.forecaster_config(s.full.n_assets());
    let mut models = vec![primary.clone()];
    if f.baseline {
        let other = match primary.architecture {
            Architecture::FrequencyEnhanced => Architecture::Vanilla,
            Architecture::Vanilla => Architecture::FrequencyEnhanced,
        };
        models.push(ForecasterConfig {
            architecture: other,
            d_ff: matched_d_ff(&primary, other)?,
            ..primary.clone()
        });
    }

    let mut run = begin(store, run_id, "pretrain", cfg, &s.full)?;
    let mut report = Table::new(["model", "params", "d_ff", "best_epoch", "MAE", "RMSE", "MAPE"]);
    let mut curves = Table::new(["model", "epoch", "train_loss", "dev_mae"]);
    for (k, mc) in models.into_iter().enumerate() {
        let label = arch_label(mc.architecture);
        log::info!("pretraining {label} ({} windows)", train.len());
        let out = pretrain(ForecastModel::init(mc.clone(), cfg.seed)?, &train, &dev, &cfg.train_config(cfg.seed))?;
        let r = evaluate_forecasts(&out.model, &test)?;
        report.push(vec![
            label.into(),
            out.model.param_count().to_string(),
            mc.d_ff.to_string(),
            out.best_epoch.to_string(),
            cell(Some(r.mae)),
            cell(Some(r.rmse)),
            cell(Some(r.mape)),
        ]);
        for e in &out.curve {
            curves.push(vec![
                label.into(),
                e.epoch.to_string(),
                cell(Some(e.train_loss)),
                cell(Some(e.dev_mae)),
            ]);
        }
        let ck = ForecasterCheckpoint::from_model(&out.model);
        let (file, key) = if k == 0 {
            (FORECASTER_FILE.to_string(), "forecaster")
        } else {
            (format!("baseline_{label}.json"), "baseline")
        };
        run.manifest.checkpoints.insert(key.into(), ck.params_hash.clone());
        run.write_json(&file, &ck)?;
    }
    run.write("forecast_report.csv", report.to_csv().as_bytes())?;
    run.write("training_curves.csv", curves.to_csv().as_bytes())?;
    run.summary("train_windows", train.len());
    run.summary("test_windows", test.len());
    let text = rounded(&report).render();
    Ok(Outcome { run: run.finish()?, text })
}

pub fn arch_label(a: Architecture) -> &'static str {
    match a {
        Architecture::FrequencyEnhanced => "frequency-enhanced",
        Architecture::Vanilla => "vanilla",
    }
}

/// Load the pre-trained forecaster of `base_id`, checking it fits this universe.
fn load_base(store: &RunStore, base_id: &str, cfg: &ExperimentConfig, data: &PriceSeries) -> CliResult<(ForecastModel, RunReader)> {
    let base = store.open(base_id)?;
    if base.manifest.command != "pretrain" {
        return Err(CliError::Config(format!(
            "run `{base_id}` is a {} run, expected pretrain",
            base.manifest.command
        )));
    }
    if base.manifest.universe != data.universe().ids() {
        return Err(folio_core::Error::CheckpointMismatch(format!(
            "run `{base_id}` was trained on {:?}, config selects {:?}",
            base.manifest.universe,
            data.universe().ids()
        ))
        .into());
    }
    let ck: ForecasterCheckpoint = load_json(base.verified(FORECASTER_FILE)?)?;
    if base.manifest.checkpoints.get("forecaster") != Some(&ck.params_hash) {
        return Err(folio_core::Error::CheckpointMismatch(format!("run `{base_id}` lists a different forecaster hash")).into());
    }
    let model = ck.into_model()?;
    if model.config().window != cfg.forecaster.window {
        return Err(folio_core::Error::CheckpointMismatch(format!(
            "base window {} differs from configured window {}",
            model.config().window,
            cfg.forecaster.window
        ))
        .into());
    }
    Ok((model, base))
}

/// Fresh policy for `mode` on top of an optional pre-trained forecaster.
pub fn build_policy(cfg: &ExperimentConfig, mode: AblationMode, n_assets: usize, base: Option<ForecastModel>) -> CliResult<Policy> {
    let w = cfg.forecaster.window;
    let seed = cfg.seed;
    let stage = match (mode, base) {
        (AblationMode::FedRemoved, _) => ForecasterStage::Removed { n_assets, window: w },
        (AblationMode::Lora(t), Some(b)) => ForecasterStage::Adapted(inject(
            b,
            InjectionPlan::new(t),
            cfg.lora.rank,
            cfg.lora.alpha,
            seed.wrapping_add(1),
            cfg.lora.rank_policy(),
        )?),
        (m, b) => m.stage(b, n_assets, w, cfg.lora.rank, cfg.lora.alpha, seed.wrapping_add(1))?,
    };
    let scorer = AssetScorer::init(cfg.scorer_config(n_assets), seed.wrapping_add(2))?;
    let msm = MarketScorer::init(stage.feature_dim(), seed.wrapping_add(3))?;
    Ok(Policy::new(stage, scorer, msm, cfg.selection(n_assets)?)?)
}

/// Adapter scalars, or 0 when the forecaster is not adapted.
pub fn adapter_count(policy: &Policy) -> usize {
    match &policy.stage {
        ForecasterStage::Adapted(a) => trainable_parameters(a).count,
        _ => 0,
    }
}

fn episode_table(log: &[EpisodeRecord]) -> Table {
    let mut t = Table::new(["epoch", "date", "rho", "mu", "sigma", "r1", "r2", "J"]);
    for r in log {
        t.push(vec![
            r.epoch.to_string(),
            r.date.to_string(),
            cell(Some(r.rho)),
            cell(Some(r.mu)),
            cell(Some(r.sigma)),
            cell(Some(r.r1)),
            cell(Some(r.r2)),
            cell(Some(r.j)),
        ]);
    }
    t
}

fn train_mode(
    cfg: &ExperimentConfig,
    mode: AblationMode,
    train: &PriceSeries,
    base: Option<ForecastModel>,
) -> CliResult<(FinetuneOutcome, usize, usize)> {
    let policy = build_policy(cfg, mode, train.n_assets(), base)?;
    let adapters = adapter_count(&policy);
    let total = policy.trainable_store(mode.parts()).scalar_count();
    log::info!("fine-tuning {mode}: {total} trainable scalars, {adapters} in adapters");
    let out = finetune(policy, train, &cfg.rl_config(), mode.parts())?;
    Ok((out, adapters, total))
}

fn write_components(run: &mut RunWriter, prefix: &str, comps: &PolicyComponents) -> CliResult<()> {
    for (k, h) in comps.hashes() {
        run.manifest.checkpoints.insert(format!("{prefix}{k}"), h);
    }
    run.write_json(&format!("{prefix}{COMPONENTS_FILE}"), comps)?;
    Ok(())
}

pub fn finetune_cmd(
    store: &RunStore,
    run_id: &str,
    cfg: &ExperimentConfig,
    base_id: Option<&str>,
    mode: Option<AblationMode>,
) -> CliResult<Outcome> {
    let mode = mode.unwrap_or_else(|| cfg.mode());
    let s = load_splits(cfg)?;
    let base = if mode.needs_forecaster() {
        let id = base_id.ok_or_else(|| CliError::Config(format!("mode {mode} needs --base <pretrain run id>")))?;
        Some(load_base(store, id, cfg, &s.full)?)
    } else {
        None
    };
    let mut run = begin(store, run_id, "finetune", cfg, &s.full)?;
    if let Some((_, b)) = &base {
        run.manifest.inputs.insert("base_run".into(), b.manifest.run_id.clone());
    }
    let (out, adapters, total) = train_mode(cfg, mode, &s.train, base.map(|b| b.0))?;
    let comps = PolicyComponents::from_policy(mode, &out.policy);
    write_components(&mut run, "", &comps)?;
    run.write("episodes.csv", episode_table(&out.log).to_csv().as_bytes())?;
    let mut j = Table::new(["epoch", "mean_J"]);
    for (e, v) in out.epoch_mean_j.iter().enumerate() {
        j.push(vec![(e + 1).to_string(), cell(Some(*v))]);
    }
    run.write("objective.csv", j.to_csv().as_bytes())?;
    run.summary("mode", mode.to_string());
    run.summary("trainable_adapter_scalars", adapters);
    run.summary("trainable_scalars", total);
    let text = format!(
        "{mode}: {total} trainable scalars ({adapters} in adapters), {} epochs, final mean J {}\n",
        out.epoch_mean_j.len(),
        out.epoch_mean_j.last().map_or("NA".into(), |v| format!("{v:.6}"))
    );
    Ok(Outcome { run: run.finish()?, text })
}

fn baseline_strategies(cfg: &ExperimentConfig, n_assets: usize) -> CliResult<Vec<Box<dyn Strategy>>> {
    let sel = cfg.selection(n_assets)?;
    let mut out: Vec<Box<dyn Strategy>> = Vec::new();
    for b in &cfg.backtest.baselines {
        out.push(match b {
            Baseline::Csm => Box::new(csm_strategy(cfg.backtest.lookback, sel)?),
            Baseline::Blsw => Box::new(blsw_strategy(cfg.backtest.lookback, sel)?),
            Baseline::Benchmark => Box::new(benchmark_index()),
        });
    }
    Ok(out)
}

/// Days consumed before the first decision, shared by every strategy of a run.
pub fn common_warmup(cfg: &ExperimentConfig) -> usize {
    let mut w = cfg.forecaster.window;
    if cfg.backtest.baselines.iter().any(|b| matches!(b, Baseline::Csm | Baseline::Blsw)) {
        w = w.max(cfg.backtest.lookback + 1);
    }
    w
}

fn metrics_header(first: &[&str]) -> Table {
    Table::new(first.iter().copied().chain(MetricsReport::COLUMNS))
}

fn export_trajectory(run: &mut RunWriter, traj: &Trajectory) -> CliResult<String> {
    let rel = format!("trajectories/{}.csv", traj.strategy.to_ascii_lowercase());
    let path = run.dir().join(&rel);
    std::fs::create_dir_all(path.parent().expect("nested path")).map_err(CliError::io("creating trajectories"))?;
    traj.write_csv(&path)?;
    run.adopt(&rel)?;
    Ok(rel)
}

pub fn backtest_cmd(store: &RunStore, run_id: &str, cfg: &ExperimentConfig, policy_id: &str) -> CliResult<Outcome> {
    let s = load_splits(cfg)?;
    let src = store.open(policy_id)?;
    if src.manifest.command != "finetune" {
        return Err(CliError::Config(format!(
            "run `{policy_id}` is a {} run, expected finetune",
            src.manifest.command
        )));
    }
    if src.manifest.universe != s.full.universe().ids() {
        return Err(folio_core::Error::CheckpointMismatch(format!("run `{policy_id}` used a different universe")).into());
    }
    let comps: PolicyComponents = load_json(src.verified(COMPONENTS_FILE)?)?;
    let mode = comps.mode;
    let policy = comps.clone().into_policy()?;
    if policy.window() != cfg.forecaster.window {
        return Err(CliError::Config(format!(
            "policy window {} differs from configured window {}",
            policy.window(),
            cfg.forecaster.window
        )));
    }

    let mut run = begin(store, run_id, "backtest", cfg, &s.full)?;
    run.manifest.inputs.insert("policy_run".into(), policy_id.to_string());
    for (k, h) in comps.hashes() {
        run.manifest.checkpoints.insert(k, h);
    }
    let mut strategies: Vec<Box<dyn Strategy>> = vec![Box::new(PolicyStrategy {
        name: POLICY_NAME.into(),
        policy,
    })];
    strategies.extend(baseline_strategies(cfg, s.full.n_assets())?);
    let warmup = common_warmup(cfg);
    let mut table = metrics_header(&["strategy"]);
    for st in &strategies {
        let traj = run_backtest(st.as_ref(), &s.test, warmup)?;
        export_trajectory(&mut run, &traj)?;
        let m = metrics_from_returns(&traj.returns, cfg.backtest.trading_days)?;
        let mut row = vec![traj.strategy.clone()];
        row.extend(metric_cells(&m));
        table.push(row);
    }
    run.write(METRICS_FILE, table.to_csv().as_bytes())?;
    run.summary("mode", mode.to_string());
    run.summary("warmup", warmup);
    run.summary("test_days", s.test.n_days());
    let text = rounded(&table).render();
    Ok(Outcome { run: run.finish()?, text })
}

pub fn ablate_cmd(store: &RunStore, run_id: &str, cfg: &ExperimentConfig, base_id: Option<&str>) -> CliResult<Outcome> {
    let s = load_splits(cfg)?;
    let modes = &cfg.ablate.modes;
    let base = if modes.iter().any(|m| m.needs_forecaster()) {
        let id = base_id.ok_or_else(|| CliError::Config("ablation modes need --base <pretrain run id>".into()))?;
        Some(load_base(store, id, cfg, &s.full)?)
    } else {
        None
    };
    let mut run = begin(store, run_id, "ablate", cfg, &s.full)?;
    if let Some((m, b)) = &base {
        run.manifest.inputs.insert("base_run".into(), b.manifest.run_id.clone());
        run.manifest.checkpoints.insert("base_forecaster".into(), m.params().content_hash());
    }
    let warmup = common_warmup(cfg);
    let mut table = metrics_header(&["mode", "trainable", "adapter_trainable"]);
    for &mode in modes {
        let (out, adapters, total) = train_mode(cfg, mode, &s.train, base.as_ref().map(|b| b.0.clone()))?;
        let comps = PolicyComponents::from_policy(mode, &out.policy);
        write_components(&mut run, &format!("{mode}/"), &comps)?;
        run.write(&format!("{mode}/episodes.csv"), episode_table(&out.log).to_csv().as_bytes())?;
        let traj = run_backtest(
            &PolicyStrategy {
                name: mode.to_string(),
                policy: out.policy,
            },
            &s.test,
            warmup,
        )?;
        export_trajectory(&mut run, &traj)?;
        let m = metrics_from_returns(&traj.returns, cfg.backtest.trading_days)?;
        let mut row = vec![mode.to_string(), total.to_string(), adapters.to_string()];
        row.extend(metric_cells(&m));
        table.push(row);
    }
    let bench = run_backtest(&benchmark_index(), &s.test, warmup)?;
    export_trajectory(&mut run, &bench)?;
    run.write(ABLATION_FILE, table.to_csv().as_bytes())?;
    run.summary("warmup", warmup);
    run.summary("modes", modes.iter().map(|m| m.to_string()).collect::<Vec<_>>());
    let text = rounded(&table).render();
    Ok(Outcome { run: run.finish()?, text })
}

/// Policy trajectories a finished run offers for comparison, by row label.
fn policy_trajectories(run: &RunReader) -> CliResult<Vec<(String, PathBuf)>> {
    let names: Vec<String> = match run.manifest.command.as_str() {
        "backtest" => vec![POLICY_NAME.into()],
        "ablate" => run
            .manifest
            .summary
            .get("modes")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default(),
        other => {
            return Err(CliError::Config(format!(
                "run `{}` is a {other} run; report needs backtest or ablate runs",
                run.manifest.run_id
            )))
        }
    };
    names
        .into_iter()
        .map(|n| {
            let rel = format!("trajectories/{}.csv", n.to_ascii_lowercase());
            Ok((n, run.verified(&rel)?))
        })
        .collect()
}

fn run_trading_days(run: &RunReader) -> CliResult<f64> {
    let cfg: ExperimentConfig = toml::from_str(&run.manifest.config)
        .map_err(|e| CliError::Data(format!("run `{}` config snapshot: {e}", run.manifest.run_id)))?;
    Ok(cfg.backtest.trading_days)
}

pub fn report_cmd(store: &RunStore, run_id: &str, seed: u64, runs: &[String]) -> CliResult<Outcome> {
    if runs.is_empty() {
        return Err(CliError::Config("report needs at least one run id".into()));
    }
    let sources = runs.iter().map(|r| store.open(r)).collect::<CliResult<Vec<_>>>()?;
    let mut run = store.create(run_id, "report", seed)?;
    let mut table = metrics_header(&["run", "strategy", "days"]);
    for src in &sources {
        let id = &src.manifest.run_id;
        run.manifest.inputs.insert(format!("run:{id}"), file_sha256(&src.path(crate::runs::MANIFEST))?);
        let days = run_trading_days(src)?;
        let bench_rel = format!("trajectories/{}.csv", BENCHMARK_NAME.to_ascii_lowercase());
        let bench = match src.manifest.artifact(&bench_rel) {
            Some(_) => Some(Trajectory::read_csv(src.verified(&bench_rel)?, BENCHMARK_NAME)?),
            None => None,
        };
        for (label, path) in policy_trajectories(src)? {
            let traj = Trajectory::read_csv(&path, label.clone())?;
            let m = metrics_from_returns(&traj.returns, days)?;
            let mut row = vec![id.clone(), label.clone(), traj.len().to_string()];
            row.extend(metric_cells(&m));
            table.push(row);

            let mut rho = Table::new(["date", "rho", "benchmark_equity"]);
            for (k, d) in traj.dates.iter().enumerate() {
                let overlay = bench
                    .as_ref()
                    .and_then(|b| b.dates.iter().position(|x| x == d).map(|i| b.equity[i]));
                rho.push(vec![d.to_string(), cell(traj.rho[k]), cell(overlay)]);
            }
            run.write(&format!("rho/{id}__{}.csv", label.to_ascii_lowercase()), rho.to_csv().as_bytes())?;
        }
    }
    run.write(COMPARISON_FILE, table.to_csv().as_bytes())?;
    let text = rounded(&table).render();
    Ok(Outcome { run: run.finish()?, text })
}

/// Metric rows of a metrics or ablation CSV, keyed by their first cell.
pub fn read_metric_rows(text: &str) -> CliResult<BTreeMap<String, Vec<Option<f64>>>> {
    let t = Table::from_csv(text).map_err(|e| CliError::Data(e.to_string()))?;
    let skip = t.header.len() - MetricsReport::COLUMNS.len();
    Ok(t.rows
        .iter()
        .map(|r| (r[0].clone(), r[skip..].iter().map(|c| parse_cell(c)).collect()))
        .collect())
}
