//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use clap::Parser;
use folio_cli::commands::{read_metric_rows, Outcome, ABLATION_FILE, COMPARISON_FILE, METRICS_FILE};
use folio_cli::runs::RunStore;
use folio_cli::{execute, Cli};
use folio_core::autograd::Tape;
use folio_core::backtest::{metrics_from_returns, Trajectory, TRADING_DAYS};
use folio_core::forecast::{freq_block, max_modes, Architecture, ForecastModel, ForecasterConfig, FreqBlockParams};
use folio_core::lora::{effective_weight, inject, trainable_parameters, AdapterTarget, InjectionPlan, LoraAdapter, RankPolicy};
use folio_core::market_data::{make_windows, synth_market, PriceSeries, Sinusoid, SynthAsset, SynthSpec, WindowSample};
use folio_core::policy::{
    assemble_portfolio, clamp_rho, market_score, position_weights, select_positions, AssetScorer, ForecasterStage,
    MarketScorer, Policy, ScoreMode, ScorerConfig, SelectionConfig, RHO_EPS,
};
use folio_core::rl::{finetune, objective, reward_r1, reward_r2, rollout, step_graph, AblationMode, ObjectiveForm, RLConfig};
use folio_core::train::{evaluate_forecasts, pretrain, sample_gradient, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn within(elapsed: Duration, limit_secs: f64, what: &str) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_secs {
        Ok(())
    } else {
        Err(format!("{what} took {:.1} s, limit {limit_secs} s", elapsed.as_secs_f64()))
    }
}

fn equation_fidelity() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let n = rng.random_range(2..12);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
        let n_long = rng.random_range(1..n);
        let cfg = SelectionConfig {
            n_long,
            n_short: rng.random_range(1..=n - n_long),
        };
        let (l, s) = select_positions(&v, cfg).map_err(|e| e.to_string())?;
        let w = position_weights(&v, &l, &s).map_err(|e| e.to_string())?;
        ensure!(close(w.long_weights.sum(), 1.0, 1e-9), "long weights sum {}", w.long_weights.sum());
        ensure!(close(w.short_weights.sum(), -1.0, 1e-9), "short weights sum {}", w.short_weights.sum());
        for i in 0..n {
            ensure!(l.contains(&i) || w.long_weights[i] == 0.0, "long weight off support at {i}");
            ensure!(s.contains(&i) || w.short_weights[i] == 0.0, "short weight off support at {i}");
        }
        let c = rng.random_range(-0.5..0.5);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (l2, s2) = select_positions(&shifted, cfg).map_err(|e| e.to_string())?;
        ensure!((l2 == l) && (s2 == s), "shift changed the selected sets");
        let w2 = position_weights(&shifted, &l2, &s2).map_err(|e| e.to_string())?;
        for i in 0..n {
            ensure!(close(w.long_weights[i], w2.long_weights[i], 1e-12), "shift changed long weight {i}");
            ensure!(close(w.short_weights[i], w2.short_weights[i], 1e-12), "shift changed short weight {i}");
        }
        let rho = rng.random_range(RHO_EPS..1.0 - RHO_EPS);
        let p = assemble_portfolio(rho, &w, None);
        let gap = p.long_alloc.sum() - p.short_alloc.sum().abs() - (2.0 * rho - 1.0);
        ensure!(gap.abs() < 1e-12, "assembly identity off by {gap:e}");
    }

    let w = position_weights(&[0.9, 0.1, 0.5], &[0, 1], &[2]).map_err(|e| e.to_string())?;
    ensure!(close(w.long_weights[0], 0.68997, 1e-5) && close(w.long_weights[1], 0.31003, 1e-5), "long softmax example");
    let w = position_weights(&[0.2, 0.4, 0.9], &[2], &[0, 1]).map_err(|e| e.to_string())?;
    ensure!(close(w.short_weights[0], -0.54983, 1e-5) && close(w.short_weights[1], -0.45017, 1e-5), "short softmax example");
    let (l, s) = select_positions(&[0.9, 0.5, 0.1], SelectionConfig { n_long: 1, n_short: 1 }).map_err(|e| e.to_string())?;
    ensure!(l == [0] && s == [2], "selection example");
    let fixed = folio_core::policy::PositionWeights {
        long_weights: vec![0.7, 0.3, 0.0].into(),
        short_weights: vec![0.0, 0.0, -1.0].into(),
        long_set: vec![0, 1],
        short_set: vec![2],
    };
    let p = assemble_portfolio(0.5, &fixed, None);
    ensure!(p.long_alloc.to_vec() == [0.35, 0.15, 0.0] && p.short_alloc.to_vec() == [0.0, 0.0, -0.5], "assembly example");

    let d = [0.01, -0.02];
    let book = |l: [f64; 2], s: [f64; 2]| folio_core::policy::PortfolioVector {
        long_alloc: l.to_vec().into(),
        short_alloc: s.to_vec().into(),
        date: None,
    };
    let r1 = |l, s| reward_r1(&d, &book(l, s)).unwrap();
    ensure!(close(r1([1.0, 0.0], [0.0, 0.0]), 0.01, 1e-15), "r1 single long");
    ensure!(close(r1([0.0, 0.0], [0.0, -1.0]), 0.02, 1e-15), "r1 single short");
    ensure!(close(r1([0.6, 0.0], [0.0, -0.4]), 0.014, 1e-15), "r1 mixed books");
    ensure!(close(reward_r2(&[0.02, -0.02], &[0.5, 0.5]).unwrap(), 0.0, 1e-15), "r2 symmetric");
    ensure!(close(reward_r2(&[0.03, -0.5], &[1.0, 0.0]).unwrap(), 0.03, 1e-15), "r2 indicator limit");
    ensure!(close(reward_r2(&d, &[0.8, 0.2]).unwrap(), 0.004, 1e-15), "r2 hand case");
    let cfg = RLConfig::default();
    let j = objective(1.0 - RHO_EPS, 0.01, 0.0, &cfg);
    ensure!(close(j, 0.05 * (1.0f64 - 1e-4).ln() * 0.01, 1e-20) && close(j, -5.0e-8, 1e-10), "objective near 1: {j:e}");
    ensure!(objective(0.3, 0.0, 0.0, &cfg) == 0.0, "objective of zero rewards");

    ensure!(clamp_rho(0.9 + 0.5 * 2.0) == 1.0 - RHO_EPS, "upper clamp");
    ensure!(clamp_rho(-3.0) == RHO_EPS, "lower clamp");
    let fc = ForecastModel::init(ForecasterConfig::new(Architecture::FrequencyEnhanced, 3), 2).map_err(|e| e.to_string())?;
    let stage = ForecasterStage::Plain(fc);
    let msm = MarketScorer::init(stage.feature_dim(), 9).map_err(|e| e.to_string())?;
    let w = Array2::from_shape_fn((3, 5), |(i, t)| 10.0 + i as f64 + 0.1 * t as f64);
    let a = market_score(&msm, &stage, &w, ScoreMode::Test, 0.0).map_err(|e| e.to_string())?;
    let b = market_score(&msm, &stage, &w, ScoreMode::Test, 3.0).map_err(|e| e.to_string())?;
    ensure!(a == b, "test mode depends on the noise draw");
    let t0 = market_score(&msm, &stage, &w, ScoreMode::Train, 0.0).map_err(|e| e.to_string())?;
    ensure!(t0.rho == clamp_rho(t0.mu), "zero draw differs from clamp(mu)");

    within(start.elapsed(), 10.0, "suite")?;
    Ok("weights, r1/r2, clamp, test-mode determinism, assembly identity".into())
}

fn brute_metrics(r: &[f64]) -> [f64; 6] {
    let k = r.len() as f64;
    let mean = r.iter().sum::<f64>() / k;
    let sd = (r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k).sqrt();
    let dd = (r.iter().map(|x| if *x < 0.0 { x * x } else { 0.0 }).sum::<f64>() / k).sqrt();
    let mut eq = vec![1.0];
    for x in r {
        let last = *eq.last().unwrap();
        eq.push(last * (1.0 + x));
    }
    let mut mdd = 0.0f64;
    for t in 0..eq.len() {
        for s in 0..=t {
            mdd = mdd.max((eq[s] - eq[t]) / eq[s]);
        }
    }
    let arr = 252.0 * mean;
    let avol = sd * 252f64.sqrt();
    [arr, arr / avol, avol, mdd, arr / mdd, arr / (dd * 252f64.sqrt())]
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for len in 10..=50 {
        let r: Vec<f64> = (0..len).map(|_| rng.random_range(-0.04..0.04)).collect();
        let m = metrics_from_returns(&r, TRADING_DAYS).map_err(|e| e.to_string())?;
        let got = m.row();
        for (g, want) in got.iter().zip(brute_metrics(&r)) {
            let g = g.ok_or("ratio unexpectedly undefined")?;
            worst = worst.max((g - want).abs());
        }
    }
    ensure!(worst < 1e-9, "metrics differ from brute force by {worst:e}");

    let mut sm = 0.0f64;
    for _ in 0..200 {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.99)).collect();
        let (l, s) = select_positions(&v, SelectionConfig { n_long: 2, n_short: 2 }).map_err(|e| e.to_string())?;
        let w = position_weights(&v, &l, &s).map_err(|e| e.to_string())?;
        let zl: f64 = l.iter().map(|&i| v[i].exp()).sum();
        let zs: f64 = s.iter().map(|&i| (1.0 - v[i]).exp()).sum();
        for &i in &l {
            sm = sm.max((w.long_weights[i] - v[i].exp() / zl).abs());
        }
        for &i in &s {
            sm = sm.max((w.short_weights[i] + (1.0 - v[i]).exp() / zs).abs());
        }
    }
    ensure!(sm < 1e-9, "softmax weights differ by {sm:e}");

    let mut lw = 0.0f64;
    for _ in 0..20 {
        let (o, i, r) = (rng.random_range(2..9), rng.random_range(2..9), rng.random_range(1..3));
        let base = Array2::from_shape_fn((o, i), |_| rng.random_range(-1.0..1.0));
        let up = Array2::from_shape_fn((o, r), |_| rng.random_range(-1.0..1.0));
        let down = Array2::from_shape_fn((r, i), |_| rng.random_range(-1.0..1.0));
        let scale = rng.random_range(0.1..4.0);
        let got = effective_weight(&base, &LoraAdapter { down: down.clone(), up: up.clone(), scale }).map_err(|e| e.to_string())?;
        for a in 0..o {
            for b in 0..i {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += up[[a, k]] * down[[k, b]];
                }
                lw = lw.max((got[[a, b]] - (base[[a, b]] + scale * acc)).abs());
            }
        }
    }
    ensure!(lw < 1e-12, "effective weight differs by {lw:e}");
    Ok(format!("metrics {worst:.1e}, softmax {sm:.1e}, LoRA {lw:.1e}"))
}

fn tiny_forecaster(arch: Architecture, n: usize) -> ForecastModel {
    let cfg = ForecasterConfig {
        d_model: 8,
        d_ff: 8,
        modes: 3,
        ..ForecasterConfig::new(arch, n)
    };
    ForecastModel::init(cfg, 17).unwrap()
}

fn random_sample(n: usize, w: usize, h: usize, seed: u64) -> WindowSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Array2::zeros((n, w + h));
    for i in 0..n {
        let mut x = 50.0 + 10.0 * i as f64;
        for t in 0..w + h {
            x *= 1.0 + rng.random_range(-0.03..0.03);
            p[[i, t]] = x;
        }
    }
    WindowSample {
        window: p.slice(ndarray::s![.., ..w]).to_owned(),
        target: p.slice(ndarray::s![.., w..]).to_owned(),
        anchor_date: NaiveDate::from_ymd_opt(2024, 1, 2).unwrap(),
        anchor: w,
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / s
    }
}

fn forecaster_fd(arch: Architecture) -> f64 {
    let m = tiny_forecaster(arch, 3);
    let s = random_sample(3, 5, 5, 1);
    let (_, grads) = sample_gradient(&m, &s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (name, g) in grads.iter() {
        for _ in 0..2 {
            let (r, c) = (rng.random_range(0..g.nrows()), rng.random_range(0..g.ncols()));
            let mut plus = m.clone();
            plus.params_mut().get_mut(name).unwrap()[[r, c]] += h;
            let mut minus = m.clone();
            minus.params_mut().get_mut(name).unwrap()[[r, c]] -= h;
            let fd = (sample_gradient(&plus, &s).unwrap().0 - sample_gradient(&minus, &s).unwrap().0) / (2.0 * h);
            worst = worst.max(rel_err(g[[r, c]], fd));
        }
    }
    worst
}

fn rl_fd(form: ObjectiveForm, noise: f64) -> f64 {
    let stage = AblationMode::Lora(AdapterTarget::Encoders)
        .stage(Some(tiny_forecaster(Architecture::FrequencyEnhanced, 4)), 4, 5, 2, 4.0, 5)
        .unwrap();
    let dim = stage.feature_dim();
    let policy = Policy::new(
        stage,
        AssetScorer::init(ScorerConfig::new(4, 5), 2).unwrap(),
        MarketScorer::init(dim, 4).unwrap(),
        SelectionConfig::quartile(4),
    )
    .unwrap();
    let parts = AblationMode::FedFinetuning.parts();
    let cfg = RLConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = Array2::from_shape_fn((4, 5), |(i, _)| 20.0 + 5.0 * i as f64 + rng.random_range(-2.0..2.0));
    let d: Vec<f64> = (0..4).map(|_| rng.random_range(-0.03..0.03)).collect();
    let value = |p: &Policy| {
        let mut t = Tape::new();
        let g = step_graph(&mut t, p, &w, &d, noise, parts, &cfg, form).unwrap();
        t.scalar_value(g.objective)
    };
    let mut tape = Tape::new();
    let g = step_graph(&mut tape, &policy, &w, &d, noise, parts, &cfg, form).unwrap();
    let grads = tape.backward(g.objective);
    let store = policy.trainable_store(parts);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (name, var) in g.handles.iter().filter(|(n, _)| n.starts_with("msm.")) {
        let an = grads.get(*var).unwrap();
        let v = store.get(name).unwrap();
        let probes = [(0usize, 0usize), (1, 1), (0, v.ncols() - 1), (v.nrows() - 1, v.ncols() / 2)];
        for idx in probes.into_iter().filter(|i| i.0 < v.nrows() && i.1 < v.ncols()) {
            let mut plus = store.clone();
            plus.get_mut(name).unwrap()[idx] += h;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap()[idx] -= h;
            let (mut pp, mut pm) = (policy.clone(), policy.clone());
            pp.apply_trainable(&plus);
            pm.apply_trainable(&minus);
            worst = worst.max(rel_err(an[idx], (value(&pp) - value(&pm)) / (2.0 * h)));
        }
    }
    worst
}

fn numerical_soundness() -> Check {
    let fed = forecaster_fd(Architecture::FrequencyEnhanced);
    let van = forecaster_fd(Architecture::Vanilla);
    ensure!(fed < 1e-4 && van < 1e-4, "forecaster gradient error fed {fed:e}, vanilla {van:e}");
    let lit = rl_fd(ObjectiveForm::Literal, 0.3);
    let sur = rl_fd(
        ObjectiveForm::Surrogate {
            advantage: Some(0.02),
            draw: Some(0.61),
        },
        0.0,
    );
    ensure!(lit < 1e-4 && sur < 1e-4, "RL step gradient error literal {lit:e}, surrogate {sur:e}");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rt = 0.0f64;
    for len in [5usize, 6, 7, 16, 33] {
        let x = Array2::from_shape_fn((len, 4), |_| rng.random_range(-5.0..5.0));
        let y = freq_block(&x, &FreqBlockParams::identity(max_modes(len), 4)).map_err(|e| e.to_string())?;
        rt = rt.max((&y - &x).iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    ensure!(rt < 1e-9, "round trip error {rt:e}");
    Ok(format!(
        "forecaster {:.1e}, RL step {:.1e}, round trip {rt:.1e}",
        fed.max(van),
        lit.max(sur)
    ))
}

fn count_oracle(cfg: &ForecasterConfig, target: AdapterTarget, r: usize) -> usize {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let sq = r * 2 * d;
    let ff = 2 * r * (d + f);
    let enc_freq = 2 * cfg.encoder_modes() * sq;
    let dec_freq = 2 * (cfg.decoder_modes() + cfg.cross_modes()) * sq;
    match target {
        AdapterTarget::Encoders => 2 * (enc_freq + ff),
        AdapterTarget::Decoder => dec_freq + ff,
        AdapterTarget::FrequencyAttention => 2 * enc_freq + dec_freq,
        AdapterTarget::All => 2 * (enc_freq + ff) + dec_freq + ff,
    }
}

fn trend_market(sign: f64, days: usize) -> PriceSeries {
    let assets = (0..4)
        .map(|i| SynthAsset {
            id: format!("S{i}"),
            level: 50.0 + 10.0 * i as f64,
            slope: sign * (0.003 + 0.0015 * i as f64),
            seasonal: vec![Sinusoid {
                amplitude: 0.002,
                period: 20.0 + 3.0 * i as f64,
                phase: i as f64,
            }],
        })
        .collect();
    synth_market(
        &SynthSpec {
            assets,
            n_days: days,
            noise_scale: 0.0,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        },
        1,
    )
    .unwrap()
}

fn lora_policy(target: AdapterTarget) -> Policy {
    let mode = AblationMode::Lora(target);
    let stage = mode
        .stage(Some(tiny_forecaster(Architecture::FrequencyEnhanced, 4)), 4, 5, 2, 4.0, 5)
        .unwrap();
    let dim = stage.feature_dim();
    Policy::new(
        stage,
        AssetScorer::init(ScorerConfig::new(4, 5), 2).unwrap(),
        MarketScorer::init(dim, 4).unwrap(),
        SelectionConfig::quartile(4),
    )
    .unwrap()
}

fn lora_contracts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for arch in [Architecture::FrequencyEnhanced, Architecture::Vanilla] {
        let m = ForecastModel::init(ForecasterConfig::new(arch, 4), 3).map_err(|e| e.to_string())?;
        let a = inject(m.clone(), InjectionPlan::new(AdapterTarget::All), 4, 8.0, 1, RankPolicy::Clamp).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let w = Array2::from_shape_fn((4, 5), |_| rng.random_range(5.0..50.0));
            let diff = (&m.forward(&w).unwrap().values - &a.forward(&w).unwrap().values)
                .iter()
                .fold(0.0f64, |acc, x| acc.max(x.abs()));
            ensure!(diff == 0.0, "{arch:?}: fresh adapters change the output by {diff:e}");
        }
    }

    let series = trend_market(1.0, 60);
    let p = lora_policy(AdapterTarget::All);
    let ForecasterStage::Adapted(a) = &p.stage else { return Err("expected adapters".into()) };
    let base_before = a.base().params().clone();
    let cfg = RLConfig { epochs: 3, ..RLConfig::default() };
    let out = finetune(p, &series, &cfg, AblationMode::Lora(AdapterTarget::All).parts()).map_err(|e| e.to_string())?;
    let ForecasterStage::Adapted(a) = &out.policy.stage else { return Err("expected adapters".into()) };
    for (name, v) in base_before.iter() {
        let after = a.base().params().get(name).ok_or("base parameter vanished")?;
        ensure!(
            v.iter().zip(after.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "base parameter `{name}` changed"
        );
    }

    let m = ForecastModel::init(ForecasterConfig::new(Architecture::FrequencyEnhanced, 4), 0).map_err(|e| e.to_string())?;
    let mut listed = Vec::new();
    for t in AdapterTarget::ALL_PLACEMENTS {
        for r in [1usize, 2, 4] {
            let a = inject(m.clone(), InjectionPlan::new(t), r, 8.0, 0, RankPolicy::Strict).map_err(|e| e.to_string())?;
            let got = trainable_parameters(&a).count;
            let want = count_oracle(m.config(), t, r);
            ensure!(got == want, "{t:?} rank {r}: {got} trainable, oracle {want}");
            if r == 4 {
                listed.push(format!("{}={got}", t.label()));
            }
        }
    }
    Ok(format!("zero-init diff 0, base bit-identical, rank-4 counts {}", listed.join(" ")))
}

fn sinusoid_benchmark() -> PriceSeries {
    let assets = (0..4)
        .map(|i| SynthAsset {
            id: format!("S{i}"),
            level: 40.0 + 15.0 * i as f64,
            slope: 0.0,
            seasonal: vec![
                Sinusoid {
                    amplitude: 0.08,
                    period: 20.0 + 7.0 * i as f64,
                    phase: i as f64,
                },
                Sinusoid {
                    amplitude: 0.04,
                    period: 9.0 + 2.0 * i as f64,
                    phase: 0.5 * i as f64,
                },
            ],
        })
        .collect();
    synth_market(
        &SynthSpec {
            assets,
            n_days: 2000,
            noise_scale: 0.0,
            start_date: NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(),
        },
        0,
    )
    .unwrap()
}

fn forecasting_capability() -> Check {
    let start = Instant::now();
    let s = sinusoid_benchmark();
    let (w, h) = (32, 8);
    let all = make_windows(&s, w, h, 1).map_err(|e| e.to_string())?;
    let n = all.len();
    let (train, rest) = all.split_at(n * 7 / 10);
    let (dev, test) = rest.split_at(n / 10);
    let fed_cfg = ForecasterConfig {
        window: w,
        horizon: h,
        d_model: 16,
        d_ff: 32,
        modes: 8,
        ..ForecasterConfig::new(Architecture::FrequencyEnhanced, 4)
    };
    let d_ff = folio_cli::commands::matched_d_ff(&fed_cfg, Architecture::Vanilla).map_err(|e| e.to_string())?;
    let van_cfg = ForecasterConfig {
        architecture: Architecture::Vanilla,
        d_ff,
        ..fed_cfg.clone()
    };
    let train_cfg = TrainConfig {
        epochs: 20,
        batch_size: 32,
        learning_rate: 1e-3,
        patience: 20,
        ..TrainConfig::default()
    };
    let mut res = Vec::new();
    for c in [fed_cfg, van_cfg] {
        let m = ForecastModel::init(c, 1).map_err(|e| e.to_string())?;
        let params = m.param_count();
        let out = pretrain(m, train, dev, &train_cfg).map_err(|e| e.to_string())?;
        res.push((params, evaluate_forecasts(&out.model, test).map_err(|e| e.to_string())?));
    }
    let (fp, fed) = &res[0];
    let (vp, van) = &res[1];
    let budget = (*fp as f64 - *vp as f64).abs() / *fp as f64;
    ensure!(budget < 0.01, "parameter budgets differ: {fp} vs {vp}");
    ensure!(fed.mape < 0.05, "FED test MAPE {:.4}", fed.mape);
    ensure!(fed.mae < van.mae, "FED MAE {:.4} not below vanilla {:.4}", fed.mae, van.mae);
    within(start.elapsed(), 300.0, "benchmark")?;
    Ok(format!(
        "FED MAE {:.4} MAPE {:.2}% vs vanilla MAE {:.4} MAPE {:.2}% ({fp} vs {vp} params)",
        fed.mae,
        100.0 * fed.mape,
        van.mae,
        100.0 * van.mape
    ))
}

fn rl_directional() -> Check {
    let mut means = Vec::new();
    let cfg = RLConfig::default();
    for sign in [1.0, -1.0] {
        let start = Instant::now();
        let s = trend_market(sign, 200);
        let mode = AblationMode::Lora(AdapterTarget::Encoders);
        let out = finetune(lora_policy(AdapterTarget::Encoders), &s, &cfg, mode.parts()).map_err(|e| e.to_string())?;
        let r = rollout(&out.policy, &s, &cfg).map_err(|e| e.to_string())?;
        means.push(r.iter().map(|x| x.rho).sum::<f64>() / r.len() as f64);
        within(start.elapsed(), 300.0, "fine-tuning run")?;
    }
    ensure!(means[0] > 0.8, "bull mean rho {:.4}", means[0]);
    ensure!(means[1] < 0.2, "bear mean rho {:.4}", means[1]);
    Ok(format!("bull mean rho {:.4}, bear mean rho {:.4}", means[0], means[1]))
}

fn shipped_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/synthetic.toml")
        .to_string_lossy()
        .into_owned()
}

fn cli(out: &str, id: &str, rest: &[&str]) -> Result<Outcome, String> {
    let cfg = shipped_config();
    let mut args = vec!["folio", "--config", &cfg, "--out-dir", out, "--run-id", id];
    args.extend_from_slice(rest);
    let parsed = Cli::try_parse_from(args).map_err(|e| e.to_string())?;
    execute(&parsed).map_err(|e| format!("{id}: {e}"))
}

fn ablation_harness() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().to_string_lossy().into_owned();
    cli(&out, "base", &["pretrain"])?;
    let ab = cli(&out, "ablation", &["ablate", "--base", "base"])?;
    let rows = read_metric_rows(&fs::read_to_string(ab.run.path(ABLATION_FILE)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let want: Vec<String> = AblationMode::ALL.iter().map(|m| m.to_string()).collect();
    for m in &want {
        let row = rows.get(m).ok_or(format!("no row for {m}"))?;
        ensure!(row.len() == 6, "{m}: {} metric columns", row.len());
        ensure!(row[0].is_some_and(f64::is_finite), "{m}: ARR missing");
    }
    let rep = cli(&out, "report", &["report", "ablation"])?;
    let table = fs::read_to_string(rep.run.path(COMPARISON_FILE)).map_err(|e| e.to_string())?;
    ensure!(table.lines().count() == 1 + want.len(), "comparison table has {} lines", table.lines().count());
    Ok(format!("{} modes, one metrics row each; comparison table rendered", want.len()))
}

fn artifact_hashes(o: &Outcome) -> Vec<(String, String)> {
    o.run
        .manifest
        .artifacts
        .iter()
        .map(|a| (a.path.clone(), a.sha256.clone()))
        .collect()
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trails = Vec::new();
    for store in ["first", "second"] {
        let out = tmp.path().join(store).to_string_lossy().into_owned();
        let steps = [
            cli(&out, "ingest", &["ingest"])?,
            cli(&out, "pretrain", &["pretrain"])?,
            cli(&out, "finetune", &["finetune", "--base", "pretrain"])?,
            cli(&out, "backtest", &["backtest", "--policy", "finetune"])?,
            cli(&out, "report", &["report", "backtest"])?,
        ];
        trails.push(steps.iter().map(artifact_hashes).collect::<Vec<_>>());
    }
    ensure!(trails[0] == trails[1], "reruns with the same seed produced different artifacts");

    let out = tmp.path().join("first");
    let store = RunStore::new(&out);
    let bt = store.open("backtest").map_err(|e| e.to_string())?;
    let rows = read_metric_rows(&fs::read_to_string(bt.path(METRICS_FILE)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(rows.len() == 4, "{} metrics rows", rows.len());
    for (name, row) in &rows {
        let traj = Trajectory::read_csv(bt.path(&format!("trajectories/{}.csv", name.to_lowercase())), name.clone())
            .map_err(|e| e.to_string())?;
        let m = metrics_from_returns(&traj.returns, TRADING_DAYS).map_err(|e| e.to_string())?;
        ensure!(&m.row().to_vec() == row, "{name}: exported trajectory gives different metrics");
    }
    within(start.elapsed(), 900.0, "pipeline")?;
    Ok(format!(
        "two seeded runs byte-identical, {} metrics rows recomputed exactly",
        rows.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("equation fidelity", equation_fidelity),
        ("oracle equivalence", oracle_equivalence),
        ("numerical soundness", numerical_soundness),
        ("LoRA contracts", lora_contracts),
        ("forecasting capability", forecasting_capability),
        ("RL directional behavior", rl_directional),
        ("ablation harness", ablation_harness),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{secs:.1} s]", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why} [{secs:.1} s]", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
