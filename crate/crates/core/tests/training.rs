use chrono::NaiveDate;
use folio_core::forecast::{Architecture, ForecastModel, ForecasterConfig};
use folio_core::market_data::{make_windows, synth_market, PriceSeries, Sinusoid, SynthAsset, SynthSpec};
use folio_core::train::{error_report, evaluate_forecasts, pretrain, TrainConfig};
use ndarray::Array2;
use proptest::prelude::*;

fn series(levels: &[f64], seasonal: bool, n_days: usize) -> PriceSeries {
    let assets = levels
        .iter()
        .enumerate()
        .map(|(i, &level)| SynthAsset {
            id: format!("A{i}"),
            level,
            slope: 0.0,
            seasonal: if seasonal {
                vec![Sinusoid {
                    amplitude: 0.1,
                    period: 8.0 + i as f64,
                    phase: 0.0,
                }]
            } else {
                vec![]
            },
        })
        .collect();
    synth_market(
        &SynthSpec {
            assets,
            n_days,
            noise_scale: 0.0,
            start_date: NaiveDate::from_ymd_opt(2022, 1, 3).unwrap(),
        },
        0,
    )
    .unwrap()
}

fn small(n: usize) -> ForecastModel {
    ForecastModel::init(
        ForecasterConfig {
            d_model: 8,
            d_ff: 16,
            ..ForecasterConfig::new(Architecture::FrequencyEnhanced, n)
        },
        1,
    )
    .unwrap()
}

#[test]
fn constant_series_is_learned() {
    let s = series(&[10.0, 42.0, 7.5], false, 60);
    let samples = make_windows(&s, 5, 5, 1).unwrap();
    let (train, dev) = samples.split_at(40);
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 8,
        patience: 50,
        ..TrainConfig::default()
    };
    let out = pretrain(small(3), train, dev, &cfg).unwrap();
    let last = out.curve.last().unwrap();
    assert!(last.train_loss < 1e-6, "final train MSE {}", last.train_loss);
    assert!(out.model.params().all_finite());
}

#[test]
fn same_seed_same_curve() {
    let s = series(&[10.0, 20.0], true, 80);
    let samples = make_windows(&s, 5, 5, 1).unwrap();
    let (train, dev) = samples.split_at(55);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = pretrain(small(2), train, dev, &cfg).unwrap();
    let b = pretrain(small(2), train, dev, &cfg).unwrap();
    let bits = |c: &[folio_core::train::EpochRecord]| {
        c.iter().map(|r| (r.train_loss.to_bits(), r.dev_mae.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(bits(&a.curve), bits(&b.curve));
    assert_eq!(a.model, b.model);
}

#[test]
fn training_reduces_dev_error_on_seasonal_data() {
    let s = series(&[10.0, 20.0], true, 160);
    let samples = make_windows(&s, 5, 5, 1).unwrap();
    let (train, dev) = samples.split_at(120);
    let before = evaluate_forecasts(&small(2), dev).unwrap().mae;
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 16,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let out = pretrain(small(2), train, dev, &cfg).unwrap();
    assert!(out.best_dev_mae < before, "{} vs {before}", out.best_dev_mae);
    assert_eq!(evaluate_forecasts(&out.model, dev).unwrap().mae, out.best_dev_mae);
}

#[test]
fn evaluation_ignores_sample_order() {
    let s = series(&[10.0, 20.0], true, 40);
    let mut samples = make_windows(&s, 5, 5, 1).unwrap();
    let m = small(2);
    let a = evaluate_forecasts(&m, &samples).unwrap();
    samples.reverse();
    let b = evaluate_forecasts(&m, &samples).unwrap();
    assert!((a.mae - b.mae).abs() < 1e-12);
    assert!((a.rmse - b.rmse).abs() < 1e-12);
    assert!((a.mape - b.mape).abs() < 1e-12);
}

#[test]
fn rejects_empty_inputs() {
    assert!(pretrain(small(2), &[], &[], &TrainConfig::default()).is_err());
    assert!(evaluate_forecasts(&small(2), &[]).is_err());
}

proptest! {
    #[test]
    fn rmse_dominates_mae(res in prop::collection::vec(-50.0f64..50.0, 1..40), level in 1.0f64..100.0) {
        let n = res.len();
        let target = Array2::from_elem((1, n), level);
        let pred = Array2::from_shape_fn((1, n), |(_, j)| level + res[j]);
        let r = error_report(&[pred], &[target]).unwrap();
        let mae = res.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        prop_assert!((r.mae - mae).abs() < 1e-9);
        prop_assert!(r.rmse + 1e-12 >= r.mae);
        prop_assert!(r.mae >= 0.0);
    }
}
