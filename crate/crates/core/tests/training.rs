mod common;

use common::{dataset, lorenz_x, toy_config};
use echoflow::data::lorenz_generate;
use echoflow::models::{ForecastModel, Variant};
use echoflow::numerics::Matrix;
use echoflow::par;
use echoflow::training::{
    batch_gradient, grad_check, train, Dataset, GradSlice, Split, TrainConfig,
};
use echoflow::EchoError;

fn toy_data() -> Dataset {
    dataset(&lorenz_x(200), 10)
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 5e-3,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn gradients_match_finite_differences() {
    let data = toy_data();
    for variant in [Variant::EchoSolo, Variant::EchoMlp] {
        let model = ForecastModel::new(toy_config(variant), 1, 21).unwrap();
        let windows = data.windows(Split::Train, 8, 2, 0).unwrap();
        let windows = &windows[40..43];
        let readouts = grad_check(&model, &data, windows, 1.0, GradSlice::Readouts, 1).unwrap();
        assert!(readouts.max_rel_err < 1e-5, "{variant:?} readouts {readouts:?}");
        let all = grad_check(&model, &data, windows, 1.0, GradSlice::All, 1).unwrap();
        assert!(all.max_rel_err < 1e-4, "{variant:?} {all:?}");
        assert_eq!(all.coordinates, model.num_params());
    }
}

#[test]
fn linear_branch_gradients_match() {
    // A small delta puts most errors on the linear branch of the loss.
    let data = toy_data();
    let model = ForecastModel::new(toy_config(Variant::EchoSolo), 1, 5).unwrap();
    let windows = data.windows(Split::Val, 8, 2, 0).unwrap();
    let report = grad_check(&model, &data, &windows[..2], 0.05, GradSlice::All, 3).unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = toy_data();
    let mut cfg_model = toy_config(Variant::EchoSolo);
    cfg_model.fusion.dropout = 0.0;
    let mut model = ForecastModel::new(cfg_model, 1, 2).unwrap();
    let before = model.clone();
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 0.0,
        batch_size: 1000,
        ..quick_cfg()
    };
    let report = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(model, before);
    let windows = data.windows(Split::Train, 8, 2, 0).unwrap();
    let (initial, _) = batch_gradient(&before, &data, &windows, 1.0).unwrap();
    assert_eq!(report.step_losses.len(), 1);
    assert!((report.step_losses[0] - initial).abs() < 1e-12);
    assert!((report.epochs[0].train_loss - initial).abs() < 1e-12);
}

#[test]
fn overfits_a_single_window() {
    let s = lorenz_x(400);
    let rows = |r: std::ops::Range<usize>| {
        Matrix::from_vec(r.len(), 1, s.values.as_slice()[r].to_vec()).unwrap()
    };
    // Train on exactly one window.
    let mut values = rows(100..110).into_vec();
    values.extend(rows(200..300).into_vec());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    let values: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();
    let data = Dataset {
        series: Matrix::from_vec(110, 1, values).unwrap(),
        ranges: [0..10, 10..60, 60..110],
    };
    let mut mc = toy_config(Variant::EchoSolo);
    mc.fusion.dropout = 0.0;
    let mut model = ForecastModel::new(mc, 1, 8).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 5e-2,
        ..quick_cfg()
    };
    let report = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(report.train_windows, 1);
    let first = report.step_losses[0];
    let last = *report.step_losses.last().unwrap();
    assert!(last < 0.1 * first, "first {first} last {last}");
}

#[test]
fn identical_runs_identical_reports() {
    let data = toy_data();
    let run = || {
        let mut model = ForecastModel::new(toy_config(Variant::EchoMlp), 1, 4).unwrap();
        let report = train(&mut model, &data, &quick_cfg()).unwrap();
        (serde_json::to_string(&report).unwrap(), model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let (c, mc) = par::run_sequential(run);
    assert_eq!(a, c);
    assert_eq!(ma, mc);
}

#[test]
fn cache_does_not_change_losses() {
    let data = toy_data();
    let run = |cache: bool| {
        let mut model = ForecastModel::new(toy_config(Variant::EchoSolo), 1, 6).unwrap();
        let cfg = TrainConfig {
            cache_trajectories: cache,
            ..quick_cfg()
        };
        train(&mut model, &data, &cfg).unwrap()
    };
    let on = run(true);
    let off = run(false);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&on.step_losses), bits(&off.step_losses));
    assert_eq!(serde_json::to_string(&on).unwrap(), serde_json::to_string(&off).unwrap());
}

#[test]
fn reservoirs_frozen_by_training() {
    let data = toy_data();
    let mut model = ForecastModel::new(toy_config(Variant::EchoSolo), 1, 7).unwrap();
    let before = model.clone();
    let report = train(&mut model, &data, &quick_cfg()).unwrap();
    assert!(model.same_frozen_weights(&before));
    assert_ne!(model.params, before.params);
    assert!(report.step_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn zero_epochs_report_initial_metrics() {
    let data = toy_data();
    let mut model = ForecastModel::new(toy_config(Variant::EchoSolo), 1, 7).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..quick_cfg()
    };
    let report = train(&mut model, &data, &cfg).unwrap();
    assert!(report.epochs.is_empty() && report.step_losses.is_empty());
    assert_eq!(report.best_epoch, 0);
    assert_eq!(report.best_val_mse, report.initial_val.mse);
}

#[test]
fn non_finite_data_is_divergence() {
    let mut data = toy_data();
    data.series.set(50, 0, f64::NAN);
    let mut model = ForecastModel::new(toy_config(Variant::EchoSolo), 1, 7).unwrap();
    assert!(matches!(
        train(&mut model, &data, &quick_cfg()),
        Err(EchoError::Divergence(_))
    ));
}

#[test]
fn channel_mismatch_rejected() {
    let data = toy_data();
    let mut model = ForecastModel::new(toy_config(Variant::EchoSolo), 3, 7).unwrap();
    assert!(matches!(
        train(&mut model, &data, &quick_cfg()),
        Err(EchoError::Shape { .. })
    ));
}

#[test]
fn multichannel_training_runs() {
    let s = lorenz_generate(200, 0.01, [1.0, 1.0, 1.0], Default::default()).unwrap();
    let data = common::dataset(&s, 10);
    let mut model = ForecastModel::new(toy_config(Variant::EchoMlp), 3, 1).unwrap();
    let report = train(&mut model, &data, &quick_cfg()).unwrap();
    assert!(report.test.mse.is_finite() && report.test.mae.is_finite());
}
