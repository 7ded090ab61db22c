//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use echoflow::data::{load_csv, lorenz_generate, split, LoadOptions, LorenzParams, SplitPreset};
use echoflow::fusion::FusionConfig;
use echoflow::group::{default_group, ReservoirGroup};
use echoflow::models::{ForecastModel, ModelConfig, Variant};
use echoflow::numerics::{spectral_radius, Matrix, RngStream};
use echoflow::par;
use echoflow::reservoir::{XEsnConfig, XEsnUnit};
use echoflow::training::{
    evaluate_persistence, grad_check, huber, huber_point, train, Dataset, GradSlice, Split, TrainConfig,
    TrainReport,
};
use nalgebra::DMatrix;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
}

fn report(c: &Criterion, outcome: Outcome, elapsed: Duration) -> bool {
    let secs = elapsed.as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Outcome::Pass(d) => match c.limit {
            Some(l) if elapsed > l => ("FAIL", format!("{d}; over the {}s budget", l.as_secs()), false),
            _ => ("PASS", d, true),
        },
        Outcome::Fail(d) => ("FAIL", d, false),
        Outcome::Skip(d) => ("SKIP", d, true),
    };
    println!("{tag} {:>2} {}: {detail} [{secs:.2}s]", c.id, c.name);
    ok
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// 1
fn classical_reduction() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut r = RngStream::new(seed, 1);
        let alpha = r.uniform(0.05, 1.0);
        let cfg = XEsnConfig::classical(50, 0.9, 0.5, alpha);
        let base = XEsnUnit::new(cfg, 4, &RngStream::new(seed, 2)).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..50).map(|_| r.uniform(-1.0, 1.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| r.uniform(-3.0, 3.0)).collect();
            let mut a = base.clone();
            let mut b = base.clone();
            a.set_state(&x).unwrap();
            b.set_state(&x).unwrap();
            let ya = a.step_mcra(&h).unwrap();
            let yb = b.step_classic(&h, alpha).unwrap();
            for (p, q) in ya.iter().zip(yb) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("max |mcra - classic| = {worst:.2e} over 1000 pairs"))
}

fn dense_radius(m: &Matrix) -> f64 {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

// 2
fn esp_scaling() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    // Full-size units with the iterative estimate, subsampled units (at most
    // 50 neurons) with a dense eigensolver as well.
    for (cfg, dense) in [(default_group(), false), (default_group().shrink(3.0), true)] {
        let group = ReservoirGroup::new(&cfg, 8, &RngStream::new(2024, 0)).unwrap();
        for (unit, ucfg) in group.units().iter().zip(&cfg.units) {
            let target = ucfg.spectral_radius;
            let est = spectral_radius(unit.recurrent_weights()).unwrap().radius;
            worst = worst.max((est - target).abs());
            if dense {
                assert!(unit.size() <= 50);
                worst = worst.max((dense_radius(unit.recurrent_weights()) - target).abs());
            }
            checked += 1;
        }
    }
    check(worst < 1e-3, format!("{checked} units, max |measured - configured| = {worst:.2e}"))
}

// 3
fn fading_memory() -> Outcome {
    let mut contracted = 0;
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..100u64 {
        let cfg = XEsnConfig::classical(100, 0.9, 0.6, 0.5);
        let mut a = XEsnUnit::new(cfg, 1, &RngStream::new(seed, 3)).unwrap();
        let mut b = a.clone();
        let mut r = RngStream::new(seed, 4);
        let xa: Vec<f64> = (0..100).map(|_| r.uniform(-1.0, 1.0)).collect();
        let xb: Vec<f64> = (0..100).map(|_| r.uniform(-1.0, 1.0)).collect();
        a.set_state(&xa).unwrap();
        b.set_state(&xb).unwrap();
        let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d0 = dist(&xa, &xb);
        for _ in 0..500 {
            let h = [r.uniform(-1.0, 1.0)];
            a.step_classic(&h, 0.5).unwrap();
            b.step_classic(&h, 0.5).unwrap();
        }
        let ratio = dist(a.state(), b.state()) / d0;
        worst_ratio = worst_ratio.max(ratio);
        if ratio < 1e-4 {
            contracted += 1;
        }
    }
    check(
        contracted >= 95,
        format!("{contracted}/100 seeds contracted below 1e-4, worst ratio {worst_ratio:.2e}"),
    )
}

fn toy_model_config(variant: Variant) -> ModelConfig {
    common::toy_config(variant)
}

// 4
fn gradient_fidelity() -> Outcome {
    let data = common::dataset(&common::lorenz_x(300), 10);
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    for variant in [Variant::EchoSolo, Variant::EchoMlp] {
        let model = ForecastModel::new(toy_model_config(variant), 1, 99).unwrap();
        let windows = data.windows(Split::Train, 8, 2, 0).unwrap();
        let windows = &windows[100..104];
        let mut slices = vec![
            GradSlice::Readouts,
            GradSlice::Combiner,
            GradSlice::Head,
            GradSlice::Encoder,
            GradSlice::Decoder,
        ];
        if variant == Variant::EchoMlp {
            slices.push(GradSlice::Base);
        }
        for slice in slices {
            let r = grad_check(&model, &data, windows, 1.0, slice, 1).unwrap();
            worst = worst.max(r.max_rel_err);
            lines.push(format!("{variant:?}/{slice:?} {:.1e}", r.max_rel_err));
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} ({})", lines.join(", ")))
}

// 5
fn huber_exactness() -> Outcome {
    let cases = [
        huber(&[0.3], &[0.3], 1.0).unwrap() == 0.0,
        huber(&[0.0], &[0.5], 1.0).unwrap() == 0.125,
        huber(&[0.0], &[2.0], 1.0).unwrap() == 1.5,
    ];
    let mut r = RngStream::new(5, 5);
    let mut violations = 0;
    for _ in 0..10_000 {
        let e = r.normal() * 10f64.powf(r.uniform(-3.0, 3.0));
        let delta = r.uniform(0.01, 3.0);
        if huber_point(e, delta) > 0.5 * e * e {
            violations += 1;
        }
    }
    check(
        cases.iter().all(|&c| c) && violations == 0,
        format!("closed forms {cases:?}, {violations} bound violations in 10^4 draws"),
    )
}

// 6
fn constant_step_cost() -> Outcome {
    let cfg = XEsnConfig {
        size: 120,
        ..XEsnConfig::default()
    };
    let mut unit = XEsnUnit::new(cfg, 8, &RngStream::new(6, 6)).unwrap();
    let mut r = RngStream::new(6, 7);
    let window = 301;
    let early_at = 100;
    let late_at = 10_000;
    let mut early = Vec::with_capacity(window);
    let mut late = Vec::with_capacity(window);
    let mut bytes = (0, 0);
    for i in 0..late_at + window {
        let h: Vec<f64> = (0..8).map(|_| r.uniform(-1.0, 1.0)).collect();
        let t = Instant::now();
        unit.step_mcra(&h).unwrap();
        let dt = t.elapsed().as_secs_f64();
        if (early_at..early_at + window).contains(&i) {
            early.push(dt);
        }
        if (late_at..late_at + window).contains(&i) {
            late.push(dt);
        }
        if i == early_at {
            bytes.0 = unit.state_bytes();
        }
        if i == late_at {
            bytes.1 = unit.state_bytes();
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (e, l) = (median(&mut early), median(&mut late));
    check(
        l <= 2.0 * e && bytes.0 == bytes.1,
        format!(
            "median step {:.2}us at 10^2, {:.2}us at 10^4 (ratio {:.2}); state bytes {} -> {}",
            e * 1e6,
            l * 1e6,
            l / e,
            bytes.0,
            bytes.1
        ),
    )
}

// 7
fn cache_equivalence() -> Outcome {
    let data = common::dataset(&common::lorenz_x(200), 10);
    let run = |cache: bool| {
        let mut model = ForecastModel::new(toy_model_config(Variant::EchoSolo), 1, 7).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 7,
            cache_trajectories: cache,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &cfg).unwrap().step_losses
    };
    let on = run(true);
    let off = run(false);
    let same = on.len() == off.len() && on.iter().zip(&off).all(|(a, b)| a.to_bits() == b.to_bits());
    check(same, format!("{} step losses compared bitwise", on.len()))
}

const SKILL_STEPS: usize = 2000;
const SKILL_SEED: u64 = 8;

fn skill_config() -> ModelConfig {
    ModelConfig {
        variant: Variant::EchoSolo,
        group: default_group().shrink(2.0),
        lookback: 64,
        horizon: 16,
        ..ModelConfig::default()
    }
}

fn lorenz_task(steps: usize) -> Dataset {
    let s = lorenz_generate(steps + 500, 0.01, [1.0, 1.0, 1.0], LorenzParams::default()).unwrap();
    let s = s.slice(500..s.len()).select(&[0]).unwrap();
    let splits = split(&s, SplitPreset::Standard.fractions(), 80).unwrap();
    Dataset::from_splits(&splits.normalized().unwrap().0)
}

struct SkillRun {
    report: TrainReport,
    json: String,
    initial: ForecastModel,
    trained: ForecastModel,
    persistence_mse: f64,
}

fn skill_run() -> SkillRun {
    par::run_sequential(|| {
        let data = lorenz_task(SKILL_STEPS);
        let initial = ForecastModel::new(skill_config(), 1, SKILL_SEED).unwrap();
        let mut trained = initial.clone();
        let cfg = TrainConfig {
            epochs: 50,
            seed: SKILL_SEED,
            ..TrainConfig::default()
        };
        let report = train(&mut trained, &data, &cfg).unwrap();
        let persistence = evaluate_persistence(&data, Split::Test, 64, 16, 0, None).unwrap();
        SkillRun {
            json: serde_json::to_string_pretty(&report).unwrap(),
            report,
            initial,
            trained,
            persistence_mse: persistence.mse,
        }
    })
}

// 9
fn group_stability() -> Outcome {
    let data = lorenz_task(1500);
    let run = |units: usize, seed: u64| {
        let cfg = ModelConfig {
            variant: Variant::EchoSolo,
            group: default_group().truncate(units).shrink(3.0),
            fusion: FusionConfig {
                d_model: 32,
                ..FusionConfig::default()
            },
            lookback: 48,
            horizon: 16,
            ..ModelConfig::default()
        };
        let mut model = ForecastModel::new(cfg, 1, seed).unwrap();
        let tc = TrainConfig {
            epochs: 25,
            learning_rate: 3e-3,
            seed,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &tc).unwrap().test.mse
    };
    let stats = |units: usize| {
        let v: Vec<f64> = (0..10).map(|s| run(units, 100 + s)).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        (mean, std)
    };
    let (m1, s1) = stats(1);
    let (m10, s10) = stats(10);
    check(
        s10 < s1 && m10 <= m1,
        format!("L=1 mean {m1:.4} std {s1:.4}; L=10 mean {m10:.4} std {s10:.4}"),
    )
}

// 12
fn real_data_smoke() -> Outcome {
    let Some(path) = std::env::var_os("ECHOFLOW_ETTH1").map(PathBuf::from) else {
        return Outcome::Skip("set ECHOFLOW_ETTH1 to an ETTh1 CSV to run".into());
    };
    let s = match load_csv(&path, LoadOptions::default()) {
        Ok(s) => s.slice(0..3000.min(s.len())),
        Err(e) => return Outcome::Fail(format!("cannot load {}: {e}", path.display())),
    };
    let splits = match split(&s, SplitPreset::Ett.fractions(), 120) {
        Ok(sp) => sp,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let data = Dataset::from_splits(&splits.normalized().unwrap().0);
    let cfg = ModelConfig {
        group: default_group().shrink(2.0),
        lookback: 96,
        horizon: 24,
        ..ModelConfig::default()
    };
    let mut model = ForecastModel::new(cfg, s.channels(), 12).unwrap();
    let tc = TrainConfig {
        epochs: 5,
        seed: 12,
        ..TrainConfig::default()
    };
    let r = train(&mut model, &data, &tc).unwrap();
    let p = evaluate_persistence(&data, Split::Test, 96, 24, 0, None).unwrap();
    check(
        r.test.mse.is_finite() && r.test.mae.is_finite() && r.test.mse < p.mse,
        format!("test mse {:.4} mae {:.4}; persistence mse {:.4}", r.test.mse, r.test.mae, p.mse),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run_it = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let c = |id, name, limit: Option<u64>| Criterion {
        id,
        name,
        limit: limit.map(Duration::from_secs),
    };
    let mut all_ok = true;
    let timed = |crit: Criterion, f: &dyn Fn() -> Outcome| {
        if !run_it(crit.id) {
            return true;
        }
        let t = Instant::now();
        let o = f();
        report(&crit, o, t.elapsed())
    };

    all_ok &= timed(c(1, "classical reduction", Some(1)), &classical_reduction);
    all_ok &= timed(c(2, "spectral scaling", Some(10)), &esp_scaling);
    all_ok &= timed(c(3, "fading memory", Some(30)), &fading_memory);
    all_ok &= timed(c(4, "gradient fidelity", Some(60)), &gradient_fidelity);
    all_ok &= timed(c(5, "huber exactness", None), &huber_exactness);
    all_ok &= timed(c(6, "constant step cost", None), &constant_step_cost);
    all_ok &= timed(c(7, "cache equivalence", None), &cache_equivalence);

    if [8, 10, 11].iter().any(|&i| run_it(i)) {
        let t = Instant::now();
        let first = skill_run();
        let first_elapsed = t.elapsed();
        let r = &first.report;
        if run_it(8) {
            let outcome = check(
                r.test.mse < first.persistence_mse,
                format!(
                    "test mse {:.4} vs persistence {:.4}, best epoch {}, {} windows x 50 epochs on one thread",
                    r.test.mse, first.persistence_mse, r.best_epoch, r.train_windows
                ),
            );
            all_ok &= report(&c(8, "forecast skill", Some(300)), outcome, first_elapsed);
        }
        all_ok &= timed(c(10, "frozen reservoirs", None), &|| {
            let fresh = ForecastModel::new(skill_config(), 1, SKILL_SEED).unwrap();
            check(
                first.trained.same_frozen_weights(&first.initial) && first.trained.same_frozen_weights(&fresh),
                "reservoir tensors compared bitwise with initialization".into(),
            )
        });
        all_ok &= timed(c(11, "determinism", None), &|| {
            let second = skill_run();
            check(
                second.json == first.json,
                format!("report JSON of {} bytes, rerun identical: {}", first.json.len(), second.json == first.json),
            )
        });
    }

    all_ok &= timed(c(9, "group stability", Some(1800)), &group_stability);
    all_ok &= timed(c(12, "real data smoke", None), &real_data_smoke);

    if !all_ok {
        std::process::exit(1);
    }
}
