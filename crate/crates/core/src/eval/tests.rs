use super::*;
use crate::data::{SeriesFrame, SplitSpec, SyntheticSpec};
use crate::train::{Arm, Backbone, TrainConfig};

fn frame(len: usize) -> SeriesFrame {
    let values = (0..len)
        .flat_map(|t| {
            let t = t as f64;
            [(t / 5.0).sin() + 0.01 * t, (t / 9.0).cos()]
        })
        .collect();
    SeriesFrame::new(values, vec!["a".into(), "b".into()], None).unwrap()
}

fn base() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 16,
        latent: 4,
        hidden: 8,
        backbone: Backbone::Rmlp,
        eval_batch_size: 64,
        ..TrainConfig::default()
    }
}

fn ablation(arms: Vec<Arm>, horizons: Vec<usize>, seeds: Vec<u64>) -> AblationSpec {
    AblationSpec {
        dataset: "toy".into(),
        lookback: 16,
        split: SplitSpec::default(),
        horizons,
        arms,
        seeds,
        base: base(),
        jobs: 1,
        save_dir: None,
    }
}

#[test]
fn single_run_ablation_has_one_row() {
    let r = run_ablation(&frame(300), &ablation(vec![Arm::Original], vec![8], vec![0])).unwrap();
    assert_eq!(r.reports().len(), 1);
    assert_eq!(r.runs_csv().lines().count(), 2);
    assert!(r.reports()[0].is_valid());
    assert_eq!(r.failures(), 0);
}

#[test]
fn ablation_cross_product_and_means() {
    let spec = ablation(vec![Arm::Original, Arm::Tam], vec![4, 8], vec![0, 1]);
    let r = run_ablation(&frame(300), &spec).unwrap();
    assert_eq!(r.runs.len(), 8);
    let m = r.mean(Arm::Tam, 8).unwrap();
    let seeds: Vec<f64> = r.reports().iter().filter(|x| x.arm == Arm::Tam && x.horizon == 8).map(|x| x.mse).collect();
    assert_eq!(seeds.len(), 2);
    assert!((m.mse - (seeds[0] + seeds[1]) / 2.0).abs() < 1e-15);
    let table = r.table();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("horizon"));
    assert_eq!(r.cells_csv().lines().next().unwrap(), "horizon,original mse,original mae,tam mse,tam mae");
}

#[test]
fn ablation_is_bitwise_reproducible_across_jobs() {
    let spec = ablation(vec![Arm::Original, Arm::InfoTime], vec![8], vec![0, 1]);
    let a = run_ablation(&frame(300), &spec).unwrap();
    let b = run_ablation(&frame(300), &AblationSpec { jobs: 3, ..spec }).unwrap();
    assert_eq!(a.runs_csv(), b.runs_csv());
}

#[test]
fn failed_runs_are_marked() {
    // Levels beyond the horizon make every +TAM fit fail at construction.
    let mut spec = ablation(vec![Arm::Original, Arm::Tam], vec![4], vec![0]);
    spec.base.tam.levels = 3;
    let r = run_ablation(&frame(300), &spec).unwrap();
    assert_eq!(r.failures(), 1);
    assert!(matches!(r.cell(Arm::Tam, 4), Some(Cell::Failed(1))));
    assert!(r.mean(Arm::Original, 4).is_some());
    assert!(r.table().contains("FAILED"));
    assert!(r.runs_csv().contains("failed: "));
}

fn sweep(values: Vec<f64>) -> SweepSpec {
    SweepSpec {
        param: SweepParam::Beta,
        values,
        base: TrainConfig { arm: Arm::InfoTime, backbone: Backbone::Mlp, ..base() },
        dataset: "toy".into(),
        lookback: 16,
        split: SplitSpec::default(),
        horizons: vec![8],
        seeds: vec![0],
        jobs: 1,
        save_dir: None,
    }
}

#[test]
fn sweep_grid_rules() {
    assert!(sweep(vec![]).validate().is_err());
    assert!(sweep(vec![1.0, 0.0]).validate().is_err());
    assert!(sweep(vec![1.0, 1.0]).validate().is_err());
    assert!(sweep(vec![-1.0]).validate().is_err());
    assert!(sweep(vec![0.0, 1.0]).validate().is_ok());
    assert_eq!("λ".parse::<SweepParam>().unwrap(), SweepParam::Lambda);
}

#[test]
fn single_point_sweep_has_one_row() {
    let r = run_sweep(&frame(300), &sweep(vec![1.0])).unwrap();
    assert_eq!(r.points.len(), 1);
    let csv = r.to_csv();
    assert_eq!(csv.lines().collect::<Vec<_>>()[0], "beta,horizon,mse,mae");
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn sweep_values_reach_the_config() {
    let a = run_sweep(&frame(300), &sweep(vec![0.0, 1e4])).unwrap();
    assert_ne!(a.mean(0.0, 8), a.mean(1e4, 8));
    let lam = SweepSpec { param: SweepParam::Lambda, ..sweep(vec![0.0, 1.0]) };
    let b = run_sweep(&frame(300), &lam).unwrap();
    assert_ne!(b.mean(0.0, 8), b.mean(1.0, 8));
}

fn synthetic(sigma_test: Vec<f64>) -> SyntheticExperiment {
    SyntheticExperiment {
        spec: SyntheticSpec { components: 2, length: 300, noise_channels: 1, noise_on_target: false, ..Default::default() },
        sigma_train: 1.0,
        sigma_test,
        lookback: 16,
        horizon: 8,
        base: TrainConfig { instance_norm: false, ..base() },
        seeds: vec![0],
        jobs: 1,
        save_dir: None,
    }
}

#[test]
fn synthetic_matched_ratio_is_one() {
    let exp = synthetic(vec![2.0]);
    assert_eq!(exp.grid(), vec![1.0, 2.0]);
    let r = run_synthetic_experiment(&exp).unwrap();
    assert_eq!(r.runs.len(), 3 * 2);
    for arm in SyntheticArm::ALL {
        assert_eq!(r.degradation(arm, 1.0), Some(1.0));
        assert!(r.mse(arm, 2.0).unwrap() > 0.0);
    }
    assert_eq!(r.to_csv().lines().count(), 1 + 3 * 2);
}

#[test]
fn independence_ignores_noise_channels() {
    // Without target noise the independent arm never sees the noise
    // channel, so a change of test noise leaves its error untouched.
    let r = run_synthetic_experiment(&synthetic(vec![0.0, 3.0])).unwrap();
    let base = r.mse(SyntheticArm::Independent, 1.0).unwrap();
    for s in [0.0, 3.0] {
        assert_eq!(r.mse(SyntheticArm::Independent, s).unwrap(), base);
    }
    assert_ne!(r.mse(SyntheticArm::Mixing, 3.0), r.mse(SyntheticArm::Mixing, 1.0));
}

#[test]
fn synthetic_is_reproducible() {
    let exp = synthetic(vec![2.0]);
    let a = run_synthetic_experiment(&exp).unwrap();
    let b = run_synthetic_experiment(&SyntheticExperiment { jobs: 2, ..exp }).unwrap();
    assert_eq!(a.runs_csv(), b.runs_csv());
}
