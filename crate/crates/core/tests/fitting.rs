use std::f64::consts::FRAC_PI_3;

use bodyfit::fitter::{fit, fit_shared_beta, fit_subset, stratified_subset, FitConfig, FitTarget, ResultFile};
use bodyfit::metrics::{mean_angle_error, mpjpe, procrustes_error};
use bodyfit::shape_solver::ShapeSolveConfig;
use bodyfit::synth::{random_pose, rng, synth_target};
use bodyfit::toy::make_toy_model;
use bodyfit::BodyModel;

fn model() -> BodyModel {
    make_toy_model(0, 602, 16, 10).unwrap()
}

fn exact() -> FitConfig {
    FitConfig { shape: ShapeSolveConfig { ridge_lambda: 0.0, ..ShapeSolveConfig::default() }, ..FitConfig::default() }
}

#[test]
fn recovers_pose_and_shape_from_clean_targets() {
    let m = model();
    let mut r = rng(11);
    for _ in 0..10 {
        let truth = random_pose(&m, &mut r, FRAC_PI_3, 2.0, 1.0);
        let target = synth_target(&m, &truth, 0.0, &mut r);
        let got = fit(&m, &target, &FitConfig { n_iters: 10, ..exact() }).unwrap();
        assert!(got.final_vertex_rmse < 1e-5, "rmse {}", got.final_vertex_rmse);
        assert!(mean_angle_error(&got.pose.rotations, &truth.rotations).unwrap() < 1e-3);
        assert!((&got.pose.beta - &truth.beta).amax() < 1e-3);
        let joints = m.forward(&got.pose).unwrap().joints;
        assert!(mpjpe(&joints, &target.joints).unwrap() < 1e-5);
    }
}

#[test]
fn subset_fit_reports_full_model_error() {
    let m = model();
    let mut r = rng(12);
    let truth = random_pose(&m, &mut r, FRAC_PI_3, 2.0, 1.0);
    let target = synth_target(&m, &truth, 0.0, &mut r);
    let subset = stratified_subset(&m, 100);
    assert_eq!(subset.len(), 100);
    assert!(subset.windows(2).all(|w| w[0] < w[1]));
    let got = fit_subset(&m, &target, &subset, &exact()).unwrap();
    let posed = m.forward(&got.pose).unwrap().vertices;
    assert!(procrustes_error(&posed, &target.vertices).unwrap() <= got.final_vertex_rmse + 1e-12);
    assert!(got.final_vertex_rmse < 1e-3);
}

#[test]
fn shared_shape_is_common_to_all_views() {
    let m = model();
    let mut r = rng(13);
    let subject = random_pose(&m, &mut r, 0.0, 2.0, 0.0).beta;
    let targets: Vec<FitTarget> = (0..3)
        .map(|_| {
            let mut p = random_pose(&m, &mut r, FRAC_PI_3, 0.0, 1.0);
            p.beta = subject.clone();
            synth_target(&m, &p, 0.0, &mut r)
        })
        .collect();
    let out = fit_shared_beta(&m, &targets, &FitConfig { n_iters: 10, ..exact() }).unwrap();
    assert_eq!(out.fits.len(), 3);
    assert!((&out.beta - &subject).amax() < 1e-3);
    for f in &out.fits {
        assert_eq!(f.pose.beta, out.beta);
        assert!(f.final_vertex_rmse < 1e-3);
    }
}

#[test]
fn target_and_result_files_round_trip() {
    let m = model();
    let mut r = rng(14);
    let truth = random_pose(&m, &mut r, FRAC_PI_3, 2.0, 1.0);
    let target = synth_target(&m, &truth, 0.003, &mut r);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("target.json");
    target.save(&path).unwrap();
    assert_eq!(FitTarget::load(&path).unwrap(), target);

    let got = fit(&m, &target, &FitConfig::default()).unwrap();
    let path = dir.path().join("result.json");
    ResultFile::from_fit(&m, &got, None).save(&path).unwrap();
    assert_eq!(ResultFile::load(&path).unwrap().pose().unwrap(), got.pose);
}

#[test]
fn empty_shared_fit_is_rejected() {
    assert!(fit_shared_beta(&model(), &[], &FitConfig::default()).is_err());
}
