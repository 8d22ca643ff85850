mod common;

use common::{fd_jacobian, log_abs_det, v, Bent, Exponential, Silent};
use nalgebra::{DMatrix, DVector};
use pfgspf_core::filters::kalman_update;
use pfgspf_core::flow::{edh_flow, ledh_flow, make_schedule, FlowSchedule};
use pfgspf_core::gaussmix::empirical_moments;
use pfgspf_core::rng::stream;
use pfgspf_core::scenarios::{LinearConfig, LinearGaussianModel};
use pfgspf_core::{Gaussian, StateSpaceModel};

fn pred2() -> Gaussian<f64> {
    Gaussian::new(v(&[0.4, -0.2]), DMatrix::from_row_slice(2, 2, &[0.8, 0.25, 0.25, 0.6])).unwrap()
}

fn linear(dim: usize) -> LinearGaussianModel<f64> {
    LinearGaussianModel::new(&LinearConfig { dim, ..Default::default() }).unwrap()
}

fn schedule() -> FlowSchedule<f64> {
    make_schedule(29, 1.2).unwrap()
}

#[test]
fn scalar_flow_matches_independent_recursion() {
    let model = linear(1);
    let (m, p, r, z) = (0.3, 2.0, 1.0, 1.7);
    let pred = Gaussian::new(v(&[m]), DMatrix::from_element(1, 1, p)).unwrap();
    let sched = schedule();
    let eta0 = 1.1;
    let out = ledh_flow(&model, &[v(&[eta0])], &pred, &v(&[z]), &sched, false).unwrap();

    let mut eta = eta0;
    let mut log_det = 0.0;
    for (&lambda, &eps) in sched.lambdas().iter().zip(sched.epsilons()) {
        let a = -0.5 * p / (lambda * p + r);
        let b = (1.0 + 2.0 * lambda * a) * ((1.0 + lambda * a) * p / r * z + a * m);
        eta += eps * (a * eta + b);
        log_det += (1.0 + eps * a).abs().ln();
    }
    assert!((out.eta1[0][0] - eta).abs() < 1e-6, "{} vs {eta}", out.eta1[0][0]);
    assert!((out.log_jac_det[0] - log_det).abs() < 1e-6);
}

#[test]
fn edh_log_det_matches_finite_difference_of_full_map() {
    let model = Bent::new();
    let pred = pred2();
    let z = v(&[0.9, 0.1]);
    let sched = schedule();
    let map = |x: &DVector<f64>| edh_flow(&model, &[x.clone()], &pred, &z, &sched, false).unwrap().eta1[0].clone();
    for x0 in [v(&[0.4, -0.2]), v(&[1.5, 0.7]), v(&[-0.8, -1.1])] {
        let out = edh_flow(&model, &[x0.clone()], &pred, &z, &sched, false).unwrap();
        let fd = log_abs_det(&fd_jacobian(map, &x0, 1e-5));
        assert!((out.log_jac_det[0] - fd).abs() < 1e-5, "{} vs {fd}", out.log_jac_det[0]);
    }
}

#[test]
fn ledh_log_det_matches_finite_difference_on_linear_model() {
    let model = linear(2);
    let pred = pred2();
    let z = v(&[0.9, 0.1]);
    let sched = schedule();
    let map = |x: &DVector<f64>| ledh_flow(&model, &[x.clone()], &pred, &z, &sched, false).unwrap().eta1[0].clone();
    let x0 = v(&[1.0, 0.3]);
    let out = ledh_flow(&model, &[x0.clone()], &pred, &z, &sched, false).unwrap();
    let fd = log_abs_det(&fd_jacobian(map, &x0, 1e-5));
    assert!((out.log_jac_det[0] - fd).abs() < 1e-5);
}

#[test]
fn ledh_log_det_matches_composed_retained_steps() {
    let model = Bent::new();
    let pred = pred2();
    let z = v(&[0.9, 0.1]);
    let eta0: Vec<_> = pred.sample(20, &mut stream(3, &[]));
    let out = ledh_flow(&model, &eta0, &pred, &z, &schedule(), true).unwrap();
    for (i, x0) in eta0.iter().enumerate() {
        let replay = out.forward(i, x0).unwrap();
        assert!((&replay - &out.eta1[i]).amax() < 1e-12);
        let fd = log_abs_det(&fd_jacobian(|x| out.forward(i, x).unwrap(), x0, 1e-5));
        assert!((out.log_jac_det[i] - fd).abs() < 1e-5, "particle {i}");
    }
}

#[test]
fn retained_steps_invert_to_pre_flow_particles() {
    let model = Bent::new();
    let pred = pred2();
    let z = v(&[0.9, 0.1]);
    let eta0: Vec<_> = pred.sample(20, &mut stream(4, &[]));
    for out in [
        ledh_flow(&model, &eta0, &pred, &z, &schedule(), true).unwrap(),
        edh_flow(&model, &eta0, &pred, &z, &schedule(), true).unwrap(),
    ] {
        for (i, x0) in eta0.iter().enumerate() {
            let back = out.invert(i).unwrap().unwrap();
            assert!((&back - x0).amax() < 1e-8);
        }
    }
}

#[test]
fn zero_information_leaves_particles_in_place() {
    let model = Silent::new(3);
    let pred = Gaussian::isotropic(DVector::zeros(3), 2.0).unwrap();
    let eta0 = pred.sample(5, &mut stream(5, &[]));
    for out in [
        ledh_flow(&model, &eta0, &pred, &v(&[0.7]), &schedule(), false).unwrap(),
        edh_flow(&model, &eta0, &pred, &v(&[0.7]), &schedule(), false).unwrap(),
    ] {
        assert_eq!(out.eta1, eta0);
        assert!(out.log_jac_det.iter().all(|&l| l == 0.0));
    }
}

#[test]
fn edh_maps_identical_particles_identically() {
    let model = Bent::new();
    let x = v(&[0.2, 0.9]);
    let out = edh_flow(&model, &[x.clone(), x.clone(), x], &pred2(), &v(&[0.0, 1.0]), &schedule(), false).unwrap();
    assert_eq!(out.eta1[0], out.eta1[1]);
    assert_eq!(out.eta1[1], out.eta1[2]);
}

#[test]
fn edh_and_ledh_agree_on_linear_model() {
    let model = linear(4);
    let pred = Gaussian::isotropic(v(&[1.0, 2.0, 0.1, -0.1]), 0.7).unwrap();
    let eta0 = pred.sample(30, &mut stream(6, &[]));
    let z = v(&[1.5, 1.4]);
    let a = edh_flow(&model, &eta0, &pred, &z, &schedule(), false).unwrap();
    let b = ledh_flow(&model, &eta0, &pred, &z, &schedule(), false).unwrap();
    for i in 0..eta0.len() {
        assert!((&a.eta1[i] - &b.eta1[i]).amax() < 1e-10);
        assert!((a.log_jac_det[i] - b.log_jac_det[i]).abs() < 1e-10);
    }
}

#[test]
fn flowed_cloud_reaches_kalman_posterior() {
    let model = linear(2);
    let pred = pred2();
    let z = v(&[1.3, -0.9]);
    let eta0 = pred.sample(10_000, &mut stream(7, &[]));
    let out = ledh_flow(&model, &eta0, &pred, &z, &schedule(), false).unwrap();
    let fit = empirical_moments(&out.eta1).unwrap();
    let lin = model.linear_structure().unwrap();
    let (post, _) = kalman_update(&pred, &lin.observation, &lin.observation_cov, &z).unwrap();
    for i in 0..2 {
        let sd = post.cov()[(i, i)].sqrt();
        assert!((fit.mean()[i] - post.mean()[i]).abs() < 0.05 * sd);
        for j in 0..2 {
            let scale = (post.cov()[(i, i)] * post.cov()[(j, j)]).sqrt();
            assert!((fit.cov()[(i, j)] - post.cov()[(i, j)]).abs() < 0.05 * scale, "cov ({i},{j})");
        }
    }
}

#[test]
fn halving_steps_barely_moves_destinations() {
    let model = linear(4);
    let pred = Gaussian::isotropic(v(&[1.0, 2.0, 0.1, -0.1]), 0.7).unwrap();
    let eta0 = pred.sample(50, &mut stream(8, &[]));
    let z = v(&[1.5, 1.4]);
    let coarse = schedule();
    let fine = coarse.refined();
    assert_eq!(fine.len(), 58);
    let a = ledh_flow(&model, &eta0, &pred, &z, &coarse, false).unwrap();
    let b = ledh_flow(&model, &eta0, &pred, &z, &fine, false).unwrap();
    for i in 0..eta0.len() {
        assert!((&a.eta1[i] - &b.eta1[i]).norm() < 0.01 * a.eta1[i].norm());
    }
}

#[test]
fn malformed_particles_are_rejected() {
    let model = Bent::new();
    let r = ledh_flow(&model, &[v(&[f64::NAN, 0.0])], &pred2(), &v(&[0.0, 0.0]), &schedule(), false);
    assert!(r.is_err());
}

#[test]
fn overflowing_particle_is_dropped_not_fatal() {
    let model = Exponential::new();
    let pred = Gaussian::isotropic(v(&[0.0]), 1.0).unwrap();
    let z = v(&[1.5]);
    let eta0 = [v(&[0.1]), v(&[800.0]), v(&[-0.3])];
    let out = ledh_flow(&model, &eta0, &pred, &z, &schedule(), false).unwrap();
    assert_eq!(out.diverged, vec![1]);
    assert_eq!(out.log_jac_det[1], f64::NEG_INFINITY);
    assert_eq!(out.eta1[1], eta0[1]);

    // Survivors flow exactly as they would without the outlier.
    let alone = ledh_flow(&model, &[eta0[0].clone(), eta0[2].clone()], &pred, &z, &schedule(), false).unwrap();
    assert!(alone.diverged.is_empty());
    assert_eq!(out.eta1[0], alone.eta1[0]);
    assert_eq!(out.eta1[2], alone.eta1[1]);
    assert_eq!(out.log_jac_det[2], alone.log_jac_det[1]);
}

#[test]
fn flow_fails_when_every_particle_diverges() {
    let model = Exponential::new();
    let pred = Gaussian::isotropic(v(&[0.0]), 1.0).unwrap();
    let r = ledh_flow(&model, &[v(&[800.0]), v(&[900.0])], &pred, &v(&[1.5]), &schedule(), false);
    assert!(matches!(r, Err(pfgspf_core::Error::NumericalFailure(_))), "{r:?}");
}
