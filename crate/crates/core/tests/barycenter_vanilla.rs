mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use scorefusion::barycenter::{barycenter_density_grid, barycenter_log_partition};
use scorefusion::metrics::wasserstein1_1d;
use scorefusion::ou::analytic_score;
use scorefusion::rng;
use scorefusion::sampler::{fused_score, reverse_sample, ReverseConfig};
use scorefusion::vanilla::{covering_grid, run_vanilla_fusion, vf_gradient, vf_objective, VanillaProblem};
use scorefusion::{FieldHandle, GaussianMixture, LogDensity, OuSchedule, SimplexWeights};

fn w2(l: f64) -> SimplexWeights {
    SimplexWeights::from_raw(vec![l, 1.0 - l]).unwrap()
}

#[test]
fn bimodal_barycenter_is_a_density() {
    let (p1, p2) = canonical_refs();
    let g = covering_grid(&[p1.clone(), p2.clone()], 4096).unwrap();
    let bg = barycenter_density_grid(&[&p1, &p2], &w2(0.3), &g).unwrap();
    let v = bg.values();
    assert!(v.iter().all(|d| *d >= 0.0));
    assert!((g.integrate(&v) - 1.0).abs() < 1e-6);
    assert!(bg.log_z().is_finite() && bg.log_z().exp() > 0.0);
}

#[test]
fn single_reference_is_reproduced() {
    let (p1, _) = canonical_refs();
    let g = covering_grid(&[p1.clone()], 4096).unwrap();
    let bg = barycenter_density_grid(&[&p1], &SimplexWeights::uniform(1).unwrap(), &g).unwrap();
    assert!(bg.log_z().abs() < 1e-8);
    for (x, v) in g.points().iter().zip(bg.values()) {
        assert!((v - p1.log_density(x).unwrap().exp()).abs() < 1e-10);
    }
}

#[test]
fn log_partition_oracles() {
    let a = GaussianMixture::gaussian(vec![0.0], vec![1.0]).unwrap();
    let (p1, p2) = canonical_refs();
    let g = covering_grid(&[p1.clone(), p2.clone()], 4096).unwrap();
    for i in 0..2 {
        assert!(barycenter_log_partition(&[&p1, &p2], &SimplexWeights::vertex(2, i).unwrap(), &g).unwrap().abs() < 1e-8);
    }
    for m in [0.5, 2.0, 3.0] {
        let b = GaussianMixture::gaussian(vec![m], vec![1.0]).unwrap();
        let g = covering_grid(&[a.clone(), b.clone()], 4096).unwrap();
        let lz = barycenter_log_partition(&[&a, &b], &w2(0.5), &g).unwrap();
        assert!((lz + m * m / 8.0).abs() < 1e-6, "m = {m}: {lz}");
    }
}

#[test]
fn identical_references_give_the_reference_for_every_weight() {
    let (p1, _) = canonical_refs();
    let g = covering_grid(&[p1.clone()], 2048).unwrap();
    let truth: Vec<f64> = g.points().iter().map(|x| p1.log_density(x).unwrap().exp()).collect();
    for l in [0.0, 0.2, 0.5, 0.9] {
        let v = barycenter_density_grid(&[&p1, &p1], &w2(l), &g).unwrap().values();
        assert!(linf(&v, &truth) < 1e-10);
    }
}

#[test]
fn grid_sampling_agrees_with_the_fused_reverse_process_for_gaussians() {
    // Equal variances make every diffused marginal of the barycenter the
    // barycenter of the diffused marginals, so the fused SDE ends exactly there.
    let s = OuSchedule::default();
    let a = GaussianMixture::gaussian(vec![0.0], vec![1.0]).unwrap();
    let b = GaussianMixture::gaussian(vec![3.0], vec![1.0]).unwrap();
    let w = w2(0.3);
    let g = covering_grid(&[a.clone(), b.clone()], 4096).unwrap();
    let direct = barycenter_density_grid(&[&a, &b], &w, &g).unwrap().sample(100_000, &mut rng::stream(1)).unwrap();
    let fields: Vec<FieldHandle> = vec![Arc::new(analytic_score(&a, &s)), Arc::new(analytic_score(&b, &s))];
    let fused = reverse_sample(&fused_score(fields, w).unwrap(), &ReverseConfig::new(s, 20_000, 2)).unwrap();
    let d = wasserstein1_1d(&fused, &direct).unwrap();
    assert!(d < 0.05, "W1 = {d}");
    assert!((direct.moments().0[0] - 2.1).abs() < 0.02);
}

#[test]
fn gradient_vanishes_when_the_target_is_the_barycenter() {
    let (p1, p2) = canonical_refs();
    let g = covering_grid(&[p1.clone(), p2.clone()], 4096).unwrap();
    let w = w2(0.35);
    let target = barycenter_density_grid(&[&p1, &p2], &w, &g).unwrap().sample(100_000, &mut rng::stream(7)).unwrap();
    let grad = vf_gradient(&w, &target, &[&p1, &p2], &g).unwrap();
    assert!(grad.iter().all(|d| d.abs() < 0.05), "{grad:?}");
}

#[test]
fn vanilla_recovers_planted_weights() {
    let (p1, p2) = canonical_refs();
    let refs = [p1.clone(), p2.clone()];
    let g = covering_grid(&refs, 4096).unwrap();
    let truth = 0.3;
    let target = barycenter_density_grid(&[&p1, &p2], &w2(truth), &g).unwrap().sample(10_000, &mut rng::stream(3)).unwrap();
    let fit = run_vanilla_fusion(&target, &refs, &g, 500).unwrap();
    let problem = VanillaProblem::new(&target, &[&p1, &p2], &g).unwrap();
    let oracle = argmin_by(&delta2_grid(0.005), |l| problem.objective(&w2(l[0])));
    let fw = fit.weights.as_slice()[0];
    assert!((oracle[0] - truth).abs() <= 0.05, "grid search {}", oracle[0]);
    assert!((fw - truth).abs() <= 0.05, "frank-wolfe {fw}");
    assert!((fw - oracle[0]).abs() <= 0.02, "frank-wolfe {fw} vs grid {}", oracle[0]);
    for it in &fit.trace.iterates {
        let sum: f64 = it.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-10 && it.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn vanilla_concentrates_on_the_generating_reference() {
    let p1 = GaussianMixture::univariate(&[(0.5, -4.0, 1.0), (0.5, 4.0, 1.0)]).unwrap();
    let p2 = GaussianMixture::univariate(&[(0.5, -12.0, 0.5), (0.5, 12.0, 0.5)]).unwrap();
    let refs = [p1.clone(), p2.clone()];
    let g = covering_grid(&refs, 4096).unwrap();
    let target = p1.sample(5_000, &mut rng::stream(4)).unwrap();
    let fit = run_vanilla_fusion(&target, &refs, &g, 500).unwrap();
    let problem = VanillaProblem::new(&target, &[&p1, &p2], &g).unwrap();
    let oracle = argmin_by(&delta2_grid(0.005), |l| problem.objective(&w2(l[0])));
    assert!(fit.weights.as_slice()[0] > 0.9, "{:?}", fit.weights);
    assert!(oracle[0] > 0.9);
}

#[test]
fn identical_references_leave_the_objective_flat() {
    let (p1, _) = canonical_refs();
    let g = covering_grid(&[p1.clone()], 4096).unwrap();
    let target = p1.sample(1_000, &mut rng::stream(5)).unwrap();
    let vals: Vec<f64> = delta2_grid(0.005).iter().map(|l| vf_objective(&w2(l[0]), &target, &[&p1, &p1], &g).unwrap()).collect();
    let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(hi - lo < 1e-10);
    let fit = run_vanilla_fusion(&target, &[p1.clone(), p1], &g, 50).unwrap();
    assert_eq!(fit.weights.k(), 2);
}

#[test]
fn density_and_trace_export_to_csv() {
    let (p1, p2) = canonical_refs();
    let g = covering_grid(&[p1.clone(), p2.clone()], 64).unwrap();
    let mut buf = Vec::new();
    barycenter_density_grid(&[&p1, &p2], &w2(0.5), &g).unwrap().write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 65);
    let target = p1.sample(200, &mut rng::stream(6)).unwrap();
    let fit = run_vanilla_fusion(&target, &[p1, p2], &g, 10).unwrap();
    let mut buf = Vec::new();
    fit.trace.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().lines().count() >= 11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn log_partition_is_midpoint_convex(seed in any::<u64>()) {
        let mut r = rng(seed);
        let refs: Vec<GaussianMixture> = (0..3).map(|_| random_mixture(&mut r, 1, 2)).collect();
        let dyn_refs: Vec<&dyn LogDensity> = refs.iter().map(|m| m as &dyn LogDensity).collect();
        let g = covering_grid(&refs, 2048).unwrap();
        let (u, v) = (random_simplex(&mut r, 3), random_simplex(&mut r, 3));
        let mid = SimplexWeights::from_raw(u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| 0.5 * (a + b)).collect()).unwrap();
        let f = |w: &SimplexWeights| barycenter_log_partition(&dyn_refs, w, &g).unwrap();
        prop_assert!(f(&mid) <= 0.5 * (f(&u) + f(&v)) + 1e-8);
    }

    #[test]
    fn barycenter_grid_integrates_to_one(seed in any::<u64>()) {
        let mut r = rng(seed);
        let refs: Vec<GaussianMixture> = (0..2).map(|_| random_mixture(&mut r, 1, 3)).collect();
        let g = covering_grid(&refs, 4096).unwrap();
        let bg = barycenter_density_grid(&[&refs[0], &refs[1]], &random_simplex(&mut r, 2), &g).unwrap();
        prop_assert!((g.integrate(&bg.values()) - 1.0).abs() < 1e-6);
    }
}
