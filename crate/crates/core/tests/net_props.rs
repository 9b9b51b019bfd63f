mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use scorefusion::fusion::{assemble_quadratic, FusionTrainConfig};
use scorefusion::net::*;
use scorefusion::ou::analytic_score;
use scorefusion::rng;
use scorefusion::sampler::{fused_score, reverse_sample, ReverseConfig};
use scorefusion::{FieldHandle, GaussianMixture, OuSchedule, ScoreField, SimplexWeights};

fn random_batch(r: &mut impl Rng, dim: usize, n: usize) -> Vec<ScoreExample> {
    (0..n)
        .map(|_| ScoreExample {
            t: r.random_range(0.0..5.0),
            x: (0..dim).map(|_| r.random_range(-3.0..3.0)).collect(),
            target: (0..dim).map(|_| r.random_range(-2.0..2.0)).collect(),
        })
        .collect()
}

fn check_backprop(arch: NetArch, seed: u64) {
    let mut r = rng(seed);
    let net = MlpScoreNet::init(arch.clone(), seed).unwrap();
    let batch = random_batch(&mut r, arch.dim, 5);
    let grad = net_gradients(&net, &batch).unwrap();
    assert_eq!(grad.len(), arch.param_count());
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let mut p = net.params().to_vec();
        p[i] += h;
        let up = batch_loss(&MlpScoreNet::from_params(arch.clone(), p.clone()).unwrap(), &batch).unwrap();
        p[i] -= 2.0 * h;
        let down = batch_loss(&MlpScoreNet::from_params(arch.clone(), p).unwrap(), &batch).unwrap();
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(grad[i], fd, 1e-6));
    }
    assert!(worst < 1e-4, "{arch:?}: worst relative error {worst}");
}

#[test]
fn backprop_matches_finite_differences_on_the_default_architecture() {
    check_backprop(NetArch::default_for(1), 1);
}

#[test]
fn backprop_matches_finite_differences_on_other_shapes() {
    check_backprop(NetArch::new(2, 8, vec![7, 5, 3]).unwrap(), 2);
    check_backprop(NetArch::new(3, 4, vec![6]).unwrap(), 3);
}

#[test]
fn embeddings_separate_a_fine_time_grid() {
    let emb: Vec<Vec<f64>> = (0..1000).map(|i| time_embedding(5.0 * i as f64 / 999.0, 16).unwrap()).collect();
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            assert!(linf(&emb[i], &emb[j]) > 1e-8, "t-grid points {i} and {j} collide");
        }
    }
    assert!(emb.iter().all(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt() <= 16f64.sqrt() + 1e-12));
    assert!(time_embedding(0.1, 15).is_err());
}

#[test]
fn forward_is_identical_across_threads() {
    let net = MlpScoreNet::init(NetArch::default_for(2), 4).unwrap();
    let pts: Vec<(f64, [f64; 2])> = {
        let mut r = rng(5);
        (0..200).map(|_| (r.random_range(0.0..5.0), [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)])).collect()
    };
    let eval = || -> Vec<Vec<f64>> {
        use rayon::prelude::*;
        pts.par_iter().map(|(t, x)| net.evaluate(*t, x).unwrap()).collect()
    };
    let a = with_threads(1, eval);
    let b = with_threads(4, eval);
    assert_eq!(a, b);
    for ((t, x), v) in pts.iter().zip(&a) {
        assert_eq!(&net_forward(&net, *t, x).unwrap(), v);
    }
}

#[test]
fn training_is_identical_across_threads() {
    let s = OuSchedule::default();
    let data = canonical_refs().0.sample(128, &mut rng::stream(6)).unwrap();
    let cfg = DsmConfig { epochs: 5, ..DsmConfig::for_schedule(&s) };
    let run = || dsm_train(MlpScoreNet::init(NetArch::default_for(1), 7).unwrap(), &data, &s, &cfg).unwrap();
    let a = with_threads(1, run);
    let b = with_threads(3, run);
    assert_eq!(a.net.params(), b.net.params());
    assert_eq!(a.train_curve, b.train_curve);
    assert_eq!(a.val_curve, b.val_curve);
}

#[test]
fn learns_the_standard_normal_score() {
    let s = OuSchedule::default();
    let data = GaussianMixture::gaussian(vec![0.0], vec![1.0]).unwrap().sample(10_000, &mut rng::stream(1)).unwrap();
    let fit = dsm_train(MlpScoreNet::init(NetArch::default_for(1), 0).unwrap(), &data, &s, &DsmConfig::for_schedule(&s)).unwrap();
    let msd = (0..=40)
        .map(|i| {
            let x = -2.0 + 0.1 * i as f64;
            (net_forward(&fit.net, 0.0, &[x]).unwrap()[0] + x).powi(2)
        })
        .sum::<f64>()
        / 41.0;
    assert!(msd < 0.05, "mean squared deviation {msd}");
    assert_trending_down(&fit.train_curve);
}

/// The training loss is an average over freshly noised batches, so it is
/// tracked on a fixed noisy copy of the training split. Its 20-epoch moving
/// average must end below where it starts and never climb more than 5% above
/// its running minimum.
fn assert_trending_down(curve: &[f64]) {
    let ma: Vec<f64> = curve.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    let mut low = f64::INFINITY;
    for (i, v) in ma.iter().enumerate() {
        low = low.min(*v);
        assert!(*v <= 1.05 * low, "moving average climbs to {v} at epoch {i} (minimum so far {low})");
    }
    assert!(ma.last() < ma.first(), "{:?} -> {:?}", ma.first(), ma.last());
}

#[test]
fn harness_sized_training_trends_down() {
    let s = OuSchedule::default();
    let (p1, p2) = canonical_refs();
    let g = scorefusion::vanilla::covering_grid(&[p1.clone(), p2.clone()], 4096).unwrap();
    let bg = scorefusion::barycenter::barycenter_density_grid(&[&p1, &p2], &SimplexWeights::new(vec![0.6, 0.4]).unwrap(), &g).unwrap();
    for (n, seed) in [(64, 1), (256, 2)] {
        let data = bg.sample(n, &mut rng::stream(seed)).unwrap();
        let cfg = DsmConfig { val_fraction: 0.2, seed, ..DsmConfig::for_schedule(&s) };
        let fit = dsm_train(MlpScoreNet::init(NetArch::default_for(1), seed).unwrap(), &data, &s, &cfg).unwrap();
        assert_eq!(fit.train_curve.len(), cfg.epochs);
        assert_trending_down(&fit.train_curve);
        assert!(fit.best_epoch < cfg.epochs);
    }
}

#[test]
fn trained_net_is_a_drop_in_score_field() {
    let s = OuSchedule::new(1.0, 2f64.sqrt(), 5.0, 100).unwrap();
    let net: FieldHandle = Arc::new(MlpScoreNet::init(NetArch::default_for(1), 8).unwrap());
    let exact: FieldHandle = Arc::new(analytic_score(&canonical_refs().0, &s));
    let fused = fused_score(vec![net.clone(), exact.clone()], SimplexWeights::new(vec![0.3, 0.7]).unwrap()).unwrap();
    let out = reverse_sample(&fused, &ReverseConfig::new(s, 500, 9)).unwrap();
    assert!(out.data().iter().all(|v| v.is_finite()));
    let alone = reverse_sample(net.as_ref(), &ReverseConfig::new(s, 500, 9)).unwrap();
    assert_eq!(alone.len(), 500);
    let data = canonical_refs().0.sample(50, &mut rng::stream(10)).unwrap();
    let cfg = FusionTrainConfig { n_mc: 2_000, ..FusionTrainConfig::for_schedule(&s) };
    let q = assemble_quadratic(&[net, exact], &data, &s, &cfg).unwrap();
    assert!(q.eigenvalues().iter().all(|e| *e >= -1e-10 * q.a.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn output_respects_the_lipschitz_bound(seed in any::<u64>(), t in 0.0f64..5.0, x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let net = MlpScoreNet::init(NetArch::default_for(2), seed).unwrap();
        let l = net.lipschitz_bound();
        let mut r = rng(seed);
        let d = [r.random_range(-1e-4..1e-4), r.random_range(-1e-4..1e-4)];
        let a = net_forward(&net, t, &[x, y]).unwrap();
        let b = net_forward(&net, t, &[x + d[0], y + d[1]]).unwrap();
        let change = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        prop_assert!(change <= l * (d[0] * d[0] + d[1] * d[1]).sqrt() * (1.0 + 1e-9) + 1e-15);
        prop_assert_eq!(a.len(), 2);
    }
}
