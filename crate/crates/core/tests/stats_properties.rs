use std::sync::Arc;

use medl_uq::armed::{ArmedLayout, ArmedParams, ArmedSpec, Effect, Segment};
use medl_uq::matrix::Matrix;
use medl_uq::rng;
use medl_uq::stats::{
    draw_coefficients, logit, pool_unseen_confidence, pooled_test, prediction_confidence, rank_by_magnitude,
    satterthwaite_pool, student_t_sf, welch_test, Averaging, FoldStat, Tail, Votes,
};
use medl_uq::uq::PosteriorSampler;
use proptest::prelude::*;

fn fold() -> impl Strategy<Value = FoldStat> {
    (-5.0f64..5.0, 0.01f64..10.0, 2usize..200).prop_map(|(m, v, n)| FoldStat::new(m, v, n).unwrap())
}

fn model(d: usize, seed: u64) -> ArmedParams<f64> {
    let layout = Arc::new(ArmedLayout::new(ArmedSpec::new(d, 3)).unwrap());
    ArmedParams::init(layout, &mut rng::stream(seed, "init", 0))
}

fn inputs(n: usize, d: usize, seed: u64) -> Matrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng::stream(seed, "x", 0);
    Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
}

fn coefficients(p: ArmedParams<f64>, x: &Matrix<f64>, averaging: Averaging) -> Vec<f64> {
    let s = PosteriorSampler::point(p);
    draw_coefficients(&s.draw(0).unwrap(), x, None, Effect::Fixed, averaging).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn single_fold_reduces_to_a_one_sample_t_test(f in fold()) {
        let s = satterthwaite_pool(&[f]).unwrap();
        prop_assert!((s.df - (f.n - 1) as f64).abs() <= 1e-9 * s.df);
        prop_assert!((s.se - (f.variance / f.n as f64).sqrt()).abs() <= 1e-12 * s.se);
        let t = pooled_test(&[f], Tail::TwoSided).unwrap();
        prop_assert!((t.t - f.mean / s.se).abs() <= 1e-9 * t.t.abs().max(1.0));
    }

    #[test]
    fn identical_folds_pool_to_their_common_mean(f in fold(), k in 1usize..12) {
        let folds = vec![f; k];
        let t = pooled_test(&folds, Tail::Greater).unwrap();
        prop_assert!((t.mean - f.mean).abs() < 1e-12);
        let se1 = (f.variance / f.n as f64).sqrt();
        prop_assert!((t.se - se1 / (k as f64).sqrt()).abs() <= 1e-12 * se1);
        prop_assert!((t.df - (k * (f.n - 1)) as f64).abs() <= 1e-9 * t.df);
    }

    #[test]
    fn pooling_ignores_fold_order(folds in prop::collection::vec(fold(), 1..8)) {
        let mut rev = folds.clone();
        rev.reverse();
        let (a, b) = (pooled_test(&folds, Tail::TwoSided).unwrap(), pooled_test(&rev, Tail::TwoSided).unwrap());
        prop_assert!((a.p - b.p).abs() < 1e-12 && (a.df - b.df).abs() <= 1e-9 * a.df);
    }

    #[test]
    fn confidence_lies_between_half_and_one(c0 in 0usize..100, c1 in 0usize..100) {
        prop_assume!(c0 + c1 > 0);
        let c = prediction_confidence(Votes::new(c0, c1)).unwrap();
        prop_assert!((0.5..=1.0).contains(&c.confidence));
        prop_assert_eq!(c.class, u8::from(c1 > c0));
        prop_assert_eq!(c.confidence == 1.0, c0 == 0 || c1 == 0);
    }

    #[test]
    fn pooled_confidence_depends_only_on_vote_proportions(
        votes in prop::collection::vec(0usize..=20, 1..10),
        scale in 1usize..5,
    ) {
        let a: Vec<Votes> = votes.iter().map(|&v| Votes::new(20 - v, v)).collect();
        let b: Vec<Votes> = votes.iter().map(|&v| Votes::new(scale * (20 - v), scale * v)).collect();
        let (ca, cb) = (pool_unseen_confidence(&a).unwrap(), pool_unseen_confidence(&b).unwrap());
        prop_assert_eq!(ca.class, cb.class);
        prop_assert!((ca.confidence - cb.confidence).abs() < 1e-12);
    }

    #[test]
    fn welch_is_antisymmetric(
        a in prop::collection::vec(-3.0f64..3.0, 2..30),
        b in prop::collection::vec(-3.0f64..3.0, 2..30),
    ) {
        let (d1, p1) = welch_test(&a, &b).unwrap().unwrap();
        let (d2, p2) = welch_test(&b, &a).unwrap().unwrap();
        prop_assert_eq!(d1, -d2);
        prop_assert!((p1 - p2).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn logit_is_antisymmetric(p in 1e-6f64..(1.0 - 1e-6)) {
        let (a, ca) = logit(p);
        let (b, cb) = logit(1.0 - p);
        prop_assert!((a + b).abs() < 1e-8);
        prop_assert!(!ca && !cb);
    }

    #[test]
    fn t_tail_is_symmetric(t in -20.0f64..20.0, df in 0.5f64..500.0) {
        prop_assert!((student_t_sf(t, df) + student_t_sf(-t, df) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_the_head_keeps_coefficient_ranks(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let x = inputs(30, 6, seed);
        let p = model(6, seed);
        let mut q = p.clone();
        let fe = q.layout().layout(Segment::Fe).clone();
        let head = fe.layer_range(fe.depth() - 1);
        q.segment_mut(Segment::Fe)[head].iter_mut().for_each(|v| *v *= scale);
        for avg in Averaging::ALL {
            let a = coefficients(p.clone(), &x, avg);
            let b = coefficients(q.clone(), &x, avg);
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((v - scale * u).abs() <= 1e-9 * (scale * u).abs().max(1e-12));
            }
            prop_assert_eq!(rank_by_magnitude(&a), rank_by_magnitude(&b));
        }
    }

    #[test]
    fn permuting_features_permutes_coefficients(seed in any::<u64>(), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let d = 5;
        let x = inputs(25, d, seed);
        let p = model(d, seed);
        // column j of the new inputs is column perm[j] of the old ones
        let xp = Matrix::from_vec(25, d, (0..25).flat_map(|i| perm.iter().map(move |&j| (i, j))).map(|(i, j)| x.get(i, j)).collect()).unwrap();
        let mut q = p.clone();
        let fe = q.layout().layout(Segment::Fe).clone();
        let first = fe.weight_range(0);
        let hidden = fe.layers()[0].out_dim;
        let old = p.segment(Segment::Fe)[first.clone()].to_vec();
        let w = &mut q.segment_mut(Segment::Fe)[first];
        for o in 0..hidden {
            for j in 0..d {
                w[o * d + j] = old[o * d + perm[j]];
            }
        }
        for avg in Averaging::ALL {
            let a = coefficients(p.clone(), &x, avg);
            let b = coefficients(q.clone(), &xp, avg);
            for j in 0..d {
                prop_assert!((b[j] - a[perm[j]]).abs() <= 1e-12);
            }
        }
    }
}
