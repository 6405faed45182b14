mod common;

use common::{init_for, mean, paired_t, rows_with, samples};
use medl_uq::armed::{run_training, TrainConfig};
use medl_uq::rng;
use medl_uq::simdata::{generate, plan_folds, GeneratorConfig};
use medl_uq::stats::{student_t_sf, Split};
use medl_uq::uq::{
    fit_mc_dropout, posterior_predict, stratified_subsample, subsample_size, BnnModel, FitContext,
    LayerSelection, Membership,
};
use proptest::prelude::*;

/// Negative ELBO per training sample at every epoch.
fn bnn_objective(seed: u64) -> Vec<f64> {
    let data = generate(&GeneratorConfig { seed, ..GeneratorConfig::default() }).unwrap();
    let rows = rows_with(&data, Split::Train);
    let init = init_for(&data, seed);
    let cfg = TrainConfig {
        epochs: 60,
        lr: 1e-3,
        seed,
        ..TrainConfig::default()
    };
    let mut model = BnnModel::new(&init, LayerSelection::All, cfg.lr, 1.0 / rows.len() as f64, seed);
    let h = run_training(&mut model, samples(&data, &rows), &cfg, |_, _| Ok(())).unwrap();
    h.epochs.iter().map(|e| e.fe_bce + e.me_bce + e.extra).collect()
}

#[test]
fn bnn_objective_running_average_decreases() {
    let seeds = 20;
    let mut decreasing = 0;
    for s in 0..seeds {
        let v = bnn_objective(200 + s);
        let window = 10;
        let avg: Vec<f64> = v.windows(window).map(mean).collect();
        if avg.last().unwrap() < avg.first().unwrap() {
            decreasing += 1;
        }
    }
    assert!(decreasing as f64 >= 0.95 * seeds as f64, "{decreasing}/{seeds}");
}

/// Test-set mean of the across-draw variance of y_M.
fn dropout_predictive_variance(rate: f64, seed: u64) -> f64 {
    let data = generate(&GeneratorConfig { seed, ..GeneratorConfig::default() }).unwrap();
    let plan = plan_folds(&data, 10, seed).unwrap();
    let fold = &plan.folds[0];
    let init = init_for(&data, seed);
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let ctx = FitContext::new(samples(&data, &fold.train), &init, &cfg, seed);
    let sampler = fit_mc_dropout(&ctx, rate).unwrap();
    let cl: Vec<usize> = fold.test.iter().map(|&i| data.cluster[i]).collect();
    let pd = posterior_predict(&sampler, &data.x.select_rows(&fold.test), Membership::Known(&cl)).unwrap();
    let per_row: Vec<f64> = (0..fold.test.len())
        .map(|j| common::sample_var(&pd.y_m.column(j)))
        .collect();
    mean(&per_row)
}

#[test]
fn dropout_variance_grows_with_rate() {
    let rates = [0.1, 0.3, 0.5];
    let v: Vec<Vec<f64>> = rates
        .iter()
        .map(|&r| (0..10).map(|s| dropout_predictive_variance(r, 300 + s)).collect())
        .collect();
    let means: Vec<f64> = v.iter().map(|x| mean(x)).collect();
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "means {means:?}");
    let p = student_t_sf(paired_t(&v[0], &v[2]), 9.0);
    assert!(p < 0.05, "p={p}, means {means:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn subsamples_cover_every_cluster(
        sizes in prop::collection::vec(2usize..15, 1..12),
        fraction in prop::sample::select(vec![0.7, 0.8, 0.9]),
        seed in any::<u64>(),
    ) {
        let cluster: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let rows: Vec<usize> = (0..cluster.len()).collect();
        let res = stratified_subsample(&rows, &cluster, fraction, &mut rng::stream(seed, "subsample", 0));
        if fraction * (rows.len() as f64) < (2 * sizes.len()) as f64 {
            prop_assert!(res.is_err());
        } else {
            let sub = res.unwrap();
            prop_assert_eq!(sub.len(), subsample_size(rows.len(), fraction));
            prop_assert!(sub.windows(2).all(|w| w[0] < w[1]));
            for c in 0..sizes.len() {
                prop_assert!(sub.iter().any(|&r| cluster[r] == c));
            }
        }
    }
}
