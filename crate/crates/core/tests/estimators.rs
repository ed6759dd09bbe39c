mod common;

use common::*;
use nlfr_core::estimators::{default_c_grid, estimate_moments, fit_nlfr_fixed, training_objective};
use nlfr_core::evaluate::fit_lfr_as_nlfr;
use nlfr_core::kernel::OptimizerOptions;
use nlfr_core::metric::{combine, distance, MetricObject, SpaceKind};
use nlfr_core::simgen::{gen_covariates, generate_replication, true_regression, LinkMoments};
use nlfr_core::weights::{LinkSpec, ScalarLink};
use nlfr_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_x(p: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..p).map(|_| normal(rng) * 1.5).collect()
}

fn raw_coords(space: &SpaceSpec, raw: &RawObject) -> Vec<f64> {
    space.raw_coords(raw).unwrap()
}

fn index_links() -> LinkSpec {
    LinkSpec::index(vec![ScalarLink::SquareShifted, ScalarLink::Exp])
}

fn all_flavors(data: &Dataset) -> Vec<FittedModel> {
    let links = index_links();
    vec![
        fit_lfr(data).unwrap(),
        fit_nlfr_fixed(data, &links, &[0.4, -0.3]).unwrap(),
        fit_snlfr(data, &links, HTransform::default_for(data.space.kind), &[-0.5, 0.1, 0.7], false).unwrap(),
    ]
}

#[test]
fn moment_form_matches_weighted_sum_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in KINDS {
        let data = random_dataset(space(kind), 60, 2, &mut rng);
        for model in all_flavors(&data) {
            for _ in 0..50 {
                let x = random_x(2, &mut rng);
                let a = raw_coords(&data.space, &model.predict_raw(&x).unwrap());
                let b = raw_coords(&data.space, &model.predict_raw_weighted_sum(&data, &x).unwrap());
                let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(max_abs_diff(&a, &b) <= 1e-10 * scale, "{kind:?} {:?}", model.flavor);
            }
        }
    }
}

#[test]
fn in_sample_weights_average_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for kind in KINDS {
        let data = random_dataset(space(kind), 40, 2, &mut rng);
        for model in all_flavors(&data) {
            for _ in 0..20 {
                let w = model.weights(&data.x, &random_x(2, &mut rng)).unwrap();
                let mean = w.iter().sum::<f64>() / w.len() as f64;
                assert!((mean - 1.0).abs() <= 1e-12, "{mean}");
            }
        }
    }
}

#[test]
fn prediction_is_linear_in_responses_before_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for kind in [SpaceKind::Wasserstein, SpaceKind::SpdFrobenius] {
        let s = space(kind);
        let base = random_dataset(s, 50, 2, &mut rng);
        let other: Vec<MetricObject> = (0..50).map(|_| random_object(&s, &mut rng)).collect();
        let (a, b) = (0.7, 1.8);
        let mixed: Vec<MetricObject> = base
            .y
            .iter()
            .zip(&other)
            .map(|(y, z)| nlfr_core::metric::project(&s, &combine(&s, &[a, b], &[y.clone(), z.clone()]).unwrap()).unwrap())
            .collect();
        let d_z = Dataset::new(base.x.clone(), other, s).unwrap();
        let d_w = Dataset::new(base.x.clone(), mixed, s).unwrap();
        let links = index_links();
        let fits = |d: &Dataset| vec![fit_lfr(d).unwrap(), fit_nlfr_fixed(d, &links, &[0.3, 0.2]).unwrap()];
        for ((my, mz), mw) in fits(&base).iter().zip(fits(&d_z)).zip(fits(&d_w)) {
            for _ in 0..20 {
                let x = random_x(2, &mut rng);
                let py = raw_coords(&s, &my.predict_raw(&x).unwrap());
                let pz = raw_coords(&s, &mz.predict_raw(&x).unwrap());
                let pw = raw_coords(&s, &mw.predict_raw(&x).unwrap());
                let lin: Vec<f64> = py.iter().zip(&pz).map(|(u, v)| a * u + b * v).collect();
                assert!(max_abs_diff(&pw, &lin) <= 1e-10 * (1.0 + lin.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
            }
        }
    }
}

#[test]
fn lfr_reducing_links_reproduce_lfr_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for kind in KINDS {
        let s = space(kind);
        for _ in 0..5 {
            let data = random_dataset(s, 40, 3, &mut rng);
            let lfr = fit_lfr(&data).unwrap();
            let red = fit_lfr_as_nlfr(&data, HTransform::default_for(kind)).unwrap();
            for _ in 0..50 {
                let x = random_x(3, &mut rng);
                let d = distance(&s, &predict(&lfr, &x).unwrap(), &predict(&red, &x).unwrap()).unwrap();
                assert!(d <= 1e-10, "{kind:?}: {d}");
            }
        }
    }
}

#[test]
fn unit_weights_give_the_sample_mean_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for kind in KINDS {
        let data = random_dataset(space(kind), 30, 2, &mut rng);
        let zero = LinkSpec::index(vec![ScalarLink::Zero, ScalarLink::Zero]);
        let model = fit_nlfr_fixed(&data, &zero, &[1.0, 2.0]).unwrap();
        let mean = nlfr_core::estimators::frechet_mean(&data).unwrap();
        for _ in 0..10 {
            let d = distance(&data.space, &predict(&model, &random_x(2, &mut rng)).unwrap(), &mean).unwrap();
            assert!(d <= 1e-10);
        }
    }
}

#[test]
fn center_rule_at_sample_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for kind in KINDS {
        let data = random_dataset(space(kind), 25, 3, &mut rng);
        let (mu, _, _) = estimate_moments(&data.x).unwrap();
        let at_mu = predict(&fit_lfr(&data).unwrap(), &mu).unwrap();
        let mean = nlfr_core::estimators::frechet_mean(&data).unwrap();
        assert!(distance(&data.space, &at_mu, &mean).unwrap() <= 1e-10);
    }
}

fn noiseless_model12(n: usize, seed: u64, center: bool) -> (SimulationSpec, Dataset, Vec<f64>) {
    let spec = SimulationSpec::defaults(ModelId::M12, 2, n, seed).unwrap();
    let truth = true_regression(&spec, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gen_covariates(&spec, n, &mut rng);
    let (mu, _, _) = estimate_moments(&x).unwrap();
    let rows: Vec<Vec<f64>> =
        x.rows().map(|r| r.iter().zip(&mu).map(|(v, m)| if center { v - m } else { *v }).collect()).collect();
    let x = Covariates::from_rows(&rows).unwrap();
    let y = x.rows().map(|r| truth.eval(r).unwrap()).collect();
    (spec.clone(), Dataset::new(x, y, spec.response_space()).unwrap(), mu)
}

fn profile_fit(spec: &SimulationSpec, data: &Dataset) -> Vec<f64> {
    let links = spec.link_descriptor(LinkMoments::Sample { x: data.x.clone() }).build().unwrap();
    fit_nlfr_profile(data, &links, None, &OptimizerOptions::default()).unwrap().beta().unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn profile_fit_recovers_beta_from_noiseless_data() {
    // Covariates centered so the sample and population means coincide.
    let (spec, data, _) = noiseless_model12(200, 21, true);
    let beta = profile_fit(&spec, &data);
    let err = dist(&beta, &spec.beta_true);
    assert!(err <= 0.05, "β̂ = {beta:?}, ‖β̂ − β₀‖ = {err}");
}

#[test]
fn noiseless_fit_absorbs_sample_mean_shift() {
    // The index is centered at μ̂ while the design uses 0. With u = β₀ᵀ(x − μ̂)
    // and δ = β₀ᵀμ̂, (β₀ᵀx + 1)² = (1 + δ)²(u/(1 + δ) + 1)², and the derived
    // link is invariant to rescaling g, so the exact fit sits at β₀/(1 + δ).
    let (spec, data, mu) = noiseless_model12(200, 21, false);
    let beta = profile_fit(&spec, &data);
    let delta: f64 = spec.beta_true.iter().zip(&mu).map(|(b, m)| b * m).sum();
    let expected: Vec<f64> = spec.beta_true.iter().map(|b| b / (1.0 + delta)).collect();
    assert!(dist(&beta, &expected) <= 1e-4, "β̂ = {beta:?}, expected {expected:?}");
}

#[test]
fn profile_objective_never_exceeds_start_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for kind in KINDS {
        let data = random_dataset(space(kind), 40, 2, &mut rng);
        let init = [rng.random::<f64>(), -rng.random::<f64>()];
        let model = fit_nlfr_profile(&data, &index_links(), Some(&init), &OptimizerOptions::default()).unwrap();
        let d = &model.diagnostics;
        assert!(!d.start_values.is_empty());
        assert!(d.start_values.iter().all(|v| d.objective <= *v), "{kind:?}");
        let recomputed = training_objective(&model, &data).unwrap();
        assert!((recomputed - d.objective).abs() <= 1e-10 * (1.0 + d.objective));
    }
}

#[test]
fn separable_fit_recovers_scale_constant() {
    // Model 1.2 with p = 2: Cov(X, h(Y)) = 2·Cov(X, g₁) = 4Σβ, so β = c*Σ⁻¹σ_h at c* = 1/4.
    let spec = SimulationSpec::defaults(ModelId::M12, 2, 500, 31).unwrap();
    let rep = generate_replication(&spec, 0).unwrap();
    let links = spec.link_descriptor(LinkMoments::Sample { x: rep.train.x.clone() }).build().unwrap();
    let model = fit_snlfr(&rep.train, &links, HTransform::DistMeanCentered, &default_c_grid(), true).unwrap();
    let nlfr_core::WeightFlavor::Separable { c_h, .. } = model.flavor else { panic!("flavor") };
    assert!((c_h - 0.25).abs() <= 0.2, "ĉ = {c_h}");
    let obj = training_objective(&model, &rep.train).unwrap();
    assert!((obj - model.diagnostics.objective).abs() <= 1e-10 * (1.0 + obj));
}

#[test]
fn fitted_models_are_shareable_across_threads() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let data = random_dataset(space(SpaceKind::Wasserstein), 30, 2, &mut rng);
    let model = fit_lfr(&data).unwrap();
    let xs: Vec<Vec<f64>> = (0..8).map(|_| random_x(2, &mut rng)).collect();
    let serial: Vec<MetricObject> = xs.iter().map(|x| predict(&model, x).unwrap()).collect();
    let parallel: Vec<MetricObject> = std::thread::scope(|s| {
        let hs: Vec<_> = xs.iter().map(|x| s.spawn(|| predict(&model, x).unwrap())).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}
