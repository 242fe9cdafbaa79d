use std::collections::BTreeSet;

use lcen::datagen::{gen_linear5, gen_quartic, gen_relativistic, MassRange, NoiseSpec};
use lcen::diagnostics::metrics;
use lcen::{expand_raw, fit_pipeline, sparsify, Dataset, ExpansionConfig, FitSettings, FittedModel, PipelineSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn settings(degrees: Vec<usize>) -> FitSettings {
    let mut s = FitSettings::default();
    s.grid.degrees = degrees;
    s.seed = 5;
    s
}

fn names(model: &FittedModel) -> BTreeSet<String> {
    model.terms.iter().map(|t| t.display()).collect()
}

/// `y_t = 0.5 y_{t-1} - 0.2 y_{t-2} + 3 u_t` driven by a random input.
fn ar2_series(n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..3.0)).collect();
    let mut y = vec![6.0, 7.0];
    for t in 2..n {
        y.push(0.5 * y[t - 1] - 0.2 * y[t - 2] + 3.0 * u[t]);
    }
    Dataset::new(DMatrix::from_column_slice(n, 1, &u), DVector::from_vec(y)).unwrap()
}

#[test]
fn ar2_recovery_and_recursive_forecast() {
    let full = ar2_series(424);
    let train = full.slice_rows(0, 400);
    let mut s = settings(vec![1]);
    s.grid.lags = vec![2];
    let model = fit_pipeline(&train, &s, &PipelineSpec::LCEN).unwrap();
    assert_eq!(
        names(&model),
        ["X0", "y[t-1]", "y[t-2]"].iter().map(|s| s.to_string()).collect(),
        "{}",
        model.equation()
    );

    let future = full.x.rows(400, 24).into_owned();
    let forecast = model.forecast(&train.tail_history(2), 24, Some(&future)).unwrap();
    for (f, truth) in forecast.iter().zip(full.y.rows(400, 24).iter()) {
        assert!((f - truth).abs() / truth.abs() <= 1e-3, "{f} vs {truth}");
    }
    // a horizon of one is the next one-step prediction
    let one = model.forecast(&train.tail_history(2), 1, Some(&future)).unwrap();
    let step = model
        .predict(
            &full.x.rows(0, 401).into_owned(),
            Some(&full.y.rows(0, 401).into_owned()),
        )
        .unwrap();
    assert_eq!(one[0], *step.last().unwrap());
}

#[test]
fn forecast_requires_a_lagged_model_and_positive_horizon() {
    let g = gen_linear5(100, NoiseSpec::none(1)).unwrap();
    let model = fit_pipeline(&g.data, &settings(vec![1]), &PipelineSpec::LCEN).unwrap();
    assert!(model.forecast(&g.data.tail_history(0), 3, None).is_err());
    let full = ar2_series(120);
    let mut s = settings(vec![1]);
    s.grid.lags = vec![2];
    let lagged = fit_pipeline(&full, &s, &PipelineSpec::LCEN).unwrap();
    assert!(lagged.forecast(&full.tail_history(2), 0, Some(&full.x)).is_err());
}

#[test]
fn unscaled_predictions_match_the_standardized_path() {
    let g = gen_relativistic(400, MassRange::UpTo10, NoiseSpec::level(5.0, 2)).unwrap();
    let model = fit_pipeline(&g.data, &settings(vec![1, 2, 3]), &PipelineSpec::LCEN).unwrap();
    let pred = model.predict(&g.data.x, None).unwrap();

    let raw = expand_raw(&g.data.x, None, &ExpansionConfig::new(model.hyperparameters.degree, 0)).unwrap();
    let sc = &model.scaling;
    let y_scale = pred.iter().map(|p| p.abs()).fold(0.0, f64::max);
    for (i, p) in pred.iter().enumerate() {
        let mut z = 0.0;
        for (j, term) in model.terms.iter().enumerate() {
            let col = raw.terms.iter().position(|t| t == term).unwrap();
            z += model.scaled_beta[j] * (raw.values[(i, col)] - sc.mean[j]) / sc.std[j];
        }
        let standardized = sc.y_mean + sc.y_std * z;
        assert!(
            (p - standardized).abs() <= 1e-10 * y_scale,
            "row {i}: {p} vs {standardized}"
        );
    }
}

#[test]
fn reloaded_model_predicts_bit_identically() {
    let g = gen_linear5(300, NoiseSpec::level(30.0, 4)).unwrap();
    let model = fit_pipeline(&g.data, &settings(vec![1, 2]), &PipelineSpec::LCEN).unwrap();
    let json = model.to_json().unwrap();
    let back = FittedModel::from_json(&json).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_json().unwrap(), json);
    let a = model.predict(&g.data.x, None).unwrap();
    let b = back.predict(&g.data.x, None).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn chosen_hyperparameters_attain_the_table_minimum() {
    let g = gen_linear5(200, NoiseSpec::level(20.0, 6)).unwrap();
    let model = fit_pipeline(&g.data, &settings(vec![1, 2]), &PipelineSpec::LCEN).unwrap();
    let first = &model.cv_table.first;
    assert_eq!(first.chosen().mean_mse, first.min_mse());
    assert_eq!(first.chosen().degree, model.hyperparameters.degree);
    assert_eq!(first.chosen().alpha, model.hyperparameters.first_stage_alpha);
    let second = model.cv_table.second.as_ref().unwrap();
    assert_eq!(second.chosen().mean_mse, second.min_mse());
    assert_eq!(second.chosen().alpha, model.hyperparameters.alpha);
    assert_eq!(second.chosen().l1_ratio, model.hyperparameters.l1_ratio);
    // the second stage keeps the degree and lag picked by the first
    assert!(second
        .records
        .iter()
        .all(|r| r.degree == model.hyperparameters.degree && r.lag == model.hyperparameters.lag));
}

#[test]
fn clipped_coefficients_respect_the_cutoff() {
    let g = gen_linear5(200, NoiseSpec::level(40.0, 7)).unwrap();
    let model = fit_pipeline(&g.data, &settings(vec![1, 2]), &PipelineSpec::LCEN).unwrap();
    assert!(model
        .scaled_beta
        .iter()
        .all(|b| b.abs() >= model.hyperparameters.cutoff));
    assert_eq!(model.n_features_selected, model.terms.len());
}

#[test]
fn sparsify_edge_cases() {
    let g = gen_linear5(300, NoiseSpec::level(20.0, 8)).unwrap();
    let model = fit_pipeline(&g.data, &settings(vec![1]), &PipelineSpec::LCEN).unwrap();
    let same = sparsify(&model, &g.data, &[model.hyperparameters.cutoff]).unwrap();
    assert_eq!(same[0], model);

    let gone = sparsify(&model, &g.data, &[1e9]).unwrap();
    assert!(gone[0].terms.is_empty() && gone[0].degenerate);
    assert!(!gone[0].warnings.is_empty());
    let mean = g.data.y.mean();
    assert!(gone[0]
        .predict(&g.data.x, None)
        .unwrap()
        .iter()
        .all(|p| (p - mean).abs() < 1e-9 * mean.abs().max(1.0)));

    assert!(sparsify(&model, &g.data, &[0.3, 0.2]).is_err());
    assert!(sparsify(&model, &g.data, &[model.hyperparameters.cutoff / 2.0]).is_err());
}

#[test]
fn noiseless_quartic_degree_four_is_exact_out_of_sample() {
    let (train, test) = gen_quartic(30, 1000, NoiseSpec::variance(0.0, 3)).unwrap();
    let model = fit_pipeline(&train.data, &settings(vec![4]), &PipelineSpec::LCEN).unwrap();
    let pred = model.predict(&test.data.x, None).unwrap();
    let mse = metrics(test.data.y.as_slice(), &pred).unwrap().mse;
    assert!(mse <= 1e-6, "test MSE {mse}: {}", model.equation());
}

#[test]
fn coefficient_error_grows_with_noise() {
    let rmse = |level: f64| {
        let g = gen_linear5(1000, NoiseSpec::level(level, 1)).unwrap();
        let m = fit_pipeline(&g.data, &settings(vec![1]), &PipelineSpec::LEN).unwrap();
        let sq: f64 = g
            .true_support
            .iter()
            .zip(&g.true_coefficients)
            .map(|(t, c)| {
                m.terms
                    .iter()
                    .position(|x| x == t)
                    .map_or(c * c, |j| (m.unscaled_beta[j] - c).powi(2))
            })
            .sum();
        (sq / 5.0).sqrt()
    };
    let errs: Vec<f64> = [0.0, 5.0, 20.0, 60.0].into_iter().map(rmse).collect();
    assert!(errs[0] < 1e-6);
    assert!(errs.windows(2).all(|w| w[1] > w[0]), "{errs:?}");
}

#[test]
fn constant_target_degenerates_to_intercept() {
    let g = gen_linear5(60, NoiseSpec::none(2)).unwrap();
    let data = Dataset::new(g.data.x.clone(), DVector::from_element(60, 4.5)).unwrap();
    let model = fit_pipeline(&data, &settings(vec![1]), &PipelineSpec::LCEN).unwrap();
    assert!(model.terms.is_empty());
    assert!(model.degenerate);
    assert_eq!(model.intercept, 4.5);
}

#[test]
fn invalid_settings_are_rejected() {
    let g = gen_linear5(60, NoiseSpec::none(2)).unwrap();
    let mut s = settings(vec![1]);
    s.grid.folds = 1;
    assert!(fit_pipeline(&g.data, &s, &PipelineSpec::LCEN).is_err());
    let mut s = settings(vec![]);
    s.grid.cutoff = 0.1;
    assert!(fit_pipeline(&g.data, &s, &PipelineSpec::LCEN).is_err());
    let mut s = settings(vec![1]);
    s.grid.cutoff = -1.0;
    assert!(fit_pipeline(&g.data, &s, &PipelineSpec::LCEN).is_err());
}
