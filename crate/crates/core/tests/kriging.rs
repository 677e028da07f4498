use approx::assert_relative_eq;
use ndarray::{Array2, Axis};
use shapvar_core::kriging::{self, profile_log_likelihood, profile_log_likelihood_gradient, q2};
use shapvar_core::{sobol_design, KrigingConfig, KrigingModel, Model, ModelSpec, Seed, Trend};

fn branin_like(x: &Array2<f64>) -> Vec<f64> {
    x.rows().into_iter().map(|r| (3.0 * r[0]).sin() + r[1] * r[1] - 0.5 * r[0] * r[1]).collect()
}

fn training(n: usize) -> (Array2<f64>, Vec<f64>) {
    let x = sobol_design(n, 2, Seed(3)).unwrap();
    let y = branin_like(&x);
    (x, y)
}

#[test]
fn interpolates_training_points() {
    let (x, y) = training(30);
    let m = kriging::fit(x.view(), &y, &KrigingConfig::default()).unwrap();
    let (mean, var) = m.predict(x.view()).unwrap();
    for ((p, v), t) in mean.iter().zip(&var).zip(&y) {
        assert!((p - t).abs() < 1e-4 * (1.0 + t.abs()), "{p} vs {t}");
        assert!(*v < 1e-4 * m.process_variance(), "{v}");
    }
}

#[test]
fn reverts_to_trend_far_away() {
    let (x, y) = training(30);
    let cfg = KrigingConfig { trend: Trend::Constant, ..Default::default() };
    let m = kriging::fit(x.view(), &y, &cfg).unwrap();
    let far = Array2::from_elem((1, 2), 1e6);
    let (mean, var) = m.predict(far.view()).unwrap();
    assert_relative_eq!(mean[0], m.coefficients()[0], epsilon = 1e-9);
    assert!(var[0] >= m.process_variance());
}

#[test]
fn batch_matches_single_rows() {
    let (x, y) = training(25);
    let m = kriging::fit(x.view(), &y, &KrigingConfig::default()).unwrap();
    let test = sobol_design(40, 2, Seed(9)).unwrap();
    let (mean, var) = m.predict(test.view()).unwrap();
    for (i, row) in test.axis_iter(Axis(0)).enumerate() {
        let one = row.insert_axis(Axis(0));
        let (m1, v1) = m.predict(one).unwrap();
        assert_eq!(m1[0], mean[i]);
        assert_eq!(v1[0], var[i]);
    }
    assert_eq!(m.evaluate(test.view()).unwrap(), mean);
}

#[test]
fn gradient_matches_finite_differences() {
    let (x, y) = training(20);
    for theta in [[0.3, 0.7], [1.5, 0.2]] {
        let g = profile_log_likelihood_gradient(x.view(), &y, Trend::Linear, 1e-8, &theta).unwrap();
        for k in 0..2 {
            let h = 1e-5;
            let mut up = theta;
            let mut dn = theta;
            up[k] *= f64::exp(h);
            dn[k] *= f64::exp(-h);
            let fd = (profile_log_likelihood(x.view(), &y, Trend::Linear, 1e-8, &up).unwrap()
                - profile_log_likelihood(x.view(), &y, Trend::Linear, 1e-8, &dn).unwrap())
                / (2.0 * h);
            assert_relative_eq!(g[k], fd, max_relative = 1e-4, epsilon = 1e-6);
        }
    }
}

#[test]
fn optimizer_never_lowers_likelihood() {
    let (x, y) = training(30);
    let m = kriging::fit(x.view(), &y, &KrigingConfig { restarts: 6, ..Default::default() }).unwrap();
    assert_eq!(m.restarts().len(), 6);
    for r in m.restarts() {
        assert!(r.final_log_likelihood >= r.initial_log_likelihood);
    }
    let best = m.restarts().iter().map(|r| r.final_log_likelihood).fold(f64::NEG_INFINITY, f64::max);
    assert_relative_eq!(m.log_likelihood(), best, max_relative = 1e-12);
}

#[test]
fn output_translation_shifts_predictions() {
    let (x, y) = training(25);
    let shifted: Vec<f64> = y.iter().map(|v| v + 100.0).collect();
    let cfg = KrigingConfig::default();
    let a = kriging::fit(x.view(), &y, &cfg).unwrap();
    let b = kriging::fit(x.view(), &shifted, &cfg).unwrap();
    let test = sobol_design(20, 2, Seed(5)).unwrap();
    let pa = a.predict_mean(test.view()).unwrap();
    let pb = b.predict_mean(test.view()).unwrap();
    for (u, v) in pa.iter().zip(&pb) {
        assert!((v - u - 100.0).abs() < 1e-6, "{u} {v}");
    }
}

#[test]
fn persistence_round_trip_is_exact() {
    let (x, y) = training(25);
    let m = kriging::fit(x.view(), &y, &KrigingConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gp.txt");
    m.save(&path).unwrap();
    let back = KrigingModel::load(&path).unwrap();
    let test = sobol_design(50, 2, Seed(8)).unwrap();
    assert_eq!(m.predict(test.view()).unwrap(), back.predict(test.view()).unwrap());
    assert_eq!(m.lengthscales(), back.lengthscales());
    assert_eq!(m.to_text(), back.to_text());
}

#[test]
fn corrupt_files_are_rejected() {
    let (x, y) = training(12);
    let m = kriging::fit(x.view(), &y, &KrigingConfig::default()).unwrap();
    let text = m.to_text();
    assert!(KrigingModel::from_text(&text.replace("shapvar-kriging 1", "shapvar-kriging 9")).is_err());
    let truncated: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
    assert!(KrigingModel::from_text(&truncated).is_err());
    assert!(KrigingModel::from_text("").is_err());
}

#[test]
fn perfect_and_trivial_predictors() {
    let x = sobol_design(100, 3, Seed(2)).unwrap().mapv(|u| (2.0 * u - 1.0) * std::f64::consts::PI);
    let f = ModelSpec::ishigami();
    let y = f.evaluate(x.view()).unwrap();
    assert_eq!(q2(&f, x.view(), &y).unwrap(), 1.0);
}
