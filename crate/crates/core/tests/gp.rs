use cmfbo::gp::{fit, GpModel, InputSpace, MeanKind, Surrogate, TrainConfig, TrainingData, TrainingObjective};
use cmfbo::numopt::fd_gradient;
use cmfbo::{BoxBounds, CategoricalSpec, Embedding, Error, KernelParams, MixedPoint, NuggetVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn space(dx: usize, ns: usize) -> InputSpace {
    InputSpace::new(BoxBounds::unit(dx), CategoricalSpec::empty(), ns).unwrap()
}

fn data_1d(xs: &[f64], f: impl Fn(f64) -> f64) -> TrainingData {
    TrainingData::new(
        xs.iter().map(|&x| MixedPoint::continuous(vec![x], 0)).collect(),
        xs.iter().map(|&x| f(x)).collect(),
    )
    .unwrap()
}

/// Textbook GP posterior from dense LU solves: constant mean by generalized
/// least squares, covariance `s2 * (sigma2 R + delta I)`.
fn dense_oracle(xs: &[f64], ys: &[f64], omega: f64, sigma2: f64, delta: f64, s2: f64, q: f64) -> (f64, f64) {
    let n = xs.len();
    let r = |a: f64, b: f64| (-(10f64.powf(omega)) * (a - b) * (a - b)).exp();
    let c = DMatrix::from_fn(n, n, |i, j| s2 * (sigma2 * r(xs[i], xs[j]) + if i == j { delta } else { 0.0 }));
    let lu = c.lu();
    let one = DVector::from_element(n, 1.0);
    let y = DVector::from_column_slice(ys);
    let beta = one.dot(&lu.solve(&y).unwrap()) / one.dot(&lu.solve(&one).unwrap());
    let k = DVector::from_fn(n, |i, _| s2 * sigma2 * r(q, xs[i]));
    let mu = beta + k.dot(&lu.solve(&(&y - &one * beta)).unwrap());
    let var = s2 * sigma2 - k.dot(&lu.solve(&k).unwrap());
    (mu, var.max(0.0))
}

#[test]
fn prediction_matches_dense_oracle_on_random_datasets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(2..=8);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (5.0 * x).sin() + rng.random::<f64>() * 0.1).collect();
        let omega = rng.random_range(-1.0..1.5);
        let sigma2 = rng.random_range(0.5..2.0);
        let delta = 10f64.powf(rng.random_range(-6.0..-2.0));
        let kp = KernelParams::isotropic(vec![omega], sigma2, 0, 1).unwrap();
        let data = TrainingData::new(data_1d(&xs, |_| 0.0).points, ys.clone()).unwrap();
        let model = GpModel::with_hyperparameters(
            space(1, 1),
            data,
            MeanKind::SingleConstant,
            &kp,
            &NuggetVector::new(vec![delta]).unwrap(),
        )
        .unwrap();
        let (_, s) = model.standardization();
        for j in 0..10 {
            let q = j as f64 / 9.0;
            let p = model.predict(&MixedPoint::continuous(vec![q], 0)).unwrap();
            let (mu, var) = dense_oracle(&xs, &ys, omega, sigma2, delta, s * s, q);
            assert!((p.mean - mu).abs() < 1e-8, "mean {} vs {}", p.mean, mu);
            assert!((p.variance - var).abs() < 1e-8, "var {} vs {}", p.variance, var);
        }
    }
}

#[test]
fn fitted_model_matches_dense_oracle() {
    let xs = [0.05, 0.2, 0.45, 0.6, 0.8, 0.95];
    let data = data_1d(&xs, |x| (6.0 * x).sin() + x);
    let model = fit(&space(1, 1), &data, &TrainConfig::default()).unwrap();
    let kp = model.kernel_params();
    let (_, s) = model.standardization();
    for j in 0..7 {
        let q = j as f64 / 6.0;
        let p = model.predict(&MixedPoint::continuous(vec![q], 0)).unwrap();
        let (mu, var) = dense_oracle(&xs, &data.targets, kp.omega[0], kp.sigma2, model.nugget().get(0), s * s, q);
        assert!((p.mean - mu).abs() < 1e-8);
        assert!((p.variance - var).abs() < 1e-8);
    }
}

#[test]
fn interpolates_noiseless_line() {
    let xs = [0.0, 0.25, 0.5, 0.75, 1.0];
    let data = data_1d(&xs, |x| x);
    let model = fit(&space(1, 1), &data, &TrainConfig::default()).unwrap();
    for &x in &xs {
        let p = model.predict(&MixedPoint::continuous(vec![x], 0)).unwrap();
        assert!((p.mean - x).abs() < 1e-4, "{} at {}", p.mean, x);
    }
}

#[test]
fn single_point_returns_its_value() {
    let data = data_1d(&[0.3], |_| 3.0);
    let delta = 1e-3;
    let kp = KernelParams::isotropic(vec![0.0], 1.0, 0, 1).unwrap();
    let model = GpModel::with_hyperparameters(
        space(1, 1),
        data,
        MeanKind::SingleConstant,
        &kp,
        &NuggetVector::new(vec![delta]).unwrap(),
    )
    .unwrap();
    let p = model.predict(&MixedPoint::continuous(vec![0.3], 0)).unwrap();
    assert!((p.mean - 3.0).abs() < 1e-12);
    assert!(p.variance <= delta);
}

#[test]
fn floored_nugget_interpolates_training_points() {
    let xs = [0.1, 0.4, 0.7, 0.9];
    let data = data_1d(&xs, |x| x * x - 0.3 * x);
    let kp = KernelParams::isotropic(vec![0.5], 1.0, 0, 1).unwrap();
    let model = GpModel::with_hyperparameters(
        space(1, 1),
        data.clone(),
        MeanKind::SingleConstant,
        &kp,
        &NuggetVector::new(vec![1e-10]).unwrap(),
    )
    .unwrap();
    for (x, y) in xs.iter().zip(&data.targets) {
        let p = model.predict(&MixedPoint::continuous(vec![*x], 0)).unwrap();
        assert!((p.mean - y).abs() < 1e-6);
    }
}

fn two_source_data(n: usize, same: bool) -> TrainingData {
    let mut points = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        points.push(MixedPoint::continuous(vec![x], 0));
        y.push((6.0 * x).sin());
        let x2 = (i as f64 + 0.1) / n as f64;
        points.push(MixedPoint::continuous(vec![x2], 1));
        y.push(if same { (6.0 * x2).sin() } else { (6.0 * x2).sin() + 0.5 * x2 });
    }
    TrainingData::new(points, y).unwrap()
}

#[test]
fn identical_sources_are_strongly_correlated() {
    let data = two_source_data(8, true);
    let model = fit(&space(1, 2), &data, &TrainConfig::default()).unwrap();
    let z = &model.kernel_params().theta_z;
    let d: f64 = (0..z.latent_dim()).map(|c| (z.get(c, 0) - z.get(c, 1)).powi(2)).sum::<f64>().sqrt();
    assert!(d < 0.2, "latent distance {d}");
    for (p, y) in data.points.iter().zip(&data.targets).filter(|(p, _)| p.source == 1) {
        let cross = model.predict(&p.with_source(0)).unwrap();
        assert!((cross.mean - y).abs() < 0.05, "{} vs {}", cross.mean, y);
    }
}

#[test]
fn fit_is_bit_reproducible() {
    let data = two_source_data(6, false);
    let cfg = TrainConfig { seed: 3, ..TrainConfig::default() };
    let a = fit(&space(1, 2), &data, &cfg).unwrap();
    let b = fit(&space(1, 2), &data, &cfg).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    let q = MixedPoint::continuous(vec![0.33], 1);
    assert_eq!(a.predict(&q).unwrap(), b.predict(&q).unwrap());
}

#[test]
fn fit_invariant_under_row_permutation() {
    let data = two_source_data(6, false);
    let a = fit(&space(1, 2), &data, &TrainConfig::default()).unwrap();
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.reverse();
    idx.swap(0, 5);
    let perm = TrainingData::new(
        idx.iter().map(|&i| data.points[i].clone()).collect(),
        idx.iter().map(|&i| data.targets[i]).collect(),
    )
    .unwrap();
    let b = fit(&space(1, 2), &perm, &TrainConfig::default()).unwrap();
    assert!((a.loss().total - b.loss().total).abs() < 1e-6, "{} vs {}", a.loss().total, b.loss().total);
}

#[test]
fn returned_loss_not_above_default_start() {
    let data = two_source_data(5, false);
    let cfg = TrainConfig::default();
    let obj = TrainingObjective::new(&space(1, 2), &data, &cfg).unwrap();
    let model = fit(&space(1, 2), &data, &cfg).unwrap();
    assert!(model.loss().total <= obj.value(&obj.default_start()).unwrap());
    assert!((model.loss().total - obj.value(model.parameters()).unwrap()).abs() < 1e-12);
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sp = InputSpace::new(
        BoxBounds::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(),
        CategoricalSpec::new(vec![("color".into(), 3)]).unwrap(),
        2,
    )
    .unwrap();
    let mut points = Vec::new();
    let mut y = Vec::new();
    for i in 0..14 {
        let p = MixedPoint::new(vec![rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)], vec![i % 3], i % 2);
        y.push(p.x[0] * p.x[1] + (p.t[0] as f64) * 0.3 + p.source as f64 * 0.2 + 0.05 * rng.random::<f64>());
        points.push(p);
    }
    let data = TrainingData::new(points, y).unwrap();
    let obj = TrainingObjective::new(&sp, &data, &TrainConfig::default()).unwrap();
    let start = obj.start_bounds();
    for _ in 0..20 {
        let p: Vec<f64> = start.lower().iter().zip(start.upper()).map(|(l, u)| rng.random_range(*l..*u)).collect();
        let (_, g) = obj.value_and_gradient(&p).unwrap();
        let fd = fd_gradient(|q: &[f64]| obj.value(q).unwrap(), &p, 1e-6);
        let err = relative_error(&g, &fd);
        assert!(err < 1e-4, "relative error {err}\n{g:?}\n{fd:?}");
    }
}

#[test]
fn zero_weight_loss_is_likelihood() {
    let data = two_source_data(4, false);
    let cfg = TrainConfig { is_weight: 0.0, ..TrainConfig::default() };
    let obj = TrainingObjective::new(&space(1, 2), &data, &cfg).unwrap();
    let parts = obj.parts(&obj.default_start()).unwrap();
    assert_eq!(parts.total, parts.nll);
}

#[test]
fn variance_never_meaningfully_negative() {
    let data = two_source_data(8, false);
    let model = fit(&space(1, 2), &data, &TrainConfig::default()).unwrap();
    for i in 0..=200 {
        for s in 0..2 {
            let p = MixedPoint::continuous(vec![i as f64 / 200.0], s);
            assert!(model.unclamped_variance(&p).unwrap() > -1e-8);
            assert!(model.predict(&p).unwrap().variance >= 0.0);
        }
    }
}

#[test]
fn prediction_gradient_matches_finite_differences() {
    let sp = space(2, 2);
    let mut points = Vec::new();
    let mut y = Vec::new();
    for i in 0..10 {
        let x = vec![(i as f64 * 0.37) % 1.0, (i as f64 * 0.61) % 1.0];
        y.push(x[0].sin() + x[1] * x[1]);
        points.push(MixedPoint::continuous(x, i % 2));
    }
    let kp = KernelParams::new(
        vec![0.3, 0.6],
        Embedding::zeros(2, 0),
        Embedding::new(2, 2, vec![0.0, 0.4, 0.0, 0.2]).unwrap(),
        1.3,
    )
    .unwrap();
    let nugget = NuggetVector::new(vec![1e-3, 1e-2]).unwrap();
    let data = TrainingData::new(points, y).unwrap();
    let model = GpModel::with_hyperparameters(sp, data, MeanKind::PerSourceConstant, &kp, &nugget).unwrap();
    let x = [0.63, 0.18];
    for s in 0..2 {
        let g = model.predict_unit_grad(&x, &[], s, true);
        let fm = fd_gradient(|u: &[f64]| model.predict_unit(u, &[], s).mean, &x, 1e-6);
        let fv = fd_gradient(|u: &[f64]| model.predict_unit(u, &[], s).variance, &x, 1e-6);
        assert!(relative_error(&g.d_mean, &fm) < 1e-5, "{:?} {:?}", g.d_mean, fm);
        assert!(relative_error(&g.d_variance, &fv) < 1e-4, "{:?} {:?} {}", g.d_variance, fv, g.variance);
    }
}

#[test]
fn export_import_round_trip() {
    let data = two_source_data(5, false);
    let model = fit(&space(1, 2), &data, &TrainConfig::default()).unwrap();
    let text = model.to_json().unwrap();
    let back = GpModel::from_json(&text).unwrap();
    assert_eq!(back.parameters(), model.parameters());
    let q = MixedPoint::continuous(vec![0.42], 0);
    assert_eq!(back.predict(&q).unwrap(), model.predict(&q).unwrap());

    let mut file = model.to_file().unwrap();
    file.data.targets[0] += 1.0;
    assert!(matches!(GpModel::from_file(file), Err(Error::Serialization(_))));
}

#[test]
fn mean_in_original_units() {
    let data = data_1d(&[0.1, 0.5, 0.9], |_| 7.0);
    let model = fit(&space(1, 1), &data, &TrainConfig::default()).unwrap();
    assert!((model.mean_spec().beta[0] - 7.0).abs() < 1e-8);
}

#[test]
fn rejects_insufficient_data() {
    let cfg = TrainConfig::default();
    let one = data_1d(&[0.5], |x| x);
    assert!(matches!(fit(&space(1, 1), &one, &cfg), Err(Error::InvalidInput(_))));
    let missing = data_1d(&[0.1, 0.5, 0.9], |x| x);
    assert!(matches!(fit(&space(1, 2), &missing, &cfg), Err(Error::InvalidInput(_))));
    assert!(TrainingData::new(vec![MixedPoint::continuous(vec![0.5], 0)], vec![]).is_err());
}
