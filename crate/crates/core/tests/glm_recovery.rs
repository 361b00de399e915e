//! Large-sample recovery of negative binomial regression fits.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spacrt::glm::{fisher_information, fit_negbin, SizeSpec};
use spacrt::sim::sample_negbin;

fn nb_data(seed: u64, n: usize, beta0: f64, size: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: DMatrix<f64> = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
    let y = DVector::from_fn(n, |i, _| {
        sample_negbin((beta0 + z[(i, 0)]).exp(), size, &mut rng)
    });
    (z, y)
}

#[test]
fn moment_size_estimate_at_heavy_overdispersion() {
    let estimates: Vec<f64> = (0..50)
        .map(|s| {
            let (z, y) = nb_data(500 + s, 100_000, -5.0, 0.05);
            fit_negbin(&z, &y, SizeSpec::Mom)
                .unwrap()
                .dispersion_size
                .unwrap()
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!((mean / 0.05 - 1.0).abs() <= 0.2, "mean r̂ {mean}");
}

#[test]
fn intercept_within_three_standard_errors() {
    for seed in 0..5 {
        let (z, y) = nb_data(700 + seed, 100_000, -5.0, 1.0);
        let fit = fit_negbin(&z, &y, SizeSpec::Ml).unwrap();
        let cov = fisher_information(&fit, &z).unwrap().try_inverse().unwrap();
        let se = cov[(0, 0)].sqrt();
        let b0 = fit.coefficients[0];
        assert!((b0 + 5.0).abs() <= 3.0 * se, "seed {seed}: β̂0 {b0} se {se}");
        assert!((fit.coefficients[1] - 1.0).abs() <= 3.0 * cov[(1, 1)].sqrt());
    }
}
