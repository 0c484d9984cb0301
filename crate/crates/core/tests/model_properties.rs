use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use onebit_core::decoders::{biht_decode, ls_decode, pv_convex_decode, LsDecoderConfig};
use onebit_core::generator::{synth_generator, GeneratorNetwork, SynthSpec};
use onebit_core::measurement::{sample_ensemble, scaling_constant, CovarianceSpec};

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

/// Smallest absolute hidden pre-activation along the forward pass.
fn kink_distance(net: &GeneratorNetwork, z: ArrayView1<'_, f64>) -> f64 {
    let layers = net.layers();
    let mut h = z.to_owned();
    let mut closest = f64::INFINITY;
    for layer in &layers[..layers.len() - 1] {
        let pre = layer.weights.dot(&h) + &layer.bias;
        closest = pre.iter().fold(closest, |c, v| c.min(v.abs()));
        h = pre.mapv(|v| v.max(0.0));
    }
    closest
}

#[test]
fn latent_vjp_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut triples = 0;
    while triples < 100 {
        let k = rng.random_range(2..8);
        let hidden: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(5..40)).collect();
        let spec = SynthSpec { bias_scale: 0.3, ..SynthSpec::new(k, rng.random_range(10..60), hidden, rng.random()) };
        let net = synth_generator(&spec).unwrap();
        let z = gaussian(&mut rng, k);
        let h = 1e-6;
        if kink_distance(&net, z.view()) < 1e3 * h {
            continue;
        }
        let v = gaussian(&mut rng, net.output_dim());
        let analytic = net.latent_vjp(z.view(), v.view()).unwrap();
        let numeric = Array1::from_shape_fn(k, |i| {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            (net.forward(zp.view()).unwrap() - net.forward(zm.view()).unwrap()).dot(&v) / (2.0 * h)
        });
        let rel = (&analytic - &numeric).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b))
            / numeric.mapv(f64::abs).fold(1e-8f64, |a, &b| a.max(b));
        worst = worst.max(rel);
        triples += 1;
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn sampled_lipschitz_ratios_stay_below_the_bound() {
    let net = synth_generator(&SynthSpec::new(5, 100, vec![50, 50], 9)).unwrap();
    let bound = net.lipschitz_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let a = gaussian(&mut rng, 5);
        let b = &a + &(gaussian(&mut rng, 5) * rng.random_range(1e-3..2.0));
        let num = (net.forward(a.view()).unwrap() - net.forward(b.view()).unwrap()).mapv(|d| d * d).sum().sqrt();
        let den = (&a - &b).mapv(|d| d * d).sum().sqrt();
        assert!(num <= bound * den * (1.0 + 1e-9), "ratio {} above {bound}", num / den);
    }
}

#[test]
fn bias_free_generators_are_positively_homogeneous() {
    let net = synth_generator(&SynthSpec::new(4, 30, vec![20, 20], 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let z = gaussian(&mut rng, 4);
        let g = net.forward(z.view()).unwrap();
        let g2 = net.forward((&z * 2.0).view()).unwrap();
        for (a, b) in g.iter().zip(g2.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn observed_flip_rate_matches_q() {
    let (m, q) = (200_000, 0.97);
    let ens = sample_ensemble(m, CovarianceSpec::identity(3), 0.0, q, 8).unwrap();
    let obs = ens.observe(Array1::from(vec![0.2, -0.5, 0.9]).view(), 8).unwrap();
    let flips = obs.truth.eta.iter().filter(|&&e| e < 0.0).count() as f64 / m as f64;
    let se = (q * (1.0 - q) / m as f64).sqrt();
    assert!((flips - (1.0 - q)).abs() < 4.0 * se, "flip rate {flips}");
}

#[test]
fn correlation_with_measurements_is_c_sigma_x() {
    // E[y a] = c Σ x for ||x||_Σ = 1, independent of the flip and noise draws
    let (m, n, sigma, q, nu) = (400_000, 4, 0.1, 0.97, 0.3);
    let cov = CovarianceSpec::toeplitz(n, nu);
    let s = cov.matrix();
    let x0 = Array1::from(vec![1.0, -0.5, 0.25, 0.0]);
    let x = &x0 / x0.dot(&s.dot(&x0)).sqrt();
    let ens = sample_ensemble(m, cov, sigma, q, 21).unwrap();
    let obs = ens.observe(x.view(), 21).unwrap();
    let empirical = ens.a.t().dot(&obs.y) / m as f64;
    let expected = s.dot(&x) * scaling_constant(sigma, q);
    // each coordinate of y a has variance at most Σ_ii = 1
    let tol = 5.0 / (m as f64).sqrt();
    for (e, t) in empirical.iter().zip(expected.iter()) {
        assert!((e - t).abs() < tol, "{e} vs {t}");
    }
}

#[test]
fn noiseless_observations_are_scale_invariant() {
    let net = synth_generator(&SynthSpec::new(3, 40, vec![20], 6)).unwrap();
    let ens = sample_ensemble(120, CovarianceSpec::toeplitz(40, 0.3), 0.0, 1.0, 3).unwrap();
    let x = net.forward(Array1::from(vec![0.4, -1.0, 0.7]).view()).unwrap();
    let o1 = ens.observe(x.view(), 5).unwrap();
    let o2 = ens.observe((&x * 2.0).view(), 5).unwrap();
    assert_eq!(o1.y, o2.y);
    let cfg = LsDecoderConfig { restarts: 2, steps_per_restart: 100, ..LsDecoderConfig::default() };
    assert_eq!(ls_decode(&o1, &ens, &net, &cfg).unwrap().x_hat, ls_decode(&o2, &ens, &net, &cfg).unwrap().x_hat);
    assert_eq!(biht_decode(&o1, &ens, 40, 50, 1.0).unwrap(), biht_decode(&o2, &ens, 40, 50, 1.0).unwrap());
    assert_eq!(pv_convex_decode(&o1, &ens, 6.0, 50, 1.0).unwrap(), pv_convex_decode(&o2, &ens, 6.0, 50, 1.0).unwrap());
}
