use ndarray::Array1;

use onebit_core::generator::{synth_generator, SynthSpec};
use onebit_core::theory::{
    build_eps_net, concentration_study, estimate_local_mean_width, jl_study, mean_width_of_directions, srec_study,
    SrecStudy,
};

#[test]
fn covariance_error_decays_at_the_square_root_rate() {
    let small = concentration_study(20, 5_000, 20, 4.0, 0.0, 0.1, 0.97, 1).unwrap();
    let large = concentration_study(20, 20_000, 20, 4.0, 0.0, 0.1, 0.97, 1).unwrap();
    // quadrupling m should halve the error
    let factor = small.mean_linf_cov / large.mean_linf_cov;
    assert!((1.6..=2.5).contains(&factor), "decay factor {factor}");
    assert!(small.linf_cov.passes >= 19 && large.linf_cov.passes >= 19);
    assert!(large.mean_linf_grad < 4.0 * large.linf_rate);
}

#[test]
fn srec_holds_at_the_prescribed_m_and_fails_far_below_it() {
    let net = synth_generator(&SynthSpec::new(5, 100, vec![50], 0)).unwrap();
    let study = SrecStudy { delta: 0.01, m: None, radius: 1.0, pairs: 2000, runs: 10, nu: 0.3 };
    let ok = srec_study(&net, &study, 3).unwrap();
    assert_eq!(ok.pass_rate.passes, 10);
    assert_eq!(ok.total_violations, 0);
    let starved = srec_study(&net, &SrecStudy { m: Some(2), ..study }, 3).unwrap();
    assert!(starved.total_violations > 0);
}

#[test]
fn jl_distortion_passes_at_the_prescribed_m() {
    let net = synth_generator(&SynthSpec::new(5, 100, vec![50], 0)).unwrap();
    let report = jl_study(&net, 50, 1.0, 0.5, None, 20, 0.3, 4).unwrap();
    assert!(report.pass_rate.passes >= 19);
    assert!(report.worst_distortion < 0.5);
    let starved = jl_study(&net, 50, 1.0, 0.5, Some(2), 20, 0.3, 4).unwrap();
    assert!(starved.pass_rate.passes < 20);
}

#[test]
fn two_point_direction_set_has_width_sqrt_two_over_pi() {
    let mut e = Array1::zeros(30);
    e[0] = 1.0;
    let (est, se) = mean_width_of_directions(&[e.clone(), -e], 20_000, 6);
    let exact = (2.0 / std::f64::consts::PI).sqrt();
    assert!((est - exact).abs() <= 3.0 * se, "{est} ± {se}");
}

#[test]
fn generator_width_respects_both_bounds() {
    let net = synth_generator(&SynthSpec::new(2, 50, vec![30], 1)).unwrap();
    let z = Array1::from(vec![0.3, -0.2]);
    let est = estimate_local_mean_width(&net, z.view(), 1.0, 0.1, 2000, 0.1, 7).unwrap();
    assert!(est.omega_hat <= est.bound);
    assert!(est.omega_hat <= est.massart_bound + 3.0 * est.std_err);
}

#[test]
fn lattice_net_covers_the_ball() {
    for (k, eps) in [(1, 0.1), (2, 0.2), (3, 0.3)] {
        let net = build_eps_net(k, 1.0, eps).unwrap();
        assert!(net.max_cover_distance(5000, 9) <= eps);
    }
}
