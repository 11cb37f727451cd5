//! End-to-end checks through the public API of the core crate.

use std::f64::consts::PI;

use fidelity_core::action::{
    c0_closed_form, delta_action, diffusion_constant, dps_dr0, find_stationary_points, standard_coefficients,
    PerturbationFamily, PerturbationSpec,
};
use fidelity_core::classical::{evolve, finite_time_lambda, lyapunov_closed_form, monodromy, MapSpec, PhasePoint};
use fidelity_core::quantum::{
    build_floquet_dense, fidelity_series, prepare_gaussian, prepare_point_source, FloquetFft, GaussianPacketSpec,
    KickPotential, QuantumDims,
};
use fidelity_core::semiclassical::{d_factor, fgr_m, m_point, short_time_m, tau2_estimate, window_width};
use fidelity_core::stats::{decay_rate_fit, WindowPolicy};
use fidelity_core::{Error, TWO_PI};

fn saw() -> MapSpec {
    MapSpec::sawtooth(1.0).unwrap()
}

#[test]
fn sawtooth_step_by_hand() {
    let x = evolve(&saw(), PhasePoint::new(PI + 1.0, 0.0), 1)[1];
    assert!((x.p - 1.0).abs() < 1e-12);
    assert!((x.r - (PI + 2.0)).abs() < 1e-12);
}

#[test]
fn two_kick_monodromy_of_the_sawtooth() {
    let m = monodromy(&saw(), PhasePoint::new(0.3, 1.1), 2).matrix();
    let want = [[2.0, 3.0], [3.0, 5.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((m.m[i][j] - want[i][j]).abs() < 1e-12, "{m:?}");
        }
    }
}

#[test]
fn sawtooth_finite_time_exponent_is_the_closed_form() {
    let lambda = lyapunov_closed_form(1.0).unwrap();
    assert!((lambda - 0.9624237).abs() < 1e-7);
    for t in [1, 3, 10] {
        let s = finite_time_lambda(&saw(), t, 50, 3).unwrap();
        assert!((s.lambda_t - lambda).abs() < 1e-9);
        assert!((s.lambda1_t - lambda).abs() < 1e-9);
    }
    assert!(matches!(lyapunov_closed_form(0.0), Err(Error::InvalidParameter(_))));
}

#[test]
fn equal_diffusion_calibration_across_families() {
    let target = PI.powi(4) / 45.0;
    for (i, n_i) in standard_coefficients().into_iter().enumerate() {
        let c0 = c0_closed_form(i as u8 + 1, n_i).unwrap();
        assert!((c0 - target).abs() < 1e-12, "i = {}", i + 1);
    }
    let pert = PerturbationSpec::from_epsilon(PerturbationFamily::Monomial(2), 1.0, 1.0).unwrap();
    let k_e = diffusion_constant(&saw(), &pert, 5, 400_000, 2).unwrap();
    assert!((k_e.value / (PI.powi(4) / 90.0) - 1.0).abs() < 0.02, "{k_e:?}");
}

#[test]
fn action_difference_vanishes_on_the_fixed_point() {
    let pert = PerturbationSpec::from_epsilon(PerturbationFamily::Monomial(2), 0.1, 1.0).unwrap();
    for t in 1..10 {
        assert_eq!(delta_action(&saw(), &pert, 0.0, PI, t), 0.0);
    }
}

#[test]
fn first_kick_stationary_point_of_the_quadratic_family() {
    let map = saw();
    let pert = PerturbationSpec::from_epsilon(PerturbationFamily::Monomial(2), 1.0, 1.0).unwrap();
    let r0 = 1.0;
    let pts = find_stationary_points(&map, &pert, r0, 1, (0.0, TWO_PI)).unwrap();
    assert_eq!(pts.len(), 1, "{pts:?}");
    let want = (PI - r0 - map.k * (r0 - PI)).rem_euclid(TWO_PI);
    assert!((pts[0].p0_alpha - want).abs() < 1e-8);
    let odd = PerturbationSpec::from_epsilon(PerturbationFamily::Monomial(3), 1.0, 1.0).unwrap();
    assert!(find_stationary_points(&map, &odd, r0, 2, (0.0, TWO_PI)).unwrap().is_empty());
}

#[test]
fn window_factor_after_one_sawtooth_kick() {
    let dps = dps_dr0(&saw(), 0.4, 2.0, 1).unwrap();
    assert!((dps + 2.0).abs() < 1e-12);
    for kappa in [0.5, 1.0, 4.0] {
        assert!((d_factor(dps, kappa) - (1.0 + 4.0 / (kappa * kappa)).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn dense_and_fft_propagators_agree() {
    let dims = QuantumDims::new(64).unwrap();
    let map = MapSpec::standard(10.0).unwrap();
    let v = KickPotential::unperturbed(map).on_grid(&dims);
    let u = build_floquet_dense(&dims, &v).unwrap();
    let mut fft = FloquetFft::new(&dims, &v).unwrap();
    for j in [0, 17, 63] {
        let mut psi = prepare_point_source(&dims, j).unwrap().amps;
        fft.apply(&mut psi);
        for (k, a) in psi.iter().enumerate() {
            assert!((a - u[k * dims.n + j]).norm() < 1e-12);
        }
    }
}

#[test]
fn unperturbed_echo_is_perfect() {
    let dims = QuantumDims::new(256).unwrap();
    let pert = PerturbationSpec::from_sigma(PerturbationFamily::Cosine, 0.0, dims.hbar).unwrap();
    let packet = GaussianPacketSpec::with_kappa(2.0, 1.0, 1.0, dims.hbar).unwrap();
    let psi = prepare_gaussian(&dims, &packet).unwrap();
    let curve = fidelity_series(&dims, &MapSpec::standard(7.0).unwrap(), &pert, &psi, 40).unwrap();
    assert!(curve.fidelity.iter().all(|m| (m - 1.0).abs() < 1e-12));
}

#[test]
fn point_source_amplitude_follows_the_golden_rule() {
    let hbar = TWO_PI / 4096.0;
    let sigma = 0.3;
    let pert = PerturbationSpec::from_sigma(PerturbationFamily::Monomial(2), sigma, hbar).unwrap();
    let k_e = PI.powi(4) / 90.0;
    let mut total = 0.0;
    let sources = [0.4, 1.3, 2.9, 4.4, 5.8];
    for t in 1..=6 {
        let mean: f64 =
            sources.iter().map(|&r0| m_point(&saw(), &pert, r0, t).unwrap().norm_sqr()).sum::<f64>() / 5.0;
        total += (mean.ln() / fgr_m(k_e, sigma, t as f64).ln() - 1.0).abs();
    }
    assert!(total / 6.0 < 0.2, "{}", total / 6.0);
}

#[test]
fn tau2_at_large_dimension() {
    let hbar = TWO_PI / 131072.0;
    let w_p = window_width(hbar, hbar.sqrt(), 1.9);
    let tau2 = tau2_estimate(lyapunov_closed_form(1.0).unwrap(), 0.45, w_p).unwrap();
    assert!((tau2 - 6.5).abs() < 0.2, "{tau2}");
    assert_eq!(short_time_m(0.0, w_p, 100.0), 1.0);
}

#[test]
fn rate_fit_recovers_an_exact_exponential() {
    let t: Vec<f64> = (0..30).map(|k| k as f64).collect();
    let m: Vec<f64> = t.iter().map(|&t| 0.8 * (-0.35 * t).exp()).collect();
    let fit = decay_rate_fit(&t, &m, WindowPolicy::Range { t_lo: 2.0, t_hi: 20.0 }).unwrap();
    assert!((fit.gamma - 0.35).abs() < 1e-10);
    assert!((fit.intercept - 0.8f64.ln()).abs() < 1e-10);
}
