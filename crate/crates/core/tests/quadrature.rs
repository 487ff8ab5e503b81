use deit_core::quadrature::*;
use deit_core::units::hz_to_rad;
use deit_core::C64;

fn lorentzian(half_width: f64, centre: f64) -> impl Fn(f64) -> C64 {
    move |v| C64::new(half_width, 0.0) / C64::new(half_width, v - centre)
}

/// Dense trapezoid of f against the normalized Gaussian of standard
/// deviation sigma over ±8σ.
fn trapezoid_voigt(f: &dyn Fn(f64) -> C64, sigma: f64, n: usize) -> C64 {
    let a = -8.0 * sigma;
    let h = 16.0 * sigma / n as f64;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..=n {
        let v = a + k as f64 * h;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        acc += f(v) * (w * norm * (-0.5 * (v / sigma).powi(2)).exp());
    }
    acc * h
}

#[test]
fn constant_is_exact() {
    let c0 = C64::new(0.3, -1.7);
    for n in [8, 16, 64, 128] {
        let got = doppler_average(|_| c0, 500e6, n).unwrap();
        assert!((got - c0).norm() <= 4.0 * f64::EPSILON * c0.norm());
    }
    let f = Feature { centre: 0.0, half_width: hz_to_rad(9e6), reach: hz_to_rad(1e8) };
    let got = doppler_average_resolved(|_| c0, 500e6, &[f]).unwrap();
    assert!((got - c0).norm() <= 1e-14);
}

#[test]
fn narrow_lorentzian_matches_dense_integration() {
    let fwhm = 500e6;
    let sigma = sigma_from_fwhm(fwhm);
    let hw = hz_to_rad(9e6);
    for centre in [0.0, hz_to_rad(40e6), hz_to_rad(-300e6)] {
        let f = lorentzian(hw, centre);
        let dense = trapezoid_voigt(&f, sigma, 400_000);
        let feature = Feature { centre, half_width: hw, reach: 6.0 * hw };
        let got = doppler_average_resolved(&f, fwhm, &[feature]).unwrap();
        assert!((got - dense).norm() <= 1e-6 * dense.norm(), "{got} vs {dense}");
    }
}

#[test]
fn vanishing_width_samples_the_origin() {
    let f = lorentzian(1.0, 0.3);
    let got = doppler_average(&f, 1e-12, 64).unwrap();
    assert!((got - f(0.0)).norm() < 1e-10);
    let got = doppler_average_resolved(&f, 0.0, &[]).unwrap();
    assert!((got - f(0.0)).norm() < 1e-15);
}

#[test]
fn too_few_nodes_rejected() {
    assert_eq!(doppler_average(|_| C64::new(1.0, 0.0), 500e6, 7), Err(QuadratureError::TooFewNodes(7)));
}

#[test]
fn non_finite_sample_reports_node() {
    let err = doppler_average(|v| if v > 0.0 { C64::new(f64::NAN, 0.0) } else { C64::new(1.0, 0.0) }, 500e6, 16)
        .unwrap_err();
    match err {
        QuadratureError::NonFinite { index, velocity } => {
            assert_eq!(index, 8);
            assert!(velocity > 0.0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn hermite_rule_integrates_even_moments() {
    let sigma = sigma_from_fwhm(500e6);
    let rule = VelocityRule::gauss_hermite(500e6, 32).unwrap();
    let m2: f64 = rule.iter().map(|(v, w)| w * v * v).sum();
    let m4: f64 = rule.iter().map(|(v, w)| w * v.powi(4)).sum();
    assert!((m2 / sigma.powi(2) - 1.0).abs() < 1e-12);
    assert!((m4 / sigma.powi(4) - 3.0).abs() < 1e-12);
}
