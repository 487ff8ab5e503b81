use deit_core::fitting::*;
use deit_core::params::*;
use deit_core::units::hz_to_rad;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FREE: [FitParameter; 3] = [FitParameter::ExchangeG, FitParameter::OpticalDepthZ, FitParameter::OpticalDepthH];

fn model() -> ForwardModel {
    ForwardModel { pump_power: REFERENCE_PUMP_POWER, pump_detuning: 0.0 }
}

fn powers() -> Vec<f64> {
    (0..12).map(|k| 150e-6 * k as f64 / 11.0).collect()
}

/// v_g(P) of both signals under hyperfine preparation, generated by the model.
fn synthetic(p: &TripodParams) -> Vec<Dataset> {
    Signal::BOTH
        .map(|signal| {
            let obs = Observable::GroupVelocity { signal, preparation: Signal::Hyperfine };
            let blank = Dataset::new(obs, powers().into_iter().map(|x| Row { x, y: 0.0, sigma: None }).collect()).unwrap();
            let v = model().evaluate(p, &blank).unwrap();
            Dataset::new(obs, powers().into_iter().zip(v).map(|(x, y)| Row { x, y, sigma: None }).collect()).unwrap()
        })
        .to_vec()
}

fn bounds_around(p: &TripodParams) -> Vec<Bound> {
    FREE.iter().map(|&parameter| Bound { parameter, lo: parameter.get(p) / 10.0, hi: parameter.get(p) * 10.0 }).collect()
}

fn sketch() -> Vec<Dataset> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
    ["zeeman", "hyperfine"]
        .map(|s| Dataset::from_csv(&std::fs::read_to_string(format!("{dir}/fig4c_sketch_{s}.csv")).unwrap()).unwrap())
        .to_vec()
}

#[test]
fn model_generated_data_has_zero_residuals() {
    let p = TripodParams::reference();
    let data = synthetic(&p);
    let r = residuals(&p, &data, &model()).unwrap();
    assert_eq!(r.len(), 24);
    assert!(r.iter().all(|x| x.abs() <= 1e-9 * 1e5), "{r:?}");
}

#[test]
fn scaled_data_gives_proportional_residuals() {
    let p = TripodParams::reference();
    let data = synthetic(&p);
    let scaled: Vec<Dataset> = data
        .iter()
        .map(|d| Dataset::new(d.observable(), d.rows().iter().map(|r| Row { y: 1.1 * r.y, ..*r }).collect()).unwrap())
        .collect();
    let r = residuals(&p, &scaled, &model()).unwrap();
    let y: Vec<f64> = data.iter().flat_map(|d| d.rows().iter().map(|r| r.y)).collect();
    for (r, y) in r.iter().zip(&y) {
        assert!((r + 0.1 * y).abs() <= 1e-8 * y, "{r} vs {y}");
    }
}

#[test]
fn uncertainties_weight_the_residuals() {
    let p = TripodParams::reference();
    let d = &synthetic(&p)[0];
    let shifted = Dataset::new(d.observable(), d.rows().iter().map(|r| Row { y: r.y + 300.0, sigma: Some(150.0), ..*r }).collect()).unwrap();
    let r = residuals(&p, &[shifted], &model()).unwrap();
    assert!(r.iter().all(|x| (x + 2.0).abs() < 1e-9));
}

#[test]
fn round_trip_recovers_generating_parameters() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truth = TripodParams::reference();
        for p in FREE {
            let v = p.get(&truth) * rng.gen_range(0.8..1.25);
            p.set(&mut truth, v);
        }
        let data = synthetic(&truth);
        let mut start = truth;
        for p in FREE {
            let factor = if rng.gen_bool(0.5) { 2.0 } else { 0.5 };
            p.set(&mut start, p.get(&truth) * factor);
        }
        let result = fit(&data, &model(), &start, &bounds_around(&truth), &FitOptions::default()).unwrap();
        for p in FREE {
            let (got, want) = (p.get(&result.params), p.get(&truth));
            assert!((got / want - 1.0).abs() < 0.1, "seed {seed}: {p} = {got:e}, truth {want:e} ({})", result.to_text());
        }
        assert!(result.objective <= result.initial_objective);
    }
}

#[test]
fn starting_at_the_truth_converges_without_loss() {
    let p = TripodParams::reference();
    let data = synthetic(&p);
    let opts = FitOptions { initial_step: 0.05, ..FitOptions::default() };
    let result = fit(&data, &model(), &p, &bounds_around(&p), &opts).unwrap();
    assert!(result.converged, "{}", result.to_text());
    assert!(result.objective <= result.initial_objective);
    let again = objective(&residuals(&result.params, &data, &model()).unwrap());
    assert!((again - result.objective).abs() <= 1e-10 * result.objective.max(1.0));
}

#[test]
fn sketch_data_fit_improves_and_crosses_near_fifty_microwatts() {
    let data = sketch();
    let p = TripodParams::reference();
    let bounds = bounds_around(&p);
    let opts = FitOptions { max_iterations: 300, ..FitOptions::default() };
    let result = fit(&data, &model(), &p, &bounds, &opts).unwrap();
    assert!(result.objective.is_finite() && result.objective < result.initial_objective);
    let again = objective(&residuals(&result.params, &data, &model()).unwrap());
    assert!((again - result.objective).abs() <= 1e-10 * result.objective);
    // crossing of the fitted curves on a fine power grid
    let pump = DriveConfig::pump_only(result.params.rabi_calibration_kappa * REFERENCE_PUMP_POWER.sqrt());
    let m = deit_core::maxwell_bloch::match_group_velocities(&result.params, &pump, Signal::Hyperfine, (0.0, 150e-6), 1e-6)
        .unwrap();
    assert!(m.power > 25e-6 && m.power < 100e-6, "crossing at {} W", m.power);
}

#[test]
fn row_order_does_not_matter() {
    let data = sketch();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shuffled: Vec<Dataset> = data
        .iter()
        .map(|d| {
            let mut rows = d.rows().to_vec();
            rows.shuffle(&mut rng);
            Dataset::new(d.observable(), rows).unwrap()
        })
        .collect();
    assert_eq!(shuffled, data);
    let p = TripodParams::reference();
    let opts = FitOptions { max_iterations: 20, ..FitOptions::default() };
    let a = fit(&data, &model(), &p, &bounds_around(&p), &opts).unwrap();
    let b = fit(&shuffled, &model(), &p, &bounds_around(&p), &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn transmission_data_is_self_consistent() {
    let p = TripodParams::reference();
    let obs = Observable::Transmission { signal: Signal::Hyperfine, background: 20e-6 };
    let xs: Vec<f64> = (-3..=3).map(|k| hz_to_rad(2e5 * k as f64)).collect();
    let blank = Dataset::new(obs, xs.iter().map(|&x| Row { x, y: 0.0, sigma: None }).collect()).unwrap();
    let t = model().evaluate(&p, &blank).unwrap();
    assert!(t.iter().all(|v| *v > 0.0 && *v <= 1.0));
    assert!(t[3] > t[0] && t[3] > t[6], "window at two-photon resonance: {t:?}");
    let data = Dataset::new(obs, xs.iter().zip(&t).map(|(&x, &y)| Row { x, y, sigma: None }).collect()).unwrap();
    let parsed = Dataset::from_csv(&data.to_csv()).unwrap();
    let r = residuals(&p, &[parsed], &model()).unwrap();
    assert!(r.iter().all(|x| x.abs() < 1e-9), "{r:?}");
}

#[test]
fn csv_round_trip_and_errors() {
    let data = sketch();
    for d in &data {
        assert_eq!(&Dataset::from_csv(&d.to_csv()).unwrap(), d);
    }
    let text = "# observable: group-velocity-vs-preparation-power\n# signal: zeeman\n# preparation: hyperfine\npower_W,group_velocity_m_per_s\n0,1\n1e-6,2\n2e-6,3\n";
    assert!(matches!(Dataset::from_csv(text), Err(FitError::Dataset(_))), "three rows");
    let text = "# observable: group-velocity-vs-preparation-power\n# signal: zeeman\n# preparation: hyperfine\npower_W,v\n0,1\n1e-6,2\n2e-6,3\n3e-6,4\n";
    assert!(matches!(Dataset::from_csv(text), Err(FitError::Dataset(_))), "wrong column");
    let text = "# observable: group-velocity-vs-preparation-power\n# signal: zeeman\n# preparation: hyperfine\npower_W,group_velocity_m_per_s\n0,1\n1e-6,x\n";
    assert!(matches!(Dataset::from_csv(text), Err(FitError::Parse { line: 6, .. })));
    let rows = (0..4).map(|k| Row { x: k as f64, y: 1.0, sigma: Some(-1.0) }).collect();
    let obs = Observable::GroupVelocity { signal: Signal::Zeeman, preparation: Signal::Hyperfine };
    assert!(Dataset::new(obs, rows).is_err());
}

#[test]
fn bad_fit_requests_rejected() {
    let p = TripodParams::reference();
    let data = sketch();
    let outside = [Bound { parameter: FitParameter::ExchangeG, lo: 1e3, hi: 1e4 }];
    assert!(matches!(fit(&data, &model(), &p, &outside, &FitOptions::default()), Err(FitError::Bounds { .. })));
    let many: Vec<Bound> = FitParameter::ALL
        .iter()
        .chain(&[FitParameter::GammaHz])
        .map(|&parameter| Bound { parameter, lo: 1e-3, hi: 1e12 })
        .collect();
    assert_eq!(fit(&data, &model(), &p, &many, &FitOptions::default()), Err(FitError::TooManyParameters(9)));
}
