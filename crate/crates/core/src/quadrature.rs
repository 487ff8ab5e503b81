//! Quadrature over the Gaussian distribution of velocity (Doppler) shifts.
//!
//! Two families of rules live here. Gauss–Hermite is cheap and exact for
//! smooth integrands, which is the case inside a narrow transparency window
//! where the response varies on the Doppler scale only. Away from two-photon
//! resonance the integrand carries homogeneous lines a few MHz wide on a
//! background hundreds of MHz wide; for those the composite Gauss–Legendre
//! rule in [`VelocityRule::resolved`] concentrates panels on the lines.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::units::hz_to_rad;

/// Number of Gauss–Hermite nodes used for window-centre quantities.
pub const DEFAULT_HERMITE_NODES: usize = 64;
/// Velocity classes per slice in pulse propagation.
pub const PROPAGATION_NODES: usize = 16;

const LEGENDRE_POINTS: usize = 8;
const TRUNCATION_SIGMAS: f64 = 7.0;
const GROWTH: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("at least 8 nodes are required, got {0}")]
    TooFewNodes(usize),
    #[error("Doppler width must be finite and non-negative, got {0} Hz")]
    BadWidth(f64),
    #[error("integrand is not finite at node {index} (velocity detuning {velocity:.6e} rad/s)")]
    NonFinite { index: usize, velocity: f64 },
}

/// σ of the Gaussian with the given FWHM (Hz in, rad/s out).
pub fn sigma_from_fwhm(fwhm_hz: f64) -> f64 {
    hz_to_rad(fwhm_hz) / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Physicists' Gauss–Hermite nodes and weights (weight e^{−x²}), ascending.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Gauss–Legendre nodes and weights on [−1, 1], ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    let nf = n as f64;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// A homogeneous feature of the integrand: a line of half-width
/// `half_width` centred at velocity detuning `centre`, to be resolved over
/// `centre ± reach`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub centre: f64,
    pub half_width: f64,
    pub reach: f64,
}

/// Nodes (velocity detunings, rad/s) and normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl VelocityRule {
    /// Atoms at rest: a single node at zero.
    pub fn stationary() -> Self {
        VelocityRule { nodes: vec![0.0], weights: vec![1.0] }
    }

    pub fn gauss_hermite(fwhm_hz: f64, n: usize) -> Result<Self, QuadratureError> {
        if !(fwhm_hz >= 0.0) || !fwhm_hz.is_finite() {
            return Err(QuadratureError::BadWidth(fwhm_hz));
        }
        if n < 8 {
            return Err(QuadratureError::TooFewNodes(n));
        }
        let sigma = sigma_from_fwhm(fwhm_hz);
        let (x, w) = gauss_hermite(n);
        let norm = std::f64::consts::PI.sqrt();
        let nodes = x.iter().map(|xi| std::f64::consts::SQRT_2 * sigma * xi).collect();
        let mut weights: Vec<f64> = w.iter().map(|wi| wi / norm).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|wi| *wi /= total);
        Ok(VelocityRule { nodes, weights })
    }

    /// Composite Gauss–Legendre rule against the Gaussian weight, with panels
    /// of width `half_width` across each feature and geometrically growing
    /// panels (capped at σ/4) elsewhere, truncated at ±7σ.
    pub fn resolved(fwhm_hz: f64, features: &[Feature]) -> Result<Self, QuadratureError> {
        if !(fwhm_hz >= 0.0) || !fwhm_hz.is_finite() {
            return Err(QuadratureError::BadWidth(fwhm_hz));
        }
        let sigma = sigma_from_fwhm(fwhm_hz);
        if sigma == 0.0 {
            return Ok(Self::stationary());
        }
        let edge = TRUNCATION_SIGMAS * sigma;
        let cap = 0.25 * sigma;
        let fine = features
            .iter()
            .map(|f| f.half_width)
            .filter(|w| *w > 0.0)
            .fold(cap, f64::min);
        let cores: Vec<(f64, f64, f64)> = features
            .iter()
            .filter(|f| f.half_width > 0.0)
            .map(|f| (f.centre - f.reach, f.centre + f.reach, f.half_width.min(cap)))
            .collect();
        // local panel width: fine inside a core, growing linearly with the
        // distance to the nearest core outside
        let width_at = |x: f64| -> f64 {
            let mut h = cap;
            for &(a, b, w) in &cores {
                let d = if x < a { a - x } else if x > b { x - b } else { 0.0 };
                h = h.min(w + GROWTH * d);
            }
            h.max(fine.min(cap))
        };
        let mut breaks = vec![-edge];
        let mut x = -edge;
        while x < edge {
            let mut h = width_at(x);
            // do not step over the start of a finer region
            while h > 1.5 * width_at(x + h) {
                h *= 0.7;
            }
            x = (x + h).min(edge);
            breaks.push(x);
        }
        let (gx, gw) = gauss_legendre(LEGENDRE_POINTS);
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let mut nodes = Vec::with_capacity(breaks.len() * LEGENDRE_POINTS);
        let mut weights = Vec::with_capacity(breaks.len() * LEGENDRE_POINTS);
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for (xi, wi) in gx.iter().zip(&gw) {
                let v = mid + half * xi;
                let u = v / sigma;
                nodes.push(v);
                weights.push(wi * half * norm * (-0.5 * u * u).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(VelocityRule { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().cloned().zip(self.weights.iter().cloned())
    }

    /// Σ w_i f(v_i); stops at the first non-finite sample.
    pub fn average<F>(&self, mut f: F) -> Result<C64, QuadratureError>
    where
        F: FnMut(f64) -> C64,
    {
        let mut acc = C64::new(0.0, 0.0);
        for (index, (v, w)) in self.iter().enumerate() {
            let y = f(v);
            if !(y.re.is_finite() && y.im.is_finite()) {
                return Err(QuadratureError::NonFinite { index, velocity: v });
            }
            acc += y * w;
        }
        Ok(acc)
    }
}

/// Gauss–Hermite average of `f` over a Gaussian of the given FWHM (Hz).
pub fn doppler_average<F>(f: F, fwhm_hz: f64, nodes: usize) -> Result<C64, QuadratureError>
where
    F: FnMut(f64) -> C64,
{
    VelocityRule::gauss_hermite(fwhm_hz, nodes)?.average(f)
}

/// Average of `f` with panels resolving the given features.
pub fn doppler_average_resolved<F>(
    f: F,
    fwhm_hz: f64,
    features: &[Feature],
) -> Result<C64, QuadratureError>
where
    F: FnMut(f64) -> C64,
{
    VelocityRule::resolved(fwhm_hz, features)?.average(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_sixteen_extreme_node() {
        let (x, w) = gauss_hermite(16);
        assert!((x[15] - 4.688_738_939_305_818).abs() < 1e-12);
        let s: f64 = w.iter().sum();
        assert!((s - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let int = |k: i32| x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k)).sum::<f64>();
        assert!((int(0) - 2.0).abs() < 1e-14);
        assert!((int(14) - 2.0 / 15.0).abs() < 1e-14);
        assert!(int(7).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        let rule = VelocityRule::gauss_hermite(500e6, 64).unwrap();
        let s = sigma_from_fwhm(500e6);
        let m2 = rule.average(|v| C64::new((v / s).powi(2), 0.0)).unwrap();
        let m4 = rule.average(|v| C64::new((v / s).powi(4), 0.0)).unwrap();
        assert!((m2.re - 1.0).abs() < 1e-12);
        assert!((m4.re - 3.0).abs() < 1e-11);
    }

    #[test]
    fn constant_is_exact() {
        let c = C64::new(0.3, -1.7);
        let got = doppler_average(|_| c, 500e6, 64).unwrap();
        assert!((got - c).norm() < 1e-15);
        let r = VelocityRule::resolved(
            500e6,
            &[Feature { centre: 0.0, half_width: 5e7, reach: 3e8 }],
        )
        .unwrap();
        assert!((r.average(|_| c).unwrap() - c).norm() < 1e-14);
    }

    #[test]
    fn zero_width_limit() {
        let f = |v: f64| C64::new(1.0 / (1.0 + (v / 1e7).powi(2)), v / 1e8);
        let got = doppler_average(f, 1e-9, 16).unwrap();
        assert!((got - f(0.0)).norm() < 1e-10);
    }

    #[test]
    fn non_finite_sample_reports_node() {
        let err = doppler_average(|v| if v > 0.0 { C64::new(f64::NAN, 0.0) } else { C64::new(1.0, 0.0) }, 1e6, 8)
            .unwrap_err();
        match err {
            QuadratureError::NonFinite { index, velocity } => {
                assert_eq!(index, 4);
                assert!(velocity > 0.0);
            }
            other => panic!("{other}"),
        }
        assert!(matches!(doppler_average(|_| C64::new(0.0, 0.0), 1e6, 4), Err(QuadratureError::TooFewNodes(4))));
    }
}
