//! Rotating-frame Hamiltonian, Lindblad superoperator, steady states and
//! fixed-step time evolution of the 4×4 tripod density matrix.
//!
//! Density matrices are flattened row-major: element (i, j) sits at
//! `4 * i + j`.

use std::fmt::Write as _;

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::params::{DriveConfig, Field, TripodParams, LEVEL_E, LEVEL_H, LEVEL_Z};

pub type Matrix4c = SMatrix<C64, 4, 4>;
pub type Matrix16c = SMatrix<C64, 16, 16>;
pub type Vector16c = SVector<C64, 16>;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const LEVEL_NAMES: [&str; 4] = ["e", "z", "h", "p"];

#[inline]
pub fn vec_index(i: usize, j: usize) -> usize {
    4 * i + j
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiouvillianError {
    #[error("steady state is not unique (singular-value ratio {ratio:.3e})")]
    DegenerateSteadyState { ratio: f64 },
    #[error("time step {dt:.3e} s exceeds the stability bound; use dt <= {max_dt:.3e} s")]
    StepTooLarge { dt: f64, max_dt: f64 },
    #[error("state became non-finite at t = {time:.6e} s")]
    NonFinite { time: f64 },
    #[error("invalid drive schedule: {0}")]
    Schedule(String),
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
}

/// A 4×4 density matrix over the levels (e, z, h, p).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Matrix4c);

impl DensityMatrix {
    /// Wrap a matrix without checking the invariants.
    pub fn from_matrix(m: Matrix4c) -> Self {
        DensityMatrix(m)
    }

    /// Check hermiticity, trace and positivity before wrapping.
    pub fn new(m: Matrix4c) -> Result<Self, LiouvillianError> {
        let rho = DensityMatrix(m);
        rho.validate()?;
        Ok(rho)
    }

    pub fn pure_level(level: usize) -> Self {
        let mut m = Matrix4c::zeros();
        m[(level, level)] = C64::new(1.0, 0.0);
        DensityMatrix(m)
    }

    /// Projector onto the normalized pure state `psi`.
    pub fn pure_state(psi: [C64; 4]) -> Self {
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        let m = Matrix4c::from_fn(|i, j| psi[i] * psi[j].conj() / norm);
        DensityMatrix(m)
    }

    /// Diagonal state with the given populations (not renormalized).
    pub fn from_populations(pops: [f64; 4]) -> Self {
        let mut m = Matrix4c::zeros();
        for (k, p) in pops.iter().enumerate() {
            m[(k, k)] = C64::new(*p, 0.0);
        }
        DensityMatrix(m)
    }

    pub fn from_vec(v: &Vector16c) -> Self {
        DensityMatrix(Matrix4c::from_fn(|i, j| v[vec_index(i, j)]))
    }

    pub fn to_vec(&self) -> Vector16c {
        Vector16c::from_fn(|k, _| self.0[(k / 4, k % 4)])
    }

    pub fn matrix(&self) -> &Matrix4c {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn population(&self, level: usize) -> f64 {
        self.0[(level, level)].re
    }

    pub fn populations(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|k| self.population(k))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Largest |ρ_ij − conj(ρ_ji)|.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = self.hermitized().0;
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn hermitized(&self) -> Self {
        DensityMatrix((self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn validate(&self) -> Result<(), LiouvillianError> {
        if !self.is_finite() {
            return Err(LiouvillianError::InvalidState("non-finite entry".into()));
        }
        let herm = self.hermiticity_error();
        if herm > 1e-12 {
            return Err(LiouvillianError::InvalidState(format!("hermiticity error {herm:.3e}")));
        }
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(LiouvillianError::InvalidState(format!("trace {tr}")));
        }
        let min = self.min_eigenvalue();
        if min < -1e-10 {
            return Err(LiouvillianError::InvalidState(format!("eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// Max-norm distance between two states.
    pub fn max_diff(&self, other: &DensityMatrix) -> f64 {
        (self.0 - other.0).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// 4×4 table of (re, im) pairs, one CSV row per matrix row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row");
        for name in LEVEL_NAMES {
            let _ = write!(s, ",re_{name},im_{name}");
        }
        s.push('\n');
        for i in 0..4 {
            s.push_str(LEVEL_NAMES[i]);
            for j in 0..4 {
                let c = self.0[(i, j)];
                let _ = write!(s, ",{:.17e},{:.17e}", c.re, c.im);
            }
            s.push('\n');
        }
        s
    }
}

/// Element-wise decay structure shared by every representation of the
/// dissipator: repopulation terms plus a damping rate for each ρ_ij.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dissipation {
    /// Rate at which ρ_ij decays (does not include the Hamiltonian part).
    pub damping: [[f64; 4]; 4],
    /// Γ_g: population fed into level g from ρ_ee.
    pub branches: [f64; 4],
    /// Exchange rate G, z ⇄ h.
    pub exchange: f64,
}

impl Dissipation {
    pub fn new(p: &TripodParams) -> Self {
        let ge = p.gamma_e();
        let g = p.exchange_g;
        let mut damping = [[0.0; 4]; 4];
        // ½ × (sum of A†A weights on each index)
        let loss = |k: usize| -> f64 {
            match k {
                LEVEL_E => ge,
                LEVEL_Z | LEVEL_H => g,
                _ => 0.0,
            }
        };
        for (i, row) in damping.iter_mut().enumerate() {
            for (j, d) in row.iter_mut().enumerate() {
                *d = 0.5 * (loss(i) + loss(j));
                if i != j {
                    if i == LEVEL_E || j == LEVEL_E {
                        *d += p.extra_optical_dephasing;
                    } else {
                        *d += p.ground_dephasing(i, j);
                    }
                }
            }
        }
        let mut branches = [0.0; 4];
        for (k, b) in branches.iter_mut().enumerate().skip(1) {
            *b = p.branch(k);
        }
        Dissipation { damping, branches, exchange: g }
    }

    /// Dissipative part of dρ/dt.
    pub fn apply(&self, rho: &Matrix4c, out: &mut Matrix4c) {
        for i in 0..4 {
            for j in 0..4 {
                out[(i, j)] -= rho[(i, j)] * self.damping[i][j];
            }
        }
        let ree = rho[(LEVEL_E, LEVEL_E)];
        for g in 1..4 {
            out[(g, g)] += ree * self.branches[g];
        }
        out[(LEVEL_Z, LEVEL_Z)] += rho[(LEVEL_H, LEVEL_H)] * self.exchange;
        out[(LEVEL_H, LEVEL_H)] += rho[(LEVEL_Z, LEVEL_Z)] * self.exchange;
    }

    /// Largest damping rate of any element.
    pub fn max_rate(&self) -> f64 {
        self.damping.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// Rotating-frame Hamiltonian (units of rad/s, ħ = 1).
///
/// Each ground level g carries −(Δ_g − kv); the velocity shift `kv` is the
/// same for all three co-propagating fields.
pub fn build_hamiltonian(drives: &DriveConfig, velocity_detuning: f64) -> Matrix4c {
    let mut h = Matrix4c::zeros();
    for f in Field::ALL {
        let g = f.ground_level();
        h[(g, g)] = C64::new(-(drives.detuning(f) - velocity_detuning), 0.0);
        let o = drives.rabi(f);
        h[(LEVEL_E, g)] = -0.5 * o;
        h[(g, LEVEL_E)] = -0.5 * o.conj();
    }
    h
}

/// Right-hand side dρ/dt = −i[H, ρ] + dissipation, evaluated on the 4×4 matrix.
pub fn lindblad_rhs(h: &Matrix4c, diss: &Dissipation, rho: &Matrix4c) -> Matrix4c {
    let comm = h * rho - rho * h;
    let mut out = comm * (-I);
    diss.apply(rho, &mut out);
    out
}

/// Linear generator acting on the row-major flattened density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator(Box<Matrix16c>);

impl Superoperator {
    pub fn from_matrix(m: Matrix16c) -> Self {
        Superoperator(Box::new(m))
    }

    pub fn matrix(&self) -> &Matrix16c {
        &self.0
    }

    pub fn apply(&self, rho: &DensityMatrix) -> Matrix4c {
        let v = *self.0 * rho.to_vec();
        Matrix4c::from_fn(|i, j| v[vec_index(i, j)])
    }

    /// Largest |L_ij|, the natural scale for residuals.
    pub fn scale(&self) -> f64 {
        self.0.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest absolute row sum; bounds the spectral radius.
    pub fn row_sum_bound(&self) -> f64 {
        (0..16)
            .map(|r| self.0.row(r).iter().map(|c| c.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// max_ij |(Lρ)_ij|.
    pub fn residual(&self, rho: &DensityMatrix) -> f64 {
        self.apply(rho).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Assemble the superoperator for Hamiltonian `h` and the dissipators of `p`.
pub fn build_liouvillian(h: &Matrix4c, p: &TripodParams) -> Superoperator {
    build_liouvillian_with(h, &Dissipation::new(p))
}

pub fn build_liouvillian_with(h: &Matrix4c, diss: &Dissipation) -> Superoperator {
    let mut l = Matrix16c::zeros();
    for i in 0..4 {
        for j in 0..4 {
            let row = vec_index(i, j);
            for k in 0..4 {
                l[(row, vec_index(k, j))] += -I * h[(i, k)];
                l[(row, vec_index(i, k))] += I * h[(k, j)];
            }
            l[(row, row)] -= C64::new(diss.damping[i][j], 0.0);
        }
    }
    let ee = vec_index(LEVEL_E, LEVEL_E);
    for g in 1..4 {
        l[(vec_index(g, g), ee)] += C64::new(diss.branches[g], 0.0);
    }
    let zz = vec_index(LEVEL_Z, LEVEL_Z);
    let hh = vec_index(LEVEL_H, LEVEL_H);
    l[(zz, hh)] += C64::new(diss.exchange, 0.0);
    l[(hh, zz)] += C64::new(diss.exchange, 0.0);
    Superoperator::from_matrix(l)
}

/// Row index replaced by the trace functional in constrained solves.
pub const TRACE_ROW: usize = 0;

/// Copy of L with the (e, e) row replaced by the trace functional.
pub fn trace_constrained(l: &Superoperator) -> Matrix16c {
    let mut a = *l.0;
    for c in 0..16 {
        a[(TRACE_ROW, c)] = C64::new(0.0, 0.0);
    }
    for k in 0..4 {
        a[(TRACE_ROW, vec_index(k, k))] = C64::new(1.0, 0.0);
    }
    a
}

fn unit_trace_rhs() -> Vector16c {
    let mut b = Vector16c::zeros();
    b[TRACE_ROW] = C64::new(1.0, 0.0);
    b
}

/// Ratio of the second-smallest to the largest singular value of L.
pub fn null_space_gap(l: &Superoperator) -> f64 {
    let scale = l.scale();
    if scale == 0.0 {
        return 0.0;
    }
    let sv = (*l.0 / C64::new(scale, 0.0)).singular_values();
    let mut s: Vec<f64> = sv.iter().cloned().collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if s[15] == 0.0 {
        return 0.0;
    }
    s[1] / s[15]
}

/// Relative threshold below which a singular value counts as zero.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;

/// Unique steady state of `l`.
///
/// Fails with [`LiouvillianError::DegenerateSteadyState`] when the null space
/// of L is more than one-dimensional.
pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix, LiouvillianError> {
    let ratio = null_space_gap(l);
    if ratio < DEGENERACY_THRESHOLD {
        return Err(LiouvillianError::DegenerateSteadyState { ratio });
    }
    solve_constrained(l)
}

/// Steady state without the SVD degeneracy test; an LU pivot check stands in
/// for it. Used in inner loops where the configuration is known to be sound.
pub fn steady_state_fast(l: &Superoperator) -> Result<DensityMatrix, LiouvillianError> {
    solve_constrained(l)
}

/// LU factorization of a trace-constrained Liouvillian.
pub struct ConstrainedSolver {
    lu: nalgebra::LU<C64, nalgebra::U16, nalgebra::U16>,
}

/// Pivot ratio below which the constrained matrix is treated as singular.
const PIVOT_RATIO: f64 = 1e-14;

impl ConstrainedSolver {
    pub fn new(l: &Superoperator) -> Result<Self, LiouvillianError> {
        Self::from_constrained(trace_constrained(l))
    }

    pub fn from_constrained(a: Matrix16c) -> Result<Self, LiouvillianError> {
        let lu = a.lu();
        let u = lu.u();
        let mut big = 0.0f64;
        let mut small = f64::INFINITY;
        for k in 0..16 {
            let d = u[(k, k)].norm();
            big = big.max(d);
            small = small.min(d);
        }
        let ratio = if big > 0.0 { small / big } else { 0.0 };
        if !(ratio > PIVOT_RATIO) {
            return Err(LiouvillianError::DegenerateSteadyState { ratio });
        }
        Ok(ConstrainedSolver { lu })
    }

    /// Solve with the trace row of `b` taken as given.
    pub fn solve(&self, b: &Vector16c) -> Vector16c {
        self.lu.solve(b).expect("factorization checked at construction")
    }

    /// The unit-trace stationary state.
    pub fn stationary(&self) -> Vector16c {
        self.solve(&unit_trace_rhs())
    }
}

fn solve_constrained(l: &Superoperator) -> Result<DensityMatrix, LiouvillianError> {
    let x = ConstrainedSolver::new(l)?.stationary();
    let rho = DensityMatrix::from_vec(&x).hermitized();
    if !rho.is_finite() {
        return Err(LiouvillianError::NonFinite { time: f64::INFINITY });
    }
    Ok(rho)
}

/// Steady state reached from `rho_init` when L has several stationary states.
///
/// Projects `rho_init` onto the null space of L along its range, using the
/// conserved quantities (left null vectors) to fix the weights.
pub fn steady_state_in_sector(
    l: &Superoperator,
    rho_init: &DensityMatrix,
) -> Result<DensityMatrix, LiouvillianError> {
    let scale = l.scale();
    let m = *l.0 / C64::new(scale.max(f64::MIN_POSITIVE), 0.0);
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let largest = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let null: Vec<usize> = (0..16)
        .filter(|&k| svd.singular_values[k] <= DEGENERACY_THRESHOLD * largest)
        .collect();
    let k = null.len();
    if k == 0 {
        return Err(LiouvillianError::DegenerateSteadyState { ratio: 1.0 });
    }
    // right null vectors: rows of V^H; left null vectors: columns of U.
    let right: Vec<Vector16c> = null
        .iter()
        .map(|&c| Vector16c::from_fn(|r, _| vt[(c, r)].conj()))
        .collect();
    let left: Vec<Vector16c> = null
        .iter()
        .map(|&c| Vector16c::from_fn(|r, _| u[(r, c)]))
        .collect();
    let x0 = rho_init.to_vec();
    let mut gram = nalgebra::DMatrix::<C64>::zeros(k, k);
    let mut rhs = nalgebra::DVector::<C64>::zeros(k);
    for a in 0..k {
        rhs[a] = left[a].dotc(&x0);
        for b in 0..k {
            gram[(a, b)] = left[a].dotc(&right[b]);
        }
    }
    let coeff = gram
        .lu()
        .solve(&rhs)
        .ok_or(LiouvillianError::DegenerateSteadyState { ratio: 0.0 })?;
    let mut x = Vector16c::zeros();
    for b in 0..k {
        x += right[b] * coeff[b];
    }
    let mut rho = DensityMatrix::from_vec(&x).hermitized();
    let tr = rho.trace();
    if tr.norm() > 0.0 {
        rho = DensityMatrix::from_matrix(rho.0 / tr);
    }
    Ok(rho)
}

/// Time profile of one drive segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    Constant,
    /// Gaussian in amplitude with the given intensity FWHM, centred at `center`.
    Gaussian { center: f64, fwhm: f64 },
    /// Smooth (1 − cos)/2 ramp from 0 to the amplitude across the segment.
    RampUp,
    /// Smooth (1 + cos)/2 ramp from the amplitude to 0 across the segment.
    RampDown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub envelope: Envelope,
    pub amplitude: C64,
}

impl Segment {
    pub fn new(start: f64, end: f64, envelope: Envelope, amplitude: C64) -> Self {
        Segment { start, end, envelope, amplitude }
    }

    pub fn value(&self, t: f64) -> C64 {
        let x = (t - self.start) / (self.end - self.start);
        let shape = match self.envelope {
            Envelope::Constant => 1.0,
            Envelope::Gaussian { center, fwhm } => {
                // intensity FWHM → amplitude exp(−2 ln2 (t−c)²/fwhm²)
                let u = (t - center) / fwhm;
                (-2.0 * std::f64::consts::LN_2 * u * u).exp()
            }
            Envelope::RampUp => 0.5 * (1.0 - (std::f64::consts::PI * x).cos()),
            Envelope::RampDown => 0.5 * (1.0 + (std::f64::consts::PI * x).cos()),
        };
        self.amplitude * shape
    }
}

/// Piecewise time dependence of the three Rabi envelopes.
///
/// Detunings are constant and taken from `detunings`; its Rabi entries are
/// ignored. A field with no segment covering `t` is zero at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSchedule {
    pub detunings: DriveConfig,
    segments: [Vec<Segment>; 3],
}

fn field_slot(f: Field) -> usize {
    f.ground_level() - 1
}

impl DriveSchedule {
    pub fn new(detunings: DriveConfig) -> Self {
        DriveSchedule { detunings, segments: Default::default() }
    }

    /// Schedule holding every field of `drives` constant over `[t0, t1)`.
    pub fn constant(drives: DriveConfig, t0: f64, t1: f64) -> Self {
        let mut s = DriveSchedule::new(drives);
        for f in Field::ALL {
            let o = drives.rabi(f);
            if o != C64::new(0.0, 0.0) {
                s.segments[field_slot(f)].push(Segment::new(t0, t1, Envelope::Constant, o));
            }
        }
        s
    }

    /// Append a segment for `field`; it must start where the previous ends.
    pub fn push(&mut self, field: Field, seg: Segment) -> Result<&mut Self, LiouvillianError> {
        if !(seg.start.is_finite() && seg.end.is_finite()) || seg.end <= seg.start {
            return Err(LiouvillianError::Schedule(format!(
                "{field} segment [{}, {}) is empty or non-finite",
                seg.start, seg.end
            )));
        }
        if !(seg.amplitude.re.is_finite() && seg.amplitude.im.is_finite()) {
            return Err(LiouvillianError::Schedule(format!("{field} amplitude is not finite")));
        }
        let list = &mut self.segments[field_slot(field)];
        if let Some(last) = list.last() {
            let tol = 1e-12 * last.end.abs().max(seg.start.abs()).max(1e-9);
            if (seg.start - last.end).abs() > tol {
                return Err(LiouvillianError::Schedule(format!(
                    "{field} segment starting at {} does not continue the previous one ending at {}",
                    seg.start, last.end
                )));
            }
        }
        list.push(seg);
        Ok(self)
    }

    pub fn segments(&self, field: Field) -> &[Segment] {
        &self.segments[field_slot(field)]
    }

    pub fn rabi_at(&self, field: Field, t: f64) -> C64 {
        let list = &self.segments[field_slot(field)];
        // binary search on start times
        let idx = list.partition_point(|s| s.start <= t);
        if idx == 0 {
            return C64::new(0.0, 0.0);
        }
        let s = &list[idx - 1];
        if t < s.end || (idx == list.len() && t == s.end) {
            s.value(t)
        } else {
            C64::new(0.0, 0.0)
        }
    }

    pub fn drives_at(&self, t: f64) -> DriveConfig {
        let mut d = self.detunings;
        for f in Field::ALL {
            d.set_rabi(f, self.rabi_at(f, t));
        }
        d
    }

    /// Largest amplitude any segment of `field` reaches.
    pub fn peak_rabi(&self, field: Field) -> f64 {
        self.segments[field_slot(field)]
            .iter()
            .map(|s| s.amplitude.norm())
            .fold(0.0, f64::max)
    }

    /// Drives with every field at its peak amplitude.
    pub fn peak_drives(&self) -> DriveConfig {
        let mut d = self.detunings;
        for f in Field::ALL {
            d.set_rabi(f, C64::new(self.peak_rabi(f), 0.0));
        }
        d
    }
}

/// Largest total rate of the problem: row-sum bound of L with every field
/// at its peak amplitude.
pub fn rate_bound(schedule: &DriveSchedule, p: &TripodParams, velocity_detuning: f64) -> f64 {
    let h = build_hamiltonian(&schedule.peak_drives(), velocity_detuning);
    build_liouvillian(&h, p).row_sum_bound()
}

/// Courant-like factor: dt · rate_bound must not exceed this.
pub const STEP_FACTOR: f64 = 0.02;

/// Sampled trajectory of an evolve call.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

impl Trajectory {
    pub fn last(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory holds the initial state")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub velocity_detuning: f64,
    /// Store every n-th step (the final state is always stored).
    pub record_every: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { velocity_detuning: 0.0, record_every: 1 }
    }
}

/// Fixed-step RK4 integration of dρ/dt = L(t)ρ over `t_span`.
pub fn evolve(
    rho0: &DensityMatrix,
    schedule: &DriveSchedule,
    p: &TripodParams,
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory, LiouvillianError> {
    evolve_with(rho0, schedule, p, t_span, dt, EvolveOptions::default())
}

pub fn evolve_with(
    rho0: &DensityMatrix,
    schedule: &DriveSchedule,
    p: &TripodParams,
    t_span: (f64, f64),
    dt: f64,
    opts: EvolveOptions,
) -> Result<Trajectory, LiouvillianError> {
    let max_dt = STEP_FACTOR / rate_bound(schedule, p, opts.velocity_detuning);
    if !(dt > 0.0) || dt > max_dt * (1.0 + 1e-12) {
        return Err(LiouvillianError::StepTooLarge { dt, max_dt });
    }
    if !rho0.is_finite() {
        return Err(LiouvillianError::NonFinite { time: t_span.0 });
    }
    let (t0, t1) = t_span;
    let steps = ((t1 - t0) / dt).round().max(0.0) as usize;
    let h_step = if steps > 0 { (t1 - t0) / steps as f64 } else { 0.0 };
    let diss = Dissipation::new(p);
    let kv = opts.velocity_detuning;
    let ham = |t: f64| build_hamiltonian(&schedule.drives_at(t), kv);
    let stride = opts.record_every.max(1);

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps / stride + 2),
        states: Vec::with_capacity(steps / stride + 2),
    };
    let mut rho = *rho0.matrix();
    traj.times.push(t0);
    traj.states.push(*rho0);
    let half = C64::new(0.5 * h_step, 0.0);
    let full = C64::new(h_step, 0.0);
    let sixth = C64::new(h_step / 6.0, 0.0);
    for n in 0..steps {
        let t = t0 + n as f64 * h_step;
        // land exactly on t1 so a schedule ending there is still on
        let t_next = if n + 1 == steps { t1 } else { t0 + (n + 1) as f64 * h_step };
        let h0 = ham(t);
        let hm = ham(0.5 * (t + t_next));
        let h1 = ham(t_next);
        let k1 = lindblad_rhs(&h0, &diss, &rho);
        let k2 = lindblad_rhs(&hm, &diss, &(rho + k1 * half));
        let k3 = lindblad_rhs(&hm, &diss, &(rho + k2 * half));
        let k4 = lindblad_rhs(&h1, &diss, &(rho + k3 * full));
        rho += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * sixth;
        rho = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let state = DensityMatrix(rho);
        if !state.is_finite() {
            return Err(LiouvillianError::NonFinite { time: t_next });
        }
        if (n + 1) % stride == 0 || n + 1 == steps {
            traj.times.push(t_next);
            traj.states.push(state);
        }
    }
    Ok(traj)
}
