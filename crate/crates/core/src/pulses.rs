//! Classical drive profiles and single-photon field envelopes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::CsvTable;

/// Largest mixing-angle sine a sech drive may reach; Ω_A = g·tan θ_A is
/// capped where sin θ_A would cross it.
pub const MAX_SIN_THETA: f64 = 1.0 - 1e-6;

/// Gaussian pulses are integrated over `t_c ± GAUSSIAN_SUPPORT·Δ_t`.
pub const GAUSSIAN_SUPPORT: f64 = 5.0;

/// Half-width, in units of Δ_t, of the switching window of a sech drive.
pub const SECH_SUPPORT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn new(t0: f64, dt: f64, len: usize) -> Self {
        Self { t0, dt, len }
    }

    /// Grid covering `[t0, t1]` with spacing no larger than `max_dt`.
    pub fn covering(t0: f64, t1: f64, max_dt: f64) -> Self {
        let steps = ((t1 - t0) / max_dt).ceil().max(1.0) as usize;
        Self {
            t0,
            dt: (t1 - t0) / steps as f64,
            len: steps + 1,
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len.saturating_sub(1))
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|k| self.time(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PulseShape {
    Gaussian,
    /// Photon-emission drive: sin θ_A(t′) = √(2/(κΔ_t))·√(e^{2t′/Δ_t} sech(2t′/Δ_t)).
    SechEmit { kappa: f64, coupling: f64 },
    /// Time reverse of `SechEmit`, impedance matched to an incoming sech photon.
    SechAbsorb { kappa: f64, coupling: f64 },
    /// Linear interpolation through `(times, values)`, zero outside.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseProfile {
    pub shape: PulseShape,
    /// Peak Rabi frequency (plateau value for the sech drives).
    pub omega0: f64,
    pub t_c: f64,
    pub delta_t: f64,
    pub support: (f64, f64),
}

impl PulseProfile {
    pub fn gaussian(omega0: f64, t_c: f64, delta_t: f64) -> Self {
        Self {
            shape: PulseShape::Gaussian,
            omega0,
            t_c,
            delta_t,
            support: (
                t_c - GAUSSIAN_SUPPORT * delta_t,
                t_c + GAUSSIAN_SUPPORT * delta_t,
            ),
        }
    }

    pub fn sech_emit(kappa: f64, coupling: f64, t_c1: f64, delta_t: f64) -> Result<Self> {
        let peak = sech_plateau(kappa, delta_t)?;
        Ok(Self {
            shape: PulseShape::SechEmit { kappa, coupling },
            omega0: coupling * tan_from_sin(peak),
            t_c: t_c1,
            delta_t,
            support: (t_c1 - SECH_SUPPORT * delta_t, f64::INFINITY),
        })
    }

    pub fn sech_absorb(kappa: f64, coupling: f64, t_c2: f64, delta_t: f64) -> Result<Self> {
        let peak = sech_plateau(kappa, delta_t)?;
        Ok(Self {
            shape: PulseShape::SechAbsorb { kappa, coupling },
            omega0: coupling * tan_from_sin(peak),
            t_c: t_c2,
            delta_t,
            support: (f64::NEG_INFINITY, t_c2 + SECH_SUPPORT * delta_t),
        })
    }

    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        assert!(!times.is_empty());
        let omega0 = values.iter().cloned().fold(0.0, f64::max);
        let support = (times[0], *times.last().unwrap());
        Self {
            shape: PulseShape::Tabulated { times, values },
            omega0,
            t_c: 0.5 * (support.0 + support.1),
            delta_t: support.1 - support.0,
            support,
        }
    }

    /// Rabi frequency Ω_A(t).
    pub fn rabi(&self, t: f64) -> f64 {
        match &self.shape {
            PulseShape::Gaussian => gaussian_rabi(t, self),
            PulseShape::SechEmit { coupling, .. } | PulseShape::SechAbsorb { coupling, .. } => {
                coupling * tan_from_sin(self.mixing_sin(t).unwrap_or(0.0))
            }
            PulseShape::Tabulated { times, values } => interp_linear(times, values, t),
        }
    }

    /// sin θ_A(t) for the sech drives; `None` for other shapes.
    pub fn mixing_sin(&self, t: f64) -> Option<f64> {
        match self.shape {
            PulseShape::SechEmit { kappa, .. } => {
                Some(sech_mixing_raw(t - self.t_c, self.delta_t, kappa).min(MAX_SIN_THETA))
            }
            PulseShape::SechAbsorb { kappa, .. } => {
                Some(sech_mixing_raw(self.t_c - t, self.delta_t, kappa).min(MAX_SIN_THETA))
            }
            _ => None,
        }
    }

    /// sin θ_A(t) for any shape given the cavity coupling `g`: tan θ_A = Ω_A/g.
    pub fn mixing_sin_for(&self, t: f64, g: f64) -> f64 {
        self.mixing_sin(t).unwrap_or_else(|| {
            let tan = self.rabi(t) / g;
            tan / (1.0 + tan * tan).sqrt()
        })
    }

    /// `t, omega` table on the given grid.
    pub fn to_csv(&self, grid: &UniformGrid) -> String {
        let mut table = CsvTable::new(["t", "omega"]);
        for t in grid.times() {
            table.push(vec![t, self.rabi(t)]);
        }
        table.to_csv()
    }
}

fn tan_from_sin(s: f64) -> f64 {
    s / (1.0 - s * s).sqrt()
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    if x1 == x0 {
        return ys[k];
    }
    let w = (x - x0) / (x1 - x0);
    ys[k - 1] * (1.0 - w) + ys[k] * w
}

/// √(2/(κΔ_t))·√(e^{2u} sech(2u)), u = t′/Δ_t, written to stay finite for large |u|.
fn sech_mixing_raw(t_prime: f64, delta_t: f64, kappa: f64) -> f64 {
    let u = t_prime / delta_t;
    // e^{2u} sech(2u) = 2 / (1 + e^{-4u})
    let inner = 2.0 / (1.0 + (-4.0 * u).exp());
    (2.0 / (kappa * delta_t) * inner).sqrt()
}

/// Plateau of the sech drives, √(4/(κΔ_t)); errors if it reaches the cap.
fn sech_plateau(kappa: f64, delta_t: f64) -> Result<f64> {
    let sup = (4.0 / (kappa * delta_t)).sqrt();
    if !(sup < MAX_SIN_THETA) {
        return Err(Error::UnphysicalMixing { value: sup });
    }
    Ok(sup)
}

pub fn gaussian_rabi(t: f64, p: &PulseProfile) -> f64 {
    let x = (t - p.t_c) / p.delta_t;
    p.omega0 * (-x * x).exp()
}

/// sin θ_A of the emission drive at time `t`, clamped to [0, 1-1e-6].
pub fn sech_emit_mixing(t: f64, t_c1: f64, delta_t: f64, kappa: f64) -> Result<f64> {
    sech_plateau(kappa, delta_t)?;
    Ok(sech_mixing_raw(t - t_c1, delta_t, kappa).clamp(0.0, MAX_SIN_THETA))
}

/// sin θ_A of the absorption drive; the time reverse of [`sech_emit_mixing`].
pub fn sech_absorb_mixing(t: f64, t_c2: f64, delta_t: f64, kappa: f64) -> Result<f64> {
    sech_emit_mixing(2.0 * t_c2 - t, t_c2, delta_t, kappa)
}

/// Ideal emitted photon for the sech drive: sech(2(t - t_c)/Δ_t)/√Δ_t.
pub fn sech_photon(t: f64, t_c: f64, delta_t: f64) -> f64 {
    let u = 2.0 * (t - t_c) / delta_t;
    1.0 / (u.cosh() * delta_t.sqrt())
}

/// Photon wavefunction sampled on a uniform grid (units 1/√time).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEnvelope {
    pub grid: UniformGrid,
    pub values: Vec<Complex64>,
}

impl FieldEnvelope {
    pub fn zeros(grid: UniformGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len],
        }
    }

    pub fn from_fn(grid: UniformGrid, f: impl Fn(f64) -> Complex64) -> Self {
        Self {
            grid,
            values: grid.times().map(f).collect(),
        }
    }

    /// ∫|f|² dt by the trapezoid rule.
    pub fn energy(&self) -> f64 {
        trapezoid(self.values.iter().map(|v| v.norm_sqr()), self.grid.dt)
    }

    /// ∫ conj(self)·other dt; the grids must coincide.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.check_grid(other)?;
        let n = self.values.len();
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            acc += a.conj() * b * w;
        }
        Ok(acc * self.grid.dt)
    }

    /// Normalized overlap ⟨self|other⟩ / (‖self‖‖other‖).
    pub fn normalized_overlap(&self, other: &Self) -> Result<Complex64> {
        let denom = (self.energy() * other.energy()).sqrt();
        Ok(self.inner(other)? / denom)
    }

    /// ‖self − reference‖ / ‖reference‖ in L2.
    pub fn relative_l2_error(&self, reference: &Self) -> Result<f64> {
        self.check_grid(reference)?;
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&reference.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .collect();
        let num = trapezoid(diff.into_iter(), self.grid.dt);
        Ok((num / reference.energy()).sqrt())
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Value at an arbitrary time by cubic (Catmull-Rom) interpolation; zero
    /// outside the grid.
    pub fn sample(&self, t: f64) -> Complex64 {
        let g = &self.grid;
        let x = (t - g.t0) / g.dt;
        let n = self.values.len();
        if n == 0 || x < -1e-9 || x > (n - 1) as f64 + 1e-9 {
            return Complex64::new(0.0, 0.0);
        }
        let x = x.clamp(0.0, (n - 1) as f64);
        let k = (x.floor() as usize).min(n.saturating_sub(2));
        let s = x - k as f64;
        let at = |i: isize| -> Complex64 {
            if i < 0 || i as usize >= n {
                Complex64::new(0.0, 0.0)
            } else {
                self.values[i as usize]
            }
        };
        let k = k as isize;
        let (p0, p1, p2, p3) = (at(k - 1), at(k), at(k + 1), at(k + 2));
        let s2 = s * s;
        let s3 = s2 * s;
        (p1 * 2.0
            + (p2 - p0) * s
            + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * s2
            + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * s3)
            * 0.5
    }

    /// Time span over which |f|² exceeds `rel` of its peak.
    pub fn support_width(&self, rel: f64) -> f64 {
        let peak = self.values.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let above = |v: &Complex64| v.norm_sqr() > rel * peak;
        let first = self.values.iter().position(above).unwrap_or(0);
        let last = self.values.iter().rposition(above).unwrap_or(0);
        (last - first) as f64 * self.grid.dt
    }

    pub fn to_csv(&self) -> String {
        let mut table = CsvTable::new(["t", "re", "im"]);
        for (t, v) in self.grid.times().zip(&self.values) {
            table.push(vec![t, v.re, v.im]);
        }
        table.to_csv()
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        let (a, b) = (&self.grid, &other.grid);
        if a.len != b.len
            || (a.dt - b.dt).abs() > 1e-12 * a.dt.abs()
            || (a.t0 - b.t0).abs() > 1e-9 * a.dt.abs()
        {
            return Err(Error::GridMismatch("field envelopes sampled on different grids"));
        }
        Ok(())
    }
}

pub(crate) fn trapezoid(values: impl Iterator<Item = f64>, dt: f64) -> f64 {
    let mut sum = 0.0;
    let mut first = None;
    let mut last = 0.0;
    for v in values {
        if first.is_none() {
            first = Some(v);
        }
        sum += v;
        last = v;
    }
    match first {
        None => 0.0,
        Some(f) => (sum - 0.5 * (f + last)) * dt,
    }
}

/// Adiabatic output pulse f(t) = √κ·sin θ_A(t)·exp[−(κ/2)∫ sin²θ_A dτ], with the
/// integral accumulated from the first grid point by the trapezoid rule.
pub fn analytic_output_pulse(sin_theta: &[f64], kappa: f64, grid: &UniformGrid) -> FieldEnvelope {
    assert_eq!(sin_theta.len(), grid.len);
    let mut values = Vec::with_capacity(grid.len);
    let mut integral = 0.0;
    for (k, &s) in sin_theta.iter().enumerate() {
        if k > 0 {
            let prev = sin_theta[k - 1];
            integral += 0.5 * (prev * prev + s * s) * grid.dt;
        }
        let f = kappa.sqrt() * s * (-0.5 * kappa * integral).exp();
        values.push(Complex64::new(f, 0.0));
    }
    FieldEnvelope {
        grid: *grid,
        values,
    }
}

/// Impedance-matching residual −d/dt ln sin θ_A + d/dt ln|f| − (κ/2) sin²θ_A at
/// grid time `t`, with central differences on the grid. Zero when an incoming
/// photon `f` is absorbed without reflection.
pub fn matching_residual(sin_theta: &[f64], f: &FieldEnvelope, kappa: f64, t: f64) -> Result<f64> {
    let g = &f.grid;
    if sin_theta.len() != g.len {
        return Err(Error::GridMismatch("mixing profile and envelope lengths differ"));
    }
    let k = ((t - g.t0) / g.dt).round();
    if k < 1.0 || k as usize + 1 >= g.len {
        return Err(Error::GridMismatch("residual requested outside grid interior"));
    }
    let k = k as usize;
    let s_peak = sin_theta.iter().cloned().fold(0.0, f64::max);
    let f_peak = f.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for j in [k - 1, k, k + 1] {
        if sin_theta[j] <= 1e-12 * s_peak || f.values[j].norm() <= 1e-12 * f_peak {
            return Err(Error::ZeroAmplitude { t: g.time(j) });
        }
    }
    let dln = |a: f64, b: f64| (b.ln() - a.ln()) / (2.0 * g.dt);
    let dln_s = dln(sin_theta[k - 1], sin_theta[k + 1]);
    let dln_f = dln(f.values[k - 1].norm(), f.values[k + 1].norm());
    let s = sin_theta[k];
    Ok(-dln_s + dln_f - 0.5 * kappa * s * s)
}
