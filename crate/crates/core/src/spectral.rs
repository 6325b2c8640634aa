//! Dark states of the step-2 Hamiltonian, adiabatic tracking of the perturbed
//! dark eigenvalue E₀′(t) and the dynamical phase it accumulates.
//!
//! Sign convention: the tracked state evolves as exp(−i∫E₀′dt), so the phase
//! returned by [`dynamical_phase`] is φ = ∫Re E₀′ dt and the amplitude picks up
//! e^{−iφ}.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::CsvTable;
use crate::hamiltonian::{HamiltonianSpec, ShortHamiltonian};
use crate::hilbert::{build_basis, AtomBInit, Basis, StateVector};
use crate::params::ParameterSet;
use crate::pulses::UniformGrid;

type C = Complex64;

/// Overlap below which a tracking step is subdivided.
pub const REFINE_OVERLAP: f64 = 0.999;

/// Overlap at or below which tracking is declared lost.
pub const LOST_OVERLAP: f64 = 0.99;

const MAX_REFINE_DEPTH: u32 = 16;

/// cos θ|g1,0⟩ − sin θ|g2,1⟩ on the atom-A ⊗ cavity-A states of `basis`.
pub fn dark_state_a(basis: Arc<Basis>, theta: f64) -> StateVector {
    let (g, ca) = (basis.ground(), basis.cavity_a());
    let mut s = StateVector::zeros(basis);
    s.amps[g] = C::new(theta.cos(), 0.0);
    s.amps[ca] = C::new(-theta.sin(), 0.0);
    s
}

/// Normalized zero-energy dark state of the two-cavity system with atom B in
/// g0, truncated to the fiber modes |m| ≤ `mode_cutoff`.
pub fn total_dark_state(p: &ParameterSet, theta: f64, mode_cutoff: usize) -> StateVector {
    let basis = Arc::new(build_basis(AtomBInit::G0, mode_cutoff));
    let mut s = dark_state_a(basis.clone(), theta);
    let sin = theta.sin();
    s.amps[basis.cavity_b()] = C::new(sin, 0.0);
    let kp = p.kappa_prime();
    let dw = p.delta_omega();
    for m in basis.fiber_modes().filter(|m| m.rem_euclid(2) == 1) {
        s.amps[basis.fiber(m)] = C::new(0.0, -kp * 2.0 * sin / (m as f64 * dw));
    }
    s.normalize();
    s
}

#[derive(Debug, Clone)]
pub struct EigenTrack {
    pub times: Vec<f64>,
    pub eigenvalue: Vec<C>,
    pub eigenvector: Vec<StateVector>,
    /// Smallest |⟨v|v′⟩| over the (possibly refined) step ending at each
    /// time; 1 at the first point.
    pub continuity_overlap: Vec<f64>,
}

impl EigenTrack {
    pub fn to_csv(&self) -> String {
        let mut table = CsvTable::new(["t", "re_e", "im_e", "overlap"]);
        for k in 0..self.times.len() {
            table.push(vec![
                self.times[k],
                self.eigenvalue[k].re,
                self.eigenvalue[k].im,
                self.continuity_overlap[k],
            ]);
        }
        table.to_csv()
    }

    pub fn min_overlap(&self) -> f64 {
        self.continuity_overlap.iter().cloned().fold(1.0, f64::min)
    }
}

/// Eigenpairs of a general complex matrix from its Schur form.
pub fn eigenpairs(m: &DMatrix<C>) -> Vec<(C, DVector<C>)> {
    let n = m.nrows();
    let (q, t) = nalgebra::linalg::Schur::new(m.clone()).unpack();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let tiny = 1e-14 * scale;
    (0..n)
        .map(|k| {
            let lambda = t[(k, k)];
            let mut x = DVector::<C>::zeros(n);
            x[k] = C::new(1.0, 0.0);
            for i in (0..k).rev() {
                let s: C = (i + 1..=k).map(|j| t[(i, j)] * x[j]).sum();
                let mut d = t[(i, i)] - lambda;
                if d.norm() < tiny {
                    d = C::new(tiny, 0.0);
                }
                x[i] = -s / d;
            }
            let v = &q * x;
            let norm = v.norm();
            (lambda, v / C::new(norm, 0.0))
        })
        .collect()
}

fn abs_overlap(a: &DVector<C>, b: &DVector<C>) -> f64 {
    a.dotc(b).norm()
}

/// Tracking grid over the drive support with spacing Δ_t/50 and an even
/// number of intervals.
pub fn default_track_grid(spec: &HamiltonianSpec) -> UniformGrid {
    let d = &spec.drive;
    let (t0, t1) = d.support;
    let mut g = UniformGrid::covering(t0, t1, d.delta_t / 50.0);
    if (g.len - 1) % 2 == 1 {
        g = UniformGrid::covering(t0, t1, (t1 - t0) / g.len as f64);
    }
    g
}

/// Follow the eigenbranch of H(t) that starts as the θ = 0 dark state |g1⟩.
pub fn track_dark_branch(spec: &HamiltonianSpec, grid: &UniformGrid) -> Result<EigenTrack> {
    if grid.len < 2 {
        return Err(Error::InvalidSweep("tracking grid needs at least two points".into()));
    }
    let ham = ShortHamiltonian::new(spec.clone())?;
    let times: Vec<f64> = grid.times().collect();
    let spectra: Vec<Vec<(C, DVector<C>)>> = times
        .par_iter()
        .map(|&t| eigenpairs(&ham.at(t).entries))
        .collect();

    let dim = ham.basis().dim();
    let mut g1 = DVector::<C>::zeros(dim);
    g1[ham.basis().ground()] = C::new(1.0, 0.0);
    let (e0, v0) = pick_by_overlap(&spectra[0], &g1);

    let mut eigenvalue = vec![e0];
    let mut vectors = vec![v0];
    let mut continuity = vec![1.0];
    for k in 1..times.len() {
        let prev = vectors.last().unwrap().clone();
        let (e, v) = pick_by_overlap(&spectra[k], &prev);
        let mut ov = abs_overlap(&prev, &v);
        let mut chosen = (e, v);
        if ov < REFINE_OVERLAP {
            let (refined, worst) = refine(&ham, times[k - 1], &prev, times[k], 0)?;
            chosen = refined;
            ov = worst;
        }
        if ov <= LOST_OVERLAP {
            return Err(Error::TrackingLost {
                t: times[k],
                overlap: ov,
            });
        }
        eigenvalue.push(chosen.0);
        vectors.push(chosen.1);
        continuity.push(ov);
    }

    let basis = ham.basis().clone();
    let eigenvector = vectors
        .into_iter()
        .map(|v| {
            // fix the gauge so the |g1⟩ amplitude is real and non-negative
            let a = v[basis.ground()];
            let phase = if a.norm() > 0.0 { a.conj() / a.norm() } else { C::new(1.0, 0.0) };
            StateVector::from_amps(basis.clone(), v.iter().map(|z| z * phase).collect())
        })
        .collect();
    Ok(EigenTrack {
        times,
        eigenvalue,
        eigenvector,
        continuity_overlap: continuity,
    })
}

fn pick_by_overlap(spectrum: &[(C, DVector<C>)], reference: &DVector<C>) -> (C, DVector<C>) {
    spectrum
        .iter()
        .max_by(|a, b| {
            abs_overlap(reference, &a.1)
                .partial_cmp(&abs_overlap(reference, &b.1))
                .unwrap()
        })
        .cloned()
        .expect("non-empty spectrum")
}

/// Walk from `t_a` to `t_b` by bisection until every sub-step overlap reaches
/// [`REFINE_OVERLAP`]; returns the eigenpair at `t_b` and the worst overlap.
fn refine(
    ham: &ShortHamiltonian,
    t_a: f64,
    v_a: &DVector<C>,
    t_b: f64,
    depth: u32,
) -> Result<((C, DVector<C>), f64)> {
    let t_m = 0.5 * (t_a + t_b);
    let mid = pick_by_overlap(&eigenpairs(&ham.at(t_m).entries), v_a);
    let ov_mid = abs_overlap(v_a, &mid.1);
    let end = pick_by_overlap(&eigenpairs(&ham.at(t_b).entries), &mid.1);
    let ov_end = abs_overlap(&mid.1, &end.1);
    if depth >= MAX_REFINE_DEPTH || (ov_mid >= REFINE_OVERLAP && ov_end >= REFINE_OVERLAP) {
        return Ok((end, ov_mid.min(ov_end)));
    }
    let (mid, w1) = if ov_mid < REFINE_OVERLAP {
        refine(ham, t_a, v_a, t_m, depth + 1)?
    } else {
        (mid, ov_mid)
    };
    let (end, w2) = refine(ham, t_m, &mid.1, t_b, depth + 1)?;
    Ok((end, w1.min(w2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicalPhase {
    /// ∫Re E₀′ dt
    pub unwrapped: f64,
    /// `unwrapped` reduced to [0, 2π)
    pub wrapped: f64,
    /// ∫Im E₀′ dt; the branch amplitude decays by exp(decay_exponent)
    pub decay_exponent: f64,
}

pub fn dynamical_phase(track: &EigenTrack) -> DynamicalPhase {
    let re: Vec<f64> = track.eigenvalue.iter().map(|e| e.re).collect();
    let im: Vec<f64> = track.eigenvalue.iter().map(|e| e.im).collect();
    let phi = simpson_times(&track.times, &re);
    DynamicalPhase {
        unwrapped: phi,
        wrapped: wrap_2pi(phi),
        decay_exponent: simpson_times(&track.times, &im),
    }
}

pub fn wrap_2pi(x: f64) -> f64 {
    x.rem_euclid(std::f64::consts::TAU)
}

fn simpson_times(times: &[f64], f: &[f64]) -> f64 {
    if times.len() < 2 {
        return 0.0;
    }
    simpson(f, times[1] - times[0])
}

/// Composite Simpson rule on uniform samples; an odd interval count closes
/// with the 3/8 rule (or the trapezoid rule for a single interval).
pub fn simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * h * (f[0] + f[1]),
        _ => {
            let (even_end, tail) = if n.is_multiple_of(2) { (n, 0.0) } else {
                let k = n - 3;
                (k, 3.0 * h / 8.0 * (f[k] + 3.0 * f[k + 1] + 3.0 * f[k + 2] + f[k + 3]))
            };
            let mut s = 0.0;
            for i in (0..even_end).step_by(2) {
                s += f[i] + 4.0 * f[i + 1] + f[i + 2];
            }
            s * h / 3.0 + tail
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::assemble_short;
    use crate::pulses::PulseProfile;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn basis() -> Arc<Basis> {
        Arc::new(build_basis(AtomBInit::G0, 3))
    }

    #[test]
    fn dark_state_a_limits() {
        let b = basis();
        let s = dark_state_a(b.clone(), 0.0);
        assert_eq!(s.amps[b.ground()], C::new(1.0, 0.0));
        assert!((s.norm2() - 1.0).abs() < 1e-15);
        let s = dark_state_a(b.clone(), FRAC_PI_2);
        assert!((s.amps[b.cavity_a()] - C::new(-1.0, 0.0)).norm() < 1e-15);
        assert!(s.amps[b.ground()].norm() < 1e-15);
        // Ω_A = g_A
        let s = dark_state_a(b.clone(), (1.0f64).atan());
        assert!((s.amps[b.ground()].norm_sqr() - 0.5).abs() < 1e-15);
        assert!((s.amps[b.cavity_a()].norm_sqr() - 0.5).abs() < 1e-15);
        assert_eq!(FRAC_PI_4, (1.0f64).atan());
    }

    #[test]
    fn total_dark_state_structure() {
        let p = ParameterSet::short_regime_reference();
        let d = total_dark_state(&p, 0.0, 20);
        assert_eq!(d.amps[0], C::new(1.0, 0.0));
        assert!(d.amps[1..].iter().all(|a| a.norm() == 0.0));
        let d = total_dark_state(&p, 0.3, 20);
        for m in d.basis.fiber_modes() {
            let a = d.amps[d.basis.fiber(m)];
            assert_eq!(a.norm() > 0.0, m.rem_euclid(2) == 1, "mode {m}");
        }
        assert!((d.norm2() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn total_dark_state_is_null() {
        let mut p = ParameterSet::short_regime_reference();
        p.gamma = 0.0;
        p.kappa_f = 0.0;
        for m in [5usize, 10, 20, 40] {
            p.n_fiber_modes = m;
            let theta = (0.465f64).atan();
            let drive = PulseProfile::gaussian(p.g_a * theta.tan(), 0.0, 125.0);
            let spec = HamiltonianSpec::new(p.clone(), AtomBInit::G0, drive);
            let h = assemble_short(&spec, 0.0);
            let d = total_dark_state(&p, theta, m);
            let v = DVector::from_column_slice(&d.amps);
            let r = (&h.entries * v).norm();
            // symmetric truncation keeps the odd-mode sums cancelling exactly
            assert!(r < 1e-12 * p.g_a, "M={m}: residual {r}");
        }
    }

    #[test]
    fn eigenpairs_solve() {
        let m = DMatrix::from_fn(6, 6, |i, j| {
            C::new((i * 7 + j * 3) as f64 % 5.0 - 2.0, (i as f64 - j as f64) * 0.3)
        });
        for (l, v) in eigenpairs(&m) {
            let r = (&m * &v - &v * l).norm();
            assert!(r < 1e-10, "residual {r}");
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simpson_exactness() {
        let h = 0.1;
        for n in [2usize, 3, 4, 7, 10] {
            let f: Vec<f64> = (0..=n).map(|k| (k as f64 * h).powi(3)).collect();
            let exact = (n as f64 * h).powi(4) / 4.0;
            assert!((simpson(&f, h) - exact).abs() < 1e-12, "n={n}");
        }
        assert_eq!(simpson(&[2.0, 2.0], 3.0), 6.0);
    }

    fn small_spec(omega0: f64, init: AtomBInit) -> HamiltonianSpec {
        let mut p = ParameterSet::short_regime_reference();
        p.n_fiber_modes = 6;
        HamiltonianSpec::new(p, init, PulseProfile::gaussian(omega0, 0.0, 20.0))
    }

    #[test]
    fn undriven_branch_is_zero() {
        let spec = small_spec(0.0, AtomBInit::G2);
        let grid = UniformGrid::covering(-40.0, 40.0, 2.0);
        let track = track_dark_branch(&spec, &grid).unwrap();
        assert!(track.eigenvalue.iter().all(|e| e.norm() < 1e-9));
        let phase = dynamical_phase(&track);
        assert_eq!(phase.unwrapped, 0.0);
    }

    #[test]
    fn g0_branch_stays_dark() {
        let spec = small_spec(4.65, AtomBInit::G0);
        let grid = UniformGrid::covering(-60.0, 60.0, 1.0);
        let track = track_dark_branch(&spec, &grid).unwrap();
        for e in &track.eigenvalue {
            assert!(e.norm() < 1e-9 * spec.params.g_a, "{e}");
        }
        assert!(track.min_overlap() > LOST_OVERLAP);
    }

    #[test]
    fn first_order_oracle_for_weak_coupling() {
        // E₀′ ≈ −(g_B²/Δ)|⟨cavity B|D⟩|² while g_B²/Δ is small against the
        // gap to the nearest photonic supermode
        let mut p = ParameterSet::short_regime_reference();
        p.g_b = 1.0;
        let omega = 4.65;
        let theta = (omega / p.g_a).atan();
        let d = total_dark_state(&p, theta, p.n_fiber_modes);
        let oracle = -p.g_b * p.g_b / p.delta * d.amps[d.basis.cavity_b()].norm_sqr();
        let spec = HamiltonianSpec::new(p, AtomBInit::G2, PulseProfile::gaussian(omega, 0.0, 125.0))
            .with_coupling(crate::hamiltonian::BCoupling::Effective);
        let grid = UniformGrid::covering(-500.0, 0.0, 5.0);
        let track = track_dark_branch(&spec, &grid).unwrap();
        let e = track.eigenvalue.last().unwrap().re;
        assert!((e / oracle - 1.0).abs() < 0.1, "tracked {e}, oracle {oracle}");
    }

    #[test]
    fn constant_eigenvalue_phase() {
        let times: Vec<f64> = (0..11).map(|k| k as f64 * 0.5).collect();
        let b = basis();
        let track = EigenTrack {
            eigenvalue: vec![C::new(-0.3, 0.0); 11],
            eigenvector: vec![StateVector::unit(b, 0); 11],
            continuity_overlap: vec![1.0; 11],
            times,
        };
        let phi = dynamical_phase(&track);
        assert!((phi.unwrapped + 1.5).abs() < 1e-14);
        assert!((phi.wrapped - (std::f64::consts::TAU - 1.5)).abs() < 1e-14);
        assert_eq!(track.to_csv().lines().count(), 12);
    }
}
