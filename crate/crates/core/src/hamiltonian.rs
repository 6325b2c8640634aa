//! Non-Hermitian Hamiltonians for the gate's second step, the local cavity-B
//! node and the atom-B adiabatic transfer.
//!
//! Losses enter as negative imaginary diagonal terms (no-jump convention), so
//! the norm defect of a propagated state is the probability that a photon was
//! lost.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::hilbert::{build_basis_with, AtomBInit, Basis};
use crate::integrator::Generator;
use crate::params::ParameterSet;
use crate::pulses::PulseProfile;

/// Minimum Δ/g_B for the adiabatically eliminated atom-B term.
pub const EFFECTIVE_COUPLING_MARGIN: f64 = 50.0;

/// Default minimum Δ′/g_B for the atom-B transfer pulses.
pub const STIRAP_DETUNING_MARGIN: f64 = 20.0;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Dense operator over a [`Basis`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub basis: Arc<Basis>,
    pub entries: DMatrix<Complex64>,
}

impl OperatorMatrix {
    /// max |H − H†|.
    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.entries)
    }

    /// CSV of nonzero entries: `row,col,row_label,col_label,re,im`.
    pub fn to_csv(&self) -> String {
        let labels = self.basis.labels();
        let mut s = String::from("row,col,row_label,col_label,re,im\n");
        for j in 0..self.entries.ncols() {
            for i in 0..self.entries.nrows() {
                let v = self.entries[(i, j)];
                if v.norm() != 0.0 {
                    s.push_str(&format!(
                        "{i},{j},\"{}\",\"{}\",{},{}\n",
                        labels[i],
                        labels[j],
                        fmt_f64(v.re),
                        fmt_f64(v.im)
                    ));
                }
            }
        }
        s
    }
}

pub fn hermiticity_defect(m: &DMatrix<Complex64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// How atom B enters the step-2 Hamiltonian when it starts in g2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BCoupling {
    /// Explicit |e⟩_B level coupled with g_B at detuning Δ.
    Full,
    /// Dispersive shift −g_B²/Δ on the cavity-B photon.
    Effective,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub params: ParameterSet,
    pub atom_b_init: AtomBInit,
    pub b_coupling: BCoupling,
    pub drive: PulseProfile,
    /// Whether |e⟩_B decays at γ when `b_coupling` is `Full`.
    pub atom_b_decay: bool,
}

impl HamiltonianSpec {
    pub fn new(params: ParameterSet, atom_b_init: AtomBInit, drive: PulseProfile) -> Self {
        Self {
            params,
            atom_b_init,
            b_coupling: BCoupling::Full,
            drive,
            atom_b_decay: true,
        }
    }

    pub fn with_coupling(mut self, b: BCoupling) -> Self {
        self.b_coupling = b;
        self
    }

    pub fn check(&self) -> Result<()> {
        let p = &self.params;
        if self.b_coupling == BCoupling::Effective
            && self.atom_b_init == AtomBInit::G2
            && p.delta.abs() < EFFECTIVE_COUPLING_MARGIN * p.g_b
        {
            return Err(Error::EffectiveCouplingInvalid {
                delta: p.delta,
                required: EFFECTIVE_COUPLING_MARGIN * p.g_b,
            });
        }
        Ok(())
    }

    pub fn basis(&self) -> Basis {
        build_basis_with(
            self.atom_b_init,
            self.params.n_fiber_modes,
            self.b_coupling == BCoupling::Full,
        )
    }
}

/// Time-independent part of the step-2 Hamiltonian (drive switched off).
fn assemble_static(spec: &HamiltonianSpec, basis: &Basis) -> DMatrix<Complex64> {
    let p = &spec.params;
    let n = basis.dim();
    let mut h = DMatrix::<Complex64>::zeros(n, n);
    let (e, ca, cb) = (basis.excited_a(), basis.cavity_a(), basis.cavity_b());

    h[(e, e)] = Complex64::new(p.delta, -0.5 * p.gamma);
    h[(e, ca)] = c(p.g_a);
    h[(ca, e)] = c(p.g_a);

    let kp = p.kappa_prime();
    let dw = p.delta_omega();
    for m in basis.fiber_modes() {
        let f = basis.fiber(m);
        h[(f, f)] = Complex64::new(m as f64 * dw, -0.5 * p.kappa_f);
        // iκ′(a_A† c_n − c_n† a_A)
        h[(ca, f)] = I * kp;
        h[(f, ca)] = -I * kp;
        // iκ′(−1)^n (a_B† c_n − c_n† a_B)
        let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        h[(cb, f)] = I * kp * sign;
        h[(f, cb)] = -I * kp * sign;
    }

    if spec.atom_b_init == AtomBInit::G2 {
        match spec.b_coupling {
            BCoupling::Full => {
                let eb = basis.excited_b().expect("full coupling basis has |e>_B");
                let decay = if spec.atom_b_decay { p.gamma } else { 0.0 };
                h[(eb, eb)] = Complex64::new(p.delta, -0.5 * decay);
                h[(eb, cb)] = c(p.g_b);
                h[(cb, eb)] = c(p.g_b);
            }
            BCoupling::Effective => {
                h[(cb, cb)] += c(-p.g_b * p.g_b / p.delta);
            }
            BCoupling::None => {}
        }
    }
    h
}

/// Full step-2 Hamiltonian at time `t` over the basis of `spec`.
pub fn assemble_short(spec: &HamiltonianSpec, t: f64) -> OperatorMatrix {
    let basis = Arc::new(spec.basis());
    let mut h = assemble_static(spec, &basis);
    let omega = spec.drive.rabi(t);
    let (g, e) = (basis.ground(), basis.excited_a());
    h[(e, g)] = c(omega);
    h[(g, e)] = c(omega);
    OperatorMatrix { basis, entries: h }
}

/// Sparse triplet form used on the propagation hot path.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub dim: usize,
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl SparseOperator {
    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let mut entries = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.norm() != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self {
            dim: m.nrows(),
            entries,
        }
    }

    /// out = self·psi
    pub fn apply(&self, psi: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for &(i, j, v) in &self.entries {
            out[i] += v * psi[j];
        }
    }
}

/// Step-2 Hamiltonian prepared for propagation: the static part is assembled
/// once and the drive term added on every evaluation.
#[derive(Debug, Clone)]
pub struct ShortHamiltonian {
    spec: HamiltonianSpec,
    basis: Arc<Basis>,
    static_part: SparseOperator,
}

impl ShortHamiltonian {
    pub fn new(spec: HamiltonianSpec) -> Result<Self> {
        spec.check()?;
        let basis = Arc::new(spec.basis());
        let static_part = SparseOperator::from_dense(&assemble_static(&spec, &basis));
        Ok(Self {
            spec,
            basis,
            static_part,
        })
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn at(&self, t: f64) -> OperatorMatrix {
        let mut m = assemble_short(&self.spec, t);
        m.basis = self.basis.clone();
        m
    }
}

impl Generator for ShortHamiltonian {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply(&self, t: f64, psi: &[Complex64], out: &mut [Complex64]) {
        self.static_part.apply(psi, out);
        let omega = self.spec.drive.rabi(t);
        if omega != 0.0 {
            let (g, e) = (self.basis.ground(), self.basis.excited_a());
            out[e] += psi[g] * omega;
            out[g] += psi[e] * omega;
        }
    }
}

/// Cavity-B node over {a_B photon, |e⟩_B} for the long-distance regime (Δ = 0).
/// Zero for atom B in g0.
pub fn assemble_b_local(p: &ParameterSet, atom_b: AtomBInit) -> DMatrix<Complex64> {
    let mut h = DMatrix::<Complex64>::zeros(2, 2);
    if atom_b == AtomBInit::G2 {
        h[(0, 1)] = c(p.g_b);
        h[(1, 0)] = c(p.g_b);
        h[(1, 1)] = Complex64::new(0.0, -0.5 * p.gamma);
    }
    h
}

/// Pulse pair driving g1 ↔ e (Ω_1B) and g2 ↔ e (Ω_2B) on atom B.
#[derive(Debug, Clone, PartialEq)]
pub struct StirapPulses {
    pub omega_1b: PulseProfile,
    pub omega_2b: PulseProfile,
    pub detuning_margin: f64,
}

impl StirapPulses {
    pub fn window(&self) -> (f64, f64) {
        (
            self.omega_1b.support.0.min(self.omega_2b.support.0),
            self.omega_1b.support.1.max(self.omega_2b.support.1),
        )
    }
}

/// Index layout of the atom-B transfer Hamiltonian.
pub mod stirap_index {
    pub const G1: usize = 0;
    pub const E: usize = 1;
    pub const G2: usize = 2;
    pub const G2_PHOTON: usize = 3;
}

/// Atom-B transfer Hamiltonian over {g1, e, g2, g2 + cavity photon}.
///
/// Both drives sit at detuning Δ+Δ′ from |e⟩; the cavity photon state is Δ′
/// off two-photon resonance so that the cavity transition is detuned by Δ.
pub fn assemble_stirap(p: &ParameterSet, pulses: &StirapPulses, t: f64) -> Result<DMatrix<Complex64>> {
    let required = pulses.detuning_margin * p.g_b;
    if p.delta_prime < required {
        return Err(Error::DetuningTooSmall {
            delta_prime: p.delta_prime,
            required,
        });
    }
    Ok(stirap_matrix(p, pulses, t))
}

pub(crate) fn stirap_matrix(p: &ParameterSet, pulses: &StirapPulses, t: f64) -> DMatrix<Complex64> {
    use stirap_index::*;
    let mut h = DMatrix::<Complex64>::zeros(4, 4);
    h[(E, E)] = Complex64::new(p.delta + p.delta_prime, -0.5 * p.gamma);
    h[(G2_PHOTON, G2_PHOTON)] = Complex64::new(p.delta_prime, -0.5 * p.kappa);
    let o1 = pulses.omega_1b.rabi(t);
    let o2 = pulses.omega_2b.rabi(t);
    h[(E, G1)] = c(o1);
    h[(G1, E)] = c(o1);
    h[(E, G2)] = c(o2);
    h[(G2, E)] = c(o2);
    h[(E, G2_PHOTON)] = c(p.g_b);
    h[(G2_PHOTON, E)] = c(p.g_b);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::AtomLevel;
    use crate::params::validate;

    fn short_spec(init: AtomBInit, b: BCoupling) -> HamiltonianSpec {
        let p = validate(&ParameterSet::short_regime_reference()).unwrap();
        let drive = PulseProfile::gaussian(p.pulse.omega0, 0.0, p.pulse.delta_t);
        HamiltonianSpec::new(p, init, drive).with_coupling(b)
    }

    #[test]
    fn drive_matrix_element() {
        let spec = short_spec(AtomBInit::G0, BCoupling::Full);
        let t = 37.0;
        let h = assemble_short(&spec, t);
        let b = &h.basis;
        assert_eq!(h.entries[(b.excited_a(), b.ground())], c(spec.drive.rabi(t)));
        assert_eq!(h.entries[(b.excited_a(), b.cavity_a())], c(10.0));
    }

    #[test]
    fn fiber_coupling_and_signs() {
        let spec = short_spec(AtomBInit::G0, BCoupling::Full);
        let h = assemble_short(&spec, 0.0);
        let b = &h.basis;
        let kp = (7.5 / (2.0 * std::f64::consts::PI)).sqrt();
        for m in b.fiber_modes() {
            let f = b.fiber(m);
            assert!((h.entries[(b.cavity_a(), f)] - I * kp).norm() < 1e-15);
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            assert!((h.entries[(b.cavity_b(), f)] - I * kp * sign).norm() < 1e-15);
            assert!((h.entries[(f, f)].re - 7.5 * m as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn effective_shift() {
        let spec = short_spec(AtomBInit::G2, BCoupling::Effective);
        let h = assemble_short(&spec, 0.0);
        let cb = h.basis.cavity_b();
        assert!((h.entries[(cb, cb)] - c(-0.2)).norm() < 1e-15);
        assert!(h.basis.excited_b().is_none());
    }

    #[test]
    fn effective_requires_large_detuning() {
        let mut spec = short_spec(AtomBInit::G2, BCoupling::Effective);
        spec.params.delta = 100.0;
        assert!(matches!(
            ShortHamiltonian::new(spec),
            Err(Error::EffectiveCouplingInvalid { .. })
        ));
    }

    #[test]
    fn hermitian_without_loss() {
        for (init, b) in [
            (AtomBInit::G0, BCoupling::Full),
            (AtomBInit::G2, BCoupling::Full),
            (AtomBInit::G2, BCoupling::Effective),
        ] {
            let mut spec = short_spec(init, b);
            spec.params.gamma = 0.0;
            spec.params.kappa_f = 0.0;
            for t in [-300.0, -10.0, 0.0, 50.0] {
                let h = assemble_short(&spec, t);
                assert!(h.hermiticity_defect() < 1e-12 * spec.params.g_a);
            }
        }
    }

    #[test]
    fn loss_part_negative_semidefinite() {
        let mut spec = short_spec(AtomBInit::G2, BCoupling::Full);
        spec.params.kappa_f = 0.3;
        let h = assemble_short(&spec, 10.0).entries;
        let anti = (&h - h.adjoint()) * Complex64::new(0.0, -0.5);
        // (H − H†)/(2i) must be ≤ 0
        let eig = nalgebra::SymmetricEigen::new(anti.map(|z| z.re));
        assert!(eig.eigenvalues.iter().all(|&l| l <= 1e-12));
    }

    #[test]
    fn structure_whitelist() {
        for init in [AtomBInit::G0, AtomBInit::G2] {
            let spec = short_spec(init, BCoupling::Full);
            let h = assemble_short(&spec, 0.0);
            let labels = h.basis.labels();
            for i in 0..labels.len() {
                for j in 0..labels.len() {
                    if i == j || h.entries[(i, j)].norm() == 0.0 {
                        continue;
                    }
                    let (a, b) = (labels[i], labels[j]);
                    let pair = |x: &crate::hilbert::BasisLabel, y: &crate::hilbert::BasisLabel| {
                        let drive = x.atom_a == AtomLevel::E && y.atom_a == AtomLevel::G1;
                        let cav_a = x.atom_a == AtomLevel::E && y.n_cav_a == 1;
                        let fib_a = x.n_cav_a == 1 && y.fiber_occ.is_some();
                        let fib_b = x.n_cav_b == 1 && y.fiber_occ.is_some();
                        let cav_b = x.atom_b == AtomLevel::E && y.n_cav_b == 1;
                        drive || cav_a || fib_a || fib_b || cav_b
                    };
                    assert!(pair(&a, &b) || pair(&b, &a), "forbidden element {a} <-> {b}");
                    assert_eq!(a.excitation_number(), b.excitation_number());
                }
            }
        }
    }

    #[test]
    fn sparse_apply_matches_dense() {
        let spec = short_spec(AtomBInit::G2, BCoupling::Full);
        let gen = ShortHamiltonian::new(spec).unwrap();
        let n = gen.dim();
        let psi: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()))
            .collect();
        for t in [-100.0, 0.0, 12.5] {
            let dense = gen.at(t).entries;
            let expect = &dense * nalgebra::DVector::from_vec(psi.clone());
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            gen.apply(t, &psi, &mut out);
            for k in 0..n {
                assert!((out[k] - expect[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn b_local_operator() {
        let p = validate(&ParameterSet::long_regime_reference()).unwrap();
        assert!(assemble_b_local(&p, AtomBInit::G0).iter().all(|z| z.norm() == 0.0));
        let h = assemble_b_local(&p, AtomBInit::G2);
        assert_eq!(h[(0, 1)], c(8.0));
        assert_eq!(h[(1, 0)], c(8.0));
        let mut lossless = p.clone();
        lossless.gamma = 0.0;
        assert!(hermiticity_defect(&assemble_b_local(&lossless, AtomBInit::G2)) == 0.0);
    }

    #[test]
    fn stirap_structure_and_detuning_check() {
        let p = validate(&ParameterSet::short_regime_reference()).unwrap();
        let off = StirapPulses {
            omega_1b: PulseProfile::gaussian(0.0, 0.0, 10.0),
            omega_2b: PulseProfile::gaussian(0.0, 0.0, 10.0),
            detuning_margin: STIRAP_DETUNING_MARGIN,
        };
        let h = assemble_stirap(&p, &off, 0.0).unwrap();
        use stirap_index::*;
        for (i, j) in [(E, G1), (G1, E), (E, G2), (G2, E)] {
            assert_eq!(h[(i, j)], c(0.0));
        }
        let mut q = p.clone();
        q.delta_prime = 10.0 * q.g_b;
        assert!(matches!(
            assemble_stirap(&q, &off, 0.0),
            Err(Error::DetuningTooSmall { .. })
        ));
    }

    #[test]
    fn operator_csv_lists_nonzeros() {
        let spec = short_spec(AtomBInit::G0, BCoupling::Full);
        let h = assemble_short(&spec, 0.0);
        let nnz = h.entries.iter().filter(|z| z.norm() != 0.0).count();
        assert_eq!(h.to_csv().lines().count(), nnz + 1);
    }
}
