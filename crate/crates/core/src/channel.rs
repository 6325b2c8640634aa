//! Operator-sum description of the gate's second step, the optical-pumping
//! confinement map and the gate fidelity.
//!
//! Two-qubit basis order: |g0g0⟩, |g0g2⟩, |g1g0⟩, |g1g2⟩ (atom A first).

use nalgebra::{DMatrix, Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C = Complex64;

/// Positions in the 4×4 gate basis.
pub mod gate_index {
    pub const G0G0: usize = 0;
    pub const G0G2: usize = 1;
    pub const G1G0: usize = 2;
    pub const G1G2: usize = 3;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateChannel {
    pub p1: f64,
    pub p2: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub kraus: [Matrix4<C>; 3],
}

impl GateChannel {
    /// Σ Mᵢ†Mᵢ − I, max-abs entry.
    pub fn completeness_defect(&self) -> f64 {
        let sum: Matrix4<C> = self.kraus.iter().map(|m| m.adjoint() * m).sum();
        (sum - Matrix4::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            p1: f64,
            p2: f64,
            phi1: f64,
            phi2: f64,
            basis: [&'a str; 4],
            /// kraus[i][row][col] = [re, im]
            kraus: Vec<Vec<Vec<[f64; 2]>>>,
        }
        let kraus = self
            .kraus
            .iter()
            .map(|m| {
                (0..4)
                    .map(|r| (0..4).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
                    .collect()
            })
            .collect();
        serde_json::to_string_pretty(&Out {
            p1: self.p1,
            p2: self.p2,
            phi1: self.phi1,
            phi2: self.phi2,
            basis: ["g0g0", "g0g2", "g1g0", "g1g2"],
            kraus,
        })
        .expect("channel serializes")
    }
}

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange { name, value })
    }
}

pub fn build_channel(p1: f64, p2: f64, phi1: f64, phi2: f64) -> Result<GateChannel> {
    use gate_index::*;
    check_probability("P1", p1)?;
    check_probability("P2", p2)?;
    let one = C::new(1.0, 0.0);
    let m1 = Matrix4::from_diagonal(&Vector4::new(
        one,
        one,
        C::from_polar(p1.sqrt(), phi1),
        C::from_polar(p2.sqrt(), phi2),
    ));
    let mut m2 = Matrix4::zeros();
    m2[(G1G0, G1G0)] = C::new((1.0 - p1).sqrt(), 0.0);
    let mut m3 = Matrix4::zeros();
    m3[(G1G2, G1G2)] = C::new((1.0 - p2).sqrt(), 0.0);
    Ok(GateChannel {
        p1,
        p2,
        phi1,
        phi2,
        kraus: [m1, m2, m3],
    })
}

/// Checks that `rho` is a density matrix to 1e−10.
pub fn check_density(rho: &DMatrix<C>) -> Result<()> {
    const TOL: f64 = 1e-10;
    if rho.nrows() != rho.ncols() {
        return Err(Error::InvalidState("density matrix must be square"));
    }
    if (rho - rho.adjoint()).iter().any(|z| z.norm() > TOL) {
        return Err(Error::InvalidState("density matrix is not Hermitian"));
    }
    if (rho.trace() - C::new(1.0, 0.0)).norm() > TOL {
        return Err(Error::InvalidState("density matrix trace differs from 1"));
    }
    let eig = rho.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -TOL) {
        return Err(Error::InvalidState("density matrix has a negative eigenvalue"));
    }
    Ok(())
}

pub fn apply_channel(rho: &Matrix4<C>, ch: &GateChannel) -> Result<Matrix4<C>> {
    check_density(&DMatrix::from_iterator(4, 4, rho.iter().cloned()))?;
    Ok(ch.kraus.iter().map(|m| m * rho * m.adjoint()).sum())
}

fn check_amps(amps: &[C; 4]) -> Result<()> {
    let n2: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if (n2 - 1.0).abs() > 1e-9 {
        return Err(Error::UnnormalizedInput { norm2: n2 });
    }
    Ok(())
}

/// Closed-form gate fidelity for input amplitudes (α00, α02, α10, α12).
pub fn fidelity(amps: &[C; 4], p1: f64, p2: f64) -> Result<f64> {
    check_amps(amps)?;
    check_probability("P1", p1)?;
    check_probability("P2", p2)?;
    let w: [f64; 4] = amps.map(|a| a.norm_sqr());
    let coherent = w[0] + w[1] + w[2] * p1.sqrt() + w[3] * p2.sqrt();
    Ok((coherent * coherent + w[2] * w[2] * (1.0 - p1) + w[3] * w[3] * (1.0 - p2)).sqrt())
}

/// Fidelity from the channel output against the target
/// diag(1, 1, e^{iφ1}, e^{i(φ1+π)})·α.
pub fn fidelity_channel_crosscheck(amps: &[C; 4], ch: &GateChannel) -> Result<f64> {
    check_amps(amps)?;
    let psi = Vector4::from_column_slice(amps);
    let rho = psi * psi.adjoint();
    let out = apply_channel(&rho, ch)?;
    let phase = C::from_polar(1.0, ch.phi1);
    let target = Vector4::new(psi[0], psi[1], psi[2] * phase, -psi[3] * phase);
    let f2 = (target.adjoint() * out * target)[(0, 0)].re;
    Ok(f2.max(0.0).sqrt())
}

/// Ground levels of one atom in the two-atom 9-dimensional space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level3 {
    G0 = 0,
    G1 = 1,
    G2 = 2,
}

/// Index of |a, b⟩ in the 9-dimensional two-atom ground space.
pub fn idx9(a: Level3, b: Level3) -> usize {
    3 * a as usize + b as usize
}

/// Kraus operators of the pumping map: g2 → g1 on atom A and g1 → g2 on
/// atom B, incoherent, identity on the qubit subspace {g0, g1}_A ⊗ {g0, g2}_B.
pub fn pumping_kraus() -> Vec<DMatrix<C>> {
    let one = C::new(1.0, 0.0);
    // single-atom operators
    let mut keep_a = DMatrix::<C>::zeros(3, 3);
    keep_a[(0, 0)] = one;
    keep_a[(1, 1)] = one;
    let mut jump_a = DMatrix::<C>::zeros(3, 3);
    jump_a[(1, 2)] = one;
    let mut keep_b = DMatrix::<C>::zeros(3, 3);
    keep_b[(0, 0)] = one;
    keep_b[(2, 2)] = one;
    let mut jump_b = DMatrix::<C>::zeros(3, 3);
    jump_b[(2, 1)] = one;
    let mut out = Vec::with_capacity(4);
    for a in [&keep_a, &jump_a] {
        for b in [&keep_b, &jump_b] {
            out.push(a.kronecker(b));
        }
    }
    out
}

/// Apply the pumping map to a 9×9 two-atom density matrix.
pub fn optical_pumping_map(rho: &DMatrix<C>) -> DMatrix<C> {
    pumping_kraus().iter().map(|k| k * rho * k.adjoint()).sum()
}

/// Population form of the pumping map: `(pop_g2_a, pop_g1_b)` leaked
/// populations are added to `(pop_g1_a, pop_g2_b)`.
pub fn optical_pumping_populations(pop_a: [f64; 3], pop_b: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    (
        [pop_a[0], pop_a[1] + pop_a[2], 0.0],
        [pop_b[0], 0.0, pop_b[2] + pop_b[1]],
    )
}
