//! Single-excitation basis for atom A ⊗ cavity A ⊗ fiber ⊗ cavity B ⊗ atom B.
//!
//! Basis ordering (stable, relied upon by dumps and tests):
//!
//! 1. `|g1⟩_A` vacuum
//! 2. `|e⟩_A` vacuum
//! 3. `|g2⟩_A` with one photon in cavity A
//! 4. `|g2⟩_A` with one photon in fiber mode n, for n = -M..=M ascending
//! 5. `|g2⟩_A` with one photon in cavity B
//! 6. `|g2⟩_A` vacuum with atom B excited (only when atom B starts in g2)
//!
//! Atom B's ground label is `atom_b_init` on every state but the last.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomLevel {
    G0,
    G1,
    G2,
    E,
}

impl fmt::Display for AtomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::G0 => "g0",
            Self::G1 => "g1",
            Self::G2 => "g2",
            Self::E => "e",
        })
    }
}

/// Initial ground level of atom B during step 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomBInit {
    G0,
    G2,
}

impl AtomBInit {
    pub fn level(self) -> AtomLevel {
        match self {
            Self::G0 => AtomLevel::G0,
            Self::G2 => AtomLevel::G2,
        }
    }
}

impl std::str::FromStr for AtomBInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "g0" => Ok(Self::G0),
            "g2" => Ok(Self::G2),
            other => Err(format!("atom B must start in g0 or g2, got '{other}'")),
        }
    }
}

impl fmt::Display for AtomBInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.level().fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisLabel {
    pub atom_a: AtomLevel,
    pub n_cav_a: u8,
    pub fiber_occ: Option<i32>,
    pub n_cav_b: u8,
    pub atom_b: AtomLevel,
}

impl BasisLabel {
    /// Number of excitations shared between the atoms and the light field.
    pub fn excitation_number(&self) -> u32 {
        u32::from(matches!(self.atom_a, AtomLevel::G1 | AtomLevel::E))
            + u32::from(self.n_cav_a)
            + u32::from(self.fiber_occ.is_some())
            + u32::from(self.n_cav_b)
            + u32::from(self.atom_b == AtomLevel::E)
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fiber = match self.fiber_occ {
            Some(n) => format!("1[{n}]"),
            None => "0".into(),
        };
        write!(
            f,
            "{},{};{};{},{}",
            self.atom_a, self.n_cav_a, fiber, self.n_cav_b, self.atom_b
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    labels: Vec<BasisLabel>,
    index: HashMap<BasisLabel, usize>,
    mode_cutoff: usize,
    atom_b_init: AtomBInit,
    has_excited_b: bool,
}

impl Basis {
    pub fn labels(&self) -> &[BasisLabel] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn mode_cutoff(&self) -> usize {
        self.mode_cutoff
    }

    pub fn atom_b_init(&self) -> AtomBInit {
        self.atom_b_init
    }

    pub fn index_of(&self, label: &BasisLabel) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn ground(&self) -> usize {
        0
    }

    pub fn excited_a(&self) -> usize {
        1
    }

    pub fn cavity_a(&self) -> usize {
        2
    }

    /// Position of the fiber mode `n`, `-M <= n <= M`.
    pub fn fiber(&self, n: i32) -> usize {
        debug_assert!(n.unsigned_abs() as usize <= self.mode_cutoff);
        (3 + self.mode_cutoff as i64 + n as i64) as usize
    }

    pub fn fiber_modes(&self) -> impl Iterator<Item = i32> {
        let m = self.mode_cutoff as i32;
        -m..=m
    }

    pub fn cavity_b(&self) -> usize {
        4 + 2 * self.mode_cutoff
    }

    pub fn excited_b(&self) -> Option<usize> {
        self.has_excited_b.then(|| 5 + 2 * self.mode_cutoff)
    }

    /// JSON list of label strings, in basis order.
    pub fn to_json(&self) -> String {
        let names: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        serde_json::to_string_pretty(&names).expect("labels serialize")
    }
}

pub fn build_basis(atom_b_init: AtomBInit, mode_cutoff: usize) -> Basis {
    build_basis_with(atom_b_init, mode_cutoff, atom_b_init == AtomBInit::G2)
}

/// Like [`build_basis`], but the |e⟩_B label can be left out for a g2 atom B
/// (used when atom B is eliminated or decoupled).
pub fn build_basis_with(atom_b_init: AtomBInit, mode_cutoff: usize, excited_b: bool) -> Basis {
    let excited_b = excited_b && atom_b_init == AtomBInit::G2;
    let b = atom_b_init.level();
    let label = |atom_a, n_cav_a, fiber_occ, n_cav_b, atom_b| BasisLabel {
        atom_a,
        n_cav_a,
        fiber_occ,
        n_cav_b,
        atom_b,
    };
    let mut labels = vec![
        label(AtomLevel::G1, 0, None, 0, b),
        label(AtomLevel::E, 0, None, 0, b),
        label(AtomLevel::G2, 1, None, 0, b),
    ];
    let m = mode_cutoff as i32;
    labels.extend((-m..=m).map(|n| label(AtomLevel::G2, 0, Some(n), 0, b)));
    labels.push(label(AtomLevel::G2, 0, None, 1, b));
    if excited_b {
        labels.push(label(AtomLevel::G2, 0, None, 0, AtomLevel::E));
    }
    let index = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    Basis {
        labels,
        index,
        mode_cutoff,
        atom_b_init,
        has_excited_b: excited_b,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub basis: Arc<Basis>,
    pub amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zeros(basis: Arc<Basis>) -> Self {
        let amps = vec![Complex64::new(0.0, 0.0); basis.dim()];
        Self { basis, amps }
    }

    pub fn unit(basis: Arc<Basis>, index: usize) -> Self {
        let mut s = Self::zeros(basis);
        s.amps[index] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn from_amps(basis: Arc<Basis>, amps: Vec<Complex64>) -> Self {
        assert_eq!(basis.dim(), amps.len(), "amplitude count must match basis");
        Self { basis, amps }
    }

    pub fn norm2(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let n = self.norm2().sqrt();
        if n > 0.0 {
            self.amps.iter_mut().for_each(|a| *a /= n);
        }
    }

    /// CSV dump: `label,re,im` per basis state.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,re,im\n");
        for (l, a) in self.basis.labels().iter().zip(&self.amps) {
            s.push_str(&format!("\"{l}\",{},{}\n", fmt_f64(a.re), fmt_f64(a.im)));
        }
        s
    }
}

/// `⟨a|b⟩`, conjugating `a`.
pub fn overlap(a: &StateVector, b: &StateVector) -> Result<Complex64> {
    if !Arc::ptr_eq(&a.basis, &b.basis) && a.basis != b.basis {
        return Err(Error::BasisMismatch);
    }
    Ok(a.amps.iter().zip(&b.amps).map(|(x, y)| x.conj() * y).sum())
}
