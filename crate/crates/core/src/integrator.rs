//! Adaptive Dormand–Prince 5(4) integration of complex linear systems, used
//! for i·dψ/dt = H(t)ψ with non-Hermitian H and for the driven node
//! equations of the long-distance regime.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::export::CsvTable;
use crate::hilbert::{Basis, StateVector};

type C = Complex64;

const ZERO: C = C { re: 0.0, im: 0.0 };
const NEG_I: C = C { re: 0.0, im: -1.0 };

/// Default absolute and relative tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Default number of evenly spaced snapshots kept in a [`Trajectory`].
pub const DEFAULT_SNAPSHOTS: usize = 1000;

/// Time-dependent operator acting on amplitude vectors.
pub trait Generator {
    fn dim(&self) -> usize;

    /// out = H(t)·psi
    fn apply(&self, t: f64, psi: &[C], out: &mut [C]);
}

/// Generator that assembles a dense matrix on every call.
pub struct DenseGenerator<F> {
    dim: usize,
    assemble: F,
}

impl<F: Fn(f64) -> DMatrix<C>> DenseGenerator<F> {
    pub fn new(dim: usize, assemble: F) -> Self {
        Self { dim, assemble }
    }
}

impl<F: Fn(f64) -> DMatrix<C>> Generator for DenseGenerator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, t: f64, psi: &[C], out: &mut [C]) {
        let h = (self.assemble)(t);
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..self.dim).map(|j| h[(i, j)] * psi[j]).sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: DEFAULT_TOL,
            atol: DEFAULT_TOL,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output (Hairer & Wanner's contd5 coefficients).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrate y' = f(t, y) from `t0` to `t1` with error control, calling
/// `observe(k, t, y)` at every `sample_times[k]` (ascending, inside
/// `[t0, t1]`) by dense interpolation. Returns y(t1) and step statistics.
pub fn integrate<F, O>(
    mut rhs: F,
    y0: &[C],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
    sample_times: &[f64],
    mut observe: O,
) -> Result<(Vec<C>, StepStats)>
where
    F: FnMut(f64, &[C], &mut [C]),
    O: FnMut(usize, f64, &[C]),
{
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidInterval { t0, t1 });
    }
    let n = y0.len();
    let span = t1 - t0;
    let h_min = 1e-12 * span;
    let mut stats = StepStats::default();

    let mut y = y0.to_vec();
    let mut k1 = vec![ZERO; n];
    let mut k2 = vec![ZERO; n];
    let mut k3 = vec![ZERO; n];
    let mut k4 = vec![ZERO; n];
    let mut k5 = vec![ZERO; n];
    let mut k6 = vec![ZERO; n];
    let mut k7 = vec![ZERO; n];
    let mut tmp = vec![ZERO; n];
    let mut y_new = vec![ZERO; n];
    let mut dense = vec![ZERO; n];

    let mut next_sample = 0;
    while next_sample < sample_times.len() && sample_times[next_sample] <= t0 {
        observe(next_sample, sample_times[next_sample], &y);
        next_sample += 1;
    }

    rhs(t0, &y, &mut k1);
    stats.evaluations += 1;

    let mut h = opts
        .h_init
        .unwrap_or_else(|| initial_step(&y, &k1, span, opts))
        .min(opts.h_max)
        .min(span);
    let mut t = t0;
    let mut last_rejected = false;

    while t < t1 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::StepUnderflow { t, dt: h });
        }
        let mut final_step = false;
        if t + h >= t1 || t1 - (t + h) < h_min {
            h = t1 - t;
            final_step = true;
        }

        for i in 0..n {
            tmp[i] = y[i] + k1[i] * (h * A21);
        }
        rhs(t + C2 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
        }
        rhs(t + C3 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
        }
        rhs(t + C4 * h, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
        }
        rhs(t + C5 * h, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
        }
        let t_new = if final_step { t1 } else { t + h };
        rhs(t_new, &tmp, &mut k6);
        for i in 0..n {
            y_new[i] = y[i]
                + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * h;
        }
        rhs(t_new, &y_new, &mut k7);
        stats.evaluations += 6;

        let mut err2 = 0.0;
        let mut finite = true;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let sc = opts.atol + opts.rtol * y[i].norm().max(y_new[i].norm());
            err2 += (e.norm() / sc).powi(2);
            finite &= y_new[i].re.is_finite() && y_new[i].im.is_finite();
        }
        if !finite {
            return Err(Error::NonFiniteAmplitude { t: t_new });
        }
        // error per unit time
        let err = (err2 / n.max(1) as f64).sqrt() / h.abs().max(1e-300);

        if err <= 1.0 {
            stats.accepted += 1;
            // dense output on [t, t_new]
            if next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                let mut r3 = vec![ZERO; n];
                let mut r4 = vec![ZERO; n];
                let mut r5 = vec![ZERO; n];
                for i in 0..n {
                    let dy = y_new[i] - y[i];
                    let b = k1[i] * h - dy;
                    r3[i] = b;
                    r4[i] = dy - k7[i] * h - b;
                    r5[i] = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
                }
                while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                    let ts = sample_times[next_sample];
                    if ts >= t_new {
                        observe(next_sample, ts, &y_new);
                    } else {
                        let th = (ts - t) / h;
                        let th1 = 1.0 - th;
                        for i in 0..n {
                            dense[i] = y[i]
                                + (y_new[i] - y[i]
                                    + (r3[i] + (r4[i] + r5[i] * th1) * th) * th1)
                                    * th;
                        }
                        observe(next_sample, ts, &dense);
                    }
                    next_sample += 1;
                }
            }
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            if final_step {
                break;
            }
            let mut fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.25) };
            fac = fac.clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(opts.h_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.25)).max(0.2);
            last_rejected = true;
            if h < h_min {
                return Err(Error::StepUnderflow { t, dt: h });
            }
        }
    }
    Ok((y, stats))
}

fn initial_step(y: &[C], f: &[C], span: f64, opts: &OdeOptions) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(f) {
        let sc = opts.atol + opts.rtol * yi.norm();
        d0 += (yi.norm() / sc).powi(2);
        d1 += (fi.norm() / sc).powi(2);
    }
    let (d0, d1) = (d0.sqrt(), d1.sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span
    } else {
        0.01 * d0 / d1
    };
    h.min(span).max(1e-10 * span)
}

/// Solution of i·dψ/dt = H(t)ψ with evenly spaced snapshots.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub norm2: Vec<f64>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory has at least the end state")
    }

    /// CSV: `t, norm2`, then `re_k, im_k` for each requested basis index.
    pub fn to_csv(&self, indices: &[usize]) -> String {
        let mut header = vec!["t".to_string(), "norm2".to_string()];
        for &k in indices {
            header.push(format!("re_{k}"));
            header.push(format!("im_{k}"));
        }
        let mut table = CsvTable::new(header);
        for ((t, s), n2) in self.times.iter().zip(&self.states).zip(&self.norm2) {
            let mut row = vec![*t, *n2];
            for &k in indices {
                row.push(s.amps[k].re);
                row.push(s.amps[k].im);
            }
            table.push(row);
        }
        table.to_csv()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagateOptions {
    pub tol: f64,
    /// Number of interior snapshots; the endpoints are always kept.
    pub snapshots: usize,
    pub h_max: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            snapshots: DEFAULT_SNAPSHOTS,
            h_max: f64::INFINITY,
        }
    }
}

/// Propagate `psi0` under i·dψ/dt = H(t)ψ from `t0` to `t1`.
pub fn propagate<G: Generator + ?Sized>(
    h: &G,
    psi0: &StateVector,
    t0: f64,
    t1: f64,
    opts: &PropagateOptions,
) -> Result<Trajectory> {
    let n0 = psi0.norm2();
    if (n0 - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized { norm2: n0 });
    }
    propagate_unchecked(h, psi0, t0, t1, opts)
}

/// [`propagate`] without the unit-norm precondition (used for linearity checks).
pub fn propagate_unchecked<G: Generator + ?Sized>(
    h: &G,
    psi0: &StateVector,
    t0: f64,
    t1: f64,
    opts: &PropagateOptions,
) -> Result<Trajectory> {
    assert_eq!(h.dim(), psi0.amps.len(), "generator and state dimensions differ");
    let basis: Arc<Basis> = psi0.basis.clone();
    let count = opts.snapshots + 2;
    let sample_times: Vec<f64> = (0..count)
        .map(|k| t0 + (t1 - t0) * k as f64 / (count - 1) as f64)
        .collect();
    let mut times = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    let mut norm2 = Vec::with_capacity(count);

    let rhs = |t: f64, y: &[C], out: &mut [C]| {
        h.apply(t, y, out);
        out.iter_mut().for_each(|o| *o *= NEG_I);
    };
    let ode = OdeOptions {
        h_max: opts.h_max,
        ..OdeOptions::with_tol(opts.tol)
    };
    let (y_end, stats) = integrate(rhs, &psi0.amps, t0, t1, &ode, &sample_times[..count - 1], |_, t, y| {
        times.push(t);
        norm2.push(y.iter().map(|a| a.norm_sqr()).sum());
        states.push(StateVector::from_amps(basis.clone(), y.to_vec()));
    })?;
    times.push(t1);
    norm2.push(y_end.iter().map(|a| a.norm_sqr()).sum());
    states.push(StateVector::from_amps(basis, y_end));
    Ok(Trajectory {
        times,
        states,
        norm2,
        stats,
    })
}

/// Probability that a loss event occurred: 1 − ‖ψ(t1)‖².
pub fn loss_probability(traj: &Trajectory) -> f64 {
    1.0 - traj.norm2.last().copied().unwrap_or(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_basis, AtomBInit};
    use std::f64::consts::PI;

    fn basis(n: usize) -> Arc<Basis> {
        // any basis of the right size works for the generic tests
        let b = build_basis(AtomBInit::G0, 0);
        assert!(n <= b.dim());
        Arc::new(b)
    }

    struct Constant(DMatrix<C>);

    impl Generator for Constant {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, _t: f64, psi: &[C], out: &mut [C]) {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..psi.len()).map(|j| self.0[(i, j)] * psi[j]).sum();
            }
        }
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let b = basis(5);
        let h = Constant(DMatrix::zeros(5, 5));
        let mut psi = StateVector::zeros(b);
        psi.amps[0] = C::new(0.6, 0.0);
        psi.amps[3] = C::new(0.0, 0.8);
        let traj = propagate(&h, &psi, 0.0, 10.0, &PropagateOptions::default()).unwrap();
        assert_eq!(traj.final_state().amps, psi.amps);
    }

    #[test]
    fn rabi_oscillation() {
        let b = basis(5);
        let omega = 1.3;
        let mut m = DMatrix::zeros(5, 5);
        m[(0, 1)] = C::new(omega, 0.0);
        m[(1, 0)] = C::new(omega, 0.0);
        let h = Constant(m);
        let psi = StateVector::unit(b, 0);
        let t1 = PI / omega;
        let traj = propagate(&h, &psi, 0.0, t1, &PropagateOptions::default()).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let p1 = s.amps[1].norm_sqr();
            assert!((p1 - (omega * t).sin().powi(2)).abs() < 1e-8, "t={t}");
        }
        let fin = traj.final_state();
        assert!((fin.amps[0] - C::new(-1.0, 0.0)).norm() < 1e-8);
        let loss = loss_probability(&traj);
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn pure_decay() {
        let b = basis(5);
        let gamma = 0.7;
        let mut m = DMatrix::zeros(5, 5);
        m[(0, 0)] = C::new(0.0, -gamma / 2.0);
        let h = Constant(m);
        let psi = StateVector::unit(b, 0);
        let traj = propagate(&h, &psi, 0.0, 3.0, &PropagateOptions::default()).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!((s.amps[0].re - (-gamma * t / 2.0).exp()).abs() < 1e-8);
        }
        assert!((loss_probability(&traj) - (1.0 - (-gamma * 3.0f64).exp())).abs() < 1e-8);
        assert!(traj.norm2.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn dense_output_accuracy() {
        // y' = iωy sampled between steps
        let omega = 2.0;
        let samples: Vec<f64> = (0..=97).map(|k| k as f64 * 0.1013).collect();
        let mut worst: f64 = 0.0;
        integrate(
            |_, y, out| out[0] = y[0] * C::new(0.0, omega),
            &[C::new(1.0, 0.0)],
            0.0,
            10.0,
            &OdeOptions::with_tol(1e-10),
            &samples,
            |_, t, y| {
                let exact = C::new(0.0, omega * t).exp();
                worst = worst.max((y[0] - exact).norm());
            },
        )
        .unwrap();
        assert!(worst < 1e-8, "dense output error {worst}");
    }

    #[test]
    fn rejects_bad_interval_and_norm() {
        let b = basis(5);
        let h = Constant(DMatrix::zeros(5, 5));
        let psi = StateVector::unit(b.clone(), 0);
        assert!(matches!(
            propagate(&h, &psi, 1.0, 1.0, &PropagateOptions::default()),
            Err(Error::InvalidInterval { .. })
        ));
        let zero = StateVector::zeros(b);
        assert!(matches!(
            propagate(&h, &zero, 0.0, 1.0, &PropagateOptions::default()),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn blow_up_reported() {
        let r = integrate(
            |_, y, out| out[0] = y[0] * y[0] * y[0] * 1e3,
            &[C::new(1.0, 0.0)],
            0.0,
            10.0,
            &OdeOptions::default(),
            &[],
            |_, _, _| {},
        );
        assert!(matches!(
            r,
            Err(Error::StepUnderflow { .. }) | Err(Error::NonFiniteAmplitude { .. })
        ));
    }
}
