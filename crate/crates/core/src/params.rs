//! Physical parameters, validation and regime classification.
//!
//! All quantities are expressed in units of the cavity decay rate: rates in
//! κ, times in 1/κ and lengths in c/κ. Nothing here enforces `kappa == 1`,
//! but the presets and the config defaults follow that convention.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when both `delta_omega` and `fiber_length` are given.
pub const GEOMETRY_RTOL: f64 = 1e-9;

/// Default margin for `Δ_t ≫ 2L/c`.
pub const DEFAULT_SHORT_MARGIN: f64 = 20.0;

/// Duration (in units of Δ_t) holding all but 1e-6 of the energy of a
/// `sech(2t/Δ_t)/√Δ_t` photon: `atanh(1 - 1e-6)`.
pub const DEFAULT_PHOTON_EXTENT: f64 = 7.254_329_418_306_542;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShapeKind {
    Gaussian,
    Sech,
}

impl FromStr for PulseShapeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "sech" => Ok(Self::Sech),
            other => Err(format!("unknown pulse shape '{other}'")),
        }
    }
}

impl std::fmt::Display for PulseShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Gaussian => f.write_str("gaussian"),
            Self::Sech => f.write_str("sech"),
        }
    }
}

/// Drive pulse settings for atom A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    /// Peak Rabi frequency Ω₀ (Gaussian shape only).
    pub omega0: f64,
    /// Pulse center; for the sech drive this is the emission center t_c1.
    pub t_c: f64,
    /// Pulse width Δ_t.
    pub delta_t: f64,
    pub shape: PulseShapeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub gamma: f64,
    pub kappa: f64,
    pub kappa_f: f64,
    pub kappa_l: f64,
    pub g_a: f64,
    pub g_b: f64,
    pub delta: f64,
    pub delta_prime: f64,
    /// Fiber length L. Derived from `delta_omega` by [`validate`] when absent.
    pub fiber_length: Option<f64>,
    /// Fiber mode spacing δω = πc/L. Derived from `fiber_length` when absent.
    pub delta_omega: Option<f64>,
    pub c: f64,
    pub pulse: PulseConfig,
    /// Fiber-mode cutoff M; modes n = -M..=M are kept.
    pub n_fiber_modes: usize,
}

impl ParameterSet {
    /// Short-distance configuration: γ = g_A/10 = g_B/10 = Δ/500 = δω/7.5 = κ,
    /// Δ_t = 125/κ, Gaussian drive at Ω₀ = 0.465 g_A.
    pub fn short_regime_reference() -> Self {
        Self {
            gamma: 1.0,
            kappa: 1.0,
            kappa_f: 0.0,
            kappa_l: 0.0,
            g_a: 10.0,
            g_b: 10.0,
            delta: 500.0,
            delta_prime: 1000.0,
            fiber_length: None,
            delta_omega: Some(7.5),
            c: 1.0,
            pulse: PulseConfig {
                omega0: 4.65,
                t_c: 0.0,
                delta_t: 125.0,
                shape: PulseShapeKind::Gaussian,
            },
            n_fiber_modes: 20,
        }
    }

    /// Long-distance configuration: γ = g_A/8 = g_B/8 = κ, Δ_t = 50/κ,
    /// L = 600 c/κ, Δ = 0, sech emission centered at t_c1 = 200/κ.
    pub fn long_regime_reference() -> Self {
        Self {
            gamma: 1.0,
            kappa: 1.0,
            kappa_f: 0.0,
            kappa_l: 0.0,
            g_a: 8.0,
            g_b: 8.0,
            delta: 0.0,
            delta_prime: 800.0,
            fiber_length: Some(600.0),
            delta_omega: None,
            c: 1.0,
            pulse: PulseConfig {
                omega0: 0.0,
                t_c: 200.0,
                delta_t: 50.0,
                shape: PulseShapeKind::Sech,
            },
            n_fiber_modes: 20,
        }
    }

    pub fn fiber_length(&self) -> f64 {
        match (self.fiber_length, self.delta_omega) {
            (Some(l), _) => l,
            (None, Some(dw)) => PI * self.c / dw,
            (None, None) => f64::NAN,
        }
    }

    pub fn delta_omega(&self) -> f64 {
        match (self.delta_omega, self.fiber_length) {
            (Some(dw), _) => dw,
            (None, Some(l)) => PI * self.c / l,
            (None, None) => f64::NAN,
        }
    }

    /// Per-mode cavity–fiber coupling κ′ = √(κ δω / 2π).
    pub fn kappa_prime(&self) -> f64 {
        (self.kappa * self.delta_omega() / (2.0 * PI)).sqrt()
    }

    /// One-way fiber transit time L/c.
    pub fn transit_time(&self) -> f64 {
        self.fiber_length() / self.c
    }

    /// Parse the flat `key = value` config format. Blank lines and `#`
    /// comments are ignored; unknown keys are errors. Missing keys keep the
    /// short-regime preset values.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut p = Self::short_regime_reference();
        let mut geometry_seen = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let line_err = |message: String| Error::Config {
                line: lineno + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| line_err(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            let num = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|e| line_err(format!("{key}: {e}")))
            };
            if !geometry_seen && matches!(key, "fiber_length" | "delta_omega") {
                // An explicit geometry replaces the preset one entirely.
                p.fiber_length = None;
                p.delta_omega = None;
                geometry_seen = true;
            }
            match key {
                "gamma" => p.gamma = num()?,
                "kappa" => p.kappa = num()?,
                "kappa_f" => p.kappa_f = num()?,
                "kappa_l" => p.kappa_l = num()?,
                "g_a" => p.g_a = num()?,
                "g_b" => p.g_b = num()?,
                "delta" => p.delta = num()?,
                "delta_prime" => p.delta_prime = num()?,
                "fiber_length" => p.fiber_length = Some(num()?),
                "delta_omega" => p.delta_omega = Some(num()?),
                "c" => p.c = num()?,
                "omega0" => p.pulse.omega0 = num()?,
                "t_c" => p.pulse.t_c = num()?,
                "delta_t" => p.pulse.delta_t = num()?,
                "pulse_shape" => p.pulse.shape = value.parse().map_err(line_err)?,
                "n_fiber_modes" => {
                    p.n_fiber_modes = value
                        .parse()
                        .map_err(|e| line_err(format!("{key}: {e}")))?
                }
                other => return Err(line_err(format!("unknown key '{other}'"))),
            }
        }
        Ok(p)
    }

    /// Serialize to the config format with 17 significant digits, so that
    /// parsing the result reproduces `self` exactly.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: f64| {
            let _ = writeln!(s, "{k} = {}", crate::export::fmt_f64(v));
        };
        put("gamma", self.gamma);
        put("kappa", self.kappa);
        put("kappa_f", self.kappa_f);
        put("kappa_l", self.kappa_l);
        put("g_a", self.g_a);
        put("g_b", self.g_b);
        put("delta", self.delta);
        put("delta_prime", self.delta_prime);
        if let Some(l) = self.fiber_length {
            put("fiber_length", l);
        }
        if let Some(dw) = self.delta_omega {
            put("delta_omega", dw);
        }
        put("c", self.c);
        put("omega0", self.pulse.omega0);
        put("t_c", self.pulse.t_c);
        put("delta_t", self.pulse.delta_t);
        let _ = writeln!(s, "pulse_shape = {}", self.pulse.shape);
        let _ = writeln!(s, "n_fiber_modes = {}", self.n_fiber_modes);
        s
    }
}

fn check_nonneg(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            value: v,
            reason: "must be finite",
        });
    }
    if v < 0.0 {
        return Err(Error::InvalidParameter {
            name,
            value: v,
            reason: "must be >= 0",
        });
    }
    Ok(())
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    check_nonneg(name, v)?;
    if v <= 0.0 {
        return Err(Error::NonPositiveRate { name, value: v });
    }
    Ok(())
}

/// Check a raw parameter set and fill in whichever of `fiber_length` /
/// `delta_omega` was left out.
pub fn validate(raw: &ParameterSet) -> Result<ParameterSet> {
    check_positive("kappa", raw.kappa)?;
    check_positive("g_a", raw.g_a)?;
    check_nonneg("gamma", raw.gamma)?;
    check_nonneg("kappa_f", raw.kappa_f)?;
    check_nonneg("kappa_l", raw.kappa_l)?;
    check_nonneg("g_b", raw.g_b)?;
    check_positive("c", raw.c)?;
    check_positive("delta_t", raw.pulse.delta_t)?;
    check_nonneg("omega0", raw.pulse.omega0)?;
    for (name, v) in [
        ("delta", raw.delta),
        ("delta_prime", raw.delta_prime),
        ("t_c", raw.pulse.t_c),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter {
                name,
                value: v,
                reason: "must be finite",
            });
        }
    }

    let mut p = raw.clone();
    match (raw.fiber_length, raw.delta_omega) {
        (None, None) => return Err(Error::MissingGeometry),
        (Some(l), None) => {
            check_positive("fiber_length", l)?;
            p.delta_omega = Some(PI * raw.c / l);
        }
        (None, Some(dw)) => {
            check_positive("delta_omega", dw)?;
            p.fiber_length = Some(PI * raw.c / dw);
        }
        (Some(l), Some(dw)) => {
            check_positive("fiber_length", l)?;
            check_positive("delta_omega", dw)?;
            let product = l * dw;
            let expected = PI * raw.c;
            if ((product - expected) / expected).abs() > GEOMETRY_RTOL {
                return Err(Error::InconsistentGeometry { product, expected });
            }
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeTag {
    Short,
    Long,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub tag: RegimeTag,
    /// Δ_t·c/(2L) for `Short`/`Ambiguous`, Δ_f·c/L for `Long`.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    /// Required Δ_t / (2L/c) for the short-distance regime.
    pub short_margin: f64,
    /// Photon duration Δ_f in units of the pulse width.
    pub photon_extent: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            short_margin: DEFAULT_SHORT_MARGIN,
            photon_extent: DEFAULT_PHOTON_EXTENT,
        }
    }
}

pub fn classify_regime(p: &ParameterSet, pulse_width: f64) -> Regime {
    classify_regime_with(p, pulse_width, &ClassifyOptions::default())
}

pub fn classify_regime_with(p: &ParameterSet, pulse_width: f64, opts: &ClassifyOptions) -> Regime {
    let transit = p.transit_time();
    let short_ratio = pulse_width / (2.0 * transit);
    let long_ratio = opts.photon_extent * pulse_width / transit;
    if short_ratio >= opts.short_margin {
        Regime {
            tag: RegimeTag::Short,
            margin: short_ratio,
        }
    } else if long_ratio <= 1.0 {
        Regime {
            tag: RegimeTag::Long,
            margin: long_ratio,
        }
    } else {
        Regime {
            tag: RegimeTag::Ambiguous,
            margin: short_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn short_preset_fills_length() {
        let p = validate(&ParameterSet::short_regime_reference()).unwrap();
        let l = p.fiber_length.unwrap();
        assert!((l - PI / 7.5).abs() < 1e-15);
        assert_eq!(p.delta_omega, Some(7.5));
    }

    #[test]
    fn zero_kappa_rejected() {
        let mut p = ParameterSet::short_regime_reference();
        p.kappa = 0.0;
        assert!(matches!(
            validate(&p),
            Err(Error::NonPositiveRate { name: "kappa", .. })
        ));
        let mut p = ParameterSet::short_regime_reference();
        p.g_a = 0.0;
        assert!(matches!(
            validate(&p),
            Err(Error::NonPositiveRate { name: "g_a", .. })
        ));
    }

    #[test]
    fn conflicting_geometry_rejected() {
        let mut p = ParameterSet::short_regime_reference();
        p.fiber_length = Some(600.0);
        // 7.5 * 600 = 4500 vs pi
        assert!(matches!(
            validate(&p),
            Err(Error::InconsistentGeometry { .. })
        ));
        p.fiber_length = Some(PI / 7.5);
        assert!(validate(&p).is_ok());
    }

    #[test]
    fn nan_rejected() {
        let mut p = ParameterSet::short_regime_reference();
        p.gamma = f64::NAN;
        assert!(validate(&p).is_err());
        let mut p = ParameterSet::short_regime_reference();
        p.delta = f64::INFINITY;
        assert!(validate(&p).is_err());
    }

    #[test]
    fn kappa_prime_value() {
        let p = validate(&ParameterSet::short_regime_reference()).unwrap();
        assert!((p.kappa_prime() - (7.5 / (2.0 * PI)).sqrt()).abs() < 1e-15);
        assert!((p.kappa_prime() - 1.0925).abs() < 1e-4);
    }

    #[test]
    fn regimes_of_presets() {
        let s = validate(&ParameterSet::short_regime_reference()).unwrap();
        let r = classify_regime(&s, 125.0);
        assert_eq!(r.tag, RegimeTag::Short);
        // 125 / (2π/7.5) ≈ 149.2
        assert!((r.margin - 125.0 * 7.5 / (2.0 * PI)).abs() < 1e-9);

        let l = validate(&ParameterSet::long_regime_reference()).unwrap();
        assert_eq!(classify_regime(&l, 50.0).tag, RegimeTag::Long);

        let mut a = ParameterSet::long_regime_reference();
        a.fiber_length = Some(60.0);
        let a = validate(&a).unwrap();
        assert_eq!(classify_regime(&a, 50.0).tag, RegimeTag::Ambiguous);
    }

    #[test]
    fn config_round_trip_and_unknown_key() {
        let p = validate(&ParameterSet::long_regime_reference()).unwrap();
        let text = p.to_config_string();
        let q = ParameterSet::from_config_str(&text).unwrap();
        assert_eq!(p, q);

        let err = ParameterSet::from_config_str("gamma = 1\nfoo = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(ParameterSet::from_config_str("gamma = x").is_err());
    }

    #[test]
    fn config_geometry_replaces_preset() {
        let p = ParameterSet::from_config_str("# long\nfiber_length = 600\n").unwrap();
        assert_eq!(p.delta_omega, None);
        let p = validate(&p).unwrap();
        assert!((p.delta_omega() - PI / 600.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn validate_idempotent(l in 0.01f64..1e4, c in 0.1f64..10.0, g in 0.1f64..50.0) {
            let mut p = ParameterSet::short_regime_reference();
            p.delta_omega = None;
            p.fiber_length = Some(l);
            p.c = c;
            p.g_a = g;
            let once = validate(&p).unwrap();
            let twice = validate(&once).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn classify_monotone_in_length(dt in 1.0f64..500.0, l1 in 0.01f64..5e3, f in 1.0f64..10.0) {
            let mut p = ParameterSet::long_regime_reference();
            p.fiber_length = Some(l1);
            let a = classify_regime(&validate(&p).unwrap(), dt);
            p.fiber_length = Some(l1 * f);
            let b = classify_regime(&validate(&p).unwrap(), dt);
            prop_assert!(!(a.tag == RegimeTag::Long && b.tag == RegimeTag::Short));
            if a.tag == RegimeTag::Long { prop_assert_eq!(b.tag, RegimeTag::Long); }
        }
    }
}
