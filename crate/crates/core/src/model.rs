//! Phase-field corrosion model: parameters, interpolation and double-well
//! polynomials, reaction terms and the relaxation parameter policy.
//!
//! The system is
//!
//! ```text
//! φ_t = D_φ Δφ + F1(φ, c)
//! c_t = D_c Δ(c + F2(φ))
//! ```
//!
//! with `F1 = 2AL(1−c_L)[c − h(φ)(1−c_L) − c_L]h'(φ) − ωL g'(φ)` and
//! `F2 = (c_L − 1)h(φ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relaxation parameter used in all experiments with the default parameters.
pub const DEFAULT_W: f64 = 4.43e8;

/// Physical constants of the model (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrosionParameters {
    /// Interface kinetics coefficient [m³/(J·s)].
    #[serde(rename = "L")]
    pub l: f64,
    /// Free energy curvature [J/mol].
    #[serde(rename = "A")]
    pub a: f64,
    /// Phase diffusion coefficient [m²/s].
    pub d_phi: f64,
    /// Concentration diffusion coefficient [m²/s].
    pub d_c: f64,
    /// Normalized liquid equilibrium concentration.
    pub c_l: f64,
    /// Double-well height [J/m³].
    pub omega: f64,
}

impl Default for CorrosionParameters {
    fn default() -> Self {
        Self {
            l: 2.0,
            a: 5.35e7,
            d_phi: 6.02e-6,
            d_c: 8.5e-10,
            c_l: 3.57e-2,
            omega: 2.08e6,
        }
    }
}

impl CorrosionParameters {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l, self.a, self.d_phi, self.d_c, self.c_l, self.omega];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "all corrosion parameters must be finite and strictly positive".into(),
            ));
        }
        if self.c_l >= 1.0 {
            return Err(Error::Config("c_L must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Derives `(α_φ, D_φ, ω)` from interface energy `sigma`, interface
    /// thickness `thickness` and the constant `alpha_star`, using
    /// `σ ≈ √(16 ω α_φ)` and `l = α*·√(2 α_φ / ω)`.
    pub fn derive_from_interface(sigma: f64, thickness: f64, alpha_star: f64, l_kin: f64) -> (f64, f64, f64) {
        // σ² = 16 ω α_φ and l²/α*² = 2 α_φ/ω  ⇒  α_φ² = σ² l² / (32 α*²)
        let alpha_phi = sigma * thickness / (alpha_star * 32f64.sqrt());
        let omega = sigma * sigma / (16.0 * alpha_phi);
        (alpha_phi, l_kin * alpha_phi, omega)
    }
}

/// `(h, h', h'')` for the interpolation polynomial `h = −2φ³ + 3φ²`.
#[inline]
pub fn eval_h_family(phi: f64) -> (f64, f64, f64) {
    let h = phi * phi * (3.0 - 2.0 * phi);
    let dh = phi * (6.0 - 6.0 * phi);
    let d2h = 6.0 - 12.0 * phi;
    (h, dh, d2h)
}

/// `(g, g', g'')` for the double well `g = φ²(1−φ)²`.
#[inline]
pub fn eval_g_family(phi: f64) -> (f64, f64, f64) {
    let q = phi * (1.0 - phi);
    let g = q * q;
    let dg = 2.0 * q * (1.0 - 2.0 * phi);
    let d2g = (12.0 * phi - 12.0) * phi + 2.0;
    (g, dg, d2g)
}

#[inline]
pub fn reaction_f1(phi: f64, c: f64, p: &CorrosionParameters) -> f64 {
    let (h, dh, _) = eval_h_family(phi);
    let (_, dg, _) = eval_g_family(phi);
    let one_m = 1.0 - p.c_l;
    2.0 * p.a * p.l * one_m * (c - h * one_m - p.c_l) * dh - p.omega * p.l * dg
}

#[inline]
pub fn reaction_f2(phi: f64, p: &CorrosionParameters) -> f64 {
    (p.c_l - 1.0) * eval_h_family(phi).0
}

/// Partial derivative of `F1` with respect to φ.
#[inline]
pub fn jacobian_f1_phi(phi: f64, c: f64, p: &CorrosionParameters) -> f64 {
    let (h, dh, d2h) = eval_h_family(phi);
    let (_, _, d2g) = eval_g_family(phi);
    let one_m = 1.0 - p.c_l;
    2.0 * p.a * p.l * one_m * ((c - h * one_m - p.c_l) * d2h - one_m * dh * dh) - p.omega * p.l * d2g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxationMode {
    FixedW,
    PerStepJacobianMax,
}

/// How the relaxation parameter `w` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationPolicy {
    pub mode: RelaxationMode,
    pub fixed_w: f64,
    pub safety_factor: f64,
}

impl RelaxationPolicy {
    pub fn fixed(w: f64) -> Self {
        Self { mode: RelaxationMode::FixedW, fixed_w: w, safety_factor: 1.0 }
    }

    pub fn jacobian_max(safety_factor: f64) -> Self {
        Self { mode: RelaxationMode::PerStepJacobianMax, fixed_w: DEFAULT_W, safety_factor }
    }

    /// Fixed `w = 4.43e8` for the default parameters, a scan of the
    /// Jacobian with safety 1.1 for anything else.
    pub fn default_for(p: &CorrosionParameters) -> Self {
        if *p == CorrosionParameters::default() {
            Self::fixed(DEFAULT_W)
        } else {
            Self::jacobian_max(1.1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_w > 0.0) {
            return Err(Error::Config("fixed_w must be positive".into()));
        }
        if !(self.safety_factor >= 1.0) {
            return Err(Error::Config("safety_factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Returns the relaxation parameter for the given policy. `fields` are the
/// `(φ, c)` node values, required in `PerStepJacobianMax` mode.
pub fn estimate_relaxation_w(
    p: &CorrosionParameters,
    policy: &RelaxationPolicy,
    fields: Option<(&[f64], &[f64])>,
) -> Result<f64> {
    policy.validate()?;
    match policy.mode {
        RelaxationMode::FixedW => Ok(policy.fixed_w),
        RelaxationMode::PerStepJacobianMax => {
            let (phi, c) = fields.ok_or_else(|| {
                Error::Config("PerStepJacobianMax relaxation needs the current fields".into())
            })?;
            if phi.len() != c.len() || phi.is_empty() {
                return Err(Error::Dimension("phi and c must be non-empty and of equal length".into()));
            }
            let m = phi
                .iter()
                .zip(c)
                .map(|(&f, &c)| jacobian_f1_phi(f, c, p).abs())
                .fold(0.0, f64::max);
            Ok(policy.safety_factor * m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_and_g_values() {
        assert_eq!(eval_h_family(0.0), (0.0, 0.0, 6.0));
        assert_eq!(eval_h_family(1.0), (1.0, 0.0, -6.0));
        assert_eq!(eval_h_family(0.5), (0.5, 1.5, 0.0));
        assert_eq!(eval_g_family(0.0), (0.0, 0.0, 2.0));
        assert_eq!(eval_g_family(1.0), (0.0, 0.0, 2.0));
        assert_eq!(eval_g_family(0.5), (0.0625, 0.0, -1.0));
    }

    #[test]
    fn reaction_fixed_points() {
        let p = CorrosionParameters::default();
        assert_eq!(reaction_f1(0.0, 0.0, &p), 0.0);
        assert_eq!(reaction_f1(1.0, 1.0, &p), 0.0);
        assert_eq!(reaction_f2(0.0, &p), 0.0);
        assert_eq!(reaction_f2(1.0, &p), p.c_l - 1.0);
        assert_eq!(reaction_f2(0.5, &p), 0.5 * (p.c_l - 1.0));
    }

    #[test]
    fn f1_midpoint_matches_expansion() {
        let p = CorrosionParameters::default();
        // g'(0.5) = 0, h(0.5) = 0.5, h'(0.5) = 1.5
        let expect = 2.0 * p.a * p.l * (1.0 - p.c_l) * (0.5 - 0.5 * (1.0 - p.c_l) - p.c_l) * 1.5;
        let got = reaction_f1(0.5, 0.5, &p);
        assert!((got - expect).abs() <= 1e-12 * expect.abs());
        // exact rational evaluation with the default parameters
        assert!((got - (-5_525_294.355)).abs() < 1e-3, "{got}");
    }

    #[test]
    fn jacobian_at_origin() {
        let p = CorrosionParameters::default();
        let j = jacobian_f1_phi(0.0, 0.0, &p);
        let expect = -2.0 * p.a * p.l * (1.0 - p.c_l) * p.c_l * 6.0 - 2.0 * p.omega * p.l;
        assert!((j - expect).abs() <= 1e-9 * expect.abs());
        assert!(j < 0.0 && j.abs() > 1e7 && j.abs() < 1e9, "{j}");
    }

    #[test]
    fn relaxation_policies() {
        let p = CorrosionParameters::default();
        let fixed = RelaxationPolicy::default_for(&p);
        assert_eq!(estimate_relaxation_w(&p, &fixed, None).unwrap(), 4.43e8);
        let jm = RelaxationPolicy::jacobian_max(1.0);
        assert!(estimate_relaxation_w(&p, &jm, None).is_err());
        let z = [0.0; 4];
        let w = estimate_relaxation_w(&p, &jm, Some((&z, &z))).unwrap();
        assert_eq!(w, jacobian_f1_phi(0.0, 0.0, &p).abs());
        let mut q = p;
        q.l = 1.0;
        assert_eq!(RelaxationPolicy::default_for(&q).mode, RelaxationMode::PerStepJacobianMax);
    }

    #[test]
    fn interface_helper_round_trip() {
        let (alpha, d_phi, omega) = CorrosionParameters::derive_from_interface(10.0, 5e-6, 2.94, 2.0);
        assert!((10.0f64 - (16.0 * omega * alpha).sqrt()).abs() < 1e-9);
        assert!((5e-6 - 2.94 * (2.0 * alpha / omega).sqrt()).abs() < 1e-15);
        assert!((alpha - 3.01e-6).abs() < 0.01e-6, "{alpha}");
        assert!((d_phi - 6.02e-6).abs() < 0.02e-6);
        assert!((omega - 2.08e6).abs() < 0.01e6, "{omega}");
    }
}
