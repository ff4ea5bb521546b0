//! Coupled-mode transmission of a tapered fiber side-coupled to a
//! whispering-gallery resonator.
//!
//! The through-port amplitude ratio is
//!
//! ```text
//! A_X / A_0X = sqrt(1 - gamma) * (y - x e^{-i phi}) / (1 - x y e^{-i phi})
//! x = sqrt(1 - gamma) * exp(-rho_l),   y = cos(kappa),   phi = 2 pi df / FSR
//! ```
//!
//! For high-Q resonators both `x` and `y` sit within ~1e-5 of unity, so every
//! quantity here is evaluated through the deficits `1 - x` and `1 - y` to avoid
//! cancellation.
//!
//! Phases are reported relative to the on-resonance field: an overcoupled
//! resonator (`y < x`) has a real negative bare ratio at resonance, and the
//! ratio is multiplied by -1 so that the phase is 0 at resonance in every
//! regime. Far from resonance the phase then tends to 0 (undercoupled) or
//! ±pi (overcoupled).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on `|1 - x y e^{-i phi}|` before a point is declared singular.
pub const SINGULARITY_TOL: f64 = 1e-15;

/// Default tolerance on `|y - x|` for the critical-coupling band.
pub const CRITICAL_TOL: f64 = 1e-6;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Physical parameters of the fiber-resonator junction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityParams {
    /// Coupling loss rate, in `[0, 1)`.
    pub gamma: f64,
    /// Round-trip absorption exponent (absorption coefficient times cavity length).
    pub rho_l: f64,
    /// Fiber-to-cavity coupling efficiency in radians, in `[0, pi/2]`.
    pub kappa: f64,
    pub fsr_hz: f64,
    pub f_res_hz: f64,
    /// Fiber transmittance shared by both polarizations, in `(0, 1]`.
    pub t_all: f64,
    /// Constant birefringence phase picked up by the X mode.
    #[serde(default)]
    pub theta_offset_rad: f64,
}

impl CavityParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.gamma,
            self.rho_l,
            self.kappa,
            self.fsr_hz,
            self.f_res_hz,
            self.t_all,
            self.theta_offset_rad,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("cavity", "all parameters must be finite"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(
                "gamma",
                format!("{} not in [0, 1)", self.gamma),
            ));
        }
        if self.rho_l < 0.0 {
            return Err(Error::invalid(
                "rho_l",
                format!("{} is negative", self.rho_l),
            ));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.kappa) {
            return Err(Error::invalid(
                "kappa",
                format!("{} not in [0, pi/2]", self.kappa),
            ));
        }
        if self.fsr_hz <= 0.0 {
            return Err(Error::invalid("fsr_hz", "must be positive"));
        }
        if self.f_res_hz <= 0.0 {
            return Err(Error::invalid("f_res_hz", "must be positive"));
        }
        if !(self.t_all > 0.0 && self.t_all <= 1.0) {
            return Err(Error::invalid(
                "t_all",
                format!("{} not in (0, 1]", self.t_all),
            ));
        }
        Ok(())
    }

    /// `x = sqrt(1 - gamma) exp(-rho_l)`.
    pub fn x(&self) -> f64 {
        (0.5 * (-self.gamma).ln_1p() - self.rho_l).exp()
    }

    /// `y = cos(kappa)`.
    pub fn y(&self) -> f64 {
        self.kappa.cos()
    }

    /// `1 - x` without cancellation.
    pub fn x_deficit(&self) -> f64 {
        -(0.5 * (-self.gamma).ln_1p() - self.rho_l).exp_m1()
    }

    /// `1 - y = 2 sin^2(kappa / 2)`.
    pub fn y_deficit(&self) -> f64 {
        let s = (0.5 * self.kappa).sin();
        2.0 * s * s
    }

    /// Returns a copy with `rho_l` and `kappa` chosen so that `1 - x` and
    /// `1 - y` take the given values; `gamma` is kept.
    pub fn with_deficits(mut self, x_deficit: f64, y_deficit: f64) -> Result<Self> {
        let floor = -(0.5 * (-self.gamma).ln_1p()).exp_m1();
        if !(x_deficit >= floor && x_deficit < 1.0) {
            return Err(Error::invalid(
                "x_deficit",
                format!(
                    "{x_deficit:e} not in [{floor:e}, 1) for gamma = {}",
                    self.gamma
                ),
            ));
        }
        if !(0.0..=1.0).contains(&y_deficit) {
            return Err(Error::invalid(
                "y_deficit",
                format!("{y_deficit:e} not in [0, 1]"),
            ));
        }
        self.rho_l = (0.5 * (-self.gamma).ln_1p() - (-x_deficit).ln_1p()).max(0.0);
        self.kappa = 2.0 * (0.5 * y_deficit).sqrt().asin();
        Ok(self)
    }

    pub fn round_trip_phase(&self, detuning_hz: f64) -> f64 {
        TAU * detuning_hz / self.fsr_hz
    }

    /// Free spectral range of a sphere of the given diameter and group index.
    pub fn sphere_fsr_hz(diameter_m: f64, index: f64) -> f64 {
        SPEED_OF_LIGHT / (PI * index * diameter_m)
    }
}

/// Exponential evanescent coupling law `kappa(d) = kappa_0 exp(-d / decay_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapCouplingLaw {
    pub kappa_0: f64,
    pub decay_len_nm: f64,
}

impl GapCouplingLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_0.is_finite() && (0.0..=FRAC_PI_2).contains(&self.kappa_0)) {
            return Err(Error::invalid(
                "kappa_0",
                format!("{} not in [0, pi/2]", self.kappa_0),
            ));
        }
        if !(self.decay_len_nm.is_finite() && self.decay_len_nm > 0.0) {
            return Err(Error::invalid("decay_len_nm", "must be positive"));
        }
        Ok(())
    }

    pub fn kappa_at(&self, d_nm: f64) -> f64 {
        self.kappa_0 * (-d_nm / self.decay_len_nm).exp()
    }

    /// Gap at which `y = x` for the intrinsic loss of `base`, if the law
    /// reaches the critical coupling at some `d >= 0`.
    pub fn critical_distance_nm(&self, base: &CavityParams) -> Option<f64> {
        let kappa_crit = 2.0 * (0.5 * base.x_deficit()).sqrt().asin();
        if kappa_crit <= 0.0 || self.kappa_0 < kappa_crit {
            return None;
        }
        Some(self.decay_len_nm * (self.kappa_0 / kappa_crit).ln())
    }
}

/// Complex through-port response at one detuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexTransmission {
    /// `A_X / A_0X`, referenced to the on-resonance field.
    pub amplitude_ratio: Complex64,
    pub transmittance: f64,
    /// Argument of `amplitude_ratio`, in `(-pi, pi]`.
    pub phase_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingRegime {
    Undercoupled,
    Critical,
    Overcoupled,
}

/// Resonator response at `detuning_hz` from `params.f_res_hz`.
pub fn transmission(params: &CavityParams, detuning_hz: f64) -> Result<ComplexTransmission> {
    params.validate()?;
    if !detuning_hz.is_finite() {
        return Err(Error::Domain(format!(
            "detuning {detuning_hz} is not finite"
        )));
    }
    evaluate(params, detuning_hz)
}

pub(crate) fn evaluate(params: &CavityParams, detuning_hz: f64) -> Result<ComplexTransmission> {
    let a = params.x_deficit();
    let c = params.y_deficit();
    let phi = params.round_trip_phase(detuning_hz);
    let (sin_phi, cos_phi) = phi.sin_cos();
    let half = (0.5 * phi).sin();
    let e = Complex64::new(cos_phi, -sin_phi);
    // 1 - e^{-i phi}
    let one_minus_e = Complex64::new(2.0 * half * half, sin_phi);
    // y - x e = (1 - e) - c + a e ;  1 - x y e = (1 - e) + (a + c - a c) e
    let num = one_minus_e - c + e * a;
    let den = one_minus_e + e * (a + c - a * c);
    let modulus = den.norm();
    if modulus < SINGULARITY_TOL {
        return Err(Error::Singular { modulus });
    }
    let reference = if c > a { -1.0 } else { 1.0 };
    let ratio = num / den * ((-params.gamma).ln_1p() * 0.5).exp() * reference;
    let mut phase = ratio.arg();
    if phase <= -PI {
        phase = PI;
    }
    Ok(ComplexTransmission {
        amplitude_ratio: ratio,
        transmittance: ratio.norm_sqr(),
        phase_rad: phase,
    })
}

/// Element-wise [`transmission`] over a detuning axis.
pub fn transmittance_spectrum(
    params: &CavityParams,
    detunings_hz: &[f64],
) -> Result<Vec<ComplexTransmission>> {
    params.validate()?;
    if detunings_hz.is_empty() {
        return Err(Error::Domain("detuning list is empty".into()));
    }
    detunings_hz
        .iter()
        .enumerate()
        .map(|(i, &df)| {
            if !df.is_finite() {
                return Err(Error::at(
                    i,
                    Error::Domain(format!("detuning {df} is not finite")),
                ));
            }
            evaluate(params, df).map_err(|e| Error::at(i, e))
        })
        .collect()
}

/// Intracavity power build-up relative to its on-resonance value; a
/// Lorentzian-like weight in `(0, 1]` that peaks at zero detuning.
pub fn buildup(params: &CavityParams, detuning_hz: f64) -> f64 {
    let a = params.x_deficit();
    let c = params.y_deficit();
    let p = a + c - a * c;
    let phi = params.round_trip_phase(detuning_hz);
    let (sin_phi, cos_phi) = phi.sin_cos();
    let half = (0.5 * phi).sin();
    let den = Complex64::new(2.0 * half * half, sin_phi) + Complex64::new(cos_phi, -sin_phi) * p;
    let d2 = den.norm_sqr();
    if d2 == 0.0 {
        1.0
    } else {
        (p * p / d2).min(1.0)
    }
}

pub fn coupling_regime(params: &CavityParams) -> CouplingRegime {
    coupling_regime_with_tol(params, CRITICAL_TOL)
}

pub fn coupling_regime_with_tol(params: &CavityParams, eps: f64) -> CouplingRegime {
    // y - x = (1 - x) - (1 - y)
    let diff = params.x_deficit() - params.y_deficit();
    if diff > eps {
        CouplingRegime::Undercoupled
    } else if diff < -eps {
        CouplingRegime::Overcoupled
    } else {
        CouplingRegime::Critical
    }
}

/// `base` with `kappa` replaced by the gap law evaluated at `d_nm`.
pub fn params_at_gap(base: &CavityParams, law: &GapCouplingLaw, d_nm: f64) -> Result<CavityParams> {
    law.validate()?;
    if !(d_nm.is_finite() && d_nm >= 0.0) {
        return Err(Error::invalid(
            "d_nm",
            format!("{d_nm} must be a finite distance >= 0"),
        ));
    }
    Ok(CavityParams {
        kappa: law.kappa_at(d_nm),
        ..*base
    })
}

/// Full width at half depth of a sampled dip.
///
/// The baseline is the median of the outermost 5% of samples on each side
/// (at least one per side); the half-depth level is `(baseline + min) / 2`
/// and the crossings are linearly interpolated. Samples must be ordered by
/// detuning.
pub fn fwhm_hz(spectrum: &[(f64, f64)]) -> Result<f64> {
    if spectrum.len() < 3 {
        return Err(Error::Domain("need at least three samples".into()));
    }
    let baseline = edge_baseline(spectrum);
    let (imin, min) =
        spectrum.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (i, &(_, t))| if t < acc.1 { (i, t) } else { acc },
        );
    let depth_tol = 1e-9 * baseline.abs().max(1.0);
    if !(min < baseline - depth_tol) {
        return Err(Error::NoDip);
    }
    let half = 0.5 * (baseline + min);
    let crossings = half_crossings(spectrum, half);
    if crossings.len() != 2 {
        return Err(Error::AmbiguousDip {
            crossings: crossings.len(),
        });
    }
    let (left, right) = (crossings[0], crossings[1]);
    if !(left <= spectrum[imin].0 && spectrum[imin].0 <= right) {
        return Err(Error::AmbiguousDip { crossings: 2 });
    }
    Ok(right - left)
}

pub(crate) fn edge_baseline(spectrum: &[(f64, f64)]) -> f64 {
    let k = (spectrum.len() / 20).max(1);
    let mut edge: Vec<f64> = spectrum[..k]
        .iter()
        .chain(&spectrum[spectrum.len() - k..])
        .map(|&(_, t)| t)
        .collect();
    edge.sort_by(f64::total_cmp);
    let n = edge.len();
    if n % 2 == 1 {
        edge[n / 2]
    } else {
        0.5 * (edge[n / 2 - 1] + edge[n / 2])
    }
}

/// Linearly interpolated abscissae where the samples cross `level`.
pub(crate) fn half_crossings(spectrum: &[(f64, f64)], level: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for w in spectrum.windows(2) {
        let (f0, t0) = w[0];
        let (f1, t1) = w[1];
        let below0 = t0 < level;
        let below1 = t1 < level;
        if below0 != below1 {
            out.push(f0 + (level - t0) * (f1 - f0) / (t1 - t0));
        }
    }
    out
}

/// Closed-form half-depth width of the dip predicted by `params`.
pub fn dip_fwhm_hz(params: &CavityParams) -> Result<f64> {
    params.validate()?;
    let a = params.x_deficit();
    let c = params.y_deficit();
    let (x, y) = (1.0 - a, 1.0 - c);
    let loss = 1.0 - params.gamma;
    let one_minus_xy = a + c - a * c;
    let baseline = loss * ((x + y) / (1.0 + x * y)).powi(2);
    let minimum = loss * ((c - a) / one_minus_xy).powi(2);
    if !(minimum < baseline) {
        return Err(Error::NoDip);
    }
    let level = 0.5 * (baseline + minimum);
    let one_minus_cos = (level * one_minus_xy * one_minus_xy - loss * (c - a) * (c - a))
        / (2.0 * x * y * (loss - level));
    let s = (0.5 * one_minus_cos).sqrt();
    if !(s <= 1.0) {
        return Err(Error::Domain(
            "dip wider than one free spectral range".into(),
        ));
    }
    let half_phi = 2.0 * s.asin();
    Ok(half_phi * params.fsr_hz / PI)
}

/// How the quality factor is computed from a linewidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QDefinition {
    /// `Q = f0 / fwhm`.
    #[default]
    Standard,
    /// `Q = 2 pi f0 / fwhm`, for comparison with tables that use angular frequency
    /// in the numerator only.
    AngularCompat,
}

pub fn quality_factor(f_res_hz: f64, fwhm_hz: f64) -> Result<f64> {
    quality_factor_with(f_res_hz, fwhm_hz, QDefinition::Standard)
}

pub fn quality_factor_with(f_res_hz: f64, fwhm_hz: f64, def: QDefinition) -> Result<f64> {
    if !(f_res_hz > 0.0 && fwhm_hz > 0.0) {
        return Err(Error::Domain(format!(
            "quality factor needs positive inputs, got f0 = {f_res_hz}, fwhm = {fwhm_hz}"
        )));
    }
    let q = f_res_hz / fwhm_hz;
    Ok(match def {
        QDefinition::Standard => q,
        QDefinition::AngularCompat => TAU * q,
    })
}

/// Removes 2 pi jumps between consecutive samples.
pub fn unwrap_phase(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut shift = 0.0;
    let mut prev: Option<f64> = None;
    for &p in phases {
        if let Some(q) = prev {
            let d = p - q;
            if d > PI {
                shift -= TAU;
            } else if d < -PI {
                shift += TAU;
            }
        }
        prev = Some(p);
        out.push(p + shift);
    }
    out
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(TAU);
    if t > PI {
        t -= TAU;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base() -> CavityParams {
        CavityParams {
            gamma: 0.0,
            rho_l: 1.9e-5,
            kappa: 2.93e-3,
            fsr_hz: CavityParams::sphere_fsr_hz(43.3e-6, 1.45),
            f_res_hz: SPEED_OF_LIGHT / 780e-9,
            t_all: 1.0,
            theta_offset_rad: 0.0,
        }
    }

    #[test]
    fn no_coupling_is_identity() {
        let p = CavityParams {
            kappa: 0.0,
            rho_l: 0.3,
            ..base()
        };
        for df in [-3e11, -1e7, 0.0, 2.5e6, 7e11] {
            let t = transmission(&p, df).unwrap();
            assert_relative_eq!(t.transmittance, 1.0, epsilon = 1e-14);
            assert_relative_eq!(t.phase_rad, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn critical_coupling_nulls_resonance() {
        let p = base();
        let p = p.with_deficits(p.x_deficit(), p.x_deficit()).unwrap();
        assert_eq!(coupling_regime(&p), CouplingRegime::Critical);
        let t = transmission(&p, 0.0).unwrap();
        assert!(t.transmittance < 1e-20, "{}", t.transmittance);
    }

    #[test]
    fn singular_denominator_is_reported() {
        let p = CavityParams {
            gamma: 0.0,
            rho_l: 0.0,
            kappa: 0.0,
            ..base()
        };
        assert!(matches!(transmission(&p, 0.0), Err(Error::Singular { .. })));
        // away from resonance the lossless, uncoupled ring is fine
        assert!(transmission(&p, 1e9).is_ok());
    }

    #[test]
    fn transmittance_matches_direct_formula() {
        // moderate-Q parameters where the textbook expression is well conditioned
        let p = CavityParams {
            gamma: 0.02,
            rho_l: 0.05,
            kappa: 0.4,
            ..base()
        };
        let (x, y) = (p.x(), p.y());
        for k in -20..=20 {
            let df = k as f64 * 1.1e10;
            let phi = p.round_trip_phase(df);
            let e = Complex64::from_polar(1.0, -phi);
            let direct = (1.0 - p.gamma).sqrt() * (y - e * x) / (1.0 - e * x * y);
            let t = transmission(&p, df).unwrap();
            assert_relative_eq!(t.transmittance, direct.norm_sqr(), max_relative = 1e-12);
            assert!(t.transmittance <= 1.0 - p.gamma + 1e-15);
        }
    }

    #[test]
    fn regimes_follow_deficits() {
        let p = base();
        let mk = |x: f64, y: f64| p.with_deficits(1.0 - x, 1.0 - y).unwrap();
        assert_eq!(
            coupling_regime(&mk(0.9, 0.99)),
            CouplingRegime::Undercoupled
        );
        assert_eq!(coupling_regime(&mk(0.95, 0.95)), CouplingRegime::Critical);
        let over = mk(0.99, 0.9);
        assert_eq!(coupling_regime(&over), CouplingRegime::Overcoupled);
        // far from resonance the referenced phase sits near +-pi
        let far = transmission(&over, 0.45 * over.fsr_hz).unwrap();
        assert!(far.phase_rad.abs() > PI - 0.3, "{}", far.phase_rad);
        let under = mk(0.9, 0.99);
        let far = transmission(&under, 0.45 * under.fsr_hz).unwrap();
        assert!(far.phase_rad.abs() < 0.3);
    }

    #[test]
    fn gap_law_limits() {
        let law = GapCouplingLaw {
            kappa_0: 0.0371,
            decay_len_nm: 184.0,
        };
        let b = base();
        assert_eq!(params_at_gap(&b, &law, 0.0).unwrap().kappa, law.kappa_0);
        let far = params_at_gap(&b, &law, 1e5).unwrap();
        assert!(far.kappa < 1e-100);
        assert_eq!(coupling_regime(&far), CouplingRegime::Undercoupled);
        let t = transmission(&far, 0.0).unwrap();
        assert_relative_eq!(t.transmittance, 1.0, max_relative = 1e-3);
        assert!(params_at_gap(&b, &law, -1.0).is_err());
    }

    #[test]
    fn fwhm_of_flat_spectrum_is_no_dip() {
        let flat: Vec<_> = (0..50).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(fwhm_hz(&flat), Err(Error::NoDip)));
    }

    #[test]
    fn fwhm_rejects_double_dip() {
        let s: Vec<_> = (0..200)
            .map(|i| {
                let f = i as f64 - 100.0;
                let l = |c: f64| 0.8 / (1.0 + ((f - c) / 3.0).powi(2));
                (f, 1.0 - l(-30.0) - l(30.0))
            })
            .collect();
        assert!(matches!(
            fwhm_hz(&s),
            Err(Error::AmbiguousDip { crossings: 4 })
        ));
    }

    #[test]
    fn quality_factor_values() {
        assert_relative_eq!(
            quality_factor(3.84e14, 12.8e6).unwrap(),
            3.0e7,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            quality_factor(3.84e14, 3.49e8).unwrap(),
            1.1e6,
            max_relative = 1e-3
        );
        assert_eq!(quality_factor(5.0, 5.0).unwrap(), 1.0);
        assert_relative_eq!(
            quality_factor_with(1.0, 1.0, QDefinition::AngularCompat).unwrap(),
            TAU
        );
        assert!(quality_factor(0.0, 1.0).is_err());
        assert!(quality_factor(1.0, -1.0).is_err());
    }

    #[test]
    fn unwrap_removes_jumps() {
        let raw = [3.0, -3.1, -2.9, 3.1, 2.9];
        let u = unwrap_phase(&raw);
        for w in u.windows(2) {
            assert!((w[1] - w[0]).abs() < PI);
        }
        assert_eq!(wrap_phase(-PI), PI);
        assert_relative_eq!(wrap_phase(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-12);
    }

    #[test]
    fn deficit_round_trip() {
        let p = base();
        let q = p.with_deficits(p.x_deficit(), p.y_deficit()).unwrap();
        assert_relative_eq!(q.rho_l, p.rho_l, max_relative = 1e-12);
        assert_relative_eq!(q.kappa, p.kappa, max_relative = 1e-12);
    }
}
