//! TOML run configuration.
//!
//! Every section rejects unknown keys. Physical ranges are checked in
//! [`RunConfig::resolve`], which turns the file into a [`Scenario`] of
//! validated model objects; errors name the offending `section.field`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupled_mode::{CavityParams, GapCouplingLaw, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::fitting::FitOptions;
use crate::photon_sim::{CountingMode, DetectorModel, Probe, SimOptions};
use crate::polarization::JonesField;
use crate::tomography::MleConfig;

/// Offset added to the run seed when `[mle]` does not set its own, so the
/// optimizer and the photon simulation draw from unrelated streams.
const MLE_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Counting mode lives in `[detector]`; this section only adds the dephasing knob.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub depolarization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub cavity: CavitySection,
    #[serde(default)]
    pub gap: Option<GapSection>,
    pub sweep: SweepSection,
    pub probe: ProbeSection,
    pub detector: DetectorSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub mle: MleSection,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub scan: Option<ScanSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    #[serde(default)]
    pub gamma: f64,
    pub rho_l: f64,
    /// Ignored when `[gap]` sets `d_nm`.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Defaults to the fundamental FSR of the sphere below.
    #[serde(default)]
    pub fsr_hz: Option<f64>,
    #[serde(default = "default_diameter")]
    pub sphere_diameter_m: f64,
    #[serde(default = "default_index")]
    pub refractive_index: f64,
    /// Defaults to the probe's vacuum frequency.
    #[serde(default)]
    pub f_res_hz: Option<f64>,
    #[serde(default = "one")]
    pub t_all: f64,
    #[serde(default)]
    pub theta_offset_rad: f64,
}

fn default_diameter() -> f64 {
    43.3e-6
}

fn default_index() -> f64 {
    1.45
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSection {
    pub kappa_0: f64,
    pub decay_len_nm: f64,
    /// Operating gap; when set, `kappa` follows from the law.
    #[serde(default)]
    pub d_nm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub center_hz: f64,
    pub span_hz: f64,
    pub points: usize,
}

impl SweepSection {
    pub fn detunings(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.center_hz];
        }
        let step = self.span_hz / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.center_hz - 0.5 * self.span_hz + step * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub power_w: f64,
    pub wavelength_m: f64,
    /// Angle of the linear input polarization from X.
    #[serde(default = "quarter_pi")]
    pub polarization_angle_rad: f64,
    /// Phase of the Y component relative to X at the input.
    #[serde(default)]
    pub phase_rad: f64,
}

fn quarter_pi() -> f64 {
    std::f64::consts::FRAC_PI_4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub bin_time_s: f64,
    #[serde(default)]
    pub dark_rate_hz: f64,
    pub efficiency: f64,
    #[serde(default)]
    pub mode: CountingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleSection {
    pub scaling_factor: Option<f64>,
    pub crossover_prob: Option<f64>,
    pub population: Option<usize>,
    pub max_generations: Option<usize>,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    /// Points with `|detuning| >= far_window_hz` form the far-detuned window.
    pub far_window_hz: f64,
    /// Points with `|detuning| <= near_window_hz` form the on-resonance window.
    pub near_window_hz: f64,
    /// Skip maximum-likelihood tomography in `analyze`.
    pub skip_tomography: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            far_window_hz: 20e6,
            near_window_hz: 2e6,
            skip_tomography: false,
        }
    }
}

/// Gap distances for the scan figure, either listed or as a range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default)]
    pub d_nm: Option<Vec<f64>>,
    #[serde(default)]
    pub d_min_nm: Option<f64>,
    #[serde(default)]
    pub d_max_nm: Option<f64>,
    #[serde(default)]
    pub d_step_nm: Option<f64>,
    /// Samples per spectrum when measuring each dip.
    #[serde(default = "scan_points")]
    pub points: usize,
    /// Half span of each spectrum in units of the analytic linewidth.
    #[serde(default = "scan_half_span")]
    pub half_span_fwhm: f64,
}

fn scan_points() -> usize {
    4001
}

fn scan_half_span() -> f64 {
    10.0
}

impl ScanSection {
    pub fn distances(&self) -> Result<Vec<f64>> {
        let d = match (&self.d_nm, self.d_min_nm, self.d_max_nm, self.d_step_nm) {
            (Some(list), None, None, None) => list.clone(),
            (None, Some(lo), Some(hi), Some(step)) => {
                if !(step > 0.0 && hi >= lo) {
                    return Err(Error::Config(
                        "scan: need d_step_nm > 0 and d_max_nm >= d_min_nm".into(),
                    ));
                }
                let n = ((hi - lo) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| lo + step * i as f64).collect()
            }
            _ => {
                return Err(Error::Config(
                    "scan: give either d_nm or all of d_min_nm, d_max_nm, d_step_nm".into(),
                ))
            }
        };
        if d.is_empty() {
            return Err(Error::Config("scan: the distance list is empty".into()));
        }
        if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "scan: distances must be finite and >= 0".into(),
            ));
        }
        if self.points < 9 {
            return Err(Error::Config("scan.points: need at least 9 samples".into()));
        }
        if !(self.half_span_fwhm > 1.0) {
            return Err(Error::Config("scan.half_span_fwhm: must exceed 1".into()));
        }
        Ok(d)
    }
}

/// Validated model objects built from a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub params: CavityParams,
    pub law: Option<GapCouplingLaw>,
    pub detunings_hz: Vec<f64>,
    pub probe: Probe,
    pub detector: DetectorModel,
    pub options: SimOptions,
    pub mle: MleConfig,
    pub analysis: AnalysisOptions,
    pub fit: FitOptions,
    pub scan: Option<ScanSection>,
}

fn in_section(section: &'static str, err: Error) -> Error {
    match err {
        Error::InvalidParameter { field, reason } => {
            Error::Config(format!("{section}.{field}: {reason}"))
        }
        other => Error::Config(format!("[{section}] {other}")),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let c = &self.cavity;
        let fsr_hz = match c.fsr_hz {
            Some(f) => f,
            None => {
                if !(c.sphere_diameter_m > 0.0 && c.refractive_index > 0.0) {
                    return Err(Error::Config(
                        "cavity: sphere_diameter_m and refractive_index must be positive".into(),
                    ));
                }
                CavityParams::sphere_fsr_hz(c.sphere_diameter_m, c.refractive_index)
            }
        };
        let probe_sec = &self.probe;
        let f_res_hz = c
            .f_res_hz
            .unwrap_or(SPEED_OF_LIGHT / probe_sec.wavelength_m);
        let law = match &self.gap {
            Some(g) => {
                let law = GapCouplingLaw {
                    kappa_0: g.kappa_0,
                    decay_len_nm: g.decay_len_nm,
                };
                law.validate().map_err(|e| in_section("gap", e))?;
                Some(law)
            }
            None => None,
        };
        let kappa = match (self.gap.and_then(|g| g.d_nm), c.kappa, law) {
            (Some(d), _, Some(law)) => {
                if !(d.is_finite() && d >= 0.0) {
                    return Err(Error::Config(
                        "gap.d_nm: must be a finite distance >= 0".into(),
                    ));
                }
                law.kappa_at(d)
            }
            (None, Some(k), _) => k,
            _ => {
                return Err(Error::Config(
                    "cavity.kappa: required unless [gap] sets d_nm".into(),
                ))
            }
        };
        let params = CavityParams {
            gamma: c.gamma,
            rho_l: c.rho_l,
            kappa,
            fsr_hz,
            f_res_hz,
            t_all: c.t_all,
            theta_offset_rad: c.theta_offset_rad,
        };
        params.validate().map_err(|e| in_section("cavity", e))?;

        let s = &self.sweep;
        if s.points == 0 {
            return Err(Error::Config("sweep.points: must be at least 1".into()));
        }
        if !(s.span_hz.is_finite() && s.span_hz >= 0.0 && s.center_hz.is_finite()) {
            return Err(Error::Config(
                "sweep: center_hz and span_hz must be finite, span >= 0".into(),
            ));
        }
        if s.points > 1 && s.span_hz == 0.0 {
            return Err(Error::Config(
                "sweep.span_hz: must be positive for more than one point".into(),
            ));
        }

        let probe = Probe {
            power_w: probe_sec.power_w,
            wavelength_m: probe_sec.wavelength_m,
            polarization: JonesField::linear(
                probe_sec.polarization_angle_rad,
                probe_sec.phase_rad,
                f_res_hz,
            ),
        };
        probe.validate().map_err(|e| in_section("probe", e))?;

        let d = &self.detector;
        let detector = DetectorModel {
            bin_time_s: d.bin_time_s,
            dark_rate_hz: d.dark_rate_hz,
            efficiency: d.efficiency,
        };
        detector.validate().map_err(|e| in_section("detector", e))?;
        let options = SimOptions {
            mode: d.mode,
            depolarization: self.simulation.depolarization,
        };
        options
            .validate()
            .map_err(|e| in_section("simulation", e))?;

        let m = &self.mle;
        let defaults = MleConfig::default();
        let mle = MleConfig {
            scaling_factor: m.scaling_factor.unwrap_or(defaults.scaling_factor),
            crossover_prob: m.crossover_prob.unwrap_or(defaults.crossover_prob),
            population: m.population.unwrap_or(defaults.population),
            max_generations: m.max_generations.unwrap_or(defaults.max_generations),
            tolerance: m.tolerance.unwrap_or(defaults.tolerance),
            seed: m.seed.unwrap_or(self.seed.wrapping_add(MLE_SEED_OFFSET)),
        };
        mle.validate().map_err(|e| in_section("mle", e))?;
        self.fit.validate().map_err(|e| in_section("fit", e))?;

        let a = &self.analysis;
        if !(a.far_window_hz >= 0.0 && a.near_window_hz >= 0.0) {
            return Err(Error::Config("analysis: windows must be >= 0".into()));
        }
        if let Some(scan) = &self.scan {
            scan.distances()?;
            if law.is_none() {
                return Err(Error::Config("scan: a [gap] law is required".into()));
            }
        }
        Ok(Scenario {
            seed: self.seed,
            params,
            law,
            detunings_hz: s.detunings(),
            probe,
            detector,
            options,
            mle,
            analysis: *a,
            fit: self.fit,
            scan: self.scan.clone(),
        })
    }
}

/// A parsed configuration together with the digest of its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl LoadedConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self {
            config: RunConfig::from_toml(text)?,
            sha256: sha256_hex(text.as_bytes()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[cavity]
rho_l = 1.9e-5
kappa = 2.93e-3
[sweep]
span_hz = 60e6
points = 11
[probe]
power_w = 10.5e-12
wavelength_m = 780e-9
[detector]
bin_time_s = 1e-3
efficiency = 0.1
"#;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let s = RunConfig::from_toml(MINIMAL).unwrap().resolve().unwrap();
        assert!((s.params.fsr_hz / 1.5199e12 - 1.0).abs() < 1e-4);
        assert!((s.params.f_res_hz / 3.8435e14 - 1.0).abs() < 1e-4);
        assert_eq!(s.detunings_hz.len(), 11);
        assert_eq!(s.detunings_hz[0], -30e6);
        assert_eq!(s.detunings_hz[10], 30e6);
        assert_eq!(s.options.mode, CountingMode::Sequential);
        assert_eq!(s.mle.scaling_factor, 1.5);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = MINIMAL.replace("kappa = 2.93e-3", "kappa = 2.93e-3\nkapa = 1.0");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("kapa"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn ranges_are_enforced_per_field() {
        let text = MINIMAL.replace("kappa = 2.93e-3", "kappa = 2.0");
        let err = RunConfig::from_toml(&text)
            .unwrap()
            .resolve()
            .unwrap_err()
            .to_string();
        assert!(err.contains("cavity.kappa"), "{err}");
        let text = MINIMAL.replace("efficiency = 0.1", "efficiency = 1.5");
        let err = RunConfig::from_toml(&text)
            .unwrap()
            .resolve()
            .unwrap_err()
            .to_string();
        assert!(err.contains("detector.efficiency"), "{err}");
    }

    #[test]
    fn gap_distance_sets_kappa() {
        let text = MINIMAL.replace("kappa = 2.93e-3\n", "")
            + "[gap]\nkappa_0 = 0.0371\ndecay_len_nm = 184.0\nd_nm = 184.0\n";
        let s = RunConfig::from_toml(&text).unwrap().resolve().unwrap();
        assert!((s.params.kappa - 0.0371 / std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn empty_scan_is_invalid() {
        let text = MINIMAL.to_string()
            + "[gap]\nkappa_0 = 0.0371\ndecay_len_nm = 184.0\n[scan]\nd_nm = []\n";
        assert!(RunConfig::from_toml(&text).unwrap().resolve().is_err());
    }

    #[test]
    fn digest_is_stable() {
        let a = LoadedConfig::parse(MINIMAL).unwrap();
        assert_eq!(a.sha256.len(), 64);
        assert_eq!(a.sha256, LoadedConfig::parse(MINIMAL).unwrap().sha256);
    }
}
