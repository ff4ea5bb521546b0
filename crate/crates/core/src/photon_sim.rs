//! Photon-counting digital twin of the polarization-resolved sweep.
//!
//! Every detuning point draws its Poisson variates from its own ChaCha
//! stream `(seed, point index)`, so a record is bit-identical across runs,
//! platforms and evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::coupled_mode::{self, CavityParams, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::polarization::{self, JonesField, Projection};

pub const PLANCK: f64 = 6.626_070_15e-34;

/// Largest expected count per bin the simulator will draw.
pub const COUNT_CAP: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub bin_time_s: f64,
    /// Dark counts per second per detector.
    pub dark_rate_hz: f64,
    /// Lumped detection efficiency including fiber-to-detector losses.
    pub efficiency: f64,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_time_s.is_finite() && self.bin_time_s > 0.0) {
            return Err(Error::invalid("bin_time_s", "must be positive"));
        }
        if !(self.dark_rate_hz.is_finite() && self.dark_rate_hz >= 0.0) {
            return Err(Error::invalid("dark_rate_hz", "must be >= 0"));
        }
        if !(self.efficiency.is_finite() && self.efficiency >= 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid(
                "efficiency",
                format!("{} not in [0, 1]", self.efficiency),
            ));
        }
        Ok(())
    }

    pub fn dark_counts_per_bin(&self) -> f64 {
        self.dark_rate_hz * self.bin_time_s
    }
}

/// Attenuated laser probe entering the fiber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub power_w: f64,
    pub wavelength_m: f64,
    /// Input polarization; only its direction matters.
    pub polarization: JonesField,
}

impl Probe {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_w.is_finite() && self.power_w >= 0.0) {
            return Err(Error::invalid("power_w", "must be >= 0"));
        }
        if !(self.wavelength_m.is_finite() && self.wavelength_m > 0.0) {
            return Err(Error::invalid("wavelength_m", "must be positive"));
        }
        if !self.polarization.is_finite() || self.polarization.intensity() == 0.0 {
            return Err(Error::invalid(
                "polarization",
                "needs a finite, nonzero Jones vector",
            ));
        }
        Ok(())
    }

    /// Photons per second.
    pub fn photon_rate(&self) -> f64 {
        self.power_w * self.wavelength_m / (PLANCK * SPEED_OF_LIGHT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingMode {
    /// All six analyzers count during the same bin.
    Simultaneous,
    /// Three analyzer settings (X/Y, P/M, R/L), each counted during its own bin.
    #[default]
    Sequential,
}

impl CountingMode {
    /// Projection indices that share one exposure and hence one flux.
    pub fn groups(self) -> &'static [&'static [usize]] {
        match self {
            CountingMode::Simultaneous => &[&[0, 1, 2, 3, 4, 5]],
            CountingMode::Sequential => &[&[0, 1], &[2, 3], &[4, 5]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub mode: CountingMode,
    /// Loss of X-Y coherence at the center of the resonance, in `[0, 1]`.
    /// The coherence is scaled by `1 - depolarization * buildup(df)`, so
    /// light that never enters the cavity is unaffected.
    pub depolarization: f64,
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.depolarization) {
            return Err(Error::invalid("depolarization", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub detector: DetectorModel,
    pub probe: Probe,
    pub seed: u64,
    pub params: Option<CavityParams>,
    #[serde(default)]
    pub options: SimOptions,
}

/// Dark-subtracted counts divided by the loss-free input reference and by
/// the fiber transmittance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSpectra {
    pub t_all: f64,
    /// Per detuning, ordered as [`Projection::ALL`]; NaN where the input
    /// probe has no overlap with the analyzer.
    pub values: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub detunings_hz: Vec<f64>,
    /// Per detuning, ordered as [`Projection::ALL`].
    pub counts: Vec<[u64; 6]>,
    pub meta: SweepMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<NormalizedSpectra>,
}

impl SweepRecord {
    pub fn validate(&self) -> Result<()> {
        if self.detunings_hz.len() != self.counts.len() {
            return Err(Error::Format(format!(
                "{} detunings but {} count rows",
                self.detunings_hz.len(),
                self.counts.len()
            )));
        }
        if self.detunings_hz.iter().any(|f| !f.is_finite()) {
            return Err(Error::Format("non-finite detuning".into()));
        }
        if self.detunings_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format(
                "detuning axis must be strictly increasing".into(),
            ));
        }
        self.meta.detector.validate()?;
        self.meta.probe.validate()
    }

    pub fn len(&self) -> usize {
        self.detunings_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings_hz.is_empty()
    }

    /// Expected counts per bin for each analyzer with no fiber loss and no cavity.
    pub fn reference_counts(&self) -> [f64; 6] {
        let m = &self.meta;
        let scale = m.detector.efficiency * m.probe.photon_rate() * m.detector.bin_time_s;
        let pol = m.probe.polarization.normalized();
        Projection::ALL.map(|p| scale * pol.project(p).norm_sqr())
    }
}

/// Mean photon number in `window_s` for a beam of `power_w` at `wavelength_m`.
pub fn mean_photons_per_window(power_w: f64, wavelength_m: f64, window_s: f64) -> Result<f64> {
    if !(power_w.is_finite() && power_w >= 0.0) {
        return Err(Error::invalid("power_w", "must be >= 0"));
    }
    if !(wavelength_m.is_finite() && wavelength_m > 0.0) {
        return Err(Error::invalid("wavelength_m", "must be positive"));
    }
    if !(window_s.is_finite() && window_s >= 0.0) {
        return Err(Error::invalid("window_s", "must be >= 0"));
    }
    Ok(power_w * window_s * wavelength_m / (PLANCK * SPEED_OF_LIGHT))
}

/// Noise-free projection intensities (per unit input intensity) after the
/// cavity, including the optional build-up-weighted dephasing.
pub fn expected_intensities(
    params: &CavityParams,
    polarization: &JonesField,
    detuning_hz: f64,
    depolarization: f64,
) -> Result<[f64; 6]> {
    let out = polarization::apply_cavity(&polarization.normalized(), params, detuning_hz)?;
    let coherence = 1.0 - depolarization * coupled_mode::buildup(params, detuning_hz);
    let jxx = out.a_x.norm_sqr();
    let jyy = out.a_y.norm_sqr();
    let jxy = out.a_x * out.a_y.conj() * coherence;
    Ok(Projection::ALL.map(|p| {
        let [e0, e1] = p.state();
        // <e|J|e>
        let v = e0.conj() * (e0 * jxx + e1 * jxy) + e1.conj() * (e0 * jxy.conj() + e1 * jyy);
        v.re.max(0.0)
    }))
}

pub(crate) fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    // lambda > 0 and finite, so construction cannot fail
    Poisson::new(lambda)
        .map(|d| d.sample(rng) as u64)
        .unwrap_or(0)
}

/// Simulates one frequency sweep of photon counts in all six analyzer settings.
pub fn simulate_sweep(
    params: &CavityParams,
    probe: &Probe,
    detector: &DetectorModel,
    detunings_hz: &[f64],
    options: &SimOptions,
    seed: u64,
) -> Result<SweepRecord> {
    params.validate()?;
    probe.validate()?;
    detector.validate()?;
    options.validate()?;
    if detunings_hz.is_empty() {
        return Err(Error::Domain("detuning list is empty".into()));
    }
    let scale = detector.efficiency * probe.photon_rate() * detector.bin_time_s;
    let dark = detector.dark_counts_per_bin();
    let mut counts = Vec::with_capacity(detunings_hz.len());
    for (i, &df) in detunings_hz.iter().enumerate() {
        let intensities =
            expected_intensities(params, &probe.polarization, df, options.depolarization)
                .map_err(|e| Error::at(i, e))?;
        let mut rng = point_rng(seed, i);
        let mut row = [0u64; 6];
        for (k, intensity) in intensities.iter().enumerate() {
            let lambda = scale * intensity + dark;
            if lambda > COUNT_CAP {
                return Err(Error::at(
                    i,
                    Error::CountOverflow {
                        expected: lambda,
                        cap: COUNT_CAP,
                    },
                ));
            }
            row[k] = draw(&mut rng, lambda);
        }
        counts.push(row);
    }
    let record = SweepRecord {
        detunings_hz: detunings_hz.to_vec(),
        counts,
        meta: SweepMeta {
            detector: *detector,
            probe: *probe,
            seed,
            params: Some(*params),
            options: *options,
        },
        normalized: None,
    };
    record.validate()?;
    Ok(record)
}

/// Attaches normalized spectra, dark-subtracted and divided by the input
/// reference and by `t_all`. Raw counts are left untouched.
pub fn compensate_transmittance(record: &SweepRecord, t_all: f64) -> Result<SweepRecord> {
    if !(t_all > 0.0 && t_all <= 1.0) {
        return Err(Error::invalid("t_all", format!("{t_all} not in (0, 1]")));
    }
    record.validate()?;
    let reference = record.reference_counts();
    let dark = record.meta.detector.dark_counts_per_bin();
    let values = record
        .counts
        .iter()
        .map(|row| {
            let mut v = [0.0; 6];
            for k in 0..6 {
                let net = (row[k] as f64 - dark).max(0.0);
                v[k] = if reference[k] > 0.0 {
                    net / (reference[k] * t_all)
                } else {
                    f64::NAN
                };
            }
            v
        })
        .collect();
    let mut out = record.clone();
    out.normalized = Some(NormalizedSpectra { t_all, values });
    Ok(out)
}

/// Calibrates the lumped efficiency so that analyzer `p` records
/// `counts_per_bin` far from resonance.
pub fn efficiency_for_counts(
    probe: &Probe,
    params: &CavityParams,
    bin_time_s: f64,
    p: Projection,
    counts_per_bin: f64,
) -> Result<f64> {
    let far = 0.5 * params.fsr_hz;
    let i = expected_intensities(params, &probe.polarization, far, 0.0)?[p.index()];
    let per_unit = probe.photon_rate() * bin_time_s * i;
    if !(per_unit > 0.0) {
        return Err(Error::Domain("analyzer receives no light".into()));
    }
    Ok(counts_per_bin / per_unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> CavityParams {
        CavityParams {
            gamma: 0.0,
            rho_l: 1.9e-5,
            kappa: 2.93e-3,
            fsr_hz: CavityParams::sphere_fsr_hz(43.3e-6, 1.45),
            f_res_hz: SPEED_OF_LIGHT / 780e-9,
            t_all: 0.3,
            theta_offset_rad: 0.0,
        }
    }

    fn probe(power_w: f64) -> Probe {
        Probe {
            power_w,
            wavelength_m: 780e-9,
            polarization: JonesField::balanced(0.0),
        }
    }

    #[test]
    fn photon_numbers() {
        let n = mean_photons_per_window(10.5e-12, 780e-9, 10e-9).unwrap();
        assert!((n - 0.41).abs() < 0.005, "{n}");
        assert_eq!(mean_photons_per_window(10.5e-12, 780e-9, 0.0).unwrap(), 0.0);
        let bright = mean_photons_per_window(1e-6, 780e-9, 10e-9).unwrap();
        assert_relative_eq!(bright, 3.9e4, max_relative = 0.01);
        assert!(mean_photons_per_window(1e-6, 0.0, 1e-9).is_err());
    }

    #[test]
    fn dark_and_blind_detector_gives_zeros() {
        let det = DetectorModel {
            bin_time_s: 1e-3,
            dark_rate_hz: 0.0,
            efficiency: 0.0,
        };
        let axis: Vec<f64> = (0..20).map(|i| i as f64 * 1e6).collect();
        let r = simulate_sweep(
            &params(),
            &probe(1e-11),
            &det,
            &axis,
            &SimOptions::default(),
            1,
        )
        .unwrap();
        assert!(r.counts.iter().all(|row| row.iter().all(|&c| c == 0)));
    }

    #[test]
    fn same_seed_same_record() {
        let det = DetectorModel {
            bin_time_s: 1e-3,
            dark_rate_hz: 300.0,
            efficiency: 0.13,
        };
        let axis: Vec<f64> = (0..64).map(|i| (i as f64 - 32.0) * 1e6).collect();
        let opts = SimOptions::default();
        let a = simulate_sweep(&params(), &probe(10.5e-12), &det, &axis, &opts, 42).unwrap();
        let b = simulate_sweep(&params(), &probe(10.5e-12), &det, &axis, &opts, 42).unwrap();
        let c = simulate_sweep(&params(), &probe(10.5e-12), &det, &axis, &opts, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn overflow_is_rejected() {
        let det = DetectorModel {
            bin_time_s: 1.0,
            dark_rate_hz: 0.0,
            efficiency: 1.0,
        };
        let err = simulate_sweep(
            &params(),
            &probe(1e-3),
            &det,
            &[0.0],
            &SimOptions::default(),
            0,
        );
        assert!(matches!(err, Err(Error::AtIndex { .. })));
    }

    #[test]
    fn critical_null_leaves_only_dark_counts() {
        let base = params();
        let p = base
            .with_deficits(base.x_deficit(), base.x_deficit())
            .unwrap();
        let det = DetectorModel {
            bin_time_s: 1e-3,
            dark_rate_hz: 300.0,
            efficiency: 0.5,
        };
        let x_only = Probe {
            polarization: JonesField::linear(0.0, 0.0, 0.0),
            ..probe(1e-10)
        };
        let axis: Vec<f64> = (0..2000).map(|i| i as f64 * 1e-3).collect();
        let r = simulate_sweep(&p, &x_only, &det, &axis, &SimOptions::default(), 9).unwrap();
        let mean = r.counts.iter().map(|c| c[0] as f64).sum::<f64>() / r.len() as f64;
        // dark mean 0.3 per bin, sd of the mean ~ 0.012
        assert!((mean - 0.3).abs() < 0.06, "{mean}");
    }

    #[test]
    fn compensation_is_linear() {
        let det = DetectorModel {
            bin_time_s: 1e-3,
            dark_rate_hz: 300.0,
            efficiency: 0.13,
        };
        let axis: Vec<f64> = (0..30).map(|i| (i as f64 - 15.0) * 2e6).collect();
        let r = simulate_sweep(
            &params(),
            &probe(10.5e-12),
            &det,
            &axis,
            &SimOptions::default(),
            3,
        )
        .unwrap();
        let one = compensate_transmittance(&r, 1.0).unwrap();
        let half = compensate_transmittance(&r, 0.5).unwrap();
        let a = &one.normalized.as_ref().unwrap().values;
        let b = &half.normalized.as_ref().unwrap().values;
        for (ra, rb) in a.iter().zip(b) {
            for k in 0..6 {
                assert_relative_eq!(rb[k], 2.0 * ra[k], max_relative = 1e-12);
            }
        }
        assert_eq!(one.counts, r.counts);
        assert!(compensate_transmittance(&r, 0.0).is_err());
    }
}
