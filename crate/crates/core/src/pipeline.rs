//! End-to-end runs: simulate a sweep, analyze a record, build figure data.

use serde::{Deserialize, Serialize};

use crate::config::Scenario;
use crate::coupled_mode::{self, CavityParams, CouplingRegime};
use crate::error::{Error, Result};
use crate::fitting::{self, FitResult, GapFit};
use crate::io::{PanelRow, PointFlag, ScanRow, SpectrumRow};
use crate::photon_sim::{self, Probe, SweepRecord};
use crate::polarization::{self, StokesVector};
use crate::tomography::{self, PuritySpectrum, WindowStats};

pub fn simulate(s: &Scenario) -> Result<SweepRecord> {
    photon_sim::simulate_sweep(
        &s.params,
        &s.probe,
        &s.detector,
        &s.detunings_hz,
        &s.options,
        s.seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub points: usize,
    /// Smallest measured transmittance.
    pub t_min_measured: f64,
    /// Transmittance minimum of the fitted model.
    pub t_min_fit: Option<f64>,
    /// Linewidth of the fitted model.
    pub fwhm_hz: Option<f64>,
    pub q: Option<f64>,
    pub regime: Option<CouplingRegime>,
    pub fit: Option<FitResult>,
    /// Why the joint fit was replaced by a transmittance-only fit, or why
    /// no fit is reported.
    pub fit_note: Option<String>,
    pub purity_far: Option<WindowStats>,
    pub purity_near: Option<WindowStats>,
    pub low_signal_points: usize,
    pub not_converged_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub transmittance: Vec<SpectrumRow>,
    pub phase: Vec<SpectrumRow>,
    pub purity: Option<PuritySpectrum>,
    pub summary: Summary,
}

/// Transmittance of the X analyzer, dark-subtracted and normalized by the
/// no-cavity reference and the fiber transmittance.
pub fn transmittance_spectrum(record: &SweepRecord, t_all: f64) -> Result<Vec<SpectrumRow>> {
    let norm = photon_sim::compensate_transmittance(record, t_all)?;
    let values = norm.normalized.map(|n| n.values).unwrap_or_default();
    record
        .detunings_hz
        .iter()
        .zip(values)
        .map(|(&detuning_hz, v)| {
            let x = v[0];
            if x.is_nan() {
                return Err(Error::Domain(
                    "the probe has no X component, so no transmittance".into(),
                ));
            }
            Ok(SpectrumRow {
                detuning_hz,
                value: Some(x),
                flag: PointFlag::Ok,
            })
        })
        .collect()
}

/// Offset-corrected cavity phase from the Stokes parameters of each point.
pub fn phase_spectrum(record: &SweepRecord, theta_offset_rad: f64) -> Vec<SpectrumRow> {
    let pol = record.meta.probe.polarization;
    let (ax, ay) = (pol.a_x.arg(), pol.a_y.arg());
    record
        .detunings_hz
        .iter()
        .zip(&record.counts)
        .map(|(&detuning_hz, counts)| {
            let cs = polarization::stokes_from_counts(counts, &record.meta.detector);
            if cs.low_signal {
                return SpectrumRow {
                    detuning_hz,
                    value: None,
                    flag: PointFlag::LowSignal,
                };
            }
            match polarization::extract_phase(&cs.stokes, ax, ay, theta_offset_rad) {
                Ok(theta) => SpectrumRow {
                    detuning_hz,
                    value: Some(theta),
                    flag: PointFlag::Ok,
                },
                Err(_) => SpectrumRow {
                    detuning_hz,
                    value: None,
                    flag: PointFlag::Indeterminate,
                },
            }
        })
        .collect()
}

fn summarize_fit(fit: &FitResult) -> (Option<f64>, Option<f64>, Option<f64>) {
    let t_min = coupled_mode::transmission(&fit.params, 0.0)
        .ok()
        .map(|t| t.transmittance);
    let fwhm = coupled_mode::dip_fwhm_hz(&fit.params).ok();
    let q = fwhm.and_then(|w| coupled_mode::quality_factor(fit.params.f_res_hz, w).ok());
    (t_min, fwhm, q)
}

/// Spectra, tomography and summary statistics for one record. `s`
/// supplies the fixed cavity quantities (FSR, fiber transmittance,
/// birefringence offset) and the analysis settings.
pub fn analyze(record: &SweepRecord, s: &Scenario) -> Result<Analysis> {
    record.validate()?;
    let base = s.params;
    let transmittance = transmittance_spectrum(record, base.t_all)?;
    let phase = phase_spectrum(record, base.theta_offset_rad);

    let purity = if s.analysis.skip_tomography {
        None
    } else {
        Some(tomography::purity_spectrum(
            record,
            &record.meta.detector,
            &s.mle,
        )?)
    };

    let t_points = crate::io::usable_points(&transmittance);
    let ph_points = crate::io::usable_points(&phase);
    let (fit, fit_note) = match fitting::fit_joint(&t_points, &ph_points, &base, None, &s.fit) {
        Ok(f) => (Some(f), None),
        Err(joint_err) => match fitting::fit_transmittance(&t_points, &base, None, &s.fit) {
            Ok(f) => (
                Some(f),
                Some(format!(
                    "joint fit rejected ({joint_err}); transmittance-only fit"
                )),
            ),
            Err(e) => (None, Some(format!("no fit: {e}"))),
        },
    };
    let (t_min_fit, fwhm_hz, q) = fit.as_ref().map_or((None, None, None), summarize_fit);

    let far = s.analysis.far_window_hz;
    let near = s.analysis.near_window_hz;
    let (purity_far, purity_near, low, not_conv) = match &purity {
        Some(p) => (
            p.window_stats(|f| f.abs() >= far),
            p.window_stats(|f| f.abs() <= near),
            p.points.iter().filter(|x| x.low_signal).count(),
            p.points
                .iter()
                .filter(|x| !x.low_signal && !x.converged)
                .count(),
        ),
        None => (None, None, 0, 0),
    };
    let t_min_measured = t_points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let summary = Summary {
        points: record.len(),
        t_min_measured,
        t_min_fit,
        fwhm_hz,
        q,
        regime: fit.as_ref().map(|f| f.regime),
        fit,
        fit_note,
        purity_far,
        purity_near,
        low_signal_points: low,
        not_converged_points: not_conv,
    };
    Ok(Analysis {
        transmittance,
        phase,
        purity,
        summary,
    })
}

/// Purity of the noise-free output state, including the optional dephasing.
pub fn model_purity(
    params: &CavityParams,
    probe: &Probe,
    detuning_hz: f64,
    depolarization: f64,
) -> Result<f64> {
    let i =
        photon_sim::expected_intensities(params, &probe.polarization, detuning_hz, depolarization)?;
    Ok(tomography::rho_from_stokes(&StokesVector::from_intensities(i))?.purity())
}

/// One figure panel: a named table of measured values and the model curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: &'static str,
    pub rows: Vec<PanelRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2 {
    pub panels: Vec<Panel>,
    pub undercoupled: Summary,
    pub overcoupled: Summary,
}

fn panel<F>(name: &'static str, measured: &[SpectrumRow], model: F) -> Result<Panel>
where
    F: Fn(f64) -> Result<f64>,
{
    let rows = measured
        .iter()
        .map(|r| {
            Ok(PanelRow {
                detuning_hz: r.detuning_hz,
                measured: r.value,
                model: model(r.detuning_hz)?,
                flag: r.flag,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Panel { name, rows })
}

fn purity_rows(p: &Option<PuritySpectrum>, record: &SweepRecord) -> Vec<SpectrumRow> {
    match p {
        Some(spec) => spec
            .points
            .iter()
            .map(|x| SpectrumRow {
                detuning_hz: x.detuning_hz,
                value: x.purity,
                flag: if x.low_signal {
                    PointFlag::LowSignal
                } else if !x.converged {
                    PointFlag::NotConverged
                } else {
                    PointFlag::Ok
                },
            })
            .collect(),
        None => record
            .detunings_hz
            .iter()
            .map(|&f| SpectrumRow {
                detuning_hz: f,
                value: None,
                flag: PointFlag::LowSignal,
            })
            .collect(),
    }
}

/// Transmittance, phase and purity spectra for an undercoupled and an
/// overcoupled configuration, as six panels.
pub fn fig2(under: &Scenario, over: &Scenario) -> Result<Fig2> {
    let mut panels = Vec::with_capacity(6);
    let mut summaries = Vec::with_capacity(2);
    let mut purity = Vec::with_capacity(2);
    for (s, t_name, ph_name) in [
        (under, "fig2a_transmittance_under", "fig2c_phase_under"),
        (over, "fig2b_transmittance_over", "fig2d_phase_over"),
    ] {
        let record = simulate(s)?;
        let a = analyze(&record, s)?;
        let p = s.params;
        panels.push(panel(t_name, &a.transmittance, |f| {
            Ok(coupled_mode::transmission(&p, f)?.transmittance)
        })?);
        panels.push(panel(ph_name, &a.phase, |f| {
            Ok(coupled_mode::transmission(&p, f)?.phase_rad)
        })?);
        purity.push((s, purity_rows(&a.purity, &record)));
        summaries.push(a.summary);
    }
    for ((s, rows), name) in purity
        .into_iter()
        .zip(["fig2e_purity_under", "fig2f_purity_over"])
    {
        panels.push(panel(name, &rows, |f| {
            model_purity(&s.params, &s.probe, f, s.options.depolarization)
        })?);
    }
    panels.sort_by_key(|p| p.name);
    let overcoupled = summaries
        .pop()
        .ok_or_else(|| Error::Fit("missing summary".into()))?;
    let undercoupled = summaries
        .pop()
        .ok_or_else(|| Error::Fit("missing summary".into()))?;
    Ok(Fig2 {
        panels,
        undercoupled,
        overcoupled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3 {
    pub rows: Vec<ScanRow>,
    /// Law refitted from the scan, as a consistency check.
    pub fit: Option<GapFit>,
    pub fit_note: Option<String>,
}

/// Minimum transmittance and linewidth over a gap scan, each measured on a
/// noise-free sampled spectrum.
pub fn fig3(s: &Scenario) -> Result<Fig3> {
    let scan = s
        .scan
        .as_ref()
        .ok_or_else(|| Error::Config("the gap scan needs a [scan] section".into()))?;
    let law = s
        .law
        .ok_or_else(|| Error::Config("the gap scan needs a [gap] law".into()))?;
    let distances = scan.distances()?;
    let rows = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            scan_point(&s.params, &law, d, scan.points, scan.half_span_fwhm)
                .map_err(|e| Error::at(i, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let series: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.d_nm, r.t_min, r.fwhm_hz)).collect();
    let (fit, fit_note) = if series.len() >= 5 {
        match fitting::fit_gap_series(&series, &s.params) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("fewer than 5 distances; no law fitted".into()))
    };
    Ok(Fig3 {
        rows,
        fit,
        fit_note,
    })
}

fn scan_point(
    base: &CavityParams,
    law: &coupled_mode::GapCouplingLaw,
    d_nm: f64,
    points: usize,
    half_span_fwhm: f64,
) -> Result<ScanRow> {
    let p = coupled_mode::params_at_gap(base, law, d_nm)?;
    let width = coupled_mode::dip_fwhm_hz(&p)?;
    let half = half_span_fwhm * width;
    let n = points.max(3) | 1;
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let f = -half + 2.0 * half * i as f64 / (n - 1) as f64;
            coupled_mode::transmission(&p, f).map(|t| (f, t.transmittance))
        })
        .collect::<Result<_>>()?;
    let t_min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let fwhm_hz = coupled_mode::fwhm_hz(&samples)?;
    Ok(ScanRow {
        d_nm,
        t_min,
        q: coupled_mode::quality_factor(p.f_res_hz, fwhm_hz)?,
        fwhm_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn scenario(name: &str) -> Scenario {
        presets::load(name).unwrap().config.resolve().unwrap()
    }

    #[test]
    fn noiseless_style_record_has_unit_purity() {
        let mut s = scenario("undercoupled");
        s.detunings_hz = vec![-20e6, -2e6, 0.0, 2e6, 20e6];
        s.detector.dark_rate_hz = 0.0;
        s.probe.power_w *= 1e4;
        let record = simulate(&s).unwrap();
        let a = analyze(&record, &s).unwrap();
        for p in &a.purity.unwrap().points {
            assert!(p.purity.unwrap() > 0.999, "{p:?}");
        }
    }

    #[test]
    fn gap_scan_is_unimodal() {
        let f = fig3(&scenario("gap_scan")).unwrap();
        let imin = (0..f.rows.len())
            .min_by(|&a, &b| f.rows[a].t_min.total_cmp(&f.rows[b].t_min))
            .unwrap();
        assert!((f.rows[imin].d_nm - 300.0).abs() <= 20.0);
        assert!(f.rows.windows(2).all(|w| w[1].q > w[0].q));
    }
}
