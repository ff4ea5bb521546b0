//! Browser bindings: a transmission/phase explorer, a simulated purity
//! spectrum with a dephasing knob, and a gap-distance scan.
//!
//! Each export returns a [`Curve`] whose arrays arrive in JavaScript as
//! `Float64Array`s. Missing values (tomography gaps) are `NaN`.

use wasm_bindgen::prelude::*;

use fibersphere::config::{LoadedConfig, Scenario};
use fibersphere::coupled_mode::{self, CouplingRegime, GapCouplingLaw};
use fibersphere::{pipeline, presets, tomography};

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    x: Vec<f64>,
    y: Vec<f64>,
    y2: Vec<f64>,
    label: String,
}

#[wasm_bindgen]
impl Curve {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn y(&self) -> Vec<f64> {
        self.y.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn y2(&self) -> Vec<f64> {
        self.y2.clone()
    }

    /// Short human-readable note about the curve (regime, critical gap, ...).
    #[wasm_bindgen(getter)]
    pub fn label(&self) -> String {
        self.label.clone()
    }
}

fn base_scenario() -> fibersphere::Result<Scenario> {
    LoadedConfig::parse(presets::UNDERCOUPLED)?.config.resolve()
}

fn axis(span_hz: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| -0.5 * span_hz + span_hz * i as f64 / (n - 1) as f64)
        .collect()
}

fn regime_name(r: CouplingRegime) -> &'static str {
    match r {
        CouplingRegime::Undercoupled => "undercoupled",
        CouplingRegime::Critical => "critical",
        CouplingRegime::Overcoupled => "overcoupled",
    }
}

/// `y` = transmittance, `y2` = phase in radians.
pub fn spectrum_curve(
    rho_l: f64,
    kappa: f64,
    span_hz: f64,
    points: usize,
) -> fibersphere::Result<Curve> {
    let mut params = base_scenario()?.params;
    params.rho_l = rho_l;
    params.kappa = kappa;
    let x = axis(span_hz, points);
    let t = coupled_mode::transmittance_spectrum(&params, &x)?;
    let fwhm = coupled_mode::dip_fwhm_hz(&params)
        .map(|w| format!(", FWHM {:.2} MHz", w / 1e6))
        .unwrap_or_default();
    Ok(Curve {
        y: t.iter().map(|c| c.transmittance).collect(),
        y2: t.iter().map(|c| c.phase_rad).collect(),
        x,
        label: format!(
            "{}{fwhm}",
            regime_name(coupled_mode::coupling_regime(&params))
        ),
    })
}

/// `y` = reconstructed purity per point, `y2` = noise-free model purity.
pub fn purity_curve(
    kappa: f64,
    depolarization: f64,
    span_hz: f64,
    points: usize,
    seed: u64,
) -> fibersphere::Result<Curve> {
    let mut s = base_scenario()?;
    s.params.kappa = kappa;
    s.options.depolarization = depolarization;
    s.detunings_hz = axis(span_hz, points);
    s.seed = seed;
    s.mle.seed = seed ^ 0x5eed;
    let record = pipeline::simulate(&s)?;
    let spec = tomography::purity_spectrum(&record, &record.meta.detector, &s.mle)?;
    let y2 = s
        .detunings_hz
        .iter()
        .map(|&f| pipeline::model_purity(&s.params, &s.probe, f, depolarization))
        .collect::<fibersphere::Result<Vec<_>>>()?;
    let far = spec.window_stats(|f| f.abs() >= 0.3 * span_hz);
    let label = far
        .map(|w| format!("outer-window purity {:.4} ± {:.4}", w.mean, w.sd))
        .unwrap_or_default();
    Ok(Curve {
        x: s.detunings_hz,
        y: spec
            .points
            .iter()
            .map(|p| p.purity.unwrap_or(f64::NAN))
            .collect(),
        y2,
        label,
    })
}

/// `x` = gap in nm, `y` = minimum transmittance, `y2` = quality factor.
pub fn gap_curve(
    kappa_0: f64,
    decay_len_nm: f64,
    rho_l: f64,
    d_max_nm: f64,
) -> fibersphere::Result<Curve> {
    let mut base = base_scenario()?.params;
    base.rho_l = rho_l;
    let law = GapCouplingLaw {
        kappa_0,
        decay_len_nm,
    };
    law.validate()?;
    let n = 81;
    let mut curve = Curve {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        y2: Vec::with_capacity(n),
        label: String::new(),
    };
    for i in 0..n {
        let d = d_max_nm * i as f64 / (n - 1) as f64;
        let p = coupled_mode::params_at_gap(&base, &law, d)?;
        let w = coupled_mode::dip_fwhm_hz(&p)?;
        curve.x.push(d);
        curve
            .y
            .push(coupled_mode::transmission(&p, 0.0)?.transmittance);
        curve.y2.push(coupled_mode::quality_factor(p.f_res_hz, w)?);
    }
    curve.label = match law.critical_distance_nm(&base) {
        Some(d) => format!("critical coupling at {d:.0} nm"),
        None => "no critical point: undercoupled at every gap".into(),
    };
    Ok(curve)
}

fn js(e: fibersphere::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn spectrum(rho_l: f64, kappa: f64, span_hz: f64, points: usize) -> Result<Curve, JsError> {
    spectrum_curve(rho_l, kappa, span_hz, points).map_err(js)
}

#[wasm_bindgen]
pub fn purity(
    kappa: f64,
    depolarization: f64,
    span_hz: f64,
    points: usize,
    seed: u32,
) -> Result<Curve, JsError> {
    purity_curve(kappa, depolarization, span_hz, points, u64::from(seed)).map_err(js)
}

#[wasm_bindgen]
pub fn gap_scan(
    kappa_0: f64,
    decay_len_nm: f64,
    rho_l: f64,
    d_max_nm: f64,
) -> Result<Curve, JsError> {
    gap_curve(kappa_0, decay_len_nm, rho_l, d_max_nm).map_err(js)
}
