//! Two-mode Jones fields, the polarization-selective cavity channel and
//! Stokes polarimetry.
//!
//! Handedness: the analyzer states are
//! `|R> = (|X> - i|Y>)/sqrt(2)` and `|L> = (|X> + i|Y>)/sqrt(2)`, so the
//! projected amplitudes are `A_R = (A_X + i A_Y)/sqrt(2)` and
//! `A_L = (A_X - i A_Y)/sqrt(2)`. With this choice `S2 + i S3` is
//! proportional to `A_X conj(A_Y)`, the X-Y phase difference is
//! `atan2(S3, S2)` and the density matrix built from the Stokes vector with a
//! `-S3 Y` term equals `|psi><psi|` for a pure field.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coupled_mode::{self, wrap_phase, CavityParams};
use crate::error::{Error, Result};
use crate::photon_sim::DetectorModel;

/// `sqrt(mu0 / eps0)` in ohms.
pub const VACUUM_IMPEDANCE: f64 = 376.730_313_668;

/// Relative threshold on `(s2^2 + s3^2) / s0^2` below which no phase can be read.
pub const PHASE_TOL: f64 = 1e-20;

/// Complex X/Y amplitudes of the guided field at one optical frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JonesField {
    pub a_x: Complex64,
    pub a_y: Complex64,
    pub frequency_hz: f64,
}

impl JonesField {
    pub fn new(a_x: Complex64, a_y: Complex64, frequency_hz: f64) -> Self {
        Self {
            a_x,
            a_y,
            frequency_hz,
        }
    }

    /// Unit-intensity field `cos(angle) |X> + sin(angle) e^{i phase} |Y>`.
    pub fn linear(angle_rad: f64, relative_phase_rad: f64, frequency_hz: f64) -> Self {
        Self::new(
            Complex64::new(angle_rad.cos(), 0.0),
            Complex64::from_polar(angle_rad.sin(), relative_phase_rad),
            frequency_hz,
        )
    }

    /// Equal-weight superposition of X and Y, as prepared by a half-wave plate at 22.5 deg.
    pub fn balanced(frequency_hz: f64) -> Self {
        Self::linear(std::f64::consts::FRAC_PI_4, 0.0, frequency_hz)
    }

    pub fn intensity(&self) -> f64 {
        self.a_x.norm_sqr() + self.a_y.norm_sqr()
    }

    pub fn normalized(&self) -> Self {
        let n = self.intensity().sqrt();
        if n == 0.0 {
            *self
        } else {
            Self::new(self.a_x / n, self.a_y / n, self.frequency_hz)
        }
    }

    /// Amplitude transmitted by the analyzer `p`, `<e_p|psi>`.
    pub fn project(&self, p: Projection) -> Complex64 {
        let [e0, e1] = p.state();
        e0.conj() * self.a_x + e1.conj() * self.a_y
    }

    pub fn is_finite(&self) -> bool {
        self.a_x.is_finite() && self.a_y.is_finite()
    }
}

/// The six analyzer settings of a polarization tomography run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Projection {
    X,
    Y,
    P,
    M,
    R,
    L,
}

impl Projection {
    pub const ALL: [Projection; 6] = [
        Projection::X,
        Projection::Y,
        Projection::P,
        Projection::M,
        Projection::R,
        Projection::L,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Analyzer state in the {X, Y} basis.
    pub fn state(self) -> [Complex64; 2] {
        let h = FRAC_1_SQRT_2;
        let r = |re: f64, im: f64| Complex64::new(re, im);
        match self {
            Projection::X => [r(1.0, 0.0), r(0.0, 0.0)],
            Projection::Y => [r(0.0, 0.0), r(1.0, 0.0)],
            Projection::P => [r(h, 0.0), r(h, 0.0)],
            Projection::M => [r(h, 0.0), r(-h, 0.0)],
            Projection::R => [r(h, 0.0), r(0.0, -h)],
            Projection::L => [r(h, 0.0), r(0.0, h)],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Projection::X => "x",
            Projection::Y => "y",
            Projection::P => "p",
            Projection::M => "m",
            Projection::R => "r",
            Projection::L => "l",
        }
    }
}

/// Stokes parameters in a common intensity unit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        Self { s0, s1, s2, s3 }
    }

    /// From intensities ordered as [`Projection::ALL`].
    pub fn from_intensities(i: [f64; 6]) -> Self {
        Self {
            s0: i[0] + i[1],
            s1: i[0] - i[1],
            s2: i[2] - i[3],
            s3: i[4] - i[5],
        }
    }

    /// `(s1, s2, s3) / s0`.
    pub fn normalized(&self) -> [f64; 3] {
        [self.s1 / self.s0, self.s2 / self.s0, self.s3 / self.s0]
    }

    pub fn polarized_intensity(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    pub fn degree_of_polarization(&self) -> f64 {
        self.polarized_intensity() / self.s0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.s0 * k, self.s1 * k, self.s2 * k, self.s3 * k)
    }
}

/// Passes `input` through the fiber-resonator junction: the X mode picks up
/// the cavity response and the birefringence offset, Y is the reference.
pub fn apply_cavity(
    input: &JonesField,
    params: &CavityParams,
    detuning_hz: f64,
) -> Result<JonesField> {
    let t = coupled_mode::transmission(params, detuning_hz)?;
    let fiber = params.t_all.sqrt();
    let birefringence = Complex64::from_polar(1.0, params.theta_offset_rad);
    Ok(JonesField::new(
        input.a_x * t.amplitude_ratio * birefringence * fiber,
        input.a_y * fiber,
        params.f_res_hz + detuning_hz,
    ))
}

/// Projection intensities `|A_p|^2 / (2 eta)` ordered as [`Projection::ALL`].
pub fn projection_intensities(field: &JonesField) -> [f64; 6] {
    Projection::ALL.map(|p| field.project(p).norm_sqr() / (2.0 * VACUUM_IMPEDANCE))
}

pub fn stokes_from_field(field: &JonesField) -> StokesVector {
    StokesVector::from_intensities(projection_intensities(field))
}

/// Phase of the X mode relative to Y, corrected for the input phases and
/// the birefringence offset; wrapped into `(-pi, pi]`.
pub fn extract_phase(
    stokes: &StokesVector,
    arg_a0x: f64,
    arg_a0y: f64,
    theta_offset_rad: f64,
) -> Result<f64> {
    let coherent = stokes.s2 * stokes.s2 + stokes.s3 * stokes.s3;
    if !(stokes.s0 > 0.0) || !(coherent > PHASE_TOL * stokes.s0 * stokes.s0) {
        return Err(Error::IndeterminatePhase(coherent));
    }
    Ok(wrap_phase(
        stokes.s3.atan2(stokes.s2) - arg_a0x + arg_a0y - theta_offset_rad,
    ))
}

/// Stokes vector estimated from one set of photon counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountStokes {
    pub stokes: StokesVector,
    /// Some projection fell below the dark level and was clamped to zero.
    pub clamped: bool,
    /// Some analyzer pair carries no signal above the dark level, so the
    /// corresponding Stokes component is undefined.
    pub low_signal: bool,
}

/// Dark-subtracted Stokes parameters from counts ordered as [`Projection::ALL`].
pub fn stokes_from_counts(counts: &[u64; 6], detector: &DetectorModel) -> CountStokes {
    let dark = detector.dark_counts_per_bin();
    let mut clamped = false;
    let net = counts.map(|n| {
        let v = n as f64 - dark;
        if v < 0.0 {
            clamped = true;
            0.0
        } else {
            v
        }
    });
    let low_signal = net.chunks(2).any(|pair| !(pair[0] + pair[1] > 0.0));
    CountStokes {
        stokes: StokesVector::from_intensities(net),
        clamped,
        low_signal,
    }
}
