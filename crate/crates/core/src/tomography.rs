//! Single-qubit polarization tomography.
//!
//! Density matrices are written in the `{|X>, |Y>}` basis. With normalized
//! Stokes components `(s1, s2, s3)` the state is
//!
//! ```text
//! rho = (I + s1 Z + s2 X - s3 Y) / 2,   rho_01 = (s2 + i s3) / 2
//! ```
//!
//! so `<X|rho|X> = (1 + s1)/2`, `<P|rho|P> = (1 + s2)/2` and
//! `<R|rho|R> = (1 + s3)/2` with the analyzer states of
//! [`Projection::state`](crate::polarization::Projection::state).
//!
//! The maximum-likelihood estimator searches over a lower-triangular factor
//!
//! ```text
//! G = | t0          0  |      rho = G^H G / Tr(G^H G)
//!     | t2 + i t3   t1 |
//! ```
//!
//! with every `t_k` in `[-1, 1]`, so each candidate is Hermitian, positive
//! semidefinite and unit-trace by construction and pure states sit in the
//! interior of the search box. The flux of each exposure group is a
//! nuisance parameter that is maximized out in closed form for every
//! candidate, leaving a four-dimensional search.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, DeOptions, SimplexOptions};
use crate::photon_sim::{self, CountingMode, DetectorModel, SweepRecord};
use crate::polarization::{Projection, StokesVector};

/// Tolerance used by [`DensityMatrix::check_physical`].
pub const PHYSICAL_TOL: f64 = 1e-12;

/// 2x2 complex matrix in the `{X, Y}` polarization basis.
///
/// Values built by [`rho_from_stokes`] are Hermitian with unit trace but may
/// carry a negative eigenvalue; everything else in this module returns
/// physical states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    m: [[Complex64; 2]; 2],
}

impl DensityMatrix {
    pub fn from_entries(m: [[Complex64; 2]; 2]) -> Self {
        Self { m }
    }

    /// State with normalized Stokes (Bloch) vector `r`.
    pub fn from_bloch(r: [f64; 3]) -> Self {
        let [s1, s2, s3] = r;
        let off = Complex64::new(0.5 * s2, 0.5 * s3);
        Self {
            m: [
                [Complex64::new(0.5 * (1.0 + s1), 0.0), off],
                [off.conj(), Complex64::new(0.5 * (1.0 - s1), 0.0)],
            ],
        }
    }

    /// `|psi><psi|` for the normalized version of `psi = (a_x, a_y)`.
    pub fn pure(psi: [Complex64; 2]) -> Result<Self> {
        let n = psi[0].norm_sqr() + psi[1].norm_sqr();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Domain(
                "state vector must be finite and nonzero".into(),
            ));
        }
        let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = psi[i] * psi[j].conj() / n;
            }
        }
        Ok(Self { m })
    }

    pub fn maximally_mixed() -> Self {
        Self::from_bloch([0.0; 3])
    }

    pub fn entries(&self) -> [[Complex64; 2]; 2] {
        self.m
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0][0] + self.m[1][1]
    }

    /// Normalized Stokes vector `(s1, s2, s3)`.
    pub fn bloch(&self) -> [f64; 3] {
        let tr = self.trace().re;
        [
            (self.m[0][0].re - self.m[1][1].re) / tr,
            (self.m[0][1].re + self.m[1][0].re) / tr,
            (self.m[0][1].im - self.m[1][0].im) / tr,
        ]
    }

    pub fn bloch_length(&self) -> f64 {
        let [a, b, c] = self.bloch();
        (a * a + b * b + c * c).sqrt()
    }

    /// Tr(rho^2).
    pub fn purity(&self) -> f64 {
        let m = &self.m;
        (m[0][0] * m[0][0] + m[0][1] * m[1][0] + m[1][0] * m[0][1] + m[1][1] * m[1][1]).re
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = &self.m;
        let mean = 0.5 * (m[0][0].re + m[1][1].re);
        let half_diff = 0.5 * (m[0][0].re - m[1][1].re);
        let off = 0.5 * (m[0][1] + m[1][0].conj());
        let r = half_diff.hypot(off.norm());
        [mean + r, mean - r]
    }

    /// Probability of a click in analyzer `p`.
    pub fn probability(&self, p: Projection) -> f64 {
        let [e0, e1] = p.state();
        let m = &self.m;
        let v =
            e0.conj() * (m[0][0] * e0 + m[0][1] * e1) + e1.conj() * (m[1][0] * e0 + m[1][1] * e1);
        v.re
    }

    /// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`, using the
    /// qubit closed form `Tr(rho sigma) + 2 sqrt(det rho det sigma)`.
    pub fn fidelity(&self, other: &DensityMatrix) -> f64 {
        let a = &self.m;
        let b = &other.m;
        let overlap =
            (a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1]).re;
        let det = |m: &[[Complex64; 2]; 2]| (m[0][0] * m[1][1] - m[0][1] * m[1][0]).re.max(0.0);
        (overlap + 2.0 * (det(a) * det(b)).sqrt()).clamp(0.0, 1.0)
    }

    /// Half the trace norm of the difference.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let d = std::array::from_fn(|i| std::array::from_fn(|j| self.m[i][j] - other.m[i][j]));
        let [l0, l1] = DensityMatrix { m: d }.eigenvalues();
        0.5 * (l0.abs() + l1.abs())
    }

    /// Checks Hermiticity, unit trace and positivity to `tol`.
    pub fn check_physical(&self, tol: f64) -> Result<()> {
        let m = &self.m;
        let herm = (m[0][1] - m[1][0].conj())
            .norm()
            .max(m[0][0].im.abs())
            .max(m[1][1].im.abs());
        if herm > tol {
            return Err(Error::Domain(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol {
            return Err(Error::Domain(format!("trace {} differs from 1", tr.re)));
        }
        let low = self.eigenvalues()[1];
        if low < -tol {
            return Err(Error::Domain(format!("negative eigenvalue {low:e}")));
        }
        Ok(())
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        self.check_physical(tol).is_ok()
    }

    /// Closest physical state: negative eigenvalues are clipped to zero and
    /// the result renormalized. For a qubit this rescales a Bloch vector
    /// longer than one onto the sphere.
    pub fn clip_to_physical(&self) -> DensityMatrix {
        let r = self.bloch();
        let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if len <= 1.0 {
            DensityMatrix::from_bloch(r)
        } else {
            DensityMatrix::from_bloch(r.map(|v| v / len))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixRepr {
    /// `[row][col] = [re, im]`
    rho: [[[f64; 2]; 2]; 2],
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DensityMatrixRepr {
            rho: self.m.map(|row| row.map(|z| [z.re, z.im])),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DensityMatrixRepr::deserialize(d)?;
        Ok(Self {
            m: r.rho.map(|row| row.map(|[re, im]| Complex64::new(re, im))),
        })
    }
}

/// Linear inversion of a Stokes vector. Positivity is not enforced.
pub fn rho_from_stokes(stokes: &StokesVector) -> Result<DensityMatrix> {
    if !(stokes.s0 > 0.0) {
        return Err(Error::Domain(format!(
            "S0 = {} must be positive",
            stokes.s0
        )));
    }
    Ok(DensityMatrix::from_bloch(stokes.normalized()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleConfig {
    pub scaling_factor: f64,
    pub crossover_prob: f64,
    pub population: usize,
    pub max_generations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            scaling_factor: 1.5,
            crossover_prob: 0.9,
            population: 32,
            max_generations: 500,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scaling_factor.is_finite() && self.scaling_factor > 0.0) {
            return Err(Error::invalid("scaling_factor", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(Error::invalid("crossover_prob", "must lie in [0, 1]"));
        }
        if self.population < 8 {
            return Err(Error::invalid("population", "must be at least 8"));
        }
        if self.max_generations == 0 {
            return Err(Error::invalid("max_generations", "must be at least 1"));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance", "must be >= 0"));
        }
        Ok(())
    }

    fn de_options(&self) -> DeOptions {
        DeOptions {
            scaling_factor: self.scaling_factor,
            crossover_prob: self.crossover_prob,
            population: self.population,
            max_generations: self.max_generations,
            tolerance: self.tolerance,
            stall_generations: 50,
        }
    }
}

/// Counts in the six analyzers, possibly pooled over several bins.
///
/// Counts are real-valued so that noise-free expectations can be fed to the
/// estimator directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSet {
    /// Ordered as [`Projection::ALL`].
    pub counts: [f64; 6],
    /// Number of bins pooled into `counts` (scales the dark level).
    pub bins: f64,
    pub mode: CountingMode,
}

impl CountSet {
    pub fn single(counts: &[u64; 6], mode: CountingMode) -> Self {
        Self {
            counts: counts.map(|n| n as f64),
            bins: 1.0,
            mode,
        }
    }

    pub fn pooled(rows: &[[u64; 6]], mode: CountingMode) -> Self {
        let mut counts = [0.0; 6];
        for row in rows {
            for (c, &n) in counts.iter_mut().zip(row) {
                *c += n as f64;
            }
        }
        Self {
            counts,
            bins: rows.len() as f64,
            mode,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Domain(
                "counts must be finite and non-negative".into(),
            ));
        }
        if !(self.bins.is_finite() && self.bins > 0.0) {
            return Err(Error::invalid("bins", "must be positive"));
        }
        if !(self.counts.iter().sum::<f64>() > 0.0) {
            return Err(Error::Domain("no counts recorded".into()));
        }
        Ok(())
    }
}

/// Linear-inversion estimate with each Stokes component normalized by its
/// own analyzer pair, so exposures with unequal flux do not bias it.
pub fn linear_inversion(counts: &CountSet, detector: &DetectorModel) -> Result<DensityMatrix> {
    counts.validate()?;
    let dark = detector.dark_counts_per_bin() * counts.bins;
    let net = counts.counts.map(|n| (n - dark).max(0.0));
    let mut r = [0.0; 3];
    for (k, pair) in net.chunks(2).enumerate() {
        let total = pair[0] + pair[1];
        if !(total > 0.0) {
            return Err(Error::Domain(format!(
                "analyzer pair {k} has no signal above dark"
            )));
        }
        r[k] = (pair[0] - pair[1]) / total;
    }
    Ok(DensityMatrix::from_bloch(r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub rho: DensityMatrix,
    /// The optimizer met its tolerance; the estimate is returned either way.
    pub converged: bool,
    /// Poisson deviance `2 (ln L_saturated - ln L)` at the estimate.
    pub deviance: f64,
    /// Fitted mean signal counts (excluding dark) per exposure group.
    pub fluxes: Vec<f64>,
    pub generations: usize,
}

fn rho_from_factor(t: &[f64]) -> Option<([f64; 3], DensityMatrix)> {
    let (t0, t1, t2, t3) = (t[0], t[1], t[2], t[3]);
    let tr = t0 * t0 + t1 * t1 + t2 * t2 + t3 * t3;
    if !(tr > 1e-300) {
        return None;
    }
    let r00 = (t0 * t0 + t2 * t2 + t3 * t3) / tr;
    let r11 = t1 * t1 / tr;
    let r01 = Complex64::new(t2 * t1, -t3 * t1) / tr;
    let rho = DensityMatrix {
        m: [
            [Complex64::new(r00, 0.0), r01],
            [r01.conj(), Complex64::new(r11, 0.0)],
        ],
    };
    Some(([r00 - r11, 2.0 * r01.re, 2.0 * r01.im], rho))
}

fn probabilities(r: [f64; 3]) -> [f64; 6] {
    [
        0.5 * (1.0 + r[0]),
        0.5 * (1.0 - r[0]),
        0.5 * (1.0 + r[1]),
        0.5 * (1.0 - r[1]),
        0.5 * (1.0 + r[2]),
        0.5 * (1.0 - r[2]),
    ]
    .map(|p: f64| p.max(0.0))
}

/// Flux maximizing the Poisson likelihood of one exposure group given the
/// analyzer probabilities and the dark level per analyzer.
fn profile_flux(n: &[f64], p: &[f64], dark: f64) -> f64 {
    let total_p: f64 = p.iter().sum();
    let total_n: f64 = n.iter().sum();
    if !(total_p > 0.0) {
        return 0.0;
    }
    if dark <= 0.0 {
        return total_n / total_p;
    }
    // g(N) = sum n p / (N p + D) - sum p is decreasing, g(total_n / total_p) <= 0
    let g = |flux: f64| -> (f64, f64) {
        let mut v = -total_p;
        let mut dv = 0.0;
        for (&nk, &pk) in n.iter().zip(p) {
            let lam = flux * pk + dark;
            v += nk * pk / lam;
            dv -= nk * pk * pk / (lam * lam);
        }
        (v, dv)
    };
    if g(0.0).0 <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, total_n / total_p);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (v, dv) = g(x);
        if v > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - v / dv;
        x = if dv < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi || v == 0.0 {
            break;
        }
    }
    x
}

fn deviance_term(n: f64, lambda: f64) -> f64 {
    if n > 0.0 {
        if lambda <= 0.0 {
            return f64::INFINITY;
        }
        lambda - n + n * (n / lambda).ln()
    } else {
        lambda
    }
}

struct Objective<'a> {
    counts: &'a CountSet,
    dark: f64,
}

impl Objective<'_> {
    fn evaluate(&self, r: [f64; 3]) -> (f64, Vec<f64>) {
        let p = probabilities(r);
        let mut total = 0.0;
        let mut fluxes = Vec::with_capacity(3);
        for group in self.counts.mode.groups() {
            let n: Vec<f64> = group.iter().map(|&k| self.counts.counts[k]).collect();
            let pg: Vec<f64> = group.iter().map(|&k| p[k]).collect();
            let flux = profile_flux(&n, &pg, self.dark);
            for (&nk, &pk) in n.iter().zip(&pg) {
                total += deviance_term(nk, flux * pk + self.dark);
            }
            fluxes.push(flux);
        }
        (2.0 * total, fluxes)
    }

    fn value(&self, t: &[f64]) -> f64 {
        match rho_from_factor(t) {
            Some((r, _)) => self.evaluate(r).0,
            None => f64::INFINITY,
        }
    }
}

fn reconstruct_with_rng(
    counts: &CountSet,
    detector: &DetectorModel,
    config: &MleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MleResult> {
    counts.validate()?;
    let objective = Objective {
        counts,
        dark: detector.dark_counts_per_bin() * counts.bins,
    };
    let bounds = [(-1.0, 1.0); 4];
    let de =
        optim::differential_evolution(|t| objective.value(t), &bounds, &config.de_options(), rng);
    let polish = optim::nelder_mead(
        |t| objective.value(t),
        &de.best,
        &[0.05; 4],
        &SimplexOptions {
            ftol_abs: 1e-15,
            ..SimplexOptions::default()
        },
    );
    let best = if polish.value <= de.value {
        &polish.x
    } else {
        &de.best
    };
    let (r, rho) = rho_from_factor(best).ok_or_else(|| Error::Fit("degenerate factor".into()))?;
    let (deviance, fluxes) = objective.evaluate(r);
    Ok(MleResult {
        rho,
        converged: de.converged || polish.converged,
        deviance,
        fluxes,
        generations: de.generations,
    })
}

/// Maximum-likelihood state from one count set, seeded by `config.seed`.
pub fn mle_reconstruct(
    counts: &CountSet,
    detector: &DetectorModel,
    config: &MleConfig,
) -> Result<MleResult> {
    detector.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    reconstruct_with_rng(counts, detector, config, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityPoint {
    pub detuning_hz: f64,
    /// `None` where an analyzer pair saw nothing above the dark level.
    pub purity: Option<f64>,
    pub rho: Option<DensityMatrix>,
    pub converged: bool,
    pub low_signal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean: f64,
    /// Sample standard deviation (zero for a single point).
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuritySpectrum {
    pub points: Vec<PurityPoint>,
}

impl PuritySpectrum {
    /// Mean and spread of the available purities at detunings accepted by
    /// `include`.
    pub fn window_stats(&self, include: impl Fn(f64) -> bool) -> Option<WindowStats> {
        let v: Vec<f64> = self
            .points
            .iter()
            .filter(|p| include(p.detuning_hz))
            .filter_map(|p| p.purity)
            .collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(WindowStats {
            mean,
            sd,
            count: v.len(),
        })
    }
}

/// Reconstructs every detuning point of a sweep independently.
///
/// Point `i` uses DE stream `(config.seed, i)`, so the output does not
/// depend on thread scheduling.
pub fn purity_spectrum(
    record: &SweepRecord,
    detector: &DetectorModel,
    config: &MleConfig,
) -> Result<PuritySpectrum> {
    record.validate()?;
    detector.validate()?;
    config.validate()?;
    let mode = record.meta.options.mode;
    let point = |i: usize| -> Result<PurityPoint> {
        let detuning_hz = record.detunings_hz[i];
        let counts = &record.counts[i];
        let flags = crate::polarization::stokes_from_counts(counts, detector);
        if flags.low_signal {
            return Ok(PurityPoint {
                detuning_hz,
                purity: None,
                rho: None,
                converged: false,
                low_signal: true,
            });
        }
        let mut rng = photon_sim::point_rng(config.seed, i);
        let r = reconstruct_with_rng(&CountSet::single(counts, mode), detector, config, &mut rng)
            .map_err(|e| Error::at(i, e))?;
        Ok(PurityPoint {
            detuning_hz,
            purity: Some(r.rho.purity()),
            rho: Some(r.rho),
            converged: r.converged,
            low_signal: false,
        })
    };
    #[cfg(feature = "parallel")]
    let points = {
        use rayon::prelude::*;
        (0..record.len())
            .into_par_iter()
            .map(point)
            .collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let points = (0..record.len()).map(point).collect::<Result<Vec<_>>>()?;
    Ok(PuritySpectrum { points })
}
