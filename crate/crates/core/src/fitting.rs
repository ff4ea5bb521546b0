//! Recovering cavity parameters from measured spectra.
//!
//! Spectra are fitted in terms of the loss deficits `a = 1 - x` and
//! `c = 1 - y`, searched on a log scale together with a resonance offset.
//! The fiber loss `gamma`, the free spectral range and the absolute
//! resonance frequency are taken from a base parameter set and held fixed.
//!
//! Transmittance alone is invariant under `x <-> y`, so a transmittance-only
//! fit always has a twin solution on the other side of critical coupling.
//! [`fit_transmittance`] reports that through [`FitResult::degenerate`];
//! [`fit_joint`] adds the phase, which tells the two apart.

use serde::{Deserialize, Serialize};

use crate::coupled_mode::{self, CavityParams, CouplingRegime, GapCouplingLaw};
use crate::error::{Error, Result};
use crate::optim::{self, DeOptions, SimplexOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Number of seeded simplex starts, split between the two coupling
    /// assignments.
    pub starts: usize,
    /// Weight of phase residuals (radians) relative to transmittance residuals.
    pub phase_weight: f64,
    /// A joint fit is rejected when either part of its residual exceeds the
    /// matching separate fit by this factor.
    pub consistency_factor: f64,
    /// Residual below which a fit counts as exact for the consistency test.
    pub residual_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            phase_weight: 1.0,
            consistency_factor: 10.0,
            residual_floor: 1e-6,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.starts < 8 {
            return Err(Error::invalid("starts", "at least 8 starts are required"));
        }
        if !(self.phase_weight.is_finite() && self.phase_weight > 0.0) {
            return Err(Error::invalid("phase_weight", "must be positive"));
        }
        if !(self.consistency_factor.is_finite() && self.consistency_factor >= 1.0) {
            return Err(Error::invalid("consistency_factor", "must be >= 1"));
        }
        if !(self.residual_floor.is_finite() && self.residual_floor >= 0.0) {
            return Err(Error::invalid("residual_floor", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Fitted parameters; `f_res_hz` includes `detuning_offset_hz`.
    pub params: CavityParams,
    /// Position of the fitted resonance on the input detuning axis.
    pub detuning_offset_hz: f64,
    /// RMS over all residuals that entered the fit (unweighted).
    pub residual_rms: f64,
    pub transmittance_rms: Option<f64>,
    pub phase_rms: Option<f64>,
    /// Variances of `[rho_l, kappa, detuning_offset_hz]`.
    pub covariance_diag: Vec<f64>,
    pub converged: bool,
    /// Both coupling assignments explain the data equally well.
    pub degenerate: bool,
    pub regime: CouplingRegime,
}

/// Inverse-variance weights for a transmittance spectrum built as
/// `counts / scale`, with Poisson variance and a one-count floor.
pub fn poisson_weights(counts: &[f64], scale: f64) -> Vec<f64> {
    counts.iter().map(|&n| scale * scale / n.max(1.0)).collect()
}

struct Problem<'a> {
    t: &'a [(f64, f64)],
    t_weights: Option<&'a [f64]>,
    phase: &'a [(f64, f64)],
    phase_weight: f64,
    base: CavityParams,
    a_floor: f64,
    /// Hz per unit of the offset coordinate.
    scale_hz: f64,
}

impl Problem<'_> {
    fn params(&self, p: &[f64]) -> Option<(CavityParams, f64)> {
        let a = self.a_floor + p[0].exp();
        let c = p[1].exp();
        if !(a < 1.0 && c <= 1.0) {
            return None;
        }
        let params = self.base.with_deficits(a, c).ok()?;
        Some((params, p[2] * self.scale_hz))
    }

    /// Transmittance and phase residuals, unweighted.
    fn residuals(
        &self,
        params: &CavityParams,
        offset: f64,
        t_out: &mut Vec<f64>,
        ph_out: &mut Vec<f64>,
    ) -> bool {
        t_out.clear();
        ph_out.clear();
        for &(f, t) in self.t {
            match coupled_mode::evaluate(params, f - offset) {
                Ok(m) => t_out.push(m.transmittance - t),
                Err(_) => return false,
            }
        }
        for &(f, th) in self.phase {
            match coupled_mode::evaluate(params, f - offset) {
                Ok(m) => ph_out.push(coupled_mode::wrap_phase(th - m.phase_rad)),
                Err(_) => return false,
            }
        }
        true
    }

    fn weighted_cost(&self, t_res: &[f64], ph_res: &[f64]) -> f64 {
        let t: f64 = match self.t_weights {
            Some(w) => t_res.iter().zip(w).map(|(r, w)| w * r * r).sum(),
            None => t_res.iter().map(|r| r * r).sum(),
        };
        let w2 = self.phase_weight * self.phase_weight;
        t + w2 * ph_res.iter().map(|r| r * r).sum::<f64>()
    }

    fn cost(&self, p: &[f64]) -> f64 {
        let Some((params, offset)) = self.params(p) else {
            return f64::INFINITY;
        };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        if !self.residuals(&params, offset, &mut a, &mut b) {
            return f64::INFINITY;
        }
        self.weighted_cost(&a, &b)
    }

    fn len(&self) -> usize {
        self.t.len() + self.phase.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Seed {
    deficit_sum: f64,
    contrast: f64,
    offset_hz: f64,
}

fn moving_average(v: &[f64], half: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Dip depth and width heuristics: near resonance the dip is a Lorentzian
/// of half width `a + c` in round-trip phase and depth `((c - a)/(c + a))^2`.
fn seed_from_spectrum(spectrum: &[(f64, f64)], fsr_hz: f64) -> Result<Seed> {
    let values: Vec<f64> = spectrum.iter().map(|p| p.1).collect();
    let half = if spectrum.len() >= 25 { 2 } else { 0 };
    let smooth = moving_average(&values, half);
    let smoothed: Vec<(f64, f64)> = spectrum
        .iter()
        .zip(&smooth)
        .map(|(p, &s)| (p.0, s))
        .collect();
    let baseline = coupled_mode::edge_baseline(&smoothed);
    let (imin, tmin) =
        smooth.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (i, &t)| if t < acc.1 { (i, t) } else { acc },
        );
    if !(baseline > 0.0 && tmin < baseline) {
        return Err(Error::NoDip);
    }
    let level = 0.5 * (baseline + tmin);
    let crossings = coupled_mode::half_crossings(&smoothed, level);
    let f0 = spectrum[imin].0;
    let left = crossings
        .iter()
        .copied()
        .filter(|&f| f <= f0)
        .fold(f64::NAN, f64::max);
    let right = crossings
        .iter()
        .copied()
        .filter(|&f| f >= f0)
        .fold(f64::NAN, f64::min);
    let span = spectrum[spectrum.len() - 1].0 - spectrum[0].0;
    let width = if left.is_finite() && right.is_finite() {
        right - left
    } else {
        return Err(Error::Fit(
            "spectrum does not span the dip's full width".into(),
        ));
    };
    if !(width > 0.0 && width < span) {
        return Err(Error::Fit(
            "spectrum does not span the dip's full width".into(),
        ));
    }
    Ok(Seed {
        deficit_sum: std::f64::consts::PI * width / fsr_hz,
        contrast: (tmin.max(0.0) / baseline).sqrt().min(0.95),
        offset_hz: f0,
    })
}

fn validate_spectrum(spectrum: &[(f64, f64)], what: &'static str, range: (f64, f64)) -> Result<()> {
    if spectrum.len() < 8 {
        return Err(Error::invalid(what, "need at least 8 points"));
    }
    for (i, &(f, v)) in spectrum.iter().enumerate() {
        if !f.is_finite() || !(v >= range.0 && v <= range.1) {
            return Err(Error::at(
                i,
                Error::invalid(what, format!("sample ({f}, {v}) out of range")),
            ));
        }
    }
    if spectrum.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::invalid(
            what,
            "detuning axis must be strictly increasing",
        ));
    }
    Ok(())
}

struct Candidate {
    p: Vec<f64>,
    cost: f64,
    converged: bool,
    overcoupled: bool,
}

fn start_points(
    seed: &Seed,
    initial: Option<(f64, f64, f64)>,
    starts: usize,
) -> Vec<(Vec<f64>, bool)> {
    const SPREAD: [(f64, f64); 5] = [(1.0, 1.0), (0.8, 1.0), (1.25, 1.0), (1.0, 0.5), (1.0, 1.5)];
    let mut out = Vec::with_capacity(starts + 1);
    if let Some((a, c, off)) = initial {
        out.push((vec![a.ln(), c.ln(), off], c > a));
    }
    for k in 0..starts {
        let (fs, fr) = SPREAD[(k / 2) % SPREAD.len()];
        let jitter = 1.0 + 0.1 * (k / (2 * SPREAD.len())) as f64;
        let s = seed.deficit_sum * fs * jitter;
        let r = (seed.contrast * fr).clamp(0.02, 0.98);
        let (hi, lo) = (0.5 * s * (1.0 + r), 0.5 * s * (1.0 - r));
        let over = k % 2 == 1;
        let (a, c) = if over { (lo, hi) } else { (hi, lo) };
        out.push((vec![a.ln(), c.ln(), seed.offset_hz], over));
    }
    out
}

fn run_starts(problem: &Problem<'_>, starts: &[(Vec<f64>, bool)]) -> Vec<Candidate> {
    let opts = SimplexOptions {
        max_evaluations: 6000,
        ftol_abs: 0.0,
        ftol_rel: 1e-15,
        xtol: 1e-12,
        restarts: 4,
    };
    let one = |(p0, over): &(Vec<f64>, bool)| {
        let mut p = p0.clone();
        p[2] /= problem.scale_hz;
        let r = optim::nelder_mead(|q| problem.cost(q), &p, &[0.2, 0.2, 0.1], &opts);
        let overcoupled = problem
            .params(&r.x)
            .map(|(q, _)| coupled_mode::coupling_regime(&q) == CouplingRegime::Overcoupled)
            .unwrap_or(*over);
        Candidate {
            p: r.x,
            cost: r.value,
            converged: r.converged,
            overcoupled,
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        starts.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        starts.iter().map(one).collect()
    }
}

fn global_fallback(problem: &Problem<'_>, seed: &Seed, span_hz: f64) -> Candidate {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let ls = seed.deficit_sum.ln();
    let z = 0.5 * span_hz / problem.scale_hz;
    let z0 = seed.offset_hz / problem.scale_hz;
    let bounds = [(ls - 6.0, ls + 1.0), (ls - 6.0, ls + 1.0), (z0 - z, z0 + z)];
    let de = optim::differential_evolution(
        |q| problem.cost(q),
        &bounds,
        &DeOptions::default(),
        &mut rng,
    );
    let r = optim::nelder_mead(
        |q| problem.cost(q),
        &de.best,
        &[0.1, 0.1, 0.05],
        &SimplexOptions::default(),
    );
    let overcoupled = problem
        .params(&r.x)
        .map(|(q, _)| coupled_mode::coupling_regime(&q) == CouplingRegime::Overcoupled)
        .unwrap_or(false);
    Candidate {
        p: r.x,
        cost: r.value,
        converged: r.converged,
        overcoupled,
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64).sqrt()
    }
}

/// Solves the symmetric system by Gauss-Jordan elimination and returns the
/// inverse diagonal, or NaNs when singular.
fn inverse_diag(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap_or(col);
        if !(m[piv][col].abs() > 1e-300) {
            return vec![f64::NAN; n];
        }
        m.swap(col, piv);
        inv.swap(col, piv);
        let d = m[col][col];
        for j in 0..n {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                for j in 0..n {
                    m[row][j] -= f * m[col][j];
                    inv[row][j] -= f * inv[col][j];
                }
            }
        }
    }
    (0..n).map(|i| inv[i][i]).collect()
}

/// Variances of `(rho_l, kappa, offset)` from a finite-difference Jacobian
/// of the weighted residuals.
fn covariance(problem: &Problem<'_>, params: &CavityParams, offset: f64, cost: f64) -> Vec<f64> {
    let dof = problem.len().saturating_sub(3).max(1) as f64;
    let sigma2 = cost / dof;
    let theta = [params.rho_l, params.kappa, offset];
    let steps = [
        1e-5 * params.rho_l.abs().max(1e-9),
        1e-5 * params.kappa.abs().max(1e-9),
        1e-5 * problem.scale_hz,
    ];
    let weighted = |th: &[f64; 3]| -> Option<Vec<f64>> {
        let q = CavityParams {
            rho_l: th[0].max(0.0),
            kappa: th[1],
            ..*params
        };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        if !problem.residuals(&q, th[2], &mut a, &mut b) {
            return None;
        }
        if let Some(w) = problem.t_weights {
            for (r, w) in a.iter_mut().zip(w) {
                *r *= w.sqrt();
            }
        }
        a.extend(b.iter().map(|r| r * problem.phase_weight));
        Some(a)
    };
    let mut jac: Vec<Vec<f64>> = Vec::with_capacity(3);
    for k in 0..3 {
        let (mut up, mut dn) = (theta, theta);
        up[k] += steps[k];
        dn[k] -= steps[k];
        let (Some(ru), Some(rd)) = (weighted(&up), weighted(&dn)) else {
            return vec![f64::NAN; 3];
        };
        jac.push(
            ru.iter()
                .zip(&rd)
                .map(|(u, d)| (u - d) / (2.0 * steps[k]))
                .collect(),
        );
    }
    let jtj: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            (0..3)
                .map(|j| jac[i].iter().zip(&jac[j]).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    inverse_diag(jtj).into_iter().map(|v| v * sigma2).collect()
}

fn solve(
    problem: &Problem<'_>,
    seed: &Seed,
    initial: Option<&CavityParams>,
    span_hz: f64,
    options: &FitOptions,
) -> Result<FitResult> {
    let init = initial.map(|p| {
        let a = (p.x_deficit() - problem.a_floor).max(1e-300);
        (a, p.y_deficit().max(1e-300), seed.offset_hz)
    });
    let starts = start_points(seed, init, options.starts);
    let mut candidates = run_starts(problem, &starts);
    if !candidates.iter().any(|c| c.converged && c.cost.is_finite()) {
        candidates.push(global_fallback(problem, seed, span_hz));
    }
    // lowest cost wins, the earliest start on ties
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.cost < candidates[best].cost {
            best = i;
        }
    }
    let best_cost = candidates[best].cost;
    if !best_cost.is_finite() {
        return Err(Error::Fit("no start produced a finite residual".into()));
    }
    let best_of = |over: bool| {
        candidates
            .iter()
            .filter(|c| c.overcoupled == over)
            .map(|c| c.cost)
            .fold(f64::INFINITY, f64::min)
    };
    let (cu, co) = (best_of(false), best_of(true));
    let dof = problem.len().saturating_sub(3).max(1) as f64;
    let noise = (best_cost / dof).max(1e-24);
    let degenerate = (cu - co).abs() <= noise + 1e-9 * cu.min(co);
    if degenerate {
        // identical evidence: follow the caller's guess when there is one
        if let Some(guess) = initial {
            let want = coupled_mode::coupling_regime(guess) == CouplingRegime::Overcoupled;
            if candidates[best].overcoupled != want {
                if let Some(i) = (0..candidates.len())
                    .filter(|&i| candidates[i].overcoupled == want)
                    .min_by(|&a, &b| candidates[a].cost.total_cmp(&candidates[b].cost))
                {
                    best = i;
                }
            }
        }
    }
    let chosen = &candidates[best];
    let (mut params, offset) = problem
        .params(&chosen.p)
        .ok_or_else(|| Error::Fit("best candidate left the physical domain".into()))?;
    let (mut t_res, mut ph_res) = (Vec::new(), Vec::new());
    problem.residuals(&params, offset, &mut t_res, &mut ph_res);
    let covariance_diag = covariance(problem, &params, offset, chosen.cost);
    let mut all = t_res.clone();
    all.extend(&ph_res);
    let regime = coupled_mode::coupling_regime(&params);
    params.f_res_hz += offset;
    Ok(FitResult {
        params,
        detuning_offset_hz: offset,
        residual_rms: rms(&all),
        transmittance_rms: (!problem.t.is_empty()).then(|| rms(&t_res)),
        phase_rms: (!problem.phase.is_empty()).then(|| rms(&ph_res)),
        covariance_diag,
        converged: chosen.converged,
        degenerate,
        regime,
    })
}

fn problem_for<'a>(
    t: &'a [(f64, f64)],
    t_weights: Option<&'a [f64]>,
    phase: &'a [(f64, f64)],
    base: &CavityParams,
    seed: &Seed,
    options: &FitOptions,
) -> Problem<'a> {
    Problem {
        t,
        t_weights,
        phase,
        phase_weight: options.phase_weight,
        base: *base,
        a_floor: -(0.5 * (-base.gamma).ln_1p()).exp_m1(),
        scale_hz: seed.deficit_sum * base.fsr_hz / std::f64::consts::PI,
    }
}

/// Least-squares fit of a transmittance spectrum.
///
/// `base` supplies the fixed quantities (`gamma`, FSR, resonance frequency,
/// fiber transmittance, phase offset). Without `initial` the starts are
/// seeded from the dip's depth and width.
pub fn fit_transmittance(
    spectrum: &[(f64, f64)],
    base: &CavityParams,
    initial: Option<&CavityParams>,
    options: &FitOptions,
) -> Result<FitResult> {
    fit_transmittance_weighted(spectrum, None, base, initial, options)
}

/// [`fit_transmittance`] with per-point weights (inverse variances).
pub fn fit_transmittance_weighted(
    spectrum: &[(f64, f64)],
    weights: Option<&[f64]>,
    base: &CavityParams,
    initial: Option<&CavityParams>,
    options: &FitOptions,
) -> Result<FitResult> {
    base.validate()?;
    options.validate()?;
    validate_spectrum(spectrum, "transmittance", (0.0, 1.2))?;
    if let Some(w) = weights {
        if w.len() != spectrum.len() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "weights",
                "need one finite, non-negative weight per point",
            ));
        }
    }
    let seed = seed_from_spectrum(spectrum, base.fsr_hz)?;
    let span = spectrum[spectrum.len() - 1].0 - spectrum[0].0;
    let problem = problem_for(spectrum, weights, &[], base, &seed, options);
    solve(&problem, &seed, initial, span, options)
}

/// Joint fit of transmittance and phase; phase residuals are measured on
/// the circle. Points with a non-finite phase are skipped.
pub fn fit_joint(
    t_spectrum: &[(f64, f64)],
    phase_spectrum: &[(f64, f64)],
    base: &CavityParams,
    initial: Option<&CavityParams>,
    options: &FitOptions,
) -> Result<FitResult> {
    base.validate()?;
    options.validate()?;
    validate_spectrum(t_spectrum, "transmittance", (0.0, 1.2))?;
    let phase: Vec<(f64, f64)> = phase_spectrum
        .iter()
        .copied()
        .filter(|p| p.1.is_finite())
        .collect();
    validate_spectrum(&phase, "phase", (-10.0, 10.0))?;
    let seed = seed_from_spectrum(t_spectrum, base.fsr_hz)?;
    let span = t_spectrum[t_spectrum.len() - 1].0 - t_spectrum[0].0;

    let joint = solve(
        &problem_for(t_spectrum, None, &phase, base, &seed, options),
        &seed,
        initial,
        span,
        options,
    )?;
    let t_only = solve(
        &problem_for(t_spectrum, None, &[], base, &seed, options),
        &seed,
        initial,
        span,
        options,
    )?;
    let ph_only = solve(
        &problem_for(&[], None, &phase, base, &seed, options),
        &seed,
        initial,
        span,
        options,
    )?;

    let floor = options.residual_floor;
    let k = options.consistency_factor;
    let t_sep = t_only.residual_rms.max(floor);
    let ph_sep = ph_only.residual_rms.max(floor);
    let t_joint = joint.transmittance_rms.unwrap_or(0.0);
    let ph_joint = joint.phase_rms.unwrap_or(0.0);
    if t_joint > k * t_sep || ph_joint > k * ph_sep {
        return Err(Error::InconsistentSpectra {
            joint: joint.residual_rms,
            separate: t_only.residual_rms.max(ph_only.residual_rms),
        });
    }
    Ok(joint)
}

/// Result of fitting a gap-distance series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapFit {
    pub law: GapCouplingLaw,
    /// Gap of critical coupling; `None` when the fitted law does not cross
    /// it inside the measured distance range.
    pub d_c_nm: Option<f64>,
    pub residual_rms: f64,
    pub converged: bool,
}

fn gap_residuals(
    series: &[(f64, f64, f64)],
    base: &CavityParams,
    law: &GapCouplingLaw,
) -> Option<Vec<f64>> {
    if law.validate().is_err() {
        return None;
    }
    let mut out = Vec::with_capacity(2 * series.len());
    for &(d, t_min, fwhm) in series {
        let p = coupled_mode::params_at_gap(base, law, d).ok()?;
        let m = coupled_mode::evaluate(&p, 0.0).ok()?;
        let w = coupled_mode::dip_fwhm_hz(&p).ok()?;
        out.push(m.transmittance - t_min);
        out.push((w / fwhm).ln());
    }
    Some(out)
}

/// Fits an exponential coupling law to `(d_nm, t_min, fwhm_hz)` samples.
///
/// Minimum transmittance is matched directly and linewidth on a log scale,
/// so both observables carry comparable weight.
pub fn fit_gap_series(series: &[(f64, f64, f64)], base: &CavityParams) -> Result<GapFit> {
    base.validate()?;
    if series.len() < 5 {
        return Err(Error::invalid("series", "need at least 5 gap distances"));
    }
    for (i, &(d, t, w)) in series.iter().enumerate() {
        if !(d.is_finite() && d >= 0.0 && (0.0..=1.2).contains(&t) && w.is_finite() && w > 0.0) {
            return Err(Error::at(
                i,
                Error::invalid("series", format!("sample ({d}, {t}, {w}) out of range")),
            ));
        }
    }
    let (d_lo, d_hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.0), hi.max(s.0))
        });
    if !(d_hi > d_lo) {
        return Err(Error::invalid("series", "distances must span a range"));
    }
    let kappa_crit = 2.0 * (0.5 * base.x_deficit()).sqrt().asin();
    if !(kappa_crit > 0.0) {
        return Err(Error::invalid(
            "rho_l",
            "a lossless cavity has no critical gap",
        ));
    }

    let cost = |p: &[f64]| -> f64 {
        let law = GapCouplingLaw {
            kappa_0: p[0].exp(),
            decay_len_nm: p[1].exp(),
        };
        match gap_residuals(series, base, &law) {
            Some(r) => r.iter().map(|v| v * v).sum(),
            None => f64::INFINITY,
        }
    };

    let imin = (0..series.len())
        .min_by(|&a, &b| series[a].1.total_cmp(&series[b].1))
        .unwrap_or(0);
    let d_guess = series[imin].0;
    let kappa_max = std::f64::consts::FRAC_PI_2;
    let mut starts = Vec::new();
    for lambda in [40.0, 80.0, 160.0, 320.0, 640.0] {
        for d in [
            d_guess,
            d_lo - 0.5 * (d_hi - d_lo),
            d_hi + 0.5 * (d_hi - d_lo),
        ] {
            let k0 = (kappa_crit * (d / lambda).exp()).min(0.99 * kappa_max);
            starts.push(vec![k0.ln(), f64::ln(lambda)]);
        }
    }
    let opts = SimplexOptions {
        ftol_abs: 0.0,
        ftol_rel: 1e-14,
        xtol: 1e-11,
        ..SimplexOptions::default()
    };
    let mut best: Option<optim::SimplexResult> = None;
    for s in &starts {
        let r = optim::nelder_mead(cost, s, &[0.3, 0.3], &opts);
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::Fit("no starts".into()))?;
    if !best.value.is_finite() {
        return Err(Error::Fit("no start produced a finite residual".into()));
    }
    let law = GapCouplingLaw {
        kappa_0: best.x[0].exp(),
        decay_len_nm: best.x[1].exp(),
    };
    let d_c_nm = law
        .critical_distance_nm(base)
        .filter(|d| *d >= d_lo && *d <= d_hi);
    Ok(GapFit {
        law,
        d_c_nm,
        residual_rms: (best.value / (2 * series.len()) as f64).sqrt(),
        converged: best.converged,
    })
}
