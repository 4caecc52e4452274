//! Analytic two-photon correlation model.
//!
//! The modified Hong-Ou-Mandel geometry collects one output arm of the
//! 50:50 beamsplitter and splits it again onto two detectors, so coincidences
//! at zero delay show *bunching* for indistinguishable photons. For two
//! balanced sources with single-emitter autocorrelations `g_A(t)`, `g_B(t)`:
//!
//! ```text
//! g⊥(t) = (g_A(t) + g_B(t) + 2) / 4
//! g∥(t) = (g_A(t) + g_B(t) + 2·(1 + V·ρ_A·ρ_B·exp(-2|t|/τc))) / 4
//! ```
//!
//! Everything here is a pure function of its inputs.

use crate::error::{Error, Result};

/// Detector timing resolution quoted as a per-detector FWHM, in ps.
pub const DETECTOR_JITTER_FWHM_PS: f64 = 200.0;

/// Gaussian FWHM to standard deviation.
pub const FWHM_TO_SIGMA: f64 = 1.0 / 2.355;

/// Std. dev. of the coincidence response for a pair of detectors with
/// [`DETECTOR_JITTER_FWHM_PS`] each: `√2 · 200 / 2.355 ≈ 120 ps`.
pub fn default_pair_irf_sigma_ps() -> f64 {
    std::f64::consts::SQRT_2 * DETECTOR_JITTER_FWHM_PS * FWHM_TO_SIGMA
}

/// Physical parameters of one cavity-coupled quantum dot.
#[derive(Debug, Clone, PartialEq)]
pub struct EmitterSpec {
    pub id: String,
    pub wavelength_nm: f64,
    pub lifetime_ps: f64,
    pub coherence_time_ps: f64,
    /// Fraction of detected light that is dot signal, `1 - B/S`.
    pub signal_purity_rho: f64,
    /// Single-emitter g²(0) under the chosen excitation.
    pub residual_g0: f64,
    pub polarization_deg: f64,
    /// Probability that a signal photon reaches the interferometer per cycle.
    pub brightness_per_pulse: f64,
}

impl EmitterSpec {
    /// Checks the hard invariants. Returns soft warnings that are flagged but
    /// not rejected (coherence time beyond the transform limit).
    pub fn validate(&self) -> Result<Vec<String>> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "emitter {}: {name} = {v} outside [0, 1]",
                    self.id
                )))
            }
        };
        if !(self.lifetime_ps > 0.0) {
            return Err(Error::invalid(format!(
                "emitter {}: lifetime_ps must be > 0",
                self.id
            )));
        }
        if !(self.coherence_time_ps > 0.0) {
            return Err(Error::invalid(format!(
                "emitter {}: coherence_time_ps must be > 0",
                self.id
            )));
        }
        unit("signal_purity_rho", self.signal_purity_rho)?;
        unit("residual_g0", self.residual_g0)?;
        unit("brightness_per_pulse", self.brightness_per_pulse)?;

        let mut warnings = Vec::new();
        if self.exceeds_transform_limit() {
            warnings.push(format!(
                "emitter {}: coherence time {} ps exceeds transform limit 2·T1 = {} ps",
                self.id,
                self.coherence_time_ps,
                2.0 * self.lifetime_ps
            ));
        }
        Ok(warnings)
    }

    pub fn exceeds_transform_limit(&self) -> bool {
        self.coherence_time_ps > 2.0 * self.lifetime_ps
    }
}

/// Parameters of the parallel/orthogonal correlation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceModel {
    pub overlap_v: f64,
    pub tau_c_ps: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    /// Emitter detuning Δω. Zero disables the `cos(Δω·t)` factor.
    pub detuning_rad_per_ps: f64,
    pub irf_sigma_ps: f64,
}

impl InterferenceModel {
    pub fn new(overlap_v: f64, tau_c_ps: f64, rho_a: f64, rho_b: f64) -> Self {
        Self {
            overlap_v,
            tau_c_ps,
            rho_a,
            rho_b,
            detuning_rad_per_ps: 0.0,
            irf_sigma_ps: default_pair_irf_sigma_ps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("overlap_v", self.overlap_v),
            ("rho_a", self.rho_a),
            ("rho_b", self.rho_b),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.tau_c_ps > 0.0) {
            return Err(Error::invalid("tau_c_ps must be > 0"));
        }
        if !(self.irf_sigma_ps >= 0.0) {
            return Err(Error::invalid("irf_sigma_ps must be >= 0"));
        }
        if !self.detuning_rad_per_ps.is_finite() {
            return Err(Error::invalid("detuning_rad_per_ps must be finite"));
        }
        Ok(())
    }

    /// `V·ρ_A·ρ_B·exp(-2|t|/τc)`, times `cos(Δω·t)` when detuning is set.
    pub fn interference_term(&self, t_ps: f64) -> f64 {
        let mut term =
            self.overlap_v * self.rho_a * self.rho_b * (-2.0 * t_ps.abs() / self.tau_c_ps).exp();
        if self.detuning_rad_per_ps != 0.0 {
            term *= (self.detuning_rad_per_ps * t_ps).cos();
        }
        term
    }
}

/// Single-emitter second-order autocorrelation `t ↦ g²(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum AutocorrFn {
    Constant(f64),
    /// `1 - (1 - g0)·exp(-|t|/recovery)`.
    CwAntibunching {
        g0: f64,
        recovery_ps: f64,
    },
    /// Linear interpolation through measured points; held constant beyond
    /// the sampled range.
    Empirical {
        times_ps: Vec<f64>,
        values: Vec<f64>,
    },
}

impl AutocorrFn {
    pub fn cw(g0: f64, recovery_ps: f64) -> Result<Self> {
        if !(g0 >= 0.0) {
            return Err(Error::invalid("g0 must be >= 0"));
        }
        if !(recovery_ps > 0.0) {
            return Err(Error::invalid("recovery_ps must be > 0"));
        }
        Ok(AutocorrFn::CwAntibunching { g0, recovery_ps })
    }

    /// Builds an interpolated curve. Values are clamped to be non-negative.
    pub fn empirical(times_ps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times_ps.is_empty() || times_ps.len() != values.len() {
            return Err(Error::invalid(
                "empirical autocorrelation needs equal-length, non-empty arrays",
            ));
        }
        if times_ps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "empirical autocorrelation times must be strictly increasing",
            ));
        }
        let values = values.into_iter().map(|v| v.max(0.0)).collect();
        Ok(AutocorrFn::Empirical { times_ps, values })
    }

    pub fn eval(&self, t_ps: f64) -> f64 {
        match self {
            AutocorrFn::Constant(g0) => *g0,
            AutocorrFn::CwAntibunching { g0, recovery_ps } => cw_autocorr(t_ps, *g0, *recovery_ps),
            AutocorrFn::Empirical { times_ps, values } => interpolate(times_ps, values, t_ps),
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let lo = hi - 1;
    let f = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + f * (ys[hi] - ys[lo])
}

/// CW antibunching shape `1 - (1 - g0)·exp(-|t|/recovery)`.
pub fn cw_autocorr(t_ps: f64, g0: f64, recovery_ps: f64) -> f64 {
    1.0 - (1.0 - g0) * (-t_ps.abs() / recovery_ps).exp()
}

/// Orthogonal-polarization (distinguishable) correlation.
pub fn g2_orthogonal(t_ps: f64, ga: &AutocorrFn, gb: &AutocorrFn) -> f64 {
    (ga.eval(t_ps) + gb.eval(t_ps) + 2.0) / 4.0
}

/// Parallel-polarization (indistinguishable) correlation.
pub fn g2_parallel(t_ps: f64, ga: &AutocorrFn, gb: &AutocorrFn, m: &InterferenceModel) -> f64 {
    (ga.eval(t_ps) + gb.eval(t_ps) + 2.0 * (1.0 + m.interference_term(t_ps))) / 4.0
}

/// Post-selected visibility `(g∥(0) - g⊥(0)) / g⊥(0)`.
pub fn hom_visibility(g_par_0: f64, g_perp_0: f64) -> Result<f64> {
    if !(g_perp_0 > 0.0) {
        return Err(Error::invalid(format!(
            "orthogonal g2(0) must be > 0, got {g_perp_0}"
        )));
    }
    Ok((g_par_0 - g_perp_0) / g_perp_0)
}

/// A function sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    pub times_ps: Vec<f64>,
    pub values: Vec<f64>,
}

impl SampledCurve {
    pub fn uniform(start_ps: f64, step_ps: f64, values: Vec<f64>) -> Self {
        let times_ps = (0..values.len())
            .map(|i| start_ps + i as f64 * step_ps)
            .collect();
        Self { times_ps, values }
    }

    pub fn from_fn(start_ps: f64, step_ps: f64, len: usize, f: impl Fn(f64) -> f64) -> Self {
        let times_ps: Vec<f64> = (0..len).map(|i| start_ps + i as f64 * step_ps).collect();
        let values = times_ps.iter().map(|&t| f(t)).collect();
        Self { times_ps, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid step, or an error if the grid is not uniform.
    pub fn uniform_step(&self) -> Result<f64> {
        if self.times_ps.len() != self.values.len() {
            return Err(Error::invalid("curve times and values differ in length"));
        }
        if self.times_ps.len() < 2 {
            return Ok(0.0);
        }
        let step = self.times_ps[1] - self.times_ps[0];
        if !(step > 0.0) {
            return Err(Error::invalid("curve grid must be increasing"));
        }
        let tol = 1e-9 * step.max(1.0);
        for w in self.times_ps.windows(2) {
            if ((w[1] - w[0]) - step).abs() > tol {
                return Err(Error::invalid("curve grid is not uniform"));
            }
        }
        Ok(step)
    }
}

/// Convolves `curve` with a unit-area Gaussian of std. dev. `sigma_ps`.
///
/// The deviation from the asymptotic baseline (mean of the two end values) is
/// convolved with zero padding, so constant tails pass through unchanged.
pub fn convolve_irf(curve: &SampledCurve, sigma_ps: f64) -> Result<SampledCurve> {
    let step = curve.uniform_step()?;
    if !(sigma_ps >= 0.0) {
        return Err(Error::invalid("sigma_ps must be >= 0"));
    }
    if sigma_ps == 0.0 || curve.len() < 2 {
        return Ok(curve.clone());
    }

    let half = ((8.0 * sigma_ps) / step).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * half)
        .map(|j| {
            let t = (j as f64 - half as f64) * step;
            (-0.5 * (t / sigma_ps).powi(2)).exp()
        })
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= norm);

    let n = curve.len();
    let baseline = 0.5 * (curve.values[0] + curve.values[n - 1]);
    let deviation: Vec<f64> = curve.values.iter().map(|v| v - baseline).collect();

    let mut out = vec![baseline; n];
    for (i, o) in out.iter_mut().enumerate() {
        // out[i] += Σ_j kernel[j] · deviation[i + half - j]
        let j_lo = (i + half).saturating_sub(n - 1);
        let j_hi = (i + half).min(2 * half);
        let mut acc = 0.0;
        for j in j_lo..=j_hi {
            acc += kernel[j] * deviation[i + half - j];
        }
        *o += acc;
    }

    Ok(SampledCurve {
        times_ps: curve.times_ps.clone(),
        values: out,
    })
}
