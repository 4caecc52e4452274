//! Photoluminescence spectra: synthesis, single-line Lorentzian fits,
//! wavelength/energy detunings and polarization ratios.
//!
//! Lines are Lorentzian in photon energy. The spectrometer response is a
//! Lorentzian too, so a line of intrinsic FWHM Γ is observed with FWHM
//! Γ + resolution.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::io::{write_atomic, KvDocument};

pub const HC_EV_NM: f64 = 1239.84193;
pub const DEFAULT_RESOLUTION_UEV: f64 = 50.0;

pub fn energy_uev(lambda_nm: f64) -> f64 {
    HC_EV_NM / lambda_nm * 1e6
}

pub fn wavelength_nm(energy_uev: f64) -> f64 {
    HC_EV_NM / (energy_uev * 1e-6)
}

/// `|E(λ1) - E(λ2)|` in μeV.
pub fn detuning_uev(lambda1_nm: f64, lambda2_nm: f64) -> Result<f64> {
    if !(lambda1_nm > 0.0 && lambda2_nm > 0.0) {
        return Err(Error::invalid("wavelengths must be > 0"));
    }
    Ok((energy_uev(lambda1_nm) - energy_uev(lambda2_nm)).abs())
}

/// Wavelength span at `lambda_nm` that corresponds to `delta_uev`.
pub fn wavelength_span_nm(lambda_nm: f64, delta_uev: f64) -> f64 {
    lambda_nm * lambda_nm * delta_uev * 1e-6 / HC_EV_NM
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub wavelengths_nm: Vec<f64>,
    pub intensities: Vec<f64>,
    pub resolution_uev: f64,
}

impl Spectrum {
    pub fn new(
        wavelengths_nm: Vec<f64>,
        intensities: Vec<f64>,
        resolution_uev: f64,
    ) -> Result<Self> {
        if wavelengths_nm.len() != intensities.len() {
            return Err(Error::invalid(
                "wavelength and intensity arrays differ in length",
            ));
        }
        if wavelengths_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("wavelengths must be strictly increasing"));
        }
        if intensities.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("intensities must be non-negative"));
        }
        if !(resolution_uev > 0.0) {
            return Err(Error::invalid("resolution must be > 0"));
        }
        Ok(Self {
            wavelengths_nm,
            intensities,
            resolution_uev,
        })
    }

    pub fn len(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths_nm.is_empty()
    }

    /// Indices of the local maxima that exceed `threshold`.
    pub fn peaks(&self, threshold: f64) -> Vec<usize> {
        let y = &self.intensities;
        (1..y.len().saturating_sub(1))
            .filter(|&i| y[i] > threshold && y[i] >= y[i - 1] && y[i] > y[i + 1])
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("wavelength_nm,intensity\n");
        for (w, i) in self.wavelengths_nm.iter().zip(&self.intensities) {
            let _ = writeln!(out, "{w},{i}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn from_csv(text: &str, resolution_uev: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("wavelength_nm,intensity") {
            return Err(Error::format(
                "spectrum CSV",
                "missing `wavelength_nm,intensity` header",
            ));
        }
        let mut w = Vec::new();
        let mut v = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (a, b) = line.split_once(',').ok_or_else(|| {
                Error::format("spectrum CSV", format!("row {}: expected 2 columns", i + 2))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format("spectrum CSV", format!("row {}: {e}", i + 2)))
            };
            w.push(parse(a)?);
            v.push(parse(b)?);
        }
        Self::new(w, v, resolution_uev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub center_nm: f64,
    pub fwhm_uev: f64,
    /// Observed peak height above baseline.
    pub amplitude: f64,
}

fn lorentzian(e: f64, e0: f64, fwhm: f64) -> f64 {
    let hw = 0.5 * fwhm;
    hw * hw / ((e - e0) * (e - e0) + hw * hw)
}

/// Noise-free or Poisson-noisy spectrum of `lines` over `grid_nm`.
pub fn synthesize(
    lines: &[Line],
    baseline: f64,
    grid_nm: &[f64],
    resolution_uev: f64,
    noise_seed: Option<u64>,
) -> Result<Spectrum> {
    if grid_nm.is_empty() {
        return Err(Error::invalid("wavelength grid is empty"));
    }
    if !(baseline >= 0.0) {
        return Err(Error::invalid("baseline must be >= 0"));
    }
    for l in lines {
        if !(l.center_nm > 0.0 && l.fwhm_uev > 0.0 && l.amplitude >= 0.0) {
            return Err(Error::invalid(format!("invalid line {l:?}")));
        }
    }
    let mut values: Vec<f64> = grid_nm
        .iter()
        .map(|&w| {
            let e = energy_uev(w);
            baseline
                + lines
                    .iter()
                    .map(|l| {
                        l.amplitude
                            * lorentzian(e, energy_uev(l.center_nm), l.fwhm_uev + resolution_uev)
                    })
                    .sum::<f64>()
        })
        .collect();
    if let Some(seed) = noise_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut values {
            if *v > 0.0 {
                *v = Poisson::new(*v).expect("positive mean").sample(&mut rng);
            }
        }
    }
    Spectrum::new(grid_nm.to_vec(), values, resolution_uev)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LineGuess {
    pub center_nm: Option<f64>,
    pub fwhm_uev: Option<f64>,
    pub amplitude: Option<f64>,
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzianFit {
    pub center_nm: f64,
    pub center_err_nm: f64,
    /// Intrinsic linewidth (observed minus resolution), or the observed
    /// width when the line is resolution limited.
    pub fwhm_uev: f64,
    pub fwhm_err_uev: f64,
    pub observed_fwhm_uev: f64,
    pub resolution_limited: bool,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub baseline: f64,
    pub baseline_err: f64,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub samples: usize,
}

impl LorentzianFit {
    pub fn to_kv(&self, section: &str) -> KvDocument {
        let mut d = KvDocument::new();
        d.section(section)
            .set("center_nm", self.center_nm)
            .set("center_err_nm", self.center_err_nm)
            .set("fwhm_uev", self.fwhm_uev)
            .set("fwhm_err_uev", self.fwhm_err_uev)
            .set("observed_fwhm_uev", self.observed_fwhm_uev)
            .set("resolution_limited", self.resolution_limited)
            .set("amplitude", self.amplitude)
            .set("amplitude_err", self.amplitude_err)
            .set("baseline", self.baseline)
            .set("baseline_err", self.baseline_err)
            .set("chi2", self.chi2)
            .set("dof", self.dof)
            .set("iterations", self.iterations)
            .set("samples", self.samples);
        d
    }
}

/// Single-Lorentzian fit inside `window_nm`, carried out in energy.
pub fn fit_lorentzian(
    s: &Spectrum,
    window_nm: (f64, f64),
    init: LineGuess,
) -> Result<LorentzianFit> {
    let (lo, hi) = window_nm;
    if !(hi > lo) {
        return Err(Error::invalid("window upper edge must exceed lower edge"));
    }
    let idx: Vec<usize> = (0..s.len())
        .filter(|&i| s.wavelengths_nm[i] >= lo && s.wavelengths_nm[i] <= hi)
        .collect();
    if idx.len() < 8 {
        return Err(Error::invalid(format!(
            "window holds {} samples; at least 8 are needed",
            idx.len()
        )));
    }
    let e: Vec<f64> = idx
        .iter()
        .map(|&i| energy_uev(s.wavelengths_nm[i]))
        .collect();
    let y: Vec<f64> = idx.iter().map(|&i| s.intensities[i]).collect();
    // Poisson-like weights; a floor keeps zero-count samples usable.
    let scale = y.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let w: Vec<f64> = y
        .iter()
        .map(|&v| 1.0 / v.max(1e-6 * scale).max(1.0e-300).sqrt())
        .collect();

    let imax = (0..y.len())
        .max_by(|&a, &b| y[a].total_cmp(&y[b]))
        .expect("non-empty");
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let base0 = init.baseline.unwrap_or(ymin);
    let amp0 = init
        .amplitude
        .unwrap_or((y[imax] - base0).max(1e-12 * scale));
    let e_ref = init.center_nm.map(energy_uev).unwrap_or(e[imax]);
    let fwhm0 = match init.fwhm_uev {
        Some(f) => f + s.resolution_uev,
        None => {
            let half = base0 + 0.5 * amp0;
            let above: Vec<f64> = (0..y.len())
                .filter(|&i| y[i] >= half)
                .map(|i| e[i])
                .collect();
            let span = above.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - above.iter().cloned().fold(f64::INFINITY, f64::min);
            let step = (e[0] - e[e.len() - 1]).abs() / (e.len() - 1) as f64;
            span.max(step)
        }
    };
    let e_span = (e[0] - e[e.len() - 1]).abs();

    // Center is fitted as an offset from `e_ref` to keep the parameters
    // well scaled (E itself is ~1e6 μeV).
    let residual = |p: &[f64]| -> Vec<f64> {
        e.iter()
            .zip(&y)
            .zip(&w)
            .map(|((&ei, &yi), &wi)| (p[3] + p[2] * lorentzian(ei, e_ref + p[0], p[1]) - yi) * wi)
            .collect()
    };
    let opts = LmOptions::new(4)
        .scales(&[fwhm0, fwhm0, amp0.max(1e-12), amp0.max(1e-12)])
        .bounds(
            &[-e_span, 1e-6 * fwhm0, 0.0, f64::NEG_INFINITY],
            &[e_span, 100.0 * e_span, f64::INFINITY, f64::INFINITY],
        );
    let out = levenberg_marquardt(residual, &[0.0, fwhm0, amp0, base0], &opts)?;

    let e0 = e_ref + out.params[0];
    let center_nm = wavelength_nm(e0);
    let observed = out.params[1];
    let intrinsic = observed - s.resolution_uev;
    let resolution_limited = intrinsic <= 0.0;
    Ok(LorentzianFit {
        center_nm,
        center_err_nm: wavelength_span_nm(center_nm, out.std_errors[0]),
        fwhm_uev: if resolution_limited {
            observed
        } else {
            intrinsic
        },
        fwhm_err_uev: out.std_errors[1],
        observed_fwhm_uev: observed,
        resolution_limited,
        amplitude: out.params[2],
        amplitude_err: out.std_errors[2],
        baseline: out.params[3],
        baseline_err: out.std_errors[3],
        chi2: out.chi2,
        dof: out.dof,
        iterations: out.iterations,
        samples: idx.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationFit {
    /// `(I_max - I_min) / (I_max + I_min)`.
    pub ratio: f64,
    /// Angle of maximum intensity in [0, 180); `None` for unpolarized input.
    pub axis_deg: Option<f64>,
    pub i_max: f64,
    pub i_min: f64,
}

/// Fits `I(θ) = I_min + (I_max - I_min)·cos²(θ - θ0)`.
///
/// Linear in `a + b·cos 2θ + c·sin 2θ`, so solved directly.
pub fn polarization_ratio(intensity_by_angle: &[(f64, f64)]) -> Result<PolarizationFit> {
    if intensity_by_angle.len() < 4 {
        return Err(Error::invalid("need at least 4 angles"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(a, _) in intensity_by_angle {
        lo = lo.min(a);
        hi = hi.max(a);
    }
    if hi - lo < 180.0 {
        return Err(Error::invalid(format!(
            "angles span {:.1}°; at least 180° needed",
            hi - lo
        )));
    }
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for &(deg, v) in intensity_by_angle {
        let t = 2.0 * deg.to_radians();
        let row = Vector3::new(1.0, t.cos(), t.sin());
        ata += row * row.transpose();
        aty += row * v;
    }
    let sol = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::invalid("angles do not determine the cos² fit"))?;
    let (a, b, c) = (sol[0], sol[1], sol[2]);
    if !(a > 0.0) {
        return Err(Error::invalid("mean intensity must be > 0"));
    }
    let amp = b.hypot(c);
    if amp <= 1e-12 * a {
        return Ok(PolarizationFit {
            ratio: 0.0,
            axis_deg: None,
            i_max: a,
            i_min: a,
        });
    }
    let axis = (0.5 * c.atan2(b).to_degrees()).rem_euclid(180.0);
    Ok(PolarizationFit {
        ratio: amp / a,
        axis_deg: Some(axis),
        i_max: a + amp,
        i_min: a - amp,
    })
}
