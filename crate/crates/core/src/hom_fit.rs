//! Joint fit of the parallel and orthogonal correlation models, convolved
//! with the Gaussian IRF, to a pair of normalized histograms.

use crate::correlator::CorrelationHistogram;
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, FitOutcome, LmOptions};
use crate::io::KvDocument;
use crate::model::{
    convolve_irf, g2_orthogonal, g2_parallel, hom_visibility, AutocorrFn, InterferenceModel,
    SampledCurve,
};

/// How the single-emitter autocorrelations enter the fit.
#[derive(Debug, Clone)]
pub enum AutocorrInput {
    /// Independently measured curves, held fixed.
    Known { ga: AutocorrFn, gb: AutocorrFn },
    /// One CW antibunching shape shared by both dots, fitted along with V
    /// and τc.
    SharedCw {
        g0_guess: f64,
        recovery_guess_ps: f64,
    },
}

#[derive(Debug, Clone)]
pub struct HomFitInput {
    pub rho_a: f64,
    pub rho_b: f64,
    pub irf_sigma_ps: f64,
    pub autocorr: AutocorrInput,
    pub v_guess: f64,
    pub tau_c_guess_ps: f64,
}

impl HomFitInput {
    pub fn new(rho_a: f64, rho_b: f64, irf_sigma_ps: f64, autocorr: AutocorrInput) -> Self {
        Self {
            rho_a,
            rho_b,
            irf_sigma_ps,
            autocorr,
            v_guess: 0.5,
            tau_c_guess_ps: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct HomFitReport {
    pub v: Estimate,
    pub tau_c_ps: Estimate,
    /// Present when the autocorrelation shape was fitted.
    pub g0: Option<Estimate>,
    pub recovery_ps: Option<Estimate>,
    /// IRF-convolved model values at zero delay.
    pub g_par_0: Estimate,
    pub g_perp_0: Estimate,
    pub visibility: Estimate,
    pub rho_a: f64,
    pub rho_b: f64,
    pub irf_sigma_ps: f64,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl HomFitReport {
    pub fn to_kv(&self) -> KvDocument {
        let mut d = KvDocument::new();
        d.section("hom_fit");
        let mut put = |name: &str, e: &Estimate| {
            d.set(name, e.value);
            d.set(&format!("{name}_err"), e.error);
        };
        put("v", &self.v);
        put("tau_c_ps", &self.tau_c_ps);
        if let Some(e) = &self.g0 {
            put("g0", e);
        }
        if let Some(e) = &self.recovery_ps {
            put("recovery_ps", e);
        }
        put("g_par_0", &self.g_par_0);
        put("g_perp_0", &self.g_perp_0);
        put("visibility", &self.visibility);
        d.set("rho_a", self.rho_a)
            .set("rho_b", self.rho_b)
            .set("irf_sigma_ps", self.irf_sigma_ps)
            .set("chi2", self.chi2)
            .set("dof", self.dof)
            .set("iterations", self.iterations);
        d
    }
}

fn normalized(h: &CorrelationHistogram, what: &str) -> Result<Vec<f64>> {
    h.normalized
        .clone()
        .ok_or_else(|| Error::invalid(format!("{what} histogram is not normalized")))
}

/// Shared fine grid on which the models are evaluated before convolution
/// and bin averaging.
struct Grid {
    start: f64,
    step: f64,
    len: usize,
    pad_points: usize,
    sub: usize,
    bins: usize,
}

impl Grid {
    fn new(h: &CorrelationHistogram, sigma: f64) -> Self {
        let sub = 4;
        let bw = h.bin_width_ps as f64;
        let step = bw / sub as f64;
        let pad_bins = ((8.0 * sigma) / bw).ceil() as usize + 1;
        let pad_points = pad_bins * sub;
        let bins = h.len();
        let start = h.min_lag_ps as f64 - (pad_bins as f64) * bw + 0.5 * step;
        Self {
            start,
            step,
            len: (bins + 2 * pad_bins) * sub,
            pad_points,
            sub,
            bins,
        }
    }

    fn bin_average(&self, c: &SampledCurve) -> Vec<f64> {
        (0..self.bins)
            .map(|k| {
                let i0 = self.pad_points + k * self.sub;
                c.values[i0..i0 + self.sub].iter().sum::<f64>() / self.sub as f64
            })
            .collect()
    }

    /// Linear interpolation of the convolved curve at `t`.
    fn value_at(&self, c: &SampledCurve, t: f64) -> f64 {
        let x = (t - self.start) / self.step;
        let i = (x.floor() as usize).min(self.len - 2);
        let f = x - i as f64;
        c.values[i] * (1.0 - f) + c.values[i + 1] * f
    }
}

struct Forward<'a> {
    input: &'a HomFitInput,
    grid: Grid,
}

impl Forward<'_> {
    fn shapes(&self, p: &[f64]) -> (AutocorrFn, AutocorrFn) {
        match &self.input.autocorr {
            AutocorrInput::Known { ga, gb } => (ga.clone(), gb.clone()),
            AutocorrInput::SharedCw { .. } => {
                let g = AutocorrFn::CwAntibunching {
                    g0: p[2],
                    recovery_ps: p[3],
                };
                (g.clone(), g)
            }
        }
    }

    fn curves(&self, p: &[f64]) -> Result<(SampledCurve, SampledCurve)> {
        let (ga, gb) = self.shapes(p);
        let m = InterferenceModel {
            overlap_v: p[0],
            tau_c_ps: p[1],
            rho_a: self.input.rho_a,
            rho_b: self.input.rho_b,
            detuning_rad_per_ps: 0.0,
            irf_sigma_ps: self.input.irf_sigma_ps,
        };
        let g = &self.grid;
        let par = SampledCurve::from_fn(g.start, g.step, g.len, |t| g2_parallel(t, &ga, &gb, &m));
        let perp = SampledCurve::from_fn(g.start, g.step, g.len, |t| g2_orthogonal(t, &ga, &gb));
        let sigma = self.input.irf_sigma_ps;
        Ok((convolve_irf(&par, sigma)?, convolve_irf(&perp, sigma)?))
    }

    fn zero_delay(&self, p: &[f64]) -> Result<(f64, f64)> {
        let (par, perp) = self.curves(p)?;
        Ok((
            self.grid.value_at(&par, 0.0),
            self.grid.value_at(&perp, 0.0),
        ))
    }
}

/// Fits V and τc (and optionally a shared CW autocorrelation) to both
/// histograms at once.
pub fn fit_hom(
    parallel: &CorrelationHistogram,
    orthogonal: &CorrelationHistogram,
    input: &HomFitInput,
) -> Result<HomFitReport> {
    if !parallel.same_binning(orthogonal) {
        return Err(Error::invalid(
            "parallel and orthogonal histograms must share binning",
        ));
    }
    for (name, rho) in [("rho_a", input.rho_a), ("rho_b", input.rho_b)] {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("{name} must be in [0, 1]")));
        }
    }
    if !(input.irf_sigma_ps >= 0.0) {
        return Err(Error::invalid("IRF sigma must be >= 0"));
    }
    let y_par = normalized(parallel, "parallel")?;
    let y_perp = normalized(orthogonal, "orthogonal")?;
    if !(parallel.min_lag_ps <= 0 && parallel.max_lag_ps > 0) {
        return Err(Error::invalid("histograms must include zero delay"));
    }
    let sd = |h: &CorrelationHistogram, y: &[f64]| -> Vec<f64> {
        let level = h.uncorrelated_level();
        h.counts
            .iter()
            .zip(y)
            .map(|(&c, &v)| {
                if level > 0.0 {
                    (c.max(1) as f64).sqrt() / level
                } else {
                    v.abs().max(1e-3) * 0.01
                }
            })
            .collect()
    };
    let s_par = sd(parallel, &y_par);
    let s_perp = sd(orthogonal, &y_perp);

    let fwd = Forward {
        input,
        grid: Grid::new(parallel, input.irf_sigma_ps),
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        let Ok((par, perp)) = fwd.curves(p) else {
            return vec![f64::NAN; y_par.len() + y_perp.len()];
        };
        let m_par = fwd.grid.bin_average(&par);
        let m_perp = fwd.grid.bin_average(&perp);
        let mut r = Vec::with_capacity(2 * m_par.len());
        for k in 0..m_par.len() {
            r.push((m_par[k] - y_par[k]) / s_par[k]);
        }
        for k in 0..m_perp.len() {
            r.push((m_perp[k] - y_perp[k]) / s_perp[k]);
        }
        r
    };

    let bw = parallel.bin_width_ps as f64;
    let (p0, opts) = match &input.autocorr {
        AutocorrInput::Known { .. } => (
            vec![input.v_guess, input.tau_c_guess_ps],
            LmOptions::new(2)
                .scales(&[1.0, 100.0])
                .bounds(&[0.0, 0.25 * bw], &[1.0, 1e6]),
        ),
        AutocorrInput::SharedCw {
            g0_guess,
            recovery_guess_ps,
        } => (
            vec![
                input.v_guess,
                input.tau_c_guess_ps,
                *g0_guess,
                *recovery_guess_ps,
            ],
            LmOptions::new(4)
                .scales(&[1.0, 100.0, 1.0, 100.0])
                .bounds(&[0.0, 0.25 * bw, 0.0, 0.25 * bw], &[1.0, 1e6, 1.0, 1e7]),
        ),
    };
    let out: FitOutcome = levenberg_marquardt(residuals, &p0, &opts)?;

    // Derived quantities and their propagated errors.
    let derived = |p: &[f64]| -> Result<[f64; 3]> {
        let (gp, go) = fwd.zero_delay(p)?;
        Ok([gp, go, hom_visibility(gp, go)?])
    };
    let central = derived(&out.params)?;
    let n = out.params.len();
    let mut grads = vec![[0.0; 3]; n];
    for (j, grad) in grads.iter_mut().enumerate() {
        let h = 1e-6 * out.params[j].abs().max(opts.scales[j]);
        let mut q = out.params.clone();
        q[j] += h;
        let up = derived(&q)?;
        q[j] -= 2.0 * h;
        let dn = derived(&q)?;
        for d in 0..3 {
            grad[d] = (up[d] - dn[d]) / (2.0 * h);
        }
    }
    let err = |d: usize| -> f64 {
        let mut var = 0.0;
        for a in 0..n {
            for b in 0..n {
                var += grads[a][d] * out.covariance[(a, b)] * grads[b][d];
            }
        }
        var.max(0.0).sqrt()
    };
    let est = |i: usize| Estimate {
        value: out.params[i],
        error: out.std_errors[i],
    };
    let shape_free = matches!(input.autocorr, AutocorrInput::SharedCw { .. });
    Ok(HomFitReport {
        v: est(0),
        tau_c_ps: est(1),
        g0: shape_free.then(|| est(2)),
        recovery_ps: shape_free.then(|| est(3)),
        g_par_0: Estimate {
            value: central[0],
            error: err(0),
        },
        g_perp_0: Estimate {
            value: central[1],
            error: err(1),
        },
        visibility: Estimate {
            value: central[2],
            error: err(2),
        },
        rho_a: input.rho_a,
        rho_b: input.rho_b,
        irf_sigma_ps: input.irf_sigma_ps,
        chi2: out.chi2,
        dof: out.dof,
        iterations: out.iterations,
    })
}

/// Expected normalized histograms for the given model, binned like
/// `template`. Used to build synthetic data and to plot fits.
pub fn predicted_histograms(
    template: &CorrelationHistogram,
    ga: &AutocorrFn,
    gb: &AutocorrFn,
    m: &InterferenceModel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let input = HomFitInput::new(
        m.rho_a,
        m.rho_b,
        m.irf_sigma_ps,
        AutocorrInput::Known {
            ga: ga.clone(),
            gb: gb.clone(),
        },
    );
    let fwd = Forward {
        input: &input,
        grid: Grid::new(template, m.irf_sigma_ps),
    };
    let (par, perp) = fwd.curves(&[m.overlap_v, m.tau_c_ps])?;
    Ok((fwd.grid.bin_average(&par), fwd.grid.bin_average(&perp)))
}
