//! Coincidence histograms from timestamp streams and the g² estimators
//! built on them.
//!
//! Pair counting is exhaustive (every start is paired with every stop in the
//! lag range, not just the next one), so the histogram is unbiased at all
//! lags.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::AutocorrFn;

/// Binned coincidence counts for lags in `[min_lag_ps, max_lag_ps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub bin_width_ps: i64,
    pub min_lag_ps: i64,
    pub max_lag_ps: i64,
    pub counts: Vec<u64>,
    pub acquisition_s: f64,
    pub rate1_hz: f64,
    pub rate2_hz: f64,
    pub normalized: Option<Vec<f64>>,
}

impl CorrelationHistogram {
    /// All-zero histogram with the given binning.
    pub fn empty(min_lag_ps: i64, max_lag_ps: i64, bin_width_ps: i64) -> Result<Self> {
        check_binning(min_lag_ps, max_lag_ps, bin_width_ps)?;
        let n = ((max_lag_ps - min_lag_ps) / bin_width_ps) as usize;
        Ok(Self {
            bin_width_ps,
            min_lag_ps,
            max_lag_ps,
            counts: vec![0; n],
            acquisition_s: 0.0,
            rate1_hz: 0.0,
            rate2_hz: 0.0,
            normalized: None,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_start(&self, k: usize) -> i64 {
        self.min_lag_ps + k as i64 * self.bin_width_ps
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.bin_start(k) as f64 + 0.5 * self.bin_width_ps as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Expected counts per bin for two uncorrelated streams.
    pub fn uncorrelated_level(&self) -> f64 {
        self.rate1_hz * self.rate2_hz * self.bin_width_ps as f64 * 1e-12 * self.acquisition_s
    }

    pub fn same_binning(&self, other: &Self) -> bool {
        self.bin_width_ps == other.bin_width_ps
            && self.min_lag_ps == other.min_lag_ps
            && self.max_lag_ps == other.max_lag_ps
    }

    /// Interprets a normalized histogram as an empirical single-emitter
    /// autocorrelation.
    pub fn to_autocorr(&self) -> Result<AutocorrFn> {
        let values = self
            .normalized
            .clone()
            .ok_or_else(|| Error::invalid("histogram is not normalized"))?;
        let times = (0..self.len()).map(|k| self.bin_center(k)).collect();
        AutocorrFn::empirical(times, values)
    }
}

fn check_binning(min_lag_ps: i64, max_lag_ps: i64, bin_width_ps: i64) -> Result<()> {
    if bin_width_ps <= 0 {
        return Err(Error::invalid("bin width must be > 0"));
    }
    if max_lag_ps <= min_lag_ps {
        return Err(Error::invalid("max lag must exceed min lag"));
    }
    if (max_lag_ps - min_lag_ps) % bin_width_ps != 0 {
        return Err(Error::invalid("lag range must be a whole number of bins"));
    }
    Ok(())
}

fn check_sorted(ts: &[i64], what: &str) -> Result<()> {
    if ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(format!("{what} is not sorted ascending")));
    }
    Ok(())
}

fn rate(n: usize, acquisition_s: f64) -> f64 {
    if acquisition_s > 0.0 {
        n as f64 / acquisition_s
    } else {
        0.0
    }
}

/// Counts every pair `(a, b)`, `a ∈ ts1`, `b ∈ ts2`, by lag `b - a` over
/// `[-max_lag, +max_lag)`.
///
/// Single sliding-window sweep, O(n + m + pairs).
pub fn cross_correlate(
    ts1: &[i64],
    ts2: &[i64],
    max_lag_ps: i64,
    bin_width_ps: i64,
    acquisition_s: f64,
) -> Result<CorrelationHistogram> {
    check_sorted(ts1, "first stream")?;
    check_sorted(ts2, "second stream")?;
    if max_lag_ps % bin_width_ps.max(1) != 0 {
        return Err(Error::invalid(
            "max lag must be a multiple of the bin width",
        ));
    }
    let mut h = CorrelationHistogram::empty(-max_lag_ps, max_lag_ps, bin_width_ps)?;
    accumulate(&mut h.counts, ts1, ts2, max_lag_ps, bin_width_ps, false);
    h.acquisition_s = acquisition_s;
    h.rate1_hz = rate(ts1.len(), acquisition_s);
    h.rate2_hz = rate(ts2.len(), acquisition_s);
    Ok(h)
}

/// Autocorrelation of one stream, excluding each event's pairing with
/// itself.
pub fn auto_correlate(
    ts: &[i64],
    max_lag_ps: i64,
    bin_width_ps: i64,
    acquisition_s: f64,
) -> Result<CorrelationHistogram> {
    check_sorted(ts, "stream")?;
    if max_lag_ps % bin_width_ps.max(1) != 0 {
        return Err(Error::invalid(
            "max lag must be a multiple of the bin width",
        ));
    }
    let mut h = CorrelationHistogram::empty(-max_lag_ps, max_lag_ps, bin_width_ps)?;
    accumulate(&mut h.counts, ts, ts, max_lag_ps, bin_width_ps, true);
    h.acquisition_s = acquisition_s;
    h.rate1_hz = rate(ts.len(), acquisition_s);
    h.rate2_hz = h.rate1_hz;
    Ok(h)
}

fn accumulate(
    counts: &mut [u64],
    ts1: &[i64],
    ts2: &[i64],
    max_lag: i64,
    bw: i64,
    skip_self: bool,
) {
    let mut lo = 0usize;
    for (i, &a) in ts1.iter().enumerate() {
        let floor = a - max_lag;
        while lo < ts2.len() && ts2[lo] < floor {
            lo += 1;
        }
        let ceil = a + max_lag;
        let mut j = lo;
        while j < ts2.len() && ts2[j] < ceil {
            if !(skip_self && i == j) {
                let offset = ts2[j] - floor;
                counts[(offset / bw) as usize] += 1;
            }
            j += 1;
        }
    }
}

/// Segment-wise correlation: `ts1` is cut into time segments of
/// `segment_ps`, each correlated against the slice of `ts2` that overlaps it
/// by `max_lag`, and the partial histograms are merged.
///
/// Identical to [`cross_correlate`] on the whole streams.
pub fn cross_correlate_sharded(
    ts1: &[i64],
    ts2: &[i64],
    max_lag_ps: i64,
    bin_width_ps: i64,
    acquisition_s: f64,
    segment_ps: i64,
) -> Result<CorrelationHistogram> {
    check_sorted(ts1, "first stream")?;
    check_sorted(ts2, "second stream")?;
    if segment_ps <= 0 {
        return Err(Error::invalid("segment length must be > 0"));
    }
    let mut whole = CorrelationHistogram::empty(-max_lag_ps, max_lag_ps, bin_width_ps)?;
    if max_lag_ps % bin_width_ps != 0 {
        return Err(Error::invalid(
            "max lag must be a multiple of the bin width",
        ));
    }
    if let (Some(&first), Some(&last)) = (ts1.first(), ts1.last()) {
        let n_seg = ((last - first) / segment_ps + 1) as usize;
        let parts: Vec<CorrelationHistogram> = (0..n_seg)
            .into_par_iter()
            .map(|s| {
                let start = first + s as i64 * segment_ps;
                let end = start + segment_ps;
                let a0 = ts1.partition_point(|&t| t < start);
                let a1 = ts1.partition_point(|&t| t < end);
                let b0 = ts2.partition_point(|&t| t < start - max_lag_ps);
                let b1 = ts2.partition_point(|&t| t < end + max_lag_ps);
                let mut h = CorrelationHistogram::empty(-max_lag_ps, max_lag_ps, bin_width_ps)
                    .expect("binning checked");
                accumulate(
                    &mut h.counts,
                    &ts1[a0..a1],
                    &ts2[b0..b1],
                    max_lag_ps,
                    bin_width_ps,
                    false,
                );
                h
            })
            .collect();
        for p in &parts {
            whole = histogram_merge(&whole, p)?;
        }
    }
    whole.acquisition_s = acquisition_s;
    whole.rate1_hz = rate(ts1.len(), acquisition_s);
    whole.rate2_hz = rate(ts2.len(), acquisition_s);
    Ok(whole)
}

/// Brute-force O(n·m) pair count, the reference for [`cross_correlate`].
pub fn brute_force_correlate(
    ts1: &[i64],
    ts2: &[i64],
    max_lag_ps: i64,
    bin_width_ps: i64,
) -> Vec<u64> {
    let n = (2 * max_lag_ps / bin_width_ps) as usize;
    let mut counts = vec![0u64; n];
    for &a in ts1 {
        for &b in ts2 {
            let lag = b - a;
            if lag >= -max_lag_ps && lag < max_lag_ps {
                counts[((lag + max_lag_ps) / bin_width_ps) as usize] += 1;
            }
        }
    }
    counts
}

/// CW normalization `counts / (r1·r2·Δt·T)`.
///
/// A histogram with no counts normalizes to all zeros even if the rates are
/// zero (an empty stream).
pub fn normalize_cw(hist: &CorrelationHistogram) -> Result<CorrelationHistogram> {
    let mut out = hist.clone();
    if hist.counts.iter().all(|&c| c == 0) {
        out.normalized = Some(vec![0.0; hist.len()]);
        return Ok(out);
    }
    if !(hist.acquisition_s > 0.0) {
        return Err(Error::invalid("normalization needs acquisition time > 0"));
    }
    if !(hist.rate1_hz > 0.0 && hist.rate2_hz > 0.0) {
        return Err(Error::invalid("normalization needs non-zero count rates"));
    }
    let level = hist.uncorrelated_level();
    out.normalized = Some(hist.counts.iter().map(|&c| c as f64 / level).collect());
    Ok(out)
}

/// g² estimate with one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Estimate {
    pub value: f64,
    pub uncertainty: f64,
    pub center_area: u64,
    pub mean_side_area: f64,
}

/// Counts whose bin centers fall in `[center - period/2, center + period/2)`.
fn peak_area(hist: &CorrelationHistogram, center: f64, period: f64) -> u64 {
    let lo = center - 0.5 * period;
    let hi = center + 0.5 * period;
    (0..hist.len())
        .filter(|&k| {
            let c = hist.bin_center(k);
            c >= lo && c < hi
        })
        .map(|k| hist.counts[k])
        .sum()
}

/// Pulsed g²(0): center peak area over the mean of `n_side_peaks` side peaks
/// on each side, each integrated over one full repetition period.
pub fn pulsed_g2_zero(
    hist: &CorrelationHistogram,
    rep_period_ps: i64,
    n_side_peaks: usize,
) -> Result<G2Estimate> {
    if rep_period_ps <= 0 {
        return Err(Error::invalid("repetition period must be > 0"));
    }
    if n_side_peaks < 2 {
        return Err(Error::invalid("need at least 2 side peaks per side"));
    }
    let period = rep_period_ps as f64;
    let reach = (n_side_peaks as f64 + 0.5) * period;
    if (hist.min_lag_ps as f64) > -reach || (hist.max_lag_ps as f64) < reach {
        return Err(Error::invalid(format!(
            "histogram spans [{}, {}) ps but {} side peaks need ±{} ps",
            hist.min_lag_ps, hist.max_lag_ps, n_side_peaks, reach
        )));
    }
    let center = peak_area(hist, 0.0, period);
    let side_total: u64 = (1..=n_side_peaks as i64)
        .flat_map(|k| [k, -k])
        .map(|k| peak_area(hist, k as f64 * period, period))
        .sum();
    if side_total == 0 {
        return Err(Error::invalid("side peaks are empty; cannot normalize"));
    }
    let n = (2 * n_side_peaks) as f64;
    let s = side_total as f64;
    let c = center as f64;
    let value = n * c / s;
    // Poisson errors on the center and on the summed side area.
    let var = (n / s).powi(2) * c + (n * c / (s * s)).powi(2) * s;
    Ok(G2Estimate {
        value,
        uncertainty: var.sqrt(),
        center_area: center,
        mean_side_area: s / n,
    })
}

/// Dark-count fraction `x = I_D / I_M` of a detector's measured rate.
pub fn dark_fraction(dark_rate_hz: f64, total_rate_hz: f64) -> Result<f64> {
    if !(total_rate_hz > 0.0) || !(dark_rate_hz >= 0.0) {
        return Err(Error::invalid(
            "dark fraction needs total rate > 0 and dark rate >= 0",
        ));
    }
    Ok(dark_rate_hz / total_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkCorrected {
    pub value: f64,
    /// The numerator went negative and the result was clamped to 0.
    pub clamped: bool,
}

/// Removes the signal–dark cross term: `(g_raw - 2x) / (1 - x)²`. The
/// dark–dark term is dropped, which is valid for `x ≪ 1`.
pub fn dark_correct_g2(g_raw: f64, dark_fraction_x: f64) -> Result<DarkCorrected> {
    if !(0.0..1.0).contains(&dark_fraction_x) {
        return Err(Error::invalid(format!(
            "dark fraction must be in [0, 1), got {dark_fraction_x}"
        )));
    }
    if !(g_raw >= 0.0) {
        return Err(Error::invalid("raw g2 must be >= 0"));
    }
    let numerator = g_raw - 2.0 * dark_fraction_x;
    if numerator < 0.0 {
        log::warn!(
            "dark-corrected g2 is negative ({:.4}); clamping to 0",
            numerator / (1.0 - dark_fraction_x).powi(2)
        );
        return Ok(DarkCorrected {
            value: 0.0,
            clamped: true,
        });
    }
    Ok(DarkCorrected {
        value: numerator / (1.0 - dark_fraction_x).powi(2),
        clamped: false,
    })
}

/// Adds two histograms with identical binning. Rates combine weighted by
/// acquisition time; any normalization is dropped.
pub fn histogram_merge(
    h1: &CorrelationHistogram,
    h2: &CorrelationHistogram,
) -> Result<CorrelationHistogram> {
    if !h1.same_binning(h2) {
        return Err(Error::invalid(
            "cannot merge histograms with different binning",
        ));
    }
    let acquisition = h1.acquisition_s + h2.acquisition_s;
    let weighted = |r1: f64, r2: f64| {
        if acquisition > 0.0 {
            (r1 * h1.acquisition_s + r2 * h2.acquisition_s) / acquisition
        } else {
            0.0
        }
    };
    Ok(CorrelationHistogram {
        bin_width_ps: h1.bin_width_ps,
        min_lag_ps: h1.min_lag_ps,
        max_lag_ps: h1.max_lag_ps,
        counts: h1
            .counts
            .iter()
            .zip(&h2.counts)
            .map(|(a, b)| a + b)
            .collect(),
        acquisition_s: acquisition,
        rate1_hz: weighted(h1.rate1_hz, h2.rate1_hz),
        rate2_hz: weighted(h1.rate2_hz, h2.rate2_hz),
        normalized: None,
    })
}

pub const CSV_HEADER: &str = "lag_ps,counts,normalized";

/// CSV with one row per bin; `lag_ps` is the bin's lower edge.
pub fn to_csv(hist: &CorrelationHistogram) -> String {
    let mut out = String::with_capacity(24 * hist.len() + 32);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for k in 0..hist.len() {
        let _ = write!(out, "{},{},", hist.bin_start(k), hist.counts[k]);
        if let Some(n) = &hist.normalized {
            let _ = write!(out, "{}", n[k]);
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, hist: &CorrelationHistogram) -> Result<()> {
    write_atomic(path, to_csv(hist).as_bytes())
}

/// Parses the CSV written by [`to_csv`]. Acquisition and rates are not part
/// of the CSV; they are recovered from the normalization when present.
pub fn from_csv(text: &str) -> Result<CorrelationHistogram> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::format(
                "histogram CSV",
                format!("missing `{CSV_HEADER}` header"),
            ))
        }
    }
    let mut lags = Vec::new();
    let mut counts = Vec::new();
    let mut normalized = Vec::new();
    let mut has_norm = None;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::format(
                "histogram CSV",
                format!("row {}: expected 3 columns", i + 2),
            ));
        }
        let bad = |e: String| Error::format("histogram CSV", format!("row {}: {e}", i + 2));
        lags.push(
            cols[0]
                .trim()
                .parse::<i64>()
                .map_err(|e| bad(e.to_string()))?,
        );
        counts.push(
            cols[1]
                .trim()
                .parse::<u64>()
                .map_err(|e| bad(e.to_string()))?,
        );
        let norm = cols[2].trim();
        let this_has = !norm.is_empty();
        if *has_norm.get_or_insert(this_has) != this_has {
            return Err(bad("normalized column is only partly filled".into()));
        }
        if this_has {
            normalized.push(norm.parse::<f64>().map_err(|e| bad(e.to_string()))?);
        }
    }
    if lags.len() < 2 {
        return Err(Error::format("histogram CSV", "need at least two bins"));
    }
    let bw = lags[1] - lags[0];
    if bw <= 0 || lags.windows(2).any(|w| w[1] - w[0] != bw) {
        return Err(Error::format(
            "histogram CSV",
            "lags are not uniformly spaced",
        ));
    }
    let min_lag = lags[0];
    let max_lag = lags[lags.len() - 1] + bw;

    let mut h = CorrelationHistogram::empty(min_lag, max_lag, bw)?;
    h.counts = counts;
    if has_norm == Some(true) {
        // counts = level · normalized for every bin.
        let (c, n) = h
            .counts
            .iter()
            .zip(&normalized)
            .fold((0.0, 0.0), |(sc, sn), (&c, &n)| (sc + c as f64, sn + n));
        if n > 0.0 {
            let level = c / n;
            h.acquisition_s = 1.0;
            h.rate1_hz = (level / (bw as f64 * 1e-12)).sqrt();
            h.rate2_hz = h.rate1_hz;
        }
        h.normalized = Some(normalized);
    }
    Ok(h)
}
