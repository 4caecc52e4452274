use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use super::{sort_events, ExcitationMode, ExcitationSpec, PhotonEvent, PhotonSource, Side};
use crate::error::{Error, Result};
use crate::model::EmitterSpec;
use crate::seed::rng_for;

/// Nominal time span of one simulation shard (10 ms).
pub const SHARD_SPAN_PS: f64 = 1e10;

/// A contiguous slice of the acquisition. Pulsed shards hold whole pulses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub index: u64,
    pub start_ps: f64,
    pub end_ps: f64,
    pub first_pulse: u64,
    pub pulse_count: u64,
}

/// Shard boundaries depend only on the excitation, never on thread count.
pub fn plan_segments(exc: &ExcitationSpec) -> Vec<Segment> {
    let total_ps = exc.duration_ps();
    if total_ps <= 0.0 {
        return Vec::new();
    }
    match exc.mode {
        ExcitationMode::Pulsed { rep_rate_hz } => {
            let period = 1e12 / rep_rate_hz;
            let total_pulses = (exc.duration_s * rep_rate_hz + 1e-9).floor() as u64;
            let per_shard = ((SHARD_SPAN_PS / period).floor() as u64).max(1);
            let mut out = Vec::new();
            let mut first = 0u64;
            while first < total_pulses {
                let count = per_shard.min(total_pulses - first);
                let index = out.len() as u64;
                let end_ps = if first + count == total_pulses {
                    total_ps
                } else {
                    (first + count) as f64 * period
                };
                out.push(Segment {
                    index,
                    start_ps: first as f64 * period,
                    end_ps,
                    first_pulse: first,
                    pulse_count: count,
                });
                first += count;
            }
            out
        }
        ExcitationMode::Cw { .. } => {
            let n = (total_ps / SHARD_SPAN_PS).ceil().max(1.0) as u64;
            (0..n)
                .map(|i| Segment {
                    index: i,
                    start_ps: i as f64 * SHARD_SPAN_PS,
                    end_ps: ((i + 1) as f64 * SHARD_SPAN_PS).min(total_ps),
                    first_pulse: 0,
                    pulse_count: 0,
                })
                .collect()
        }
    }
}

/// Probability of an extra, uncorrelated photon per pulse so that the
/// signal alone has pulsed peak-area ratio `g0`.
///
/// With one photon w.p. `b` and an independent second w.p. `p2`, the center
/// to side peak ratio is `2·b·p2 / (b + p2)²`; this solves for `p2`. Only
/// `g0 ≤ 0.5` is reachable with two Bernoulli photons.
pub fn second_photon_probability(brightness: f64, g0: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&g0) {
        return Err(Error::invalid(format!(
            "pulsed residual_g0 = {g0} not reachable; must be in [0, 0.5]"
        )));
    }
    if g0 == 0.0 {
        return Ok(0.0);
    }
    Ok(brightness * g0 / ((1.0 - g0) + (1.0 - 2.0 * g0).sqrt()))
}

/// Background photon probability per cycle giving a background fraction of
/// `1 - rho` among all emitted photons.
pub fn background_probability(signal_per_cycle: f64, rho: f64) -> Result<f64> {
    if signal_per_cycle == 0.0 {
        return Ok(0.0);
    }
    if !(rho > 0.0) {
        return Err(Error::invalid(
            "signal_purity_rho must be > 0 when the dot emits",
        ));
    }
    let p = (1.0 - rho) / rho * signal_per_cycle;
    if p > 1.0 {
        return Err(Error::invalid(format!(
            "background probability per cycle {p:.4} exceeds 1; lower brightness or raise rho"
        )));
    }
    Ok(p)
}

/// Mean emission rate of the CW renewal process: `1 / (1/r + τ)`.
pub fn cw_effective_rate_hz(pump_rate_hz: f64, lifetime_ps: f64) -> f64 {
    1.0 / (1.0 / pump_rate_hz + lifetime_ps * 1e-12)
}

/// Pump rate that yields the requested mean CW emission rate.
pub fn cw_pump_rate_for(target_rate_hz: f64, lifetime_ps: f64) -> Result<f64> {
    let gap = 1.0 / target_rate_hz - lifetime_ps * 1e-12;
    if !(gap > 0.0) {
        return Err(Error::invalid(format!(
            "CW rate {target_rate_hz} Hz exceeds the radiative limit 1/τ"
        )));
    }
    Ok(1.0 / gap)
}

/// Poisson background rate accompanying a CW dot so that background is a
/// fraction `1 - rho` of the emitted photons.
pub fn cw_background_rate_hz(emitter: &EmitterSpec, pump_rate_hz: f64) -> Result<f64> {
    let signal =
        cw_effective_rate_hz(pump_rate_hz, emitter.lifetime_ps) * emitter.brightness_per_pulse;
    if signal == 0.0 {
        return Ok(0.0);
    }
    let rho = emitter.signal_purity_rho;
    if !(rho > 0.0) {
        return Err(Error::invalid(
            "signal_purity_rho must be > 0 when the dot emits",
        ));
    }
    Ok(signal * (1.0 - rho) / rho)
}

/// Generates the full emission stream of one emitter.
pub fn generate_stream(
    emitter: &EmitterSpec,
    side: Side,
    exc: &ExcitationSpec,
) -> Result<Vec<PhotonEvent>> {
    emitter.validate()?;
    exc.validate()?;
    let segments = plan_segments(exc);
    let shards: Vec<Vec<PhotonEvent>> = segments
        .par_iter()
        .map(|seg| generate_segment(emitter, side, exc, seg))
        .collect::<Result<_>>()?;
    let mut out: Vec<PhotonEvent> = shards.into_iter().flatten().collect();
    // Adjacent shards can overlap by the emission delay of the last pulse.
    sort_events(&mut out);
    Ok(out)
}

/// Generates the photons belonging to one shard, sorted by time.
///
/// Events outside `[0, duration)` are discarded.
pub fn generate_segment(
    emitter: &EmitterSpec,
    side: Side,
    exc: &ExcitationSpec,
    seg: &Segment,
) -> Result<Vec<PhotonEvent>> {
    let label = match side {
        Side::A => "emitter-a",
        Side::B => "emitter-b",
    };
    let mut rng = rng_for(exc.seed, label, seg.index);
    let mut events = match exc.mode {
        ExcitationMode::Pulsed { rep_rate_hz } => {
            pulsed_segment(emitter, side, exc, 1e12 / rep_rate_hz, seg, &mut rng)?
        }
        ExcitationMode::Cw { cw_rate_hz } => cw_segment(emitter, side, cw_rate_hz, seg, &mut rng)?,
    };
    let limit = exc.duration_ps();
    events.retain(|e| e.emit_time_ps >= 0 && (e.emit_time_ps as f64) < limit);
    sort_events(&mut events);
    Ok(events)
}

fn pulsed_segment(
    emitter: &EmitterSpec,
    side: Side,
    exc: &ExcitationSpec,
    period_ps: f64,
    seg: &Segment,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PhotonEvent>> {
    let b = emitter.brightness_per_pulse;
    let p2 = second_photon_probability(b, emitter.residual_g0)?;
    let pb = background_probability(b + p2, emitter.signal_purity_rho)?;
    let decay = Exp::new(1.0 / emitter.lifetime_ps).map_err(|e| Error::invalid(e.to_string()))?;
    let jitter = (exc.pulse_jitter_ps > 0.0)
        .then(|| Normal::new(0.0, exc.pulse_jitter_ps))
        .transpose()
        .map_err(|e| Error::invalid(e.to_string()))?;

    let signal = PhotonSource::signal(side);
    let background = PhotonSource::background(side);
    let pol = emitter.polarization_deg;
    let emit = |rng: &mut ChaCha8Rng, t0: f64| -> f64 {
        let j = jitter.as_ref().map_or(0.0, |n| n.sample(rng));
        t0 + j + decay.sample(rng)
    };

    let expected = (seg.pulse_count as f64 * (b + p2 + pb) * 1.05) as usize + 16;
    let mut out = Vec::with_capacity(expected);
    for k in seg.first_pulse..seg.first_pulse + seg.pulse_count {
        let t0 = k as f64 * period_ps;
        if rng.random::<f64>() < b {
            let t = emit(rng, t0);
            out.push(event(signal, t, pol, Some(k)));
        }
        if p2 > 0.0 && rng.random::<f64>() < p2 {
            let t = emit(rng, t0);
            out.push(event(signal, t, pol, Some(k)));
        }
        if pb > 0.0 && rng.random::<f64>() < pb {
            let t = t0 + rng.random::<f64>() * period_ps;
            out.push(event(background, t, pol, Some(k)));
        }
    }
    Ok(out)
}

fn cw_segment(
    emitter: &EmitterSpec,
    side: Side,
    pump_rate_hz: f64,
    seg: &Segment,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PhotonEvent>> {
    let b = emitter.brightness_per_pulse;
    let pump_gap_ps = 1e12 / pump_rate_hz;
    let pump = Exp::new(1.0 / pump_gap_ps).map_err(|e| Error::invalid(e.to_string()))?;
    let decay = Exp::new(1.0 / emitter.lifetime_ps).map_err(|e| Error::invalid(e.to_string()))?;
    let bg_rate_hz = cw_background_rate_hz(emitter, pump_rate_hz)?;

    let signal = PhotonSource::signal(side);
    let pol = emitter.polarization_deg;
    let mut out = Vec::new();

    if b > 0.0 {
        // Start the renewal process well before the shard so it is
        // stationary at `start_ps`.
        let warmup = 50.0 * (pump_gap_ps + emitter.lifetime_ps);
        let mut t = seg.start_ps - warmup;
        loop {
            t += pump.sample(rng) + decay.sample(rng);
            if t >= seg.end_ps {
                break;
            }
            if t >= seg.start_ps && (b >= 1.0 || rng.random::<f64>() < b) {
                out.push(event(signal, t, pol, None));
            }
        }
    }

    if bg_rate_hz > 0.0 {
        let gap = Exp::new(bg_rate_hz * 1e-12).map_err(|e| Error::invalid(e.to_string()))?;
        let background = PhotonSource::background(side);
        let mut t = seg.start_ps;
        loop {
            t += gap.sample(rng);
            if t >= seg.end_ps {
                break;
            }
            out.push(event(background, t, pol, None));
        }
    }
    Ok(out)
}

fn event(
    source: PhotonSource,
    t_ps: f64,
    polarization_deg: f64,
    pulse_index: Option<u64>,
) -> PhotonEvent {
    PhotonEvent {
        source,
        emit_time_ps: t_ps.round() as i64,
        polarization_deg,
        pulse_index,
    }
}
