use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{check_sorted, DetectionRecord, DetectorSpec, PhotonEvent};
use crate::error::{Error, Result};
use crate::model::FWHM_TO_SIGMA;
use crate::seed::rng_for;

/// Full detector model over `[0, duration)`: loss, jitter, dark counts, then
/// dead time.
pub fn detect(
    stream: &[PhotonEvent],
    det: &DetectorSpec,
    duration_s: f64,
    detector_id: u8,
    seed: u64,
) -> Result<Vec<DetectionRecord>> {
    let records = detect_window(stream, det, 0.0, duration_s * 1e12, detector_id, seed)?;
    Ok(apply_dead_time(records, det.dead_time_ps))
}

/// Loss, jitter and dark counts for photons of one time window, without
/// dead time. Dark counts are drawn on `[start_ps, end_ps)`.
///
/// Sharded pipelines call this per shard and apply dead time once on the
/// merged stream.
pub fn detect_window(
    stream: &[PhotonEvent],
    det: &DetectorSpec,
    start_ps: f64,
    end_ps: f64,
    detector_id: u8,
    seed: u64,
) -> Result<Vec<DetectionRecord>> {
    det.validate()?;
    check_sorted(stream, "detector input")?;
    let mut rng = rng_for(seed, "detector", detector_id as u64);
    let sigma = det.jitter_fwhm_ps * FWHM_TO_SIGMA;
    let jitter = (sigma > 0.0)
        .then(|| Normal::new(0.0, sigma))
        .transpose()
        .map_err(|e| Error::invalid(e.to_string()))?;

    let mut out = Vec::with_capacity((stream.len() as f64 * det.efficiency) as usize + 16);
    for e in stream {
        if det.efficiency < 1.0 && rng.random::<f64>() >= det.efficiency {
            continue;
        }
        let t = match &jitter {
            Some(n) => (e.emit_time_ps as f64 + n.sample(&mut rng)).round() as i64,
            None => e.emit_time_ps,
        };
        out.push(DetectionRecord {
            time_ps: t,
            detector: detector_id,
        });
    }

    if det.dark_rate_hz > 0.0 && end_ps > start_ps {
        let gap = Exp::new(det.dark_rate_hz * 1e-12).map_err(|e| Error::invalid(e.to_string()))?;
        let mut t = start_ps;
        loop {
            t += gap.sample(&mut rng);
            if t >= end_ps {
                break;
            }
            out.push(DetectionRecord {
                time_ps: t.floor() as i64,
                detector: detector_id,
            });
        }
    }

    out.sort_unstable();
    Ok(out)
}

/// Drops clicks that arrive less than `dead_time_ps` after the previous
/// accepted click on the same detector. Input must be sorted.
pub fn apply_dead_time(records: Vec<DetectionRecord>, dead_time_ps: i64) -> Vec<DetectionRecord> {
    if dead_time_ps <= 0 {
        return records;
    }
    let mut last: [Option<i64>; 256] = [None; 256];
    records
        .into_iter()
        .filter(|r| {
            let slot = &mut last[r.detector as usize];
            match *slot {
                Some(prev) if r.time_ps - prev < dead_time_ps => false,
                _ => {
                    *slot = Some(r.time_ps);
                    true
                }
            }
        })
        .collect()
}

/// Dark click rate of `det` measured over `duration_s` with no light.
pub fn measure_dark_rate(det: &DetectorSpec, duration_s: f64, seed: u64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("dark-rate measurement needs duration > 0"));
    }
    let clicks = detect(&[], det, duration_s, 0, seed)?;
    Ok(clicks.len() as f64 / duration_s)
}

#[cfg(test)]
mod tests {
    use super::super::PhotonSource;
    use super::*;

    fn photons(n: usize, spacing: i64) -> Vec<PhotonEvent> {
        (0..n)
            .map(|k| PhotonEvent {
                source: PhotonSource::DotA,
                emit_time_ps: k as i64 * spacing,
                polarization_deg: 0.0,
                pulse_index: None,
            })
            .collect()
    }

    #[test]
    fn ideal_detector_is_identity() {
        let s = photons(1000, 777);
        let rec = detect(&s, &DetectorSpec::ideal(), 1.0, 1, 5).unwrap();
        let times: Vec<i64> = rec.iter().map(|r| r.time_ps).collect();
        let expect: Vec<i64> = s.iter().map(|e| e.emit_time_ps).collect();
        assert_eq!(times, expect);
        assert!(rec.iter().all(|r| r.detector == 1));
    }

    #[test]
    fn dark_counts_follow_poisson_rate() {
        let det = DetectorSpec {
            efficiency: 0.0,
            ..DetectorSpec::ingaas_apd()
        };
        let rec = detect(&photons(10_000, 1000), &det, 10.0, 2, 17).unwrap();
        let n = rec.len() as f64;
        assert!((n - 2000.0).abs() < 3.0 * 2000f64.sqrt(), "dark clicks {n}");
        assert!(rec
            .iter()
            .all(|r| (0..10_000_000_000_000).contains(&r.time_ps)));
    }

    #[test]
    fn efficiency_thins_the_stream() {
        let det = DetectorSpec {
            efficiency: 0.2,
            dark_rate_hz: 0.0,
            jitter_fwhm_ps: 0.0,
            dead_time_ps: 0,
        };
        let n = 1_000_000;
        let rec = detect(&photons(n, 100), &det, 1.0, 1, 23).unwrap();
        let sigma = (n as f64 * 0.2 * 0.8).sqrt();
        assert!((rec.len() as f64 - 2e5).abs() < 3.0 * sigma);
    }

    #[test]
    fn jitter_has_expected_spread() {
        let det = DetectorSpec {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            jitter_fwhm_ps: 200.0,
            dead_time_ps: 0,
        };
        let s = photons(200_000, 1_000_000);
        let rec = detect(&s, &det, 1.0, 1, 2).unwrap();
        let var: f64 = rec
            .iter()
            .zip(&s)
            .map(|(r, e)| ((r.time_ps - e.emit_time_ps) as f64).powi(2))
            .sum::<f64>()
            / s.len() as f64;
        let sigma = 200.0 / 2.355;
        assert!((var.sqrt() - sigma).abs() / sigma < 0.01);
    }

    #[test]
    fn dead_time_drops_close_clicks() {
        let rec: Vec<DetectionRecord> = [0, 10, 50, 120, 125, 300]
            .iter()
            .map(|&t| DetectionRecord {
                time_ps: t,
                detector: 1,
            })
            .collect();
        let kept: Vec<i64> = apply_dead_time(rec, 100)
            .iter()
            .map(|r| r.time_ps)
            .collect();
        assert_eq!(kept, vec![0, 120, 300]);
    }

    #[test]
    fn measured_dark_rate_is_close() {
        let det = DetectorSpec::ingaas_apd();
        let rate = measure_dark_rate(&det, 50.0, 3).unwrap();
        assert!((rate - 200.0).abs() < 3.0 * (200.0f64 / 50.0).sqrt());
    }
}
