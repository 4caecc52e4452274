use rand::Rng;

use super::{check_sorted, sort_events, Hwp, PhotonEvent};
use crate::error::Result;
use crate::model::InterferenceModel;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairingStats {
    /// Cross-input pairs formed within the pairing window.
    pub pairs: u64,
    /// Pairs where both photons are dot signal.
    pub signal_pairs: u64,
    /// Pairs that left through the same output arm.
    pub same_arm: u64,
    pub unpaired: u64,
}

impl PairingStats {
    pub fn add(&mut self, other: &PairingStats) {
        self.pairs += other.pairs;
        self.signal_pairs += other.signal_pairs;
        self.same_arm += other.same_arm;
        self.unpaired += other.unpaired;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceOutput {
    /// Arm C feeds the fiber beamsplitter and detectors.
    pub arm_c: Vec<PhotonEvent>,
    pub arm_d: Vec<PhotonEvent>,
    pub stats: PairingStats,
}

/// Routes two input streams through the 50:50 beamsplitter.
///
/// Photons from opposite inputs are paired greedily, nearest in time first,
/// when `|Δt| ≤ pairing_window_ps`. A pair exits through the same arm with
/// probability `(1 + q·V·exp(-2|Δt|/τc)) / 2`, where `q = 1` only for two
/// signal photons with parallel polarization. Unpaired photons pick an arm
/// with probability 1/2. Events are never modified, only routed.
pub fn interfere(
    stream_a: &[PhotonEvent],
    stream_b: &[PhotonEvent],
    hwp: Hwp,
    model: &InterferenceModel,
    pairing_window_ps: i64,
    seed: u64,
) -> Result<InterferenceOutput> {
    check_sorted(stream_a, "input stream A")?;
    check_sorted(stream_b, "input stream B")?;

    // All cross pairs inside the window, by a sliding two-pointer sweep.
    let mut candidates: Vec<(i64, u32, u32)> = Vec::new();
    let mut lo = 0usize;
    for (i, a) in stream_a.iter().enumerate() {
        let t = a.emit_time_ps;
        while lo < stream_b.len() && stream_b[lo].emit_time_ps < t - pairing_window_ps {
            lo += 1;
        }
        let mut j = lo;
        while j < stream_b.len() && stream_b[j].emit_time_ps <= t + pairing_window_ps {
            let dt = (stream_b[j].emit_time_ps - t).abs();
            candidates.push((dt, i as u32, j as u32));
            j += 1;
        }
    }
    candidates.sort_unstable();

    let mut partner_of_a: Vec<Option<u32>> = vec![None; stream_a.len()];
    let mut b_used = vec![false; stream_b.len()];
    for &(_, i, j) in &candidates {
        if partner_of_a[i as usize].is_none() && !b_used[j as usize] {
            partner_of_a[i as usize] = Some(j);
            b_used[j as usize] = true;
        }
    }

    let mut rng = rng_for(seed, "beamsplitter", 0);
    let mut arm_c = Vec::with_capacity(stream_a.len() / 2 + stream_b.len() / 2 + 16);
    let mut arm_d = Vec::with_capacity(arm_c.capacity());
    let mut stats = PairingStats::default();

    for (i, a) in stream_a.iter().enumerate() {
        match partner_of_a[i] {
            Some(j) => {
                let b = &stream_b[j as usize];
                stats.pairs += 1;
                let both_signal = a.source.is_signal() && b.source.is_signal();
                if both_signal {
                    stats.signal_pairs += 1;
                }
                let interfering = hwp == Hwp::Parallel && both_signal;
                let dt = (b.emit_time_ps - a.emit_time_ps) as f64;
                let p_same = if interfering {
                    0.5 * (1.0 + model.overlap_v * interference_shape(model, dt))
                } else {
                    0.5
                };
                if rng.random::<f64>() < p_same {
                    stats.same_arm += 1;
                    if rng.random::<bool>() {
                        arm_c.extend([*a, *b]);
                    } else {
                        arm_d.extend([*a, *b]);
                    }
                } else if rng.random::<bool>() {
                    arm_c.push(*a);
                    arm_d.push(*b);
                } else {
                    arm_d.push(*a);
                    arm_c.push(*b);
                }
            }
            None => {
                stats.unpaired += 1;
                if rng.random::<bool>() {
                    arm_c.push(*a);
                } else {
                    arm_d.push(*a);
                }
            }
        }
    }
    for (j, b) in stream_b.iter().enumerate() {
        if !b_used[j] {
            stats.unpaired += 1;
            if rng.random::<bool>() {
                arm_c.push(*b);
            } else {
                arm_d.push(*b);
            }
        }
    }

    sort_events(&mut arm_c);
    sort_events(&mut arm_d);
    Ok(InterferenceOutput {
        arm_c,
        arm_d,
        stats,
    })
}

fn interference_shape(model: &InterferenceModel, dt_ps: f64) -> f64 {
    let mut s = (-2.0 * dt_ps.abs() / model.tau_c_ps).exp();
    if model.detuning_rad_per_ps != 0.0 {
        s *= (model.detuning_rad_per_ps * dt_ps).cos();
    }
    s
}

/// Splits one arm on the fiber beamsplitter: each photon independently goes
/// to output 1 or 2 with probability 1/2.
pub fn fiber_split(
    arm_stream: &[PhotonEvent],
    seed: u64,
) -> Result<(Vec<PhotonEvent>, Vec<PhotonEvent>)> {
    check_sorted(arm_stream, "arm stream")?;
    let mut rng = rng_for(seed, "fiber-splitter", 0);
    let mut out1 = Vec::with_capacity(arm_stream.len() / 2 + 16);
    let mut out2 = Vec::with_capacity(arm_stream.len() / 2 + 16);
    for e in arm_stream {
        if rng.random::<bool>() {
            out1.push(*e);
        } else {
            out2.push(*e);
        }
    }
    Ok((out1, out2))
}

#[cfg(test)]
mod tests {
    use super::super::PhotonSource;
    use super::*;

    fn ev(source: PhotonSource, t: i64) -> PhotonEvent {
        PhotonEvent {
            source,
            emit_time_ps: t,
            polarization_deg: 0.0,
            pulse_index: None,
        }
    }

    /// Pairs spaced far apart so each A photon pairs with exactly one B.
    fn paired_streams(n: usize, dt: i64) -> (Vec<PhotonEvent>, Vec<PhotonEvent>) {
        let a = (0..n)
            .map(|k| ev(PhotonSource::DotA, k as i64 * 1_000_000))
            .collect();
        let b = (0..n)
            .map(|k| ev(PhotonSource::DotB, k as i64 * 1_000_000 + dt))
            .collect();
        (a, b)
    }

    #[test]
    fn orthogonal_pairs_split_like_a_coin() {
        let n = 100_000;
        let (a, b) = paired_streams(n, 0);
        let m = InterferenceModel::new(1.0, 115.0, 1.0, 1.0);
        let out = interfere(&a, &b, Hwp::Orthogonal, &m, 1150, 3).unwrap();
        assert_eq!(out.stats.pairs, n as u64);
        let frac = out.stats.same_arm as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * sigma, "same-arm fraction {frac}");
    }

    #[test]
    fn ideal_parallel_pairs_always_bunch() {
        let n = 20_000;
        let (a, b) = paired_streams(n, 0);
        let m = InterferenceModel::new(1.0, 115.0, 1.0, 1.0);
        let out = interfere(&a, &b, Hwp::Parallel, &m, 1150, 3).unwrap();
        assert_eq!(out.stats.same_arm, n as u64);
        // Each arm receives whole pairs.
        assert_eq!(out.arm_c.len() % 2, 0);
    }

    #[test]
    fn background_never_interferes() {
        let n = 50_000;
        let a: Vec<_> = (0..n)
            .map(|k| ev(PhotonSource::BackgroundA, k * 1_000_000))
            .collect();
        let b: Vec<_> = (0..n)
            .map(|k| ev(PhotonSource::DotB, k * 1_000_000))
            .collect();
        let m = InterferenceModel::new(1.0, 115.0, 1.0, 1.0);
        let out = interfere(&a, &b, Hwp::Parallel, &m, 1150, 8).unwrap();
        assert_eq!(out.stats.signal_pairs, 0);
        let frac = out.stats.same_arm as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn nearest_partner_wins() {
        let a = vec![ev(PhotonSource::DotA, 0), ev(PhotonSource::DotA, 300)];
        let b = vec![ev(PhotonSource::DotB, 250)];
        let m = InterferenceModel::new(1.0, 115.0, 1.0, 1.0);
        let out = interfere(&a, &b, Hwp::Parallel, &m, 1150, 1).unwrap();
        assert_eq!(out.stats.pairs, 1);
        assert_eq!(out.stats.unpaired, 1);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let a = vec![ev(PhotonSource::DotA, 10), ev(PhotonSource::DotA, 5)];
        let m = InterferenceModel::new(1.0, 115.0, 1.0, 1.0);
        assert!(interfere(&a, &[], Hwp::Parallel, &m, 1150, 1).is_err());
        assert!(fiber_split(&a, 1).is_err());
    }

    #[test]
    fn photons_are_conserved() {
        let a: Vec<_> = (0..5000).map(|k| ev(PhotonSource::DotA, k * 397)).collect();
        let b: Vec<_> = (0..4000)
            .map(|k| ev(PhotonSource::DotB, k * 511 + 13))
            .collect();
        let m = InterferenceModel::new(0.9, 115.0, 1.0, 1.0);
        let out = interfere(&a, &b, Hwp::Parallel, &m, 1150, 21).unwrap();
        let mut routed: Vec<_> = out.arm_c.iter().chain(&out.arm_d).copied().collect();
        let mut input: Vec<_> = a.iter().chain(&b).copied().collect();
        let key = |e: &PhotonEvent| (e.emit_time_ps, e.source);
        routed.sort_by_key(key);
        input.sort_by_key(key);
        assert_eq!(routed, input);
        assert!(out
            .arm_c
            .windows(2)
            .all(|w| w[0].emit_time_ps <= w[1].emit_time_ps));

        let (o1, o2) = fiber_split(&out.arm_c, 4).unwrap();
        let mut merged: Vec<_> = o1.iter().chain(&o2).copied().collect();
        merged.sort_by_key(key);
        let mut arm = out.arm_c.clone();
        arm.sort_by_key(key);
        assert_eq!(merged, arm);
    }

    #[test]
    fn fiber_split_is_fair_and_deterministic() {
        let (empty1, empty2) = fiber_split(&[], 0).unwrap();
        assert!(empty1.is_empty() && empty2.is_empty());

        let n = 1_000_000;
        let s: Vec<_> = (0..n).map(|k| ev(PhotonSource::DotA, k)).collect();
        let (o1, o2) = fiber_split(&s, 99).unwrap();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((o1.len() as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
        assert_eq!(o1.len() + o2.len(), n as usize);
        assert!(o1
            .windows(2)
            .all(|w| w[0].emit_time_ps <= w[1].emit_time_ps));
        let (r1, r2) = fiber_split(&s, 99).unwrap();
        assert_eq!((o1, o2), (r1, r2));
    }
}
