use std::time::Instant;

use hom_core::correlator::cross_correlate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stream(n: usize, span: i64, seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<i64> = (0..n).map(|_| rng.random_range(0..span)).collect();
    v.sort_unstable();
    v
}

// Soft bound: shared CI machines vary, so only a generous floor is enforced.
#[test]
fn correlator_throughput() {
    let n = 4_000_000;
    let span = 1_000_000_000_000; // 1 s at 4 MHz per channel
    let a = stream(n, span, 1);
    let b = stream(n, span, 2);
    let start = Instant::now();
    let h = cross_correlate(&a, &b, 10_000, 16, 1.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rate = 2.0 * n as f64 / secs;
    println!(
        "correlator: {rate:.3e} events/s ({} pairs binned)",
        h.total()
    );
    assert!(h.total() > 0);
    assert!(rate >= 2e6, "{rate:.3e} events/s");
}
