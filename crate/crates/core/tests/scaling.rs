//! Kept in its own binary so no other test competes for the CPU.

use std::time::Instant;

use roughvol::hybrid::{simulate_volterra, HybridPlan};
use roughvol::sim::{make_time_grid, sample_correlated_increments};

fn best_of(runs: usize, steps: usize) -> f64 {
    let grid = make_time_grid(1.0, steps).unwrap();
    let plan = HybridPlan::new(grid, -0.43).unwrap();
    let inc = sample_correlated_increments(&grid, 0.0, 64, 1).unwrap();
    (0..runs)
        .map(|_| {
            let t0 = Instant::now();
            std::hint::black_box(simulate_volterra(&plan, &inc).unwrap());
            t0.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn doubling_steps_less_than_triples_runtime() {
    for steps in [1 << 12, 1 << 13] {
        let (a, b) = (best_of(5, steps), best_of(5, 2 * steps));
        assert!(b < 3.0 * a, "N={steps}: {a:.4} s, 2N: {b:.4} s");
    }
}
