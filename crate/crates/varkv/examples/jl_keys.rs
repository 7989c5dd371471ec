//! Random-projection keys and the Gram acceptance check.
//!
//! Keys are columns of a seeded Gaussian projection scaled by
//! 1/sqrt(d). A family is accepted when every pairwise dot product is
//! within epsilon of the identity Gram matrix. The example measures
//! single-draw acceptance rates at several widths and then shows the
//! resampling loop that retries until a family passes.
//!
//! Run with: cargo run --example jl_keys

use varkv::jl::{build_embedder, check_gram, sample_checked_keys};
use varkv::linalg::derive_seed;

fn single_draw_rate(
    ambient: usize,
    d: usize,
    count: usize,
    epsilon: f64,
    seeds: u64,
) -> varkv::Result<f64> {
    let mut passes = 0;
    for i in 0..seeds {
        let embedder = build_embedder(ambient, d, derive_seed(0xA11CE, i))?;
        let keys = embedder.embed_basis(count)?;
        passes += usize::from(check_gram(&keys, epsilon)?.passed);
    }
    Ok(passes as f64 / seeds as f64)
}

fn main() -> varkv::Result<()> {
    let epsilon = 0.1;
    let seeds = 200;

    // Five keys, the pre-last-scale count for n = 4, drawn from a
    // 64-wide ambient space.
    println!("single-draw Gram acceptance, 5 keys, epsilon {epsilon}, {seeds} seeds:");
    for d in [2usize, 50, 200, 400, 800] {
        let rate = single_draw_rate(64, d, 5, epsilon, seeds)?;
        println!("  width {d:>4}: {rate:.3}");
    }
    println!("  (concentration needs width well above the key count; width 2 never fits 5 keys)");

    // One key only needs its norm to concentrate.
    println!("\nsingle-draw acceptance for 1 key:");
    for d in [2usize, 400] {
        let rate = single_draw_rate(16, d, 1, epsilon, seeds)?;
        println!("  width {d:>4}: {rate:.3}");
    }

    // The resampling loop hides per-draw failure as long as the rate
    // is not astronomically small.
    println!("\nresampling until acceptance (5 keys, width 400, up to 32 attempts):");
    for seed in 0..5u64 {
        let (keys, report, resamples) = sample_checked_keys(64, 400, 5, epsilon, seed, 32)?;
        println!(
            "  seed {seed}: accepted after {resamples} resamples, \
             max offdiag {:.4}, max norm dev {:.4}, {} keys",
            report.max_offdiag,
            report.max_diag_dev,
            keys.len()
        );
    }

    // A family that cannot fit reports exhaustion instead of looping.
    match sample_checked_keys(64, 4, 5, epsilon, 1, 8) {
        Err(e) => println!("\n5 keys in width 4: {e}"),
        Ok(_) => println!("\n5 keys in width 4 unexpectedly passed"),
    }
    Ok(())
}
