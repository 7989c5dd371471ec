//! Streaming forward pass over a growing KV cache, checked against
//! full recomputation.
//!
//! Runs the same model twice: once recomputing attention over the
//! whole flattened pyramid at every scale, and once appending each
//! scale's keys and values to a cache exactly once. With one weight
//! set shared across scales the two paths agree bit for bit. Also
//! demonstrates replaying the append log into a fresh cache.
//!
//! Run with: cargo run --example streaming_cache

use varkv::cache::{incremental_forward, ScaleSchedule};
use varkv::linalg::SeededRng;
use varkv::var::{var_forward, AttentionWeights, TokenMap, UpInterpolator};

fn main() -> varkv::Result<()> {
    let (n, d, seed) = (8, 16, 11);
    let schedule = ScaleSchedule::new(n)?;
    let num_scales = schedule.num_scales();
    let mut rng = SeededRng::new(seed);
    let token: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let x_init = TokenMap::from_single_token(&token)?;
    let shared = AttentionWeights::gaussian(d, &mut rng)?;
    let weights = vec![shared; num_scales];
    let mut interps = Vec::new();
    for k in 1..num_scales {
        let side = 1usize << (k - 1);
        interps.push(UpInterpolator::nearest_neighbor(side, side, 2 * side, 2 * side)?);
    }

    println!("streaming vs recompute: n={n}, d={d}, {num_scales} scales");
    let one_shot = var_forward(&x_init, &weights, &interps, num_scales)?;
    let run = incremental_forward(&x_init, &weights, &interps, &schedule)?;

    let mut max_dev = 0.0f64;
    for (a, b) in one_shot.iter().zip(&run.maps) {
        max_dev = max_dev.max(a.as_matrix().max_abs_diff(b.as_matrix())?);
    }
    println!("  max |one-shot - streaming| over every scale: {max_dev:e}");

    println!("  cache growth:");
    for row in &run.memory {
        println!(
            "    after scale {}: {:>3} tokens, {:>7} payload bits, {:>7} peak transient bits",
            row.scale, row.tokens, row.memory_bits, row.peak_transient_bits
        );
    }
    println!(
        "  final cache: {} tokens, {} bits = 2 * tokens * d * 64",
        run.cache.tokens(),
        run.cache.memory_bits()
    );

    // The append log carries every (keys, values) block in order, so a
    // fresh cache replayed from it matches the original exactly.
    let replayed = run.log.replay()?;
    println!(
        "  replayed cache matches: {}",
        replayed.keys() == run.cache.keys() && replayed.values() == run.cache.values()
    );
    Ok(())
}
