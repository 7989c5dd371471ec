//! Exact bit accounting for the KV cache across sizes and scalar
//! widths.
//!
//! The schedule stores sides 1, 2, 4, ..., n, so the cache holds
//! (4^k - 1)/3 tokens after scale k and L = (n^2 - 1)/3 tokens just
//! before the last scale. Cache payload is exactly
//! 2 * tokens * d * bits_per_scalar; nothing is amortized or
//! estimated.
//!
//! Run with: cargo run --example memory_accounting

use varkv::cache::{KvCache, ScaleSchedule};
use varkv::linalg::Matrix;

fn main() -> varkv::Result<()> {
    println!("token law L = (n^2 - 1)/3:");
    println!("  {:>4} {:>10} {:>12}", "n", "L", "L(2n)/L(n)");
    let mut prev: Option<usize> = None;
    for exp in 1..=5 {
        let n = 1usize << exp;
        let l = ScaleSchedule::new(n)?.tokens_before_last();
        match prev {
            Some(p) => println!("  {:>4} {:>10} {:>12.4}", n, l, l as f64 / p as f64),
            None => println!("  {:>4} {:>10} {:>12}", n, l, "-"),
        }
        prev = Some(l);
    }
    println!("  (the ratio approaches 4: quadrupling tokens per doubling of n)");

    let n = 8;
    let d = 16;
    let schedule = ScaleSchedule::new(n)?;
    println!("\nper-scale cache growth at n={n}, d={d}, 64-bit scalars:");
    println!("  {:>5} {:>6} {:>8} {:>12}", "scale", "side", "tokens", "bits");
    for k in 1..=schedule.num_scales() {
        let tokens = schedule.cumulative_tokens(k);
        println!(
            "  {:>5} {:>6} {:>8} {:>12}",
            k,
            schedule.side(k),
            tokens,
            2 * tokens as u64 * d as u64 * 64
        );
    }

    println!("\nscalar width sweep for a {}-token cache at d={d}:", schedule.total_tokens());
    let tokens = schedule.total_tokens();
    let keys = Matrix::zeros(tokens, d);
    let values = Matrix::zeros(tokens, d);
    for bits in [64u32, 32, 16, 8] {
        let mut cache = KvCache::with_bits_per_scalar(d, bits)?;
        cache.append(&keys, &values)?;
        println!(
            "  {bits:>2}-bit scalars: {:>8} bits ({} bytes)",
            cache.memory_bits(),
            cache.memory_bits() / 8
        );
    }

    // The accounting is exact, so halving the scalar width halves the
    // bits; no rounding ever enters.
    let full = KvCache::with_bits_per_scalar(d, 64)?.memory_bits();
    println!("\nempty cache stores {full} bits; growth is linear in appended tokens");
    Ok(())
}
