//! One full index-protocol trial through the attention engine.
//!
//! Alice stores L random bit rows in a KV cache under near-orthonormal
//! keys and hands the cache to Bob. Bob recovers any stored bit by
//! querying with the matching key scaled by C: the softmax puts almost
//! all weight on the spike row, so the output coordinate lands below
//! delta for a 0 bit and above Delta for a 1 bit.
//!
//! Run with: cargo run --example multi_index

use varkv::cache::{KvCache, ScaleSchedule};
use varkv::jl::sample_checked_keys;
use varkv::linalg::derive_seed;
use varkv::protocol::{
    alice_encode, bob_query, check_spike_bounds, compute_thresholds, ProtocolInstance,
};

fn main() -> varkv::Result<()> {
    let n = 4;
    let d = 400;
    let epsilon = 0.1;
    let seed = 3;

    let schedule = ScaleSchedule::new(n)?;
    let l = schedule.tokens_before_last();
    let ambient = (4 * n * n).max(l);
    let thresholds = compute_thresholds(n, epsilon, 0.0)?;
    println!("index protocol: n={n}, d={d}, L={l} stored rows, {} competitors", {
        thresholds.competitors
    });
    println!(
        "  C = {:.6}, delta = {:.6}, Delta = {:.6}",
        thresholds.c, thresholds.delta_low, thresholds.delta_high
    );

    let (keys, gram, resamples) =
        sample_checked_keys(ambient, d, l, epsilon, derive_seed(seed, 1), 32)?;
    println!(
        "  keys accepted after {resamples} resamples \
         (max offdiag {:.4}, max norm dev {:.4})",
        gram.max_offdiag, gram.max_diag_dev
    );

    let inst = ProtocolInstance::random(n, d, derive_seed(seed, 2))?;
    let mut cache = KvCache::new(d);
    let message_bits = alice_encode(&inst, &keys, &mut cache)?;
    println!(
        "  Alice stored {} payload bits; the message to Bob is {message_bits} bits",
        l * d
    );

    // The spike structure behind the decode: every queried logit is
    // near C on its own row and near 0 elsewhere.
    let spike = check_spike_bounds(&inst, &keys, &thresholds)?;
    println!(
        "  logits over {} queries: off-spike max {:.4} (bound {:.4}), \
         spike min {:.4} (bound {:.4}), {} violations",
        spike.queries,
        spike.max_off_logit,
        spike.off_bound,
        spike.min_spike_logit,
        spike.spike_bound,
        spike.violations
    );

    let result = bob_query(&inst, &keys, &thresholds, &mut cache, None)?;
    println!("  Bob decodes {} cells:", result.decoded.len());
    for (i, (got, want)) in result.decoded.iter().zip(&result.expected).enumerate() {
        let mark = if got == want { "ok" } else { "WRONG" };
        println!("    query {i}: decoded {got}, stored {want} ({mark})");
    }
    println!(
        "  correct {}/{}, ambiguous {}, correct_all = {}",
        result.correct_count,
        result.decoded.len(),
        result.ambiguous_count,
        result.correct_all
    );
    Ok(())
}
