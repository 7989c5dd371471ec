//! Acceptance gate: ten numbered checks covering the scale schedule,
//! the two forward paths, the decode thresholds, protocol recovery in
//! exact and noisy modes, spike bounds, key geometry, bit accounting,
//! compressor degradation, and numeric hygiene.
//!
//! Each check prints one `[criterion N] PASS/FAIL` line with its
//! measured values (visible under `--nocapture`; failures always show
//! the line in the panic message). Checks derive all randomness from
//! master seed 1.

use varkv::cache::{incremental_forward, KvCache, ScaleSchedule};
use varkv::compress::{bench_compressor, Compressor};
use varkv::jl::{build_embedder, check_gram, sample_checked_keys, DEFAULT_MAX_GRAM_ATTEMPTS};
use varkv::linalg::{derive_seed, gaussian_matrix, softmax_columns, Matrix, SeededRng};
use varkv::protocol::{
    alice_encode, check_spike_bounds, compute_thresholds, run_protocol, Mode, NoiseKind,
    ProtocolConfig, ProtocolInstance,
};
use varkv::var::{var_forward, AttentionWeights, TokenMap, UpInterpolator};

const MASTER_SEED: u64 = 1;

fn report(criterion: usize, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("[criterion {criterion}] {verdict} {detail}");
    assert!(passed, "[criterion {criterion}] {verdict} {detail}");
}

/// Standard forward-pass fixture: Gaussian initial token, one Gaussian
/// weight set shared across scales, nearest-neighbor up-interpolation.
fn forward_fixture(
    n: usize,
    d: usize,
    seed: u64,
) -> (ScaleSchedule, TokenMap, Vec<AttentionWeights>, Vec<UpInterpolator>) {
    let schedule = ScaleSchedule::new(n).unwrap();
    let num_scales = schedule.num_scales();
    let mut rng = SeededRng::new(seed);
    let token: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let x_init = TokenMap::from_single_token(&token).unwrap();
    let shared = AttentionWeights::gaussian(d, &mut rng).unwrap();
    let weights = vec![shared; num_scales];
    let interps: Vec<UpInterpolator> = (1..num_scales)
        .map(|k| {
            let side = 1usize << (k - 1);
            UpInterpolator::nearest_neighbor(side, side, 2 * side, 2 * side).unwrap()
        })
        .collect();
    (schedule, x_init, weights, interps)
}

#[test]
fn criterion_01_scale_schedule_law() {
    let mut worst = String::new();
    let mut ok = true;
    for n in [2usize, 4, 8, 16, 32] {
        let schedule = ScaleSchedule::new(n).unwrap();
        let l = schedule.tokens_before_last();
        if l != (n * n - 1) / 3 {
            ok = false;
            worst = format!("n={n}: L={l} != {}", (n * n - 1) / 3);
            break;
        }
        for k in 1..=schedule.num_scales() {
            let tokens = schedule.cumulative_tokens(k);
            let expect = (4usize.pow(k as u32) - 1) / 3;
            if tokens != expect {
                ok = false;
                worst = format!("n={n}, scale {k}: {tokens} != {expect}");
                break;
            }
        }
    }
    report(
        1,
        ok,
        &if ok {
            "L=(n^2-1)/3 and per-scale (4^k-1)/3 exact for n in {2,4,8,16,32}".to_string()
        } else {
            worst
        },
    );
}

#[test]
fn criterion_02_cache_recompute_equivalence() {
    let mut max_rel = 0.0f64;
    for n in [2usize, 4, 8] {
        for d in [4usize, 16] {
            for seed in 0..20u64 {
                let (schedule, x_init, weights, interps) =
                    forward_fixture(n, d, derive_seed(MASTER_SEED, seed));
                let one_shot = var_forward(&x_init, &weights, &interps, schedule.num_scales())
                    .unwrap();
                let streaming =
                    incremental_forward(&x_init, &weights, &interps, &schedule).unwrap();
                for (a, b) in one_shot.iter().zip(&streaming.maps) {
                    for (x, y) in a.as_matrix().data().iter().zip(b.as_matrix().data()) {
                        let denom = x.abs().max(y.abs());
                        if denom > 0.0 {
                            max_rel = max_rel.max((x - y).abs() / denom);
                        }
                    }
                }
            }
        }
    }
    report(
        2,
        max_rel <= 1e-9,
        &format!("max relative deviation {max_rel:e} over n in {{2,4,8}}, d in {{4,16}}, 20 seeds"),
    );
}

#[test]
fn criterion_03_threshold_constants() {
    let t = compute_thresholds(2, 0.1, 0.0).unwrap();
    let c_formula = 2.0 * 4.0f64.ln() / 0.9;
    let c_err = (t.c - c_formula).abs();
    let sum_err = (t.delta_low + t.delta_high - 1.0).abs();
    let ok = c_err <= 1e-12 && sum_err <= 1e-12 && t.delta_low < t.delta_high;
    report(
        3,
        ok,
        &format!(
            "C={} (|C - 2ln4/0.9|={c_err:e}), delta={}, Delta={}, |delta+Delta-1|={sum_err:e}",
            t.c, t.delta_low, t.delta_high
        ),
    );
}

#[test]
fn criterion_04_exact_protocol_success() {
    let config = ProtocolConfig {
        n: 2,
        d: 400,
        epsilon: 0.1,
        mode: Mode::Exact,
    };
    let trials = 200;
    let mut successes = 0;
    for trial in 0..trials {
        match run_protocol(&config, derive_seed(MASTER_SEED, trial)) {
            Ok(res) => successes += usize::from(res.correct_all),
            Err(varkv::Error::GramRejected { .. }) => {}
            Err(e) => panic!("unexpected error: {e}"),
        }
    }
    let rate = successes as f64 / trials as f64;
    report(
        4,
        rate >= 0.6,
        &format!("exact-mode correct_all rate {rate} over {trials} trials at n=2, d=400"),
    );
}

#[test]
fn criterion_05_approximate_protocol_success() {
    let t = compute_thresholds(2, 0.1, 0.5).unwrap();
    let margin_ok = (1.0 + t.eta) * t.delta_low < (1.0 - t.eta) * t.delta_high;
    let mut detail = format!(
        "analytic margin (1+eta)delta={} < (1-eta)Delta={}: {margin_ok}",
        t.decode_low(),
        t.decode_high()
    );
    let mut all_ok = margin_ok;
    for noise in [NoiseKind::LowExtreme, NoiseKind::HighExtreme, NoiseKind::Uniform] {
        let config = ProtocolConfig {
            n: 2,
            d: 400,
            epsilon: 0.1,
            mode: Mode::Approximate { eta: 0.5, noise },
        };
        let trials = 200;
        let mut successes = 0;
        for trial in 0..trials {
            match run_protocol(&config, derive_seed(MASTER_SEED, trial)) {
                Ok(res) => successes += usize::from(res.correct_all),
                Err(varkv::Error::GramRejected { .. }) => {}
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
        let rate = successes as f64 / trials as f64;
        all_ok &= rate >= 0.6;
        detail.push_str(&format!("; {noise:?} rate {rate}"));
    }
    report(5, all_ok, &detail);
}

#[test]
fn criterion_06_spike_bounds_zero_violations() {
    let n = 2;
    let d = 400;
    let epsilon = 0.1;
    let t = compute_thresholds(n, epsilon, 0.0).unwrap();
    let schedule = ScaleSchedule::new(n).unwrap();
    let l = schedule.tokens_before_last();
    let ambient = (4 * n * n).max(l);
    let trials = 200u64;
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut worst_off = f64::NEG_INFINITY;
    let mut worst_spike = f64::INFINITY;
    for trial in 0..trials {
        let seed = derive_seed(MASTER_SEED, trial);
        let keys = match sample_checked_keys(
            ambient,
            d,
            l,
            epsilon,
            derive_seed(seed, 11),
            DEFAULT_MAX_GRAM_ATTEMPTS,
        ) {
            Ok((keys, _, _)) => keys,
            Err(varkv::Error::GramRejected { .. }) => continue,
            Err(e) => panic!("unexpected error: {e}"),
        };
        let inst = ProtocolInstance::random(n, d, derive_seed(seed, 12)).unwrap();
        let check = check_spike_bounds(&inst, &keys, &t).unwrap();
        checked += 1;
        violations += check.violations;
        worst_off = worst_off.max(check.max_off_logit);
        worst_spike = worst_spike.min(check.min_spike_logit);
    }
    report(
        6,
        checked > 0 && violations == 0,
        &format!(
            "{violations} violations over {checked} Gram-passed trials \
             (max off logit {worst_off:.6} <= {:.6}, min spike logit {worst_spike:.6} >= {:.6})",
            t.c * epsilon,
            t.c * (1.0 - epsilon)
        ),
    );
}

#[test]
fn criterion_07_jl_regime_pass_rates() {
    let seeds = 100u64;
    let rate_at = |d: usize| {
        let schedule = ScaleSchedule::new(2).unwrap();
        let l = schedule.tokens_before_last();
        let ambient = (4 * 2 * 2).max(l);
        let mut passes = 0;
        for i in 0..seeds {
            let embedder = build_embedder(ambient, d, derive_seed(MASTER_SEED, i)).unwrap();
            let keys = embedder.embed_basis(l).unwrap();
            passes += usize::from(check_gram(&keys, 0.1).unwrap().passed);
        }
        passes as f64 / seeds as f64
    };
    let wide = rate_at(400);
    let narrow = rate_at(2);
    // The wide-width clause demands a 0.9 single-draw rate, but the
    // norm of one width-400 Gaussian key lands within epsilon = 0.1 of
    // 1 with probability 0.8433 (chi-square tail), so the measured
    // rate sits near 0.84 for almost every master seed.
    report(
        7,
        wide >= 0.9 && narrow <= 0.1,
        &format!("pass rate {wide} at d=400 (need >= 0.9), {narrow} at d=2 (need <= 0.1)"),
    );
}

#[test]
fn criterion_08_memory_accounting_exact() {
    let mut ok = true;
    let mut detail = String::new();
    for n in [2usize, 4] {
        for d in [4usize, 400] {
            let schedule = ScaleSchedule::new(n).unwrap();
            let l = schedule.tokens_before_last();
            let ambient = (4 * n * n).max(l);
            // Bit accounting is independent of key geometry, so raw
            // unfiltered draws cover sizes where the Gram check would
            // essentially never pass (five keys at width 4).
            let embedder = build_embedder(
                ambient,
                d,
                derive_seed(MASTER_SEED, (n * 1000 + d) as u64),
            )
            .unwrap();
            let keys = embedder.embed_basis(l).unwrap();
            let inst = ProtocolInstance::random(n, d, 5).unwrap();
            let mut cache = KvCache::new(d);
            let message_bits = alice_encode(&inst, &keys, &mut cache).unwrap();
            let expect = 2 * (l * d) as u64 * 64;
            if message_bits != expect || cache.memory_bits() != expect {
                ok = false;
                detail = format!(
                    "n={n}, d={d}: message_bits {message_bits}, cache {} != {expect}",
                    cache.memory_bits()
                );
            }
        }
    }
    let l2 = ScaleSchedule::new(2).unwrap().tokens_before_last();
    let l4 = ScaleSchedule::new(4).unwrap().tokens_before_last();
    if l4 != 5 * l2 {
        ok = false;
        detail = format!("payload ratio L(4)/L(2) = {l4}/{l2} != 5");
    }
    if ok {
        detail = format!(
            "message_bits == 2*L*d*64 exactly at n in {{2,4}}, d in {{4,400}}; L(4)/L(2) = {}",
            l4 / l2
        );
    }
    report(8, ok, &detail);
}

#[test]
fn criterion_09_compressor_degradation() {
    let n = 2;
    let d = 400;
    let trials = 200;
    let schedule = ScaleSchedule::new(n).unwrap();
    let l = schedule.tokens_before_last();
    // Evicting the ceiling half of the rows keeps the floor half.
    let keep = l - l.div_ceil(2);
    let evicted = bench_compressor(
        n,
        d,
        0.1,
        &Compressor::EvictKeepLast { keep },
        trials,
        MASTER_SEED,
    )
    .unwrap();
    let identity =
        bench_compressor(n, d, 0.1, &Compressor::Identity, trials, MASTER_SEED).unwrap();
    let config = ProtocolConfig {
        n,
        d,
        epsilon: 0.1,
        mode: Mode::Exact,
    };
    let mut successes = 0;
    for trial in 0..trials {
        match run_protocol(&config, derive_seed(MASTER_SEED, trial as u64)) {
            Ok(res) => successes += usize::from(res.correct_all),
            Err(varkv::Error::GramRejected { .. }) => {}
            Err(e) => panic!("unexpected error: {e}"),
        }
    }
    let baseline = successes as f64 / trials as f64;
    let identity_gap = (identity.success_rate - baseline).abs();
    let ok = evicted.success_rate <= 0.5 && identity_gap <= 0.05;
    report(
        9,
        ok,
        &format!(
            "evict(keep={keep}) success {} (need <= 0.5); identity {} vs baseline {baseline} \
             (gap {identity_gap})",
            evicted.success_rate, identity.success_rate
        ),
    );
}

#[test]
fn criterion_10_numeric_hygiene() {
    let mut max_col_err = 0.0f64;
    let mut max_row_err = 0.0f64;
    let mut nonfinite = 0usize;

    // Column sums of softmax over a battery of logit matrices,
    // including large common shifts that force the max-subtraction
    // path to matter.
    let mut rng = SeededRng::new(derive_seed(MASTER_SEED, 0xACCE));
    for shift in [0.0, -600.0, 600.0] {
        for _ in 0..10 {
            let rows = 1 + rng.index(12);
            let cols = 1 + rng.index(12);
            let base = gaussian_matrix(rows, cols, &mut rng).unwrap().scaled(50.0);
            let shifted: Vec<f64> = base.data().iter().map(|x| x + shift).collect();
            let logits = Matrix::from_vec(rows, cols, shifted).unwrap();
            let w = softmax_columns(&logits);
            if !w.is_finite() {
                nonfinite += 1;
            }
            for c in 0..cols {
                let sum: f64 = (0..rows).map(|r| w.get(r, c)).sum();
                max_col_err = max_col_err.max((sum - 1.0).abs());
            }
        }
    }

    // Row-stochasticity of attention through the cache engine: with
    // all-ones value rows, every output entry is the sum of that
    // query's attention weights.
    for seed in 0..10u64 {
        let mut rng = SeededRng::new(derive_seed(MASTER_SEED, 0xBEEF + seed));
        let tokens = 2 + rng.index(30);
        let d = 1 + rng.index(16);
        let mut cache = KvCache::new(d);
        let keys = gaussian_matrix(tokens, d, &mut rng).unwrap();
        let ones = Matrix::from_vec(tokens, d, vec![1.0; tokens * d]).unwrap();
        cache.append(&keys, &ones).unwrap();
        let queries = gaussian_matrix(4, d, &mut rng).unwrap();
        let out = cache.attend(&queries).unwrap();
        if !out.is_finite() {
            nonfinite += 1;
        }
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                max_row_err = max_row_err.max((out.get(r, c) - 1.0).abs());
            }
        }
    }

    // Forward passes stay finite.
    for n in [2usize, 8] {
        let (schedule, x_init, weights, interps) =
            forward_fixture(n, 8, derive_seed(MASTER_SEED, 0xF0 + n as u64));
        for map in var_forward(&x_init, &weights, &interps, schedule.num_scales()).unwrap() {
            if !map.as_matrix().is_finite() {
                nonfinite += 1;
            }
        }
    }

    let ok = max_col_err <= 1e-9 && max_row_err <= 1e-9 && nonfinite == 0;
    report(
        10,
        ok,
        &format!(
            "softmax column-sum error {max_col_err:e}, attention row-sum error {max_row_err:e}, \
             {nonfinite} non-finite results"
        ),
    );
}
