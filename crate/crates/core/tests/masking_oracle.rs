//! Motion-aware masking against a literal brute-force re-implementation.

use masa_core::masking::{
    candidate_set, motion_residuals, plan_mask, ratio_count, select_mask, truncate_confidence, MaskSettings,
    PiDenominator,
};
use masa_core::posedata::{normalize_sequence, Point, PoseSequence, NUM_JOINTS};
use proptest::prelude::*;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random sequence mixing static stretches, fast motion and dropped joints.
fn random_sequence(rng: &mut ChaCha8Rng, id: usize) -> PoseSequence {
    let frames = rng.random_range(4..40);
    let speed = [0.0, 0.5, 3.0, 12.0][rng.random_range(0..4)];
    let mut coords = Vec::with_capacity(frames * NUM_JOINTS);
    let mut conf = Vec::with_capacity(frames * NUM_JOINTS);
    let mut base: Vec<Point> = (0..NUM_JOINTS)
        .map(|_| [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)])
        .collect();
    for _ in 0..frames {
        let still = rng.random_bool(0.2);
        for p in base.iter_mut() {
            if !still {
                p[0] += rng.random_range(-speed..=speed);
                p[1] += rng.random_range(-speed..=speed);
            }
            coords.push(*p);
            conf.push(if rng.random_bool(0.15) { rng.random_range(0.0..0.4) } else { rng.random_range(0.4..=1.0) });
        }
    }
    PoseSequence::new(format!("r{id}"), None, coords, conf).unwrap()
}

/// The masking procedure written out step by step over raw arrays.
fn brute_force_candidates(seq: &PoseSequence, s: &MaskSettings) -> Vec<usize> {
    let x = normalize_sequence(seq);
    let c = seq.conf();
    let t = seq.frames();
    let mut out = Vec::new();
    for i in 0..t - s.k {
        let mut moving = 0;
        let mut valid = 0;
        for j in 0..NUM_JOINTS {
            let a = i * NUM_JOINTS + j;
            let b = (i + s.k) * NUM_JOINTS + j;
            let ca = if c[a] >= s.eps_c { c[a] } else { 0.0 };
            let cb = if c[b] >= s.eps_c { c[b] } else { 0.0 };
            let dx = x[b][0] - x[a][0];
            let dy = x[b][1] - x[a][1];
            if (dx * dx + dy * dy).sqrt() * ca * cb >= s.eps_m {
                moving += 1;
            }
            if ca * cb > 0.0 {
                valid += 1;
            }
        }
        let denom = match s.pi_denominator {
            PiDenominator::All => NUM_JOINTS,
            PiDenominator::Valid => valid,
        };
        let p = if denom == 0 { 0.0 } else { moving as f64 / denom as f64 };
        if p >= s.delta {
            out.push(i);
        }
    }
    out
}

fn brute_force_mask(candidates: &[usize], alpha: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ratio_count(alpha, candidates.len());
    let mut m: Vec<usize> = index::sample(&mut rng, candidates.len(), n).iter().map(|i| candidates[i]).collect();
    m.sort();
    m
}

fn settings(rng: &mut ChaCha8Rng) -> MaskSettings {
    MaskSettings {
        k: rng.random_range(1..4),
        eps_c: [0.0, 0.4, 0.7][rng.random_range(0..3)],
        eps_m: [0.0, 1.0, 5.0, 20.0][rng.random_range(0..4)],
        delta: [0.0, 0.2, 0.5, 0.9][rng.random_range(0..4)],
        alpha: [0.0, 0.5, 0.9, 1.0][rng.random_range(0..4)],
        pi_denominator: if rng.random_bool(0.5) { PiDenominator::All } else { PiDenominator::Valid },
    }
}

#[test]
fn thousand_random_sequences_match_brute_force() {
    let mut gen = ChaCha8Rng::seed_from_u64(2024);
    let mut nonempty = 0;
    for id in 0..1000 {
        let seq = random_sequence(&mut gen, id);
        let s = settings(&mut gen);
        if seq.frames() <= s.k {
            continue;
        }
        let field = motion_residuals(
            &normalize_sequence(&seq),
            &truncate_confidence(seq.conf(), s.eps_c),
            NUM_JOINTS,
            s.k,
        )
        .unwrap();
        let expected = brute_force_candidates(&seq, &s);
        let got = candidate_set(&field, s.eps_m, s.delta, s.pi_denominator);
        assert_eq!(got, expected, "candidates differ for sequence {id} under {s:?}");
        nonempty += usize::from(!got.is_empty());

        let seed = id as u64;
        let plan = select_mask(&got, s.alpha, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(plan.masked, brute_force_mask(&expected, s.alpha, seed), "mask differs for {id}");
        assert!(plan.masked.iter().all(|m| expected.contains(m)));

        let (_, full) = plan_mask(
            &normalize_sequence(&seq),
            seq.conf(),
            NUM_JOINTS,
            &s,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        if expected.is_empty() {
            let pool: Vec<usize> = (0..seq.frames() - s.k).collect();
            assert!(full.fallback);
            assert_eq!(full.masked, brute_force_mask(&pool, s.alpha, seed));
        } else {
            assert!(!full.fallback);
            assert_eq!(full.masked, plan.masked);
        }
    }
    assert!(nonempty > 200, "only {nonempty} sequences had candidates");
}

fn candidates_for(seq: &PoseSequence, eps_m: f64, delta: f64, eps_c: f64) -> Vec<usize> {
    let field = motion_residuals(
        &normalize_sequence(seq),
        &truncate_confidence(seq.conf(), eps_c),
        NUM_JOINTS,
        3,
    )
    .unwrap();
    candidate_set(&field, eps_m, delta, PiDenominator::All)
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.contains(x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stricter_thresholds_shrink_the_candidate_set(
        seed in 0u64..10_000,
        lo in 0.0f64..10.0,
        extra in 0.0f64..10.0,
        d_lo in 0.0f64..0.9,
        d_extra in 0.0f64..0.5,
    ) {
        let seq = random_sequence(&mut ChaCha8Rng::seed_from_u64(seed), 0);
        prop_assume!(seq.frames() > 3);
        let loose = candidates_for(&seq, lo, d_lo, 0.4);
        prop_assert!(is_subset(&candidates_for(&seq, lo + extra, d_lo, 0.4), &loose));
        prop_assert!(is_subset(&candidates_for(&seq, lo, d_lo + d_extra, 0.4), &loose));
    }

    #[test]
    fn raising_confidence_never_removes_candidates(seed in 0u64..10_000, boost in 0.0f64..0.6) {
        let seq = random_sequence(&mut ChaCha8Rng::seed_from_u64(seed), 0);
        prop_assume!(seq.frames() > 3);
        let higher: Vec<f64> = seq.conf().iter().map(|c| (c + boost).min(1.0)).collect();
        let boosted = PoseSequence::new("b", None, seq.coords().to_vec(), higher).unwrap();
        prop_assert!(is_subset(&candidates_for(&seq, 5.0, 0.5, 0.4), &candidates_for(&boosted, 5.0, 0.5, 0.4)));
    }

    #[test]
    fn mask_size_and_membership(n in 0usize..60, alpha in 0.0f64..=1.0, seed in any::<u64>()) {
        let candidates: Vec<usize> = (0..n).map(|i| 2 * i + 1).collect();
        let plan = select_mask(&candidates, alpha, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(plan.masked.len(), ratio_count(alpha, n));
        prop_assert!(plan.masked.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(is_subset(&plan.masked, &candidates));
    }
}
