mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use ner_core::learner::{lambda_returns, Mixer, MonotonicMixer};
use ner_core::revisit::{detect_revisitations, js_distance, js_matrix, CheckpointHistogram};
use ner_core::scaling::{alpha, ObservationBuffer, ScalerConfig};

#[test]
fn lambda_returns_match_explicit_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let len = rng.gen_range(1..=50);
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let bootstrap: Vec<f64> = (0..len).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let gamma = rng.gen_range(0.0..0.999);
        let lambda = rng.gen_range(0.0..=1.0);
        let terminal = rng.gen_bool(0.5);
        let fast = lambda_returns(&rewards, &bootstrap, gamma, lambda, terminal).unwrap();
        let slow = naive_lambda_returns(&rewards, &bootstrap, gamma, lambda, terminal);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }
}

fn random_histograms(rng: &mut ChaCha8Rng, len: usize) -> Vec<CheckpointHistogram> {
    let support = rng.gen_range(1..=4u64);
    (0..len)
        .map(|i| {
            let obs: Vec<Vec<f64>> = (0..rng.gen_range(1..=6))
                .map(|_| vec![rng.gen_range(0..support) as f64, 0.0])
                .collect();
            CheckpointHistogram::from_observations((i as u64 + 1) * 100, obs.iter().map(Vec::as_slice)).unwrap()
        })
        .collect()
}

#[test]
fn revisitations_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total = 0;
    for _ in 0..200 {
        let len = rng.gen_range(2..=20);
        let hists = random_histograms(&mut rng, len);
        let delta = rng.gen_range(0.05..0.9);
        let m = js_matrix(&hists, 2.0).unwrap();
        let expected: Vec<(u64, u64)> = brute_force_revisits(&m, delta)
            .into_iter()
            .map(|(a, b)| (hists[a].step, hists[b].step))
            .collect();
        let mut found: Vec<(u64, u64)> = detect_revisitations(&hists, delta, 2.0)
            .unwrap()
            .into_iter()
            .map(|e| (e.earlier, e.current))
            .collect();
        found.sort();
        let mut expected = expected;
        expected.sort();
        assert_eq!(found, expected);
        total += found.len();
    }
    assert!(total > 0, "oracle comparison never exercised a positive case");
}

#[test]
fn alpha_matches_exact_knn_when_buffer_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ScalerConfig::default();
    for trial in 0..200 {
        let size = 1 + trial % config.sample_size;
        let entries: Vec<Vec<f64>> = (0..size).map(|_| (0..4).map(|_| rng.gen_range(0..6) as f64).collect()).collect();
        let mut buf = ObservationBuffer::new();
        for e in &entries {
            buf.push(e).unwrap();
        }
        let obs: Vec<f64> = (0..4).map(|_| rng.gen_range(0..6) as f64).collect();
        let got = alpha(&obs, &buf, &config, &mut rng).unwrap();
        let want = knn_alpha(&obs, &entries, config.k, config.epsilon);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn alpha_uses_k_nearest_of_sample() {
    let config = ScalerConfig { k: 3, sample_size: 5, ..ScalerConfig::default() };
    let entries: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
    let mut buf = ObservationBuffer::new();
    for e in &entries {
        buf.push(e).unwrap();
    }
    let got = alpha(&[0.0], &buf, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((got - knn_alpha(&[0.0], &entries, 3, config.epsilon)).abs() <= 1e-12);
}

#[test]
fn monotonic_mixer_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mixer = Mixer::Monotonic(MonotonicMixer::new(2, 4, 8, &mut rng));
    let h = 1e-4;
    for _ in 0..1000 {
        let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-20.0..120.0)).collect();
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let base = mixer.mix(&u, &s);
        let mut grads = vec![0.0; mixer.num_params()];
        let (q, dq) = mixer.backward(&u, &s, 1.0, &mut grads);
        assert!((q - base).abs() < 1e-12);
        for i in 0..2 {
            let mut up = u.clone();
            up[i] += h;
            let mut down = u.clone();
            down[i] -= h;
            let fd = (mixer.mix(&up, &s) - mixer.mix(&down, &s)) / (2.0 * h);
            assert!(fd >= -1e-6, "negative slope {fd}");
            assert!((fd - dq[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", dq[i]);
            let mut bumped = u.clone();
            bumped[i] += 1.0;
            assert!(mixer.mix(&bumped, &s) >= base - 1e-9);
        }
    }
}

fn distribution(pairs: &[(u64, f64)]) -> (CheckpointHistogram, BTreeMap<Vec<u64>, f64>) {
    let counts: BTreeMap<u64, u64> = pairs.iter().map(|&(k, w)| (k, (w * 1000.0).round() as u64 + 1)).collect();
    let total: u64 = counts.values().sum();
    let obs: Vec<Vec<f64>> = counts
        .iter()
        .flat_map(|(&k, &c)| std::iter::repeat_n(vec![k as f64], c as usize))
        .collect();
    let hist = CheckpointHistogram::from_observations(0, obs.iter().map(Vec::as_slice)).unwrap();
    let map = counts
        .iter()
        .map(|(&k, &c)| (vec![(k as f64).to_bits()], c as f64 / total as f64))
        .collect();
    (hist, map)
}

fn dist_strategy() -> impl Strategy<Value = Vec<(u64, f64)>> {
    prop::collection::vec((0u64..6, 0.0f64..1.0), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn js_is_a_bounded_symmetric_metric(a in dist_strategy(), b in dist_strategy(), c in dist_strategy()) {
        let (pa, ma) = distribution(&a);
        let (pb, mb) = distribution(&b);
        let (pc, _) = distribution(&c);
        let ab = js_distance(&pa, &pb, 2.0).unwrap();
        let ba = js_distance(&pb, &pa, 2.0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!(js_distance(&pa, &pa, 2.0).unwrap().abs() < 1e-7);
        let ac = js_distance(&pa, &pc, 2.0).unwrap();
        let cb = js_distance(&pc, &pb, 2.0).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
        prop_assert!((ab - js_distance_oracle(&ma, &mb, 2.0)).abs() < 1e-9);
        let natural = js_distance(&pa, &pb, std::f64::consts::E).unwrap();
        prop_assert!((natural - ab * 2f64.ln().sqrt()).abs() < 1e-9);
    }
}
