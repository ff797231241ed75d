use longreach_core::attention::{
    attention_from_scores, gaussian_attention, leaky_clamp, mix_with_percent, soft_staircase, AttentionWeights,
    LocationAttender, LocationConfig, LocationState, PositionalScorer, PositionalScorerKind,
};
use longreach_core::metrics::{seq_acc, seq_acc_be};
use longreach_core::numcore::rng::substream;
use longreach_core::numcore::{ParamStore, Tensor};
use proptest::prelude::*;

fn on_simplex(w: &AttentionWeights) -> bool {
    let sum: f64 = w.as_slice().iter().sum();
    w.as_slice().iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() <= 1e-6
}

fn small_attender(seed: u64, query_dim: usize) -> (ParamStore<f64>, LocationAttender) {
    let mut store = ParamStore::new();
    let config = LocationConfig {
        weighter_dim: 8,
        ..LocationConfig::default()
    };
    let att = LocationAttender::new(&mut store, "loc", query_dim, config, &mut substream(seed, "init")).unwrap();
    (store, att)
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
        let v: Vec<f64> = v.iter().map(|x| x + 1e-3).collect();
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn every_attention_path_is_on_the_simplex(
        n_s in 1usize..24,
        mu in -1.0f64..2.0,
        sigma in 1e-3f64..2.0,
        scale in 0.0f64..50.0,
        seed in any::<u64>(),
        percent in 0.0f64..=1.0,
        prev in 0.0f64..=1.0,
    ) {
        let g = gaussian_attention(mu, sigma, n_s).unwrap();
        prop_assert!(on_simplex(&g));

        let mut rng = substream(seed, "scores");
        let scores: Vec<f64> = (0..n_s).map(|_| scale * (rand::Rng::gen::<f64>(&mut rng) - 0.5)).collect();
        let gamma = attention_from_scores(&scores).unwrap();
        prop_assert!(on_simplex(&gamma));

        let (store, att) = small_attender(seed, 6);
        let query: Vec<f64> = (0..6).map(|_| scale * (rand::Rng::gen::<f64>(&mut rng) - 0.5)).collect();
        let mut state = LocationState::reset(8);
        state.prev_mean_pos = prev;
        let (lambda, next, diag) = att.attend(&store, &query, n_s, &state).unwrap();
        prop_assert!(on_simplex(&lambda));
        prop_assert!((0.0..=1.0).contains(&next.prev_mean_pos));
        prop_assert!(diag.sigma >= 0.27 / n_s as f64 - 1e-12);
        prop_assert!(diag.rho[0] > 0.0 && diag.rho[0] < 1.0 && diag.rho[2] > 0.0 && diag.rho[2] < 1.0);
        let raw: f64 = diag.rho.iter().zip(diag.building_blocks).map(|(r, b)| r * b).sum();
        let over = if raw < 0.0 { -raw } else if raw > 1.0 { raw - 1.0 } else { 0.0 };
        prop_assert!(diag.mu >= -0.01 * over - 1e-12 && diag.mu <= 1.0 + 0.01 * over + 1e-12);

        let alpha = mix_with_percent(&gamma, &lambda, percent).unwrap();
        prop_assert!(on_simplex(&alpha));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn gaussian_attention_is_unimodal(n_s in 2usize..40, mu in 0.0f64..=1.0, width in 0.27f64..3.0) {
        let sigma = width / n_s as f64;
        let w = gaussian_attention(mu, sigma, n_s).unwrap();
        let w = w.as_slice();
        let peak = (mu * (n_s - 1) as f64).round() as usize;
        for s in 1..=peak {
            prop_assert!(w[s] >= w[s - 1] - 1e-15, "rise broken at {}", s);
        }
        for s in peak + 1..n_s {
            prop_assert!(w[s] <= w[s - 1] + 1e-15, "fall broken at {}", s);
        }
    }

    #[test]
    fn mix_lies_between_its_parts(
        (gamma, lambda) in (2usize..16).prop_flat_map(|n| (weights(n), weights(n))),
        percent in 0.0f64..=1.0,
    ) {
        let g = AttentionWeights::new(gamma.clone()).unwrap();
        let l = AttentionWeights::new(lambda.clone()).unwrap();
        let a = mix_with_percent(&g, &l, percent).unwrap();
        for ((&a, &g), &l) in a.as_slice().iter().zip(&gamma).zip(&lambda) {
            prop_assert!(a >= g.min(l) - 1e-12 && a <= g.max(l) + 1e-12);
        }
    }

    #[test]
    fn transformer_xl_depends_only_on_offset(
        seed in any::<u64>(),
        s in 0usize..12,
        t in 0usize..12,
        shift in 1usize..20,
    ) {
        let mut store = ParamStore::<f64>::new();
        let scorer = PositionalScorer::new(
            &mut store, "xl", PositionalScorerKind::TransformerXl, 8, &mut substream(seed, "init"),
        ).unwrap();
        let mut rng = substream(seed, "kq");
        let k: Vec<f64> = (0..8).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let q: Vec<f64> = (0..8).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let a = scorer.score(&store, &k, s, &q, t).unwrap();
        let b = scorer.score(&store, &k, s + shift, &q, t + shift).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} vs {}", a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn seq_acc_never_exceeds_seq_acc_be(
        pred in prop::collection::vec(prop::sample::select(vec!["000", "110", "<eos>"]), 0..8),
        target in prop::collection::vec(prop::sample::select(vec!["000", "110"]), 0..7),
    ) {
        let mut target = target;
        target.push("<eos>");
        prop_assert!(seq_acc(&pred, &target) <= seq_acc_be(&pred, &target));
    }
}

#[test]
fn staircase_fixed_points_and_monotonicity() {
    for k in -5..=5 {
        let v = soft_staircase(k as f64);
        assert!((v - k as f64).abs() <= 5e-5, "staircase({k}) = {v}");
    }
    let grid: Vec<f64> = (0..10_000).map(|i| -5.0 + 10.0 * i as f64 / 9_999.0).collect();
    for w in grid.windows(2) {
        assert!(soft_staircase(w[1]) >= soft_staircase(w[0]), "decrease at {}", w[0]);
    }
}

#[test]
fn leaky_clamp_examples() {
    assert_eq!(leaky_clamp(0.7), 0.7);
    assert!((leaky_clamp(-1.0) + 0.01).abs() < 1e-12);
    assert!((leaky_clamp(2.0) - 1.01).abs() < 1e-12);
}

#[test]
fn percentile_addressing_ignores_length() {
    // Gates forced to (off, 0 steps, bias on): mu sits at the last position
    // whatever the source length.
    let (mut store, att) = small_attender(3, 6);
    let w = att.rho_weight();
    let shape = store.get(w).tensor.shape().to_vec();
    store.get_mut(w).tensor = Tensor::zeros(&shape);
    store.get_mut(att.rho_bias()).tensor = Tensor::new(&[3], vec![-40.0, 0.0, 40.0]).unwrap();
    for n_s in [2, 5, 9, 17, 60] {
        let (lambda, _, diag) = att.attend(&store, &[0.3; 6], n_s, &LocationState::reset(8)).unwrap();
        assert!((diag.mu - 1.0).abs() < 1e-4, "n_s={n_s} mu={}", diag.mu);
        assert_eq!(lambda.argmax(), n_s - 1);
    }
}
