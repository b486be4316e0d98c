use pia_core::model::{Model, ModelConfig, ModelWeights, TokenSequence};
use pia_core::pipeline::{dequantize, quantize};
use pia_core::tensor::dist_sq;
use pia_core::Tensor;
use proptest::prelude::*;

fn small_cfg(layers: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 6,
        hidden: 8,
        layers,
        heads: 2,
        mlp_multiple: 2,
        max_seq_len: 8,
        ..ModelConfig::tiny()
    }
}

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(t in (1usize..5, 1usize..7).prop_flat_map(|(r, c)| tensor(r, c))) {
        let s = t.softmax(1).unwrap();
        for i in 0..s.rows() {
            let row = s.row(i);
            prop_assert!(row.iter().all(|&p| p.is_finite() && p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quantize_error_within_half_step(t in tensor(3, 5), bits in prop::sample::select(vec![4u32, 8])) {
        let q = quantize(&t, bits).unwrap();
        let back = dequantize(&q);
        let qmax = ((1 << (bits - 1)) - 1) as f64;
        prop_assert!(q.codes.iter().all(|&c| (c as f64).abs() <= qmax));
        for (a, b) in t.data().iter().zip(back.data()) {
            let ulp = f64::EPSILON * a.abs().max(b.abs());
            prop_assert!((a - b).abs() <= q.scale / 2.0 + 4.0 * ulp);
        }
    }

    #[test]
    fn nearest_tokens_match_brute_force(seed in 0u64..1000, v in prop::collection::vec(-0.1f64..0.1, 32)) {
        let m = Model::<f64>::random(ModelConfig::tiny(), seed, 0.02).unwrap();
        let got = m.nearest_tokens(&v, 64);
        let table = m.token_table();
        let mut brute: Vec<(f64, u32)> =
            (0..64).map(|t| (dist_sq(&v, table.row(t)), t as u32)).collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        prop_assert_eq!(got, brute.into_iter().map(|(_, t)| t).collect::<Vec<_>>());
    }

    #[test]
    fn forward_composition(seed in 0u64..200, split in 1usize..4, ids in prop::collection::vec(0u32..6, 1..8)) {
        let m = Model::<f64>::random(small_cfg(4), seed, 0.3).unwrap();
        let v = m.embed(&TokenSequence::new(ids)).unwrap();
        let once = m.forward_layers(&v, 1..=4, None).unwrap();
        let a = m.forward_layers(&v, 1..=split, None).unwrap();
        let b = m.forward_layers(&a, split + 1..=4, None).unwrap();
        prop_assert_eq!(once, b);
    }
}

/// Changing any token at position ≥ j never alters output rows < j.
#[test]
fn causal_independence_exhaustive() {
    let m = Model::<f64>::random(small_cfg(2), 4, 0.3).unwrap();
    let base = vec![1u32, 4, 0, 3, 2];
    let out = m.hidden_states(&TokenSequence::new(base.clone()), 2, None).unwrap();
    for j in 0..base.len() {
        for tok in 0..6u32 {
            let mut x = base.clone();
            x[j] = tok;
            let y = m.hidden_states(&TokenSequence::new(x), 2, None).unwrap();
            for i in 0..j {
                assert_eq!(y.row(i), out.row(i), "j={j} tok={tok} row={i}");
            }
        }
    }
}

#[test]
fn embedding_rows_within_bounds() {
    let m = Model::<f64>::random(ModelConfig::tiny(), 8, 0.02).unwrap();
    let (l, r) = m.embedding_bounds();
    let table = m.token_table();
    for t in 0..table.rows() {
        for (j, &v) in table.row(t).iter().enumerate() {
            assert!(l.data()[j] <= v && v <= r.data()[j]);
        }
    }
}

#[test]
fn nearest_token_round_trip_recovers_prompt() {
    let m = Model::<f64>::random(ModelConfig::tiny(), 12, 0.02).unwrap();
    let x = TokenSequence::new(vec![0, 7, 63, 7, 31]);
    let tok = m.token_embeddings(&x).unwrap();
    let back: Vec<u32> = (0..x.len()).map(|i| m.nearest_tokens(tok.row(i), 1)[0]).collect();
    assert_eq!(back, x.ids());
}

#[test]
fn same_seed_same_bytes() {
    let a = Model::<f64>::random(ModelConfig::tiny(), 77, 0.02).unwrap();
    let b = Model::<f64>::random(ModelConfig::tiny(), 77, 0.02).unwrap();
    assert_eq!(a.to_container().to_bytes(), b.to_container().to_bytes());
    let c = Model::<f64>::random(ModelConfig::tiny(), 78, 0.02).unwrap();
    assert_ne!(a.to_container().to_bytes(), c.to_container().to_bytes());
}

#[test]
fn save_load_forward_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.plk");
    let m = Model::<f64>::random(ModelConfig::tiny().with_layers(2), 5, 0.02).unwrap();
    m.save_weights(&path).unwrap();
    let back = Model::<f64>::load_weights(&path).unwrap();
    let x = TokenSequence::new(vec![3, 1, 4, 1, 5]);
    assert_eq!(
        m.hidden_states(&x, 2, None).unwrap(),
        back.hidden_states(&x, 2, None).unwrap()
    );
}

/// For N(0, σ²), E|w| = σ·√(2/π) and Var|w| = σ²(1 − 2/π).
#[test]
fn gaussian_init_mean_abs_within_three_sigma() {
    let sigma = 0.02;
    let w = ModelWeights::<f64>::random_init(&ModelConfig::tiny(), 2024, sigma).unwrap();
    for (name, t) in w.named_tensors() {
        if name.ends_with("norm") {
            continue;
        }
        let n = t.len() as f64;
        let mean = t.data().iter().map(|v| v.abs()).sum::<f64>() / n;
        let expect = sigma * (2.0 / std::f64::consts::PI).sqrt();
        let sd = sigma * (1.0 - 2.0 / std::f64::consts::PI).sqrt() / n.sqrt();
        assert!(
            (mean - expect).abs() <= 3.0 * sd,
            "{name}: {mean} vs {expect} ± {}",
            3.0 * sd
        );
    }
}

#[test]
fn single_and_double_precision_agree() {
    let m = Model::<f64>::random(ModelConfig::tiny().with_layers(2), 6, 0.02).unwrap();
    let m32: pia_core::Model32 = m.cast();
    let x = TokenSequence::new(vec![9, 8, 7]);
    let a = m.hidden_states(&x, 2, None).unwrap();
    let b = m32.hidden_states(&x, 2, None).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - *q as f64).abs() < 1e-4 * (1.0 + p.abs()));
    }
}
