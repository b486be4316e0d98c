use pia_core::model::{Model, ModelConfig, TokenSequence};
use pia_core::pipeline::{apply_gaussian, plan_partition, quantize, run_inference, DefenseConfig};
use pia_core::{ActivationRecord, Tensor};

fn model() -> Model {
    Model::random(ModelConfig::tiny().with_layers(6), 3, 0.1).unwrap()
}

#[test]
fn attacker_record_ignores_downstream_participants() {
    let m = model();
    let x = TokenSequence::new(vec![0, 12, 4, 60]);
    let plan = plan_partition(6, 3).unwrap().with_attacker(2).unwrap();
    let quiet = [
        DefenseConfig::gaussian(0.1, 1),
        DefenseConfig::none(),
        DefenseConfig::none(),
    ];
    let loud = [
        DefenseConfig::gaussian(0.1, 1),
        DefenseConfig::quantize(4),
        DefenseConfig::gaussian(5.0, 2),
    ];
    let a = run_inference(&m, &x, &plan, &quiet, "p").unwrap();
    let b = run_inference(&m, &x, &plan, &loud, "p").unwrap();
    assert_eq!(a.attacker_record, b.attacker_record);
    assert_ne!(a.output, b.output);
}

#[test]
fn prompt_length_comes_from_activation() {
    let m = model();
    for len in 1..6 {
        let x = TokenSequence::new((0..len as u32).collect());
        let trace = run_inference(&m, &x, &plan_partition(6, 3).unwrap(), &[], "p").unwrap();
        let rec: ActivationRecord = trace.attacker_record.unwrap();
        assert_eq!(rec.prompt_len(), len);
        assert_eq!(rec.activation.cols(), 32);
    }
}

#[test]
fn gaussian_noise_has_requested_moments() {
    let n = 20_000;
    let a = Tensor::<f64>::zeros(&[n]);
    let sigma = 0.7;
    let e = apply_gaussian(&a, sigma, 99).unwrap();
    let mean = e.sum() / n as f64;
    let var = e.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    // Standard errors: σ/√n for the mean, σ²·√(2/(n−1)) for the variance.
    assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt());
    assert!((var - sigma * sigma).abs() < 4.0 * sigma * sigma * (2.0 / (n as f64 - 1.0)).sqrt());
}

#[test]
fn noise_scales_linearly_with_sigma() {
    let a = Tensor::<f64>::zeros(&[4, 4]);
    let small = apply_gaussian(&a, 0.1, 5).unwrap();
    let big = apply_gaussian(&a, 0.4, 5).unwrap();
    for (s, b) in small.data().iter().zip(big.data()) {
        assert!((4.0 * s - b).abs() < 1e-12);
    }
}

#[test]
fn quantized_record_bound_on_real_activation() {
    let m = model();
    let x = TokenSequence::new(vec![5, 6, 7, 8, 9, 10]);
    let a = m.hidden_states(&x, 4, None).unwrap();
    let q = quantize(&a, 8).unwrap();
    assert_eq!(q.scale, a.max_abs() / 127.0);
    let trace = run_inference(
        &m,
        &x,
        &plan_partition(6, 3).unwrap(),
        &[DefenseConfig::quantize(8)],
        "p",
    )
    .unwrap();
    let rec = trace.attacker_record.unwrap();
    assert!(rec.distortion > 0.0 && rec.distortion < 0.05, "{}", rec.distortion);
}
