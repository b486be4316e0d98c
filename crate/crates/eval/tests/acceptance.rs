//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any fails.
//!
//! Shared setup: the tiny model (|V|=64, h=32, d=8, 4 heads) initialised
//! with seed 1, embedding/position std 0.02 and layer std 0.15; four
//! participants with the attacker third, so it sees the activation after
//! layer 4.

use std::time::Instant;

use pia_attack::{
    adapter_loss, exhaustive_discretize, gradient_vanishing_probe, objective, Discretizer, Optimizer, ProbeConfig,
    Target,
};
use pia_core::model::{AdapterSet, InitScales, Model, ModelConfig, Projection, TokenSequence};
use pia_core::pipeline::{dequantize, quantize};
use pia_core::DefenseConfig;
use pia_core::{Graph, Tensor, Var};
use pia_eval::{
    data_dir, mean_nonlinearity, run_experiment, write_outputs, ExperimentConfig, InversionResult, ModelSource, Report,
    Variant, VictimAdapters,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCALES: InitScales = InitScales {
    embedding: 0.02,
    position: 0.02,
    layer: 0.15,
};

fn model() -> Model {
    Model::random_scaled(ModelConfig::tiny(), 1, SCALES).unwrap()
}

fn random_prompt(rng: &mut ChaCha8Rng, len: usize, vocab: u32) -> TokenSequence {
    TokenSequence::new((0..len).map(|_| rng.random_range(0..vocab)).collect())
}

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn base_config(corpus: &str, prompts: usize, seed: u64) -> ExperimentConfig {
    let data = data_dir();
    let mut cfg = ExperimentConfig::from_json(
        r#"{"model": {"kind": "random", "scales": {"embedding": 0, "position": 0, "layer": 0}},
            "corpus": "", "variants": [], "prompts": 1}"#,
    )
    .unwrap();
    cfg.model = ModelSource::Random {
        config: ModelConfig::tiny(),
        seed: 1,
        scales: SCALES,
    };
    cfg.corpus = data.join(format!("{corpus}.txt"));
    cfg.keywords = Some(data.join(format!("{corpus}.keywords.json")));
    cfg.participants = 4;
    cfg.attacker = Some(3);
    cfg.prompts = prompts;
    cfg.prompt_len = 8;
    cfg.seed = seed;
    cfg.attack.iterations = 500;
    cfg
}

fn rows<'r>(results: &'r [InversionResult], variant: &str, defense: &str) -> Vec<&'r InversionResult> {
    results
        .iter()
        .filter(|r| r.variant == variant && r.defense == defense)
        .collect()
}

fn mean_accuracy(results: &[InversionResult], variant: &str, defense: &str) -> f64 {
    let v: Vec<f64> = rows(results, variant, defense)
        .iter()
        .map(|r| r.token_accuracy.expect("attack succeeded"))
        .collect();
    assert!(!v.is_empty(), "no results for {variant} under {defense}");
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn exhaustive_exactness() -> Outcome {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let start = Instant::now();
    let mut misses = 0;
    let mut total = 0;
    for boundary in [2, 4, 6, 8] {
        let target = Target::new(&m, boundary).unwrap();
        for _ in 0..50 {
            let len = rng.random_range(8..=32);
            let x = random_prompt(&mut rng, len, 64);
            let a = target.forward_tokens(&x).unwrap();
            let got = exhaustive_discretize(&target, &a, None).unwrap();
            total += 1;
            misses += usize::from(got != x);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        misses == 0 && secs < 300.0,
        format!(
            "{} of {total} prompts recovered exactly at boundaries 2/4/6/8 in {secs:.1}s",
            total - misses
        ),
    )
}

fn causal_mask() -> Outcome {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let start = Instant::now();
    let mut checks = 0;
    let mut broken = 0;
    for _ in 0..20 {
        let x = random_prompt(&mut rng, 16, 64);
        let base = m.hidden_states(&x, 8, None).unwrap();
        for j in 0..x.len() {
            let mut ids = x.ids().to_vec();
            ids[j] = (ids[j] + 1 + rng.random_range(0..63)) % 64;
            let y = m.hidden_states(&TokenSequence::new(ids), 8, None).unwrap();
            for i in 0..j {
                checks += 1;
                broken += usize::from(base.row(i) != y.row(i));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        broken == 0 && secs < 60.0,
        format!("{checks} earlier rows compared, {broken} changed, {secs:.1}s"),
    )
}

fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

const EPS: f64 = 1e-5;

/// Largest entrywise `|analytic − numeric| / max|numeric|` over all inputs.
fn fd_error(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let numeric: Vec<f64> = (0..inputs[i].len())
            .map(|k| {
                let mut p = inputs.to_vec();
                p[i].data_mut()[k] += EPS;
                let mut q = inputs.to_vec();
                q[i].data_mut()[k] -= EPS;
                (eval(&p) - eval(&q)) / (2.0 * EPS)
            })
            .collect();
        worst = worst.max(relative(analytic.data(), &numeric));
    }
    worst
}

fn relative(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(1e-12f64, |m, x| m.max(x.abs()));
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn project(g: &mut Graph, x: Var, seed: u64) -> Var {
    let w = g.constant(uniform(g.value(x).shape(), seed));
    let p = g.mul(x, w).unwrap();
    g.sum(p).unwrap()
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let table = uniform(&[16, 6], 9);
    type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Var>);
    let cases: Vec<Case> = vec![
        (
            "matmul",
            vec![uniform(&[3, 4], 1), uniform(&[4, 5], 2)],
            Box::new(|g, v| {
                let y = g.matmul(v[0], v[1]).unwrap();
                project(g, y, 3)
            }),
        ),
        (
            "add/sub/mul",
            vec![uniform(&[3, 4], 4), uniform(&[3, 4], 5)],
            Box::new(|g, v| {
                let a = g.add(v[0], v[1]).unwrap();
                let s = g.sub(a, v[1]).unwrap();
                let m = g.mul(s, v[1]).unwrap();
                project(g, m, 6)
            }),
        ),
        (
            "scale/add_row",
            vec![uniform(&[3, 4], 7), uniform(&[4], 8)],
            Box::new(|g, v| {
                let s = g.scale(v[0], 1.7).unwrap();
                let r = g.add_row(s, v[1]).unwrap();
                project(g, r, 9)
            }),
        ),
        (
            "softmax",
            vec![uniform(&[3, 5], 10)],
            Box::new(|g, v| {
                let a = g.softmax(v[0], 1).unwrap();
                let b = g.softmax(a, 0).unwrap();
                project(g, b, 11)
            }),
        ),
        (
            "rmsnorm",
            vec![uniform(&[3, 6], 12), uniform(&[6], 13)],
            Box::new(|g, v| {
                let y = g.rmsnorm(v[0], v[1], 1e-6).unwrap();
                project(g, y, 14)
            }),
        ),
        (
            "gelu",
            vec![uniform(&[4, 5], 15)],
            Box::new(|g, v| {
                let y = g.gelu(v[0]).unwrap();
                project(g, y, 16)
            }),
        ),
        (
            "slice/concat/transpose",
            vec![uniform(&[4, 3], 17)],
            Box::new(|g, v| {
                let a = g.slice_rows(v[0], 1, 3).unwrap();
                let b = g.slice_rows(v[0], 0, 1).unwrap();
                let c = g.concat_rows(&[a, b, a]).unwrap();
                let t = g.transpose(c).unwrap();
                project(g, t, 18)
            }),
        ),
        (
            "embedding_lookup",
            vec![uniform(&[6, 4], 19)],
            Box::new(|g, v| {
                let y = g.embedding_lookup(v[0], &[2, 0, 2, 5]).unwrap();
                project(g, y, 20)
            }),
        ),
        (
            "l2_norm_sq",
            vec![uniform(&[3, 3], 21)],
            Box::new(|g, v| g.l2_norm_sq(v[0]).unwrap()),
        ),
        (
            "causal_attention",
            vec![uniform(&[5, 8], 22), uniform(&[5, 8], 23), uniform(&[5, 8], 24)],
            Box::new(|g, v| {
                let y = g.causal_attention(v[0], v[1], v[2], 2).unwrap();
                project(g, y, 25)
            }),
        ),
        (
            "nearest_row_dist_sq",
            vec![uniform(&[3, 6], 26)],
            Box::new(move |g, v| g.nearest_row_dist_sq(v[0], &table).unwrap()),
        ),
    ];
    let mut worst = (0.0f64, "");
    for (name, inputs, f) in &cases {
        let e = fd_error(inputs, f.as_ref());
        if e > worst.0 {
            worst = (e, name);
        }
    }

    // Constrained objective with respect to the token-space estimate.
    let m = Model::random_scaled(ModelConfig::tiny().with_layers(2), 3, SCALES).unwrap();
    let target = Target::new(&m, 2).unwrap();
    let x = TokenSequence::new(vec![0, 7, 19, 33]);
    let a = target.forward_tokens(&x).unwrap();
    let (lo, hi) = m.embedding_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let u = Tensor::new(
        vec![4, 32],
        (0..128)
            .map(|k| {
                let (l, h) = (lo.data()[k % 32], hi.data()[k % 32]);
                l + (h - l) * rng.random::<f64>()
            })
            .collect(),
    )
    .unwrap();
    let obj = |u: &Tensor| objective(&target, &a, u, 0.5, None).unwrap();
    let analytic = obj(&u).grad;
    let numeric: Vec<f64> = (0..u.len())
        .map(|k| {
            let mut p = u.clone();
            p.data_mut()[k] += EPS;
            let mut q = u.clone();
            q.data_mut()[k] -= EPS;
            (obj(&p).loss - obj(&q).loss) / (2.0 * EPS)
        })
        .collect();
    let e_obj = relative(analytic.data(), &numeric);

    // Adapter loss with respect to every factor.
    let truth = AdapterSet::random(
        m.config(),
        2,
        &[Projection::Query, Projection::Value],
        2,
        2.0,
        0.1,
        0.1,
        28,
    )
    .unwrap();
    let a_true = m.hidden_states(&x, 2, Some(&truth)).unwrap();
    let est = AdapterSet::random(
        m.config(),
        2,
        &[Projection::Query, Projection::Value],
        2,
        2.0,
        0.1,
        0.1,
        29,
    )
    .unwrap();
    let (_, grads) = adapter_loss(&m, 2, &x, &est, &a_true).unwrap();
    let loss_at = |s: &AdapterSet| adapter_loss(&m, 2, &x, s, &a_true).unwrap().0;
    let mut e_ad: f64 = 0.0;
    for (idx, (ga, gb)) in grads.iter().enumerate() {
        for (factor, g) in [(0, ga), (1, gb)] {
            let numeric: Vec<f64> = (0..g.len())
                .map(|k| {
                    let bump = |d: f64| {
                        let mut s = est.clone();
                        let (_, ad) = s.iter_mut().nth(idx).unwrap();
                        let t = if factor == 0 { &mut ad.a } else { &mut ad.b };
                        t.data_mut()[k] += d;
                        loss_at(&s)
                    };
                    (bump(EPS) - bump(-EPS)) / (2.0 * EPS)
                })
                .collect();
            e_ad = e_ad.max(relative(g.data(), &numeric));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.0.max(e_obj).max(e_ad);
    verdict(
        max < 1e-4 && secs < 120.0,
        format!(
            "max relative error: ops {:.2e} (worst {}), objective {e_obj:.2e}, adapter loss {e_ad:.2e}; {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

fn vanishing_probe() -> Outcome {
    let m = model();
    let start = Instant::now();
    let r = gradient_vanishing_probe(
        &m,
        &ProbeConfig {
            trials: 1000,
            sigma: 0.02,
            prompt_len: 8,
            boundary: 4,
            seed: 0,
        },
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        r.violation_rate <= 0.01 && secs < 120.0,
        format!(
            "{} of {} trials violate the bound; median |dL/dz| {:.3e} vs |dL/dv| {:.3e}; {secs:.1}s",
            r.violations, r.trials, r.median_abs_dz, r.median_abs_dv
        ),
    )
}

/// The ablation run shared by the ordering, baseline and geometry checks:
/// 50 prompts from each bundled corpus, no semantic oracle so the two
/// ablated components are measured in isolation.
fn ablation_runs() -> Vec<InversionResult> {
    let mut all = Vec::new();
    for corpus in ["airline", "clinic"] {
        let mut cfg = base_config(corpus, 50, 7);
        cfg.oracle = false;
        cfg.attack.top_y = 0;
        cfg.variants = vec![
            Variant::white(Optimizer::Naive, Discretizer::Naive),
            Variant::white(Optimizer::Constrained, Discretizer::Naive),
            Variant::white(Optimizer::Naive, Discretizer::Adaptive),
            Variant::white(Optimizer::Constrained, Discretizer::Adaptive),
            Variant::white(Optimizer::Softmax, Discretizer::Naive),
        ];
        all.extend(run_experiment(&cfg).unwrap().report.results);
    }
    assert!(all.iter().all(|r| r.error.is_none()));
    all
}

fn ablation_ordering(results: &[InversionResult]) -> Outcome {
    let acc = |v| mean_accuracy(results, v, "none");
    let (nn, cn, na, ca) = (
        acc("naive+naive"),
        acc("constrained+naive"),
        acc("naive+adaptive"),
        acc("constrained+adaptive"),
    );
    let prompts = rows(results, "constrained+adaptive", "none").len();
    verdict(
        prompts >= 30 && nn < cn && na < ca && ca > nn.max(cn).max(na),
        format!("{prompts} prompts: naive+naive {nn:.4}, constrained+naive {cn:.4}, naive+adaptive {na:.4}, constrained+adaptive {ca:.4}"),
    )
}

fn baseline_gap(results: &[InversionResult]) -> Outcome {
    let ca = mean_accuracy(results, "constrained+adaptive", "none");
    let sm = mean_accuracy(results, "softmax+naive", "none");
    verdict(
        ca - sm >= 0.20,
        format!(
            "constrained+adaptive {ca:.4} vs softmax relaxation {sm:.4}: gap {:.1} points",
            100.0 * (ca - sm)
        ),
    )
}

fn constraint_geometry(results: &[InversionResult]) -> Outcome {
    let dist = |v| -> Vec<f64> {
        rows(results, v, "none")
            .iter()
            .map(|r| r.embedding_error.unwrap())
            .collect()
    };
    let (c, n) = (dist("constrained+naive"), dist("naive+naive"));
    let below = c.iter().zip(&n).filter(|(a, b)| a < b).count();
    let restarts = c.len();
    let ratio = median(c) / median(n);
    verdict(
        restarts >= 100 && ratio < 0.5,
        format!("{restarts} restarts: median distance ratio {ratio:.3}; constrained closer in {below}"),
    )
}

fn defense_monotonicity() -> Outcome {
    let mut cfg = base_config("clinic", 20, 3);
    cfg.defenses = vec![
        DefenseConfig::none(),
        DefenseConfig::gaussian(0.1, 0),
        DefenseConfig::gaussian(0.5, 0),
        DefenseConfig::gaussian(1.0, 0),
        DefenseConfig::quantize(8),
        DefenseConfig::quantize(4),
    ];
    cfg.variants = vec![
        Variant::white(Optimizer::Exhaustive, Discretizer::Adaptive),
        Variant::white(Optimizer::Constrained, Discretizer::Adaptive),
    ];
    let report = run_experiment(&cfg).unwrap().report;
    let series = |variant: &str, labels: &[&str]| -> Vec<f64> {
        labels
            .iter()
            .map(|l| mean_accuracy(&report.results, variant, l))
            .collect()
    };
    let noise = ["none", "gaussian(0.1)", "gaussian(0.5)", "gaussian(1)"];
    let bits = ["none", "quantize(8)", "quantize(4)"];
    let non_increasing = |s: &[f64]| s.windows(2).all(|w| w[1] <= w[0]);
    let (en, eb) = (series("exhaustive", &noise), series("exhaustive", &bits));
    let (cn, cb) = (
        series("constrained+adaptive", &noise),
        series("constrained+adaptive", &bits),
    );

    // Round-trip bound on real activations.
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a = m.hidden_states(&random_prompt(&mut rng, 12, 64), 4, None).unwrap();
        for b in [8, 4] {
            let q = quantize(&a, b).unwrap();
            let back = dequantize(&q);
            let ulp = f64::EPSILON * a.max_abs();
            for (x, y) in a.data().iter().zip(back.data()) {
                worst = worst.max((x - y).abs() - (q.scale / 2.0 + 4.0 * ulp));
            }
        }
    }
    let fmt = |s: &[f64]| s.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" / ");
    verdict(
        non_increasing(&en) && non_increasing(&eb) && worst <= 0.0,
        format!(
            "calibration attack over sigma 0/0.1/0.5/1: {}; bits inf/8/4: {}; round trip within scale/2: {}. \
             (constrained+adaptive, not gated: {} and {})",
            fmt(&en),
            fmt(&eb),
            worst <= 0.0,
            fmt(&cn),
            fmt(&cb)
        ),
    )
}

fn greybox_parity() -> Outcome {
    let mut cfg = base_config("airline", 20, 5);
    cfg.adapters = Some(VictimAdapters {
        rank: 2,
        wrapped: vec![Projection::Query, Projection::Value],
        alpha: 2.0,
        a_std: 0.1,
        b_std: 0.1,
        seed: 99,
    });
    cfg.greybox.rounds = 5;
    cfg.variants = vec![
        Variant::white(Optimizer::Constrained, Discretizer::Adaptive),
        Variant::GreyBox,
    ];
    let report = run_experiment(&cfg).unwrap().report;
    let white = mean_accuracy(&report.results, "constrained+adaptive", "none");
    let grey = mean_accuracy(&report.results, "greybox", "none");
    let grey_rows = rows(&report.results, "greybox", "none");
    let decreasing = grey_rows
        .iter()
        .filter(|r| {
            let h = r.loss_history.as_ref().unwrap();
            h.len() == 5 && h.windows(2).all(|w| w[1] < w[0])
        })
        .count();
    verdict(
        grey >= white - 0.10 && decreasing == grey_rows.len(),
        format!(
            "white-box {white:.4}, grey-box {grey:.4}; loss strictly decreasing over 5 rounds in {decreasing} of {} prompts",
            grey_rows.len()
        ),
    )
}

fn candidate_statistics() -> Outcome {
    let mut cfg = base_config("clinic", 30, 7);
    cfg.variants = vec![Variant::white(Optimizer::Constrained, Discretizer::Adaptive)];
    let report = run_experiment(&cfg).unwrap().report;
    let c = report
        .aggregate("none", "constrained+adaptive")
        .and_then(|a| a.candidates)
        .expect("adaptive runs report candidate statistics");
    let p = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.4}"));
    verdict(
        c.chosen_given_union.is_some_and(|v| v > 0.95),
        format!(
            "P(truth in S_e) {}, P(truth in S_s) {}, P(truth in union) {}, P(chosen | truth in union) {}",
            p(c.truth_in_embedding),
            p(c.truth_in_semantic),
            p(c.truth_in_union),
            p(c.chosen_given_union)
        ),
    )
}

fn nonlinearity_trend() -> Outcome {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let prompts: Vec<TokenSequence> = (0..20)
        .map(|_| {
            let mut ids = vec![0];
            ids.extend(random_prompt(&mut rng, 8, 64).ids());
            TokenSequence::new(ids)
        })
        .collect();
    let ks = [2.0, 3.0, 4.0, 5.0];
    let cells = mean_nonlinearity(&m, &prompts, 0.1, &ks, &[1, 8], 0).unwrap();
    let (shallow, deep) = cells.split_at(ks.len());
    let ok = shallow
        .iter()
        .zip(deep)
        .all(|(s, d)| d.cosine.unwrap() <= s.cosine.unwrap());
    let fmt = |c: &[pia_eval::ProbeCell]| {
        c.iter()
            .map(|c| format!("{:.4}", c.cosine.unwrap()))
            .collect::<Vec<_>>()
            .join("/")
    };
    verdict(
        ok,
        format!(
            "mean cosine for k=2/3/4/5 at depth 1: {}; at depth 8: {}",
            fmt(shallow),
            fmt(deep)
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config("airline", 4, 11);
    cfg.attack.iterations = 60;
    cfg.greybox.rounds = 2;
    cfg.defenses = vec![DefenseConfig::none(), DefenseConfig::gaussian(0.5, 3)];
    cfg.variants = vec![
        Variant::white(Optimizer::Constrained, Discretizer::Adaptive),
        Variant::white(Optimizer::Naive, Discretizer::Naive),
        Variant::white(Optimizer::Softmax, Discretizer::Naive),
        Variant::white(Optimizer::Exhaustive, Discretizer::Adaptive),
        Variant::GreyBox,
    ];
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let mut bytes = Vec::new();
    for (run, threads) in [(0, None), (1, Some(2))] {
        let mut c = ExperimentConfig::load(&path).unwrap();
        c.threads = threads;
        let out = run_experiment(&c).unwrap();
        let d = dir.path().join(format!("run{run}"));
        write_outputs(&out, &d).unwrap();
        bytes.push(std::fs::read(d.join("report.json")).unwrap());
    }
    let parsed: Report = serde_json::from_slice(&bytes[0]).unwrap();
    verdict(
        bytes[0] == bytes[1],
        format!(
            "two runs ({} results, one single-threaded) wrote {} and {} byte reports, identical: {}",
            parsed.results.len(),
            bytes[0].len(),
            bytes[1].len(),
            bytes[0] == bytes[1]
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag} {name}: {detail}");
    };
    report(1, "exhaustive exactness", exhaustive_exactness());
    report(2, "causal mask", causal_mask());
    report(3, "gradient correctness", gradient_checks());
    report(4, "vanishing-gradient bound", vanishing_probe());
    let ablation = ablation_runs();
    report(5, "ablation ordering", ablation_ordering(&ablation));
    report(6, "baseline gap", baseline_gap(&ablation));
    report(7, "constraint geometry", constraint_geometry(&ablation));
    report(8, "defense monotonicity", defense_monotonicity());
    report(9, "grey-box parity", greybox_parity());
    report(10, "candidate-set statistics", candidate_statistics());
    report(11, "non-linearity trend", nonlinearity_trend());
    report(12, "determinism", determinism());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 12 acceptance criteria passed");
}
