use pia_eval::{
    bleu, data_dir, keyword_recall, run_experiment, token_accuracy, write_outputs, Corpus, ExperimentConfig, Tokenizer,
    BOS_ID,
};
use proptest::prelude::*;

fn bundled(name: &str) -> Corpus {
    let d = data_dir();
    Corpus::load(
        &d.join(format!("{name}.txt")),
        Some(&d.join(format!("{name}.keywords.json"))),
    )
    .unwrap()
}

#[test]
fn bundled_corpora_load_with_keywords() {
    for name in ["airline", "clinic"] {
        let c = bundled(name);
        assert!(c.len() >= 50, "{name} has {} documents", c.len());
        let tok = Tokenizer::build(c.texts(), 64).unwrap();
        let with_keywords = (0..c.len())
            .filter(|&i| !c.prompt(i, &tok, 8).unwrap().keywords.is_empty())
            .count();
        assert!(
            with_keywords * 2 > c.len(),
            "{name}: {with_keywords} prompts keep a keyword"
        );
    }
}

#[test]
fn tokenizer_is_reproducible_and_round_trips() {
    let c = bundled("clinic");
    let a = Tokenizer::build(c.texts(), 64).unwrap();
    let b = Tokenizer::build(c.texts(), 64).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.json");
    a.save(&path).unwrap();
    let loaded = Tokenizer::load(&path).unwrap();
    let text = c.texts().next().unwrap();
    assert_eq!(loaded.encode(text), a.encode(text));
    let p = a.encode_prompt(text, 8);
    assert_eq!(p.ids()[0], BOS_ID);
    assert_eq!(p.len(), 9);
}

fn exhaustive_config(dir: &std::path::Path) -> ExperimentConfig {
    let data = data_dir();
    let json = serde_json::json!({
        "model": {"kind": "random", "seed": 4, "scales": {"embedding": 0.02, "position": 0.02, "layer": 0.15}},
        "corpus": data.join("airline.txt"),
        "keywords": data.join("airline.keywords.json"),
        "defenses": [{"mode": "none"}],
        "variants": [{"setting": "white_box", "optimizer": "exhaustive", "discretizer": "adaptive"}],
        "prompts": 2,
        "prompt_len": 10,
        "seed": 1
    });
    let path = dir.join("config.json");
    std::fs::write(&path, json.to_string()).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn exhaustive_experiment_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&exhaustive_config(dir.path())).unwrap();
    let agg = out.report.aggregate("none", "exhaustive").unwrap();
    assert_eq!(agg.prompts, 2);
    assert_eq!(agg.token_accuracy.as_ref().unwrap().mean, 1.0);
    assert_eq!(agg.bleu.as_ref().unwrap().mean, 1.0);
    for r in &out.report.results {
        assert_eq!(r.x_hat.as_deref(), Some(r.x.as_slice()));
        if let Some(k) = r.keyword_recall {
            assert_eq!(k, 1.0);
        }
    }
    let written = dir.path().join("out");
    write_outputs(&out, &written).unwrap();
    for f in [
        "report.json",
        "aggregates.csv",
        "results.csv",
        "report.md",
        "timings.json",
    ] {
        assert!(written.join(f).is_file(), "missing {f}");
    }
    let back: pia_eval::Report =
        serde_json::from_str(&std::fs::read_to_string(written.join("report.json")).unwrap()).unwrap();
    assert_eq!(back.results.len(), out.report.results.len());
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = exhaustive_config(dir.path());
    cfg.corpus = dir.path().join("missing.txt");
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = exhaustive_config(dir.path());
    cfg.variants.clear();
    assert!(run_experiment(&cfg).is_err());
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval(
        x in prop::collection::vec(0u32..6, 1..20),
        y in prop::collection::vec(0u32..6, 0..20),
    ) {
        let acc = token_accuracy(&x, &y).unwrap();
        let b = bleu(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&b));
        let spans: Vec<(usize, usize)> = (0..x.len()).step_by(3).map(|s| (s, 2.min(x.len() - s))).collect();
        let k = keyword_recall(&x, &y, &spans).unwrap();
        prop_assert!((0.0..=1.0).contains(&k));
    }

    #[test]
    fn identical_sequences_score_one(x in prop::collection::vec(0u32..50, 1..30)) {
        prop_assert_eq!(token_accuracy(&x, &x).unwrap(), 1.0);
        prop_assert!((bleu(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(keyword_recall(&x, &x, &[(0, 1)]), Some(1.0));
    }

    #[test]
    fn encoding_is_deterministic(words in prop::collection::vec("[a-c]{1,3}", 1..30)) {
        let text = words.join(" ");
        let a = Tokenizer::build([text.as_str()], 8).unwrap();
        let b = Tokenizer::build([text.as_str()], 8).unwrap();
        prop_assert_eq!(a.vocab(), b.vocab());
        let ids = a.encode(&text);
        prop_assert_eq!(ids.len(), words.len());
        prop_assert!(ids.iter().all(|&i| (i as usize) < a.len()));
    }
}
