//! End-to-end experiments: sample prompts, run the pipeline under each
//! defense, attack the recorded activation, score the recovery.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pia_attack::{
    alternating_invert, invert_many, AttackConfig, AttackOutcome, BigramOracle, Diagnostics, Discretizer,
    GreyboxConfig, NextTokenScorer, Optimizer, Target,
};
use pia_core::model::{AdapterSet, InitScales, Model, ModelConfig, Projection, TokenSequence};
use pia_core::pipeline::{plan_partition, Pipeline};
use pia_core::{DefenseConfig, PartitionPlan};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Prompt};
use crate::error::EvalError;
use crate::metrics::{bleu, keyword_recall, token_accuracy};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    /// A weight file written by `Model::save_weights`.
    File { path: PathBuf },
    /// A seeded Gaussian initialisation.
    Random {
        #[serde(default = "ModelConfig::tiny")]
        config: ModelConfig,
        #[serde(default)]
        seed: u64,
        scales: InitScales,
    },
}

impl ModelSource {
    pub fn load(&self) -> Result<Model, EvalError> {
        Ok(match self {
            Self::File { path } => Model::load_weights(path)?,
            Self::Random { config, seed, scales } => Model::random_scaled(config.clone(), *seed, *scales)?,
        })
    }
}

/// LoRA adapters the victim fine-tuned into every layer. White-box
/// variants are given these; the grey-box variant has to estimate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimAdapters {
    pub rank: usize,
    pub wrapped: Vec<Projection>,
    pub alpha: f64,
    pub a_std: f64,
    pub b_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl VictimAdapters {
    pub fn build(&self, cfg: &ModelConfig) -> Result<AdapterSet, EvalError> {
        Ok(AdapterSet::random(
            cfg,
            cfg.layers,
            &self.wrapped,
            self.rank,
            self.alpha,
            self.a_std,
            self.b_std,
            self.seed,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "snake_case")]
pub enum Variant {
    WhiteBox {
        optimizer: Optimizer,
        discretizer: Discretizer,
    },
    GreyBox,
}

impl Variant {
    pub fn white(optimizer: Optimizer, discretizer: Discretizer) -> Self {
        Self::WhiteBox { optimizer, discretizer }
    }

    pub fn name(&self) -> String {
        match self {
            Self::WhiteBox {
                optimizer: Optimizer::Exhaustive,
                ..
            } => "exhaustive".into(),
            Self::WhiteBox { optimizer, discretizer } => format!("{}+{}", optimizer.name(), discretizer.name()),
            Self::GreyBox => "greybox".into(),
        }
    }
}

fn default_participants() -> usize {
    4
}

fn default_defenses() -> Vec<DefenseConfig> {
    vec![DefenseConfig::none()]
}

fn default_true() -> bool {
    true
}

fn default_prompt_len() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub adapters: Option<VictimAdapters>,
    pub corpus: PathBuf,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
    #[serde(default = "default_participants")]
    pub participants: usize,
    /// 1-based attacker position; the last participant when absent.
    #[serde(default)]
    pub attacker: Option<usize>,
    /// Each entry is applied by every sender; one result set per entry.
    #[serde(default = "default_defenses")]
    pub defenses: Vec<DefenseConfig>,
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Grey-box settings; its `whitebox` field is replaced by `attack`.
    #[serde(default)]
    pub greybox: GreyboxConfig,
    /// Train a bigram oracle on the documents not sampled as prompts.
    #[serde(default = "default_true")]
    pub oracle: bool,
    pub prompts: usize,
    /// Words kept per prompt, after `<bos>`.
    #[serde(default = "default_prompt_len")]
    pub prompt_len: usize,
    /// Seeds the prompt sample.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses rayon's default. Never affects results.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let s = std::fs::read_to_string(path).map_err(EvalError::io(path))?;
        let mut cfg = Self::from_json(&s)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.corpus);
        if let Some(k) = cfg.keywords.as_mut() {
            fix(k);
        }
        if let ModelSource::File { path } = &mut cfg.model {
            fix(path);
        }
        if let Some(o) = cfg.output_dir.as_mut() {
            fix(o);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.variants.is_empty() {
            return Err(EvalError::Empty("variants"));
        }
        if self.defenses.is_empty() {
            return Err(EvalError::Empty("defenses"));
        }
        if self.prompts == 0 || self.prompt_len == 0 {
            return Err(EvalError::Config("prompts and prompt_len must be >= 1".into()));
        }
        self.attack.validate()?;
        for d in &self.defenses {
            d.validate()?;
        }
        let mut paths = vec![&self.corpus];
        paths.extend(self.keywords.as_ref());
        if let ModelSource::File { path } = &self.model {
            paths.push(path);
        }
        if let Some(p) = paths.into_iter().find(|p| !p.exists()) {
            return Err(EvalError::Config(format!("{} does not exist", p.display())));
        }
        Ok(())
    }

    /// Layer count, when known without loading a weight file.
    pub fn model_layers(&self) -> Option<usize> {
        match &self.model {
            ModelSource::Random { config, .. } => Some(config.layers),
            ModelSource::File { .. } => None,
        }
    }

    pub fn partition(&self, layers: usize) -> Result<PartitionPlan, EvalError> {
        let plan = plan_partition(layers, self.participants)?;
        Ok(match self.attacker {
            Some(a) => plan.with_attacker(a)?,
            None => plan,
        })
    }
}

/// Truth-membership counts over adaptive-discretization positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCounts {
    pub positions: usize,
    pub in_embedding: usize,
    pub in_semantic: usize,
    pub in_union: usize,
    /// Positions where the truth was in the union and was chosen.
    pub chosen_in_union: usize,
}

impl CandidateCounts {
    pub fn from_diagnostics(d: &Diagnostics) -> Self {
        let mut c = Self::default();
        for p in &d.positions {
            let Some(in_union) = p.truth_in_union else { continue };
            c.positions += 1;
            c.in_embedding += usize::from(p.truth_in_embedding == Some(true));
            c.in_semantic += usize::from(p.truth_in_semantic == Some(true));
            c.in_union += usize::from(in_union);
            c.chosen_in_union += usize::from(in_union && p.chose_truth() == Some(true));
        }
        c
    }

    pub fn merge(&mut self, o: &Self) {
        self.positions += o.positions;
        self.in_embedding += o.in_embedding;
        self.in_semantic += o.in_semantic;
        self.in_union += o.in_union;
        self.chosen_in_union += o.chosen_in_union;
    }

    /// `P(truth ∈ S_e)`, `P(truth ∈ S_s)`, `P(truth ∈ S_e ∪ S_s)` and
    /// `P(chosen | truth ∈ union)`.
    pub fn rates(&self) -> CandidateRates {
        let f = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        CandidateRates {
            truth_in_embedding: f(self.in_embedding, self.positions),
            truth_in_semantic: f(self.in_semantic, self.positions),
            truth_in_union: f(self.in_union, self.positions),
            chosen_given_union: f(self.chosen_in_union, self.in_union),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRates {
    pub truth_in_embedding: Option<f64>,
    pub truth_in_semantic: Option<f64>,
    pub truth_in_union: Option<f64>,
    pub chosen_given_union: Option<f64>,
}

/// One attack on one prompt under one defense. Metrics skip the `<bos>`
/// position when the attack assumes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub prompt_id: String,
    pub document: usize,
    pub defense: String,
    pub variant: String,
    pub x: Vec<u32>,
    pub x_hat: Option<Vec<u32>>,
    pub token_accuracy: Option<f64>,
    pub bleu: Option<f64>,
    pub keyword_recall: Option<f64>,
    /// `‖A' − A‖ / ‖A‖` at the attacker's input.
    pub distortion: Option<f64>,
    /// `‖û − E(x)‖₂` for variants that produce a continuous estimate.
    pub embedding_error: Option<f64>,
    /// Grey-box activation loss after each round.
    pub loss_history: Option<Vec<f64>>,
    pub candidates: Option<CandidateCounts>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub defense: String,
    pub variant: String,
    pub prompts: usize,
    pub errors: usize,
    pub token_accuracy: Option<Summary>,
    pub bleu: Option<Summary>,
    pub keyword_recall: Option<Summary>,
    pub distortion: Option<Summary>,
    pub embedding_error: Option<Summary>,
    pub candidates: Option<CandidateRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub boundary: usize,
    pub vocab_size: usize,
    pub results: Vec<InversionResult>,
    pub aggregates: Vec<Aggregate>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn aggregate(&self, defense: &str, variant: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.defense == defense && a.variant == variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTiming {
    pub prompt_id: String,
    pub seconds: f64,
}

/// The deterministic report plus wall-clock timings, kept apart so the
/// report stays byte-identical across runs.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: Report,
    pub timings: Vec<PromptTiming>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a Model,
    adapters: Option<&'a AdapterSet>,
    plan: &'a PartitionPlan,
    boundary: usize,
    oracle: Option<&'a BigramOracle>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, EvalError> {
    cfg.validate()?;
    let model = cfg.model.load()?;
    let corpus = Corpus::load(&cfg.corpus, cfg.keywords.as_deref())?;
    let tokenizer = Tokenizer::build(corpus.texts(), model.vocab_size())?;
    let plan = cfg.partition(model.num_layers())?;
    let boundary = plan
        .attacker_boundary()
        .ok_or_else(|| EvalError::Config("partition has no attacker".into()))?;
    let adapters = cfg.adapters.as_ref().map(|a| a.build(model.config())).transpose()?;

    let indices = corpus.sample_indices(cfg.prompts, cfg.seed)?;
    let prompts = indices
        .iter()
        .map(|&i| corpus.prompt(i, &tokenizer, cfg.prompt_len))
        .collect::<Result<Vec<_>, _>>()?;
    let oracle = cfg.oracle.then(|| {
        let held_out: Vec<Vec<u32>> = (0..corpus.len())
            .filter(|i| !indices.contains(i))
            .map(|i| {
                tokenizer
                    .encode_prompt(&corpus.documents[i].text, usize::MAX)
                    .ids()
                    .to_vec()
            })
            .collect();
        BigramOracle::train(model.vocab_size(), held_out.iter().map(Vec::as_slice))
    });

    let ctx = Context {
        cfg,
        model: &model,
        adapters: adapters.as_ref(),
        plan: &plan,
        boundary,
        oracle: oracle.as_ref(),
    };
    log::info!(
        "{} prompts x {} defenses x {} variants, attacker sees layer {boundary}",
        prompts.len(),
        cfg.defenses.len(),
        cfg.variants.len()
    );
    let work = |(ordinal, p): (usize, &Prompt)| {
        let start = Instant::now();
        let results = run_prompt(&ctx, ordinal as u64, p);
        let timing = PromptTiming {
            prompt_id: p.id.clone(),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("{} done in {:.2}s", p.id, timing.seconds);
        (results, timing)
    };
    let per_prompt: Vec<_> = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| EvalError::Config(e.to_string()))?
            .install(|| prompts.par_iter().enumerate().map(work).collect()),
        None => prompts.par_iter().enumerate().map(work).collect(),
    };
    let (nested, timings): (Vec<_>, Vec<_>) = per_prompt.into_iter().unzip();
    let results: Vec<InversionResult> = nested.into_iter().flatten().collect();
    for r in results.iter().filter(|r| r.error.is_some()) {
        log::warn!(
            "{} [{} / {}] failed: {}",
            r.prompt_id,
            r.defense,
            r.variant,
            r.error.as_deref().unwrap_or("")
        );
    }
    let aggregates = aggregate(cfg, &results);
    Ok(ExperimentOutput {
        report: Report {
            config: cfg.clone(),
            boundary,
            vocab_size: model.vocab_size(),
            results,
            aggregates,
        },
        timings,
    })
}

/// Writes `report.json`, `aggregates.csv`, `results.csv`, `report.md` and
/// `timings.json` into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(EvalError::io(dir))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(EvalError::io(p))
    };
    write("report.json", out.report.to_json())?;
    write("aggregates.csv", crate::report::aggregates_csv(&out.report)?)?;
    write("results.csv", crate::report::results_csv(&out.report)?)?;
    write("report.md", crate::report::markdown(&out.report))?;
    write("timings.json", serde_json::to_string_pretty(&out.timings)? + "\n")?;
    Ok(())
}

fn aggregate(cfg: &ExperimentConfig, results: &[InversionResult]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for d in &cfg.defenses {
        for v in &cfg.variants {
            let (defense, variant) = (d.label(), v.name());
            let rows: Vec<_> = results
                .iter()
                .filter(|r| r.defense == defense && r.variant == variant)
                .collect();
            let ok: Vec<_> = rows.iter().filter(|r| r.error.is_none()).collect();
            let collect =
                |f: &dyn Fn(&InversionResult) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let candidates = ok
                .iter()
                .filter_map(|r| r.candidates)
                .fold(None, |acc: Option<CandidateCounts>, c| {
                    let mut acc = acc.unwrap_or_default();
                    acc.merge(&c);
                    Some(acc)
                });
            out.push(Aggregate {
                prompts: rows.len(),
                errors: rows.len() - ok.len(),
                token_accuracy: Summary::of(&collect(&|r| r.token_accuracy)),
                bleu: Summary::of(&collect(&|r| r.bleu)),
                keyword_recall: Summary::of(&collect(&|r| r.keyword_recall)),
                distortion: Summary::of(&collect(&|r| r.distortion)),
                embedding_error: Summary::of(&collect(&|r| r.embedding_error)),
                candidates: candidates.map(|c| c.rates()),
                defense,
                variant,
            });
        }
    }
    out
}

fn seeded_defense(d: &DefenseConfig, ordinal: u64) -> DefenseConfig {
    DefenseConfig {
        seed: d.seed.wrapping_add(ordinal),
        ..*d
    }
}

fn run_prompt(ctx: &Context<'_>, ordinal: u64, prompt: &Prompt) -> Vec<InversionResult> {
    let cfg = ctx.cfg;
    let mut out = Vec::new();
    for d in &cfg.defenses {
        let blank = |variant: String| InversionResult {
            prompt_id: prompt.id.clone(),
            document: prompt.document,
            defense: d.label(),
            variant,
            x: prompt.tokens.ids().to_vec(),
            x_hat: None,
            token_accuracy: None,
            bleu: None,
            keyword_recall: None,
            distortion: None,
            embedding_error: None,
            loss_history: None,
            candidates: None,
            error: None,
        };
        let record = Pipeline::new(ctx.model, ctx.plan.clone(), &[seeded_defense(d, ordinal)])
            .map(|p| match ctx.adapters {
                Some(a) => p.with_adapters(a),
                None => p,
            })
            .and_then(|p| p.run(&prompt.tokens, &prompt.id))
            .map(|t| t.attacker_record.expect("plan has an attacker"));
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.extend(cfg.variants.iter().map(|v| InversionResult {
                    error: Some(e.to_string()),
                    ..blank(v.name())
                }));
                continue;
            }
        };
        let a = &record.activation;
        let attack = AttackConfig {
            seed: cfg.attack.seed.wrapping_add(ordinal),
            ..cfg.attack.clone()
        };
        let oracle = ctx.oracle.map(|o| o as &dyn NextTokenScorer);
        let mut target = Target {
            model: ctx.model,
            boundary: ctx.boundary,
            adapters: None,
        };
        if let Some(ad) = ctx.adapters {
            target = target.with_adapters(ad);
        }

        // Optimize once per optimizer, discretize once per requested discretizer.
        let mut groups: BTreeMap<Optimizer, Vec<Discretizer>> = BTreeMap::new();
        for v in &cfg.variants {
            if let Variant::WhiteBox { optimizer, discretizer } = *v {
                let g = groups.entry(optimizer).or_default();
                if !g.contains(&discretizer) {
                    g.push(discretizer);
                }
            }
        }
        let mut outcomes: BTreeMap<(Optimizer, Discretizer), Result<AttackOutcome, String>> = BTreeMap::new();
        for (opt, discs) in &groups {
            match invert_many(&target, a, *opt, discs, &attack, oracle, Some(&prompt.tokens)) {
                Ok(res) => {
                    for (dz, r) in discs.iter().zip(res) {
                        outcomes.insert((*opt, *dz), Ok(r));
                    }
                }
                Err(e) => {
                    for dz in discs {
                        outcomes.insert((*opt, *dz), Err(e.to_string()));
                    }
                }
            }
        }

        for v in &cfg.variants {
            let base = InversionResult {
                distortion: Some(record.distortion),
                ..blank(v.name())
            };
            let scored = match v {
                Variant::WhiteBox { optimizer, discretizer } => match &outcomes[&(*optimizer, *discretizer)] {
                    Ok(o) => score(prompt, &attack, &o.tokens, base).map(|mut r| {
                        r.embedding_error = o
                            .embedding
                            .as_ref()
                            .and_then(|u| embedding_error(ctx.model, u, &prompt.tokens));
                        r.candidates = o.diagnostics.as_ref().map(CandidateCounts::from_diagnostics);
                        r
                    }),
                    Err(e) => Err(e.clone()),
                },
                Variant::GreyBox => alternating_invert(
                    ctx.model,
                    a,
                    ctx.boundary,
                    oracle,
                    &GreyboxConfig {
                        whitebox: attack.clone(),
                        ..cfg.greybox.clone()
                    },
                    Some(&prompt.tokens),
                )
                .map_err(|e| e.to_string())
                .and_then(|s| {
                    let mut r = score(prompt, &attack, &s.tokens, base)?;
                    r.loss_history = Some(s.loss_history);
                    Ok(r)
                }),
            };
            out.push(scored.unwrap_or_else(|e| InversionResult {
                error: Some(e),
                ..blank(v.name())
            }));
        }
    }
    out
}

fn score(
    prompt: &Prompt,
    attack: &AttackConfig,
    x_hat: &TokenSequence,
    base: InversionResult,
) -> Result<InversionResult, String> {
    let skip = usize::from(attack.bos.is_some());
    let x = prompt.tokens.ids();
    let h = x_hat.ids();
    let (xs, hs) = (&x[skip.min(x.len())..], &h[skip.min(h.len())..]);
    let acc = token_accuracy(xs, hs).map_err(|e| e.to_string())?;
    let b = bleu(xs, hs).map_err(|e| e.to_string())?;
    let kws: Vec<(usize, usize)> = prompt
        .keywords
        .iter()
        .filter(|&&(s, _)| s >= skip)
        .map(|&(s, l)| (s - skip, l))
        .collect();
    Ok(InversionResult {
        x_hat: Some(h.to_vec()),
        token_accuracy: Some(acc),
        bleu: Some(b),
        keyword_recall: keyword_recall(xs, hs, &kws),
        ..base
    })
}

/// `‖u − E(x)‖₂` over all rows, in token space.
pub fn embedding_error(model: &Model, u: &pia_core::Tensor<f64>, x: &TokenSequence) -> Option<f64> {
    let e = model.token_embeddings(x).ok()?;
    Some(u.sub(&e).ok()?.l2_norm_sq().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_and_json() {
        let v = Variant::white(Optimizer::Constrained, Discretizer::Adaptive);
        assert_eq!(v.name(), "constrained+adaptive");
        assert_eq!(
            Variant::white(Optimizer::Exhaustive, Discretizer::Naive).name(),
            "exhaustive"
        );
        let j = serde_json::to_string(&v).unwrap();
        assert_eq!(
            j,
            r#"{"setting":"white_box","optimizer":"constrained","discretizer":"adaptive"}"#
        );
        let g: Variant = serde_json::from_str(r#"{"setting":"grey_box"}"#).unwrap();
        assert_eq!(g, Variant::GreyBox);
    }

    #[test]
    fn candidate_counts_rates() {
        let c = CandidateCounts {
            positions: 10,
            in_embedding: 8,
            in_semantic: 5,
            in_union: 9,
            chosen_in_union: 9,
        };
        let r = c.rates();
        assert_eq!(r.truth_in_embedding, Some(0.8));
        assert_eq!(r.chosen_given_union, Some(1.0));
        assert_eq!(CandidateCounts::default().rates().truth_in_union, None);
    }

    #[test]
    fn summary_is_population_statistics() {
        let s = Summary::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (2.0, 1.0, 2));
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"model": {"kind": "random", "scales": {"embedding": 0.02, "position": 0.02, "layer": 0.1}},
                "corpus": "c.txt", "variants": [{"setting": "grey_box"}], "prompts": 3}"#,
        )
        .unwrap();
        assert_eq!(c.participants, 4);
        assert_eq!(c.prompt_len, 32);
        assert!(c.oracle);
        assert_eq!(c.defenses, vec![DefenseConfig::none()]);
        assert!(matches!(c.validate(), Err(EvalError::Config(_))));
    }
}
