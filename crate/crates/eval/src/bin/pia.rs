use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pia_attack::{
    alternating_invert, gradient_vanishing_probe, invert, AttackConfig, BigramOracle, Discretizer, GreyboxConfig,
    NextTokenScorer, Optimizer, ProbeConfig, Target,
};
use pia_core::model::{InitScales, Model, ModelConfig, Projection, TokenSequence};
use pia_core::pipeline::{plan_partition, Defense, Pipeline};
use pia_core::{ActivationRecord, DefenseConfig};
use pia_eval::{mean_nonlinearity, run_experiment, write_outputs, Corpus, ExperimentConfig, Report, Tokenizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "pia",
    version,
    about = "Prompt inversion against split transformer inference"
)]
struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialise a seeded model and save its weights.
    GenModel(GenModel),
    /// Build a vocabulary from a corpus, optionally encoding some text.
    Tokenize(Tokenize),
    /// Run split inference and dump the activations that crossed the wire.
    Infer(Infer),
    /// White-box inversion of a recorded activation.
    Attack(Attack),
    /// Grey-box inversion with unknown LoRA adapters.
    AttackGrey(AttackGrey),
    /// Check the gradient bound of the softmax relaxation.
    ProbeVanishing(ProbeVanishing),
    /// Cosine table of the non-linearity probe.
    ProbeNonlinearity(ProbeNonlinearity),
    /// Run a full experiment from a JSON config.
    Eval(Eval),
    /// Render a report JSON as CSV or markdown.
    Report(ReportCmd),
}

#[derive(Args)]
struct GenModel {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    vocab_size: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    mlp_multiple: usize,
    #[arg(long, default_value_t = 64)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 0.02)]
    embedding_std: f64,
    #[arg(long, default_value_t = 0.02)]
    position_std: f64,
    #[arg(long, default_value_t = 0.1)]
    layer_std: f64,
}

#[derive(Args)]
struct Tokenize {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 64)]
    vocab_size: usize,
    /// Where to write the vocabulary JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Text to encode with the new vocabulary.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Args)]
struct PromptArgs {
    /// Vocabulary JSON written by `tokenize`.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Prompt text; needs `--vocab`. A `<bos>` is prepended.
    #[arg(long, conflicts_with = "ids")]
    text: Option<String>,
    /// Prompt token ids, comma separated, used verbatim.
    #[arg(long, value_delimiter = ',')]
    ids: Option<Vec<u32>>,
}

impl PromptArgs {
    fn tokens(&self) -> Result<TokenSequence> {
        match (&self.text, &self.ids) {
            (Some(t), _) => {
                let vocab = self.vocab.as_ref().context("--text needs --vocab")?;
                Ok(Tokenizer::load(vocab)?.encode_prompt(t, usize::MAX))
            }
            (None, Some(ids)) => Ok(TokenSequence::new(ids.clone())),
            (None, None) => bail!("give --text or --ids"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DefenseMode {
    None,
    Gaussian,
    Quantize,
}

#[derive(Args)]
struct DefenseArgs {
    #[arg(long, value_enum, default_value = "none")]
    defense: DefenseMode,
    /// Noise standard deviation for `--defense gaussian`.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Bit width for `--defense quantize`.
    #[arg(long, default_value_t = 8)]
    bits: u32,
}

impl DefenseArgs {
    fn config(&self, seed: u64) -> DefenseConfig {
        let defense = match self.defense {
            DefenseMode::None => Defense::None,
            DefenseMode::Gaussian => Defense::Gaussian { sigma: self.sigma },
            DefenseMode::Quantize => Defense::Quantize { bits: self.bits },
        };
        DefenseConfig { defense, seed }
    }
}

#[derive(Args)]
struct Infer {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    prompt: PromptArgs,
    #[arg(long, default_value_t = 4)]
    participants: usize,
    /// 1-based attacker position; defaults to the last participant.
    #[arg(long)]
    attacker: Option<usize>,
    #[command(flatten)]
    defense: DefenseArgs,
    #[arg(long, default_value = "prompt")]
    prompt_id: String,
    /// Directory for `sender<i>.{bin,json}` records.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    top_y: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Token assumed at position 0.
    #[arg(long, conflicts_with = "no_bos")]
    bos: Option<u32>,
    /// Do not assume any token at position 0.
    #[arg(long)]
    no_bos: bool,
}

impl AttackArgs {
    fn config(&self, seed: u64) -> AttackConfig {
        let d = AttackConfig::default();
        AttackConfig {
            lambda: self.lambda.unwrap_or(d.lambda),
            lr: self.lr.unwrap_or(d.lr),
            iterations: self.iterations.unwrap_or(d.iterations),
            top_k: self.top_k.unwrap_or(d.top_k),
            top_y: self.top_y.unwrap_or(d.top_y),
            temperature: self.temperature.unwrap_or(d.temperature),
            seed,
            bos: if self.no_bos { None } else { self.bos.or(d.bos) },
        }
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Corpus to train the bigram next-token oracle on; needs `--vocab`.
    #[arg(long)]
    oracle_corpus: Option<PathBuf>,
    /// Vocabulary JSON for the oracle and for decoding the result.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

impl OracleArgs {
    fn load(&self, vocab_size: usize) -> Result<(Option<Tokenizer>, Option<BigramOracle>)> {
        let tok = self.vocab.as_deref().map(Tokenizer::load).transpose()?;
        let oracle = match (&self.oracle_corpus, &tok) {
            (Some(c), Some(t)) => {
                let corpus = Corpus::load(c, None)?;
                let seqs: Vec<Vec<u32>> = corpus
                    .texts()
                    .map(|d| t.encode_prompt(d, usize::MAX).ids().to_vec())
                    .collect();
                Some(BigramOracle::train(vocab_size, seqs.iter().map(Vec::as_slice)))
            }
            (Some(_), None) => bail!("--oracle-corpus needs --vocab"),
            (None, _) => None,
        };
        Ok((tok, oracle))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Constrained,
    Naive,
    Softmax,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiscretizerArg {
    Adaptive,
    Naive,
}

#[derive(Args)]
struct Attack {
    #[arg(long)]
    model: PathBuf,
    /// Record stem written by `infer` (without extension).
    #[arg(long)]
    record: PathBuf,
    #[arg(long, value_enum, default_value = "constrained")]
    optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value = "adaptive")]
    discretizer: DiscretizerArg,
    #[command(flatten)]
    attack: AttackArgs,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Ground-truth ids, comma separated, for diagnostics and accuracy.
    #[arg(long, value_delimiter = ',')]
    truth: Option<Vec<u32>>,
}

#[derive(Args)]
struct AttackGrey {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    record: PathBuf,
    #[command(flatten)]
    attack: AttackArgs,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value_t = 1e-3)]
    adapter_lr: f64,
    #[arg(long, default_value_t = 5)]
    adapter_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    init_std: f64,
    /// Projections the estimated adapters wrap.
    #[arg(long, value_delimiter = ',', default_value = "q,v")]
    wrapped: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    truth: Option<Vec<u32>>,
    /// Stem for the saved state (`.json` and `.bin`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeVanishing {
    /// Model whose layers are used; the embedding table is resampled per trial.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,
    #[arg(long, default_value_t = 8)]
    prompt_len: usize,
    /// Layers in the probed prefix; defaults to all.
    #[arg(long)]
    boundary: Option<usize>,
}

#[derive(Args)]
struct ProbeNonlinearity {
    #[arg(long)]
    model: PathBuf,
    /// Draw prompts from this corpus (needs `--vocab`) instead of uniform ids.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    prompts: usize,
    #[arg(long, default_value_t = 8)]
    prompt_len: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    ks: Vec<f64>,
    /// Depths to probe; defaults to every layer.
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    ResultsCsv,
    Markdown,
}

#[derive(Args)]
struct ReportCmd {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => write_stdout(&body),
    }
}

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn write_stdout(body: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(body.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    write_stdout(&(serde_json::to_string_pretty(v)? + "\n"))
}

fn load_record(stem: &Path) -> Result<ActivationRecord> {
    ActivationRecord::load(stem).with_context(|| format!("loading record {}", stem.display()))
}

fn accuracy(truth: &Option<Vec<u32>>, got: &TokenSequence, bos: Option<u32>) -> Result<Option<f64>> {
    let Some(t) = truth else { return Ok(None) };
    let skip = usize::from(bos.is_some());
    Ok(Some(pia_eval::token_accuracy(
        &t[skip.min(t.len())..],
        &got.ids()[skip.min(got.len())..],
    )?))
}

fn main() -> Result<()> {
    env_logger::init();
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::GenModel(g) => {
            let cfg = ModelConfig {
                vocab_size: g.vocab_size,
                hidden: g.hidden,
                layers: g.layers,
                heads: g.heads,
                mlp_multiple: g.mlp_multiple,
                max_seq_len: g.max_seq_len,
                ..ModelConfig::tiny()
            };
            let scales = InitScales {
                embedding: g.embedding_std,
                position: g.position_std,
                layer: g.layer_std,
            };
            let model: Model = Model::random_scaled(cfg, seed, scales)?;
            model.save_weights(&g.out)?;
            print_json(&json!({"out": g.out, "config": model.config(), "seed": seed}))
        }
        Command::Tokenize(t) => {
            let corpus = Corpus::load(&t.corpus, None)?;
            let tok = Tokenizer::build(corpus.texts(), t.vocab_size)?;
            if let Some(p) = &t.out {
                tok.save(p)?;
            }
            let encoded = t.text.as_deref().map(|s| tok.encode_prompt(s, usize::MAX));
            print_json(&json!({"vocab_size": tok.len(), "documents": corpus.len(), "ids": encoded}))
        }
        Command::Infer(i) => {
            let model: Model = Model::load_weights(&i.model)?;
            let x = i.prompt.tokens()?;
            let mut plan = plan_partition(model.num_layers(), i.participants)?;
            if let Some(a) = i.attacker {
                plan = plan.with_attacker(a)?;
            }
            let trace = Pipeline::new(&model, plan, &[i.defense.config(seed)])?.run(&x, &i.prompt_id)?;
            std::fs::create_dir_all(&i.out_dir)?;
            let mut written = Vec::new();
            for r in &trace.boundary_records {
                let stem = i.out_dir.join(format!("sender{}", r.sender));
                r.save(&stem)?;
                written.push(
                    json!({"stem": stem, "sender": r.sender, "boundary": r.boundary, "distortion": r.distortion}),
                );
            }
            let attacker = trace.attacker_record.as_ref().map(|r| r.sender);
            print_json(&json!({"tokens": x, "records": written, "attacker_sender": attacker}))
        }
        Command::Attack(a) => {
            let model: Model = Model::load_weights(&a.model)?;
            let rec = load_record(&a.record)?;
            let cfg = a.attack.config(seed);
            let (tok, oracle) = a.oracle.load(model.vocab_size())?;
            let target = Target::new(&model, rec.boundary)?;
            let optimizer = match a.optimizer {
                OptimizerArg::Constrained => Optimizer::Constrained,
                OptimizerArg::Naive => Optimizer::Naive,
                OptimizerArg::Softmax => Optimizer::Softmax,
                OptimizerArg::Exhaustive => Optimizer::Exhaustive,
            };
            let discretizer = match a.discretizer {
                DiscretizerArg::Adaptive => Discretizer::Adaptive,
                DiscretizerArg::Naive => Discretizer::Naive,
            };
            let truth = a.truth.clone().map(TokenSequence::new);
            let out = invert(
                &target,
                &rec.activation,
                optimizer,
                discretizer,
                &cfg,
                oracle.as_ref().map(|o| o as &dyn NextTokenScorer),
                truth.as_ref(),
            )?;
            let loss = target.activation_loss(&out.tokens, &rec.activation)?;
            print_json(&json!({
                "tokens": out.tokens,
                "text": tok.map(|t| t.decode(out.tokens.ids())),
                "activation_loss": loss,
                "token_accuracy": accuracy(&a.truth, &out.tokens, cfg.bos)?,
                "final_objective": out.trace.last(),
                "candidate_stats": a.truth.as_ref().and(out.diagnostics.map(|d| d.stats())),
            }))
        }
        Command::AttackGrey(g) => {
            let model: Model = Model::load_weights(&g.model)?;
            let rec = load_record(&g.record)?;
            let wrapped = g
                .wrapped
                .iter()
                .map(|s| Projection::parse(s).with_context(|| format!("unknown projection {s:?}")))
                .collect::<Result<Vec<_>>>()?;
            let cfg = GreyboxConfig {
                rank: g.rank,
                wrapped,
                rounds: g.rounds,
                adapter_lr: g.adapter_lr,
                adapter_steps: g.adapter_steps,
                init_std: g.init_std,
                whitebox: g.attack.config(seed),
            };
            let (tok, oracle) = g.oracle.load(model.vocab_size())?;
            let truth = g.truth.clone().map(TokenSequence::new);
            let state = alternating_invert(
                &model,
                &rec.activation,
                rec.boundary,
                oracle.as_ref().map(|o| o as &dyn NextTokenScorer),
                &cfg,
                truth.as_ref(),
            )?;
            if let Some(stem) = &g.out {
                state.save(stem)?;
            }
            print_json(&json!({
                "tokens": state.tokens,
                "text": tok.map(|t| t.decode(state.tokens.ids())),
                "loss_history": state.loss_history,
                "token_accuracy": accuracy(&g.truth, &state.tokens, cfg.whitebox.bos)?,
            }))
        }
        Command::ProbeVanishing(p) => {
            let model: Model = Model::load_weights(&p.model)?;
            let report = gradient_vanishing_probe(
                &model,
                &ProbeConfig {
                    trials: p.trials,
                    sigma: p.sigma,
                    prompt_len: p.prompt_len,
                    boundary: p.boundary.unwrap_or(model.num_layers()),
                    seed,
                },
            )?;
            print_json(&report)
        }
        Command::ProbeNonlinearity(p) => {
            let model: Model = Model::load_weights(&p.model)?;
            let prompts: Vec<TokenSequence> = match (&p.corpus, &p.vocab) {
                (Some(c), Some(v)) => {
                    let corpus = Corpus::load(c, None)?;
                    let tok = Tokenizer::load(v)?;
                    corpus
                        .sample_indices(p.prompts, seed)?
                        .into_iter()
                        .map(|i| tok.encode_prompt(&corpus.documents[i].text, p.prompt_len))
                        .collect()
                }
                (Some(_), None) => bail!("--corpus needs --vocab"),
                (None, _) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..p.prompts)
                        .map(|_| {
                            TokenSequence::new(
                                (0..=p.prompt_len)
                                    .map(|j| {
                                        if j == 0 {
                                            0
                                        } else {
                                            rng.random_range(0..model.vocab_size() as u32)
                                        }
                                    })
                                    .collect(),
                            )
                        })
                        .collect()
                }
            };
            let depths = p.depths.clone().unwrap_or_else(|| (1..=model.num_layers()).collect());
            let cells = mean_nonlinearity(&model, &prompts, p.noise, &p.ks, &depths, seed)?;
            print_json(&cells)
        }
        Command::Eval(e) => {
            let mut cfg = ExperimentConfig::load(&e.config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if e.threads.is_some() {
                cfg.threads = e.threads;
            }
            let dir = e
                .out
                .or_else(|| cfg.output_dir.clone())
                .context("give --out or set output_dir in the config")?;
            let out = run_experiment(&cfg)?;
            write_outputs(&out, &dir)?;
            print!("{}", pia_eval::report::markdown(&out.report));
            Ok(())
        }
        Command::Report(r) => {
            let s = std::fs::read_to_string(&r.input).with_context(|| format!("reading {}", r.input.display()))?;
            let report: Report = serde_json::from_str(&s)?;
            let body = match r.format {
                ReportFormat::Csv => pia_eval::report::aggregates_csv(&report)?,
                ReportFormat::ResultsCsv => pia_eval::report::results_csv(&report)?,
                ReportFormat::Markdown => pia_eval::report::markdown(&report),
            };
            emit(r.out.as_deref(), &body)
        }
    }
}
