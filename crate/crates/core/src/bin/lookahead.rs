use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use lookahead::backbone::Direction;
use lookahead::baselines::{
    ClassifierConfig, KmeansRouter, KnnRouter, NoisyJudge, OracleRouter, RandomEncoder, RandomRouter, RewardSelect,
};
use lookahead::corpus::{
    binarize_all, corpus_digest, filter_uninformative, generate_synthetic, load_corpus, normalize_scores, save_corpus,
    split, RoutingExample, SpecializationPlan, DEFAULT_THRESHOLD,
};
use lookahead::eval::{
    ablation_table, evaluate, lambda_arms, masking_arms, mi_probe, run_arm, summary_table, Arm, MineConfig,
    ResponseClassifier,
};
use lookahead::gateway::{serve, spawn, Checkpoint, GatewayConfig, MockBackend, TrainingMeta};
use lookahead::router::{
    train, BackboneShape, LookaheadConfig, MaskStrategy, Router, RouterSpec, RoutingPolicy, TrainConfig,
};
use lookahead::Error;

#[derive(Parser, Debug)]
#[command(name = "lookahead", version, about = "Response-aware LLM routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-specialist corpus from a plan file.
    Synth(SynthArgs),
    /// Normalize scores per dataset and binarize labels.
    Normalize(NormalizeArgs),
    /// Split a corpus into train, validation and test files.
    Split(SplitArgs),
    /// Train a router and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a baseline on a corpus.
    Eval(EvalArgs),
    /// Masking-strategy and response-weight sweeps.
    Ablate(AblateArgs),
    /// Mutual-information probe of two checkpoints.
    Mi(MiArgs),
    /// Route one query read from stdin.
    Route(RouteArgs),
    /// Run the routing gateway.
    Serve(ServeArgs),
    /// Run a mock completion backend.
    Mock(MockArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Plan file (JSON).
    #[arg(long, conflicts_with = "planted")]
    plan: Option<PathBuf>,
    /// Built-in plan: models,domains,diag,off.
    #[arg(long, value_delimiter = ',')]
    planted: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    train: usize,
    #[arg(long, default_value_t = 300)]
    val: usize,
    #[arg(long, default_value_t = 1000)]
    test: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct NormalizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Drop records where every or no model is correct.
    #[arg(long)]
    filter: bool,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    val: f64,
    #[arg(long, default_value_t = 0.1)]
    test: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Clm,
    Mlm,
    Mlc,
    Zooter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Strategy {
    End,
    Start,
    Random,
}

impl From<Strategy> for MaskStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::End => MaskStrategy::End,
            Strategy::Start => MaskStrategy::Start,
            Strategy::Random => MaskStrategy::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Backbone {
    Causal,
    Bidirectional,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 128)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 512)]
    ffn: usize,
    #[arg(long, default_value_t = 512)]
    max_len: usize,
}

impl ModelArgs {
    fn shape(&self) -> BackboneShape {
        BackboneShape {
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            ffn: self.ffn,
            max_len: self.max_len,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct OptimArgs {
    /// Defaults to 2 for CLM and 4 otherwise.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OptimArgs {
    fn config(&self, method: Method) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(if method == Method::Clm { 2 } else { 4 }),
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            eval_every: self.eval_every,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    variant: Method,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Response-modeling weight; 0.5 for CLM, 0.2 for MLM.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 64)]
    block_len: usize,
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Strategy::End)]
    strategy: Strategy,
    #[arg(long)]
    no_curriculum: bool,
    #[arg(long, default_value_t = 128)]
    max_response_len: usize,
    /// Backbone of the MLC and ZOOTER classifiers.
    #[arg(long, value_enum)]
    backbone: Option<Backbone>,
    /// ZOOTER softmax temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Oracle,
    Random,
    Knn,
    Kmeans,
    Reward,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, required_unless_present = "router", conflicts_with = "router")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    router: Option<Baseline>,
    /// Corpus to evaluate on.
    #[arg(long)]
    corpus: PathBuf,
    /// Training corpus for kNN and k-means.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Judge noise for reward selection.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path (JSON); a TSV summary is written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Mlm)]
    variant: Method,
    #[arg(long, default_value_t = 64)]
    block_len: usize,
    #[arg(long, default_value_t = 128)]
    max_response_len: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.5])]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MiArgs {
    /// Checkpoint trained with response modeling.
    #[arg(long)]
    with_rm: PathBuf,
    /// Checkpoint trained without response modeling.
    #[arg(long)]
    without_rm: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Records whose states are probed.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 50)]
    repetitions: usize,
    #[arg(long, default_value_t = 1024)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    batch: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RouteArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct MockArgs {
    #[arg(long)]
    name: String,
    #[arg(long, default_value = "127.0.0.1:9001")]
    listen: String,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
}

type CliResult<T> = std::result::Result<T, Error>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match &e {
                Error::Tensor(_) => "tensor",
                Error::Contract(_) => "contract",
                Error::Input(_) => "input",
                Error::Corpus(_) => "corpus",
                Error::Checkpoint(_) => "checkpoint",
                Error::Diverged { .. } => "diverged",
                Error::UndefinedMetric(_) => "metric",
                Error::Io(_) => "io",
            };
            let msg = match &e {
                Error::Input(m) | Error::Contract(m) | Error::UndefinedMetric(m) => m.clone(),
                other => other.to_string(),
            };
            eprintln!("error[{kind}]: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Normalize(a) => normalize(a),
        Command::Split(a) => split_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Mi(a) => mi(a),
        Command::Route(a) => route(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Mock(a) => mock(a),
    }
}

fn input(m: impl Into<String>) -> Error {
    Error::Input(m.into())
}

fn load(path: &Path) -> CliResult<Vec<RoutingExample>> {
    load_corpus(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| input(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `<stem>.manifest.json` beside `output` (or `manifest.json` inside
/// an output directory).
fn write_manifest(output: &Path, seed: Option<u64>, corpora: &[&[RoutingExample]]) -> CliResult<()> {
    let path = if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    };
    let manifest = json!({
        "args": std::env::args().collect::<Vec<_>>(),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "corpus_digests": corpora.iter().map(|c| corpus_digest(c)).collect::<Vec<_>>(),
    });
    write_json(&path, &manifest)
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let plan = match (&a.plan, &a.planted) {
        (Some(p), None) => {
            let text = fs::read_to_string(p)?;
            let mut plan: SpecializationPlan =
                serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", p.display())))?;
            plan.seed = a.seed;
            plan
        }
        (None, Some(v)) => {
            if v.len() != 4 {
                return Err(input("--planted takes models,domains,diag,off"));
            }
            let (t, d) = (v[0] as usize, v[1] as usize);
            if v[0] != t as f64 || v[1] != d as f64 {
                return Err(input("--planted models and domains must be integers"));
            }
            SpecializationPlan::planted(t, d, v[2], v[3], a.seed)?
        }
        _ => return Err(input("one of --plan or --planted is required")),
    };
    let s = generate_synthetic(&plan, a.train, a.val, a.test)?;
    fs::create_dir_all(&a.out)?;
    save_corpus(a.out.join("train.jsonl"), &s.train)?;
    save_corpus(a.out.join("val.jsonl"), &s.validation)?;
    save_corpus(a.out.join("test.jsonl"), &s.test)?;
    write_json(&a.out.join("plan.json"), &plan)?;
    write_manifest(&a.out, Some(a.seed), &[&s.train, &s.validation, &s.test])?;
    println!("{} train, {} val, {} test records in {}", s.train.len(), s.validation.len(), s.test.len(), a.out.display());
    Ok(())
}

fn normalize(a: NormalizeArgs) -> CliResult<()> {
    let mut ex = load(&a.input)?;
    for w in normalize_scores(&mut ex)? {
        eprintln!("warning: {}", w.0);
    }
    binarize_all(&mut ex, a.threshold);
    if a.filter {
        let before = ex.len();
        ex = filter_uninformative(ex);
        eprintln!("kept {} of {before} records", ex.len());
    }
    save_corpus(&a.out, &ex)?;
    write_manifest(&a.out, None, &[&ex])?;
    Ok(())
}

fn split_cmd(a: SplitArgs) -> CliResult<()> {
    let ex = load(&a.input)?;
    let digest = corpus_digest(&ex);
    let s = split(ex, a.val, a.test, a.seed)?;
    fs::create_dir_all(&a.out)?;
    save_corpus(a.out.join("train.jsonl"), &s.train)?;
    save_corpus(a.out.join("val.jsonl"), &s.validation)?;
    save_corpus(a.out.join("test.jsonl"), &s.test)?;
    let manifest = json!({
        "args": std::env::args().collect::<Vec<_>>(),
        "seed": a.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "corpus_digests": [digest],
    });
    write_json(&a.out.join("manifest.json"), &manifest)
}

fn models_of(ex: &[RoutingExample], path: &Path) -> CliResult<usize> {
    ex.first()
        .map(RoutingExample::models)
        .ok_or_else(|| input(format!("{}: empty corpus", path.display())))
}

fn build_spec(a: &TrainArgs, models: usize) -> CliResult<RouterSpec> {
    let shape = a.model.shape();
    let lookahead_only = a.lambda.is_some() || a.no_curriculum;
    match a.variant {
        Method::Clm | Method::Mlm => {
            if a.backbone.is_some() || a.tau.is_some() {
                return Err(input("--backbone and --tau apply to mlc and zooter only"));
            }
            let base = if a.variant == Method::Clm {
                LookaheadConfig::clm(models)
            } else {
                LookaheadConfig::mlm(models)
            };
            let cfg = LookaheadConfig {
                lambda: a.lambda.unwrap_or(base.lambda),
                block_len: a.block_len,
                alpha: a.alpha,
                strategy: a.strategy.into(),
                curriculum: !a.no_curriculum,
                max_response_len: a.max_response_len,
                ..base
            };
            cfg.validate()?;
            Ok(RouterSpec::lookahead(cfg, shape))
        }
        Method::Mlc | Method::Zooter => {
            if lookahead_only {
                return Err(input("--lambda and --no-curriculum apply to clm and mlm only"));
            }
            let cfg = if a.variant == Method::Mlc {
                if a.tau.is_some() {
                    return Err(input("--tau applies to zooter only"));
                }
                ClassifierConfig::mlc(models)
            } else {
                ClassifierConfig::zooter(models, a.tau.unwrap_or(1.0))
            };
            let dir = match a.backbone.unwrap_or(Backbone::Bidirectional) {
                Backbone::Causal => Direction::Causal,
                Backbone::Bidirectional => Direction::Bidirectional,
            };
            Ok(RouterSpec::classifier(cfg, shape, dir))
        }
    }
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let train_set = load(&a.train)?;
    let val = load(&a.val)?;
    let models = models_of(&train_set, &a.train)?;
    let spec = build_spec(&a, models)?;
    let cfg = a.optim.config(a.variant);
    let mut router = Router::new(spec, cfg.seed)?;
    let report = train(&mut router, &train_set, &val, &cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let ckpt = Checkpoint::new(
        router,
        TrainingMeta {
            seed: cfg.seed,
            steps: report.steps,
            best_step: report.best_step,
            val_score: report.best_val_accuracy,
            corpus_digest: Some(corpus_digest(&train_set)),
        },
    );
    for w in ckpt.save(&a.out, &val)? {
        eprintln!("warning: {w}");
    }
    let mut log = a.out.clone().into_os_string();
    log.push(".log.tsv");
    fs::write(&log, report.to_tsv())?;
    write_manifest(&a.out, Some(cfg.seed), &[&train_set, &val])?;
    println!(
        "{} steps, best step {}, validation accuracy {}, digest {}",
        report.steps,
        report.best_step,
        report.best_val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
        ckpt.digest()?
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    let test = load(&a.corpus)?;
    let models = models_of(&test, &a.corpus)?;
    let train_set = match &a.train {
        Some(p) => Some(load(p)?),
        None => None,
    };
    let need_train = || {
        train_set
            .as_deref()
            .ok_or_else(|| input("--train is required for knn and kmeans"))
    };
    let encoder = || RandomEncoder::new(BackboneShape { layers: 1, d_model: 64, heads: 4, ffn: 128, max_len: 256 }, a.seed);
    let policy: Box<dyn RoutingPolicy> = match (&a.checkpoint, a.router) {
        (Some(p), _) => Box::new(Checkpoint::load(p)?.router),
        (None, Some(Baseline::Oracle)) => Box::new(OracleRouter { models }),
        (None, Some(Baseline::Random)) => Box::new(RandomRouter { models, seed: a.seed }),
        (None, Some(Baseline::Reward)) => Box::new(RewardSelect {
            models,
            judge: NoisyJudge {
                sigma: a.sigma,
                seed: a.seed,
            },
        }),
        (None, Some(Baseline::Knn)) => Box::new(KnnRouter::fit(encoder()?, need_train()?, a.k)?),
        (None, Some(Baseline::Kmeans)) => Box::new(KmeansRouter::fit(encoder()?, need_train()?, a.k, a.seed)?),
        (None, None) => return Err(input("one of --checkpoint or --router is required")),
    };
    let report = evaluate(policy.as_ref(), &test)?;
    write_json(&a.out, &report)?;
    let mut tsv = a.out.clone().into_os_string();
    tsv.push(".tsv");
    fs::write(&tsv, summary_table(std::slice::from_ref(&report)))?;
    let mut corpora: Vec<&[RoutingExample]> = vec![&test];
    if let Some(t) = &train_set {
        corpora.push(t);
    }
    write_manifest(&a.out, Some(a.seed), &corpora)?;
    println!(
        "{}: mu_o {:.4}, mu_n {}",
        report.method,
        report.overall.mu_o,
        report.overall.mu_n.map_or("undefined".into(), |v| format!("{v:.2}"))
    );
    Ok(())
}

fn ablate(a: AblateArgs) -> CliResult<()> {
    let s = lookahead::corpus::CorpusSplit {
        train: load(&a.train)?,
        validation: load(&a.val)?,
        test: load(&a.test)?,
        seed: 0,
    };
    let models = models_of(&s.train, &a.train)?;
    let shape = a.model.shape();
    let base = match a.variant {
        Method::Clm => LookaheadConfig::clm(models),
        Method::Mlm => LookaheadConfig::mlm(models),
        _ => return Err(input("ablate sweeps clm or mlm")),
    };
    let base = LookaheadConfig {
        block_len: a.block_len,
        max_response_len: a.max_response_len,
        ..base
    };
    let mut arms: Vec<Arm> = if a.variant == Method::Mlm {
        masking_arms(base, shape)
    } else {
        vec![]
    };
    arms.extend(lambda_arms(base, shape, &a.lambdas));
    let cfg = a.optim.config(a.variant);
    let mut summaries = Vec::new();
    for arm in &arms {
        let sum = run_arm(arm, &s, &cfg, &a.seeds)?;
        eprintln!("{}: mean mu_n {}", sum.arm, sum.mean_mu_n().map_or("-".into(), |v| format!("{v:.2}")));
        summaries.push(sum);
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("ablation.tsv"), ablation_table(&summaries))?;
    write_json(&a.out.join("ablation.json"), &summaries)?;
    write_manifest(&a.out, a.seeds.first().copied(), &[&s.train, &s.validation, &s.test])?;
    print!("{}", ablation_table(&summaries));
    Ok(())
}

fn mi(a: MiArgs) -> CliResult<()> {
    let with_rm = Checkpoint::load(&a.with_rm)?.router;
    let without_rm = Checkpoint::load(&a.without_rm)?.router;
    let train_set = load(&a.train)?;
    let val = load(&a.val)?;
    let probe_set = load(&a.corpus)?;
    let models = models_of(&train_set, &a.train)?;
    let mut oracle = ResponseClassifier::new(models, a.model.shape(), a.optim.seed)?;
    train(&mut oracle, &train_set, &val, &a.optim.config(Method::Mlm))?;
    let cfg = MineConfig {
        hidden: a.hidden,
        epochs: a.epochs,
        batch: a.batch,
        repetitions: a.repetitions,
        seed: a.optim.seed,
        ..MineConfig::default()
    };
    let result = mi_probe(&with_rm, &without_rm, &oracle, &probe_set, &cfg)?;
    write_json(&a.out, &result)?;
    write_manifest(&a.out, Some(a.optim.seed), &[&train_set, &val, &probe_set])?;
    println!(
        "with response modeling: median {:.4} nats (IQR {:.4}-{:.4}); without: median {:.4} (IQR {:.4}-{:.4})",
        result.with_rm.median,
        result.with_rm.q1,
        result.with_rm.q3,
        result.without_rm.median,
        result.without_rm.q1,
        result.without_rm.q3
    );
    Ok(())
}

fn route(a: RouteArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut query = String::new();
    std::io::stdin().read_to_string(&mut query)?;
    let query = query.trim_end_matches(['\n', '\r']);
    let d = ckpt.router.route(query)?;
    let out = json!({ "index": d.selected, "scores": d.scores, "latency_ms": d.latency_ms });
    println!("{out}");
    Ok(())
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Error::Io)
}

fn serve_cmd(a: ServeArgs) -> CliResult<()> {
    let cfg = GatewayConfig::load(&a.config)?;
    eprintln!("listening on {}", cfg.listen);
    runtime()?.block_on(serve(cfg))
}

fn mock(a: MockArgs) -> CliResult<()> {
    let backend = MockBackend::new(a.name, Duration::from_millis(a.delay_ms));
    runtime()?.block_on(async move {
        let (addr, handle) = spawn(backend.app(), &a.listen).await?;
        eprintln!("mock backend on {addr}");
        let _ = handle.await;
        Ok(())
    })
}
