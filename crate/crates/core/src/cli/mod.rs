//! Command-line front end. `run` parses arguments, dispatches to a
//! subcommand and maps failures to exit codes: 0 success, 1 usage error,
//! 2 bad input data, 3 numerical failure.

mod manifest;

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adaptation::{fit_target, init_embeddings_el, init_embeddings_mf, madx_stack_config, InitSpec, Strategy, Variant};
use crate::error::Error;
use crate::factorization::{
    cluster_script_report, factorize_kmeans, factorize_neural, param_budget, read_model, reconstruct, semi_nmf,
    write_model, BudgetMode, FactorizationModel, Method, ModelMeta, NeuralConfig, TauSchedule, DEFAULT_CLUSTERS,
    DEFAULT_D_PRIME, DEFAULT_STEPS,
};
use crate::formats::{EmbeddingFormat, Embeddings};
use crate::numerics::Rng;
use crate::overlap::{
    analyze, bundled_metrics, classify_token, correlation_report, join_metrics, lexical_overlap, TokenGroup,
    REFERENCE_R_LEX, REFERENCE_R_UNK,
};
use crate::vocab::{train_wordpiece, Vocabulary, DEFAULT_SPECIALS};

pub use manifest::{file_sha256, sha256_hex, token_hash, RunManifest};

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "LEXFORGE_SEED";
pub const DEFAULT_VOCAB_SIZE: usize = 10_000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lexforge", version, about = "Vocabulary overlap analysis, embedding factorization and new-language initialization")]
pub struct Cli {
    /// Random seed; overrides LEXFORGE_SEED (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a WordPiece vocabulary on a text corpus.
    TrainTokenizer(TrainTokenizerArgs),
    /// Lexical overlap and UNK rate of a target vocabulary against a base.
    Analyze(PairArgs),
    /// Overlapping tokens by group (numbers, Latin/other, char/subword).
    GroupOverlap(GroupOverlapArgs),
    /// Correlate vocabulary metrics with transfer scores.
    CheckCorrelations(CheckCorrelationsArgs),
    /// Factorize an embedding matrix.
    Factorize(FactorizeArgs),
    /// Rebuild the full embedding matrix from a model.
    Reconstruct(ReconstructArgs),
    /// Initialize embeddings for a new vocabulary.
    InitEmbeddings(InitEmbeddingsArgs),
    /// Train new-language factors against target embeddings.
    FitTarget(FitTargetArgs),
    /// Count new trainable parameters.
    ParamBudget(ParamBudgetArgs),
    /// Unicode script composition of every cluster.
    ScriptReport(ScriptReportArgs),
    /// Which transformer layers carry adapters.
    StackConfig(StackConfigArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FormatArg {
    Text,
    Binary,
}

impl From<FormatArg> for EmbeddingFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => EmbeddingFormat::Text,
            FormatArg::Binary => EmbeddingFormat::Binary,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainTokenizerArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PairArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    base: PathBuf,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GroupOverlapArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// List every overlapping token with its group.
    #[arg(long)]
    list: bool,
}

#[derive(Debug, Args, Serialize)]
struct CheckCorrelationsArgs {
    /// Directory with table1_metrics.tsv and table4a_mbert.tsv; the bundled
    /// copies are used if omitted.
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    SemiNmf,
    Kmeans,
    Neural,
}

#[derive(Debug, Args, Serialize)]
struct TrainingArgs {
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Learning rate for gradient-trained parameters.
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Gumbel-Softmax temperature at the first step.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Temperature at the last step (linear schedule); defaults to --tau.
    #[arg(long)]
    tau_end: Option<f64>,
    /// Write the per-step loss as TSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl TrainingArgs {
    fn schedule(&self) -> TauSchedule {
        TauSchedule {
            start: self.tau,
            end: self.tau_end.unwrap_or(self.tau),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct FactorizeArgs {
    /// Embedding matrix (text or binary format).
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Kmeans)]
    method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
    clusters: usize,
    /// Low-dimensional size D′.
    #[arg(long, default_value_t = DEFAULT_D_PRIME)]
    dim: usize,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ModelInput {
    #[arg(long)]
    model: PathBuf,
    /// Model supplying the up-projections when --model was saved without them.
    #[arg(long)]
    base_model: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReconstructArgs {
    #[command(flatten)]
    input: ModelInput,
    /// Vocabulary labelling the model's rows.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Binary)]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StrategyArg {
    ElRand,
    ElLex,
    MfRand,
    MfLex,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::ElRand => Strategy::ElRand,
            StrategyArg::ElLex => Strategy::ElLex,
            StrategyArg::MfRand => Strategy::MfRand,
            StrategyArg::MfLex => Strategy::MfLex,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct InitEmbeddingsArgs {
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long)]
    new_vocab: PathBuf,
    #[arg(long)]
    base_vocab: PathBuf,
    /// Base embedding matrix (EL strategies).
    #[arg(long)]
    base_embeddings: Option<PathBuf>,
    /// Base factorization model (MF strategies).
    #[arg(long)]
    base_model: Option<PathBuf>,
    #[arg(long, default_value_t = crate::adaptation::DEFAULT_RAND_STDDEV)]
    stddev: f64,
    /// Embedding file format (EL strategies).
    #[arg(long, value_enum, default_value_t = FormatArg::Binary)]
    format: FormatArg,
    /// Leave the shared up-projections out of the model file (MF strategies).
    #[arg(long)]
    exclude_up_projections: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct FitTargetArgs {
    #[command(flatten)]
    input: ModelInput,
    /// Target embeddings, one row per model token.
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    exclude_up_projections: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    El,
    Mf,
}

#[derive(Debug, Args, Serialize)]
struct ParamBudgetArgs {
    #[arg(long, default_value_t = 10_000)]
    v_new: u64,
    #[arg(long, default_value_t = 768)]
    d: u64,
    #[arg(long, default_value_t = DEFAULT_D_PRIME as u64)]
    d_prime: u64,
    #[arg(long, default_value_t = DEFAULT_CLUSTERS as u64)]
    clusters: u64,
    #[arg(long, value_enum)]
    mode: ModeArg,
}

#[derive(Debug, Args, Serialize)]
struct ScriptReportArgs {
    #[command(flatten)]
    input: ModelInput,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum VariantArg {
    #[value(name = "madx")]
    MadX,
    #[value(name = "madx2")]
    MadX2,
}

#[derive(Debug, Args, Serialize)]
struct StackConfigArgs {
    #[arg(long, default_value_t = 12)]
    layers: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::MadX2)]
    variant: VariantArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
    /// A check ran but its result is outside tolerance.
    CheckFailed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else if matches!(e, Error::InvalidArgument(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

struct Ctx<'a> {
    seed: u64,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

/// Runs the command line `args` (including the program name). `env_seed` is
/// the value of `LEXFORGE_SEED`, if set.
pub fn run<I, T>(args: I, env_seed: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let seed = match (cli.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(raw)) => match raw.trim().parse() {
            Ok(s) => s,
            Err(_) => {
                let _ = writeln!(err, "error: {SEED_ENV}={raw:?} is not an unsigned integer");
                return EXIT_USAGE;
            }
        },
        (None, None) => DEFAULT_SEED,
    };
    let mut ctx = Ctx { seed, out, err };
    match dispatch(cli.command, &mut ctx) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(ctx.err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::CheckFailed(msg)) => {
            let _ = writeln!(ctx.err, "check failed: {msg}");
            EXIT_NUMERICAL
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(ctx.err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, ctx: &mut Ctx<'_>) -> CliResult<()> {
    match command {
        Command::TrainTokenizer(a) => train_tokenizer(a, ctx),
        Command::Analyze(a) => analyze_cmd(a, ctx),
        Command::GroupOverlap(a) => group_overlap(a, ctx),
        Command::CheckCorrelations(a) => check_correlations(a, ctx),
        Command::Factorize(a) => factorize(a, ctx),
        Command::Reconstruct(a) => reconstruct_cmd(a, ctx),
        Command::InitEmbeddings(a) => init_embeddings(a, ctx),
        Command::FitTarget(a) => fit_target_cmd(a, ctx),
        Command::ParamBudget(a) => param_budget_cmd(a, ctx),
        Command::ScriptReport(a) => script_report(a, ctx),
        Command::StackConfig(a) => stack_config(a, ctx),
    }
}

fn config_of<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

/// Writes `bytes` to `path` (or standard output) and, for files, a manifest.
fn emit(ctx: &mut Ctx<'_>, path: Option<&Path>, bytes: &[u8], manifest: RunManifest) -> CliResult<()> {
    match path {
        Some(p) => {
            fs::write(p, bytes)?;
            finish(ctx, manifest, &[p])
        }
        None => {
            ctx.out.write_all(bytes)?;
            Ok(())
        }
    }
}

fn finish(ctx: &mut Ctx<'_>, mut manifest: RunManifest, outputs: &[&Path]) -> CliResult<()> {
    for p in outputs {
        manifest.output(p)?;
    }
    let path = manifest.finish(outputs[0])?;
    writeln!(ctx.err, "wrote {} (manifest {})", outputs[0].display(), path.display())?;
    Ok(())
}

fn load_vocab(path: &Path, manifest: &mut RunManifest) -> CliResult<Vocabulary> {
    manifest.input(path)?;
    Ok(Vocabulary::load(path)?)
}

fn load_embeddings(path: &Path, manifest: &mut RunManifest) -> CliResult<Embeddings> {
    manifest.input(path)?;
    Ok(Embeddings::load(path)?)
}

fn load_model(input: &ModelInput, manifest: &mut RunManifest) -> CliResult<FactorizationModel> {
    manifest.input(&input.model)?;
    let stored = read_model(BufReader::new(fs::File::open(&input.model)?))?;
    let shared = if stored.up_projections.is_none() {
        let Some(base) = &input.base_model else {
            return Err(Failure::Usage(format!(
                "{} has no up-projections; pass --base-model",
                input.model.display()
            )));
        };
        manifest.input(base)?;
        let base = read_model(BufReader::new(fs::File::open(base)?))?.into_model(None)?;
        Some(base.shared_up_projections())
    } else {
        None
    };
    Ok(stored.into_model(shared)?)
}

fn save_model(model: &FactorizationModel, path: &Path, include_up_projections: bool) -> CliResult<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf, include_up_projections)?;
    fs::write(path, buf)?;
    Ok(())
}

fn write_trace(path: &Path, trace: &[f64]) -> CliResult<()> {
    let mut text = String::from("step\tloss\n");
    for (i, l) in trace.iter().enumerate() {
        text.push_str(&format!("{i}\t{l}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

fn check_vocab_hash(model: &FactorizationModel, tokens: &[String], what: &Path) -> CliResult<()> {
    if tokens.len() != model.num_tokens() {
        return Err(Failure::Lib(Error::shape(format!(
            "{} has {} tokens but the model has {} rows",
            what.display(),
            tokens.len(),
            model.num_tokens()
        ))));
    }
    if let Some(expected) = &model.meta().vocab_hash {
        if *expected != token_hash(tokens) {
            return Err(Failure::Lib(Error::format(
                "vocabulary",
                format!("{} does not match the model's vocabulary hash", what.display()),
            )));
        }
    }
    Ok(())
}

fn train_tokenizer(a: TrainTokenizerArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::start("train-tokenizer", config_of(&a), ctx.seed);
    manifest.input(&a.corpus)?;
    let lines = BufReader::new(fs::File::open(&a.corpus)?)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::format("corpus", e.to_string()))?;
    let vocab = train_wordpiece(&lines, a.size, &DEFAULT_SPECIALS)?;
    writeln!(ctx.err, "trained {} tokens", vocab.len())?;
    emit(ctx, Some(&a.out), &vocab.to_bytes(), manifest)
}

fn analyze_cmd(a: PairArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::start("analyze", config_of(&a), ctx.seed);
    let target = load_vocab(&a.target, &mut manifest)?;
    let base = load_vocab(&a.base, &mut manifest)?;
    let mut buf = Vec::new();
    analyze(&target, &base).write_tsv(&mut buf)?;
    emit(ctx, a.out.as_deref(), &buf, manifest)
}

fn group_overlap(a: GroupOverlapArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::start("group-overlap", config_of(&a), ctx.seed);
    let target = load_vocab(&a.pair.target, &mut manifest)?;
    let base = load_vocab(&a.pair.base, &mut manifest)?;
    let report = analyze(&target, &base);
    let mut text = String::new();
    if a.list {
        text.push_str("token\tgroup\n");
        for t in &lexical_overlap(&target, &base).tokens {
            text.push_str(&format!("{t}\t{}\n", classify_token(t).name()));
        }
    } else {
        text.push_str("group\tcount\n");
        for g in TokenGroup::ALL {
            text.push_str(&format!("{}\t{}\n", g.name(), report.grouping.get(g)));
        }
        text.push_str(&format!("total\t{}\n", report.grouping.total()));
    }
    emit(ctx, a.pair.out.as_deref(), text.as_bytes(), manifest)
}

fn check_correlations(a: CheckCorrelationsArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let rows = match &a.fixtures {
        Some(dir) => {
            let open = |name: &str| -> CliResult<BufReader<fs::File>> {
                Ok(BufReader::new(fs::File::open(dir.join(name))?))
            };
            join_metrics(open("table1_metrics.tsv")?, open("table4a_mbert.tsv")?)?
        }
        None => bundled_metrics()?,
    };
    let report = correlation_report(&rows)?;
    writeln!(ctx.out, "{report}")?;
    if report.lex_matches_reference() && report.unk_matches_reference() {
        Ok(())
    } else {
        Err(Failure::CheckFailed(format!(
            "r_unk = {:.4} (reference {REFERENCE_R_UNK}), r_lex = {:.4} (reference {REFERENCE_R_LEX})",
            report.r_unk, report.r_lex
        )))
    }
}

fn factorize(a: FactorizeArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::start("factorize", config_of(&a), ctx.seed);
    let emb = load_embeddings(&a.embeddings, &mut manifest)?;
    let x = &emb.matrix;
    let mut rng = Rng::new(ctx.seed);
    let (mut model, trace) = match a.method {
        MethodArg::SemiNmf => {
            let fit = semi_nmf(x, a.dim, a.training.steps, &mut rng)?;
            let meta = ModelMeta::new(Method::SemiNmf, a.dim, 1, x.cols(), a.training.steps, ctx.seed);
            let model = FactorizationModel::new(fit.f, Arc::new(vec![fit.g]), vec![0; x.rows()], None, meta)?;
            (model, Some(fit.error_trace))
        }
        MethodArg::Kmeans => (
            factorize_kmeans(x, a.clusters, a.dim, a.training.steps, &mut rng)?,
            None,
        ),
        MethodArg::Neural => {
            let config = NeuralConfig {
                clusters: a.clusters,
                d_prime: a.dim,
                steps: a.training.steps,
                tau: a.training.schedule(),
                lr: a.training.lr,
            };
            let (model, trace) = factorize_neural(x, &config, &mut rng)?;
            (model, Some(trace))
        }
    };
    model.meta_mut().vocab_hash = Some(token_hash(&emb.tokens));
    save_model(&model, &a.out, true)?;
    let mut outputs = vec![a.out.as_path()];
    if let (Some(path), Some(trace)) = (&a.training.trace, &trace) {
        write_trace(path, trace)?;
        outputs.push(path);
    }
    writeln!(
        ctx.err,
        "{}: {} tokens, D′ = {}, C = {}",
        model.meta().method.as_str(),
        model.num_tokens(),
        model.d_prime(),
        model.clusters()
    )?;
    finish(ctx, manifest, &outputs)
}

fn reconstruct_cmd(a: ReconstructArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::start("reconstruct", config_of(&a), ctx.seed);
    let model = load_model(&a.input, &mut manifest)?;
    let vocab = load_vocab(&a.vocab, &mut manifest)?;
    check_vocab_hash(&model, vocab.tokens(), &a.vocab)?;
    let emb = Embeddings::for_vocab(&vocab, reconstruct(&model))?;
    emit(ctx, Some(&a.out), &emb.to_bytes(a.format.into())?, manifest)
}

fn init_embeddings(a: InitEmbeddingsArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::start("init-embeddings", config_of(&a), ctx.seed);
    let new_vocab = load_vocab(&a.new_vocab, &mut manifest)?;
    let base_vocab = load_vocab(&a.base_vocab, &mut manifest)?;
    let spec = InitSpec {
        strategy: a.strategy.into(),
        rand_stddev: a.stddev,
        seed: ctx.seed,
    };
    if spec.strategy.is_factorized() {
        let Some(base_model) = &a.base_model else {
            return Err(Failure::Usage(format!("{} needs --base-model", spec.strategy.as_str())));
        };
        let input = ModelInput {
            model: base_model.clone(),
            base_model: None,
        };
        let base = load_model(&input, &mut manifest)?;
        check_vocab_hash(&base, base_vocab.tokens(), &a.base_vocab)?;
        let mut model = init_embeddings_mf(&new_vocab, &base_vocab, &base, &spec)?;
        model.meta_mut().vocab_hash = Some(token_hash(new_vocab.tokens()));
        save_model(&model, &a.out, !a.exclude_up_projections)?;
        finish(ctx, manifest, &[&a.out])
    } else {
        let Some(path) = &a.base_embeddings else {
            return Err(Failure::Usage(format!("{} needs --base-embeddings", spec.strategy.as_str())));
        };
        let base = load_embeddings(path, &mut manifest)?;
        if base.tokens != base_vocab.tokens() {
            return Err(Failure::Lib(Error::format(
                "embeddings",
                format!("{} rows do not match {}", path.display(), a.base_vocab.display()),
            )));
        }
        let x = init_embeddings_el(&new_vocab, &base_vocab, &base.matrix, &spec)?;
        let emb = Embeddings::for_vocab(&new_vocab, x)?;
        emit(ctx, Some(&a.out), &emb.to_bytes(a.format.into())?, manifest)
    }
}

fn fit_target_cmd(a: FitTargetArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::start("fit-target", config_of(&a), ctx.seed);
    let model = load_model(&a.input, &mut manifest)?;
    let target = load_embeddings(&a.target, &mut manifest)?;
    check_vocab_hash(&model, &target.tokens, &a.target)?;
    let (fitted, trace) = fit_target(
        &model,
        &target.matrix,
        a.training.steps,
        a.training.lr,
        a.training.schedule(),
        &mut Rng::new(ctx.seed),
    )?;
    save_model(&fitted, &a.out, !a.exclude_up_projections)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(path) = &a.training.trace {
        write_trace(path, &trace)?;
        outputs.push(path);
    }
    writeln!(
        ctx.err,
        "loss {:.6} -> {:.6}",
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN)
    )?;
    finish(ctx, manifest, &outputs)
}

fn param_budget_cmd(a: ParamBudgetArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mode = match a.mode {
        ModeArg::El => BudgetMode::El,
        ModeArg::Mf => BudgetMode::Mf,
    };
    let budget = param_budget(a.v_new, a.d, a.d_prime, a.clusters, mode);
    writeln!(ctx.out, "tensor\tparams")?;
    for (name, n) in &budget.breakdown {
        writeln!(ctx.out, "{name}\t{n}")?;
    }
    writeln!(ctx.out, "total\t{}", budget.trainable_new_params)?;
    Ok(())
}

fn script_report(a: ScriptReportArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::start("script-report", config_of(&a), ctx.seed);
    let model = load_model(&a.input, &mut manifest)?;
    let vocab = load_vocab(&a.vocab, &mut manifest)?;
    check_vocab_hash(&model, vocab.tokens(), &a.vocab)?;
    let report = cluster_script_report(&model, &vocab)?;
    let mut text = String::from("cluster\tscript\tcount\n");
    for (c, scripts) in report.iter().enumerate() {
        for (script, n) in scripts {
            text.push_str(&format!("{c}\t{script}\t{n}\n"));
        }
    }
    emit(ctx, a.out.as_deref(), text.as_bytes(), manifest)
}

fn stack_config(a: StackConfigArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let manifest = RunManifest::start("stack-config", config_of(&a), ctx.seed);
    let variant = match a.variant {
        VariantArg::MadX => Variant::MadX,
        VariantArg::MadX2 => Variant::MadX2,
    };
    let mut json = madx_stack_config(a.layers, variant)?.to_json()?;
    json.push('\n');
    emit(ctx, a.out.as_deref(), json.as_bytes(), manifest)
}
