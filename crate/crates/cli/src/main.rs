//! `mse-lab`: build, align and evaluate modular sentence encoders on a
//! synthetic language family.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mse_lab::encoder::EncoderModel;
use mse_lab::evalharness::{embed_texts, eval_mcqa, eval_sts, Embedders, EvalReport, Mode, Task};
use mse_lab::experiment::{
    generate_data, read_pairs_tsv, run_experiment, translation_batches, write_pairs_tsv, Encoder, ExperimentConfig,
};
use mse_lab::numerics::RngState;
use mse_lab::synthlang::{read_corpus_tsv, read_mcqa_tsv, read_sts_tsv, write_corpus_tsv, write_mcqa_tsv, write_sts_tsv};
use mse_lab::tokenizer::{train_bpe, BpeModel};
use mse_lab::training::{
    check_batches, cla_batches, gradient_checks, mono_batches, plan_alignment, single_c_batches, single_m_batches,
    tokenize_all, tokenize_items, train_cla, train_contrastive, train_mlm, AlignStrategy, BaseVariant, PhaseStats,
    Regime, TrainConfig, TrainingManifest,
};
use mse_lab::transplant::transplant_model;
use mse_lab::{Error, Result};

/// Exit code for malformed command lines (kept apart from the error codes below).
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "mse-lab", version, about = "Modular multilingual sentence encoders on a synthetic language family")]
struct Cli {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seeds with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "MSE_LAB_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for per-language jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate corpora and benchmarks into <out>/data.
    GenData,
    /// Train a BPE tokenizer on text files (one sentence per line).
    TrainTokenizer {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pretrain the shared base model.
    PretrainBase {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long, default_value = "mlm_only")]
        variant: BaseVariant,
        /// MLM text; required unless continuing from --init.
        #[arg(long, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Translation pairs for the contrastive phase.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// An mlm_only base to continue from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Move a base model onto a new tokenizer.
    Transplant {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        base_tokenizer: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Target-language text for the auxiliary embeddings.
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Continue MLM training on one language.
    AdaptMlm {
        #[arg(long, required_unless_present = "random_init")]
        model: Option<PathBuf>,
        /// Start from random weights instead of a transplanted model.
        #[arg(long, conflicts_with = "model")]
        random_init: bool,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Contrastive sentence-level training.
    TrainSent {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Paraphrase corpus TSV.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        regime: Regime,
        /// Language of a multi_m model.
        #[arg(long)]
        lang: Option<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Align a language model to the pivot with an adapter.
    TrainCla {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        pivot_model: PathBuf,
        #[arg(long)]
        pivot_tokenizer: PathBuf,
        /// Defaults to the configured pivot.
        #[arg(long)]
        pivot_lang: Option<String>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Embed lines of text (a file or stdin), one vector per output line.
    Encode {
        #[command(flatten)]
        src: ModelSource,
        #[arg(long, default_value = "mono")]
        mode: Mode,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score an STS benchmark; CSV report rows on stdout.
    EvalSts {
        #[command(flatten)]
        src: ModelSource,
        #[arg(long)]
        sts: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Score an MCQA benchmark; CSV report rows on stdout.
    EvalMcqa {
        #[command(flatten)]
        src: ModelSource,
        #[arg(long)]
        mcqa: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Finite-difference check of the MLM and MNRL gradients.
    GradCheck,
    /// Run every configured regime for every seed.
    RunExperiment,
    /// Print the effective configuration as JSON.
    PrintConfig,
}

/// Either one shared model, or a directory of `<lang>.msew` / `<lang>.bpe`.
#[derive(Args)]
struct ModelSource {
    #[arg(long, requires = "tokenizer", conflicts_with = "dir")]
    model: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long, required_unless_present = "model")]
    dir: Option<PathBuf>,
    /// With --dir: the language to encode.
    #[arg(long)]
    lang: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Both modes when omitted.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "cli")]
    regime: String,
    #[arg(long, default_value = "-")]
    base_variant: String,
    /// Restrict the benchmark to these languages (comma-separated).
    #[arg(long, value_delimiter = ',')]
    langs: Vec<String>,
}

impl EvalArgs {
    fn keeps(&self, a: &str, b: &str) -> bool {
        self.langs.is_empty() || (self.langs.iter().any(|l| l == a) && self.langs.iter().any(|l| l == b))
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    jobs: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("mse-lab: error[usage]: {line}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = classify(&e);
            eprintln!("mse-lab: error[{kind}]: {}", e.to_string().replace(['\n', '\r'], " "));
            ExitCode::from(code)
        }
    }
}

fn classify(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => (2, "missing_file"),
        Error::Schema(_) => (3, "schema"),
        Error::PhaseOrder(_) => (4, "phase_order"),
        Error::Phase { source, .. } => classify(source),
        _ => (1, "failed"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let out = cli.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("mse-lab-out"));
    let ctx = Ctx { seed: cfg.seeds[0], cfg, out, jobs: cli.jobs.max(1) };
    match cli.cmd {
        Cmd::GenData => gen_data(&ctx),
        Cmd::TrainTokenizer { corpus, vocab_size, output } => {
            let text = read_lines(&corpus)?;
            let bpe = train_bpe(&text, vocab_size.unwrap_or(ctx.cfg.vocab_size))?;
            create_parent(&output)?;
            bpe.save(&output)?;
            println!("{} tokens -> {}", bpe.vocab_size(), output.display());
            Ok(())
        }
        Cmd::PretrainBase { tokenizer, variant, corpus, pairs, init, output } => {
            pretrain_base(&ctx, &tokenizer, variant, &corpus, pairs.as_deref(), init.as_deref(), &output)
        }
        Cmd::Transplant { base, base_tokenizer, tokenizer, corpus, output } => {
            let history = history_of(&base)?;
            TrainingManifest::require(&history, "transplant", &["pretrain-base:mlm_only", "pretrain-base:mlm_plus_contrastive"])?;
            let model = EncoderModel::load_weights(&base)?;
            let (src, tgt) = (BpeModel::load(&base_tokenizer)?, BpeModel::load(&tokenizer)?);
            let text = read_lines(&corpus)?;
            let (m, report) = transplant_model(&model, &src, &tgt, &text, ctx.cfg.aux_dim, ctx.cfg.aux_window)?;
            save(&m, &output, &ctx.cfg.adapt_mlm, ctx.seed, extend(history, "transplant"), vec![])?;
            println!(
                "overlap={} anchors_with_aux={} fallback={} -> {}",
                report.overlap,
                report.anchors_with_aux,
                report.fallback_tokens.len(),
                output.display()
            );
            Ok(())
        }
        Cmd::AdaptMlm { model, random_init, tokenizer, corpus, output } => {
            let bpe = BpeModel::load(&tokenizer)?;
            let rng = RngState::new(ctx.seed);
            let (mut m, history) = match model {
                Some(p) if !random_init => {
                    let history = history_of(&p)?;
                    TrainingManifest::require(&history, "adapt-mlm", &["transplant"])?;
                    let m = EncoderModel::load_weights(&p)?;
                    if m.config.vocab_size != bpe.vocab_size() {
                        return Err(Error::Shape(format!("model vocabulary {} != tokenizer {}", m.config.vocab_size, bpe.vocab_size())));
                    }
                    (m, history)
                }
                _ => {
                    let mut c = ctx.cfg.encoder.clone();
                    c.vocab_size = bpe.vocab_size();
                    (EncoderModel::new(c, &rng.fork("independent-init"))?, vec!["init:random".to_string()])
                }
            };
            let ids = tokenize_all(&bpe, &read_lines(&corpus)?, ctx.cfg.adapt_mlm.mlm_max_len);
            let stats = train_mlm(&mut m, &ids, &bpe.vocab.specials, &ctx.cfg.adapt_mlm, &rng.fork("adapt-mlm"))?;
            report_stats(&stats);
            save(&m, &output, &ctx.cfg.adapt_mlm, ctx.seed, extend(history, "adapt-mlm"), vec![stats])
        }
        Cmd::TrainSent { model, tokenizer, corpus, regime, lang, output } => {
            train_sent(&ctx, &model, &tokenizer, &corpus, regime, lang.as_deref(), &output)
        }
        Cmd::TrainCla { model, tokenizer, lang, pivot_model, pivot_tokenizer, pivot_lang, corpus, output } => {
            let pivot_lang = pivot_lang.unwrap_or_else(|| ctx.cfg.pivot.clone());
            let history = history_of(&model)?;
            TrainingManifest::require(&history, "train-cla", &["train-sent:multi_m"])?;
            TrainingManifest::require(&history_of(&pivot_model)?, "train-cla (pivot)", &["train-sent:multi_m"])?;
            let mut target = EncoderModel::load_weights(&model)?;
            let mut pivot = EncoderModel::load_weights(&pivot_model)?;
            let (bpe, pivot_bpe) = (BpeModel::load(&tokenizer)?, BpeModel::load(&pivot_tokenizer)?);
            let texts = read_corpus_tsv(&corpus)?;
            let get = |l: &str| texts.get(l).ok_or_else(|| Error::MissingLanguage(l.to_string()));
            let cfg = &ctx.cfg;
            let plan = plan_alignment(&[lang.clone(), pivot_lang.clone()], &pivot_lang, AlignStrategy::BilingualToPivot)?;
            let (a, b) = plan.jobs.first().ok_or_else(|| Error::Invalid(format!("{lang} is the pivot")))?;
            let rng = RngState::new(ctx.seed);
            target.attach_adapter(cfg.encoder.adapter_bottleneck, cfg.encoder.adapter_scale, &rng.fork(&format!("adapter/{lang}")))?;
            pivot.set_frozen_base(true);
            let batches = cla_batches(
                &tokenize_items(&pivot_bpe, get(&pivot_lang)?, cfg.cla.max_len),
                &tokenize_items(&bpe, get(&lang)?, cfg.cla.max_len),
                cfg.cla.batch_size,
                &rng.fork(&format!("cla/{a}/{b}")),
            )?;
            let stats = train_cla(&mut target, &mut pivot, &batches, &cfg.cla)?;
            report_stats(&stats);
            save(&target, &output, &cfg.cla, ctx.seed, extend(history, "train-cla"), vec![stats])
        }
        Cmd::Encode { src, mode, input } => {
            let enc = load_one(&src)?;
            let mut text = String::new();
            match input {
                Some(p) => text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?,
                None => {
                    std::io::stdin().read_to_string(&mut text).map_err(|e| Error::io("<stdin>", e))?;
                }
            }
            let lines: Vec<String> = text.lines().map(str::to_string).collect();
            let use_adapter = mode == Mode::Cross && enc.model.has_adapter();
            for v in embed_texts(&enc.model, &enc.bpe, ctx.cfg.eval_len(), use_adapter, &lines)? {
                let cells: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                println!("{}", cells.join(" "));
            }
            Ok(())
        }
        Cmd::EvalSts { src, sts, eval } => {
            let mut bench = read_sts_tsv(&sts)?;
            bench.pairs.retain(|p| eval.keeps(&p.lang_a, &p.lang_b));
            let langs: BTreeSet<String> = bench.pairs.iter().flat_map(|p| [p.lang_a.clone(), p.lang_b.clone()]).collect();
            evaluate(&ctx, &src, &langs, &eval, Task::Sts, |e, mode| eval_sts(e, &bench, mode))
        }
        Cmd::EvalMcqa { src, mcqa, eval } => {
            let mut bench = read_mcqa_tsv(&mcqa)?;
            bench.items.retain(|i| eval.keeps(&i.lang_passage, &i.lang_qa));
            let langs: BTreeSet<String> =
                bench.items.iter().flat_map(|i| [i.lang_passage.clone(), i.lang_qa.clone()]).collect();
            evaluate(&ctx, &src, &langs, &eval, Task::Mcqa, |e, mode| eval_mcqa(e, &bench, mode))
        }
        Cmd::GradCheck => {
            let (mlm, mnrl) = gradient_checks(ctx.seed)?;
            println!("mlm_max_rel_err={mlm:.3e} mnrl_max_rel_err={mnrl:.3e} tolerance=1e-4");
            if mlm < 1e-4 && mnrl < 1e-4 {
                Ok(())
            } else {
                Err(Error::Invalid(format!("gradient check failed: mlm {mlm:.3e}, mnrl {mnrl:.3e}")))
            }
        }
        Cmd::RunExperiment => {
            let (report, manifest) = run_experiment(&ctx.cfg, &ctx.out, ctx.jobs)?;
            manifest.verify(&ctx.out)?;
            println!("{} rows -> {}", report.rows.len(), ctx.out.join(&manifest.report).display());
            println!("manifest -> {}", ctx.out.join("manifest.json").display());
            Ok(())
        }
        Cmd::PrintConfig => {
            println!("{}", serde_json::to_string_pretty(&ctx.cfg)?);
            Ok(())
        }
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let data = generate_data(&ctx.cfg, ctx.seed)?;
    let dir = ctx.out.join("data");
    let mlm_dir = dir.join("mlm");
    std::fs::create_dir_all(&mlm_dir).map_err(|e| Error::io(&mlm_dir, e))?;
    for (l, lines) in &data.mlm {
        let p = mlm_dir.join(format!("{l}.txt"));
        std::fs::write(&p, lines.join("\n") + "\n").map_err(|e| Error::io(&p, e))?;
    }
    write_corpus_tsv(&dir.join("corpus.tsv"), &data.para)?;
    write_pairs_tsv(&dir.join("base_pairs.tsv"), &data.base_pairs)?;
    write_sts_tsv(&dir.join("sts.tsv"), &data.sts)?;
    write_mcqa_tsv(&dir.join("mcqa.tsv"), &data.mcqa)?;
    println!("{} languages, {} paraphrase items -> {}", data.langs.len(), data.para.items.len(), dir.display());
    Ok(())
}

fn pretrain_base(
    ctx: &Ctx,
    tokenizer: &Path,
    variant: BaseVariant,
    corpus: &[PathBuf],
    pairs: Option<&Path>,
    init: Option<&Path>,
    output: &Path,
) -> Result<()> {
    let cfg = &ctx.cfg;
    let bpe = BpeModel::load(tokenizer)?;
    let rng = RngState::new(ctx.seed);
    let mut phases = Vec::new();
    let (mut model, history) = match init {
        Some(p) => {
            let history = history_of(p)?;
            TrainingManifest::require(&history, "pretrain-base", &["pretrain-base:mlm_only"])?;
            (EncoderModel::load_weights(p)?, history)
        }
        None => {
            if corpus.is_empty() {
                return Err(Error::Invalid("pretrain-base needs --corpus or --init".into()));
            }
            let mut c = cfg.encoder.clone();
            c.vocab_size = bpe.vocab_size();
            let mut m = EncoderModel::new(c, &rng.fork("base-init"))?;
            let ids = tokenize_all(&bpe, &read_lines(corpus)?, cfg.base_mlm.mlm_max_len);
            let stats = train_mlm(&mut m, &ids, &bpe.vocab.specials, &cfg.base_mlm, &rng.fork("base-mlm"))?;
            report_stats(&stats);
            phases.push(stats);
            (m, vec!["pretrain-base:mlm_only".to_string()])
        }
    };
    let mut tc = &cfg.base_mlm;
    let history = match variant {
        BaseVariant::MlmOnly if init.is_some() => return Err(Error::Invalid("--init only applies to mlm_plus_contrastive".into())),
        BaseVariant::MlmOnly => history,
        BaseVariant::MlmPlusContrastive => {
            let p = pairs.ok_or_else(|| Error::Invalid("mlm_plus_contrastive needs --pairs".into()))?;
            let batches = translation_batches(&read_pairs_tsv(p)?, &bpe, &cfg.base_contrastive, &rng.fork("base-pairs"));
            let stats = train_contrastive(&mut model, &batches, &cfg.base_contrastive, false)?;
            report_stats(&stats);
            phases.push(stats);
            tc = &cfg.base_contrastive;
            extend(history, "pretrain-base:mlm_plus_contrastive")
        }
    };
    save(&model, output, tc, ctx.seed, history, phases)
}

fn train_sent(
    ctx: &Ctx,
    model: &Path,
    tokenizer: &Path,
    corpus: &Path,
    regime: Regime,
    lang: Option<&str>,
    output: &Path,
) -> Result<()> {
    let cfg = &ctx.cfg;
    let history = history_of(model)?;
    let phase = format!("train-sent:{regime}");
    let required: &[&str] = match regime {
        Regime::MultiM => &["adapt-mlm"],
        Regime::SingleMc => &["train-sent:single_m"],
        Regime::SingleM | Regime::SingleC => &["pretrain-base:mlm_only", "pretrain-base:mlm_plus_contrastive"],
        Regime::MultiMc => return Err(Error::Invalid("multi_mc is train-sent --regime multi_m followed by train-cla".into())),
    };
    TrainingManifest::require(&history, &phase, required)?;
    let mut m = EncoderModel::load_weights(model)?;
    let bpe = BpeModel::load(tokenizer)?;
    let texts = read_corpus_tsv(corpus)?;
    let rng = RngState::new(ctx.seed);
    let bs = cfg.contrastive.batch_size;
    let batches = if regime == Regime::MultiM {
        let lang = lang.ok_or_else(|| Error::Invalid("multi_m needs --lang".into()))?;
        let items = texts.get(lang).ok_or_else(|| Error::MissingLanguage(lang.to_string()))?;
        let pairs = tokenize_items(&bpe, items, cfg.contrastive.max_len);
        // The same item order for every language keeps batches parallel.
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.fork("multi-order").shuffle(&mut order);
        mono_batches(lang, &pairs, &order, bs)
    } else {
        let tok: BTreeMap<String, _> =
            texts.iter().map(|(l, items)| (l.clone(), tokenize_items(&bpe, items, cfg.contrastive.max_len))).collect();
        match regime {
            Regime::SingleM => single_m_batches(&tok, bs, &rng.fork("single_m")),
            _ => single_c_batches(&tok, bs, &rng.fork("single_c"))?,
        }
    };
    check_batches(regime, &batches)?;
    let stats = train_contrastive(&mut m, &batches, &cfg.contrastive, false)?;
    report_stats(&stats);
    save(&m, output, &cfg.contrastive, ctx.seed, extend(history, &phase), vec![stats])
}

fn evaluate<F>(ctx: &Ctx, src: &ModelSource, langs: &BTreeSet<String>, args: &EvalArgs, task: Task, score: F) -> Result<()>
where
    F: Fn(&Embedders<'_>, Mode) -> Result<Vec<mse_lab::evalharness::Score>>,
{
    let max_len = ctx.cfg.eval_len();
    let encoders: BTreeMap<String, Encoder> = match (&src.model, &src.dir) {
        (Some(_), _) => {
            let enc = load_one(src)?;
            langs.iter().map(|l| (l.clone(), enc.clone())).collect()
        }
        (None, Some(dir)) => langs.iter().map(|l| Ok((l.clone(), load_pair(dir, l)?))).collect::<Result<_>>()?,
        (None, None) => return Err(Error::Invalid("--model or --dir is required".into())),
    };
    let embedders = |use_adapter: bool| {
        let mut e = Embedders::new();
        for (l, enc) in &encoders {
            let adapter = use_adapter && enc.model.has_adapter();
            e.insert(l.clone(), Box::new(move |t: &[String]| embed_texts(&enc.model, &enc.bpe, max_len, adapter, t)));
        }
        e
    };
    let modes = args.mode.map_or(vec![Mode::Mono, Mode::Cross], |m| vec![m]);
    let mut report = EvalReport::default();
    for mode in modes {
        let scores = score(&embedders(mode == Mode::Cross), mode)?;
        report.push_scores(&args.regime, &args.base_variant, task, ctx.seed, &scores);
    }
    report.sort();
    print!("{}", report.to_csv());
    Ok(())
}

fn load_pair(dir: &Path, lang: &str) -> Result<Encoder> {
    Ok(Encoder {
        model: EncoderModel::load_weights(&dir.join(format!("{lang}.msew")))?,
        bpe: BpeModel::load(&dir.join(format!("{lang}.bpe")))?,
    })
}

fn load_one(src: &ModelSource) -> Result<Encoder> {
    match (&src.model, &src.tokenizer, &src.dir, &src.lang) {
        (Some(m), Some(t), _, _) => Ok(Encoder { model: EncoderModel::load_weights(m)?, bpe: BpeModel::load(t)? }),
        (_, _, Some(d), Some(l)) => load_pair(d, l),
        (_, _, Some(_), None) => Err(Error::Invalid("--dir needs --lang".into())),
        _ => Err(Error::Invalid("--model and --tokenizer are required".into())),
    }
}

fn history_of(weights: &Path) -> Result<Vec<String>> {
    if !weights.exists() {
        return Err(Error::io(weights, std::io::ErrorKind::NotFound.into()));
    }
    Ok(TrainingManifest::load_for(weights)?.map(|m| m.history).unwrap_or_default())
}

fn extend(mut history: Vec<String>, phase: &str) -> Vec<String> {
    history.push(phase.to_string());
    history
}

fn save(model: &EncoderModel, output: &Path, cfg: &TrainConfig, seed: u64, history: Vec<String>, phases: Vec<PhaseStats>) -> Result<()> {
    create_parent(output)?;
    model.save_weights(output)?;
    TrainingManifest { config: cfg.clone(), seed, history, phases }.save_for(output)?;
    println!("-> {}", output.display());
    Ok(())
}

fn report_stats(s: &PhaseStats) {
    log::info!("{}: {} steps, loss {:.4} -> {:.4} in {:.1}s", s.phase, s.steps, s.first_loss, s.final_loss, s.wall_time_s);
}

fn read_lines(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        out.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
    }
    Ok(out)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}
