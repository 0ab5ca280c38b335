//! End-to-end experiment runner: data generation, base pretraining, the
//! Single and Multi regimes, ablations, evaluation, and the run manifest.
//!
//! Phases run in pipeline order per seed: initialisation (base model,
//! transplant) → monolingual specialisation (MLM, contrastive) →
//! cross-lingual alignment (CLA adapters).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{hex, sidecar_path, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::evalharness::{embed_texts, eval_mcqa, eval_sts, Embedders, EvalReport, Mode, Task};
use crate::numerics::RngState;
use crate::synthlang::{
    build_items, build_mcqa, build_multiparallel, build_sts, default_languages, gen_concept_corpus, mlm_corpus,
    realize_items, CorpusKnobs, Family, InventoryConfig, LanguageDef, McqaBenchmark, MultiParallelCorpus,
    ParaphraseKnobs, RealizedItem, StsBenchmark,
};
use crate::tokenizer::{train_bpe, BpeModel, DEFAULT_VOCAB_SIZE};
use crate::training::{
    batch_mnrl_loss, check_batches, cla_batches, mono_batches, plan_alignment, single_c_batches, single_m_batches,
    tokenize_all, tokenize_items, train_cla, train_contrastive, train_mlm, AlignStrategy, BaseVariant, Batch,
    PairIds, PhaseStats, Regime, RegimeSpec, TrainConfig,
};
use crate::transplant::{transplant_model, DEFAULT_AUX_DIM, DEFAULT_WINDOW};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Multi-parallel paraphrase items (realised in every language).
    pub paraphrase_items: usize,
    pub heldout_items: usize,
    /// MLM sentences per high-resource language.
    pub mlm_sentences: usize,
    /// Low-resource languages get `mlm_sentences / low_resource_factor`.
    pub low_resource_factor: usize,
    /// Translation pairs for the contrastive phase of the base model.
    pub base_pairs: usize,
    pub sts_sentences: usize,
    pub sts_levels: Vec<f64>,
    pub mcqa_items: usize,
    pub corpus: CorpusKnobs,
    pub paraphrase: ParaphraseKnobs,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            paraphrase_items: 2000,
            heldout_items: 64,
            mlm_sentences: 4000,
            low_resource_factor: 10,
            base_pairs: 8000,
            sts_sentences: 250,
            sts_levels: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            mcqa_items: 150,
            corpus: CorpusKnobs::default(),
            paraphrase: ParaphraseKnobs::default(),
        }
    }
}

/// Every regime once, plus the ablations: independent initialisation,
/// a non-parallel pivot, and the two alternative alignment strategies.
pub fn default_runs() -> Vec<RegimeSpec> {
    use AlignStrategy::*;
    use BaseVariant::*;
    use Regime::*;
    let run = |regime, base_variant, align_strategy, multiparallel, shared_init| RegimeSpec {
        regime,
        base_variant,
        align_strategy,
        multiparallel,
        shared_init,
    };
    vec![
        run(SingleM, MlmOnly, BilingualToPivot, true, true),
        run(SingleM, MlmPlusContrastive, BilingualToPivot, true, true),
        run(SingleC, MlmPlusContrastive, BilingualToPivot, true, true),
        run(SingleMc, MlmPlusContrastive, BilingualToPivot, true, true),
        run(MultiM, MlmPlusContrastive, BilingualToPivot, true, true),
        run(MultiMc, MlmPlusContrastive, BilingualToPivot, true, true),
        run(MultiMc, MlmPlusContrastive, AllPairs, true, true),
        run(MultiMc, MlmPlusContrastive, AllPairsInclPivot, true, true),
        run(MultiM, MlmPlusContrastive, BilingualToPivot, true, false),
        run(MultiM, MlmPlusContrastive, BilingualToPivot, false, true),
    ]
}

fn train(batch_size: usize, lr: f64, adapter_lr: f64, epochs: usize, mlm_steps: usize) -> TrainConfig {
    TrainConfig { batch_size, lr, adapter_lr, epochs, mlm_steps, max_len: 128, mlm_max_len: 64, ..TrainConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub languages: Vec<LanguageDef>,
    pub pivot: String,
    pub inventory: InventoryConfig,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub vocab_size: usize,
    pub aux_dim: usize,
    pub aux_window: usize,
    pub base_mlm: TrainConfig,
    pub base_contrastive: TrainConfig,
    pub adapt_mlm: TrainConfig,
    pub contrastive: TrainConfig,
    pub cla: TrainConfig,
    /// Regimes to run; ablations are runs with `shared_init` or
    /// `multiparallel` off, or a non-default `align_strategy`.
    pub runs: Vec<RegimeSpec>,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            languages: default_languages(),
            pivot: "sa".into(),
            inventory: InventoryConfig::default(),
            data: DataConfig::default(),
            encoder: EncoderConfig { d_model: 32, d_ff: 64, adapter_bottleneck: 16, ..EncoderConfig::default() },
            vocab_size: DEFAULT_VOCAB_SIZE,
            aux_dim: DEFAULT_AUX_DIM,
            aux_window: DEFAULT_WINDOW,
            base_mlm: train(32, 1e-3, 1e-3, 1, 1000),
            base_contrastive: train(32, 1e-3, 1e-3, 8, 0),
            adapt_mlm: train(32, 5e-4, 1e-3, 1, 300),
            contrastive: train(32, 2e-3, 1e-3, 6, 0),
            cla: train(32, 2e-3, 2e-3, 6, 0),
            runs: default_runs(),
            seeds: vec![1, 2, 3],
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let ids: Vec<&str> = self.languages.iter().map(|l| l.id.as_str()).collect();
        if ids.len() < 2 {
            return Err(Error::Schema("at least two languages are required".into()));
        }
        if ids.iter().enumerate().any(|(i, a)| ids[..i].contains(a)) {
            return Err(Error::Schema("language ids must be unique".into()));
        }
        if ids.iter().any(|id| id.contains([',', '-', '\t'])) {
            return Err(Error::Schema("language ids may not contain ',', '-' or tabs".into()));
        }
        if !ids.contains(&self.pivot.as_str()) {
            return Err(Error::Schema(format!("pivot {:?} is not a listed language", self.pivot)));
        }
        if self.runs.is_empty() {
            return Err(Error::Schema("no regimes to run".into()));
        }
        for r in &self.runs {
            r.validate().map_err(|e| Error::Schema(e.to_string()))?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Schema("at least one seed is required".into()));
        }
        if self.data.low_resource_factor == 0 || self.data.paraphrase_items < 2 || self.data.heldout_items < 2 {
            return Err(Error::Schema("data sizes must be positive".into()));
        }
        self.encoder.validate().map_err(|e| Error::Schema(format!("encoder: {e}")))?;
        for (name, tc, mlm) in [
            ("base_mlm", &self.base_mlm, true),
            ("base_contrastive", &self.base_contrastive, false),
            ("adapt_mlm", &self.adapt_mlm, true),
            ("contrastive", &self.contrastive, false),
            ("cla", &self.cla, false),
        ] {
            tc.validate().map_err(|e| Error::Schema(format!("{name}: {e}")))?;
            let len = if mlm { tc.mlm_max_len } else { tc.max_len };
            if len > self.encoder.max_len {
                return Err(Error::Schema(format!("{name}: max_len exceeds the encoder's position table")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn lang_ids(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.id.clone()).collect()
    }

    pub fn eval_len(&self) -> usize {
        self.encoder.max_len
    }
}

fn digest_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn digest_json(v: &serde_json::Value) -> String {
    digest_bytes(v.to_string().as_bytes())
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub seed: u64,
    pub phase: String,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<PhaseStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_after: Option<f64>,
    pub cached: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub phases: Vec<PhaseRecord>,
    /// Output-relative path → sha256 of the file.
    pub artifacts: BTreeMap<String, String>,
    pub report: String,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Checks every artifact digest against the file on disk.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for (rel, digest) in &self.artifacts {
            let path = root.join(rel);
            let actual = file_digest(&path)?;
            if &actual != digest {
                return Err(Error::format(&path, format!("digest mismatch: manifest {digest}, file {actual}")));
            }
        }
        Ok(())
    }
}

/// Everything generated from the synthetic family for one seed.
pub struct SeedData {
    pub family: Family,
    pub langs: Vec<String>,
    pub mlm: BTreeMap<String, Vec<String>>,
    pub para: MultiParallelCorpus,
    pub heldout: BTreeMap<String, Vec<RealizedItem>>,
    /// Pivot paraphrases over different concept sentences.
    pub pivot_alt: Vec<RealizedItem>,
    /// `(lang_a, text_a, lang_b, text_b)` translation pairs.
    pub base_pairs: Vec<(String, String, String, String)>,
    pub sts: StsBenchmark,
    pub mcqa: McqaBenchmark,
}

pub fn generate_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let rng = RngState::new(seed);
    let d = &cfg.data;
    let family = Family::new(&cfg.inventory, &cfg.languages, &cfg.pivot, &rng.fork("family"))?;
    let langs = cfg.lang_ids();
    let mut mlm = BTreeMap::new();
    for def in &cfg.languages {
        let n = if def.low_resource { d.mlm_sentences / d.low_resource_factor } else { d.mlm_sentences };
        mlm.insert(def.id.clone(), mlm_corpus(&family, &def.id, n, &rng.fork("mlm"))?);
    }
    let para = build_multiparallel(&family, d.paraphrase_items, &d.corpus, &d.paraphrase, &rng.fork("para"))?;
    let held = build_multiparallel(&family, d.heldout_items, &d.corpus, &d.paraphrase, &rng.fork("heldout"))?;
    let (alt_items, _) = build_items(&family, d.paraphrase_items, &d.corpus, &d.paraphrase, &rng.fork("pivot-alt"))?;
    let pivot_alt = realize_items(&family, &alt_items, &cfg.pivot, d.corpus.translation_noise, &rng.fork("pivot-alt"))?;

    let (base_items, _) = build_items(&family, d.base_pairs, &d.corpus, &d.paraphrase, &rng.fork("base-pairs"))?;
    let mut realized = BTreeMap::new();
    for l in &langs {
        realized.insert(l.clone(), realize_items(&family, &base_items, l, d.corpus.translation_noise, &rng.fork("base-pairs"))?);
    }
    let mut r = rng.fork("base-pair-langs");
    let base_pairs = (0..base_items.len())
        .map(|i| {
            let a = r.below(langs.len());
            let b = (a + 1 + r.below(langs.len() - 1)) % langs.len();
            let (la, lb) = (&langs[a], &langs[b]);
            (la.clone(), realized[la][i].anchor.clone(), lb.clone(), realized[lb][i].anchor.clone())
        })
        .collect();

    let n_eval = d.sts_sentences + 6 * d.mcqa_items;
    let eval_sents = gen_concept_corpus(&rng.fork("eval"), n_eval, &family.inventory)?;
    let sts = build_sts(&family, &eval_sents[..d.sts_sentences], &d.sts_levels, &langs, &rng.fork("sts"))?;
    let mcqa = build_mcqa(&family, &eval_sents[d.sts_sentences..], d.mcqa_items, &langs, &rng.fork("mcqa"))?;
    Ok(SeedData { family, langs, mlm, para, heldout: held.texts, pivot_alt, base_pairs, sts, mcqa })
}

/// Translation-pair TSV: `lang_a, text_a, lang_b, text_b`.
pub fn write_pairs_tsv(path: &Path, pairs: &[(String, String, String, String)]) -> Result<()> {
    let mut s = String::new();
    for (la, ta, lb, tb) in pairs {
        s.push_str(&format!("{la}\t{ta}\t{lb}\t{tb}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_pairs_tsv(path: &Path) -> Result<Vec<(String, String, String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(n, line)| match line.split('\t').collect::<Vec<_>>()[..] {
            [la, ta, lb, tb] => Ok((la.into(), ta.into(), lb.into(), tb.into())),
            _ => Err(Error::format(path, format!("line {}: expected 4 columns", n + 1))),
        })
        .collect()
}

/// A trained encoder together with its tokenizer.
#[derive(Clone)]
pub struct Encoder {
    pub model: EncoderModel,
    pub bpe: BpeModel,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    jobs: usize,
    phases: Vec<PhaseRecord>,
    artifacts: BTreeMap<String, String>,
}

fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn phase_err(phase: &str, seed: u64) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        e @ Error::Phase { .. } => e,
        e => Error::Phase { phase: phase.to_string(), seed, source: Box::new(e) },
    }
}

impl<'a> Runner<'a> {
    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.out).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    fn record_artifact(&mut self, path: &Path) -> Result<()> {
        let d = file_digest(path)?;
        self.artifacts.insert(self.rel(path), d);
        Ok(())
    }

    /// Loads the model cached under the digest of `key`, or trains and stores it.
    fn cached<F>(&mut self, seed: u64, phase: &str, key: serde_json::Value, train: F) -> Result<EncoderModel>
    where
        F: FnOnce() -> Result<(EncoderModel, Option<PhaseStats>)>,
    {
        let digest = digest_json(&serde_json::json!({ "phase": phase, "seed": seed, "key": key, "version": TOOL_VERSION }));
        let path = self.out.join("cache").join(format!("{}.msew", &digest[..32]));
        let started = Instant::now();
        let (model, stats, cached) = if path.exists() && sidecar_path(&path).exists() {
            log::info!("seed {seed}: {phase} reused from cache");
            (EncoderModel::load_weights(&path).map_err(phase_err(phase, seed))?, None, true)
        } else {
            log::info!("seed {seed}: {phase}");
            let (m, stats) = train().map_err(phase_err(phase, seed))?;
            m.save_weights(&path)?;
            (m, stats, false)
        };
        self.record_artifact(&path)?;
        self.record_artifact(&sidecar_path(&path))?;
        let elapsed = started.elapsed().as_secs_f64();
        self.phases.push(PhaseRecord {
            seed,
            phase: phase.to_string(),
            wall_time_s: stats.as_ref().map_or(elapsed, |s| s.wall_time_s.max(elapsed)),
            stats,
            heldout_before: None,
            heldout_after: None,
            cached,
        });
        Ok(model)
    }

    fn timed<R>(&mut self, seed: u64, phase: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        log::info!("seed {seed}: {phase}");
        let started = Instant::now();
        let r = f().map_err(phase_err(phase, seed))?;
        self.phases.push(PhaseRecord {
            seed,
            phase: phase.to_string(),
            wall_time_s: started.elapsed().as_secs_f64(),
            stats: None,
            heldout_before: None,
            heldout_after: None,
            cached: false,
        });
        Ok(r)
    }

    fn note_heldout(&mut self, before: f64, after: f64) {
        if let Some(p) = self.phases.last_mut() {
            p.heldout_before = Some(before);
            p.heldout_after = Some(after);
        }
        if after >= before {
            log::warn!("held-out MNRL loss did not decrease: {before:.4} -> {after:.4}");
        }
    }
}

fn heldout_batch(bpe: &BpeModel, items: &[RealizedItem], lang: &str, max_len: usize) -> Batch {
    let pairs = tokenize_items(bpe, items, max_len);
    let order: Vec<usize> = (0..pairs.len()).collect();
    let mut b = mono_batches(lang, &pairs, &order, pairs.len());
    b.remove(0)
}

/// Mean held-out MNRL loss over languages for one shared model.
fn heldout_shared(m: &EncoderModel, bpe: &BpeModel, data: &SeedData, cfg: &ExperimentConfig) -> Result<f64> {
    let mut total = 0.0;
    for l in &data.langs {
        let b = heldout_batch(bpe, &data.heldout[l], l, cfg.contrastive.max_len);
        total += batch_mnrl_loss(m, &b, cfg.contrastive.mnrl_scale, false)?;
    }
    Ok(total / data.langs.len() as f64)
}

fn tokenized_para(bpe: &BpeModel, texts: &BTreeMap<String, Vec<RealizedItem>>, max_len: usize) -> BTreeMap<String, Vec<PairIds>> {
    texts.iter().map(|(l, items)| (l.clone(), tokenize_items(bpe, items, max_len))).collect()
}

fn eval_into(
    report: &mut EvalReport,
    regime: &str,
    variant: &str,
    seed: u64,
    mono: &Embedders<'_>,
    cross: &Embedders<'_>,
    data: &SeedData,
) -> Result<()> {
    for (mode, e) in [(Mode::Mono, mono), (Mode::Cross, cross)] {
        report.push_scores(regime, variant, Task::Sts, seed, &eval_sts(e, &data.sts, mode)?);
        report.push_scores(regime, variant, Task::Mcqa, seed, &eval_mcqa(e, &data.mcqa, mode)?);
    }
    Ok(())
}

fn shared_embedders<'m>(enc: &'m Encoder, langs: &[String], max_len: usize) -> Embedders<'m> {
    let (m, b) = (&enc.model, &enc.bpe);
    Embedders::shared(langs, move |t: &[String]| embed_texts(m, b, max_len, false, t))
}

fn per_lang_embedders<'m>(encs: &'m BTreeMap<String, Encoder>, max_len: usize, use_adapter: bool) -> Embedders<'m> {
    let mut e = Embedders::new();
    for (l, enc) in encs {
        let (m, b) = (&enc.model, &enc.bpe);
        e.insert(l.clone(), Box::new(move |t: &[String]| embed_texts(m, b, max_len, use_adapter, t)));
    }
    e
}

pub const UNTRAINED_BASE: &str = "base";

/// Aligns copies of `models` under `strategy`, jobs in plan order.
pub fn align_models(
    models: &BTreeMap<String, Encoder>,
    para: &MultiParallelCorpus,
    cfg: &ExperimentConfig,
    strategy: AlignStrategy,
    rng: &RngState,
) -> Result<BTreeMap<String, Encoder>> {
    let langs: Vec<String> = models.keys().cloned().collect();
    let plan = plan_alignment(&langs, &cfg.pivot, strategy)?;
    let mut out = models.clone();
    for (l, enc) in out.iter_mut() {
        if plan.adapters.contains(l) {
            enc.model.attach_adapter(cfg.encoder.adapter_bottleneck, cfg.encoder.adapter_scale, &rng.fork(&format!("adapter/{l}")))?;
        } else {
            enc.model.set_frozen_base(true);
        }
    }
    let tok: BTreeMap<String, Vec<PairIds>> = out
        .iter()
        .map(|(l, e)| (l.clone(), tokenize_items(&e.bpe, &para.texts[l], cfg.cla.max_len)))
        .collect();
    for (a, b) in &plan.jobs {
        // The adapter-free side (the pivot, if any) is the fixed reference.
        let (target, other) = if out[a].model.has_adapter() { (a, b) } else { (b, a) };
        let batches = cla_batches(&tok[other], &tok[target], cfg.cla.batch_size, &rng.fork(&format!("cla/{a}/{b}")))?;
        let mut t = out.remove(target).expect("planned language");
        let mut o = out.remove(other).expect("planned language");
        train_cla(&mut t.model, &mut o.model, &batches, &cfg.cla)?;
        out.insert(target.clone(), t);
        out.insert(other.clone(), o);
    }
    Ok(out)
}

/// Runs every configured regime and ablation for every seed, writing
/// `report.csv`, `manifest.json` and cached artifacts under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<(EvalReport, RunManifest)> {
    cfg.validate()?;
    std::fs::create_dir_all(out.join("cache")).map_err(|e| Error::io(out, e))?;
    let mut runner = Runner { cfg, out: out.to_path_buf(), jobs: jobs.max(1), phases: Vec::new(), artifacts: BTreeMap::new() };
    let mut report = EvalReport::default();
    for &seed in &cfg.seeds {
        run_seed(&mut runner, seed, &mut report)?;
    }
    report.sort();
    let report_path = out.join("report.csv");
    report.write(&report_path)?;
    runner.record_artifact(&report_path)?;
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        phases: runner.phases,
        artifacts: runner.artifacts,
        report: "report.csv".into(),
    };
    manifest.write(&out.join("manifest.json"))?;
    Ok((report, manifest))
}

fn run_seed(runner: &mut Runner<'_>, seed: u64, report: &mut EvalReport) -> Result<()> {
    let cfg = runner.cfg;
    let rng = RngState::new(seed);
    let data = runner.timed(seed, "gen-data", || generate_data(cfg, seed))?;
    let langs = data.langs.clone();
    let eval_len = cfg.eval_len();
    let data_key = serde_json::json!({
        "languages": cfg.languages, "pivot": cfg.pivot, "inventory": cfg.inventory, "data": cfg.data,
    });

    // (1) initialisation: union tokenizer and shared base models
    let all_mlm: Vec<String> = data.mlm.values().flatten().cloned().collect();
    let union_bpe = runner.timed(seed, "train-tokenizer:union", || train_bpe(&all_mlm, cfg.vocab_size))?;
    let tok_dir = runner.out.join(format!("seed-{seed}")).join("tokenizers");
    std::fs::create_dir_all(&tok_dir).map_err(|e| Error::io(&tok_dir, e))?;
    union_bpe.save(&tok_dir.join("union.bpe"))?;
    runner.record_artifact(&tok_dir.join("union.bpe"))?;

    let mut enc_cfg = cfg.encoder.clone();
    enc_cfg.vocab_size = union_bpe.vocab_size();
    let base_key = serde_json::json!({ "data": data_key, "encoder": enc_cfg, "vocab": cfg.vocab_size, "mlm": cfg.base_mlm });
    let mlm_ids = tokenize_all(&union_bpe, &all_mlm, cfg.base_mlm.mlm_max_len);
    let mlm_only = runner.cached(seed, "pretrain-base:mlm_only", base_key.clone(), || {
        let mut m = EncoderModel::new(enc_cfg.clone(), &rng.fork("base-init"))?;
        let stats = train_mlm(&mut m, &mlm_ids, &union_bpe.vocab.specials, &cfg.base_mlm, &rng.fork("base-mlm"))?;
        Ok((m, Some(stats)))
    })?;
    let variants: BTreeSet<BaseVariant> = cfg.runs.iter().map(|r| r.base_variant).collect();
    let mut bases: BTreeMap<BaseVariant, Encoder> = BTreeMap::new();
    if variants.contains(&BaseVariant::MlmPlusContrastive) {
        let key = serde_json::json!({ "base": base_key, "contrastive": cfg.base_contrastive });
        let m = runner.cached(seed, "pretrain-base:mlm_plus_contrastive", key, || {
            let mut m = mlm_only.clone();
            let batches = translation_batches(&data.base_pairs, &union_bpe, &cfg.base_contrastive, &rng.fork("base-pairs"));
            let stats = train_contrastive(&mut m, &batches, &cfg.base_contrastive, false)?;
            Ok((m, Some(stats)))
        })?;
        bases.insert(BaseVariant::MlmPlusContrastive, Encoder { model: m, bpe: union_bpe.clone() });
    }
    bases.insert(BaseVariant::MlmOnly, Encoder { model: mlm_only, bpe: union_bpe.clone() });

    for v in &variants {
        let base = &bases[v];
        runner.timed(seed, &format!("eval:{UNTRAINED_BASE}:{v}"), || {
            let e = shared_embedders(base, &langs, eval_len);
            eval_into(report, UNTRAINED_BASE, v.as_str(), seed, &e, &e, &data)
        })?;
    }

    // (2) Single regimes: specialisation of the shared model
    let union_para = tokenized_para(&union_bpe, &data.para.texts, cfg.contrastive.max_len);
    let m_batches = single_m_batches(&union_para, cfg.contrastive.batch_size, &rng.fork("single_m"));
    check_batches(Regime::SingleM, &m_batches).map_err(phase_err("train-sent:single_m", seed))?;
    let c_batches = single_c_batches(&union_para, cfg.contrastive.batch_size, &rng.fork("single_c"))
        .map_err(phase_err("train-sent:single_c", seed))?;
    let train_single = |runner: &mut Runner<'_>, start: &Encoder, batches: &[Batch], phase: String| -> Result<Encoder> {
        let mut m = start.clone();
        let before = heldout_shared(&m.model, &union_bpe, &data, cfg)?;
        let stats = runner.timed(seed, &phase, || train_contrastive(&mut m.model, batches, &cfg.contrastive, false))?;
        runner.phases.last_mut().expect("just recorded").stats = Some(stats);
        let after = heldout_shared(&m.model, &union_bpe, &data, cfg)?;
        runner.note_heldout(before, after);
        Ok(m)
    };
    let mut single_m: BTreeMap<BaseVariant, Encoder> = BTreeMap::new();
    for spec in cfg.runs.iter().filter(|r| !r.regime.is_multi()) {
        let v = spec.base_variant;
        if matches!(spec.regime, Regime::SingleM | Regime::SingleMc) && !single_m.contains_key(&v) {
            let m = train_single(runner, &bases[&v], &m_batches, format!("train-sent:single_m:{v}"))?;
            single_m.insert(v, m);
        }
        let trained = match spec.regime {
            Regime::SingleM => single_m[&v].clone(),
            Regime::SingleC => train_single(runner, &bases[&v], &c_batches, format!("train-sent:single_c:{v}"))?,
            _ => train_single(runner, &single_m[&v], &c_batches, format!("train-sent:single_mc:{v}"))?,
        };
        let label = spec.label();
        runner.timed(seed, &format!("eval:{label}:{v}"), || {
            let e = shared_embedders(&trained, &langs, eval_len);
            eval_into(report, &label, v.as_str(), seed, &e, &e, &data)
        })?;
    }

    // (1)+(2) Multi regimes: per-language tokenizer, transplant, MLM, contrastive
    let multi: Vec<&RegimeSpec> = cfg.runs.iter().filter(|r| r.regime.is_multi()).collect();
    if multi.is_empty() {
        return Ok(());
    }
    let lang_bpes: BTreeMap<String, BpeModel> = par_map(runner.jobs, &langs, |l| train_bpe(&data.mlm[l], cfg.vocab_size))
        .map_err(phase_err("train-tokenizer", seed))?
        .into_iter()
        .zip(&langs)
        .map(|(b, l)| (l.clone(), b))
        .collect();
    for (l, b) in &lang_bpes {
        let p = tok_dir.join(format!("{l}.bpe"));
        b.save(&p)?;
        runner.record_artifact(&p)?;
    }
    // Shared item order so that per-language batches stay parallel.
    let mut order: Vec<usize> = (0..data.para.items.len()).collect();
    rng.fork("multi-order").shuffle(&mut order);
    let mut alt_texts = data.para.texts.clone();
    alt_texts.insert(cfg.pivot.clone(), data.pivot_alt.clone());

    let mut adapted: BTreeMap<(BaseVariant, bool), BTreeMap<String, Encoder>> = BTreeMap::new();
    let mut specialised: BTreeMap<(BaseVariant, bool, bool), BTreeMap<String, Encoder>> = BTreeMap::new();
    for spec in multi {
        let v = spec.base_variant;
        let akey = (v, spec.shared_init);
        if let std::collections::btree_map::Entry::Vacant(e) = adapted.entry(akey) {
            let init = if spec.shared_init { AdaptInit::Transplant(&bases[&v]) } else { AdaptInit::Random };
            let models = adapt_all(runner, seed, &data, &lang_bpes, init, &base_key, v)?;
            e.insert(models);
        }
        let skey = (v, spec.shared_init, spec.multiparallel);
        if !specialised.contains_key(&skey) {
            let tag = format!("{}:{v}", RegimeSpec { regime: Regime::MultiM, ..spec.clone() }.label());
            let models = if spec.multiparallel {
                specialise_all(runner, seed, &data, adapted[&akey].clone(), &data.para.texts, &order, &tag)?
            } else {
                // Only the pivot's data changes; reuse the other languages' models when available.
                let parallel = specialised.get(&(v, spec.shared_init, true)).cloned();
                let todo: BTreeMap<String, Encoder> = adapted[&akey]
                    .iter()
                    .filter(|(l, _)| parallel.is_none() || **l == cfg.pivot)
                    .map(|(l, e)| (l.clone(), e.clone()))
                    .collect();
                let mut models = parallel.unwrap_or_default();
                models.extend(specialise_all(runner, seed, &data, todo, &alt_texts, &order, &tag)?);
                models
            };
            specialised.insert(skey, models);
        }
        let models = &specialised[&skey];
        let label = spec.label();
        if spec.regime == Regime::MultiM {
            runner.timed(seed, &format!("eval:{label}:{v}"), || {
                let e = per_lang_embedders(models, eval_len, false);
                eval_into(report, &label, v.as_str(), seed, &e, &e, &data)
            })?;
        } else {
            // (3) cross-lingual alignment
            let s = spec.align_strategy;
            let aligned = runner.timed(seed, &format!("train-cla:{label}:{v}"), || {
                align_models(models, &data.para, cfg, s, &rng.fork(&format!("align/{s}")))
            })?;
            runner.timed(seed, &format!("eval:{label}:{v}"), || {
                let mono = per_lang_embedders(&aligned, eval_len, false);
                let cross = per_lang_embedders(&aligned, eval_len, true);
                eval_into(report, &label, v.as_str(), seed, &mono, &cross, &data)
            })?;
        }
    }
    Ok(())
}

/// Batches of translation pairs for the base model's contrastive phase.
pub fn translation_batches(pairs: &[(String, String, String, String)], bpe: &BpeModel, tc: &TrainConfig, rng: &RngState) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    rng.clone().shuffle(&mut order);
    order
        .chunks(tc.batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| Batch {
            pairs: c
                .iter()
                .map(|&i| PairIds { anchor: bpe.encode(&pairs[i].1, tc.max_len), positive: bpe.encode(&pairs[i].3, tc.max_len), hard_negative: None })
                .collect(),
            langs: c.iter().map(|&i| (pairs[i].0.clone(), pairs[i].2.clone())).collect(),
        })
        .collect()
}

enum AdaptInit<'b> {
    Transplant(&'b Encoder),
    Random,
}

/// Per-language models after initialisation and MLM adaptation.
fn adapt_all(
    runner: &mut Runner<'_>,
    seed: u64,
    data: &SeedData,
    bpes: &BTreeMap<String, BpeModel>,
    init: AdaptInit<'_>,
    base_key: &serde_json::Value,
    variant: BaseVariant,
) -> Result<BTreeMap<String, Encoder>> {
    let cfg = runner.cfg;
    let rng = RngState::new(seed);
    let mut out = BTreeMap::new();
    let (init_name, init_key) = match init {
        AdaptInit::Transplant(_) => ("transplant", serde_json::json!({ "base": base_key, "variant": variant, "aux": [cfg.aux_dim, cfg.aux_window] })),
        AdaptInit::Random => ("random", serde_json::json!({ "base": base_key, "encoder": cfg.encoder })),
    };
    // Train in parallel, then record through the cache one language at a time.
    let keys: Vec<(String, serde_json::Value)> = data
        .langs
        .iter()
        .map(|l| (l.clone(), serde_json::json!({ "init": init_name, "init_key": init_key, "lang": l, "mlm": cfg.adapt_mlm })))
        .collect();
    let train_one = |l: &String| -> Result<(EncoderModel, Option<PhaseStats>)> {
        let bpe = &bpes[l];
        let mut model = match &init {
            AdaptInit::Transplant(base) => transplant_model(&base.model, &base.bpe, bpe, &data.mlm[l], cfg.aux_dim, cfg.aux_window)?.0,
            AdaptInit::Random => {
                let mut c = cfg.encoder.clone();
                c.vocab_size = bpe.vocab_size();
                EncoderModel::new(c, &rng.fork(&format!("independent-init/{l}")))?
            }
        };
        let ids = tokenize_all(bpe, &data.mlm[l], cfg.adapt_mlm.mlm_max_len);
        let stats = train_mlm(&mut model, &ids, &bpe.vocab.specials, &cfg.adapt_mlm, &rng.fork(&format!("adapt-mlm/{l}")))?;
        Ok((model, Some(stats)))
    };
    let phase_name = |l: &str| format!("adapt-mlm:{init_name}:{l}");
    let digest_of = |l: &str, key: &serde_json::Value| {
        let d = digest_json(&serde_json::json!({ "phase": phase_name(l), "seed": seed, "key": key, "version": TOOL_VERSION }));
        runner.out.join("cache").join(format!("{}.msew", &d[..32]))
    };
    let missing: Vec<String> = keys.iter().filter(|(l, k)| !digest_of(l, k).exists()).map(|(l, _)| l.clone()).collect();
    let fresh: BTreeMap<String, (EncoderModel, Option<PhaseStats>)> = par_map(runner.jobs, &missing, train_one)
        .map_err(phase_err("adapt-mlm", seed))?
        .into_iter()
        .zip(&missing)
        .map(|(m, l)| (l.clone(), m))
        .collect();
    let mut fresh = fresh;
    for (l, key) in keys {
        let trained = fresh.remove(&l);
        let model = runner.cached(seed, &phase_name(&l), key, || match trained {
            Some(t) => Ok(t),
            None => train_one(&l),
        })?;
        out.insert(l.clone(), Encoder { model, bpe: bpes[&l].clone() });
    }
    Ok(out)
}

/// Monolingual contrastive specialisation of each per-language model on
/// its own language's realisations, batches in the shared `order`.
fn specialise_all(
    runner: &mut Runner<'_>,
    seed: u64,
    data: &SeedData,
    models: BTreeMap<String, Encoder>,
    texts: &BTreeMap<String, Vec<RealizedItem>>,
    order: &[usize],
    label: &str,
) -> Result<BTreeMap<String, Encoder>> {
    let cfg = runner.cfg;
    let entries: Vec<(String, Encoder)> = models.into_iter().collect();
    let started = Instant::now();
    let results = par_map(runner.jobs, &entries, |(l, enc)| {
        let pairs = tokenize_items(&enc.bpe, &texts[l], cfg.contrastive.max_len);
        let batches = mono_batches(l, &pairs, order, cfg.contrastive.batch_size);
        check_batches(Regime::MultiM, &batches)?;
        let held = heldout_batch(&enc.bpe, &data.heldout[l], l, cfg.contrastive.max_len);
        let before = batch_mnrl_loss(&enc.model, &held, cfg.contrastive.mnrl_scale, false)?;
        let mut m = enc.clone();
        let stats = train_contrastive(&mut m.model, &batches, &cfg.contrastive, false)?;
        let after = batch_mnrl_loss(&m.model, &held, cfg.contrastive.mnrl_scale, false)?;
        Ok((m, stats, before, after))
    })
    .map_err(phase_err(&format!("train-sent:{label}"), seed))?;
    let mut out = BTreeMap::new();
    for ((l, _), (m, stats, before, after)) in entries.into_iter().zip(results) {
        runner.phases.push(PhaseRecord {
            seed,
            phase: format!("train-sent:{label}:{l}"),
            wall_time_s: stats.wall_time_s,
            stats: Some(stats),
            heldout_before: None,
            heldout_after: None,
            cached: false,
        });
        runner.note_heldout(before, after);
        out.insert(l, m);
    }
    log::info!("seed {seed}: {label} specialised in {:.1}s", started.elapsed().as_secs_f64());
    Ok(out)
}
