//! Training phases: MLM (base pretraining and language adaptation), MNRL
//! contrastive specialisation, adapter-based cross-lingual alignment, and
//! the batch schedules of the training regimes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderModel, Packed};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, clip_global_norm, AdamState, Graph, RngState, Scalar, Var};
use crate::synthlang::RealizedItem;
use crate::tokenizer::{BpeModel, Specials};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub adapter_lr: f64,
    pub epochs: usize,
    /// Optimiser steps for MLM phases.
    pub mlm_steps: usize,
    pub max_len: usize,
    pub mlm_max_len: usize,
    pub mnrl_scale: f64,
    pub mask_prob: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 2e-5,
            adapter_lr: 1e-4,
            epochs: 1,
            mlm_steps: 2000,
            max_len: 128,
            mlm_max_len: 256,
            mnrl_scale: 20.0,
            mask_prob: 0.15,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Invalid("batch_size must be at least 2 for in-batch negatives".into()));
        }
        for (name, v) in [("lr", self.lr), ("adapter_lr", self.adapter_lr), ("mnrl_scale", self.mnrl_scale), ("clip_norm", self.clip_norm)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be positive")));
            }
        }
        if self.epochs == 0 || self.max_len < 2 || self.mlm_max_len < 2 {
            return Err(Error::Invalid("epochs and max lengths must be positive".into()));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return Err(Error::NothingToTrain);
        }
        Ok(())
    }
}

macro_rules! string_enum {
    ($name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];
            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$var),)+
                    other => Err(Error::Invalid(format!(concat!("unknown ", stringify!($name), " {:?}"), other))),
                }
            }
        }
    };
}

string_enum!(Regime {
    SingleM => "single_m",
    SingleC => "single_c",
    SingleMc => "single_mc",
    MultiM => "multi_m",
    MultiMc => "multi_mc",
});

string_enum!(BaseVariant {
    MlmOnly => "mlm_only",
    MlmPlusContrastive => "mlm_plus_contrastive",
});

string_enum!(AlignStrategy {
    BilingualToPivot => "bilingual_to_pivot",
    AllPairs => "all_pairs",
    AllPairsInclPivot => "all_pairs_incl_pivot",
});

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeSpec {
    pub regime: Regime,
    pub base_variant: BaseVariant,
    pub align_strategy: AlignStrategy,
    pub multiparallel: bool,
    pub shared_init: bool,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        Self {
            regime: Regime::SingleM,
            base_variant: BaseVariant::MlmPlusContrastive,
            align_strategy: AlignStrategy::BilingualToPivot,
            multiparallel: true,
            shared_init: true,
        }
    }
}

impl Regime {
    pub fn is_multi(self) -> bool {
        matches!(self, Regime::MultiM | Regime::MultiMc)
    }
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.regime.is_multi() && !(self.shared_init && self.multiparallel) {
            return Err(Error::Invalid(format!("{}: shared_init and multiparallel only apply to multi regimes", self.regime)));
        }
        Ok(())
    }

    /// Report label: the regime, plus any ablation that departs from the default.
    pub fn label(&self) -> String {
        let mut s = self.regime.to_string();
        if self.regime == Regime::MultiMc && self.align_strategy != AlignStrategy::BilingualToPivot {
            s = format!("{s}:{}", self.align_strategy);
        }
        if !self.shared_init {
            s.push_str(":independent_init");
        }
        if !self.multiparallel {
            s.push_str(":non_multiparallel_pivot");
        }
        s
    }
}

pub fn tokenize_all<S: AsRef<str>>(bpe: &BpeModel, texts: &[S], max_len: usize) -> Vec<Vec<u32>> {
    texts.iter().map(|t| bpe.encode(t.as_ref(), max_len)).collect()
}

// ---------------------------------------------------------------- masking

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub ids: Vec<Vec<u32>>,
    /// `(sequence, position)` of every selected token.
    pub positions: Vec<(usize, usize)>,
    pub originals: Vec<u32>,
}

/// Selects each non-special position with probability `mask_prob`. With
/// `split`, selected tokens become `[MASK]` (80%), a random non-special
/// token (10%) or stay unchanged (10%); without it they all become
/// `[MASK]`. Draws with nothing selected are resampled.
pub fn mask_batch(
    batch: &[Vec<u32>],
    mask_prob: f64,
    specials: &Specials,
    vocab_size: usize,
    split: bool,
    rng: &mut RngState,
) -> Result<MaskedBatch> {
    if !(mask_prob > 0.0 && mask_prob <= 1.0) {
        return Err(Error::NothingToTrain);
    }
    let first_regular = 5u32;
    if !batch.iter().flatten().any(|id| !specials.contains(*id)) {
        return Err(Error::Invalid("batch has no maskable tokens".into()));
    }
    loop {
        let mut ids = batch.to_vec();
        let mut positions = Vec::new();
        let mut originals = Vec::new();
        for (s, seq) in ids.iter_mut().enumerate() {
            for (p, id) in seq.iter_mut().enumerate() {
                if specials.contains(*id) || !rng.bernoulli(mask_prob) {
                    continue;
                }
                positions.push((s, p));
                originals.push(*id);
                if !split {
                    *id = specials.mask;
                    continue;
                }
                let u = rng.uniform();
                if u < 0.8 {
                    *id = specials.mask;
                } else if u < 0.9 && vocab_size as u32 > first_regular {
                    *id = first_regular + rng.below(vocab_size - first_regular as usize) as u32;
                }
            }
        }
        if !positions.is_empty() {
            return Ok(MaskedBatch { ids, positions, originals });
        }
    }
}

/// Mean masked-token cross-entropy, built into `g`.
pub fn mlm_loss_var<F: Scalar>(model: &EncoderModel<F>, g: &mut Graph<'_, F>, set: usize, mb: &MaskedBatch) -> Result<Var> {
    let packed = Packed::new(&mb.ids, &model.config)?;
    let rows = mb
        .positions
        .iter()
        .map(|&(s, p)| packed.row(s, p).ok_or_else(|| Error::Invalid(format!("masked position ({s}, {p}) is padding"))))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::Invalid("no masked positions".into()));
    }
    let h = model.hidden(g, set, &packed, false);
    let logits = model.mlm_head(g, set, h, &rows);
    let targets: Vec<usize> = mb.originals.iter().map(|t| *t as usize).collect();
    Ok(g.cross_entropy(logits, &targets))
}

pub fn mlm_loss<F: Scalar>(model: &EncoderModel<F>, mb: &MaskedBatch) -> Result<f64> {
    let mut g = Graph::single(&model.params);
    let l = mlm_loss_var(model, &mut g, 0, mb)?;
    Ok(g.scalar(l).as_f64())
}

// ---------------------------------------------------------------- MNRL

/// `mean_i −log softmax(s · a_i · cᵀ)[i]` over candidates `c = [p; hn]`.
/// Inputs are expected to be unit-norm rows, so dot products are cosines.
pub fn mnrl_var<F: Scalar>(g: &mut Graph<'_, F>, anchors: Var, positives: Var, hard: Option<Var>, scale: f64) -> Result<Var> {
    let n = g.dims(anchors).0;
    if g.dims(positives).0 != n {
        return Err(Error::Shape(format!("{n} anchors vs {} positives", g.dims(positives).0)));
    }
    let n_hard = hard.map_or(0, |h| g.dims(h).0);
    if n + n_hard < 2 {
        return Err(Error::NoNegatives);
    }
    let cand = match hard {
        Some(h) if n_hard > 0 => g.concat_rows(&[positives, h]),
        _ => positives,
    };
    let sims = g.matmul_bt(anchors, cand);
    let logits = g.scale(sims, F::from_f64(scale));
    let targets: Vec<usize> = (0..n).collect();
    Ok(g.cross_entropy(logits, &targets))
}

/// MNRL on precomputed embeddings.
pub fn mnrl_loss(anchors: &[Vec<f64>], positives: &[Vec<f64>], hard: &[Vec<f64>], scale: f64) -> Result<f64> {
    let d = anchors.first().map_or(0, Vec::len);
    let empty = crate::numerics::ParamSet::<f64>::default();
    let mut g = Graph::single(&empty);
    let mat = |g: &mut Graph<'_, f64>, rows: &[Vec<f64>]| g.constant(rows.len(), d, rows.concat());
    let a = mat(&mut g, anchors);
    let p = mat(&mut g, positives);
    let h = (!hard.is_empty()).then(|| mat(&mut g, hard));
    let l = mnrl_var(&mut g, a, p, h, scale)?;
    Ok(g.scalar(l))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairIds {
    pub anchor: Vec<u32>,
    pub positive: Vec<u32>,
    pub hard_negative: Option<Vec<u32>>,
}

/// One contrastive batch plus the language of each side (for schedule checks).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub pairs: Vec<PairIds>,
    pub langs: Vec<(String, String)>,
}

fn batch_loss_var<F: Scalar>(
    model: &EncoderModel<F>,
    g: &mut Graph<'_, F>,
    set: usize,
    b: &Batch,
    scale: f64,
    use_adapter: bool,
) -> Result<Var> {
    let anchors: Vec<Vec<u32>> = b.pairs.iter().map(|p| p.anchor.clone()).collect();
    let positives: Vec<Vec<u32>> = b.pairs.iter().map(|p| p.positive.clone()).collect();
    let hard: Vec<Vec<u32>> = b.pairs.iter().filter_map(|p| p.hard_negative.clone()).collect();
    let a = model.embed_var(g, set, &Packed::new(&anchors, &model.config)?, use_adapter);
    let p = model.embed_var(g, set, &Packed::new(&positives, &model.config)?, use_adapter);
    let h = if hard.is_empty() {
        None
    } else {
        Some(model.embed_var(g, set, &Packed::new(&hard, &model.config)?, use_adapter))
    };
    mnrl_var(g, a, p, h, scale)
}

pub fn batch_mnrl_loss<F: Scalar>(model: &EncoderModel<F>, b: &Batch, scale: f64, use_adapter: bool) -> Result<f64> {
    let mut g = Graph::single(&model.params);
    let l = batch_loss_var(model, &mut g, 0, b, scale, use_adapter)?;
    Ok(g.scalar(l).as_f64())
}

fn check_loss(loss: f64, phase: &str, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        log::error!("{phase}: non-finite loss at step {step}");
        Err(Error::NonFinite(loss))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: String,
    pub steps: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    /// Not serialised, so saved manifests are byte-identical across reruns.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl PhaseStats {
    fn new(phase: &str) -> Self {
        Self { phase: phase.to_string(), ..Default::default() }
    }

    fn record(&mut self, loss: f64) {
        if self.steps == 0 {
            self.first_loss = loss;
        }
        self.final_loss = loss;
        self.steps += 1;
    }
}

/// MLM training for `cfg.mlm_steps` steps over shuffled epochs of `corpus`.
pub fn train_mlm(model: &mut EncoderModel, corpus: &[Vec<u32>], specials: &Specials, cfg: &TrainConfig, rng: &RngState) -> Result<PhaseStats> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let started = Instant::now();
    let mut stats = PhaseStats::new("mlm");
    let mut adam = AdamState::new(cfg.lr);
    let mut r = rng.fork("mlm");
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let v = model.config.vocab_size;
    for step in 0..cfg.mlm_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(corpus.len()) {
            if cursor == order.len() {
                order = (0..corpus.len()).collect();
                r.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(corpus[order[cursor]].clone());
            cursor += 1;
        }
        let mb = mask_batch(&batch, cfg.mask_prob, specials, v, true, &mut r)?;
        let mut grads = {
            let mut g = Graph::single(&model.params);
            let l = mlm_loss_var(model, &mut g, 0, &mb)?;
            let loss = g.scalar(l) as f64;
            check_loss(loss, "mlm", step)?;
            stats.record(loss);
            g.backward(l).remove(0)
        };
        clip_global_norm(&mut grads, cfg.clip_norm);
        adam_step(&mut model.params, &grads, &mut adam)?;
    }
    stats.wall_time_s = started.elapsed().as_secs_f64();
    Ok(stats)
}

/// MNRL over the given batches, `cfg.epochs` times, in the given order.
/// Uses `cfg.adapter_lr` when the model's base is frozen.
pub fn train_contrastive(model: &mut EncoderModel, batches: &[Batch], cfg: &TrainConfig, use_adapter: bool) -> Result<PhaseStats> {
    cfg.validate()?;
    let started = Instant::now();
    let mut stats = PhaseStats::new("mnrl");
    let lr = if model.frozen_base { cfg.adapter_lr } else { cfg.lr };
    let mut adam = AdamState::new(lr);
    for _ in 0..cfg.epochs {
        for b in batches {
            let mut grads = {
                let mut g = Graph::single(&model.params);
                let l = batch_loss_var(model, &mut g, 0, b, cfg.mnrl_scale, use_adapter)?;
                let loss = g.scalar(l) as f64;
                check_loss(loss, "mnrl", stats.steps)?;
                stats.record(loss);
                g.backward(l).remove(0)
            };
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(&mut model.params, &grads, &mut adam)?;
        }
    }
    stats.wall_time_s = started.elapsed().as_secs_f64();
    Ok(stats)
}

// ---------------------------------------------------------------- schedules

fn chunk(pairs: Vec<(PairIds, (String, String))>, batch_size: usize) -> Vec<Batch> {
    let mut out = Vec::new();
    let mut it = pairs.into_iter().peekable();
    while it.peek().is_some() {
        let (pairs, langs): (Vec<_>, Vec<_>) = it.by_ref().take(batch_size).unzip();
        let b = Batch { pairs, langs };
        if b.pairs.len() >= 2 || b.pairs.iter().any(|p| p.hard_negative.is_some()) {
            out.push(b);
        }
    }
    out
}

/// Tokenised realisations of one language.
pub fn tokenize_items(bpe: &BpeModel, items: &[RealizedItem], max_len: usize) -> Vec<PairIds> {
    items
        .iter()
        .map(|it| PairIds {
            anchor: bpe.encode(&it.anchor, max_len),
            positive: bpe.encode(&it.positive, max_len),
            hard_negative: it.hard_negative.as_ref().map(|h| bpe.encode(h, max_len)),
        })
        .collect()
}

/// Monolingual batches of one language, items in the order given by `order`.
pub fn mono_batches(lang: &str, pairs: &[PairIds], order: &[usize], batch_size: usize) -> Vec<Batch> {
    let tagged = order.iter().map(|&i| (pairs[i].clone(), (lang.to_string(), lang.to_string()))).collect();
    chunk(tagged, batch_size)
}

/// Every language's monolingual batches, shuffled into one stream: each
/// batch is monolingual and its language is effectively drawn at random.
pub fn single_m_batches(data: &BTreeMap<String, Vec<PairIds>>, batch_size: usize, rng: &RngState) -> Vec<Batch> {
    let mut all = Vec::new();
    for (lang, pairs) in data {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.fork(&format!("single_m/{lang}")).shuffle(&mut order);
        all.extend(mono_batches(lang, pairs, &order, batch_size));
    }
    rng.fork("single_m/stream").shuffle(&mut all);
    all
}

/// `L × N` cross-lingual pairs: for every item, `L` draws in which the
/// anchor's and the positive's languages are sampled independently.
#[allow(clippy::needless_range_loop)]
pub fn single_c_batches(data: &BTreeMap<String, Vec<PairIds>>, batch_size: usize, rng: &RngState) -> Result<Vec<Batch>> {
    let langs: Vec<&String> = data.keys().collect();
    let n = data.values().next().map_or(0, Vec::len);
    if data.values().any(|v| v.len() != n) {
        return Err(Error::Invalid("cross-lingual pairs need a multi-parallel corpus".into()));
    }
    let mut r = rng.fork("single_c");
    let mut pairs = Vec::with_capacity(n * langs.len());
    for i in 0..n {
        for _ in 0..langs.len() {
            let la = *r.choose(&langs);
            let lb = *r.choose(&langs);
            let (a, b) = (&data[la][i], &data[lb][i]);
            pairs.push((
                PairIds { anchor: a.anchor.clone(), positive: b.positive.clone(), hard_negative: b.hard_negative.clone() },
                (la.clone(), lb.clone()),
            ));
        }
    }
    r.shuffle(&mut pairs);
    Ok(chunk(pairs, batch_size))
}

/// Asserts the schedule contract of a regime on every batch.
pub fn check_batches(regime: Regime, batches: &[Batch]) -> Result<()> {
    for (i, b) in batches.iter().enumerate() {
        let first = &b.langs[0].0;
        let mono = b.langs.iter().all(|(a, p)| a == first && p == first);
        if matches!(regime, Regime::SingleM | Regime::MultiM) && !mono {
            return Err(Error::Invalid(format!("{regime} batch {i} mixes languages")));
        }
    }
    Ok(())
}

/// One alignment batch: token ids of the two sides, row `i` paired with row `i`.
pub type ClaBatch = (Vec<Vec<u32>>, Vec<Vec<u32>>);

/// Cross-lingual paraphrase pairs for alignment: side `a`'s anchor with
/// side `b`'s positive.
pub fn cla_batches(a: &[PairIds], b: &[PairIds], batch_size: usize, rng: &RngState) -> Result<Vec<ClaBatch>> {
    if a.len() != b.len() {
        return Err(Error::Invalid("alignment needs parallel data".into()));
    }
    let mut order: Vec<usize> = (0..a.len()).collect();
    rng.fork("cla").shuffle(&mut order);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| (c.iter().map(|&i| a[i].anchor.clone()).collect(), c.iter().map(|&i| b[i].positive.clone()).collect()))
        .collect())
}

// ---------------------------------------------------------------- alignment

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentPlan {
    /// `(a, b)` language pairs trained in this order.
    pub jobs: Vec<(String, String)>,
    /// Languages whose model carries a trainable adapter.
    pub adapters: Vec<String>,
}

pub fn plan_alignment(langs: &[String], pivot: &str, strategy: AlignStrategy) -> Result<AlignmentPlan> {
    if !langs.iter().any(|l| l == pivot) {
        return Err(Error::MissingLanguage(pivot.to_string()));
    }
    let others: Vec<String> = langs.iter().filter(|l| *l != pivot).cloned().collect();
    Ok(match strategy {
        AlignStrategy::BilingualToPivot => AlignmentPlan {
            jobs: others.iter().map(|l| (pivot.to_string(), l.clone())).collect(),
            adapters: others,
        },
        AlignStrategy::AllPairs | AlignStrategy::AllPairsInclPivot => {
            let mut jobs = Vec::new();
            for i in 0..langs.len() {
                for j in i + 1..langs.len() {
                    jobs.push((langs[i].clone(), langs[j].clone()));
                }
            }
            let adapters = if strategy == AlignStrategy::AllPairs { others } else { langs.to_vec() };
            AlignmentPlan { jobs, adapters }
        }
    })
}

/// Symmetric alignment loss `½(mnrl(a→b) + mnrl(b→a))` between two models.
pub fn cla_loss_var<F: Scalar>(
    ma: &EncoderModel<F>,
    mb: &EncoderModel<F>,
    g: &mut Graph<'_, F>,
    a: &[Vec<u32>],
    b: &[Vec<u32>],
    scale: f64,
) -> Result<Var> {
    let ea = ma.embed_var(g, 0, &Packed::new(a, &ma.config)?, true);
    let eb = mb.embed_var(g, 1, &Packed::new(b, &mb.config)?, true);
    let ab = mnrl_var(g, ea, eb, None, scale)?;
    let ba = mnrl_var(g, eb, ea, None, scale)?;
    let sum = g.add(ab, ba);
    Ok(g.scale(sum, F::from_f64(0.5)))
}

/// Trains the adapters of `target` (and of `other` when it has one) to
/// align the two encoders. Base tensors never change: `target` must be
/// frozen, and `other` is either frozen or a pivot without an adapter,
/// which is then treated as frozen.
pub fn train_cla(
    target: &mut EncoderModel,
    other: &mut EncoderModel,
    batches: &[ClaBatch],
    cfg: &TrainConfig,
) -> Result<PhaseStats> {
    cfg.validate()?;
    if !target.has_adapter() {
        return Err(Error::NoAdapter);
    }
    if !target.frozen_base {
        return Err(Error::Unfrozen);
    }
    if other.has_adapter() && !other.frozen_base {
        return Err(Error::Unfrozen);
    }
    other.set_frozen_base(true);
    let started = Instant::now();
    let mut stats = PhaseStats::new("cla");
    let mut adam_t = AdamState::new(cfg.adapter_lr);
    let mut adam_o = AdamState::new(cfg.adapter_lr);
    let train_other = other.has_adapter();
    for _ in 0..cfg.epochs {
        for (side_other, side_target) in batches {
            let (mut gt, mut go) = {
                let mut g = Graph::new(vec![&target.params, &other.params]);
                // set 0 = target, set 1 = other
                let l = cla_loss_var(target, other, &mut g, side_target, side_other, cfg.mnrl_scale)?;
                let loss = g.scalar(l) as f64;
                check_loss(loss, "cla", stats.steps)?;
                stats.record(loss);
                let mut gr = g.backward(l);
                let go = gr.pop().expect("two sets");
                (gr.pop().expect("two sets"), go)
            };
            if train_other {
                let mut both: Vec<Option<Vec<f32>>> = gt.drain(..).chain(go.drain(..)).collect();
                clip_global_norm(&mut both, cfg.clip_norm);
                go = both.split_off(target.params.len());
                gt = both;
                adam_step(&mut other.params, &go, &mut adam_o)?;
            } else {
                clip_global_norm(&mut gt, cfg.clip_norm);
            }
            adam_step(&mut target.params, &gt, &mut adam_t)?;
        }
    }
    stats.wall_time_s = started.elapsed().as_secs_f64();
    Ok(stats)
}

/// JSON record written next to trained weights: the config of the last
/// phase and the ordered history of phases the weights went through.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub history: Vec<String>,
    pub phases: Vec<PhaseStats>,
}

impl TrainingManifest {
    pub fn path_for(weights: &Path) -> PathBuf {
        let mut s = weights.as_os_str().to_owned();
        s.push(".train.json");
        PathBuf::from(s)
    }

    /// The manifest next to `weights`; weights without one have no history.
    pub fn load_for(weights: &Path) -> Result<Option<Self>> {
        let path = Self::path_for(weights);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn save_for(&self, weights: &Path) -> Result<()> {
        let path = Self::path_for(weights);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Errors unless one of `required` already happened to these weights.
    pub fn require(history: &[String], phase: &str, required: &[&str]) -> Result<()> {
        if required.iter().any(|r| history.iter().any(|h| h == r)) {
            Ok(())
        } else {
            Err(Error::PhaseOrder(format!("{phase} needs weights produced by {} (history: [{}])", required.join(" or "), history.join(", "))))
        }
    }
}

/// Maximum relative gradient error of the MLM loss (all weights) and the
/// MNRL loss (adapter weights, base frozen) on a 2-layer, d_model=16 model
/// in 64-bit mode with central differences at `h = 1e-5`.
#[allow(clippy::type_complexity)]
pub fn gradient_checks(seed: u64) -> Result<(f64, f64)> {
    use crate::encoder::{EncoderConfig, Pooling};
    use crate::numerics::{grad_check, ParamSet};

    let cfg = EncoderConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        max_len: 12,
        vocab_size: 20,
        adapter_bottleneck: 8,
        adapter_scale: 4.0,
        pooling: Pooling::Mean,
    };
    let specials = Specials { pad: 0, unk: 1, cls: 2, sep: 3, mask: 4 };
    let rng = RngState::new(seed);
    let check = |model: &EncoderModel<f64>, build: &dyn Fn(&EncoderModel<f64>, &mut Graph<'_, f64>) -> Result<Var>| {
        grad_check(
            |p: &ParamSet<f64>| {
                let mut g = Graph::single(p);
                let l = build(model, &mut g)?;
                let loss = g.scalar(l);
                Ok((loss, g.backward(l).remove(0)))
            },
            &model.params,
            1e-5,
        )
    };

    let m = EncoderModel::<f64>::new(cfg.clone(), &rng.fork("mlm-model"))?;
    let batch = [vec![2, 7, 8, 9, 3], vec![2, 11, 12, 3, 0]];
    let mb = mask_batch(&batch, 0.5, &specials, 20, true, &mut rng.fork("mask"))?;
    let mlm = check(&m, &|m, g| mlm_loss_var(m, g, 0, &mb))?;

    let mut m = EncoderModel::<f64>::new(cfg, &rng.fork("mnrl-model"))?;
    m.attach_adapter(8, 4.0, &rng.fork("adapter"))?;
    // Zero-initialised up-projections would hide errors in the down path.
    let mut r = rng.fork("adapter-noise");
    for (n, t) in m.params.names.iter().zip(m.params.tensors.iter_mut()) {
        if n.contains("w_up") {
            t.data.iter_mut().for_each(|x| *x = r.normal() * 0.1);
        }
    }
    let b = Batch {
        pairs: vec![
            PairIds { anchor: vec![2, 7, 8, 3], positive: vec![2, 7, 9, 3], hard_negative: Some(vec![2, 15, 3]) },
            PairIds { anchor: vec![2, 10, 11, 12, 3], positive: vec![2, 10, 13, 3], hard_negative: None },
        ],
        langs: vec![],
    };
    let mnrl = check(&m, &|m, g| batch_loss_var(m, g, 0, &b, 20.0, true))?;
    Ok((mlm, mnrl))
}
