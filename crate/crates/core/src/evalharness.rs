//! Zero-shot evaluation: STS Spearman and MCQA accuracy, mono- and
//! cross-lingual, plus the CSV report format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::numerics::kernels::cosine;
use crate::synthlang::{McqaBenchmark, StsBenchmark};
use crate::tokenizer::BpeModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mono,
    Cross,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mono => "mono",
            Mode::Cross => "cross",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mono" => Ok(Mode::Mono),
            "cross" => Ok(Mode::Cross),
            other => Err(Error::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("lengths {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::UndefinedCorrelation(format!("lengths {} and {}", x.len(), y.len())));
    }
    pearson(&ranks(x), &ranks(y))
}

/// Batch embedding function for one language.
pub type EmbedFn<'a> = Box<dyn Fn(&[String]) -> Result<Vec<Vec<f64>>> + 'a>;

/// Embedding functions keyed by language.
#[derive(Default)]
pub struct Embedders<'a> {
    fns: BTreeMap<String, EmbedFn<'a>>,
}

impl<'a> Embedders<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lang: impl Into<String>, f: EmbedFn<'a>) {
        self.fns.insert(lang.into(), f);
    }

    /// The same function for every listed language.
    pub fn shared<F>(langs: &[String], f: F) -> Self
    where
        F: Fn(&[String]) -> Result<Vec<Vec<f64>>> + Clone + 'a,
    {
        let mut e = Self::new();
        for l in langs {
            e.insert(l.clone(), Box::new(f.clone()));
        }
        e
    }

    fn get(&self, lang: &str) -> Result<&EmbedFn<'a>> {
        self.fns.get(lang).ok_or_else(|| Error::MissingLanguage(lang.to_string()))
    }

    /// Embeds each distinct text once per language.
    fn embed_all<'t>(&self, requests: impl Iterator<Item = (&'t str, &'t str)>) -> Result<HashMap<(&'t str, &'t str), Vec<f64>>> {
        let mut by_lang: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (lang, text) in requests {
            by_lang.entry(lang).or_default().insert(text);
        }
        let mut out = HashMap::new();
        for (lang, texts) in by_lang {
            let f = self.get(lang)?;
            let owned: Vec<String> = texts.iter().map(|t| t.to_string()).collect();
            let vecs = f(&owned)?;
            if vecs.len() != owned.len() {
                return Err(Error::Shape(format!("{lang}: {} embeddings for {} texts", vecs.len(), owned.len())));
            }
            out.extend(texts.into_iter().map(|t| (lang, t)).zip(vecs));
        }
        Ok(out)
    }
}

pub fn embed_texts(model: &EncoderModel, bpe: &BpeModel, max_len: usize, use_adapter: bool, texts: &[String]) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<Vec<u32>> = texts.iter().map(|t| bpe.encode(t, max_len)).collect();
    Ok(model
        .embed_batch(&ids, use_adapter)?
        .into_iter()
        .map(|v| v.into_iter().map(f64::from).collect())
        .collect())
}

/// Embedding function backed by an encoder and its tokenizer.
pub fn encoder_embed_fn<'a>(model: &'a EncoderModel, bpe: &'a BpeModel, max_len: usize, use_adapter: bool) -> EmbedFn<'a> {
    Box::new(move |texts: &[String]| embed_texts(model, bpe, max_len, use_adapter, texts))
}

/// One score: `lang` is a language (mono) or `"a-b"` with `a < b` (cross).
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub mode: Mode,
    pub lang: String,
    pub value: f64,
}

fn pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}-{b}")
    } else {
        format!("{b}-{a}")
    }
}

fn mode_of(a: &str, b: &str) -> Mode {
    if a == b {
        Mode::Mono
    } else {
        Mode::Cross
    }
}

/// Averages per-orientation values into one score per language or pair.
fn fold_orientations(per_orientation: BTreeMap<(String, String), f64>, mode: Mode) -> Vec<Score> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((a, b), v) in per_orientation {
        if mode_of(&a, &b) != mode {
            continue;
        }
        let key = if a == b { a } else { pair_key(&a, &b) };
        let e = acc.entry(key).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(lang, (s, n))| Score { mode, lang, value: s / n as f64 }).collect()
}

/// Rounds away float noise so that mathematically equal cosines tie.
fn quantize(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Spearman×100 of cosine vs gold per language (mono) or unordered pair
/// (cross, both orientations averaged). Groups whose gold is constant are
/// skipped with a warning.
pub fn eval_sts(embedders: &Embedders<'_>, bench: &StsBenchmark, mode: Mode) -> Result<Vec<Score>> {
    let pairs: Vec<_> = bench.pairs.iter().filter(|p| mode_of(&p.lang_a, &p.lang_b) == mode).collect();
    let emb = embedders.embed_all(
        pairs
            .iter()
            .flat_map(|p| [(p.lang_a.as_str(), p.text_a.as_str()), (p.lang_b.as_str(), p.text_b.as_str())]),
    )?;
    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in &pairs {
        let a = &emb[&(p.lang_a.as_str(), p.text_a.as_str())];
        let b = &emb[&(p.lang_b.as_str(), p.text_b.as_str())];
        let g = groups.entry((p.lang_a.clone(), p.lang_b.clone())).or_default();
        g.0.push(quantize(cosine(a, b)));
        g.1.push(p.gold);
    }
    let mut per = BTreeMap::new();
    for (key, (cos, gold)) in groups {
        if gold.iter().all(|g| *g == gold[0]) {
            log::warn!("sts {}-{}: constant gold, group skipped", key.0, key.1);
            continue;
        }
        let rho = match spearman(&cos, &gold) {
            Ok(r) => r,
            // Constant predictions carry no ranking information.
            Err(Error::UndefinedCorrelation(_)) => 0.0,
            Err(e) => return Err(e),
        };
        per.insert(key, 100.0 * rho);
    }
    Ok(fold_orientations(per, mode))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// MCQA accuracy per language (mono) or unordered pair (cross, averaged).
pub fn eval_mcqa(embedders: &Embedders<'_>, bench: &McqaBenchmark, mode: Mode) -> Result<Vec<Score>> {
    let items: Vec<_> = bench.items.iter().filter(|it| mode_of(&it.lang_passage, &it.lang_qa) == mode).collect();
    let qa: Vec<[String; 4]> = items.iter().map(|it| std::array::from_fn(|k| it.qa_text(k))).collect();
    let emb = embedders.embed_all(items.iter().zip(&qa).flat_map(|(it, qa)| {
        std::iter::once((it.lang_passage.as_str(), it.passage.as_str())).chain(qa.iter().map(|t| (it.lang_qa.as_str(), t.as_str())))
    }))?;
    let mut groups: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for (it, qa) in items.iter().zip(&qa) {
        let p = &emb[&(it.lang_passage.as_str(), it.passage.as_str())];
        let sims: Vec<f64> = qa.iter().map(|t| cosine(p, &emb[&(it.lang_qa.as_str(), t.as_str())])).collect();
        let g = groups.entry((it.lang_passage.clone(), it.lang_qa.clone())).or_default();
        g.0 += (argmax_first(&sims) == it.correct) as usize;
        g.1 += 1;
    }
    let per = groups.into_iter().map(|(k, (c, n))| (k, c as f64 / n as f64)).collect();
    Ok(fold_orientations(per, mode))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Sts,
    Mcqa,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sts => "sts",
            Task::Mcqa => "mcqa",
        }
    }

    pub fn metric(self) -> &'static str {
        match self {
            Task::Sts => "spearman_x100",
            Task::Mcqa => "accuracy",
        }
    }
}

/// Mono rows (the diagonal) plus one averaged row per unordered pair.
/// `mono` embeds without CLA adapters, `cross` with them.
pub fn cross_matrix(
    mono: &Embedders<'_>,
    cross: &Embedders<'_>,
    sts: &StsBenchmark,
    mcqa: &McqaBenchmark,
    task: Task,
) -> Result<Vec<Score>> {
    let mut out = Vec::new();
    for (mode, e) in [(Mode::Mono, mono), (Mode::Cross, cross)] {
        out.extend(match task {
            Task::Sts => eval_sts(e, sts, mode)?,
            Task::Mcqa => eval_mcqa(e, mcqa, mode)?,
        });
    }
    Ok(out)
}

/// Exact-knowledge embedder: one-hot over the meanings behind each text,
/// normalised. Texts come from the benchmarks, where realisation is
/// injective, so text → meanings is well defined.
pub fn oracle_embedders<'a>(sts: &StsBenchmark, mcqa: &McqaBenchmark, langs: &[String]) -> Embedders<'a> {
    let mut table: HashMap<String, BTreeSet<usize>> = HashMap::new();
    for p in &sts.pairs {
        table.insert(p.text_a.clone(), p.meanings_a.clone());
        table.insert(p.text_b.clone(), p.meanings_b.clone());
    }
    for it in &mcqa.items {
        table.insert(it.passage.clone(), it.passage_meanings.clone());
        for k in 0..4 {
            table.insert(it.qa_text(k), it.question_meanings.union(&it.answer_meanings[k]).copied().collect());
        }
    }
    let dim = table.values().flatten().max().map_or(1, |m| m + 1);
    let table = std::rc::Rc::new(table);
    Embedders::shared(langs, move |texts: &[String]| {
        texts
            .iter()
            .map(|t| {
                let m = table.get(t).ok_or_else(|| Error::Invalid(format!("oracle has no meaning for {t:?}")))?;
                let mut v = vec![0.0; dim];
                let w = 1.0 / (m.len() as f64).sqrt();
                m.iter().for_each(|&i| v[i] = w);
                Ok(v)
            })
            .collect()
    })
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub regime: String,
    pub base_variant: String,
    pub task: String,
    pub mode: Mode,
    pub lang: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

pub const REPORT_HEADER: &str = "regime,base_variant,task,mode,lang,seed,metric,value";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn push_scores(&mut self, regime: &str, base_variant: &str, task: Task, seed: u64, scores: &[Score]) {
        self.rows.extend(scores.iter().map(|s| ReportRow {
            regime: regime.to_string(),
            base_variant: base_variant.to_string(),
            task: task.as_str().to_string(),
            mode: s.mode,
            lang: s.lang.clone(),
            seed,
            metric: task.metric().to_string(),
            value: s.value,
        }));
    }

    fn key(r: &ReportRow) -> (&str, &str, &str, Mode, &str, u64, &str) {
        (&r.regime, &r.base_variant, &r.task, r.mode, &r.lang, r.seed, &r.metric)
    }

    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| Self::key(a).cmp(&Self::key(b)));
    }

    /// Canonically sorted CSV, LF line endings, fixed precision.
    pub fn to_csv(&self) -> String {
        let mut sorted = self.clone();
        sorted.sort();
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &sorted.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{:.6}\n",
                r.regime, r.base_variant, r.task, r.mode, r.lang, r.seed, r.metric, r.value
            ));
        }
        s
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::format(origin, "missing report header"));
        }
        let rows = lines
            .enumerate()
            .map(|(n, line)| {
                let f: Vec<&str> = line.split(',').collect();
                let bad = |what: &str| Error::format(origin, format!("line {}: {what}", n + 2));
                if f.len() != 8 {
                    return Err(bad("expected 8 columns"));
                }
                Ok(ReportRow {
                    regime: f[0].into(),
                    base_variant: f[1].into(),
                    task: f[2].into(),
                    mode: f[3].parse().map_err(|_| bad("bad mode"))?,
                    lang: f[4].into(),
                    seed: f[5].parse().map_err(|_| bad("bad seed"))?,
                    metric: f[6].into(),
                    value: f[7].parse().map_err(|_| bad("bad value"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    /// Rows matching every given field.
    pub fn select<'r>(&'r self, regime: &'r str, base_variant: &'r str, task: &'r str, mode: Mode) -> impl Iterator<Item = &'r ReportRow> + 'r {
        self.rows
            .iter()
            .filter(move |r| r.regime == regime && r.base_variant == base_variant && r.task == task && r.mode == mode)
    }
}
