//! Vocabulary transplant: initialise a new language-specific embedding
//! matrix from a base model's embeddings.
//!
//! Tokens present in both vocabularies are copied. Every other target token
//! becomes a sparsemax-weighted convex combination of the copied tokens,
//! with similarity measured in an auxiliary static embedding space. The
//! auxiliary space is a positive-PMI co-occurrence matrix factorised by a
//! truncated SVD.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::DMatrix;

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::numerics::kernels::{cosine, sparsemax};
use crate::numerics::Tensor;
use crate::tokenizer::{BpeModel, Vocab, CLS, SEP};

pub const DEFAULT_AUX_DIM: usize = 32;
pub const PAPER_AUX_DIM: usize = 300;
pub const DEFAULT_WINDOW: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct AuxEmbeddings {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// Tokens that never co-occurred with anything; their vectors are zero.
    pub zero_tokens: Vec<String>,
}

/// Per-word token streams of a target-language corpus under both
/// tokenizers: each word contributes its target subwords followed by its
/// source subwords, so the two segmentations share contexts.
pub fn joint_token_sequences<S: AsRef<str>>(corpus: &[S], target: &BpeModel, source: &BpeModel) -> Vec<Vec<String>> {
    let tok = |m: &BpeModel, id: u32| m.vocab.token(id).expect("encoder emits in-range ids").to_string();
    corpus
        .iter()
        .map(|line| {
            let mut seq = vec![CLS.to_string()];
            for w in line.as_ref().split_whitespace() {
                seq.extend(target.encode_word(w).into_iter().map(|i| tok(target, i)));
                seq.extend(source.encode_word(w).into_iter().map(|i| tok(source, i)));
            }
            seq.push(SEP.to_string());
            seq
        })
        .collect()
}

/// PPMI + truncated SVD token vectors for every token in `rows` (all
/// tokens seen in `sequences` when `rows` is `None`).
///
/// Co-occurrence is counted symmetrically within `window` positions. The
/// vector of row token `i` is `U_i · sqrt(σ)`; each singular vector's sign
/// is fixed so that its largest-magnitude entry is nonnegative, and
/// dimensions beyond the numerical rank are zero.
pub fn train_aux_embeddings(
    sequences: &[Vec<String>],
    rows: Option<&[String]>,
    dim: usize,
    window: usize,
) -> Result<AuxEmbeddings> {
    if dim < 2 {
        return Err(Error::Invalid("aux dim must be at least 2".into()));
    }
    if window == 0 {
        return Err(Error::Invalid("window must be positive".into()));
    }
    if sequences.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let ctx: BTreeSet<&str> = sequences.iter().flatten().map(String::as_str).collect();
    let ctx_ix: HashMap<&str, usize> = ctx.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let row_tokens: Vec<String> = match rows {
        Some(r) => r.to_vec(),
        None => ctx.iter().map(|s| s.to_string()).collect(),
    };
    let row_ix: HashMap<&str, usize> = row_tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let (n, m) = (row_tokens.len(), ctx.len());

    // Counts over the full context vocabulary give the PMI marginals.
    let mut counts = vec![0.0f64; n * m];
    let mut ctx_total = vec![0.0f64; m];
    let mut row_total = vec![0.0f64; n];
    let mut total = 0.0;
    for seq in sequences {
        let ids: Vec<usize> = seq.iter().map(|t| ctx_ix[t.as_str()]).collect();
        for (i, tok) in seq.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(seq.len());
            for j in (lo..hi).filter(|&j| j != i) {
                ctx_total[ids[j]] += 1.0;
                total += 1.0;
                if let Some(&r) = row_ix.get(tok.as_str()) {
                    counts[r * m + ids[j]] += 1.0;
                    row_total[r] += 1.0;
                }
            }
        }
    }
    let mut ppmi = DMatrix::<f64>::zeros(n, m);
    for r in 0..n {
        for c in 0..m {
            let x = counts[r * m + c];
            if x > 0.0 {
                let pmi = (x * total / (row_total[r] * ctx_total[c])).ln();
                if pmi > 0.0 {
                    ppmi[(r, c)] = pmi;
                }
            }
        }
    }

    let svd = ppmi.svd(true, false);
    let u = svd.u.expect("U requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]).then(a.cmp(b)));
    let smax = order.first().map_or(0.0, |&k| svd.singular_values[k]);
    let mut vecs = vec![vec![0.0; dim]; n];
    for (d, &k) in order.iter().take(dim).enumerate() {
        let s = svd.singular_values[k];
        if s <= smax * 1e-10 || s == 0.0 {
            continue;
        }
        let col = u.column(k);
        let pivot = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let w = s.sqrt();
        for r in 0..n {
            vecs[r][d] = sign * col[r] * w;
        }
    }
    let mut zero_tokens = Vec::new();
    let mut vectors = BTreeMap::new();
    for (r, (t, mut v)) in row_tokens.iter().zip(vecs).enumerate() {
        if row_total[r] == 0.0 {
            v.iter_mut().for_each(|x| *x = 0.0);
            zero_tokens.push(t.clone());
        }
        vectors.insert(t.clone(), v);
    }
    if !zero_tokens.is_empty() {
        log::warn!("{} tokens without co-occurrences got zero aux vectors", zero_tokens.len());
    }
    Ok(AuxEmbeddings { dim, vectors, zero_tokens })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlapMap {
    /// `(target id, source id)` for every exact string match, by target id.
    pub pairs: Vec<(u32, u32)>,
}

impl OverlapMap {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_of(&self, target_id: u32) -> Option<u32> {
        self.pairs.binary_search_by_key(&target_id, |p| p.0).ok().map(|i| self.pairs[i].1)
    }
}

pub fn compute_overlap(source: &Vocab, target: &Vocab) -> Result<OverlapMap> {
    let pairs: Vec<(u32, u32)> = target
        .tokens()
        .iter()
        .enumerate()
        .filter_map(|(ti, t)| source.id(t).map(|si| (ti as u32, si)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoAnchors);
    }
    Ok(OverlapMap { pairs })
}

/// How one target row is built from source rows.
#[derive(Clone, Debug, PartialEq)]
pub enum RowInit {
    Copy(u32),
    Mix(Vec<(u32, f64)>),
    /// Zero aux vector: mean of all anchor rows.
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FocusPlan {
    pub rows: Vec<RowInit>,
    pub anchors: Vec<u32>,
    pub fallback_tokens: Vec<String>,
}

/// Per-target-token interpolation weights.
pub fn focus_plan(overlap: &OverlapMap, aux: &AuxEmbeddings, target: &Vocab) -> Result<FocusPlan> {
    let get = |t: &str| aux.vectors.get(t).ok_or_else(|| Error::MissingAux(t.to_string()));
    let nonzero = |v: &[f64]| v.iter().any(|x| *x != 0.0);
    let mut anchors = Vec::new();
    for &(ti, si) in &overlap.pairs {
        let v = get(target.token(ti).expect("overlap ids valid"))?;
        if nonzero(v) {
            anchors.push((si, v));
        }
    }
    let mut rows = Vec::with_capacity(target.len());
    let mut fallback_tokens = Vec::new();
    for (ti, tok) in target.tokens().iter().enumerate() {
        if let Some(si) = overlap.source_of(ti as u32) {
            rows.push(RowInit::Copy(si));
            continue;
        }
        let v = get(tok)?;
        if !nonzero(v) || anchors.is_empty() {
            fallback_tokens.push(tok.clone());
            rows.push(RowInit::Fallback);
            continue;
        }
        let sims: Vec<f64> = anchors.iter().map(|(_, a)| cosine(v, a)).collect();
        let w = sparsemax(&sims)?;
        rows.push(RowInit::Mix(anchors.iter().zip(w).filter(|(_, w)| *w > 0.0).map(|((s, _), w)| (*s, w)).collect()));
    }
    if !fallback_tokens.is_empty() {
        log::warn!("{} target tokens fell back to the anchor mean", fallback_tokens.len());
    }
    Ok(FocusPlan { rows, anchors: overlap.pairs.iter().map(|p| p.1).collect(), fallback_tokens })
}

/// Applies a plan to a row-major source matrix (`Vs × cols`).
pub fn apply_plan(plan: &FocusPlan, source: &[f32], cols: usize) -> Vec<f32> {
    let row = |i: u32| &source[i as usize * cols..(i as usize + 1) * cols];
    let mut mean = vec![0.0f64; cols];
    for &a in &plan.anchors {
        for (m, x) in mean.iter_mut().zip(row(a)) {
            *m += *x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= plan.anchors.len().max(1) as f64);
    let mut out = Vec::with_capacity(plan.rows.len() * cols);
    for r in &plan.rows {
        match r {
            RowInit::Copy(s) => out.extend_from_slice(row(*s)),
            RowInit::Mix(ws) => {
                let mut acc = vec![0.0f64; cols];
                for (s, w) in ws {
                    for (a, x) in acc.iter_mut().zip(row(*s)) {
                        *a += w * *x as f64;
                    }
                }
                out.extend(acc.into_iter().map(|x| x as f32));
            }
            RowInit::Fallback => out.extend(mean.iter().map(|x| *x as f32)),
        }
    }
    out
}

/// Target embedding matrix (`V_target × d`).
pub fn focus_init(
    source_embeddings: &Tensor<f32>,
    overlap: &OverlapMap,
    aux: &AuxEmbeddings,
    target_vocab: &Vocab,
) -> Result<Tensor<f32>> {
    let (_, d) = source_embeddings.dims2();
    let plan = focus_plan(overlap, aux, target_vocab)?;
    Tensor::new(vec![target_vocab.len(), d], apply_plan(&plan, &source_embeddings.data, d))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransplantReport {
    pub overlap: usize,
    pub anchors_with_aux: usize,
    pub fallback_tokens: Vec<String>,
    pub zero_aux_tokens: Vec<String>,
}

/// Full transplant of `base` (tokenised by `source`) onto `target`, with
/// aux embeddings trained on `corpus` (target-language text).
pub fn transplant_model<S: AsRef<str>>(
    base: &EncoderModel,
    source: &BpeModel,
    target: &BpeModel,
    corpus: &[S],
    aux_dim: usize,
    window: usize,
) -> Result<(EncoderModel, TransplantReport)> {
    let overlap = compute_overlap(&source.vocab, &target.vocab)?;
    let seqs = joint_token_sequences(corpus, target, source);
    let aux = train_aux_embeddings(&seqs, Some(target.vocab.tokens()), aux_dim, window)?;
    let plan = focus_plan(&overlap, &aux, &target.vocab)?;
    let d = base.config.d_model;
    let v = target.vocab.len();
    let emb = Tensor::new(vec![v, d], apply_plan(&plan, &base.token_embeddings().data, d))?;
    let bias = Tensor::new(vec![v], apply_plan(&plan, &base.mlm_bias().data, 1))?;
    let model = base.with_vocabulary(emb, bias)?;
    let anchors_with_aux = overlap.pairs.iter().filter(|(t, _)| !aux.zero_tokens.contains(&target.vocab.tokens()[*t as usize])).count();
    let report = TransplantReport {
        overlap: overlap.len(),
        anchors_with_aux,
        fallback_tokens: plan.fallback_tokens,
        zero_aux_tokens: aux.zero_tokens,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::SPECIALS;

    fn vocab(extra: &[&str]) -> Vocab {
        let mut t: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        t.extend(extra.iter().map(|s| s.to_string()));
        Vocab::from_tokens(t).unwrap()
    }

    fn aux(pairs: &[(&str, Vec<f64>)]) -> AuxEmbeddings {
        AuxEmbeddings {
            dim: pairs[0].1.len(),
            vectors: pairs.iter().map(|(t, v)| (t.to_string(), v.clone())).collect(),
            zero_tokens: vec![],
        }
    }

    #[test]
    fn overlap_cases() {
        let a = vocab(&["ab", "a", "x"]);
        assert_eq!(compute_overlap(&a, &a).unwrap().len(), a.len());
        let b = vocab(&["q", "r"]);
        let o = compute_overlap(&a, &b).unwrap();
        assert_eq!(o.pairs, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
        let c = vocab(&["z", "a", "ab"]);
        let o = compute_overlap(&a, &c).unwrap();
        let shared: BTreeSet<&str> = o.pairs.iter().map(|(t, _)| c.token(*t).unwrap()).collect();
        let oracle: BTreeSet<&str> = a.tokens().iter().map(String::as_str).filter(|t| c.id(t).is_some()).collect();
        assert_eq!(shared, oracle);
        assert_eq!(o.source_of(7), a.id("ab"));
    }

    fn setup() -> (Vocab, Vocab, Tensor<f32>) {
        let src = vocab(&["a", "b"]);
        let tgt = vocab(&["a", "b", "n1", "n2"]);
        let emb: Vec<f32> = (0..7 * 3).map(|i| (i as f32 * 0.37).sin()).collect();
        (src, tgt, Tensor::new(vec![7, 3], emb).unwrap())
    }

    fn specials_aux() -> Vec<(&'static str, Vec<f64>)> {
        SPECIALS.iter().map(|s| (*s, vec![0.0, 0.0, 0.0])).collect()
    }

    #[test]
    fn copy_dominant_and_midpoint() {
        let (src, tgt, emb) = setup();
        let mut a = specials_aux();
        a.extend([
            ("a", vec![1.0, 0.0, 0.0]),
            ("b", vec![0.0, 1.0, 0.0]),
            ("n1", vec![1.0, 0.0, 0.0]),
            ("n2", vec![1.0, 1.0, 0.0]),
        ]);
        let ov = compute_overlap(&src, &tgt).unwrap();
        let out = focus_init(&emb, &ov, &aux(&a), &tgt).unwrap();
        for t in 0..7 {
            assert_eq!(out.row(t), emb.row(t), "copied row {t}");
        }
        // n1 equals anchor a exactly: weights [1, 0]
        assert_eq!(out.row(7), emb.row(5));
        // n2 symmetric between a and b
        for j in 0..3 {
            let mid = 0.5 * emb.row(5)[j] as f64 + 0.5 * emb.row(6)[j] as f64;
            assert!((out.row(8)[j] as f64 - mid).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_aux_falls_back_and_missing_aux_errors() {
        let (src, tgt, emb) = setup();
        let mut a = specials_aux();
        a.extend([("a", vec![1.0, 0.0, 0.0]), ("b", vec![0.0, 1.0, 0.0]), ("n1", vec![0.0; 3])]);
        let ov = compute_overlap(&src, &tgt).unwrap();
        assert!(matches!(focus_init(&emb, &ov, &aux(&a), &tgt), Err(Error::MissingAux(t)) if t == "n2"));
        a.push(("n2", vec![0.2, 0.1, 0.0]));
        let plan = focus_plan(&ov, &aux(&a), &tgt).unwrap();
        assert_eq!(plan.fallback_tokens, vec!["n1".to_string()]);
        let out = apply_plan(&plan, &emb.data, 3);
        let mean: Vec<f64> = (0..3).map(|j| (0..7).map(|r| emb.row(r)[j] as f64).sum::<f64>() / 7.0).collect();
        for j in 0..3 {
            assert!((out[7 * 3 + j] as f64 - mean[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_contexts_give_parallel_vectors() {
        let mut seqs = Vec::new();
        for i in 0..30 {
            let ctx = ["c0", "c1", "c2", "c3", "c4"][i % 5];
            let ctx2 = ["d0", "d1", "d2"][i % 3];
            for t in ["x", "y"] {
                seqs.push(vec![ctx.to_string(), t.to_string(), ctx2.to_string()]);
            }
            seqs.push(vec![ctx2.to_string(), "z".to_string(), "c9".to_string()]);
        }
        let aux = train_aux_embeddings(&seqs, None, 4, 1).unwrap();
        let c = cosine(&aux.vectors["x"], &aux.vectors["y"]);
        assert!(c >= 0.99, "{c}");
    }

    #[test]
    fn rank_deficient_dims_are_zero() {
        let seqs = vec![vec!["a".to_string(), "b".to_string()]; 4];
        let aux = train_aux_embeddings(&seqs, None, 6, 1).unwrap();
        for v in aux.vectors.values() {
            assert!(v[2..].iter().all(|x| *x == 0.0), "{v:?}");
        }
        let again = train_aux_embeddings(&seqs, None, 6, 1).unwrap();
        assert_eq!(aux, again);
    }

    #[test]
    fn unseen_row_token_is_zero_and_reported() {
        let seqs = vec![vec!["a".to_string(), "b".to_string(), "c".to_string()]];
        let rows = vec!["a".to_string(), "ghost".to_string()];
        let aux = train_aux_embeddings(&seqs, Some(&rows), 2, 1).unwrap();
        assert_eq!(aux.zero_tokens, vec!["ghost".to_string()]);
        assert!(aux.vectors["ghost"].iter().all(|x| *x == 0.0));
    }
}
