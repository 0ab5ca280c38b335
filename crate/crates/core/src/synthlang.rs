//! A deterministic synthetic language family and the benchmarks built on it.
//!
//! Meaning lives in language-neutral concept sentences. Content concepts
//! come in synonym groups (lexical variants of one meaning); function
//! concepts carry no meaning. Each language realises a concept sentence by
//! reordering it, looking every concept up in its own lexicon and adding a
//! position-dependent suffix, so "translation" is exact by construction
//! while surface forms differ at the character level.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngState;

pub const MIN_CONTENT: usize = 50;
pub const MIN_LEN: usize = 3;
pub const MAX_LEN: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InventoryConfig {
    pub n_groups: usize,
    pub group_size_min: usize,
    pub group_size_max: usize,
    pub n_function: usize,
}

impl Default for InventoryConfig {
    fn default() -> Self {
        Self { n_groups: 60, group_size_min: 2, group_size_max: 3, n_function: 12 }
    }
}

/// Content concepts are ids `0..n_content`; function concepts follow.
#[derive(Clone, Debug, PartialEq)]
pub struct Inventory {
    pub groups: Vec<Vec<usize>>,
    pub group_of: Vec<usize>,
    pub n_function: usize,
}

impl Inventory {
    pub fn new(cfg: &InventoryConfig, rng: &RngState) -> Result<Self> {
        if cfg.group_size_min < 1 || cfg.group_size_max < cfg.group_size_min {
            return Err(Error::InventoryTooSmall("invalid synonym group size range".into()));
        }
        let mut r = rng.fork("inventory");
        let sizes: Vec<usize> =
            (0..cfg.n_groups).map(|_| r.range_inclusive(cfg.group_size_min, cfg.group_size_max)).collect();
        Self::from_group_sizes(&sizes, cfg.n_function)
    }

    pub fn from_group_sizes(sizes: &[usize], n_function: usize) -> Result<Self> {
        let mut groups = Vec::with_capacity(sizes.len());
        let mut group_of = Vec::new();
        for (g, &s) in sizes.iter().enumerate() {
            if s == 0 {
                return Err(Error::InventoryTooSmall(format!("synonym group {g} is empty")));
            }
            groups.push((group_of.len()..group_of.len() + s).collect());
            group_of.extend(std::iter::repeat_n(g, s));
        }
        if n_function == 0 {
            return Err(Error::InventoryTooSmall("at least one function concept is required".into()));
        }
        Ok(Self { groups, group_of, n_function })
    }

    pub fn n_content(&self) -> usize {
        self.group_of.len()
    }

    pub fn n_concepts(&self) -> usize {
        self.n_content() + self.n_function
    }

    pub fn is_content(&self, c: usize) -> bool {
        c < self.n_content()
    }

    pub fn group(&self, c: usize) -> Option<usize> {
        self.group_of.get(c).copied()
    }

    pub fn synonyms(&self, c: usize) -> &[usize] {
        &self.groups[self.group_of[c]]
    }

    fn function_concept(&self, r: &mut RngState) -> usize {
        self.n_content() + r.below(self.n_function)
    }

    /// Checks the preconditions for corpus generation.
    pub fn check_generation(&self) -> Result<()> {
        if self.n_content() < MIN_CONTENT {
            return Err(Error::InventoryTooSmall(format!(
                "{} content concepts, need at least {MIN_CONTENT}",
                self.n_content()
            )));
        }
        if let Some(g) = self.groups.iter().position(|g| g.len() < 2) {
            return Err(Error::InventoryTooSmall(format!("synonym group {g} has fewer than 2 members")));
        }
        if self.groups.len() < MAX_LEN {
            return Err(Error::InventoryTooSmall(format!("need at least {MAX_LEN} synonym groups")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptSentence {
    pub concepts: Vec<usize>,
}

impl ConceptSentence {
    pub fn content(&self, inv: &Inventory) -> BTreeSet<usize> {
        self.concepts.iter().copied().filter(|c| inv.is_content(*c)).collect()
    }

    /// Meanings: the synonym groups of the content concepts.
    pub fn meanings(&self, inv: &Inventory) -> BTreeSet<usize> {
        self.concepts.iter().filter_map(|c| inv.group(*c)).collect()
    }

    pub fn validate(&self, inv: &Inventory) -> Result<()> {
        if let Some(c) = self.concepts.iter().find(|c| **c >= inv.n_concepts()) {
            return Err(Error::UnknownConcept(*c));
        }
        Ok(())
    }
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// One random concept sentence: length uniform in `[3, 12]`, at least two
/// content concepts, all from distinct synonym groups.
pub fn gen_sentence(inv: &Inventory, r: &mut RngState) -> ConceptSentence {
    let len = r.range_inclusive(MIN_LEN, MAX_LEN);
    let hi = (len * 2).div_ceil(3).max(2);
    let k = r.range_inclusive(2, hi);
    let mut groups: Vec<usize> = (0..inv.groups.len()).collect();
    r.shuffle(&mut groups);
    let mut concepts: Vec<usize> = groups[..k].iter().map(|g| *r.choose(&inv.groups[*g])).collect();
    while concepts.len() < len {
        concepts.push(inv.function_concept(r));
    }
    r.shuffle(&mut concepts);
    ConceptSentence { concepts }
}

pub fn gen_concept_corpus(rng: &RngState, n_sentences: usize, inv: &Inventory) -> Result<Vec<ConceptSentence>> {
    inv.check_generation()?;
    Ok((0..n_sentences as u64).map(|i| gen_sentence(inv, &mut rng.fork_index("sentence", i))).collect())
}

/// Word-order rule: a permutation of positions that depends only on length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderRule {
    Identity,
    Reverse,
    SwapPairs,
    RotateLeft,
    EvensThenOdds,
}

impl OrderRule {
    /// `out[i] = input[perm[i]]`
    pub fn permutation(self, n: usize) -> Vec<usize> {
        match self {
            OrderRule::Identity => (0..n).collect(),
            OrderRule::Reverse => (0..n).rev().collect(),
            OrderRule::SwapPairs => (0..n).map(|i| if i % 2 == 0 { (i + 1).min(n - 1) } else { i - 1 }).collect(),
            OrderRule::RotateLeft => (0..n).map(|i| (i + 1) % n).collect(),
            OrderRule::EvensThenOdds => (0..n).step_by(2).chain((1..n).step_by(2)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phonotactics {
    pub consonants: String,
    pub vowels: String,
    /// Syllable templates over `C` and `V`, e.g. `["CV", "CVC"]`.
    pub syllables: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageSpec {
    pub lang_id: String,
    /// `lexicon[c]` is the root of concept `c`.
    pub lexicon: Vec<String>,
    pub order: OrderRule,
    /// The word at output position `i` takes `suffixes[i % len]`.
    pub suffixes: Vec<String>,
}

fn gen_word(ph: &Phonotactics, syllables: usize, r: &mut RngState) -> String {
    let cs: Vec<char> = ph.consonants.chars().collect();
    let vs: Vec<char> = ph.vowels.chars().collect();
    let mut w = String::new();
    for _ in 0..syllables {
        for slot in r.choose(&ph.syllables).chars() {
            w.push(if slot == 'V' { *r.choose(&vs) } else { *r.choose(&cs) });
        }
    }
    w
}

/// A regular sound law: every proto segment maps to one fixed segment of
/// the same class (consonant or vowel). A `drift` share of each class (a
/// random subset, rounded) shifts to a segment of the language's own
/// inventory; the rest is kept. Shifts avoid targets already taken, so no
/// two proto segments merge unless the own inventory runs out.
fn sound_law(proto: &Phonotactics, own: &Phonotactics, drift: f64, r: &mut RngState) -> HashMap<char, char> {
    let mut law = HashMap::new();
    for (pool, segs) in [(&own.consonants, &proto.consonants), (&own.vowels, &proto.vowels)] {
        let segs: Vec<char> = segs.chars().collect();
        let pool: Vec<char> = pool.chars().collect();
        let n_shift = (drift * segs.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..segs.len()).collect();
        r.shuffle(&mut order);
        let mut shifts = vec![false; segs.len()];
        order.iter().take(n_shift).for_each(|&i| shifts[i] = true);
        let mut taken: HashSet<char> = segs.iter().zip(&shifts).filter(|(_, s)| !**s).map(|(c, _)| *c).collect();
        for (&c, &shift) in segs.iter().zip(&shifts) {
            let to = if shift {
                let free: Vec<char> = pool.iter().copied().filter(|t| !taken.contains(t)).collect();
                if free.is_empty() { *r.choose(&pool) } else { *r.choose(&free) }
            } else {
                c
            };
            taken.insert(to);
            law.insert(c, to);
        }
    }
    law
}

/// Lexicons for every language of the family. Roots are drawn once from the
/// pivot's phonotactics (one- or two-syllable function words, two- or
/// three-syllable content roots) and passed through each language's sound
/// law, so the languages are cognate but distinct at the token level. A
/// root is redrawn until every root+suffix form is new in every language,
/// which makes realisation injective.
fn generate_lexicons(inv: &Inventory, defs: &[LanguageDef], pivot: &LanguageDef, rng: &RngState) -> Result<Vec<Vec<String>>> {
    for d in defs {
        let ph = &d.phonotactics;
        if ph.consonants.is_empty() || ph.vowels.is_empty() || ph.syllables.is_empty() || d.suffixes.is_empty() {
            return Err(Error::Invalid(format!("language {}: empty phonotactics or suffix list", d.id)));
        }
        if !(0.0..=1.0).contains(&d.drift) {
            return Err(Error::Invalid(format!("language {}: drift must lie in [0, 1]", d.id)));
        }
    }
    let proto = &pivot.phonotactics;
    let laws: Vec<HashMap<char, char>> =
        defs.iter().map(|d| sound_law(proto, &d.phonotactics, d.drift, &mut rng.fork(&format!("sound-law/{}", d.id)))).collect();
    let mut r = rng.fork("proto-lexicon");
    let mut surface: Vec<HashSet<String>> = vec![HashSet::new(); defs.len()];
    let mut lexicons: Vec<Vec<String>> = vec![Vec::with_capacity(inv.n_concepts()); defs.len()];
    for c in 0..inv.n_concepts() {
        let (lo, hi) = if inv.is_content(c) { (2, 3) } else { (1, 2) };
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Invalid("phonotactics too small for the lexicon".into()));
            }
            let root = gen_word(proto, r.range_inclusive(lo, hi), &mut r);
            let roots: Vec<String> = laws.iter().map(|law| root.chars().map(|ch| law[&ch]).collect()).collect();
            let fresh = defs.iter().zip(&roots).zip(&surface).all(|((d, w), seen)| {
                let forms: HashSet<String> = d.suffixes.iter().map(|s| format!("{w}{s}")).collect();
                let distinct: HashSet<&String> = d.suffixes.iter().collect();
                forms.len() == distinct.len() && forms.iter().all(|f| !seen.contains(f))
            });
            if !fresh {
                continue;
            }
            for (i, (d, w)) in defs.iter().zip(roots).enumerate() {
                surface[i].extend(d.suffixes.iter().map(|s| format!("{w}{s}")));
                lexicons[i].push(w);
            }
            break;
        }
    }
    Ok(lexicons)
}

impl LanguageSpec {
    pub fn realize(&self, cs: &ConceptSentence) -> Result<String> {
        let n = cs.concepts.len();
        let mut out = String::new();
        for (i, p) in self.order.permutation(n).into_iter().enumerate() {
            let c = cs.concepts[p];
            let root = self.lexicon.get(c).ok_or(Error::UnknownConcept(c))?;
            if i > 0 {
                out.push(' ');
            }
            out.push_str(root);
            out.push_str(&self.suffixes[i % self.suffixes.len()]);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageDef {
    pub id: String,
    pub phonotactics: Phonotactics,
    pub order: OrderRule,
    pub suffixes: Vec<String>,
    #[serde(default)]
    pub low_resource: bool,
    /// Probability that a proto segment shifts in this language's sound law.
    #[serde(default)]
    pub drift: f64,
}

fn ph(c: &str, v: &str, s: &[&str]) -> Phonotactics {
    Phonotactics { consonants: c.into(), vowels: v.into(), syllables: s.iter().map(|x| x.to_string()).collect() }
}

/// Pivot plus four languages, the last two low-resource.
pub fn default_languages() -> Vec<LanguageDef> {
    let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        LanguageDef {
            id: "sa".into(),
            phonotactics: ph("ptkmnlsr", "aeiou", &["CV", "CVC"]),
            order: OrderRule::Identity,
            suffixes: s(&[""]),
            low_resource: false,
            drift: 0.0,
        },
        LanguageDef {
            id: "sb".into(),
            phonotactics: ph("bdgvzmnl", "aeiy", &["CV", "V"]),
            order: OrderRule::Reverse,
            suffixes: s(&["", "en"]),
            low_resource: false,
            drift: 0.25,
        },
        LanguageDef {
            id: "sc".into(),
            phonotactics: ph("ptkfshrw", "aou", &["CVC", "CV"]),
            order: OrderRule::SwapPairs,
            suffixes: s(&["a", "", "os"]),
            low_resource: false,
            drift: 0.35,
        },
        LanguageDef {
            id: "sd".into(),
            phonotactics: ph("mnrlkqj", "eiou", &["CV", "CVV"]),
            order: OrderRule::RotateLeft,
            suffixes: s(&["", "ki"]),
            low_resource: true,
            drift: 0.45,
        },
        LanguageDef {
            id: "se".into(),
            phonotactics: ph("dtszcxl", "aeuy", &["CVC", "VC"]),
            order: OrderRule::EvensThenOdds,
            suffixes: s(&["u", "", "", "ax"]),
            low_resource: true,
            drift: 0.55,
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Family {
    pub inventory: Inventory,
    pub languages: Vec<LanguageSpec>,
    pub pivot: String,
    pub low_resource: BTreeSet<String>,
}

impl Family {
    pub fn new(inv_cfg: &InventoryConfig, defs: &[LanguageDef], pivot: &str, rng: &RngState) -> Result<Self> {
        let inventory = Inventory::new(inv_cfg, rng)?;
        inventory.check_generation()?;
        if !defs.iter().any(|d| d.id == pivot) {
            return Err(Error::MissingLanguage(pivot.to_string()));
        }
        let mut seen = BTreeSet::new();
        for d in defs {
            if !seen.insert(d.id.clone()) {
                return Err(Error::Invalid(format!("duplicate language {}", d.id)));
            }
        }
        let pivot_def = defs.iter().find(|d| d.id == pivot).expect("checked above");
        let lexicons = generate_lexicons(&inventory, defs, pivot_def, rng)?;
        let languages = defs
            .iter()
            .zip(lexicons)
            .map(|(d, lexicon)| LanguageSpec { lang_id: d.id.clone(), lexicon, order: d.order, suffixes: d.suffixes.clone() })
            .collect();
        let low_resource = defs.iter().filter(|d| d.low_resource).map(|d| d.id.clone()).collect();
        Ok(Self { inventory, languages, pivot: pivot.to_string(), low_resource })
    }

    pub fn lang(&self, id: &str) -> Result<&LanguageSpec> {
        self.languages.iter().find(|l| l.lang_id == id).ok_or_else(|| Error::MissingLanguage(id.to_string()))
    }

    pub fn lang_ids(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.lang_id.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParaphraseKnobs {
    pub p_synonym: f64,
    pub p_function: f64,
    pub min_jaccard: f64,
    pub max_tries: usize,
}

impl Default for ParaphraseKnobs {
    fn default() -> Self {
        Self { p_synonym: 0.5, p_function: 0.3, min_jaccard: 0.6, max_tries: 20 }
    }
}

fn swap_synonym(inv: &Inventory, c: usize, r: &mut RngState) -> usize {
    let syn = inv.synonyms(c);
    if syn.len() < 2 {
        return c;
    }
    let others: Vec<usize> = syn.iter().copied().filter(|s| *s != c).collect();
    *r.choose(&others)
}

fn function_edit(inv: &Inventory, concepts: &mut Vec<usize>, r: &mut RngState) {
    let fpos: Vec<usize> = (0..concepts.len()).filter(|i| !inv.is_content(concepts[*i])).collect();
    let can_drop = !fpos.is_empty() && concepts.len() > MIN_LEN;
    let can_insert = concepts.len() < MAX_LEN;
    let drop = match (can_drop, can_insert) {
        (true, true) => r.bernoulli(0.5),
        (d, _) => d,
    };
    if drop {
        concepts.remove(*r.choose(&fpos));
    } else if can_insert {
        let at = r.below(concepts.len() + 1);
        let f = inv.function_concept(r);
        concepts.insert(at, f);
    }
}

/// Surface paraphrase: synonym swaps and one function-word edit, resampled
/// until the content-concept Jaccard with the input is at least
/// `min_jaccard`. Returns `(paraphrase, fell_back)`; when every attempt
/// fails, the fallback swaps only as many synonyms as the bound allows.
pub fn gen_paraphrase(
    cs: &ConceptSentence,
    inv: &Inventory,
    knobs: &ParaphraseKnobs,
    r: &mut RngState,
) -> (ConceptSentence, bool) {
    let content = cs.content(inv);
    for _ in 0..knobs.max_tries {
        let mut concepts: Vec<usize> = cs
            .concepts
            .iter()
            .map(|&c| if inv.is_content(c) && r.bernoulli(knobs.p_synonym) { swap_synonym(inv, c, r) } else { c })
            .collect();
        if r.bernoulli(knobs.p_function) {
            function_edit(inv, &mut concepts, r);
        }
        let p = ConceptSentence { concepts };
        if jaccard(&content, &p.content(inv)) >= knobs.min_jaccard {
            return (p, false);
        }
    }
    // With k content concepts and s swaps the Jaccard is (k-s)/(k+s).
    let k = content.len() as f64;
    let max_swaps = ((1.0 - knobs.min_jaccard) * k / (1.0 + knobs.min_jaccard)).floor() as usize;
    let mut positions: Vec<usize> = (0..cs.concepts.len()).filter(|i| inv.is_content(cs.concepts[*i])).collect();
    r.shuffle(&mut positions);
    let mut concepts = cs.concepts.clone();
    for &i in positions.iter().take(max_swaps) {
        concepts[i] = swap_synonym(inv, concepts[i], r);
    }
    (ConceptSentence { concepts }, true)
}

/// Replaces `k` meanings of the sentence (every occurrence of each chosen
/// synonym group) by distinct groups that do not occur in it, so the
/// number of meanings is preserved.
pub fn corrupt(cs: &ConceptSentence, inv: &Inventory, k: usize, r: &mut RngState) -> ConceptSentence {
    let present = cs.meanings(inv);
    let mut free: Vec<usize> = (0..inv.groups.len()).filter(|g| !present.contains(g)).collect();
    r.shuffle(&mut free);
    let mut chosen: Vec<usize> = present.into_iter().collect();
    r.shuffle(&mut chosen);
    let remap: BTreeMap<usize, usize> = chosen.into_iter().take(k).zip(free).collect();
    let concepts = cs
        .concepts
        .iter()
        .map(|&c| match inv.group(c).and_then(|g| remap.get(&g)) {
            Some(&g) => *r.choose(&inv.groups[g]),
            None => c,
        })
        .collect();
    ConceptSentence { concepts }
}

/// Hard negative: exactly one content concept replaced by a non-synonym.
pub fn hard_negative(cs: &ConceptSentence, inv: &Inventory, r: &mut RngState) -> ConceptSentence {
    corrupt(cs, inv, 1, r)
}

/// Synonym noise applied to a translation.
pub fn translation_noise(cs: &ConceptSentence, inv: &Inventory, p: f64, r: &mut RngState) -> ConceptSentence {
    let concepts =
        cs.concepts.iter().map(|&c| if inv.is_content(c) && r.bernoulli(p) { swap_synonym(inv, c, r) } else { c }).collect();
    ConceptSentence { concepts }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParaItem {
    pub anchor: ConceptSentence,
    pub positive: ConceptSentence,
    pub hard_negative: Option<ConceptSentence>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealizedItem {
    pub anchor: String,
    pub positive: String,
    pub hard_negative: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiParallelCorpus {
    pub items: Vec<ParaItem>,
    /// Per language, one realisation of every item (same order as `items`).
    pub texts: BTreeMap<String, Vec<RealizedItem>>,
    pub fallbacks: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusKnobs {
    pub hard_negative_frac: f64,
    pub translation_noise: f64,
}

impl Default for CorpusKnobs {
    fn default() -> Self {
        Self { hard_negative_frac: 0.5, translation_noise: 0.1 }
    }
}

pub fn build_items(
    family: &Family,
    n_items: usize,
    knobs: &CorpusKnobs,
    para: &ParaphraseKnobs,
    rng: &RngState,
) -> Result<(Vec<ParaItem>, usize)> {
    let inv = &family.inventory;
    let anchors = gen_concept_corpus(&rng.fork("anchors"), n_items, inv)?;
    let mut fallbacks = 0;
    let items = anchors
        .into_iter()
        .enumerate()
        .map(|(i, anchor)| {
            let mut r = rng.fork_index("item", i as u64);
            let (positive, fb) = gen_paraphrase(&anchor, inv, para, &mut r);
            fallbacks += fb as usize;
            let hard_negative = r.bernoulli(knobs.hard_negative_frac).then(|| hard_negative(&anchor, inv, &mut r));
            ParaItem { anchor, positive, hard_negative }
        })
        .collect();
    if fallbacks > 0 {
        log::info!("{fallbacks} paraphrases used the synonym-swap fallback");
    }
    Ok((items, fallbacks))
}

/// Realises items in one language; non-pivot languages get translation noise.
pub fn realize_items(
    family: &Family,
    items: &[ParaItem],
    lang: &str,
    noise: f64,
    rng: &RngState,
) -> Result<Vec<RealizedItem>> {
    let spec = family.lang(lang)?;
    let inv = &family.inventory;
    let p = if lang == family.pivot { 0.0 } else { noise };
    items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let mut r = rng.fork(&format!("translate/{lang}")).fork_index("item", i as u64);
            let mut real = |cs: &ConceptSentence| spec.realize(&translation_noise(cs, inv, p, &mut r));
            Ok(RealizedItem {
                anchor: real(&it.anchor)?,
                positive: real(&it.positive)?,
                hard_negative: it.hard_negative.as_ref().map(&mut real).transpose()?,
            })
        })
        .collect()
}

pub fn build_multiparallel(
    family: &Family,
    n_items: usize,
    knobs: &CorpusKnobs,
    para: &ParaphraseKnobs,
    rng: &RngState,
) -> Result<MultiParallelCorpus> {
    let (items, fallbacks) = build_items(family, n_items, knobs, para, rng)?;
    let mut texts = BTreeMap::new();
    for l in family.lang_ids() {
        texts.insert(l.clone(), realize_items(family, &items, &l, knobs.translation_noise, rng)?);
    }
    Ok(MultiParallelCorpus { items, texts, fallbacks })
}

/// Monolingual MLM corpus for one language (its own sentences).
pub fn mlm_corpus(family: &Family, lang: &str, n: usize, rng: &RngState) -> Result<Vec<String>> {
    let spec = family.lang(lang)?;
    gen_concept_corpus(&rng.fork(&format!("mlm/{lang}")), n, &family.inventory)?
        .iter()
        .map(|cs| spec.realize(cs))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StsPair {
    pub lang_a: String,
    pub lang_b: String,
    pub text_a: String,
    pub text_b: String,
    pub gold: f64,
    pub meanings_a: BTreeSet<usize>,
    pub meanings_b: BTreeSet<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StsBenchmark {
    pub pairs: Vec<StsPair>,
}

/// STS pairs for every language (mono) and every ordered language pair
/// (cross). Side B is a corrupted and re-phrased copy of side A; gold is
/// the Jaccard of the two sides' meanings (synonym groups).
pub fn build_sts(
    family: &Family,
    sentences: &[ConceptSentence],
    levels: &[f64],
    langs: &[String],
    rng: &RngState,
) -> Result<StsBenchmark> {
    if levels.is_empty() || levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::Invalid("corruption levels must lie in [0, 1]".into()));
    }
    let inv = &family.inventory;
    let para = ParaphraseKnobs { min_jaccard: 0.0, max_tries: 1, ..Default::default() };
    let mut pairs = Vec::new();
    for (i, a) in sentences.iter().enumerate() {
        let mut r = rng.fork_index("sts", i as u64);
        let level = levels[i % levels.len()];
        let n = a.meanings(inv).len();
        let k = (level * n as f64).round() as usize;
        let (b, _) = gen_paraphrase(&corrupt(a, inv, k, &mut r), inv, &para, &mut r);
        let (ma, mb) = (a.meanings(inv), b.meanings(inv));
        let gold = jaccard(&ma, &mb);
        for la in langs {
            for lb in langs {
                pairs.push(StsPair {
                    lang_a: la.clone(),
                    lang_b: lb.clone(),
                    text_a: family.lang(la)?.realize(a)?,
                    text_b: family.lang(lb)?.realize(&b)?,
                    gold,
                    meanings_a: ma.clone(),
                    meanings_b: mb.clone(),
                });
            }
        }
    }
    Ok(StsBenchmark { pairs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct McqaItem {
    pub lang_passage: String,
    pub lang_qa: String,
    pub passage: String,
    pub question: String,
    pub answers: [String; 4],
    pub correct: usize,
    pub passage_meanings: BTreeSet<usize>,
    pub question_meanings: BTreeSet<usize>,
    pub answer_meanings: [BTreeSet<usize>; 4],
}

impl McqaItem {
    pub fn qa_text(&self, i: usize) -> String {
        format!("{} {}", self.question, self.answers[i])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct McqaBenchmark {
    pub items: Vec<McqaItem>,
}

struct McqaSkeleton {
    passage: Vec<ConceptSentence>,
    question: ConceptSentence,
    answers: [ConceptSentence; 4],
    correct: usize,
}

/// Multiple-choice items over disjoint passages of 3–5 sentences. The
/// question plus the correct answer paraphrase one passage sentence (the
/// answer is its last content concept); distractor answers are content
/// concepts taken from other passages whose meanings the passage lacks.
/// Every item is emitted for each ordered (passage, QA) language pair.
pub fn build_mcqa(
    family: &Family,
    sentences: &[ConceptSentence],
    n_items: usize,
    langs: &[String],
    rng: &RngState,
) -> Result<McqaBenchmark> {
    let inv = &family.inventory;
    let mut r = rng.fork("mcqa");
    let mut passages: Vec<Vec<ConceptSentence>> = Vec::with_capacity(n_items);
    let mut next = 0;
    for _ in 0..n_items {
        let len = r.range_inclusive(3, 5);
        if next + len > sentences.len() {
            return Err(Error::InsufficientCorpus(format!(
                "{} sentences cannot fill {n_items} disjoint passages",
                sentences.len()
            )));
        }
        passages.push(sentences[next..next + len].to_vec());
        next += len;
    }
    let para = ParaphraseKnobs::default();
    let mut skeletons = Vec::with_capacity(n_items);
    for (i, passage) in passages.iter().enumerate() {
        let mut r = rng.fork_index("mcqa-item", i as u64);
        let target = &passage[r.below(passage.len())];
        let (p, _) = gen_paraphrase(target, inv, &para, &mut r);
        let last = p.concepts.iter().rposition(|c| inv.is_content(*c)).expect("sentences hold content concepts");
        let answer = ConceptSentence { concepts: vec![p.concepts[last]] };
        let mut q = p.concepts.clone();
        q.remove(last);
        let question = ConceptSentence { concepts: q };
        let present: BTreeSet<usize> = passage.iter().flat_map(|s| s.meanings(inv)).chain(question.meanings(inv)).collect();
        let mut distractors: Vec<usize> = Vec::with_capacity(3);
        let mut used = BTreeSet::new();
        let mut tries = 0;
        while distractors.len() < 3 {
            tries += 1;
            let j = r.below(passages.len());
            let pool: Vec<usize> = passages[j].iter().flat_map(|s| s.concepts.iter().copied()).collect();
            let c = *r.choose(&pool);
            if j == i || !inv.is_content(c) || present.contains(&inv.group_of[c]) || !used.insert(inv.group_of[c]) {
                if tries > 10_000 {
                    return Err(Error::InsufficientCorpus("cannot find distractor answers".into()));
                }
                continue;
            }
            distractors.push(c);
        }
        let correct = r.below(4);
        let mut d = distractors.into_iter();
        let answers: [ConceptSentence; 4] = std::array::from_fn(|k| {
            if k == correct {
                answer.clone()
            } else {
                ConceptSentence { concepts: vec![d.next().expect("three distractors")] }
            }
        });
        skeletons.push(McqaSkeleton { passage: passage.clone(), question, answers, correct });
    }
    let mut items = Vec::with_capacity(n_items * langs.len() * langs.len());
    for sk in &skeletons {
        for lp in langs {
            for lq in langs {
                let (sp, sq) = (family.lang(lp)?, family.lang(lq)?);
                let passage = sk.passage.iter().map(|s| sp.realize(s)).collect::<Result<Vec<_>>>()?.join(" ");
                let [a0, a1, a2, a3] = [0, 1, 2, 3].map(|k| sq.realize(&sk.answers[k]));
                let answers = [a0?, a1?, a2?, a3?];
                items.push(McqaItem {
                    lang_passage: lp.clone(),
                    lang_qa: lq.clone(),
                    passage,
                    question: sq.realize(&sk.question)?,
                    answers,
                    correct: sk.correct,
                    passage_meanings: sk.passage.iter().flat_map(|s| s.meanings(inv)).collect(),
                    question_meanings: sk.question.meanings(inv),
                    answer_meanings: std::array::from_fn(|k| sk.answers[k].meanings(inv)),
                });
            }
        }
    }
    Ok(McqaBenchmark { items })
}

fn check_field(s: &str) -> Result<&str> {
    if s.contains(['\t', '\n']) {
        return Err(Error::Invalid(format!("field contains a tab or newline: {s:?}")));
    }
    Ok(s)
}

fn write_tsv(path: &Path, rows: impl Iterator<Item = Result<String>>) -> Result<()> {
    let mut s = String::new();
    for row in rows {
        s.push_str(&row?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_tsv(path: &Path, columns: usize) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<String> = line.split('\t').map(str::to_string).collect();
            if f.len() != columns {
                return Err(Error::format(path, format!("line {}: {} columns, expected {columns}", n + 1, f.len())));
            }
            Ok(f)
        })
        .collect()
}

/// Corpus TSV: `lang, anchor, positive, hard_negative` (empty when absent).
pub fn write_corpus_tsv(path: &Path, corpus: &MultiParallelCorpus) -> Result<()> {
    let rows = corpus.texts.iter().flat_map(|(lang, items)| {
        items.iter().map(move |it| {
            Ok(format!(
                "{}\t{}\t{}\t{}",
                check_field(lang)?,
                check_field(&it.anchor)?,
                check_field(&it.positive)?,
                check_field(it.hard_negative.as_deref().unwrap_or(""))?
            ))
        })
    });
    write_tsv(path, rows)
}

pub fn read_corpus_tsv(path: &Path) -> Result<BTreeMap<String, Vec<RealizedItem>>> {
    let mut out: BTreeMap<String, Vec<RealizedItem>> = BTreeMap::new();
    for f in read_tsv(path, 4)? {
        out.entry(f[0].clone()).or_default().push(RealizedItem {
            anchor: f[1].clone(),
            positive: f[2].clone(),
            hard_negative: (!f[3].is_empty()).then(|| f[3].clone()),
        });
    }
    Ok(out)
}

/// STS TSV: `langA, langB, textA, textB, gold`.
pub fn write_sts_tsv(path: &Path, b: &StsBenchmark) -> Result<()> {
    let rows = b.pairs.iter().map(|p| {
        Ok(format!(
            "{}\t{}\t{}\t{}\t{}",
            check_field(&p.lang_a)?,
            check_field(&p.lang_b)?,
            check_field(&p.text_a)?,
            check_field(&p.text_b)?,
            p.gold
        ))
    });
    write_tsv(path, rows)
}

/// Reads text and gold columns; meaning sets are not stored on disk.
pub fn read_sts_tsv(path: &Path) -> Result<StsBenchmark> {
    let pairs = read_tsv(path, 5)?
        .into_iter()
        .map(|f| {
            let gold = f[4].parse().map_err(|_| Error::format(path, format!("bad gold {:?}", f[4])))?;
            Ok(StsPair {
                lang_a: f[0].clone(),
                lang_b: f[1].clone(),
                text_a: f[2].clone(),
                text_b: f[3].clone(),
                gold,
                meanings_a: BTreeSet::new(),
                meanings_b: BTreeSet::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(StsBenchmark { pairs })
}

/// MCQA TSV: `lang_passage, lang_qa, passage, question, a0, a1, a2, a3, correct`.
pub fn write_mcqa_tsv(path: &Path, b: &McqaBenchmark) -> Result<()> {
    let rows = b.items.iter().map(|it| {
        let mut s = String::new();
        for f in [&it.lang_passage, &it.lang_qa, &it.passage, &it.question] {
            s.push_str(check_field(f)?);
            s.push('\t');
        }
        for a in &it.answers {
            s.push_str(check_field(a)?);
            s.push('\t');
        }
        let _ = write!(s, "{}", it.correct);
        Ok(s)
    });
    write_tsv(path, rows)
}

pub fn read_mcqa_tsv(path: &Path) -> Result<McqaBenchmark> {
    let items = read_tsv(path, 9)?
        .into_iter()
        .map(|f| {
            let correct: usize = f[8].parse().map_err(|_| Error::format(path, format!("bad index {:?}", f[8])))?;
            if correct > 3 {
                return Err(Error::format(path, format!("correct index {correct} out of range")));
            }
            Ok(McqaItem {
                lang_passage: f[0].clone(),
                lang_qa: f[1].clone(),
                passage: f[2].clone(),
                question: f[3].clone(),
                answers: [f[4].clone(), f[5].clone(), f[6].clone(), f[7].clone()],
                correct,
                passage_meanings: BTreeSet::new(),
                question_meanings: BTreeSet::new(),
                answer_meanings: Default::default(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(McqaBenchmark { items })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family() -> Family {
        Family::new(&InventoryConfig::default(), &default_languages(), "sa", &RngState::new(4)).unwrap()
    }

    #[test]
    fn corpus_determinism_and_lengths() {
        let f = family();
        let a = gen_concept_corpus(&RngState::new(1), 10_000, &f.inventory).unwrap();
        assert_eq!(a[..50], gen_concept_corpus(&RngState::new(1), 50, &f.inventory).unwrap()[..]);
        assert!(gen_concept_corpus(&RngState::new(1), 0, &f.inventory).unwrap().is_empty());
        let mut hist = [0usize; MAX_LEN + 1];
        for s in &a {
            hist[s.concepts.len()] += 1;
            let content: Vec<usize> = s.concepts.iter().copied().filter(|c| f.inventory.is_content(*c)).collect();
            assert!(content.len() >= 2);
            let groups: BTreeSet<usize> = content.iter().map(|c| f.inventory.group_of[*c]).collect();
            assert_eq!(groups.len(), content.len());
        }
        assert!(hist[MIN_LEN..].iter().all(|c| *c > 0), "{hist:?}");
        assert_eq!(hist[..MIN_LEN].iter().sum::<usize>(), 0);
    }

    #[test]
    fn small_inventory_rejected() {
        let inv = Inventory::from_group_sizes(&[2; 20], 5).unwrap();
        assert!(matches!(gen_concept_corpus(&RngState::new(0), 5, &inv), Err(Error::InventoryTooSmall(_))));
        let inv = Inventory::from_group_sizes(&[1; 60], 5).unwrap();
        assert!(inv.check_generation().is_err());
    }

    #[test]
    fn realization_rules() {
        let f = family();
        let cs = ConceptSentence { concepts: vec![3, 10, 20] };
        let sa = f.lang("sa").unwrap();
        assert_eq!(sa.realize(&cs).unwrap(), format!("{} {} {}", sa.lexicon[3], sa.lexicon[10], sa.lexicon[20]));
        let sb = f.lang("sb").unwrap();
        assert_eq!(sb.order, OrderRule::Reverse);
        assert_eq!(sb.realize(&cs).unwrap(), format!("{} {}en {}", sb.lexicon[20], sb.lexicon[10], sb.lexicon[3]));
        assert!(matches!(sa.realize(&ConceptSentence { concepts: vec![100_000] }), Err(Error::UnknownConcept(_))));
        for rule in [OrderRule::Identity, OrderRule::Reverse, OrderRule::SwapPairs, OrderRule::RotateLeft, OrderRule::EvensThenOdds] {
            for n in 1..=MAX_LEN {
                let mut p = rule.permutation(n);
                p.sort_unstable();
                assert_eq!(p, (0..n).collect::<Vec<_>>(), "{rule:?} {n}");
            }
        }
    }

    #[test]
    fn lexicons_are_cognate_under_regular_sound_laws() {
        let f = family();
        let pivot = f.lang("sa").unwrap();
        for l in &f.languages {
            // One fixed segment map per language, applied to every root.
            let mut law: HashMap<char, char> = HashMap::new();
            for (p, w) in pivot.lexicon.iter().zip(&l.lexicon) {
                assert_eq!(p.chars().count(), w.chars().count(), "{}: {p} vs {w}", l.lang_id);
                for (a, b) in p.chars().zip(w.chars()) {
                    assert_eq!(*law.entry(a).or_insert(b), b, "{}: irregular correspondence for {a}", l.lang_id);
                }
            }
            let same = pivot.lexicon.iter().zip(&l.lexicon).filter(|(a, b)| a == b).count();
            if l.lang_id != "sa" {
                assert!(same < pivot.lexicon.len() / 2, "{} barely differs from the pivot", l.lang_id);
            }
        }
    }

    #[test]
    fn realization_is_injective() {
        let f = family();
        let corpus = gen_concept_corpus(&RngState::new(8), 3000, &f.inventory).unwrap();
        let distinct: BTreeSet<&ConceptSentence> = corpus.iter().collect();
        let distinct: Vec<&ConceptSentence> = distinct.into_iter().take(1000).collect();
        assert_eq!(distinct.len(), 1000);
        for l in &f.languages {
            let texts: HashSet<String> = distinct.iter().map(|c| l.realize(c).unwrap()).collect();
            assert_eq!(texts.len(), 1000, "{}", l.lang_id);
        }
    }

    #[test]
    fn paraphrase_properties() {
        let f = family();
        let inv = &f.inventory;
        let corpus = gen_concept_corpus(&RngState::new(3), 10_000, inv).unwrap();
        let mut r = RngState::new(5);
        for cs in &corpus {
            let (p, _) = gen_paraphrase(cs, inv, &ParaphraseKnobs::default(), &mut r);
            assert!(jaccard(&cs.content(inv), &p.content(inv)) >= 0.6);
            assert_eq!(cs.meanings(inv), p.meanings(inv));
            let h = hard_negative(cs, inv, &mut r);
            let (a, b) = (cs.content(inv), h.content(inv));
            assert_eq!(a.difference(&b).count(), 1);
            let gone = *a.difference(&b).next().unwrap();
            let new = *b.difference(&a).next().unwrap();
            assert_ne!(inv.group_of[gone], inv.group_of[new]);
        }
    }

    #[test]
    fn degenerate_paraphrase_knobs() {
        let inv = Inventory::from_group_sizes(&[1; 60], 5).unwrap();
        let cs = ConceptSentence { concepts: vec![1, 2, 60, 3] };
        let knobs = ParaphraseKnobs { p_synonym: 0.0, p_function: 0.0, ..Default::default() };
        let (p, fb) = gen_paraphrase(&cs, &inv, &knobs, &mut RngState::new(0));
        assert_eq!(p, cs);
        assert!(!fb);
    }

    #[test]
    fn multiparallel_items_share_concepts() {
        let f = family();
        let c = build_multiparallel(&f, 50, &CorpusKnobs::default(), &ParaphraseKnobs::default(), &RngState::new(2)).unwrap();
        assert_eq!(c.texts.len(), 5);
        assert!(c.texts.values().all(|v| v.len() == 50));
        let clean = CorpusKnobs { translation_noise: 0.0, ..Default::default() };
        let c0 = build_multiparallel(&f, 50, &clean, &ParaphraseKnobs::default(), &RngState::new(2)).unwrap();
        for (i, it) in c0.items.iter().enumerate() {
            for l in &f.languages {
                assert_eq!(c0.texts[&l.lang_id][i].anchor, l.realize(&it.anchor).unwrap());
            }
        }
        // The pivot stays clean even with noise on.
        assert_eq!(c.texts["sa"], c0.texts["sa"]);
    }

    #[test]
    fn sts_gold_examples() {
        let inv = Inventory::from_group_sizes(&[2; 60], 5).unwrap();
        let a = ConceptSentence { concepts: vec![0, 2, 4] };
        let b = ConceptSentence { concepts: vec![0, 2, 6] };
        assert_eq!(jaccard(&a.meanings(&inv), &b.meanings(&inv)), 0.5);
        assert_eq!(jaccard(&a.meanings(&inv), &a.meanings(&inv)), 1.0);
        let c = ConceptSentence { concepts: vec![8, 10, 12] };
        assert_eq!(jaccard(&a.meanings(&inv), &c.meanings(&inv)), 0.0);
    }

    #[test]
    fn sts_levels_and_langs() {
        let f = family();
        let s = gen_concept_corpus(&RngState::new(6), 30, &f.inventory).unwrap();
        let langs = vec!["sa".to_string(), "sb".to_string()];
        let b = build_sts(&f, &s, &[0.0, 1.0], &langs, &RngState::new(1)).unwrap();
        assert_eq!(b.pairs.len(), 30 * 4);
        for p in &b.pairs {
            assert_eq!(p.gold, jaccard(&p.meanings_a, &p.meanings_b));
            assert_eq!(p.meanings_a.len(), p.meanings_b.len());
        }
        assert!(b.pairs.iter().step_by(8).all(|p| p.gold == 1.0));
        assert!(b.pairs.iter().skip(4).step_by(8).all(|p| p.gold == 0.0));
        assert!(build_sts(&f, &s, &[1.5], &langs, &RngState::new(1)).is_err());
    }

    #[test]
    fn mcqa_structure() {
        let f = family();
        let s = gen_concept_corpus(&RngState::new(7), 5000, &f.inventory).unwrap();
        let langs = vec!["sa".to_string()];
        let b = build_mcqa(&f, &s, 1000, &langs, &RngState::new(2)).unwrap();
        assert_eq!(b.items.len(), 1000);
        let mut counts = [0usize; 4];
        for it in &b.items {
            counts[it.correct] += 1;
            assert!(it.answer_meanings[it.correct].is_subset(&it.passage_meanings));
            for k in (0..4).filter(|k| *k != it.correct) {
                assert!(it.answer_meanings[k].is_disjoint(&it.passage_meanings));
            }
        }
        // 3σ of Binomial(1000, 1/4) ≈ 41
        assert!(counts.iter().all(|c| (*c as i64 - 250).abs() <= 41), "{counts:?}");
        assert!(matches!(build_mcqa(&f, &s[..10], 5, &langs, &RngState::new(2)), Err(Error::InsufficientCorpus(_))));
    }

    #[test]
    fn tsv_round_trips() {
        let f = family();
        let dir = tempfile::tempdir().unwrap();
        let s = gen_concept_corpus(&RngState::new(6), 40, &f.inventory).unwrap();
        let langs = f.lang_ids();
        let sts = build_sts(&f, &s, &[0.0, 0.5, 1.0], &langs[..2], &RngState::new(1)).unwrap();
        let p = dir.path().join("sts.tsv");
        write_sts_tsv(&p, &sts).unwrap();
        let back = read_sts_tsv(&p).unwrap();
        assert_eq!(back.pairs.len(), sts.pairs.len());
        assert!(back.pairs.iter().zip(&sts.pairs).all(|(a, b)| a.text_b == b.text_b && a.gold == b.gold));

        let mcqa = build_mcqa(&f, &s, 4, &langs[..2], &RngState::new(1)).unwrap();
        let p = dir.path().join("mcqa.tsv");
        write_mcqa_tsv(&p, &mcqa).unwrap();
        let back = read_mcqa_tsv(&p).unwrap();
        assert!(back.items.iter().zip(&mcqa.items).all(|(a, b)| a.answers == b.answers && a.correct == b.correct));

        let c = build_multiparallel(&f, 20, &CorpusKnobs::default(), &ParaphraseKnobs::default(), &RngState::new(2)).unwrap();
        let p = dir.path().join("corpus.tsv");
        write_corpus_tsv(&p, &c).unwrap();
        assert_eq!(read_corpus_tsv(&p).unwrap(), c.texts);
    }
}
