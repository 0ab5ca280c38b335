//! Acceptance suite: exact property checks (1–7) and directional
//! reproductions on the full default experiment (8–14). Prints one
//! PASS/FAIL line per criterion.
//!
//! Set `MSE_LAB_ACCEPTANCE_OUT` to keep (and reuse the cache of) the
//! full experiment's output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use mse_lab::encoder::{is_adapter_tensor, EncoderConfig, EncoderModel, Pooling};
use mse_lab::evalharness::{
    embed_texts, encoder_embed_fn, eval_mcqa, eval_sts, oracle_embedders, spearman, Embedders, EvalReport, Mode, ReportRow,
};
use mse_lab::experiment::{generate_data, run_experiment, ExperimentConfig};
use mse_lab::numerics::{sparsemax, RngState};
use mse_lab::synthlang::StsBenchmark;
use mse_lab::tokenizer::{train_bpe, BpeModel};
use mse_lab::training::{cla_batches, gradient_checks, tokenize_items, train_cla, TrainConfig};
use mse_lab::transplant::{compute_overlap, focus_plan, joint_token_sequences, train_aux_embeddings, transplant_model, RowInit};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("criterion {id:>2} {}: {name} — {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, name, pass, detail }
}

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.data.paraphrase_items = 48;
    c.data.heldout_items = 8;
    c.data.mlm_sentences = 200;
    c.data.base_pairs = 48;
    c.data.sts_sentences = 24;
    c.data.mcqa_items = 8;
    c.encoder = EncoderConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        max_len: 32,
        vocab_size: 160,
        adapter_bottleneck: 4,
        adapter_scale: 4.0,
        pooling: Pooling::Mean,
    };
    c.vocab_size = 160;
    c.aux_dim = 8;
    let phase = |epochs, mlm_steps| TrainConfig { batch_size: 16, epochs, mlm_steps, max_len: 32, mlm_max_len: 32, lr: 1e-3, adapter_lr: 1e-3, ..TrainConfig::default() };
    c.base_mlm = phase(1, 5);
    c.adapt_mlm = phase(1, 5);
    c.base_contrastive = phase(1, 0);
    c.contrastive = phase(1, 0);
    c.cla = phase(2, 0);
    c.seeds = vec![4];
    c
}

// ------------------------------------------------------------ 1–7

fn gradient_criterion() -> Outcome {
    let (mlm, mnrl) = gradient_checks(1).expect("gradient check runs");
    report(1, "gradient checks", mlm < 1e-4 && mnrl < 1e-4, format!("max rel err MLM {mlm:.2e}, MNRL {mnrl:.2e} (< 1e-4)"))
}

/// Projection by enumerating supports; the unique KKT point is verified.
fn brute_force_projection(z: &[f64]) -> Option<Vec<f64>> {
    let n = z.len();
    for mask in 1u32..(1 << n) {
        let on = |i: usize| mask & (1 << i) != 0;
        let k = (0..n).filter(|&i| on(i)).count() as f64;
        let tau = ((0..n).filter(|&i| on(i)).map(|i| z[i]).sum::<f64>() - 1.0) / k;
        let primal = (0..n).filter(|&i| on(i)).all(|i| z[i] - tau > 0.0);
        let dual = (0..n).filter(|&i| !on(i)).all(|i| z[i] - tau <= 1e-12);
        if primal && dual {
            return Some((0..n).map(|i| if on(i) { z[i] - tau } else { 0.0 }).collect());
        }
    }
    None
}

fn sparsemax_criterion() -> Outcome {
    let mut rng = RngState::new(2);
    let (mut worst, mut shift_exact, mut kkt_ok) = (0.0f64, true, true);
    for _ in 0..1000 {
        let n = rng.range_inclusive(1, 10);
        // Values on a dyadic grid, so shifted inputs are exactly representable.
        let z: Vec<f64> = (0..n).map(|_| (rng.below(2049) as f64 - 1024.0) / 256.0).collect();
        let p = sparsemax(&z).unwrap();
        match brute_force_projection(&z) {
            Some(b) => worst = p.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max),
            None => kkt_ok = false,
        }
        let sum: f64 = p.iter().sum();
        kkt_ok &= p.iter().all(|x| *x >= 0.0) && (sum - 1.0).abs() < 1e-9;
        let c = rng.below(17) as f64 - 8.0;
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        shift_exact &= sparsemax(&shifted).unwrap() == p;
    }
    report(
        2,
        "sparsemax = simplex projection",
        worst < 1e-9 && shift_exact && kkt_ok,
        format!("max |Δ| {worst:.1e} over 1000 vectors, KKT verified {kkt_ok}, shift invariance exact {shift_exact}"),
    )
}

/// Rank correlation straight from the definition: Pearson of average ranks,
/// ranks computed by counting.
fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn spearman_criterion() -> Outcome {
    let mut rng = RngState::new(3);
    let (mut worst, mut done) = (0.0f64, 0);
    while done < 1000 {
        let n = rng.range_inclusive(3, 40);
        // Few distinct values, so ties are common.
        let levels = rng.range_inclusive(2, 8);
        let x: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64).collect();
        let Ok(fast) = spearman(&x, &y) else { continue };
        worst = worst.max((fast - brute_spearman(&x, &y)).abs());
        done += 1;
    }
    report(3, "Spearman = brute-force oracle", worst < 1e-12, format!("max |Δ| {worst:.1e} over 1000 tied instances"))
}

fn focus_criterion() -> Outcome {
    let cfg = ExperimentConfig { data: { let mut d = ExperimentConfig::default().data; d.mlm_sentences = 600; d.paraphrase_items = 32; d.base_pairs = 32; d.sts_sentences = 12; d.mcqa_items = 4; d }, ..ExperimentConfig::default() };
    let data = generate_data(&cfg, 5).unwrap();
    let all: Vec<String> = data.mlm.values().flatten().cloned().collect();
    let source = train_bpe(&all, 512).unwrap();
    let mut enc = cfg.encoder.clone();
    enc.vocab_size = source.vocab_size();
    let base = EncoderModel::new(enc, &RngState::new(6)).unwrap();
    let d = base.config.d_model;
    let src_rows = &base.token_embeddings().data;
    let max_src_norm = src_rows.chunks(d).map(|r| r.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let (mut copies, mut mixes, mut ok) = (0usize, 0usize, true);
    for lang in &data.langs {
        let target = train_bpe(&data.mlm[lang], 512).unwrap();
        let (model, _) = transplant_model(&base, &source, &target, &data.mlm[lang], cfg.aux_dim, cfg.aux_window).unwrap();
        let overlap = compute_overlap(&source.vocab, &target.vocab).unwrap();
        let seqs = joint_token_sequences(&data.mlm[lang], &target, &source);
        let aux = train_aux_embeddings(&seqs, Some(target.vocab.tokens()), cfg.aux_dim, cfg.aux_window).unwrap();
        let plan = focus_plan(&overlap, &aux, &target.vocab).unwrap();
        let rows = &model.token_embeddings().data;
        for (t, init) in plan.rows.iter().enumerate() {
            let row = &rows[t * d..(t + 1) * d];
            let norm = row.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            match init {
                RowInit::Copy(s) => {
                    copies += 1;
                    ok &= row == &src_rows[*s as usize * d..(*s as usize + 1) * d];
                }
                RowInit::Mix(ws) => {
                    mixes += 1;
                    let sum: f64 = ws.iter().map(|(_, w)| w).sum();
                    ok &= ws.iter().all(|(_, w)| *w >= 0.0) && (sum - 1.0).abs() < 1e-6;
                    ok &= norm <= max_src_norm * (1.0 + 1e-6);
                }
                RowInit::Fallback => ok &= norm <= max_src_norm * (1.0 + 1e-6),
            }
        }
    }
    report(4, "FOCUS invariants", ok && copies > 0 && mixes > 0, format!("{copies} copied rows bit-identical, {mixes} convex rows checked"))
}

fn mono_sts(models: &BTreeMap<String, (EncoderModel, BpeModel)>, sts: &StsBenchmark, max_len: usize) -> Vec<f64> {
    let mut e = Embedders::new();
    for (l, (m, b)) in models {
        e.insert(l.clone(), encoder_embed_fn(m, b, max_len, false));
    }
    eval_sts(&e, sts, Mode::Mono).unwrap().into_iter().map(|s| s.value).collect()
}

fn modularity_criterion() -> Outcome {
    let cfg = tiny_config();
    let data = generate_data(&cfg, 7).unwrap();
    let langs = ["sa".to_string(), "sb".to_string()];
    let mut models = BTreeMap::new();
    for (i, l) in langs.iter().enumerate() {
        let bpe = train_bpe(&data.mlm[l], cfg.vocab_size).unwrap();
        let mut c = cfg.encoder.clone();
        c.vocab_size = bpe.vocab_size();
        models.insert(l.clone(), (EncoderModel::new(c, &RngState::new(10 + i as u64)).unwrap(), bpe));
    }
    let sts = StsBenchmark { pairs: data.sts.pairs.iter().filter(|p| langs.contains(&p.lang_a) && langs.contains(&p.lang_b)).cloned().collect() };
    let max_len = cfg.encoder.max_len;
    let mono_scores = |models: &BTreeMap<String, (EncoderModel, BpeModel)>| mono_sts(models, &sts, max_len);
    let before = mono_scores(&models);

    let (mut sb, sb_bpe) = models.remove("sb").unwrap();
    let (mut sa, sa_bpe) = models.remove("sa").unwrap();
    let texts: Vec<String> = data.sts.pairs.iter().filter(|p| p.lang_a == "sb").map(|p| p.text_a.clone()).take(20).collect();
    let plain = embed_texts(&sb, &sb_bpe, max_len, false, &texts).unwrap();
    sb.attach_adapter(cfg.encoder.adapter_bottleneck, cfg.encoder.adapter_scale, &RngState::new(3)).unwrap();
    let identity = embed_texts(&sb, &sb_bpe, max_len, true, &texts).unwrap() == plain;

    let snapshot = |m: &EncoderModel| -> Vec<(String, Vec<f32>)> {
        m.params.names.iter().zip(&m.params.tensors).filter(|(n, _)| !is_adapter_tensor(n)).map(|(n, t)| (n.clone(), t.data.clone())).collect()
    };
    let (snap_sb, snap_sa) = (snapshot(&sb), snapshot(&sa));
    sa.set_frozen_base(true);
    let batches = cla_batches(
        &tokenize_items(&sa_bpe, &data.para.texts["sa"], cfg.cla.max_len),
        &tokenize_items(&sb_bpe, &data.para.texts["sb"], cfg.cla.max_len),
        cfg.cla.batch_size,
        &RngState::new(4),
    )
    .unwrap();
    train_cla(&mut sb, &mut sa, &batches, &cfg.cla).unwrap();
    let frozen = snapshot(&sb) == snap_sb && snapshot(&sa) == snap_sa;
    let moved = embed_texts(&sb, &sb_bpe, max_len, true, &texts).unwrap() != plain;
    models.insert("sa".into(), (sa, sa_bpe));
    models.insert("sb".into(), (sb, sb_bpe));
    let mono_same = mono_scores(&models) == before;
    report(
        5,
        "modularity invariants",
        frozen && mono_same && identity && moved,
        format!("(a) non-adapter tensors unchanged {frozen}; (b) mono STS bit-identical {mono_same}; (c) zero adapter is identity {identity}; adapter trained {moved}"),
    )
}

fn determinism_criterion() -> Outcome {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        run_experiment(&cfg, &out, 1).unwrap();
        reports.push(std::fs::read(out.join("report.csv")).unwrap());
    }
    let same = reports[0] == reports[1];
    report(6, "determinism", same, format!("report.csv {} bytes, byte-identical across runs {same}", reports[0].len()))
}

fn oracle_criterion() -> Outcome {
    let cfg = ExperimentConfig::default();
    let (mut worst_sts, mut worst_mcqa, mut n) = (100.0f64, 1.0f64, 0);
    for seed in [1, 2, 3] {
        let data = generate_data(&cfg, seed).unwrap();
        let e = oracle_embedders(&data.sts, &data.mcqa, &data.langs);
        for mode in [Mode::Mono, Mode::Cross] {
            for s in eval_sts(&e, &data.sts, mode).unwrap() {
                worst_sts = worst_sts.min(s.value);
                n += 1;
            }
            for s in eval_mcqa(&e, &data.mcqa, mode).unwrap() {
                worst_mcqa = worst_mcqa.min(s.value);
                n += 1;
            }
        }
    }
    let pass = (worst_sts - 100.0).abs() < 1e-9 && worst_mcqa == 1.0;
    report(7, "oracle benchmark validity", pass, format!("min oracle STS {worst_sts:.6}, min MCQA accuracy {worst_mcqa:.3} over {n} scores"))
}

// ------------------------------------------------------------ 8–14

struct Results {
    rows: Vec<ReportRow>,
    seeds: Vec<u64>,
    pivot: String,
    low_resource: BTreeSet<String>,
}

impl Results {
    /// Mean over the selected scores for one seed.
    fn mean(&self, regime: &str, task: &str, mode: Mode, seed: u64, keep: impl Fn(&str) -> bool) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.regime == regime && r.base_variant == "mlm_plus_contrastive" && r.task == task && r.mode == mode && r.seed == seed && keep(&r.lang))
            .map(|r| r.value)
            .collect();
        assert!(!v.is_empty(), "no rows for {regime} {task} {mode} seed {seed}");
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn sts(&self, regime: &str, mode: Mode, seed: u64) -> f64 {
        self.mean(regime, "sts", mode, seed, |_| true)
    }

    /// Per-seed values of `f`, their mean, and how many seeds satisfy `holds`.
    fn per_seed(&self, f: impl Fn(u64) -> f64, holds: impl Fn(f64) -> bool) -> (Vec<f64>, f64, usize) {
        let v: Vec<f64> = self.seeds.iter().map(|&s| f(s)).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let n = v.iter().filter(|x| holds(**x)).count();
        (v, mean, n)
    }

    fn need(&self) -> usize {
        if self.seeds.len() >= 3 { 2 } else { self.seeds.len() }
    }
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:+.2}")).collect::<Vec<_>>().join("/")
}

fn directional(res: &Results) -> Vec<Outcome> {
    let need = res.need();
    let mut out = Vec::new();

    // 8: curse of multilinguality
    let gap = |s: u64, keep: &dyn Fn(&str) -> bool| res.mean("multi_m", "sts", Mode::Mono, s, keep) - res.mean("single_m", "sts", Mode::Mono, s, keep);
    let lr = |l: &str| res.low_resource.contains(l);
    let (all, all_mean, all_n) = res.per_seed(|s| gap(s, &|_| true), |g| g > 0.0);
    let (low, low_mean, _) = res.per_seed(|s| gap(s, &lr), |_| true);
    let (high, high_mean, _) = res.per_seed(|s| gap(s, &|l| !lr(l)), |_| true);
    let low_n = low.iter().zip(&high).filter(|(l, h)| l > h).count();
    out.push(report(
        8,
        "Multi_m beats Single_m monolingually, most on low-resource languages",
        all_mean >= 2.0 && all_n >= need && low_mean > high_mean && low_n >= need,
        format!(
            "gap {all_mean:+.2} (seeds {}; need ≥ +2), low-resource gap {low_mean:+.2} vs others {high_mean:+.2} (seeds {} vs {})",
            fmt(&all),
            fmt(&low),
            fmt(&high)
        ),
    ));

    // 9: mono/cross trade-off
    let (d, mean, n) = res.per_seed(|s| res.sts("single_mc", Mode::Mono, s) - res.sts("single_m", Mode::Mono, s), |x| x <= 0.0);
    out.push(report(9, "Single_mc mono ≤ Single_m mono", mean <= 0.0 && n >= need, format!("Single_mc − Single_m {mean:+.2} (seeds {})", fmt(&d))));

    // 10: modular CLA gain with untouched mono scores
    let (d, mean, n) = res.per_seed(|s| res.sts("multi_mc", Mode::Cross, s) - res.sts("multi_m", Mode::Cross, s), |x| x >= 1.0);
    let mono_rows = |regime: &str| -> Vec<(String, String, u64, f64)> {
        res.rows
            .iter()
            .filter(|r| r.regime == regime && r.base_variant == "mlm_plus_contrastive" && r.mode == Mode::Mono)
            .map(|r| (r.task.clone(), r.lang.clone(), r.seed, r.value))
            .collect()
    };
    let identical = mono_rows("multi_mc") == mono_rows("multi_m");
    out.push(report(
        10,
        "CLA improves cross-lingual STS, mono unchanged",
        mean >= 1.0 && n >= need && identical,
        format!("Multi_mc − Multi_m cross {mean:+.2} (seeds {}; need ≥ +1), mono rows identical {identical}", fmt(&d)),
    ));

    // 11: training on paraphrases beats the base
    let (ds, sts_mean, sts_n) = res.per_seed(|s| res.sts("single_m", Mode::Mono, s) - res.sts("base", Mode::Mono, s), |x| x >= 10.0);
    let (dm, mcqa_mean, mcqa_n) = res.per_seed(
        |s| 100.0 * (res.mean("single_m", "mcqa", Mode::Mono, s, |_| true) - res.mean("base", "mcqa", Mode::Mono, s, |_| true)),
        |x| x >= 3.0,
    );
    out.push(report(
        11,
        "Single_m beats the untrained base",
        sts_mean >= 10.0 && sts_n >= need && mcqa_mean >= 3.0 && mcqa_n >= need,
        format!("mono STS {sts_mean:+.2} (seeds {}; need ≥ +10), MCQA {mcqa_mean:+.2} points (seeds {}; need ≥ +3)", fmt(&ds), fmt(&dm)),
    ));

    // 12: independent initialisation is not aligned
    let ind = "multi_m:independent_init";
    let (ic, ic_mean, ic_n) = res.per_seed(|s| res.sts(ind, Mode::Cross, s), |x| x < 20.0);
    let (im, im_mean, im_n) = res.per_seed(|s| res.sts(ind, Mode::Mono, s), |x| x > 60.0);
    let (d, d_mean, d_n) = res.per_seed(|s| res.sts("multi_m", Mode::Cross, s) - res.sts(ind, Mode::Cross, s), |x| x >= 30.0);
    out.push(report(
        12,
        "independent init is unaligned, shared init is aligned",
        ic_mean < 20.0 && ic_n >= need && im_mean > 60.0 && im_n >= need && d_mean >= 30.0 && d_n >= need,
        format!(
            "independent cross {ic_mean:.2} (< 20; seeds {}), mono {im_mean:.2} (> 60; seeds {}), shared − independent cross {d_mean:+.2} (≥ +30; seeds {})",
            fmt(&ic),
            fmt(&im),
            fmt(&d)
        ),
    ));

    // 13: fixed pivot
    let (d, mean, n) = res.per_seed(
        |s| res.sts("multi_mc", Mode::Cross, s) - res.sts("multi_mc:all_pairs_incl_pivot", Mode::Cross, s),
        |x| x >= 0.0,
    );
    out.push(report(13, "bilingual_to_pivot ≥ all_pairs_incl_pivot", mean >= 0.0 && n >= need, format!("difference {mean:+.2} (seeds {})", fmt(&d))));

    // 14: multi-parallel pivot data
    let pivot_pair = |l: &str| l.split('-').any(|x| x == res.pivot);
    let (d, mean, n) = res.per_seed(
        |s| res.mean("multi_m:non_multiparallel_pivot", "sts", Mode::Cross, s, pivot_pair) - res.mean("multi_m", "sts", Mode::Cross, s, pivot_pair),
        |x| x < 0.0,
    );
    out.push(report(14, "non-parallel pivot data lowers pivot–X cross STS", mean < 0.0 && n >= need, format!("difference {mean:+.2} (seeds {})", fmt(&d))));
    out
}

fn full_experiment() -> Results {
    let cfg = ExperimentConfig::default();
    let tmp;
    let out = match std::env::var_os("MSE_LAB_ACCEPTANCE_OUT") {
        Some(p) => PathBuf::from(p),
        None => {
            tmp = tempfile::tempdir().unwrap();
            tmp.path().to_path_buf()
        }
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let started = Instant::now();
    let (report, _) = run_experiment(&cfg, &out, jobs).expect("full experiment");
    println!("full experiment: {} seeds, {} rows, {:.0}s with {jobs} worker(s)", cfg.seeds.len(), report.rows.len(), started.elapsed().as_secs_f64());
    let low_resource = cfg.languages.iter().filter(|l| l.low_resource).map(|l| l.id.clone()).collect();
    let EvalReport { rows } = report;
    Results { rows, seeds: cfg.seeds.clone(), pivot: cfg.pivot.clone(), low_resource }
}

#[test]
fn acceptance() {
    let started = Instant::now();
    let mut outcomes = vec![
        gradient_criterion(),
        sparsemax_criterion(),
        spearman_criterion(),
        focus_criterion(),
        modularity_criterion(),
        determinism_criterion(),
        oracle_criterion(),
    ];
    println!("property suites: {:.0}s", started.elapsed().as_secs_f64());
    outcomes.extend(directional(&full_experiment()));

    println!();
    for o in &outcomes {
        println!("{} {:>2} {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name);
    }
    // The property suites are exact and must hold. Directional outcomes are
    // reported above; a failure there is an empirical result, not a bug.
    let broken: Vec<String> = outcomes.iter().filter(|o| o.id <= 7 && !o.pass).map(|o| format!("{}: {}", o.id, o.detail)).collect();
    assert!(broken.is_empty(), "property criteria failed: {broken:?}");
}
