//! Post-norm transformer sentence encoder with a tied MLM head and optional
//! per-layer parallel adapters on the feed-forward sublayer.
//!
//! Sequences are packed: `[PAD]` tokens are dropped before the forward pass
//! and every remaining token keeps its original position, so attention and
//! pooling never see padding.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamSet, RngState, Scalar, Segment, Tensor, Var};

pub const PAD_ID: u32 = 0;
const MAGIC: &[u8; 4] = b"MSE1";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Cls,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub adapter_bottleneck: usize,
    pub adapter_scale: f64,
    #[serde(default)]
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 128,
            max_len: 128,
            vocab_size: 512,
            adapter_bottleneck: 32,
            adapter_scale: 4.0,
            pooling: Pooling::Mean,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
            ("adapter_bottleneck", self.adapter_bottleneck),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Invalid(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        if self.adapter_bottleneck >= self.d_model {
            return Err(Error::Invalid("adapter_bottleneck must be smaller than d_model".into()));
        }
        if !(self.adapter_scale.is_finite() && self.adapter_scale > 0.0) {
            return Err(Error::Invalid("adapter_scale must be positive".into()));
        }
        if self.vocab_size < 5 {
            return Err(Error::Invalid("vocab_size must hold the five special tokens".into()));
        }
        Ok(())
    }

    /// Parameters one adapter set adds: `n_layers · (d·r + r·d + r + d)`.
    pub fn adapter_param_count(&self) -> usize {
        let (d, r) = (self.d_model, self.adapter_bottleneck);
        self.n_layers * (d * r + r * d + r + d)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
    /// `[w_down, b_down, w_up, b_up]`
    adapter: Option<[usize; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    tok: usize,
    pos: usize,
    emb_ln_g: usize,
    emb_ln_b: usize,
    layers: Vec<LayerIdx>,
    mlm_bias: usize,
}

fn base_names(n_layers: usize) -> Vec<String> {
    let mut names: Vec<String> =
        ["token_embeddings", "position_embeddings", "emb_ln.gamma", "emb_ln.beta"].iter().map(|s| s.to_string()).collect();
    for l in 0..n_layers {
        for t in [
            "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln1.gamma",
            "ln1.beta", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "ln2.gamma", "ln2.beta",
        ] {
            names.push(format!("layers.{l}.{t}"));
        }
    }
    names.push("mlm_bias".into());
    names
}

fn adapter_names(l: usize) -> [String; 4] {
    ["w_down", "b_down", "w_up", "b_up"].map(|t| format!("layers.{l}.adapter.{t}"))
}

pub fn is_adapter_tensor(name: &str) -> bool {
    name.contains(".adapter.")
}

impl Layout {
    fn build<F: Scalar>(params: &ParamSet<F>, n_layers: usize) -> Result<Self> {
        let ix = |n: &str| params.index_of(n).ok_or_else(|| Error::Invalid(format!("missing tensor {n:?}")));
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let p = |t: &str| ix(&format!("layers.{l}.{t}"));
            let an = adapter_names(l);
            let adapter = match params.index_of(&an[0]) {
                Some(_) => Some([ix(&an[0])?, ix(&an[1])?, ix(&an[2])?, ix(&an[3])?]),
                None => None,
            };
            layers.push(LayerIdx {
                wq: p("attn.wq")?,
                bq: p("attn.bq")?,
                wk: p("attn.wk")?,
                bk: p("attn.bk")?,
                wv: p("attn.wv")?,
                bv: p("attn.bv")?,
                wo: p("attn.wo")?,
                bo: p("attn.bo")?,
                ln1_g: p("ln1.gamma")?,
                ln1_b: p("ln1.beta")?,
                w1: p("ffn.w1")?,
                b1: p("ffn.b1")?,
                w2: p("ffn.w2")?,
                b2: p("ffn.b2")?,
                ln2_g: p("ln2.gamma")?,
                ln2_b: p("ln2.beta")?,
                adapter,
            });
        }
        Ok(Self {
            tok: ix("token_embeddings")?,
            pos: ix("position_embeddings")?,
            emb_ln_g: ix("emb_ln.gamma")?,
            emb_ln_b: ix("emb_ln.beta")?,
            layers,
            mlm_bias: ix("mlm_bias")?,
        })
    }
}

/// A batch of sequences with `[PAD]` removed, ready for the packed forward pass.
#[derive(Clone, Debug)]
pub struct Packed {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub segs: Vec<Segment>,
}

impl Packed {
    pub fn new(batch: &[Vec<u32>], cfg: &EncoderConfig) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut positions = Vec::new();
        let mut segs = Vec::with_capacity(batch.len());
        for ids in batch {
            if ids.len() > cfg.max_len {
                return Err(Error::Invalid(format!("sequence of length {} exceeds max_len {}", ids.len(), cfg.max_len)));
            }
            let start = tokens.len();
            for (p, &id) in ids.iter().enumerate() {
                if id as usize >= cfg.vocab_size {
                    return Err(Error::TokenOutOfRange(id));
                }
                if id != PAD_ID {
                    tokens.push(id as usize);
                    positions.push(p);
                }
            }
            if tokens.len() == start {
                return Err(Error::AllPad);
            }
            segs.push((start, tokens.len() - start));
        }
        Ok(Self { tokens, positions, segs })
    }

    /// Packed row of position `pos` in sequence `seq`, if that token is not `[PAD]`.
    pub fn row(&self, seq: usize, pos: usize) -> Option<usize> {
        let (off, len) = self.segs[seq];
        self.positions[off..off + len].binary_search(&pos).ok().map(|i| off + i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<F: Scalar = f32> {
    pub config: EncoderConfig,
    pub params: ParamSet<F>,
    pub frozen_base: bool,
    layout: Layout,
}

fn normal_tensor<F: Scalar>(shape: Vec<usize>, std: f64, rng: &mut RngState) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64(rng.normal() * std)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

fn filled<F: Scalar>(n: usize, v: f64) -> Tensor<F> {
    Tensor::new(vec![n], vec![F::from_f64(v); n]).expect("shape and data agree")
}

const EMB_STD: f64 = 0.02;

impl<F: Scalar> EncoderModel<F> {
    /// Fresh randomly initialised base model (no adapter).
    pub fn new(config: EncoderConfig, rng: &RngState) -> Result<Self> {
        config.validate()?;
        let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
        let mut r = rng.fork("encoder-init");
        let mut ps = ParamSet::default();
        let names = base_names(config.n_layers);
        let mut it = names.into_iter();
        let mut push = |ps: &mut ParamSet<F>, t: Tensor<F>| {
            ps.push(it.next().expect("name per tensor"), t);
        };
        push(&mut ps, normal_tensor(vec![v, d], EMB_STD, &mut r));
        push(&mut ps, normal_tensor(vec![config.max_len, d], EMB_STD, &mut r));
        push(&mut ps, filled(d, 1.0));
        push(&mut ps, filled(d, 0.0));
        let lin = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        for _ in 0..config.n_layers {
            for _ in 0..4 {
                push(&mut ps, normal_tensor(vec![d, d], lin(d), &mut r));
                push(&mut ps, filled(d, 0.0));
            }
            push(&mut ps, filled(d, 1.0));
            push(&mut ps, filled(d, 0.0));
            push(&mut ps, normal_tensor(vec![d, ff], lin(d), &mut r));
            push(&mut ps, filled(ff, 0.0));
            push(&mut ps, normal_tensor(vec![ff, d], lin(ff), &mut r));
            push(&mut ps, filled(d, 0.0));
            push(&mut ps, filled(d, 1.0));
            push(&mut ps, filled(d, 0.0));
        }
        push(&mut ps, filled(v, 0.0));
        let layout = Layout::build(&ps, config.n_layers)?;
        Ok(Self { config, params: ps, frozen_base: false, layout })
    }

    fn from_params(config: EncoderConfig, params: ParamSet<F>, frozen_base: bool) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&params, config.n_layers)?;
        let (v, d) = (config.vocab_size, config.d_model);
        let expect = |i: usize, shape: Vec<usize>| -> Result<()> {
            let t = &params.tensors[i];
            if t.shape != shape {
                return Err(Error::Shape(format!("{}: {:?} != expected {shape:?}", params.names[i], t.shape)));
            }
            Ok(())
        };
        expect(layout.tok, vec![v, d])?;
        expect(layout.pos, vec![config.max_len, d])?;
        expect(layout.mlm_bias, vec![v])?;
        let mut m = Self { config, params, frozen_base, layout };
        m.apply_freeze();
        Ok(m)
    }

    fn apply_freeze(&mut self) {
        let frozen = self.frozen_base;
        for (name, t) in self.params.names.iter().zip(self.params.tensors.iter_mut()) {
            t.requires_grad = is_adapter_tensor(name) || !frozen;
        }
    }

    pub fn has_adapter(&self) -> bool {
        self.layout.layers.first().is_some_and(|l| l.adapter.is_some())
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Adds one parallel adapter per layer: `W_down` random, `W_up` and both
    /// biases zero, so the model's function is unchanged. Freezes the base.
    pub fn attach_adapter(&mut self, r: usize, s: f64, init_rng: &RngState) -> Result<()> {
        if self.has_adapter() {
            return Err(Error::AdapterPresent);
        }
        let d = self.config.d_model;
        if r == 0 || r >= d {
            return Err(Error::Invalid(format!("adapter bottleneck {r} must be in 1..{d}")));
        }
        let mut rng = init_rng.fork("adapter-init");
        for l in 0..self.config.n_layers {
            let [wd, bd, wu, bu] = adapter_names(l);
            self.params.push(wd, normal_tensor(vec![d, r], 1.0 / (d as f64).sqrt(), &mut rng));
            self.params.push(bd, filled(r, 0.0));
            self.params.push(wu, Tensor::zeros(vec![r, d]));
            self.params.push(bu, filled(d, 0.0));
        }
        self.config.adapter_bottleneck = r;
        self.config.adapter_scale = s;
        self.layout = Layout::build(&self.params, self.config.n_layers)?;
        self.frozen_base = true;
        self.apply_freeze();
        Ok(())
    }

    /// Copy of the base model with the adapter removed and the base unfrozen.
    pub fn without_adapter(&self) -> Self {
        let mut ps = ParamSet::default();
        for (n, t) in self.params.iter() {
            if !is_adapter_tensor(n) {
                ps.push(n, t.clone());
            }
        }
        Self::from_params(self.config.clone(), ps, false).expect("base layout is intact")
    }

    pub fn set_frozen_base(&mut self, frozen: bool) {
        self.frozen_base = frozen;
        self.apply_freeze();
    }

    /// New model with a different vocabulary: replaces the token embeddings
    /// and MLM bias, keeps everything else.
    pub fn with_vocabulary(&self, token_embeddings: Tensor<F>, mlm_bias: Tensor<F>) -> Result<Self> {
        let v = token_embeddings.shape.first().copied().unwrap_or(0);
        let mut cfg = self.config.clone();
        cfg.vocab_size = v;
        let mut ps = self.params.clone();
        ps.tensors[self.layout.tok] = token_embeddings;
        ps.tensors[self.layout.mlm_bias] = mlm_bias;
        Self::from_params(cfg, ps, self.frozen_base)
    }

    pub fn token_embeddings(&self) -> &Tensor<F> {
        &self.params.tensors[self.layout.tok]
    }

    pub fn mlm_bias(&self) -> &Tensor<F> {
        &self.params.tensors[self.layout.mlm_bias]
    }

    pub fn cast<G: Scalar>(&self) -> EncoderModel<G> {
        EncoderModel {
            config: self.config.clone(),
            params: self.params.cast(),
            frozen_base: self.frozen_base,
            layout: self.layout.clone(),
        }
    }

    /// Final-layer hidden states of the packed batch (`tokens × d_model`).
    /// `set` is the index of this model's parameters inside `g`.
    pub fn hidden(&self, g: &mut Graph<'_, F>, set: usize, packed: &Packed, use_adapter: bool) -> Var {
        let lay = &self.layout;
        let cfg = &self.config;
        let tok = g.param(set, lay.tok);
        let pos = g.param(set, lay.pos);
        let te = g.gather_rows(tok, &packed.tokens);
        let pe = g.gather_rows(pos, &packed.positions);
        let x = g.add(te, pe);
        let (eg, eb) = (g.param(set, lay.emb_ln_g), g.param(set, lay.emb_ln_b));
        let mut h = g.layer_norm(x, eg, eb);
        let linear = |g: &mut Graph<'_, F>, x: Var, w: usize, b: usize| {
            let w = g.param(set, w);
            let b = g.param(set, b);
            let y = g.matmul(x, w);
            g.add_bias(y, b)
        };
        for l in &lay.layers {
            let q = linear(g, h, l.wq, l.bq);
            let k = linear(g, h, l.wk, l.bk);
            let v = linear(g, h, l.wv, l.bv);
            let a = g.attention(q, k, v, &packed.segs, cfg.n_heads);
            let a = linear(g, a, l.wo, l.bo);
            let r1 = g.add(h, a);
            let (g1, b1) = (g.param(set, l.ln1_g), g.param(set, l.ln1_b));
            let h1 = g.layer_norm(r1, g1, b1);
            let f = linear(g, h1, l.w1, l.b1);
            let f = g.gelu(f);
            let mut f = linear(g, f, l.w2, l.b2);
            if let (true, Some([wd, bd, wu, bu])) = (use_adapter, l.adapter) {
                let z = linear(g, h1, wd, bd);
                let z = g.relu(z);
                let z = linear(g, z, wu, bu);
                let z = g.scale(z, F::from_f64(cfg.adapter_scale));
                f = g.add(f, z);
            }
            let r2 = g.add(h1, f);
            let (g2, b2) = (g.param(set, l.ln2_g), g.param(set, l.ln2_b));
            h = g.layer_norm(r2, g2, b2);
        }
        h
    }

    /// Pooled, L2-normalised sentence embeddings (`sequences × d_model`).
    pub fn embed_var(&self, g: &mut Graph<'_, F>, set: usize, packed: &Packed, use_adapter: bool) -> Var {
        let h = self.hidden(g, set, packed, use_adapter);
        let pooled = match self.config.pooling {
            Pooling::Mean => g.segment_mean(h, &packed.segs),
            Pooling::Cls => {
                let firsts: Vec<usize> = packed.segs.iter().map(|s| s.0).collect();
                g.gather_rows(h, &firsts)
            }
        };
        g.l2_normalize(pooled)
    }

    /// Tied-weight MLM logits for the given packed rows (`rows × vocab`).
    pub fn mlm_head(&self, g: &mut Graph<'_, F>, set: usize, hidden: Var, rows: &[usize]) -> Var {
        let sel = g.gather_rows(hidden, rows);
        let tok = g.param(set, self.layout.tok);
        let logits = g.matmul_bt(sel, tok);
        let b = g.param(set, self.layout.mlm_bias);
        g.add_bias(logits, b)
    }

    /// Unit-norm embeddings for a batch of id sequences.
    pub fn embed_batch(&self, batch: &[Vec<u32>], use_adapter: bool) -> Result<Vec<Vec<F>>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(CHUNK) {
            let packed = Packed::new(chunk, &self.config)?;
            let mut g = Graph::single(&self.params);
            let e = self.embed_var(&mut g, 0, &packed, use_adapter);
            out.extend(g.value(e).chunks(self.config.d_model).map(<[F]>::to_vec));
        }
        Ok(out)
    }

    pub fn forward_embed(&self, ids: &[u32], use_adapter: bool) -> Result<Vec<F>> {
        Ok(self.embed_batch(std::slice::from_ref(&ids.to_vec()), use_adapter)?.remove(0))
    }

    /// Logits over the vocabulary at each masked position of one sequence.
    pub fn mlm_logits(&self, ids: &[u32], masked_positions: &[usize]) -> Result<Vec<Vec<F>>> {
        if masked_positions.is_empty() {
            return Err(Error::Invalid("masked_positions is empty".into()));
        }
        let packed = Packed::new(std::slice::from_ref(&ids.to_vec()), &self.config)?;
        let rows = masked_positions
            .iter()
            .map(|&p| packed.row(0, p).ok_or_else(|| Error::Invalid(format!("masked position {p} is padding or out of range"))))
            .collect::<Result<Vec<_>>>()?;
        let mut g = Graph::single(&self.params);
        let h = self.hidden(&mut g, 0, &packed, false);
        let logits = self.mlm_head(&mut g, 0, h, &rows);
        Ok(g.value(logits).chunks(self.config.vocab_size).map(<[F]>::to_vec).collect())
    }

    /// SHA-256 over every non-adapter tensor (names, shapes and bytes).
    pub fn base_digest(&self) -> String {
        self.digest_where(|n| !is_adapter_tensor(n))
    }

    pub fn digest_where(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.params.iter().filter(|(n, _)| keep(n)) {
            h.update(n.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for x in &t.data {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    config: EncoderConfig,
    adapter: bool,
    frozen_base: bool,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl EncoderModel<f32> {
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.num_params() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(t.shape.len() as u8);
            for d in &t.shape {
                buf.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for x in &t.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        let side = Sidecar { config: self.config.clone(), adapter: self.has_adapter(), frozen_base: self.frozen_base };
        let sp = sidecar_path(path);
        let json = serde_json::to_string_pretty(&side)?;
        std::fs::write(&sp, json + "\n").map_err(|e| Error::io(&sp, e))
    }

    pub fn load_weights(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let sp = sidecar_path(path);
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?)?;
        let params = parse_weights(&bytes, path)?;
        let m = Self::from_params(side.config, params, side.frozen_base)?;
        if m.has_adapter() != side.adapter {
            return Err(Error::format(path, "adapter flag in sidecar disagrees with tensors"));
        }
        Ok(m)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated { path: self.path.to_path_buf(), detail: format!("while reading {what}") });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn parse_weights(bytes: &[u8], path: &Path) -> Result<ParamSet<f32>> {
    let mut c = Cursor { bytes, at: 0, path };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    c.at = 4;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::BadVersion { path: path.to_path_buf(), version });
    }
    let count = c.u32("tensor count")?;
    let mut ps = ParamSet::default();
    for _ in 0..count {
        let nl = u16::from_le_bytes(c.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(c.take(nl, "name")?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(c.take(8, "dims")?.try_into().expect("8 bytes")) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::format(path, "tensor too large"))?, &name)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        ps.push(name, Tensor::new(shape, data)?);
    }
    if c.at != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - c.at)));
    }
    Ok(ps)
}

/// Reads only the tensor directory of a weight file: `(name, dims)` pairs.
pub fn list_tensors(path: &Path) -> Result<Vec<(String, Vec<usize>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_weights(&bytes, path)?.iter().map(|(n, t)| (n.to_string(), t.shape.clone())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            max_len: 24,
            vocab_size: 40,
            adapter_bottleneck: 8,
            adapter_scale: 4.0,
            pooling: Pooling::Mean,
        }
    }

    fn random_ids(rng: &mut RngState, v: usize, len: usize) -> Vec<u32> {
        let mut ids = vec![2];
        ids.extend((0..len).map(|_| 5 + rng.below(v - 5) as u32));
        ids.push(3);
        ids
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = EncoderModel::<f32>::new(tiny(), &RngState::new(1)).unwrap();
        let mut r = RngState::new(2);
        for _ in 0..100 {
            let len = 1 + r.below(20);
            let ids = random_ids(&mut r, 40, len);
            let e = m.forward_embed(&ids, false).unwrap();
            let n: f64 = e.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "{n}");
        }
    }

    #[test]
    fn padding_never_changes_embedding() {
        let m = EncoderModel::<f32>::new(tiny(), &RngState::new(1)).unwrap();
        let ids = vec![2, 7, 9, 11, 3];
        let mut padded = ids.clone();
        padded.extend([0, 0, 0]);
        assert_eq!(m.forward_embed(&ids, false).unwrap(), m.forward_embed(&padded, false).unwrap());
        let batch = m.embed_batch(&[ids.clone(), vec![2, 8, 3]], false).unwrap();
        assert_eq!(batch[0], m.forward_embed(&ids, false).unwrap());
        assert!(matches!(m.forward_embed(&[0, 0], false), Err(Error::AllPad)));
    }

    #[test]
    fn adapter_identity_and_bypass() {
        let mut m = EncoderModel::<f32>::new(tiny(), &RngState::new(1)).unwrap();
        let ids = vec![2, 7, 9, 11, 3];
        let before = m.forward_embed(&ids, true).unwrap();
        assert_eq!(before, m.forward_embed(&ids, false).unwrap());
        let n0 = m.num_params();
        m.attach_adapter(8, 4.0, &RngState::new(5)).unwrap();
        assert!(m.frozen_base);
        assert_eq!(m.num_params() - n0, tiny().adapter_param_count());
        assert_eq!(m.num_params() - n0, 2 * (16 * 8 + 8 * 16 + 8 + 16));
        assert_eq!(m.forward_embed(&ids, true).unwrap(), before);
        assert!(matches!(m.attach_adapter(8, 4.0, &RngState::new(5)), Err(Error::AdapterPresent)));

        let wu = m.params.index_of("layers.0.adapter.w_up").unwrap();
        for x in m.params.tensors[wu].data.iter_mut() {
            *x = 0.1;
        }
        assert_ne!(m.forward_embed(&ids, true).unwrap(), before);
        assert_eq!(m.forward_embed(&ids, false).unwrap(), before);
        assert_eq!(m.without_adapter().forward_embed(&ids, true).unwrap(), before);
    }

    #[test]
    fn freeze_flags() {
        let mut m = EncoderModel::<f32>::new(tiny(), &RngState::new(1)).unwrap();
        assert!(m.params.tensors.iter().all(|t| t.requires_grad));
        m.attach_adapter(8, 4.0, &RngState::new(5)).unwrap();
        for (n, t) in m.params.iter() {
            assert_eq!(t.requires_grad, is_adapter_tensor(n), "{n}");
        }
    }

    #[test]
    fn mlm_logits_shape_and_degenerate_weights() {
        let m = EncoderModel::<f32>::new(tiny(), &RngState::new(1)).unwrap();
        let ids = vec![2, 7, 4, 11, 3];
        let l = m.mlm_logits(&ids, &[1, 2]).unwrap();
        assert_eq!((l.len(), l[0].len()), (2, 40));
        for row in &l {
            let p = crate::numerics::softmax(&row.iter().map(|x| *x as f64).collect::<Vec<_>>());
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(m.mlm_logits(&ids, &[]).is_err());

        let v = 40;
        let b: Vec<f32> = (0..v).map(|i| i as f32 * 0.1).collect();
        let z = m
            .with_vocabulary(Tensor::zeros(vec![v, 16]), Tensor::new(vec![v], b.clone()).unwrap())
            .unwrap();
        for row in z.mlm_logits(&ids, &[0, 3]).unwrap() {
            assert_eq!(row, b);
        }
    }

    #[test]
    fn cls_pooling_uses_first_token() {
        let mut cfg = tiny();
        cfg.pooling = Pooling::Cls;
        let m = EncoderModel::<f32>::new(cfg, &RngState::new(1)).unwrap();
        let e = m.forward_embed(&[2, 7, 9, 3], false).unwrap();
        assert_eq!(e.len(), 16);
    }

    #[test]
    fn weights_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let mut m = EncoderModel::<f32>::new(tiny(), &RngState::new(9)).unwrap();
        m.attach_adapter(8, 4.0, &RngState::new(3)).unwrap();
        m.save_weights(&p).unwrap();
        let back = EncoderModel::load_weights(&p).unwrap();
        assert_eq!(back, m);
        let listing = list_tensors(&p).unwrap();
        assert_eq!(listing[0], ("token_embeddings".to_string(), vec![40, 16]));

        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        let err = EncoderModel::load_weights(&p).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        bytes[0] = b'M';
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(EncoderModel::load_weights(&p), Err(Error::Truncated { .. })));

        bytes[4] = 7;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(EncoderModel::load_weights(&p), Err(Error::BadVersion { version: 7, .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.n_heads = 3;
        assert!(EncoderModel::<f32>::new(c, &RngState::new(0)).is_err());
        let mut c = tiny();
        c.adapter_bottleneck = 16;
        assert!(c.validate().is_err());
    }
}
