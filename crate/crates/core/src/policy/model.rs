//! Pre-norm attention encoder-decoder with a vocabulary head and a
//! two-channel value head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gelu, Graph, Matrix, ParamId, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Longest encoder input; longer essays are truncated.
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_source_len: 64,
            max_target_len: 32,
            init_seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.max_source_len == 0 || self.max_target_len == 0 {
            return Err(Error::Config("layer, width and length settings must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Debug)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    norm3: Norm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct Layout {
    tokens: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    out_w: ParamId,
    out_b: ParamId,
    value_w: ParamId,
    value_b: ParamId,
}

enum Init {
    FanIn,
    Ones,
    Zeros,
}

struct Builder<'a> {
    store: ParamStore,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Builder<'_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let data = match (&mut self.rng, init) {
            (_, Init::Ones) => vec![1.0; rows * cols],
            (None, _) | (_, Init::Zeros) => vec![0.0; rows * cols],
            (Some(rng), Init::FanIn) => {
                let bound = 1.0 / (rows as f64).sqrt();
                (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        self.store.add(name, Matrix::from_vec(rows, cols, data))
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.add(format!("{name}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            wq: self.add(format!("{name}.wq"), d, d, Init::FanIn),
            wk: self.add(format!("{name}.wk"), d, d, Init::FanIn),
            wv: self.add(format!("{name}.wv"), d, d, Init::FanIn),
            wo: self.add(format!("{name}.wo"), d, d, Init::FanIn),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, ff: usize) -> FeedForward {
        FeedForward {
            w1: self.add(format!("{name}.w1"), d, ff, Init::FanIn),
            b1: self.add(format!("{name}.b1"), 1, ff, Init::Zeros),
            w2: self.add(format!("{name}.w2"), ff, d, Init::FanIn),
            b2: self.add(format!("{name}.b2"), 1, d, Init::Zeros),
        }
    }
}

fn build(config: &PolicyConfig, vocab_size: usize, rng: Option<&mut ChaCha8Rng>) -> (Layout, ParamStore) {
    let d = config.d_model;
    let mut b = Builder { store: ParamStore::default(), rng };
    // embeddings use unit fan-in: entries drawn from U(-1, 1)
    let tokens = b.add("embed.tokens".into(), vocab_size, d, Init::Zeros);
    let enc_pos = b.add("embed.enc_pos".into(), config.max_source_len, d, Init::Zeros);
    let dec_pos = b.add("embed.dec_pos".into(), config.max_target_len, d, Init::Zeros);
    if let Some(rng) = b.rng.as_mut() {
        for id in [tokens, enc_pos, dec_pos] {
            for x in &mut b.store.get_mut(id).data {
                *x = rng.random_range(-1.0..1.0);
            }
        }
    }
    let encoder = (0..config.n_layers)
        .map(|l| EncoderLayer {
            norm1: b.norm(&format!("enc{l}.norm1"), d),
            attn: b.attention(&format!("enc{l}.attn"), d),
            norm2: b.norm(&format!("enc{l}.norm2"), d),
            ffn: b.ffn(&format!("enc{l}.ffn"), d, config.d_ff),
        })
        .collect();
    let enc_norm = b.norm("enc.norm", d);
    let decoder = (0..config.n_layers)
        .map(|l| DecoderLayer {
            norm1: b.norm(&format!("dec{l}.norm1"), d),
            self_attn: b.attention(&format!("dec{l}.self"), d),
            norm2: b.norm(&format!("dec{l}.norm2"), d),
            cross_attn: b.attention(&format!("dec{l}.cross"), d),
            norm3: b.norm(&format!("dec{l}.norm3"), d),
            ffn: b.ffn(&format!("dec{l}.ffn"), d, config.d_ff),
        })
        .collect();
    let dec_norm = b.norm("dec.norm", d);
    let out_w = b.add("head.out_w".into(), d, vocab_size, Init::FanIn);
    let out_b = b.add("head.out_b".into(), 1, vocab_size, Init::Zeros);
    let value_w = b.add("head.value_w".into(), d, 2, Init::FanIn);
    let value_b = b.add("head.value_b".into(), 1, 2, Init::Zeros);
    let layout = Layout {
        tokens,
        enc_pos,
        dec_pos,
        encoder,
        enc_norm,
        decoder,
        dec_norm,
        out_w,
        out_b,
        value_w,
        value_b,
    };
    (layout, b.store)
}

/// Parameters of the score-generation policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct PolicyParams {
    config: PolicyConfig,
    vocab_size: usize,
    store: ParamStore,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    config: PolicyConfig,
    vocab_size: usize,
    store: ParamStore,
}

impl TryFrom<PolicyRepr> for PolicyParams {
    type Error = Error;

    fn try_from(r: PolicyRepr) -> Result<Self> {
        r.config.validate()?;
        let (layout, reference) = build(&r.config, r.vocab_size, None);
        let shapes_match = reference.len() == r.store.len()
            && reference.names() == r.store.names()
            && reference
                .tensors()
                .iter()
                .zip(r.store.tensors())
                .all(|(a, b)| a.shape() == b.shape() && b.data.len() == b.rows * b.cols);
        if !shapes_match {
            return Err(Error::Validation("parameter tensors do not match the policy config".into()));
        }
        Ok(PolicyParams { config: r.config, vocab_size: r.vocab_size, store: r.store, layout })
    }
}

impl From<PolicyParams> for PolicyRepr {
    fn from(p: PolicyParams) -> Self {
        PolicyRepr { config: p.config, vocab_size: p.vocab_size, store: p.store }
    }
}

impl PartialEq for PolicyParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.vocab_size == other.vocab_size && self.store == other.store
    }
}

/// Graph handles for one forward pass.
pub struct Forward {
    /// `T × |V|` next-token logits.
    pub logits: Var,
    /// `T × 2` value estimates, one column per reward channel.
    pub values: Var,
}

impl PolicyParams {
    pub fn new(config: PolicyConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let (layout, store) = build(&config, vocab_size, Some(&mut rng));
        Ok(PolicyParams { config, vocab_size, store, layout })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn hash(&self) -> String {
        self.store.hash()
    }

    /// Parameters of the value head alone.
    pub fn value_head(&self) -> [ParamId; 2] {
        [self.layout.value_w, self.layout.value_b]
    }

    /// Zeroes the vocabulary head so every next-token distribution is uniform.
    pub fn zero_output_head(&mut self) {
        for id in [self.layout.out_w, self.layout.out_b] {
            self.store.get_mut(id).data.fill(0.0);
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&t) => Err(Error::UnknownToken(t)),
            None => Ok(()),
        }
    }

    fn norm(&self, g: &mut Graph, x: Var, n: &Norm) -> Var {
        let gain = g.param(n.gain);
        let bias = g.param(n.bias);
        g.layer_norm(x, gain, bias)
    }

    fn attention(&self, g: &mut Graph, q_in: Var, kv_in: Var, a: &Attention, causal: bool) -> Var {
        let (wq, wk, wv, wo) = (g.param(a.wq), g.param(a.wk), g.param(a.wv), g.param(a.wo));
        let q = g.matmul(q_in, wq);
        let k = g.matmul(kv_in, wk);
        let v = g.matmul(kv_in, wv);
        let dh = self.config.d_model / self.config.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.config.n_heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let s = g.matmul_bt(qh, kh);
                let s = g.scale(s, scale);
                let p = g.softmax(s, causal);
                g.matmul(p, vh)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        g.matmul(cat, wo)
    }

    fn ffn(&self, g: &mut Graph, x: Var, f: &FeedForward) -> Var {
        let (w1, b1, w2, b2) = (g.param(f.w1), g.param(f.b1), g.param(f.w2), g.param(f.b2));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let o = g.matmul(h, w2);
        g.add_row(o, b2)
    }

    fn embed(&self, g: &mut Graph, tokens: &[u32], pos_table: ParamId) -> Var {
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = g.embed(self.layout.tokens, &ids);
        let pos = g.embed(pos_table, &positions);
        g.add(tok, pos)
    }

    /// Encodes the essay (truncated to `max_source_len`) into a memory matrix.
    pub fn encode(&self, g: &mut Graph, source: &[u32]) -> Result<Var> {
        if source.is_empty() {
            return Err(Error::Empty("essay tokens".into()));
        }
        self.check_tokens(source)?;
        let source = &source[..source.len().min(self.config.max_source_len)];
        let mut x = self.embed(g, source, self.layout.enc_pos);
        for layer in &self.layout.encoder {
            let h = self.norm(g, x, &layer.norm1);
            let a = self.attention(g, h, h, &layer.attn, false);
            x = g.add(x, a);
            let h = self.norm(g, x, &layer.norm2);
            let f = self.ffn(g, h, &layer.ffn);
            x = g.add(x, f);
        }
        Ok(self.norm(g, x, &self.layout.enc_norm))
    }

    /// Runs the decoder over `dec_input` against an encoded `memory`.
    pub fn decode(&self, g: &mut Graph, memory: Var, dec_input: &[u32]) -> Result<Forward> {
        if dec_input.is_empty() || dec_input.len() > self.config.max_target_len {
            return Err(Error::Domain(format!(
                "decoder input length {} outside 1..={}",
                dec_input.len(),
                self.config.max_target_len
            )));
        }
        self.check_tokens(dec_input)?;
        let mut x = self.embed(g, dec_input, self.layout.dec_pos);
        for layer in &self.layout.decoder {
            let h = self.norm(g, x, &layer.norm1);
            let a = self.attention(g, h, h, &layer.self_attn, true);
            x = g.add(x, a);
            let h = self.norm(g, x, &layer.norm2);
            let c = self.attention(g, h, memory, &layer.cross_attn, false);
            x = g.add(x, c);
            let h = self.norm(g, x, &layer.norm3);
            let f = self.ffn(g, h, &layer.ffn);
            x = g.add(x, f);
        }
        let h = self.norm(g, x, &self.layout.dec_norm);
        let (ow, ob) = (g.param(self.layout.out_w), g.param(self.layout.out_b));
        let logits = g.matmul(h, ow);
        let logits = g.add_row(logits, ob);
        let (vw, vb) = (g.param(self.layout.value_w), g.param(self.layout.value_b));
        let values = g.matmul(h, vw);
        let values = g.add_row(values, vb);
        Ok(Forward { logits, values })
    }

    /// Teacher-forced pass: decoder input is `<bos>` followed by `target[..T-1]`.
    pub fn forward(&self, g: &mut Graph, essay: &[u32], target: &[u32], bos: u32) -> Result<Forward> {
        let memory = self.encode(g, essay)?;
        let mut dec_in = Vec::with_capacity(target.len());
        dec_in.push(bos);
        dec_in.extend_from_slice(&target[..target.len().saturating_sub(1)]);
        self.decode(g, memory, &dec_in)
    }
}

/// Key/value state for incremental greedy or sampled decoding.
pub struct DecoderCache {
    cross: Vec<(Matrix, Matrix)>,
    /// Per layer: keys and values of every decoded position, row-major.
    past: Vec<(Vec<f64>, Vec<f64>)>,
    pos: usize,
}

impl DecoderCache {
    pub fn position(&self) -> usize {
        self.pos
    }
}

fn layer_norm_row(x: &[f64], gain: &Matrix, bias: &Matrix) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rs = 1.0 / (var + crate::nn::LN_EPS).sqrt();
    x.iter()
        .zip(&gain.data)
        .zip(&bias.data)
        .map(|((v, g), b)| (v - mean) * rs * g + b)
        .collect()
}

fn row_times(x: &[f64], w: &Matrix) -> Vec<f64> {
    Matrix::from_vec(1, x.len(), x.to_vec()).matmul(w).data
}

impl PolicyParams {
    fn attend(&self, q: &[f64], keys: &[f64], values: &[f64], n: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let dh = d / self.config.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; d];
        for h in 0..self.config.n_heads {
            let qh = &q[h * dh..(h + 1) * dh];
            let mut scores: Vec<f64> = (0..n)
                .map(|j| qh.iter().zip(&keys[j * d + h * dh..j * d + (h + 1) * dh]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for s in &mut scores {
                *s = (*s - max).exp();
                sum += *s;
            }
            for (j, s) in scores.iter().enumerate() {
                let p = s / sum;
                for (o, v) in out[h * dh..(h + 1) * dh].iter_mut().zip(&values[j * d + h * dh..j * d + (h + 1) * dh]) {
                    *o += p * v;
                }
            }
        }
        out
    }

    /// Encodes the essay and precomputes cross-attention keys and values.
    pub fn start_decoding(&self, essay: &[u32]) -> Result<DecoderCache> {
        let mut g = Graph::new(&self.store);
        let m = self.encode(&mut g, essay)?;
        let memory = g.value(m);
        let cross = self
            .layout
            .decoder
            .iter()
            .map(|l| (memory.matmul(self.store.get(l.cross_attn.wk)), memory.matmul(self.store.get(l.cross_attn.wv))))
            .collect();
        Ok(DecoderCache { cross, past: vec![(Vec::new(), Vec::new()); self.config.n_layers], pos: 0 })
    }

    /// Feeds one decoder input token; returns next-token logits and the
    /// value pair at that position.
    pub fn decode_step(&self, cache: &mut DecoderCache, token: u32) -> Result<(Vec<f64>, [f64; 2])> {
        if token as usize >= self.vocab_size {
            return Err(Error::UnknownToken(token));
        }
        if cache.pos >= self.config.max_target_len {
            return Err(Error::Domain(format!("decoder position {} beyond max_target_len", cache.pos)));
        }
        let s = &self.store;
        let mut x: Vec<f64> = s
            .get(self.layout.tokens)
            .row(token as usize)
            .iter()
            .zip(s.get(self.layout.dec_pos).row(cache.pos))
            .map(|(a, b)| a + b)
            .collect();
        for (l, layer) in self.layout.decoder.iter().enumerate() {
            let h = layer_norm_row(&x, s.get(layer.norm1.gain), s.get(layer.norm1.bias));
            let q = row_times(&h, s.get(layer.self_attn.wq));
            let (keys, values) = &mut cache.past[l];
            keys.extend(row_times(&h, s.get(layer.self_attn.wk)));
            values.extend(row_times(&h, s.get(layer.self_attn.wv)));
            let a = row_times(&self.attend(&q, keys, values, cache.pos + 1), s.get(layer.self_attn.wo));
            x.iter_mut().zip(&a).for_each(|(x, a)| *x += a);

            let h = layer_norm_row(&x, s.get(layer.norm2.gain), s.get(layer.norm2.bias));
            let q = row_times(&h, s.get(layer.cross_attn.wq));
            let (ck, cv) = &cache.cross[l];
            let c = row_times(&self.attend(&q, &ck.data, &cv.data, ck.rows), s.get(layer.cross_attn.wo));
            x.iter_mut().zip(&c).for_each(|(x, c)| *x += c);

            let h = layer_norm_row(&x, s.get(layer.norm3.gain), s.get(layer.norm3.bias));
            let mut f = row_times(&h, s.get(layer.ffn.w1));
            for (v, b) in f.iter_mut().zip(&s.get(layer.ffn.b1).data) {
                *v = gelu(*v + b);
            }
            let f = row_times(&f, s.get(layer.ffn.w2));
            x.iter_mut().zip(f.iter().zip(&s.get(layer.ffn.b2).data)).for_each(|(x, (f, b))| *x += f + b);
        }
        cache.pos += 1;
        let h = layer_norm_row(&x, s.get(self.layout.dec_norm.gain), s.get(self.layout.dec_norm.bias));
        let mut logits = row_times(&h, s.get(self.layout.out_w));
        logits.iter_mut().zip(&s.get(self.layout.out_b).data).for_each(|(l, b)| *l += b);
        let v = row_times(&h, s.get(self.layout.value_w));
        let vb = &s.get(self.layout.value_b).data;
        Ok((logits, [v[0] + vb[0], v[1] + vb[1]]))
    }
}
