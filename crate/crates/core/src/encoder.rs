//! Patient encoder: the `[CLS] d [SEP] p` input layout, the additive
//! token/segment/relevance embedding, and a post-norm transformer encoder
//! whose `[CLS]` output is the patient representation.
//!
//! Token ids: 0 is `[CLS]`, 1 is `[SEP]`, `2..2+|D|` are diseases and the
//! following `|P|` ids are procedures. Relevance (priority rank within a
//! span) is the only positional signal; special tokens use rank 0 of their
//! segment's relevance table.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CodeVocabulary, PatientRecord};
use crate::error::{Error, Result};
use crate::nn::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, truncated_normal, LayerNormCache,
    Parameterized,
};

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const N_SPECIAL: usize = 2;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub max_disease_len: usize,
    pub max_procedure_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    /// Desk-scale encoder (64 dims, 2 layers, 2 heads).
    fn default() -> Self {
        EncoderConfig {
            n_layers: 2,
            n_heads: 2,
            embed_dim: 64,
            max_disease_len: 40,
            max_procedure_len: 30,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Full-size encoder: 3 layers, 4 heads, 512 dims.
    pub fn paper() -> Self {
        EncoderConfig {
            n_layers: 3,
            n_heads: 4,
            embed_dim: 512,
            ..EncoderConfig::default()
        }
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(Error::validation(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.max_disease_len == 0 || self.max_procedure_len == 0 {
            return Err(Error::validation("maximum span lengths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Token, segment and relevance ids for one record plus an attention mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSequence {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub relevance_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
}

impl InputSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Extends the sequence with masked padding positions up to `len`.
    pub fn pad_to(&mut self, len: usize) {
        while self.token_ids.len() < len {
            self.token_ids.push(CLS);
            self.segment_ids.push(0);
            self.relevance_ids.push(0);
            self.attention_mask.push(false);
        }
    }
}

/// Lays out `[CLS] d [SEP] p`, keeping at most the configured number of
/// highest-priority codes per span.
pub fn build_input_sequence(record: &PatientRecord, vocab: &CodeVocabulary, config: &EncoderConfig) -> Result<InputSequence> {
    build_from_spans(&record.diseases, &record.procedures, vocab.n_diseases(), config)
}

/// As [`build_input_sequence`], for an arbitrary disease/procedure pairing.
pub fn build_from_spans(
    diseases: &[usize],
    procedures: &[usize],
    n_diseases: usize,
    config: &EncoderConfig,
) -> Result<InputSequence> {
    if diseases.is_empty() {
        return Err(Error::validation("disease sequence is empty"));
    }
    let diseases = &diseases[..diseases.len().min(config.max_disease_len)];
    let procedures = &procedures[..procedures.len().min(config.max_procedure_len)];
    let len = diseases.len() + procedures.len() + 2;
    let mut seq = InputSequence {
        token_ids: Vec::with_capacity(len),
        segment_ids: Vec::with_capacity(len),
        relevance_ids: Vec::with_capacity(len),
        attention_mask: vec![true; len],
    };
    seq.token_ids.push(CLS);
    seq.segment_ids.push(0);
    seq.relevance_ids.push(0);
    for (rank, &d) in diseases.iter().enumerate() {
        seq.token_ids.push(N_SPECIAL + d);
        seq.segment_ids.push(0);
        seq.relevance_ids.push(rank);
    }
    seq.token_ids.push(SEP);
    seq.segment_ids.push(1);
    seq.relevance_ids.push(0);
    for (rank, &p) in procedures.iter().enumerate() {
        seq.token_ids.push(N_SPECIAL + n_diseases + p);
        seq.segment_ids.push(1);
        seq.relevance_ids.push(rank);
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
}

impl LayerParams {
    fn init<R: Rng>(rng: &mut R, d: usize, f: usize) -> Self {
        LayerParams {
            wq: truncated_normal(rng, (d, d), INIT_STD),
            bq: Array1::zeros(d),
            wk: truncated_normal(rng, (d, d), INIT_STD),
            bk: Array1::zeros(d),
            wv: truncated_normal(rng, (d, d), INIT_STD),
            bv: Array1::zeros(d),
            wo: truncated_normal(rng, (d, d), INIT_STD),
            bo: Array1::zeros(d),
            ln1_gamma: Array1::ones(d),
            ln1_beta: Array1::zeros(d),
            w1: truncated_normal(rng, (d, f), INIT_STD),
            b1: Array1::zeros(f),
            w2: truncated_normal(rng, (f, d), INIT_STD),
            b2: Array1::zeros(d),
            ln2_gamma: Array1::ones(d),
            ln2_beta: Array1::zeros(d),
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }
}

impl Parameterized for LayerParams {
    fn named_arrays(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("wq".into(), self.wq.view().into_dyn()),
            ("bq".into(), self.bq.view().into_dyn()),
            ("wk".into(), self.wk.view().into_dyn()),
            ("bk".into(), self.bk.view().into_dyn()),
            ("wv".into(), self.wv.view().into_dyn()),
            ("bv".into(), self.bv.view().into_dyn()),
            ("wo".into(), self.wo.view().into_dyn()),
            ("bo".into(), self.bo.view().into_dyn()),
            ("ln1_gamma".into(), self.ln1_gamma.view().into_dyn()),
            ("ln1_beta".into(), self.ln1_beta.view().into_dyn()),
            ("w1".into(), self.w1.view().into_dyn()),
            ("b1".into(), self.b1.view().into_dyn()),
            ("w2".into(), self.w2.view().into_dyn()),
            ("b2".into(), self.b2.view().into_dyn()),
            ("ln2_gamma".into(), self.ln2_gamma.view().into_dyn()),
            ("ln2_beta".into(), self.ln2_beta.view().into_dyn()),
        ]
    }

    fn arrays_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![
            self.wq.view_mut().into_dyn(),
            self.bq.view_mut().into_dyn(),
            self.wk.view_mut().into_dyn(),
            self.bk.view_mut().into_dyn(),
            self.wv.view_mut().into_dyn(),
            self.bv.view_mut().into_dyn(),
            self.wo.view_mut().into_dyn(),
            self.bo.view_mut().into_dyn(),
            self.ln1_gamma.view_mut().into_dyn(),
            self.ln1_beta.view_mut().into_dyn(),
            self.w1.view_mut().into_dyn(),
            self.b1.view_mut().into_dyn(),
            self.w2.view_mut().into_dyn(),
            self.b2.view_mut().into_dyn(),
            self.ln2_gamma.view_mut().into_dyn(),
            self.ln2_beta.view_mut().into_dyn(),
        ]
    }
}

/// Embedding tables and transformer weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `(|D| + |P| + 2) x dim`
    pub token: Array2<f64>,
    /// `2 x dim`
    pub segment: Array2<f64>,
    /// `max_disease_len x dim`
    pub relevance_disease: Array2<f64>,
    /// `max_procedure_len x dim`
    pub relevance_procedure: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn init<R: Rng>(config: &EncoderConfig, n_diseases: usize, n_procedures: usize, rng: &mut R) -> Self {
        let d = config.embed_dim;
        EncoderParams {
            token: truncated_normal(rng, (N_SPECIAL + n_diseases + n_procedures, d), INIT_STD),
            segment: truncated_normal(rng, (2, d), INIT_STD),
            relevance_disease: truncated_normal(rng, (config.max_disease_len, d), INIT_STD),
            relevance_procedure: truncated_normal(rng, (config.max_procedure_len, d), INIT_STD),
            layers: (0..config.n_layers)
                .map(|_| LayerParams::init(rng, d, config.ffn_dim()))
                .collect(),
        }
    }

    pub fn seeded(config: &EncoderConfig, n_diseases: usize, n_procedures: usize, seed: u64) -> Self {
        Self::init(config, n_diseases, n_procedures, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            token: Array2::zeros(self.token.raw_dim()),
            segment: Array2::zeros(self.segment.raw_dim()),
            relevance_disease: Array2::zeros(self.relevance_disease.raw_dim()),
            relevance_procedure: Array2::zeros(self.relevance_procedure.raw_dim()),
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.token.ncols()
    }

    pub fn n_tokens(&self) -> usize {
        self.token.nrows()
    }

    /// Checks table shapes against a config and vocabulary sizes.
    pub fn check_shapes(&self, config: &EncoderConfig, n_diseases: usize, n_procedures: usize) -> Result<()> {
        let d = config.embed_dim;
        let f = config.ffn_dim();
        let check = |name: &str, found: &[usize], expected: &[usize]| {
            if found == expected {
                Ok(())
            } else {
                Err(Error::Shape {
                    name: name.into(),
                    expected: expected.to_vec(),
                    found: found.to_vec(),
                })
            }
        };
        check("token", self.token.shape(), &[N_SPECIAL + n_diseases + n_procedures, d])?;
        check("segment", self.segment.shape(), &[2, d])?;
        check("relevance_disease", self.relevance_disease.shape(), &[config.max_disease_len, d])?;
        check("relevance_procedure", self.relevance_procedure.shape(), &[config.max_procedure_len, d])?;
        if self.layers.len() != config.n_layers {
            return Err(Error::Shape {
                name: "layers".into(),
                expected: vec![config.n_layers],
                found: vec![self.layers.len()],
            });
        }
        for (i, l) in self.layers.iter().enumerate() {
            check(&format!("layers.{i}.wq"), l.wq.shape(), &[d, d])?;
            check(&format!("layers.{i}.w1"), l.w1.shape(), &[d, f])?;
            check(&format!("layers.{i}.w2"), l.w2.shape(), &[f, d])?;
        }
        Ok(())
    }
}

impl Parameterized for EncoderParams {
    fn named_arrays(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("token".into(), self.token.view().into_dyn()),
            ("segment".into(), self.segment.view().into_dyn()),
            ("relevance_disease".into(), self.relevance_disease.view().into_dyn()),
            ("relevance_procedure".into(), self.relevance_procedure.view().into_dyn()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .named_arrays()
                    .into_iter()
                    .map(|(n, a)| (format!("layers.{i}.{n}"), a)),
            );
        }
        out
    }

    fn arrays_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = vec![
            self.token.view_mut().into_dyn(),
            self.segment.view_mut().into_dyn(),
            self.relevance_disease.view_mut().into_dyn(),
            self.relevance_procedure.view_mut().into_dyn(),
        ];
        for layer in &mut self.layers {
            out.extend(layer.arrays_mut());
        }
        out
    }
}

fn check_ids(seq: &InputSequence, params: &EncoderParams) -> Result<()> {
    let n = seq.len();
    if seq.segment_ids.len() != n || seq.relevance_ids.len() != n || seq.attention_mask.len() != n {
        return Err(Error::validation("input sequence fields have different lengths"));
    }
    for t in 0..n {
        if !seq.attention_mask[t] {
            continue;
        }
        let (tok, seg, rel) = (seq.token_ids[t], seq.segment_ids[t], seq.relevance_ids[t]);
        let rel_rows = match seg {
            0 => params.relevance_disease.nrows(),
            1 => params.relevance_procedure.nrows(),
            _ => return Err(Error::validation(format!("position {t}: segment id {seg} out of range"))),
        };
        if tok >= params.n_tokens() {
            return Err(Error::validation(format!(
                "position {t}: token id {tok} out of range {}",
                params.n_tokens()
            )));
        }
        if rel >= rel_rows {
            return Err(Error::validation(format!("position {t}: relevance id {rel} out of range {rel_rows}")));
        }
    }
    Ok(())
}

/// Sum of token, segment and relevance rows per position; masked positions
/// are zero.
pub fn embed(seq: &InputSequence, params: &EncoderParams) -> Result<Array2<f64>> {
    check_ids(seq, params)?;
    let mut x = Array2::zeros((seq.len(), params.dim()));
    for (t, mut row) in x.rows_mut().into_iter().enumerate() {
        if !seq.attention_mask[t] {
            continue;
        }
        let rel = match seq.segment_ids[t] {
            0 => params.relevance_disease.row(seq.relevance_ids[t]),
            _ => params.relevance_procedure.row(seq.relevance_ids[t]),
        };
        row.assign(&params.token.row(seq.token_ids[t]));
        row += &params.segment.row(seq.segment_ids[t]);
        row += &rel;
    }
    Ok(x)
}

fn embed_backward(seq: &InputSequence, dx: &Array2<f64>, grads: &mut EncoderParams) {
    for (t, row) in dx.rows().into_iter().enumerate() {
        if !seq.attention_mask[t] {
            continue;
        }
        let mut tok = grads.token.row_mut(seq.token_ids[t]);
        tok += &row;
        let mut seg = grads.segment.row_mut(seq.segment_ids[t]);
        seg += &row;
        let mut rel = match seq.segment_ids[t] {
            0 => grads.relevance_disease.row_mut(seq.relevance_ids[t]),
            _ => grads.relevance_procedure.row_mut(seq.relevance_ids[t]),
        };
        rel += &row;
    }
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    drop_attn: Option<Array2<f64>>,
    ln1: LayerNormCache,
    y1: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    drop_ffn: Option<Array2<f64>>,
    ln2: LayerNormCache,
}

/// Intermediate activations kept for the backward pass.
pub struct EncoderCache {
    seq: InputSequence,
    layers: Vec<LayerCache>,
    len: usize,
    dim: usize,
}

fn dropout_mask<R: Rng>(rng: &mut R, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn layer_forward<R: Rng>(
    layer: &LayerParams,
    x: Array2<f64>,
    mask: &[bool],
    n_heads: usize,
    dropout: Option<(f64, &mut R)>,
) -> (Array2<f64>, LayerCache) {
    let (len, d) = x.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let xv = x.view();
    let q = linear(&xv, &layer.wq, &layer.bq);
    let k = linear(&xv, &layer.wk, &layer.bk);
    let v = linear(&xv, &layer.wv, &layer.bv);

    let mut context = Array2::zeros((len, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        for mut row in scores.rows_mut() {
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter_mut().enumerate() {
                *s *= scale;
                if mask[j] && *s > max {
                    max = *s;
                }
            }
            let mut total = 0.0;
            for (j, s) in row.iter_mut().enumerate() {
                *s = if mask[j] { (*s - max).exp() } else { 0.0 };
                total += *s;
            }
            row.mapv_inplace(|e| e / total);
        }
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }

    let (mut drop_attn, mut drop_ffn) = (None, None);
    let mut attn = linear(&context.view(), &layer.wo, &layer.bo);
    let mut rng = dropout;
    if let Some((p, r)) = rng.as_mut() {
        let m = dropout_mask(*r, (len, d), *p);
        attn *= &m;
        drop_attn = Some(m);
    }
    attn += &x;
    let (y1, ln1) = layer_norm(&attn, &layer.ln1_gamma, &layer.ln1_beta);

    let pre_act = linear(&y1.view(), &layer.w1, &layer.b1);
    let act = pre_act.mapv(gelu);
    let mut ffn = linear(&act.view(), &layer.w2, &layer.b2);
    if let Some((p, r)) = rng.as_mut() {
        let m = dropout_mask(*r, (len, d), *p);
        ffn *= &m;
        drop_ffn = Some(m);
    }
    ffn += &y1;
    let (out, ln2) = layer_norm(&ffn, &layer.ln2_gamma, &layer.ln2_beta);

    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        probs,
        context,
        drop_attn,
        ln1,
        y1,
        pre_act,
        act,
        drop_ffn,
        ln2,
    };
    (out, cache)
}

fn layer_backward(
    layer: &LayerParams,
    cache: &LayerCache,
    dout: &Array2<f64>,
    n_heads: usize,
    g: &mut LayerParams,
) -> Array2<f64> {
    let d = dout.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dffn_res = layer_norm_backward(&cache.ln2, &layer.ln2_gamma, dout, &mut g.ln2_gamma, &mut g.ln2_beta);
    let mut dffn = dffn_res.clone();
    if let Some(m) = &cache.drop_ffn {
        dffn *= m;
    }
    let mut dact = linear_backward(&cache.act.view(), &layer.w2, &dffn, &mut g.w2, &mut g.b2);
    ndarray::Zip::from(&mut dact)
        .and(&cache.pre_act)
        .for_each(|da, &z| *da *= gelu_grad(z));
    let mut dy1 = linear_backward(&cache.y1.view(), &layer.w1, &dact, &mut g.w1, &mut g.b1);
    dy1 += &dffn_res;

    let dattn_res = layer_norm_backward(&cache.ln1, &layer.ln1_gamma, &dy1, &mut g.ln1_gamma, &mut g.ln1_beta);
    let mut dattn = dattn_res.clone();
    if let Some(m) = &cache.drop_attn {
        dattn *= m;
    }
    let dcontext = linear_backward(&cache.context.view(), &layer.wo, &dattn, &mut g.wo, &mut g.bo);

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &cache.probs[h];
        let dctx = dcontext.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&dctx));
        let mut dscores = dctx.dot(&cache.v.slice(cols).t());
        for (mut ds, pr) in dscores.rows_mut().into_iter().zip(p.rows()) {
            let dot: f64 = ds.iter().zip(pr).map(|(a, b)| a * b).sum();
            ndarray::Zip::from(&mut ds).and(&pr).for_each(|a, &b| *a = b * (*a - dot) * scale);
        }
        dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
    }
    let x = cache.input.view();
    let mut dx = dattn_res;
    dx += &linear_backward(&x, &layer.wq, &dq, &mut g.wq, &mut g.bq);
    dx += &linear_backward(&x, &layer.wk, &dk, &mut g.wk, &mut g.bk);
    dx += &linear_backward(&x, &layer.wv, &dv, &mut g.wv, &mut g.bv);
    dx
}

/// Runs the encoder and returns the `[CLS]` representation together with
/// the activations needed by [`encoder_backward`]. Dropout is applied only
/// when `dropout_rng` is given and the configured rate is positive.
pub fn encoder_forward(
    seq: &InputSequence,
    params: &EncoderParams,
    config: &EncoderConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Array1<f64>, EncoderCache)> {
    let mut x = embed(seq, params)?;
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut rng = dropout_rng.filter(|_| config.dropout > 0.0);
    for layer in &params.layers {
        let drop = rng.as_deref_mut().map(|r| (config.dropout, r));
        let (out, cache) = layer_forward(layer, x, &seq.attention_mask, config.n_heads, drop);
        layers.push(cache);
        x = out;
    }
    let r = x.row(0).to_owned();
    let (len, dim) = x.dim();
    Ok((
        r,
        EncoderCache {
            seq: seq.clone(),
            layers,
            len,
            dim,
        },
    ))
}

/// Accumulates parameter gradients for an upstream gradient on the `[CLS]`
/// representation.
pub fn encoder_backward(params: &EncoderParams, config: &EncoderConfig, cache: &EncoderCache, dr: &Array1<f64>, grads: &mut EncoderParams) {
    let mut dx = Array2::zeros((cache.len, cache.dim));
    dx.row_mut(0).assign(dr);
    for ((layer, lc), g) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        dx = layer_backward(layer, lc, &dx, config.n_heads, g);
    }
    embed_backward(&cache.seq, &dx, grads);
}

/// Inference-mode patient representation (no dropout).
pub fn encode(seq: &InputSequence, params: &EncoderParams, config: &EncoderConfig) -> Result<Array1<f64>> {
    encoder_forward(seq, params, config, None).map(|(r, _)| r)
}

/// Hidden states for every position (inference mode); used to inspect
/// padded outputs.
pub fn encode_all(seq: &InputSequence, params: &EncoderParams, config: &EncoderConfig) -> Result<Array2<f64>> {
    let mut x = embed(seq, params)?;
    for layer in &params.layers {
        x = layer_forward::<ChaCha8Rng>(layer, x, &seq.attention_mask, config.n_heads, None).0;
    }
    Ok(x)
}
