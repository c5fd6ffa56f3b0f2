//! Desk-scale query composer.
//!
//! Three parts share one token table:
//!
//! * text encoder: mean of token embeddings, affine, tanh
//! * composer: `tanh(W_c [tanh(W_img x + b_img); text] + b_c)`, the query `e_q`
//! * decoder: `W_out tanh(W_h [q; E[prev]] + b_h) + b_out`, one conditional
//!   per position given the query and the previous token
//!
//! Gallery images go through the same `tanh(W_img x + b_img)` projection as
//! reference images so queries and targets live in one space.
//!
//! All arithmetic is f64. Vectors are rows: an affine map is `x W + b` with
//! `W` stored `in x out`, row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{TokenSeq, EOS};
use crate::error::{Error, Result};
use crate::store::dot;

pub const DEFAULT_TAU: f64 = 0.07;
const INIT_SCALE: f32 = 0.1;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Output vocabulary `V`. Index `V` is the begin-of-sequence input token.
    pub vocab: usize,
    pub token_dims: usize,
    pub image_dims: usize,
    pub embed_dims: usize,
    pub hidden_dims: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            vocab: crate::dataset::DEFAULT_VOCAB,
            token_dims: 32,
            image_dims: 64,
            embed_dims: 32,
            hidden_dims: 32,
        }
    }
}

impl ModelDims {
    pub fn bos(&self) -> u32 {
        self.vocab as u32
    }

    fn validate(&self) -> Result<()> {
        if self.vocab < 2
            || self.token_dims == 0
            || self.image_dims == 0
            || self.embed_dims == 0
            || self.hidden_dims == 0
        {
            return Err(Error::InvalidArgument(format!("invalid model dims {self:?}")));
        }
        Ok(())
    }

    /// Shapes in canonical parameter order (see [`PARAM_NAMES`]).
    pub fn shapes(&self) -> [(usize, usize); 11] {
        let Self {
            vocab: v,
            token_dims: dt,
            image_dims: di,
            embed_dims: d,
            hidden_dims: h,
        } = *self;
        [
            (v + 1, dt),
            (dt, d),
            (1, d),
            (di, d),
            (1, d),
            (2 * d, d),
            (1, d),
            (d + dt, h),
            (1, h),
            (h, v),
            (1, v),
        ]
    }
}

pub const PARAM_NAMES: [&str; 11] = [
    "tok", "txt_w", "txt_b", "img_w", "img_b", "comp_w", "comp_b", "dec_w", "dec_b", "out_w",
    "out_b",
];

/// One tensor per trainable parameter. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tok: Tensor,
    pub txt_w: Tensor,
    pub txt_b: Tensor,
    pub img_w: Tensor,
    pub img_b: Tensor,
    pub comp_w: Tensor,
    pub comp_b: Tensor,
    pub dec_w: Tensor,
    pub dec_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

pub type GradientSet = Weights;

impl Weights {
    pub fn zeros(dims: &ModelDims) -> Self {
        let s = dims.shapes();
        let t = |i: usize| Tensor::zeros(s[i].0, s[i].1);
        Self {
            tok: t(0),
            txt_w: t(1),
            txt_b: t(2),
            img_w: t(3),
            img_b: t(4),
            comp_w: t(5),
            comp_b: t(6),
            dec_w: t(7),
            dec_b: t(8),
            out_w: t(9),
            out_b: t(10),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 11] {
        [
            &self.tok,
            &self.txt_w,
            &self.txt_b,
            &self.img_w,
            &self.img_b,
            &self.comp_w,
            &self.comp_b,
            &self.dec_w,
            &self.dec_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 11] {
        [
            &mut self.tok,
            &mut self.txt_w,
            &mut self.txt_b,
            &mut self.img_w,
            &mut self.img_b,
            &mut self.comp_w,
            &mut self.comp_b,
            &mut self.dec_w,
            &mut self.dec_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn shapes(&self) -> [(usize, usize); 11] {
        self.tensors().map(Tensor::shape)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= c);
        }
    }

    /// `self += c * other`, shapes assumed equal.
    pub fn add_scaled(&mut self, other: &Weights, c: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += c * y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub dims: ModelDims,
    /// Softmax temperature for the contrastive loss; fixed during training.
    pub tau: f64,
    pub w: Weights,
}

impl ParamSet {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            tau: DEFAULT_TAU,
            w: Weights::zeros(&dims),
        })
    }

    /// Uniform in `[-0.1, 0.1]`, drawn as f32 so values survive a checkpoint
    /// roundtrip bit for bit.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.w.tensors_mut() {
            for v in &mut t.data {
                *v = f64::from(rng.random_range(-INIT_SCALE..=INIT_SCALE));
            }
        }
        Ok(p)
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    debug_assert_eq!(x.len(), w.rows);
    let mut out = b.data.clone();
    for (xi, row) in x.iter().zip(w.data.chunks_exact(w.cols)) {
        if *xi != 0.0 {
            for (o, wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
    }
    out
}

/// Accumulates the gradients of `y = x W + b` given `dy`; returns `dx` when
/// requested.
fn affine_backward(
    x: &[f64],
    w: &Tensor,
    dy: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
    want_dx: bool,
) -> Vec<f64> {
    for (d, g) in db.data.iter_mut().zip(dy) {
        *d += g;
    }
    for (xi, drow) in x.iter().zip(dw.data.chunks_exact_mut(w.cols)) {
        if *xi != 0.0 {
            for (d, g) in drow.iter_mut().zip(dy) {
                *d += xi * g;
            }
        }
    }
    if !want_dx {
        return Vec::new();
    }
    w.data.chunks_exact(w.cols).map(|row| dot(row, dy)).collect()
}

fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// `dy * (1 - y^2)` for `y = tanh(x)`.
fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, g)| g * (1.0 - y * y)).collect()
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch {
            context,
            expected,
            actual,
        })
    }
}

/// Cached activations of one text encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTrace {
    pub tokens: Vec<u32>,
    pub pooled: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn encode_text_traced(p: &ParamSet, toks: &TokenSeq) -> Result<TextTrace> {
    if toks.is_empty() {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    let v = p.dims.vocab;
    let mut pooled = vec![0.0; p.dims.token_dims];
    for &t in toks.as_slice() {
        if t as usize >= v {
            return Err(Error::TokenOutOfRange {
                token: t as usize,
                vocab: v,
            });
        }
        for (a, e) in pooled.iter_mut().zip(p.w.tok.row(t as usize)) {
            *a += e;
        }
    }
    let n = toks.len() as f64;
    pooled.iter_mut().for_each(|a| *a /= n);
    let mut out = affine(&pooled, &p.w.txt_w, &p.w.txt_b);
    tanh_in_place(&mut out);
    Ok(TextTrace {
        tokens: toks.0.clone(),
        pooled,
        out,
    })
}

/// Compresses a token sequence into one `embed_dims` vector.
pub fn encode_text(p: &ParamSet, toks: &TokenSeq) -> Result<Vec<f64>> {
    Ok(encode_text_traced(p, toks)?.out)
}

/// The shared image projection `tanh(x W_img + b_img)`.
pub fn project_image(p: &ParamSet, img: &[f64]) -> Result<Vec<f64>> {
    check_len("image vector", p.dims.image_dims, img.len())?;
    let mut u = affine(img, &p.w.img_w, &p.w.img_b);
    tanh_in_place(&mut u);
    Ok(u)
}

/// Composes the query embedding from a reference image and an encoded text.
pub fn compose_query(p: &ParamSet, img: &[f64], txt: &[f64]) -> Result<Vec<f64>> {
    check_len("text vector", p.dims.embed_dims, txt.len())?;
    let u = project_image(p, img)?;
    Ok(compose_from_parts(p, &u, txt))
}

fn compose_from_parts(p: &ParamSet, u: &[f64], txt: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = u.iter().chain(txt).copied().collect();
    let mut q = affine(&z, &p.w.comp_w, &p.w.comp_b);
    tanh_in_place(&mut q);
    q
}

fn decoder_hidden(p: &ParamSet, q: &[f64], prev: u32) -> Result<Vec<f64>> {
    if prev as usize > p.dims.vocab {
        return Err(Error::TokenOutOfRange {
            token: prev as usize,
            vocab: p.dims.vocab,
        });
    }
    let x: Vec<f64> = q.iter().chain(p.w.tok.row(prev as usize)).copied().collect();
    let mut a = affine(&x, &p.w.dec_w, &p.w.dec_b);
    tanh_in_place(&mut a);
    Ok(a)
}

/// Logits over the `V` output tokens given the query and previous token.
/// `prev` may be any token below `V` or the begin index `V`.
pub fn decode_step(p: &ParamSet, q: &[f64], prev: u32) -> Result<Vec<f64>> {
    check_len("query vector", p.dims.embed_dims, q.len())?;
    let a = decoder_hidden(p, q, prev)?;
    Ok(affine(&a, &p.w.out_w, &p.w.out_b))
}

/// Argmax decoding (ties to the lowest index) from the begin token. The
/// returned sequence includes the terminating [`EOS`] when one is emitted.
pub fn greedy_decode(p: &ParamSet, q: &[f64], max_len: usize) -> Result<TokenSeq> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut out = Vec::new();
    let mut prev = p.dims.bos();
    while out.len() < max_len {
        let logits = decode_step(p, q, prev)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        let tok = best as u32;
        out.push(tok);
        if tok == EOS {
            break;
        }
        prev = tok;
    }
    Ok(TokenSeq(out))
}

/// One training example for the multimodal stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub reference: Vec<f64>,
    pub modification: TokenSeq,
    pub target: Vec<f64>,
    /// Supervision text; the decoder is trained to emit these tokens and then
    /// [`EOS`]. `None` skips the decoder entirely.
    pub supervision: Option<TokenSeq>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemTrace {
    text: TextTrace,
    reference: Vec<f64>,
    target: Vec<f64>,
    ref_proj: Vec<f64>,
    /// Decoder inputs (`[BOS, y_1, ..]`) and per-position hidden states.
    dec_inputs: Vec<u32>,
    dec_hidden: Vec<Vec<f64>>,
}

/// Activations kept by [`forward_batch`] for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub(crate) items: Vec<ItemTrace>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Query embeddings, one row per example.
    pub queries: Vec<Vec<f64>>,
    /// Projected target embeddings, one row per example.
    pub targets: Vec<Vec<f64>>,
    /// Teacher-forced logits per example and position.
    pub logits: Vec<Vec<Vec<f64>>>,
    /// Token the decoder should emit at each position.
    pub decoder_targets: Vec<Vec<u32>>,
    pub trace: ForwardTrace,
}

pub fn forward_batch(p: &ParamSet, batch: &[Example]) -> Result<ForwardOutput> {
    forward(p, batch, true)
}

/// [`forward_batch`] without materializing logits: `logits` holds one empty
/// list per example. Enough for [`decoder_cross_entropy`] and backprop.
pub fn forward_batch_hidden(p: &ParamSet, batch: &[Example]) -> Result<ForwardOutput> {
    forward(p, batch, false)
}

fn forward(p: &ParamSet, batch: &[Example], with_logits: bool) -> Result<ForwardOutput> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut out = ForwardOutput {
        queries: Vec::with_capacity(batch.len()),
        targets: Vec::with_capacity(batch.len()),
        logits: Vec::with_capacity(batch.len()),
        decoder_targets: Vec::with_capacity(batch.len()),
        trace: ForwardTrace {
            items: Vec::with_capacity(batch.len()),
        },
    };
    for ex in batch {
        let text = encode_text_traced(p, &ex.modification)?;
        let ref_proj = project_image(p, &ex.reference)?;
        let target = project_image(p, &ex.target)?;
        let q = compose_from_parts(p, &ref_proj, &text.out);

        let mut dec_inputs = Vec::new();
        let mut dec_targets = Vec::new();
        let mut dec_hidden = Vec::new();
        let mut logits = Vec::new();
        if let Some(sup) = &ex.supervision {
            dec_inputs.push(p.dims.bos());
            for &t in sup.as_slice() {
                if t as usize >= p.dims.vocab {
                    return Err(Error::TokenOutOfRange {
                        token: t as usize,
                        vocab: p.dims.vocab,
                    });
                }
                dec_targets.push(t);
                dec_inputs.push(t);
            }
            dec_targets.push(EOS);
            for &prev in &dec_inputs {
                let a = decoder_hidden(p, &q, prev)?;
                if with_logits {
                    logits.push(affine(&a, &p.w.out_w, &p.w.out_b));
                }
                dec_hidden.push(a);
            }
        }

        out.queries.push(q);
        out.targets.push(target);
        out.logits.push(logits);
        out.decoder_targets.push(dec_targets);
        out.trace.items.push(ItemTrace {
            text,
            reference: ex.reference.clone(),
            target: ex.target.clone(),
            ref_proj,
            dec_inputs,
            dec_hidden,
        });
    }
    Ok(out)
}

/// Backpropagates upstream gradients through the text encoder into `grads`.
pub fn backprop_text(p: &ParamSet, trace: &TextTrace, d_out: &[f64], grads: &mut GradientSet) {
    let d_pre = tanh_backward(&trace.out, d_out);
    let d_pooled = affine_backward(
        &trace.pooled,
        &p.w.txt_w,
        &d_pre,
        &mut grads.txt_w,
        &mut grads.txt_b,
        true,
    );
    let n = trace.tokens.len() as f64;
    for &t in &trace.tokens {
        for (g, d) in grads.tok.row_mut(t as usize).iter_mut().zip(&d_pooled) {
            *g += d / n;
        }
    }
}

/// Chain rule through [`forward_batch`].
///
/// `d_queries`/`d_targets` are gradients w.r.t. the query and projected
/// target rows; `d_logits` matches the shape of [`ForwardOutput::logits`].
pub fn backprop_batch(
    p: &ParamSet,
    fwd: &ForwardOutput,
    d_queries: &[Vec<f64>],
    d_targets: &[Vec<f64>],
    d_logits: &[Vec<Vec<f64>>],
) -> Result<GradientSet> {
    let n = fwd.trace.len();
    check_len("logit gradients", n, d_logits.len())?;
    let mut g = GradientSet::zeros(&p.dims);
    let mut d_hidden = Vec::with_capacity(n);
    for (item, dl) in fwd.trace.items.iter().zip(d_logits) {
        check_len("decoder positions", item.dec_hidden.len(), dl.len())?;
        d_hidden.push(
            item.dec_hidden
                .iter()
                .zip(dl)
                .map(|(a, d)| affine_backward(a, &p.w.out_w, d, &mut g.out_w, &mut g.out_b, true))
                .collect(),
        );
    }
    backprop_from_hidden(p, fwd, d_queries, d_targets, &d_hidden, g)
}

/// Chain rule through everything below the output layer. `d_hidden` holds
/// gradients w.r.t. each decoder hidden state; contributions are added to
/// `g`, which already carries the output-layer gradients.
pub fn backprop_from_hidden(
    p: &ParamSet,
    fwd: &ForwardOutput,
    d_queries: &[Vec<f64>],
    d_targets: &[Vec<f64>],
    d_hidden: &[Vec<Vec<f64>>],
    mut g: GradientSet,
) -> Result<GradientSet> {
    let n = fwd.trace.len();
    check_len("query gradients", n, d_queries.len())?;
    check_len("target gradients", n, d_targets.len())?;
    check_len("hidden gradients", n, d_hidden.len())?;
    let d = p.dims.embed_dims;
    for (j, item) in fwd.trace.items.iter().enumerate() {
        let q = &fwd.queries[j];
        let mut dq = d_queries[j].clone();

        check_len("decoder positions", item.dec_hidden.len(), d_hidden[j].len())?;
        for ((a, &prev), da) in item.dec_hidden.iter().zip(&item.dec_inputs).zip(&d_hidden[j]) {
            let d_pre = tanh_backward(a, da);
            let x: Vec<f64> = q.iter().chain(p.w.tok.row(prev as usize)).copied().collect();
            let dx = affine_backward(&x, &p.w.dec_w, &d_pre, &mut g.dec_w, &mut g.dec_b, true);
            for (acc, v) in dq.iter_mut().zip(&dx[..d]) {
                *acc += v;
            }
            for (acc, v) in g.tok.row_mut(prev as usize).iter_mut().zip(&dx[d..]) {
                *acc += v;
            }
        }

        let d_pre = tanh_backward(q, &dq);
        let z: Vec<f64> = item.ref_proj.iter().chain(&item.text.out).copied().collect();
        let dz = affine_backward(&z, &p.w.comp_w, &d_pre, &mut g.comp_w, &mut g.comp_b, true);

        let d_ref = tanh_backward(&item.ref_proj, &dz[..d]);
        affine_backward(&item.reference, &p.w.img_w, &d_ref, &mut g.img_w, &mut g.img_b, false);
        backprop_text(p, &item.text, &dz[d..], &mut g);

        let d_tgt = tanh_backward(&fwd.targets[j], &d_targets[j]);
        affine_backward(&item.target, &p.w.img_w, &d_tgt, &mut g.img_w, &mut g.img_b, false);
    }
    Ok(g)
}

const POSITION_CHUNK: usize = 32;
const VOCAB_BLOCK: usize = 512;

/// Mean token cross-entropy of the decoder over every position in `fwd`,
/// computed from the hidden states without keeping all logits.
///
/// Adds `weight` times the gradient w.r.t. `out_w`/`out_b` to `g` and returns
/// `(loss, d_hidden)`, with `d_hidden` already scaled by `weight`. Positions
/// are processed in chunks and the vocabulary in column blocks so the output
/// matrix stays in cache. With `weight == 0` only the loss is computed and
/// `d_hidden` is all zeros.
pub fn decoder_cross_entropy(
    p: &ParamSet,
    fwd: &ForwardOutput,
    weight: f64,
    g: &mut GradientSet,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    let h = p.dims.hidden_dims;
    let v = p.dims.vocab;
    let positions: Vec<(usize, usize)> = fwd
        .trace
        .items
        .iter()
        .enumerate()
        .flat_map(|(j, it)| (0..it.dec_hidden.len()).map(move |t| (j, t)))
        .collect();
    if positions.is_empty() {
        return Err(Error::InvalidArgument("no token positions".into()));
    }
    let scale = weight / positions.len() as f64;
    let mut d_hidden: Vec<Vec<Vec<f64>>> = fwd
        .trace
        .items
        .iter()
        .map(|it| vec![vec![0.0; h]; it.dec_hidden.len()])
        .collect();
    let mut total = 0.0;
    let mut buf = vec![0.0; POSITION_CHUNK.min(positions.len()) * v];
    for chunk in positions.chunks(POSITION_CHUNK) {
        let rows = &mut buf[..chunk.len() * v];
        let hidden: Vec<&[f64]> = chunk
            .iter()
            .map(|&(j, t)| fwd.trace.items[j].dec_hidden[t].as_slice())
            .collect();
        let targets: Vec<usize> = chunk
            .iter()
            .map(|&(j, t)| fwd.decoder_targets[j][t] as usize)
            .collect();
        if let Some(&y) = targets.iter().find(|&&y| y >= v) {
            return Err(Error::TokenOutOfRange { token: y, vocab: v });
        }

        for c0 in (0..v).step_by(VOCAB_BLOCK) {
            let c1 = (c0 + VOCAB_BLOCK).min(v);
            for (row, a) in rows.chunks_exact_mut(v).zip(&hidden) {
                let out = &mut row[c0..c1];
                out.copy_from_slice(&p.w.out_b.data[c0..c1]);
                let row_of = |k: usize| &p.w.out_w.data[k * v + c0..k * v + c1];
                let mut k = 0;
                while k + 4 <= h {
                    let (w0, w1, w2, w3) = (row_of(k), row_of(k + 1), row_of(k + 2), row_of(k + 3));
                    let (a0, a1, a2, a3) = (a[k], a[k + 1], a[k + 2], a[k + 3]);
                    let ws = w0.iter().zip(w1).zip(w2.iter().zip(w3));
                    for (o, ((x0, x1), (x2, x3))) in out.iter_mut().zip(ws) {
                        *o += (a0 * x0 + a1 * x1) + (a2 * x2 + a3 * x3);
                    }
                    k += 4;
                }
                for k in k..h {
                    let ak = a[k];
                    for (o, wk) in out.iter_mut().zip(row_of(k)) {
                        *o += ak * wk;
                    }
                }
            }
        }

        for (row, &y) in rows.chunks_exact_mut(v).zip(&targets) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ly = row[y];
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            total += (m - ly) + z.ln();
            let c = scale / z;
            row.iter_mut().for_each(|x| *x *= c);
            row[y] -= scale;
        }
        if weight == 0.0 {
            continue;
        }

        for c0 in (0..v).step_by(VOCAB_BLOCK) {
            let c1 = (c0 + VOCAB_BLOCK).min(v);
            for (row, &(j, t)) in rows.chunks_exact(v).zip(chunk) {
                let dl = &row[c0..c1];
                for (gb, d) in g.out_b.data[c0..c1].iter_mut().zip(dl) {
                    *gb += d;
                }
                let da = &mut d_hidden[j][t];
                for (k, dk) in da.iter_mut().enumerate() {
                    *dk += dot(&p.w.out_w.data[k * v + c0..k * v + c1], dl);
                }
            }
            // four positions per sweep over each gradient row
            let dls: Vec<&[f64]> = rows.chunks_exact(v).map(|r| &r[c0..c1]).collect();
            #[allow(clippy::needless_range_loop)]
            for k in 0..h {
                let gw = &mut g.out_w.data[k * v + c0..k * v + c1];
                let mut c = 0;
                while c + 4 <= dls.len() {
                    let (d0, d1, d2, d3) = (dls[c], dls[c + 1], dls[c + 2], dls[c + 3]);
                    let (a0, a1, a2, a3) = (hidden[c][k], hidden[c + 1][k], hidden[c + 2][k], hidden[c + 3][k]);
                    let ds = d0.iter().zip(d1).zip(d2.iter().zip(d3));
                    for (gk, ((x0, x1), (x2, x3))) in gw.iter_mut().zip(ds) {
                        *gk += (a0 * x0 + a1 * x1) + (a2 * x2 + a3 * x3);
                    }
                    c += 4;
                }
                for c in c..dls.len() {
                    let ak = hidden[c][k];
                    for (gk, d) in gw.iter_mut().zip(dls[c]) {
                        *gk += ak * d;
                    }
                }
            }
        }
    }
    Ok((total / positions.len() as f64, d_hidden))
}
