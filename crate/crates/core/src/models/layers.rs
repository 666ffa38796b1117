//! Building blocks shared by the components.

use std::f64::consts::PI;

use super::{Dims, ModelConfig};
use crate::autodiff::{log_sum_exp, Session, Tape, Var};
use crate::error::{Error, Result};
use crate::world::text::{PAD, SOS};
use crate::world::{Image, SpeechSeq, TextSeq};

/// Sinusoids of `p` with periods 4, 8, 16, ...
pub(crate) fn pos_features(p: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let a = 2.0 * PI * p / (4.0 * f64::from(1u32 << k));
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

/// Character position that frame `t` belongs to, centred on the character.
pub(crate) fn frame_position(t: usize, frames_per_char: usize) -> f64 {
    (t as f64 + 0.5) / frames_per_char as f64 - 0.5
}

pub(crate) fn pos_table(positions: impl Iterator<Item = f64>, dim: usize) -> (usize, Vec<f64>) {
    let mut rows = 0;
    let mut out = Vec::new();
    for p in positions {
        out.extend(pos_features(p, dim));
        rows += 1;
    }
    (rows, out)
}

/// `x W + b`
pub(crate) fn affine(t: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = t.matmul(x, w)?;
    t.add(y, b)
}

/// Row-wise log-softmax of a `1 x V` logits node, computed off-tape.
pub(crate) fn log_probs(t: &Tape, logits: Var) -> Vec<f64> {
    let row = t.value(logits);
    let lse = log_sum_exp(row);
    row.iter().map(|v| v - lse).collect()
}

/// Encoder output: attention keys double as values.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Encoded {
    pub keys: Var,
}

/// Bidirectional tanh RNN over 3-frame windows, with position features
/// appended to every state.
pub(crate) fn encode_speech(s: &mut Session, prefix: &str, x: &SpeechSeq, dims: &Dims, cfg: &ModelConfig) -> Result<Encoded> {
    let n = x.num_frames();
    let f = x.frame_dim();
    if n == 0 {
        return Err(Error::data("empty speech input"));
    }
    if f != dims.frame_dim {
        return Err(Error::shape("encode_speech", format!("frame width {f}, model expects {}", dims.frame_dim)));
    }
    let mut win = Vec::with_capacity(n * 3 * f);
    for t in 0..n {
        for u in [t.wrapping_sub(1), t, t + 1] {
            if u < n {
                win.extend_from_slice(x.frame(u));
            } else {
                win.extend(std::iter::repeat_n(0.0, f));
            }
        }
    }
    let input = s.constant(n, 3 * f, win)?;
    let mut dirs = Vec::with_capacity(2);
    for dir in ["f", "b"] {
        let w = s.p(prefix, &format!("w_{dir}"))?;
        let u = s.p(prefix, &format!("u_{dir}"))?;
        let b = s.p(prefix, &format!("b_{dir}"))?;
        let proj = affine(s, input, w, b)?;
        let order: Vec<usize> = if dir == "f" { (0..n).collect() } else { (0..n).rev().collect() };
        let mut states = vec![None; n];
        let mut prev: Option<Var> = None;
        for t in order {
            let mut a = s.slice_rows(proj, t, t + 1)?;
            if let Some(h) = prev {
                let r = s.matmul(h, u)?;
                a = s.add(a, r)?;
            }
            let h = s.tanh(a);
            states[t] = Some(h);
            prev = Some(h);
        }
        let states: Vec<Var> = states.into_iter().map(|h| h.expect("every frame visited")).collect();
        dirs.push(s.concat_rows(&states)?);
    }
    let (rows, pos) = pos_table((0..n).map(|t| frame_position(t, dims.frames_per_char)), cfg.pos_dim);
    let pos = s.constant(rows, cfg.pos_dim, pos)?;
    let keys = s.concat_cols(&[dirs[0], dirs[1], pos])?;
    Ok(Encoded { keys })
}

/// One-hot row and column of each grid cell.
pub(crate) fn grid_features(grid: usize) -> Vec<f64> {
    let mut out = vec![0.0; grid * grid * 2 * grid];
    for j in 0..grid * grid {
        let row = &mut out[j * 2 * grid..(j + 1) * 2 * grid];
        row[j / grid] = 1.0;
        row[grid + j % grid] = 1.0;
    }
    out
}

/// Per-patch affine + residual layer, with grid features appended.
pub(crate) fn encode_image(s: &mut Session, prefix: &str, z: &Image, dims: &Dims) -> Result<Encoded> {
    let (h, w, c) = z.dims();
    if (h, w, c) != (dims.image_size, dims.image_size, dims.channels) {
        return Err(Error::shape(
            "encode_image",
            format!("{h}x{w}x{c} image, model expects {0}x{0}x{1}", dims.image_size, dims.channels),
        ));
    }
    let m = dims.regions();
    let patches = s.constant(m, dims.patch_len(), z.patches(dims.grid))?;
    let (w1, b1) = (s.p(prefix, "w1")?, s.p(prefix, "b1")?);
    let (w2, b2) = (s.p(prefix, "w2")?, s.p(prefix, "b2")?);
    let a = affine(s, patches, w1, b1)?;
    let h1 = s.tanh(a);
    let a = affine(s, h1, w2, b2)?;
    let h2 = s.tanh(a);
    let r = s.add(h1, h2)?;
    let g = s.constant(m, 2 * dims.grid, grid_features(dims.grid))?;
    let keys = s.concat_cols(&[r, g])?;
    Ok(Encoded { keys })
}

/// Encodes text with a width-3 window over character embeddings, with
/// position features appended.
pub(crate) fn encode_text(s: &mut Session, prefix: &str, y: &TextSeq, cfg: &ModelConfig) -> Result<Encoded> {
    let ids = y.tokens();
    let n = ids.len();
    let prev: Vec<usize> = std::iter::once(PAD).chain(ids[..n - 1].iter().copied()).collect();
    let next: Vec<usize> = ids[1..].iter().copied().chain(std::iter::once(PAD)).collect();
    let emb = s.p(prefix, "emb")?;
    let (w, b) = (s.p(prefix, "w")?, s.p(prefix, "b")?);
    let ep = s.embedding(emb, &prev)?;
    let ec = s.embedding(emb, ids)?;
    let en = s.embedding(emb, &next)?;
    let window = s.concat_cols(&[ep, ec, en])?;
    let a = affine(s, window, w, b)?;
    let h = s.tanh(a);
    let (rows, pos) = pos_table((0..n).map(|i| i as f64), cfg.pos_dim);
    let pos = s.constant(rows, cfg.pos_dim, pos)?;
    let keys = s.concat_cols(&[h, pos])?;
    Ok(Encoded { keys })
}

/// Recurrent state of a text decoder: hidden state and previous context.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DecState {
    pub h: Var,
    pub ctx: Var,
}

/// Input-feeding tanh RNN decoder with dot-product attention.
pub(crate) struct TextDecoder {
    emb: Var,
    w_s: Var,
    b_s: Var,
    w_q: Var,
    w_o: Var,
    b_o: Var,
    w_out: Var,
    b_out: Var,
    hidden: usize,
    key_dim: usize,
    pos_dim: usize,
}

impl TextDecoder {
    pub(crate) fn bind(s: &mut Session, prefix: &str, key_dim: usize, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            emb: s.p(prefix, "emb")?,
            w_s: s.p(prefix, "w_s")?,
            b_s: s.p(prefix, "b_s")?,
            w_q: s.p(prefix, "w_q")?,
            w_o: s.p(prefix, "w_o")?,
            b_o: s.p(prefix, "b_o")?,
            w_out: s.p(prefix, "w_out")?,
            b_out: s.p(prefix, "b_out")?,
            hidden: cfg.hidden,
            key_dim,
            pos_dim: cfg.pos_dim,
        })
    }

    pub(crate) fn start(&self, t: &mut Tape, enc: &Encoded) -> Result<DecState> {
        if t.shape(enc.keys).1 != self.key_dim {
            return Err(Error::shape(
                "decoder",
                format!("keys of width {}, decoder expects {}", t.shape(enc.keys).1, self.key_dim),
            ));
        }
        Ok(DecState {
            h: t.zeros(1, self.hidden),
            ctx: t.zeros(1, self.key_dim),
        })
    }

    /// Consumes `token` at output position `i`; returns `1 x V` logits.
    pub(crate) fn step(&self, t: &mut Tape, enc: &Encoded, st: &DecState, token: usize, i: usize) -> Result<(Var, DecState)> {
        let e = t.embedding(self.emb, &[token])?;
        let inp = t.concat_cols(&[e, st.ctx, st.h])?;
        let a = affine(t, inp, self.w_s, self.b_s)?;
        let h = t.tanh(a);
        let pos = t.constant(1, self.pos_dim, pos_features(i as f64, self.pos_dim))?;
        let qin = t.concat_cols(&[h, pos])?;
        let q = t.matmul(qin, self.w_q)?;
        let scores = t.matmul_nt(q, enc.keys)?;
        let alpha = t.softmax(scores);
        let ctx = t.matmul(alpha, enc.keys)?;
        let oin = t.concat_cols(&[h, ctx])?;
        let a = affine(t, oin, self.w_o, self.b_o)?;
        let o = t.tanh(a);
        let logits = affine(t, o, self.w_out, self.b_out)?;
        Ok((logits, DecState { h, ctx }))
    }

    /// Teacher-forced `L x V` logits for every token of `y`.
    pub(crate) fn teacher_forced(&self, t: &mut Tape, enc: &Encoded, y: &TextSeq) -> Result<Var> {
        let mut st = self.start(t, enc)?;
        let mut prev = SOS;
        let mut rows = Vec::with_capacity(y.len());
        for (i, &tok) in y.tokens().iter().enumerate() {
            let (logits, next) = self.step(t, enc, &st, prev, i)?;
            rows.push(logits);
            st = next;
            prev = tok;
        }
        t.concat_rows(&rows)
    }
}
