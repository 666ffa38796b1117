//! Text-to-speech: text encoder and an autoregressive attention frame
//! decoder conditioned on a speaker embedding, with a stop-flag head.

use super::layers::{affine, encode_text, frame_position, pos_features, Encoded};
use super::{ComponentKind, ComponentParams};
use crate::autodiff::{sigmoid, Session, Tape, Var};
use crate::error::{Error, Result};
use crate::world::{SpeechSeq, TextSeq};

struct Decoder {
    w_s: Var,
    b_s: Var,
    w_q: Var,
    w_h: Var,
    b_h: Var,
    w_f: Var,
    b_f: Var,
    w_stop: Var,
    b_stop: Var,
    spk: Var,
    enc: Encoded,
    pos_dim: usize,
    frames_per_char: usize,
}

#[derive(Clone, Copy)]
struct State {
    h: Var,
    ctx: Var,
}

impl Decoder {
    fn bind(m: &ComponentParams, s: &mut Session, y: &TextSeq, spk: &[f64]) -> Result<Self> {
        m.expect(ComponentKind::Tts)?;
        if y.is_empty() {
            return Err(Error::data("TTS needs non-empty text"));
        }
        if spk.len() != m.cfg.spk_dim {
            return Err(Error::shape(
                "tts",
                format!("speaker embedding of width {}, expected {}", spk.len(), m.cfg.spk_dim),
            ));
        }
        let enc = encode_text(s, "tts.txt", y, &m.cfg)?;
        let spk = s.constant(1, spk.len(), spk.to_vec())?;
        Ok(Self {
            w_s: s.p("tts", "w_s")?,
            b_s: s.p("tts", "b_s")?,
            w_q: s.p("tts", "w_q")?,
            w_h: s.p("tts", "w_h")?,
            b_h: s.p("tts", "b_h")?,
            w_f: s.p("tts", "w_f")?,
            b_f: s.p("tts", "b_f")?,
            w_stop: s.p("tts", "w_stop")?,
            b_stop: s.p("tts", "b_stop")?,
            spk,
            enc,
            pos_dim: m.cfg.pos_dim,
            frames_per_char: m.dims.frames_per_char,
        })
    }

    fn start(&self, t: &mut Tape, hidden: usize) -> State {
        let kd = t.shape(self.enc.keys).1;
        State {
            h: t.zeros(1, hidden),
            ctx: t.zeros(1, kd),
        }
    }

    /// Predicts frame `i` from the previous frame; returns `(frame, stop logit)`.
    fn step(&self, t: &mut Tape, st: &State, prev: Var, i: usize) -> Result<(Var, Var, State)> {
        let d = self.frames_per_char;
        let pos = t.constant(1, self.pos_dim, pos_features(frame_position(i, d), self.pos_dim))?;
        let mut phase = vec![0.0; d];
        phase[i % d] = 1.0;
        let phase = t.constant(1, d, phase)?;
        let inp = t.concat_cols(&[prev, self.spk, st.ctx, pos, st.h])?;
        let a = affine(t, inp, self.w_s, self.b_s)?;
        let h = t.tanh(a);
        let qin = t.concat_cols(&[h, pos])?;
        let q = t.matmul(qin, self.w_q)?;
        let scores = t.matmul_nt(q, self.enc.keys)?;
        let alpha = t.softmax(scores);
        let ctx = t.matmul(alpha, self.enc.keys)?;
        let hin = t.concat_cols(&[h, ctx, self.spk, phase])?;
        let a = affine(t, hin, self.w_h, self.b_h)?;
        let hid = t.tanh(a);
        let a = affine(t, hid, self.w_f, self.b_f)?;
        let frame = t.tanh(a);
        let sin = t.concat_cols(&[h, ctx, pos])?;
        let stop = affine(t, sin, self.w_stop, self.b_stop)?;
        Ok((frame, stop, State { h, ctx }))
    }
}

/// Teacher-forced frame predictions and stop logits for target `x`.
fn teacher_forced(m: &ComponentParams, s: &mut Session, y: &TextSeq, spk: &[f64], x: &SpeechSeq) -> Result<(Var, Var)> {
    if x.frame_dim() != m.dims.frame_dim {
        return Err(Error::shape("tts", "target frame width differs from the model"));
    }
    let dec = Decoder::bind(m, s, y, spk)?;
    let f = m.dims.frame_dim;
    let mut st = dec.start(&mut s.tape, m.cfg.hidden);
    let mut prev = s.zeros(1, f);
    let (mut frames, mut stops) = (Vec::new(), Vec::new());
    for i in 0..x.num_frames() {
        let (frame, stop, next) = dec.step(&mut s.tape, &st, prev, i)?;
        frames.push(frame);
        stops.push(stop);
        st = next;
        prev = s.constant(1, f, x.frame(i).to_vec())?;
    }
    Ok((s.concat_rows(&frames)?, s.concat_rows(&stops)?))
}

/// Frame MSE plus stop-flag cross-entropy. Teacher forcing runs for exactly
/// the target's length, so the length penalty of the evaluation metric is
/// zero here.
pub fn forward(m: &ComponentParams, s: &mut Session, y: &TextSeq, spk: &[f64], x: &SpeechSeq) -> Result<Var> {
    let (frames, stops) = teacher_forced(m, s, y, spk, x)?;
    let mse = s.mse(frames, x.frames(), None)?;
    let flags: Vec<f64> = x.stop_flags().into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
    let bce = s.bce_with_logits(stops, &flags)?;
    s.add(mse, bce)
}

/// Free-running synthesis until the stop probability exceeds 0.5 or the
/// frame cap is reached.
pub fn decode(m: &ComponentParams, y: &TextSeq, spk: &[f64]) -> Result<SpeechSeq> {
    let mut s = m.inference();
    let dec = Decoder::bind(m, &mut s, y, spk)?;
    let f = m.dims.frame_dim;
    let mut st = dec.start(&mut s.tape, m.cfg.hidden);
    let mut prev = s.zeros(1, f);
    let mut out = Vec::new();
    for i in 0..m.dims.max_frames {
        let (frame, stop, next) = dec.step(&mut s.tape, &st, prev, i)?;
        out.extend_from_slice(s.value(frame));
        st = next;
        prev = frame;
        if sigmoid(s.scalar(stop)) > 0.5 {
            break;
        }
    }
    SpeechSeq::new(out, f, None)
}
