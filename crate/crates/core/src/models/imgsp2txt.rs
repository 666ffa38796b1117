//! Dual-decoder transcriber of speech and/or image input.
//!
//! A speech decoder and an image decoder run side by side; when both
//! modalities are present their per-step distributions are averaged,
//! otherwise only the present decoder is used, through exactly the same code
//! path as a standalone single-decoder model.

use super::asr::{decode_speech, speech_logits, text_loss};
use super::beam::{beam_search, BeamConfig, StepModel};
use super::ic::{decode_image, image_logits};
use super::layers::{encode_image, encode_speech, DecState, Encoded, TextDecoder};
use super::{image_key_dim, speech_key_dim, ComponentKind, ComponentParams, FusedLoss};
use crate::autodiff::{softmax_in_place, Session, Var};
use crate::error::{Error, Result};
use crate::world::{Image, SpeechSeq, TextSeq};

pub(crate) const SP_ENC: &str = "ist.sp_enc";
pub(crate) const SP_DEC: &str = "ist.sp_dec";
pub(crate) const IMG_ENC: &str = "ist.img_enc";
pub(crate) const IMG_DEC: &str = "ist.img_dec";

/// Per-step distributions, each `steps x vocab` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DualDecoderOutput {
    pub vocab: usize,
    pub p_x: Option<Vec<f64>>,
    pub p_z: Option<Vec<f64>>,
    pub fused: Vec<f64>,
}

impl DualDecoderOutput {
    pub fn steps(&self) -> usize {
        self.fused.len() / self.vocab
    }
}

struct Forward {
    loss: Var,
    out: DualDecoderOutput,
    logits_x: Option<Var>,
    logits_z: Option<Var>,
}

fn run(m: &ComponentParams, s: &mut Session, x: Option<&SpeechSeq>, z: Option<&Image>, y: &TextSeq) -> Result<Forward> {
    m.expect(ComponentKind::ImgSp2Txt)?;
    let (d, c) = (&m.dims, &m.cfg);
    let lx = x.map(|x| speech_logits(s, SP_ENC, SP_DEC, d, c, x, y)).transpose()?;
    let lz = z.map(|z| image_logits(s, IMG_ENC, IMG_DEC, d, c, z, y)).transpose()?;
    let vocab = d.vocab;
    let (loss, out) = match (lx, lz) {
        (None, None) => return Err(Error::data("ImgSp2Txt needs speech or an image")),
        (Some(l), None) | (None, Some(l)) => {
            let loss = text_loss(s, l, y)?;
            let p = s.softmax(l);
            let p = s.value(p).to_vec();
            let (p_x, p_z) = if x.is_some() { (Some(p.clone()), None) } else { (None, Some(p.clone())) };
            (loss, DualDecoderOutput { vocab, p_x, p_z, fused: p })
        }
        (Some(a), Some(b)) => {
            let pa = s.softmax(a);
            let pb = s.softmax(b);
            let sum = s.add(pa, pb)?;
            let fused = s.scale(sum, 0.5);
            let loss = match c.fused_loss {
                FusedLoss::Mixture => s.nll_probs(fused, y.tokens(), &vec![false; y.len()])?,
                FusedLoss::MeanOfDecoders => {
                    let la = text_loss(s, a, y)?;
                    let lb = text_loss(s, b, y)?;
                    let both = s.add(la, lb)?;
                    s.scale(both, 0.5)
                }
            };
            let out = DualDecoderOutput {
                vocab,
                p_x: Some(s.value(pa).to_vec()),
                p_z: Some(s.value(pb).to_vec()),
                fused: s.value(fused).to_vec(),
            };
            (loss, out)
        }
    };
    Ok(Forward {
        loss,
        out,
        logits_x: lx,
        logits_z: lz,
    })
}

/// Fused loss and the per-step distributions.
pub fn forward(
    m: &ComponentParams,
    s: &mut Session,
    x: Option<&SpeechSeq>,
    z: Option<&Image>,
    y: &TextSeq,
) -> Result<(Var, DualDecoderOutput)> {
    let f = run(m, s, x, z, y)?;
    Ok((f.loss, f.out))
}

/// Training objective: the fused loss, plus each decoder's own cross-entropy
/// weighted by `single_decoder_weight` when both modalities are present, so
/// that either decoder can transcribe alone.
pub fn train_loss(m: &ComponentParams, s: &mut Session, x: Option<&SpeechSeq>, z: Option<&Image>, y: &TextSeq) -> Result<Var> {
    let f = run(m, s, x, z, y)?;
    let w = m.cfg.single_decoder_weight;
    match (f.logits_x, f.logits_z) {
        (Some(a), Some(b)) if w > 0.0 => {
            let la = text_loss(s, a, y)?;
            let lb = text_loss(s, b, y)?;
            let singles = s.add(la, lb)?;
            let singles = s.scale(singles, w);
            s.add(f.loss, singles)
        }
        _ => Ok(f.loss),
    }
}

pub(crate) struct FusedSteps<'a, 'p> {
    pub s: &'a mut Session<'p>,
    pub dx: TextDecoder,
    pub ex: Encoded,
    pub dz: TextDecoder,
    pub ez: Encoded,
}

impl FusedSteps<'_, '_> {
    pub(crate) fn bind<'a, 'p>(s: &'a mut Session<'p>, m: &ComponentParams, x: &SpeechSeq, z: &Image) -> Result<FusedSteps<'a, 'p>> {
        let ex = encode_speech(s, SP_ENC, x, &m.dims, &m.cfg)?;
        let dx = TextDecoder::bind(s, SP_DEC, speech_key_dim(&m.cfg), &m.cfg)?;
        let ez = encode_image(s, IMG_ENC, z, &m.dims)?;
        let dz = TextDecoder::bind(s, IMG_DEC, image_key_dim(&m.dims, &m.cfg), &m.cfg)?;
        Ok(FusedSteps { s, dx, ex, dz, ez })
    }
}

impl StepModel for FusedSteps<'_, '_> {
    type State = (DecState, DecState);

    fn start(&mut self) -> Result<Self::State> {
        Ok((self.dx.start(&mut self.s.tape, &self.ex)?, self.dz.start(&mut self.s.tape, &self.ez)?))
    }

    fn step(&mut self, st: &Self::State, token: usize, index: usize) -> Result<(Vec<f64>, Self::State)> {
        let (lx, nx) = self.dx.step(&mut self.s.tape, &self.ex, &st.0, token, index)?;
        let (lz, nz) = self.dz.step(&mut self.s.tape, &self.ez, &st.1, token, index)?;
        let mut px = self.s.value(lx).to_vec();
        let mut pz = self.s.value(lz).to_vec();
        softmax_in_place(&mut px);
        softmax_in_place(&mut pz);
        let lp = px.iter().zip(&pz).map(|(a, b)| (0.5 * (a + b)).ln()).collect();
        Ok((lp, (nx, nz)))
    }
}

/// Beam search over the fused distribution, or over the single present
/// decoder.
pub fn decode(m: &ComponentParams, x: Option<&SpeechSeq>, z: Option<&Image>, beam: usize) -> Result<TextSeq> {
    m.expect(ComponentKind::ImgSp2Txt)?;
    let mut s = m.inference();
    let (d, c) = (&m.dims, &m.cfg);
    match (x, z) {
        (None, None) => Err(Error::data("ImgSp2Txt needs speech or an image")),
        (Some(x), None) => decode_speech(&mut s, SP_ENC, SP_DEC, d, c, x, beam),
        (None, Some(z)) => decode_image(&mut s, IMG_ENC, IMG_DEC, d, c, z, beam),
        (Some(x), Some(z)) => {
            let mut steps = FusedSteps::bind(&mut s, m, x, z)?;
            let tokens = beam_search(&mut steps, &BeamConfig::text(beam, d.max_text_len))?;
            Ok(TextSeq::from_decoded(&tokens, d.max_text_len))
        }
    }
}
