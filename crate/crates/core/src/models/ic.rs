//! Image captioner: patch encoder, attention decoder.

use super::asr::{text_loss, DecoderSteps};
use super::beam::{beam_search, BeamConfig};
use super::layers::{encode_image, TextDecoder};
use super::{image_key_dim, ComponentKind, ComponentParams, Dims, ModelConfig};
use crate::autodiff::{Session, Var};
use crate::error::Result;
use crate::world::{Image, TextSeq};

pub(crate) fn image_logits(
    s: &mut Session,
    enc: &str,
    dec: &str,
    dims: &Dims,
    cfg: &ModelConfig,
    z: &Image,
    y: &TextSeq,
) -> Result<Var> {
    let e = encode_image(s, enc, z, dims)?;
    let d = TextDecoder::bind(s, dec, image_key_dim(dims, cfg), cfg)?;
    d.teacher_forced(&mut s.tape, &e, y)
}

/// Returns `(loss, logits)`.
pub fn forward(m: &ComponentParams, s: &mut Session, z: &Image, y: &TextSeq) -> Result<(Var, Var)> {
    m.expect(ComponentKind::Ic)?;
    let logits = image_logits(s, "ic.enc", "ic.dec", &m.dims, &m.cfg, z, y)?;
    Ok((text_loss(s, logits, y)?, logits))
}

pub(crate) fn decode_image(
    s: &mut Session,
    enc: &str,
    dec: &str,
    dims: &Dims,
    cfg: &ModelConfig,
    z: &Image,
    beam: usize,
) -> Result<TextSeq> {
    let e = encode_image(s, enc, z, dims)?;
    let d = TextDecoder::bind(s, dec, image_key_dim(dims, cfg), cfg)?;
    let mut steps = DecoderSteps { s, dec: d, enc: e };
    let tokens = beam_search(&mut steps, &BeamConfig::text(beam, dims.max_text_len))?;
    Ok(TextSeq::from_decoded(&tokens, dims.max_text_len))
}

pub fn decode(m: &ComponentParams, z: &Image, beam: usize) -> Result<TextSeq> {
    m.expect(ComponentKind::Ic)?;
    let mut s = m.inference();
    decode_image(&mut s, "ic.enc", "ic.dec", &m.dims, &m.cfg, z, beam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GradCheck;
    use crate::models::beam::greedy;
    use crate::models::probe::{probe, probe_triple};
    use crate::world::{World, WorldConfig, VOCAB_SIZE};

    #[test]
    fn untrained_loss_is_near_uniform() {
        let w = World::new(WorldConfig::default()).unwrap();
        let m = ComponentParams::init(ComponentKind::Ic, &Dims::from_world(w.config()), &ModelConfig::default(), 3).unwrap();
        let scene = w.scenes().nth(300).unwrap();
        let mut s = m.session();
        let (loss, _) = forward(&m, &mut s, &w.render_image(&scene), &w.caption_of(&scene)).unwrap();
        assert!((s.scalar(loss) / (VOCAB_SIZE as f64).ln() - 1.0).abs() < 0.15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let m = probe(ComponentKind::Ic, seed);
            let (_, y, z) = probe_triple(seed, "ab");
            let report = GradCheck::default()
                .run(&m.params, |s| Ok(forward(&m, s, &z, &y)?.0))
                .unwrap();
            assert!(report.passed(), "seed {seed}: {}", report.max_rel_error());
        }
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in 0..3 {
            let m = probe(ComponentKind::Ic, seed);
            let (_, _, z) = probe_triple(seed, "a");
            let mut s = m.inference();
            let e = encode_image(&mut s, "ic.enc", &z, &m.dims).unwrap();
            let d = TextDecoder::bind(&mut s, "ic.dec", image_key_dim(&m.dims, &m.cfg), &m.cfg).unwrap();
            let mut steps = DecoderSteps { s: &mut s, dec: d, enc: e };
            let cfg = BeamConfig::text(1, m.dims.max_text_len);
            assert_eq!(greedy(&mut steps, &cfg).unwrap(), beam_search(&mut steps, &cfg).unwrap());
        }
    }
}
