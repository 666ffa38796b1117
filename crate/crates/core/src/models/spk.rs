//! Speaker embedder: pooled frame statistics through an affine + tanh layer,
//! trained through a speaker-classification head.

use super::layers::affine;
use super::{ComponentKind, ComponentParams};
use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::world::{SpeakerId, SpeechSeq};

/// Per-dimension mean and mean square over all frames.
fn pooled(x: &SpeechSeq) -> Vec<f64> {
    let f = x.frame_dim();
    let n = x.num_frames() as f64;
    let mut out = vec![0.0; 2 * f];
    for frame in x.frames().chunks(f) {
        for (k, v) in frame.iter().enumerate() {
            out[k] += v / n;
            out[f + k] += v * v / n;
        }
    }
    out
}

pub fn embed_var(m: &ComponentParams, s: &mut Session, x: &SpeechSeq) -> Result<Var> {
    m.expect(ComponentKind::SpkEmbed)?;
    if x.frame_dim() != m.dims.frame_dim {
        return Err(Error::shape("spk_embed", "frame width differs from the model"));
    }
    let feats = s.constant(1, 2 * x.frame_dim(), pooled(x))?;
    let (w, b) = (s.p("spk", "w")?, s.p("spk", "b")?);
    let a = affine(s, feats, w, b)?;
    Ok(s.tanh(a))
}

pub fn embed(m: &ComponentParams, x: &SpeechSeq) -> Result<Vec<f64>> {
    let mut s = m.inference();
    let e = embed_var(m, &mut s, x)?;
    Ok(s.value(e).to_vec())
}

/// Speaker-classification cross-entropy used to pretrain the embedding.
pub fn forward(m: &ComponentParams, s: &mut Session, x: &SpeechSeq, speaker: SpeakerId) -> Result<Var> {
    if speaker.0 >= m.dims.num_speakers {
        return Err(Error::data(format!("speaker {} out of range", speaker.0)));
    }
    let e = embed_var(m, s, x)?;
    let (w, b) = (s.p("spk", "w_cls")?, s.p("spk", "b_cls")?);
    let logits = affine(s, e, w, b)?;
    s.cross_entropy(logits, &[speaker.0], &[false])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GradCheck;
    use crate::models::probe::{probe, probe_triple};

    #[test]
    fn embedding_is_deterministic_and_finite() {
        let m = probe(ComponentKind::SpkEmbed, 0);
        let (x, _, _) = probe_triple(1, "abc");
        let e = embed(&m, &x).unwrap();
        assert_eq!(e.len(), m.cfg.spk_dim);
        assert!(e.iter().all(|v| v.is_finite()));
        assert_eq!(e, embed(&m, &x).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let m = probe(ComponentKind::SpkEmbed, seed);
            let (x, _, _) = probe_triple(seed, "ab");
            let report = GradCheck::default()
                .run(&m.params, |s| forward(&m, s, &x, SpeakerId(seed as usize % 3)))
                .unwrap();
            assert!(report.passed(), "seed {seed}: {}", report.max_rel_error());
        }
    }
}
