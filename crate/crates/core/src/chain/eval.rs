//! Dev-set evaluation of a chain state.

use std::collections::BTreeMap;

use super::ChainState;
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu4, corpus_cer, corpus_wer, l2sq_speech, Metric, WorldClassifier};
use crate::models::{asr, ic, ig, imgsp2txt, tts, ComponentKind};
use crate::world::{Image, MultimodalExample, TextSeq};

pub struct EvalContext<'a> {
    pub classifier: &'a WorldClassifier,
    pub beam: usize,
    pub is_splits: usize,
    pub seed: u64,
}

/// One image per scene with every caption of that scene as references.
fn scenes(examples: &[MultimodalExample]) -> Result<Vec<(&Image, Vec<&TextSeq>)>> {
    let mut by_scene: BTreeMap<usize, (&Image, Vec<&TextSeq>)> = BTreeMap::new();
    for e in examples {
        let (Some(z), Some(y)) = (&e.z, &e.y) else {
            return Err(Error::data("evaluation examples must be complete triples"));
        };
        let entry = by_scene.entry(e.scene_id).or_insert((z, Vec::new()));
        if !entry.1.contains(&y) {
            entry.1.push(y);
        }
    }
    Ok(by_scene.into_values().collect())
}

fn speech_pairs(examples: &[MultimodalExample]) -> Result<Vec<(&crate::world::SpeechSeq, &TextSeq)>> {
    examples
        .iter()
        .map(|e| match (&e.x, &e.y) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err(Error::data("evaluation examples must be complete triples")),
        })
        .collect()
}

fn caption_bleu(hyps: &[TextSeq], refs: &[Vec<&TextSeq>]) -> Result<f64> {
    let h: Vec<Vec<String>> = hyps.iter().map(TextSeq::words).collect();
    let r: Vec<Vec<Vec<String>>> = refs.iter().map(|rs| rs.iter().map(|y| y.words()).collect()).collect();
    corpus_bleu4(h.iter().map(Vec::as_slice).zip(r.iter().map(Vec::as_slice)))
}

fn error_rates(hyps: &[TextSeq], refs: &[&TextSeq]) -> Result<(f64, f64)> {
    let c = corpus_cer(hyps.iter().zip(refs.iter().copied()))?;
    let w = corpus_wer(hyps.iter().zip(refs.iter().copied()))?;
    Ok((c, w))
}

/// Metrics of `components` on `examples`, in a fixed order.
pub fn evaluate(
    st: &ChainState,
    components: &[ComponentKind],
    examples: &[MultimodalExample],
    ctx: &EvalContext,
) -> Result<Vec<(String, Metric, f64)>> {
    let speech = speech_pairs(examples)?;
    let images = scenes(examples)?;
    let refs: Vec<&TextSeq> = speech.iter().map(|(_, y)| *y).collect();
    let image_refs: Vec<Vec<&TextSeq>> = images.iter().map(|(_, r)| r.clone()).collect();
    let mut out = Vec::new();
    for &k in components {
        let m = st.params(k)?;
        let name = k.name().to_string();
        match k {
            ComponentKind::Asr => {
                let hyps = speech.iter().map(|(x, _)| asr::decode(m, x, ctx.beam)).collect::<Result<Vec<_>>>()?;
                let (c, w) = error_rates(&hyps, &refs)?;
                out.push((name.clone(), Metric::Cer, c));
                out.push((name, Metric::Wer, w));
            }
            ComponentKind::Ic => {
                let hyps = images.iter().map(|(z, _)| ic::decode(m, z, ctx.beam)).collect::<Result<Vec<_>>>()?;
                out.push((name, Metric::B4, caption_bleu(&hyps, &image_refs)?));
            }
            ComponentKind::ImgSp2Txt => {
                let hyps = speech
                    .iter()
                    .map(|(x, _)| imgsp2txt::decode(m, Some(x), None, ctx.beam))
                    .collect::<Result<Vec<_>>>()?;
                let (c, w) = error_rates(&hyps, &refs)?;
                out.push((name.clone(), Metric::Cer, c));
                out.push((name.clone(), Metric::Wer, w));
                let hyps = images
                    .iter()
                    .map(|(z, _)| imgsp2txt::decode(m, None, Some(z), ctx.beam))
                    .collect::<Result<Vec<_>>>()?;
                out.push((name, Metric::B4, caption_bleu(&hyps, &image_refs)?));
            }
            ComponentKind::Tts => {
                let mut total = 0.0;
                for (x, y) in &speech {
                    let spk = st.speaker_embedding(x)?;
                    total += l2sq_speech(x, &tts::decode(m, y, &spk)?)?;
                }
                out.push((name, Metric::L2sq, total / speech.len() as f64));
            }
            ComponentKind::Ig => {
                let generated = image_refs
                    .iter()
                    .map(|rs| ig::generate(m, rs[0]))
                    .collect::<Result<Vec<_>>>()?;
                out.push((name, Metric::Is, ctx.classifier.score(&generated, ctx.is_splits, ctx.seed)?));
            }
            ComponentKind::SpkEmbed => {}
        }
    }
    Ok(out)
}
