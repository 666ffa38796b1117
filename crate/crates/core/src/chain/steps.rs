//! Single-datum training steps.
//!
//! Every step reads the current parameters, adds gradients to a [`GradSet`]
//! and leaves the parameters alone; [`ChainState::apply`] later runs one Adam
//! step per component that actually received gradients. Pseudo-labels and
//! generated modalities are decoded with inference sessions, so they enter
//! downstream losses as constants. An empty pseudo-caption carries nothing
//! to learn from, so the updates that depend on it are skipped.

use std::collections::{BTreeMap, BTreeSet};

use super::ChainState;
use crate::error::{Error, Result};
use crate::models::{asr, ic, ig, imgsp2txt, spk, tts, ComponentKind};
use crate::world::{Image, MultimodalExample, SpeechSeq, TextSeq};

/// Gradient sums per component, with the number of contributions.
#[derive(Clone, Debug, Default)]
pub struct GradSet {
    sums: BTreeMap<ComponentKind, (BTreeMap<String, Vec<f64>>, usize)>,
}

impl GradSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, kind: ComponentKind, grads: BTreeMap<String, Vec<f64>>) {
        let (acc, n) = self.sums.entry(kind).or_default();
        for (name, g) in grads {
            match acc.get_mut(&name) {
                Some(a) => a.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    acc.insert(name, g);
                }
            }
        }
        *n += 1;
    }

    pub fn touched(&self) -> BTreeSet<ComponentKind> {
        self.sums.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn get(&self, kind: ComponentKind) -> Option<&BTreeMap<String, Vec<f64>>> {
        self.sums.get(&kind).map(|(g, _)| g)
    }

    pub(crate) fn into_iter(self) -> impl Iterator<Item = (ComponentKind, BTreeMap<String, Vec<f64>>, usize)> {
        self.sums.into_iter().map(|(k, (g, n))| (k, g, n))
    }
}

/// Losses recorded by one step, by the component they updated.
pub type Losses = Vec<(ComponentKind, f64)>;

fn need<'a, T>(v: Option<&'a T>, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::data(format!("example lacks {what}")))
}

/// Supervised gradient of one component on one example.
pub fn supervised_grads(st: &ChainState, kind: ComponentKind, e: &MultimodalExample, g: &mut GradSet) -> Result<f64> {
    let m = st.params(kind)?;
    let mut s = m.session();
    let loss = match kind {
        ComponentKind::Asr => asr::forward(m, &mut s, need(e.x.as_ref(), "speech")?, need(e.y.as_ref(), "text")?)?.0,
        ComponentKind::Ic => ic::forward(m, &mut s, need(e.z.as_ref(), "an image")?, need(e.y.as_ref(), "text")?)?.0,
        ComponentKind::Tts => {
            let x = need(e.x.as_ref(), "speech")?;
            let spk = st.speaker_embedding(x)?;
            tts::forward(m, &mut s, need(e.y.as_ref(), "text")?, &spk, x)?
        }
        ComponentKind::Ig => ig::train_loss(m, &mut s, need(e.y.as_ref(), "text")?, need(e.z.as_ref(), "an image")?)?,
        ComponentKind::ImgSp2Txt => {
            if e.x.is_none() && e.z.is_none() {
                return Err(Error::data("example lacks both speech and image"));
            }
            imgsp2txt::train_loss(m, &mut s, e.x.as_ref(), e.z.as_ref(), need(e.y.as_ref(), "text")?)?
        }
        ComponentKind::SpkEmbed => {
            let x = need(e.x.as_ref(), "speech")?;
            let id = x.speaker().ok_or_else(|| Error::data("speech has no speaker label"))?;
            spk::forward(m, &mut s, x, id)?
        }
    };
    let value = s.scalar(loss);
    let grads = s.backward(loss)?;
    g.add(kind, grads);
    Ok(value)
}

/// TTS reconstruction of real speech `x` from text `y`, conditioned on the
/// one-shot embedding of `x` itself.
fn tts_from_text(st: &ChainState, x: &SpeechSeq, y: &TextSeq, g: &mut GradSet) -> Result<f64> {
    let m = st.params(ComponentKind::Tts)?;
    let spk = st.speaker_embedding(x)?;
    let mut s = m.session();
    let loss = tts::forward(m, &mut s, y, &spk, x)?;
    let v = s.scalar(loss);
    g.add(ComponentKind::Tts, s.backward(loss)?);
    Ok(v)
}

fn ig_from_text(st: &ChainState, z: &Image, y: &TextSeq, g: &mut GradSet) -> Result<f64> {
    let m = st.params(ComponentKind::Ig)?;
    let mut s = m.session();
    let loss = ig::train_loss(m, &mut s, y, z)?;
    let v = s.scalar(loss);
    g.add(ComponentKind::Ig, s.backward(loss)?);
    Ok(v)
}

/// MMC2, speech and/or image to text: decode a pseudo-caption with
/// ImgSp2Txt, then reconstruct whichever modalities are present.
pub fn mmc2_sp_img_to_text(
    st: &ChainState,
    x: Option<&SpeechSeq>,
    z: Option<&Image>,
    g: &mut GradSet,
) -> Result<(TextSeq, Losses)> {
    let y_hat = imgsp2txt::decode(st.params(ComponentKind::ImgSp2Txt)?, x, z, st.beam)?;
    if y_hat.is_empty() {
        if x.is_none() && z.is_none() {
            return Err(Error::data("nothing to reconstruct: speech and image are both absent"));
        }
        return Ok((y_hat, Vec::new()));
    }
    let losses = reconstruct_from_caption(st, x, z, &y_hat, g)?;
    Ok((y_hat, losses))
}

/// The update half of [`mmc2_sp_img_to_text`], for a caption obtained
/// elsewhere.
pub fn reconstruct_from_caption(
    st: &ChainState,
    x: Option<&SpeechSeq>,
    z: Option<&Image>,
    y_hat: &TextSeq,
    g: &mut GradSet,
) -> Result<Losses> {
    if x.is_none() && z.is_none() {
        return Err(Error::data("nothing to reconstruct: speech and image are both absent"));
    }
    let mut losses = Vec::new();
    if let Some(x) = x {
        losses.push((ComponentKind::Tts, tts_from_text(st, x, y_hat, g)?));
    }
    if let Some(z) = z {
        losses.push((ComponentKind::Ig, ig_from_text(st, z, y_hat, g)?));
    }
    Ok(losses)
}

/// MMC2, text to speech and image: synthesize both with the default speaker
/// and train ImgSp2Txt to transcribe them back.
pub fn mmc2_text_to_sp_img(st: &ChainState, y: &TextSeq, g: &mut GradSet) -> Result<f64> {
    let x_hat = tts::decode(st.params(ComponentKind::Tts)?, y, &st.default_speaker)?;
    let z_hat = ig::generate(st.params(ComponentKind::Ig)?, y)?;
    let m = st.params(ComponentKind::ImgSp2Txt)?;
    let mut s = m.session();
    let loss = imgsp2txt::train_loss(m, &mut s, Some(&x_hat), Some(&z_hat), y)?;
    let v = s.scalar(loss);
    g.add(ComponentKind::ImgSp2Txt, s.backward(loss)?);
    Ok(v)
}

/// Input of a dual-loop chain step.
#[derive(Clone, Copy, Debug)]
pub enum ChainInput<'a> {
    Speech(&'a SpeechSeq),
    Image(&'a Image),
    Text(&'a TextSeq),
}

/// MMC1 speech chain. Speech: ASR pseudo-caption, TTS update. Text: TTS
/// synthesis, ASR update.
pub fn mmc1_speech_chain(st: &ChainState, input: ChainInput, g: &mut GradSet) -> Result<(Option<TextSeq>, Losses)> {
    match input {
        ChainInput::Speech(x) => {
            let y_hat = asr::decode(st.params(ComponentKind::Asr)?, x, st.beam)?;
            if y_hat.is_empty() {
                return Ok((Some(y_hat), Vec::new()));
            }
            let l = tts_from_text(st, x, &y_hat, g)?;
            Ok((Some(y_hat), vec![(ComponentKind::Tts, l)]))
        }
        ChainInput::Text(y) => {
            let x_hat = tts::decode(st.params(ComponentKind::Tts)?, y, &st.default_speaker)?;
            let m = st.params(ComponentKind::Asr)?;
            let mut s = m.session();
            let (loss, _) = asr::forward(m, &mut s, &x_hat, y)?;
            let v = s.scalar(loss);
            g.add(ComponentKind::Asr, s.backward(loss)?);
            Ok((None, vec![(ComponentKind::Asr, v)]))
        }
        ChainInput::Image(_) => Err(Error::data("the speech chain takes speech or text")),
    }
}

/// MMC1 visual chain. Image: IC pseudo-caption, IG update. Text: IG
/// generation, IC update.
pub fn mmc1_visual_chain(st: &ChainState, input: ChainInput, g: &mut GradSet) -> Result<(Option<TextSeq>, Losses)> {
    match input {
        ChainInput::Image(z) => {
            let y_hat = ic::decode(st.params(ComponentKind::Ic)?, z, st.beam)?;
            if y_hat.is_empty() {
                return Ok((Some(y_hat), Vec::new()));
            }
            let l = ig_from_text(st, z, &y_hat, g)?;
            Ok((Some(y_hat), vec![(ComponentKind::Ig, l)]))
        }
        ChainInput::Text(y) => {
            let z_hat = ig::generate(st.params(ComponentKind::Ig)?, y)?;
            let m = st.params(ComponentKind::Ic)?;
            let mut s = m.session();
            let (loss, _) = ic::forward(m, &mut s, &z_hat, y)?;
            let v = s.scalar(loss);
            g.add(ComponentKind::Ic, s.backward(loss)?);
            Ok((None, vec![(ComponentKind::Ic, v)]))
        }
        ChainInput::Speech(_) => Err(Error::data("the visual chain takes an image or text")),
    }
}

/// MMC1 text-only datum: both text-driven updates (ASR and IC) at once.
pub fn mmc1_text(st: &ChainState, y: &TextSeq, g: &mut GradSet) -> Result<Losses> {
    let (_, mut losses) = mmc1_speech_chain(st, ChainInput::Text(y), g)?;
    losses.extend(mmc1_visual_chain(st, ChainInput::Text(y), g)?.1);
    Ok(losses)
}

/// Speech-only or image-only datum: the modality-to-text pass (updating the
/// reconstructing model), then its pseudo-caption as text-only data.
pub fn composite(st: &ChainState, mode: super::Mode, e: &MultimodalExample, g: &mut GradSet) -> Result<(TextSeq, Losses)> {
    let input = match (&e.x, &e.y, &e.z) {
        (Some(x), None, None) => ChainInput::Speech(x),
        (None, None, Some(z)) => ChainInput::Image(z),
        _ => return Err(Error::data("composite step needs exactly one of speech or image")),
    };
    match mode {
        super::Mode::Mmc2 => {
            let (x, z) = match input {
                ChainInput::Speech(x) => (Some(x), None),
                ChainInput::Image(z) => (None, Some(z)),
                ChainInput::Text(_) => unreachable!(),
            };
            let (y_hat, mut losses) = mmc2_sp_img_to_text(st, x, z, g)?;
            if !y_hat.is_empty() {
                losses.push((ComponentKind::ImgSp2Txt, mmc2_text_to_sp_img(st, &y_hat, g)?));
            }
            Ok((y_hat, losses))
        }
        super::Mode::Mmc1 => {
            let (y_hat, mut losses) = match input {
                ChainInput::Speech(_) => mmc1_speech_chain(st, input, g)?,
                _ => mmc1_visual_chain(st, input, g)?,
            };
            let y_hat = y_hat.expect("modality input yields a caption");
            if !y_hat.is_empty() {
                losses.extend(mmc1_text(st, &y_hat, g)?);
            }
            Ok((y_hat, losses))
        }
        _ => Err(Error::config("composite steps exist only in the chain modes")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{ChainConfig, Mode};
    use crate::models::probe::{probe_dims, probe_triple};
    use crate::models::ModelConfig;
    use crate::world::{Pairing, VOCAB_SIZE};
    use ComponentKind::*;

    fn state(seed: u64) -> ChainState {
        let cfg = ChainConfig {
            model: ModelConfig::probe(),
            ..ChainConfig::default()
        };
        let mut st = ChainState::init(&probe_dims(), &cfg, seed).unwrap();
        let (x, _, _) = probe_triple(seed, "ab c");
        st.set_default_speaker([&x]).unwrap();
        st
    }

    /// A state whose transcribers have seen the probe example, so their
    /// pseudo-captions are not empty.
    fn warmed(seed: u64) -> ChainState {
        let mut st = state(seed);
        let e = example(true, true, true);
        for _ in 0..40 {
            let mut g = GradSet::new();
            for k in [Asr, Ic, ImgSp2Txt] {
                supervised_grads(&st, k, &e, &mut g).unwrap();
            }
            st.apply(g).unwrap();
        }
        st
    }

    fn example(x: bool, y: bool, z: bool) -> MultimodalExample {
        let (sx, sy, sz) = probe_triple(3, "ba ca");
        MultimodalExample {
            scene_id: 0,
            x: x.then_some(sx),
            y: y.then_some(sy),
            z: z.then_some(sz),
            pairing: if x as u8 + y as u8 + z as u8 == 1 {
                Pairing::ModalityOnly
            } else {
                Pairing::Paired
            },
        }
    }

    /// Runs `step`, applies its gradients and returns (touched, changed).
    fn audit(
        st: &mut ChainState,
        step: impl FnOnce(&ChainState, &mut GradSet) -> Result<()>,
    ) -> (BTreeSet<ComponentKind>, BTreeSet<ComponentKind>) {
        let before = st.fingerprint();
        let mut g = GradSet::new();
        step(st, &mut g).unwrap();
        let touched = g.touched();
        st.apply(g).unwrap();
        (touched, st.changed_since(&before))
    }

    fn set(ks: &[ComponentKind]) -> BTreeSet<ComponentKind> {
        ks.iter().copied().collect()
    }

    #[test]
    fn every_step_changes_exactly_its_parameter_set() {
        let sx = example(true, false, false);
        let sz = example(false, false, true);
        let sy = example(false, true, false);
        let xz = example(true, false, true);
        type Step<'a> = Box<dyn FnOnce(&ChainState, &mut GradSet) -> Result<()> + 'a>;
        let cases: Vec<(&str, Step, Vec<ComponentKind>)> = vec![
            ("mmc2 speech->text", Box::new(|st, g| mmc2_sp_img_to_text(st, sx.x.as_ref(), None, g).map(drop)), vec![Tts]),
            ("mmc2 image->text", Box::new(|st, g| mmc2_sp_img_to_text(st, None, sz.z.as_ref(), g).map(drop)), vec![Ig]),
            (
                "mmc2 both->text",
                Box::new(|st, g| mmc2_sp_img_to_text(st, xz.x.as_ref(), xz.z.as_ref(), g).map(drop)),
                vec![Tts, Ig],
            ),
            ("mmc2 text->both", Box::new(|st, g| mmc2_text_to_sp_img(st, sy.y.as_ref().unwrap(), g).map(drop)), vec![ImgSp2Txt]),
            ("mmc1 speech", Box::new(|st, g| mmc1_speech_chain(st, ChainInput::Speech(sx.x.as_ref().unwrap()), g).map(drop)), vec![Tts]),
            ("mmc1 text->speech", Box::new(|st, g| mmc1_speech_chain(st, ChainInput::Text(sy.y.as_ref().unwrap()), g).map(drop)), vec![Asr]),
            ("mmc1 image", Box::new(|st, g| mmc1_visual_chain(st, ChainInput::Image(sz.z.as_ref().unwrap()), g).map(drop)), vec![Ig]),
            ("mmc1 text->image", Box::new(|st, g| mmc1_visual_chain(st, ChainInput::Text(sy.y.as_ref().unwrap()), g).map(drop)), vec![Ic]),
            ("mmc1 text", Box::new(|st, g| mmc1_text(st, sy.y.as_ref().unwrap(), g).map(drop)), vec![Asr, Ic]),
            ("mmc2 speech-only", Box::new(|st, g| composite(st, Mode::Mmc2, &sx, g).map(drop)), vec![Tts, ImgSp2Txt]),
            ("mmc2 image-only", Box::new(|st, g| composite(st, Mode::Mmc2, &sz, g).map(drop)), vec![Ig, ImgSp2Txt]),
            ("mmc1 speech-only", Box::new(|st, g| composite(st, Mode::Mmc1, &sx, g).map(drop)), vec![Tts, Asr, Ic]),
            ("mmc1 image-only", Box::new(|st, g| composite(st, Mode::Mmc1, &sz, g).map(drop)), vec![Ig, Asr, Ic]),
        ];
        for (name, step, want) in cases {
            let mut st = warmed(1);
            let (touched, changed) = audit(&mut st, step);
            assert_eq!(touched, set(&want), "{name}: gradients");
            assert_eq!(changed, set(&want), "{name}: parameters");
        }
        let full = example(true, true, true);
        for k in ComponentKind::ALL {
            let mut st = state(2);
            let (_, changed) = audit(&mut st, |st, g| supervised_grads(st, k, &full, g).map(drop));
            assert_eq!(changed, set(&[k]), "supervised {k}");
        }
    }

    #[test]
    fn composite_rejects_anything_but_one_modality() {
        let st = state(1);
        let mut g = GradSet::new();
        for e in [example(true, false, true), example(true, true, false), example(false, false, false)] {
            assert!(composite(&st, Mode::Mmc2, &e, &mut g).is_err());
        }
        assert!(composite(&st, Mode::LabelProp, &example(true, false, false), &mut g).is_err());
        assert!(mmc2_sp_img_to_text(&st, None, None, &mut g).is_err());
        assert!(mmc1_speech_chain(&st, ChainInput::Image(example(false, false, true).z.as_ref().unwrap()), &mut g).is_err());
        assert!(g.is_empty());
    }

    #[test]
    fn oracle_caption_reproduces_the_supervised_update() {
        let st = state(4);
        let e = example(true, true, true);
        let y = e.y.as_ref().unwrap();
        let mut chain = GradSet::new();
        reconstruct_from_caption(&st, e.x.as_ref(), e.z.as_ref(), y, &mut chain).unwrap();
        let mut sup = GradSet::new();
        supervised_grads(&st, Tts, &e, &mut sup).unwrap();
        supervised_grads(&st, Ig, &e, &mut sup).unwrap();
        for k in [Tts, Ig] {
            let (a, b) = (chain.get(k).unwrap(), sup.get(k).unwrap());
            assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
            for (name, ga) in a {
                let d = ga.iter().zip(&b[name]).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert!(d <= 1e-12, "{k}/{name}: {d}");
            }
        }
    }

    #[test]
    fn decoded_pseudo_labels_match_their_supervised_counterpart() {
        // the speech chain's TTS gradient is the supervised one on (x, y_hat)
        let st = state(5);
        let e = example(true, false, false);
        let mut chain = GradSet::new();
        let (y_hat, _) = mmc1_speech_chain(&st, ChainInput::Speech(e.x.as_ref().unwrap()), &mut chain).unwrap();
        let pair = MultimodalExample {
            y: y_hat,
            ..e.clone()
        };
        let mut sup = GradSet::new();
        supervised_grads(&st, Tts, &pair, &mut sup).unwrap();
        assert_eq!(chain.get(Tts), sup.get(Tts));
    }

    #[test]
    fn text_driven_losses_start_near_uniform() {
        let st = state(6);
        let y = example(false, true, false).y.unwrap();
        let ln_v = (VOCAB_SIZE as f64).ln();
        let mut g = GradSet::new();
        let l2 = mmc2_text_to_sp_img(&st, &y, &mut g).unwrap();
        let l_asr = mmc1_speech_chain(&st, ChainInput::Text(&y), &mut g).unwrap().1[0].1;
        let l_ic = mmc1_visual_chain(&st, ChainInput::Text(&y), &mut g).unwrap().1[0].1;
        // fused cross-entropy plus both single-decoder terms
        let w = st.params(ImgSp2Txt).unwrap().cfg.single_decoder_weight;
        for l in [l2 / (1.0 + 2.0 * w), l_asr, l_ic] {
            assert!((l / ln_v - 1.0).abs() < 0.25, "{l} vs ln V = {ln_v}");
        }
    }

    #[test]
    fn empty_pseudo_captions_update_nothing() {
        // an untrained transcriber may stop at once; find such a state
        let e = example(true, false, false);
        let st = (0..50)
            .map(state)
            .find(|st| imgsp2txt::decode(st.params(ImgSp2Txt).unwrap(), e.x.as_ref(), None, 3).unwrap().is_empty())
            .expect("some seed decodes an empty caption");
        let mut g = GradSet::new();
        let (y_hat, losses) = composite(&st, Mode::Mmc2, &e, &mut g).unwrap();
        assert!(y_hat.is_empty() && losses.is_empty() && g.is_empty());
    }

    #[test]
    fn steps_are_deterministic() {
        let e = example(false, false, true);
        let run = || {
            let mut st = state(7);
            let mut g = GradSet::new();
            composite(&st, Mode::Mmc1, &e, &mut g).unwrap();
            st.apply(g).unwrap();
            st.fingerprint()
        };
        assert_eq!(run(), run());
    }
}
