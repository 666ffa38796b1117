//! The chain components: ASR, TTS, IC, IG, the dual-decoder ImgSp2Txt and the
//! speaker embedder, each a small attention network over the autodiff tape.
//!
//! Every component owns a [`ComponentParams`]; forward functions record onto
//! a caller-supplied [`Session`] so the chain can decide what to backpropagate.

pub mod asr;
pub mod beam;
pub mod checkpoint;
pub mod ic;
pub mod ig;
pub mod imgsp2txt;
pub(crate) mod layers;
pub mod spk;
pub mod tts;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Session};
use crate::error::{Error, Result};
use crate::rng;
use crate::world::{WorldConfig, VOCAB_SIZE};

pub use beam::{beam_search, greedy, BeamConfig, StepModel};
pub use checkpoint::Checkpoint;
pub use imgsp2txt::DualDecoderOutput;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComponentKind {
    Asr,
    Tts,
    Ic,
    Ig,
    ImgSp2Txt,
    SpkEmbed,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 6] = [
        ComponentKind::Asr,
        ComponentKind::Tts,
        ComponentKind::Ic,
        ComponentKind::Ig,
        ComponentKind::ImgSp2Txt,
        ComponentKind::SpkEmbed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Asr => "asr",
            ComponentKind::Tts => "tts",
            ComponentKind::Ic => "ic",
            ComponentKind::Ig => "ig",
            ComponentKind::ImgSp2Txt => "imgsp2txt",
            ComponentKind::SpkEmbed => "spkembed",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComponentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ComponentKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown component {s:?}")))
    }
}

/// How ImgSp2Txt turns its two decoders into one training loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusedLoss {
    /// Cross-entropy of the averaged distribution.
    #[default]
    Mixture,
    /// Mean of the two per-decoder cross-entropies.
    MeanOfDecoders,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    /// Width of the sinusoidal position features.
    pub pos_dim: usize,
    pub spk_dim: usize,
    pub ig_hidden: usize,
    pub ig_heads: usize,
    pub init_scale: f64,
    pub fused_loss: FusedLoss,
    /// Weight of the per-decoder cross-entropies added to the fused loss when
    /// ImgSp2Txt sees both modalities.
    pub single_decoder_weight: f64,
    pub lambda_adv: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            embed_dim: 16,
            pos_dim: 8,
            spk_dim: 8,
            ig_hidden: 64,
            ig_heads: 4,
            init_scale: 0.08,
            fused_loss: FusedLoss::Mixture,
            single_decoder_weight: 1.0,
            lambda_adv: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn full_scale() -> Self {
        Self {
            spk_dim: 64,
            ..Self::default()
        }
    }

    /// Tiny widths for finite-difference checks.
    pub fn probe() -> Self {
        Self {
            hidden: 6,
            embed_dim: 3,
            pos_dim: 4,
            spk_dim: 3,
            ig_hidden: 5,
            ig_heads: 2,
            init_scale: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden >= 2
            && self.hidden.is_multiple_of(2)
            && self.embed_dim >= 1
            && self.pos_dim >= 2
            && self.pos_dim.is_multiple_of(2)
            && self.spk_dim >= 1
            && self.ig_hidden >= 1
            && self.ig_heads >= 1
            && self.init_scale > 0.0
            && self.single_decoder_weight >= 0.0
            && self.lambda_adv >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "model widths must be positive (hidden and pos_dim even), weights non-negative",
            ))
        }
    }
}

/// World-derived sizes every component needs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub frame_dim: usize,
    pub frames_per_char: usize,
    pub grid: usize,
    pub image_size: usize,
    pub channels: usize,
    pub num_speakers: usize,
    pub max_text_len: usize,
    pub max_frames: usize,
}

impl Dims {
    pub fn from_world(w: &WorldConfig) -> Self {
        Self {
            vocab: VOCAB_SIZE,
            frame_dim: w.frame_dim,
            frames_per_char: w.frames_per_char,
            grid: w.grid,
            image_size: w.image_size,
            channels: w.channels,
            num_speakers: w.num_speakers,
            max_text_len: w.max_text_len,
            max_frames: w.max_frames,
        }
    }

    pub fn regions(&self) -> usize {
        self.grid * self.grid
    }

    pub fn patch_len(&self) -> usize {
        let cell = self.image_size / self.grid;
        cell * cell * self.channels
    }
}

/// Parameters of one component.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentParams {
    pub kind: ComponentKind,
    pub dims: Dims,
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl ComponentParams {
    /// Uniform init in `[-init_scale, init_scale]`, keyed by seed and kind so
    /// a component's init does not depend on which others are built.
    pub fn init(kind: ComponentKind, dims: &Dims, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, &format!("init/{kind}"));
        let mut params = ParamStore::new();
        for (name, shape) in layout(kind, dims, cfg) {
            params.insert_uniform(name, shape, cfg.init_scale, &mut r)?;
        }
        Ok(Self {
            kind,
            dims: dims.clone(),
            cfg: cfg.clone(),
            params,
        })
    }

    pub(crate) fn expect(&self, kind: ComponentKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::data(format!("expected {kind} parameters, got {}", self.kind)))
        }
    }

    pub fn session(&self) -> Session<'_> {
        Session::new(&self.params)
    }

    pub fn inference(&self) -> Session<'_> {
        Session::inference(&self.params)
    }
}

type Layout = Vec<(String, Vec<usize>)>;

fn push(out: &mut Layout, prefix: &str, name: &str, shape: &[usize]) {
    out.push((format!("{prefix}.{name}"), shape.to_vec()));
}

fn speech_encoder_layout(out: &mut Layout, prefix: &str, d: &Dims, c: &ModelConfig) {
    let hh = c.hidden / 2;
    for dir in ["f", "b"] {
        push(out, prefix, &format!("w_{dir}"), &[3 * d.frame_dim, hh]);
        push(out, prefix, &format!("u_{dir}"), &[hh, hh]);
        push(out, prefix, &format!("b_{dir}"), &[1, hh]);
    }
}

fn image_encoder_layout(out: &mut Layout, prefix: &str, d: &Dims, c: &ModelConfig) {
    push(out, prefix, "w1", &[d.patch_len(), c.hidden]);
    push(out, prefix, "b1", &[1, c.hidden]);
    push(out, prefix, "w2", &[c.hidden, c.hidden]);
    push(out, prefix, "b2", &[1, c.hidden]);
}

fn decoder_layout(out: &mut Layout, prefix: &str, key_dim: usize, d: &Dims, c: &ModelConfig) {
    let h = c.hidden;
    push(out, prefix, "emb", &[d.vocab, c.embed_dim]);
    push(out, prefix, "w_s", &[c.embed_dim + key_dim + h, h]);
    push(out, prefix, "b_s", &[1, h]);
    push(out, prefix, "w_q", &[h + c.pos_dim, key_dim]);
    push(out, prefix, "w_o", &[h + key_dim, h]);
    push(out, prefix, "b_o", &[1, h]);
    push(out, prefix, "w_out", &[h, d.vocab]);
    push(out, prefix, "b_out", &[1, d.vocab]);
}

fn text_encoder_layout(out: &mut Layout, prefix: &str, d: &Dims, c: &ModelConfig) {
    push(out, prefix, "emb", &[d.vocab, c.embed_dim]);
    push(out, prefix, "w", &[3 * c.embed_dim, c.hidden]);
    push(out, prefix, "b", &[1, c.hidden]);
}

pub(crate) fn speech_key_dim(c: &ModelConfig) -> usize {
    c.hidden + c.pos_dim
}

pub(crate) fn image_key_dim(d: &Dims, c: &ModelConfig) -> usize {
    c.hidden + 2 * d.grid
}

fn layout(kind: ComponentKind, d: &Dims, c: &ModelConfig) -> Layout {
    let mut out = Vec::new();
    let (h, p) = (c.hidden, c.pos_dim);
    match kind {
        ComponentKind::Asr => {
            speech_encoder_layout(&mut out, "asr.enc", d, c);
            decoder_layout(&mut out, "asr.dec", speech_key_dim(c), d, c);
        }
        ComponentKind::Ic => {
            image_encoder_layout(&mut out, "ic.enc", d, c);
            decoder_layout(&mut out, "ic.dec", image_key_dim(d, c), d, c);
        }
        ComponentKind::ImgSp2Txt => {
            speech_encoder_layout(&mut out, "ist.sp_enc", d, c);
            decoder_layout(&mut out, "ist.sp_dec", speech_key_dim(c), d, c);
            image_encoder_layout(&mut out, "ist.img_enc", d, c);
            decoder_layout(&mut out, "ist.img_dec", image_key_dim(d, c), d, c);
        }
        ComponentKind::Tts => {
            text_encoder_layout(&mut out, "tts.txt", d, c);
            let kd = h + p;
            let step_in = d.frame_dim + c.spk_dim + kd + p + h;
            push(&mut out, "tts", "w_s", &[step_in, h]);
            push(&mut out, "tts", "b_s", &[1, h]);
            push(&mut out, "tts", "w_q", &[h + p, kd]);
            push(&mut out, "tts", "w_h", &[h + kd + c.spk_dim + d.frames_per_char, 2 * h]);
            push(&mut out, "tts", "b_h", &[1, 2 * h]);
            push(&mut out, "tts", "w_f", &[2 * h, d.frame_dim]);
            push(&mut out, "tts", "b_f", &[1, d.frame_dim]);
            push(&mut out, "tts", "w_stop", &[h + kd + p, 1]);
            push(&mut out, "tts", "b_stop", &[1, 1]);
        }
        ComponentKind::Ig => {
            text_encoder_layout(&mut out, "ig.txt", d, c);
            push(&mut out, "ig", "heads", &[c.ig_heads, h + p]);
            push(&mut out, "ig", "w1", &[c.ig_heads * (h + p), c.ig_hidden]);
            push(&mut out, "ig", "b1", &[1, c.ig_hidden]);
            push(&mut out, "ig", "w_where", &[c.ig_hidden, d.regions()]);
            push(&mut out, "ig", "b_where", &[1, d.regions()]);
            push(&mut out, "ig", "w_what", &[c.ig_hidden, d.patch_len()]);
            push(&mut out, "ig", "b_what", &[1, d.patch_len()]);
            if c.lambda_adv > 0.0 {
                push(&mut out, "ig.disc", "w1", &[d.patch_len(), 8]);
                push(&mut out, "ig.disc", "b1", &[1, 8]);
                push(&mut out, "ig.disc", "w2", &[8, 1]);
                push(&mut out, "ig.disc", "b2", &[1, 1]);
            }
        }
        ComponentKind::SpkEmbed => {
            push(&mut out, "spk", "w", &[2 * d.frame_dim, c.spk_dim]);
            push(&mut out, "spk", "b", &[1, c.spk_dim]);
            push(&mut out, "spk", "w_cls", &[c.spk_dim, d.num_speakers]);
            push(&mut out, "spk", "b_cls", &[1, d.num_speakers]);
        }
    }
    out
}

/// A miniature world and tiny model widths for finite-difference checks.
pub mod probe {
    use super::*;
    use crate::world::{Image, SpeakerId, SpeechSeq, TextSeq, World};

    /// A miniature world for gradient checks: 3-dim frames, 2 frames per
    /// character, 4x4 images on a 2x2 grid.
    pub fn probe_world() -> World {
        World::new(WorldConfig {
            num_classes: 4,
            num_attributes: 2,
            grid: 2,
            frame_dim: 3,
            num_speakers: 3,
            frames_per_char: 2,
            image_size: 4,
            max_text_len: 24,
            max_frames: 48,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    pub fn probe_dims() -> Dims {
        Dims::from_world(probe_world().config())
    }

    /// Speech, caption and an image of the probe world; `text` must use the
    /// world's alphabet.
    pub fn probe_triple(seed: u64, text: &str) -> (SpeechSeq, TextSeq, Image) {
        let w = probe_world();
        let y = TextSeq::parse(text, 24).unwrap();
        let x = w
            .synth_speech(&y, SpeakerId(seed as usize % 3), seed)
            .unwrap();
        let scene = w.scenes().nth(seed as usize % w.config().num_scenes()).unwrap();
        (x, y, w.render_image(&scene))
    }

    pub fn probe(kind: ComponentKind, seed: u64) -> ComponentParams {
        ComponentParams::init(kind, &probe_dims(), &ModelConfig::probe(), seed).unwrap()
    }
}
