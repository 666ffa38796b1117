use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::text::{token_to_char, TextSeq, VOCAB_SIZE};
use super::{World, WorldConfig};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpeakerId(pub usize);

/// Per-speaker affine map applied to canonical frames: `M f + o`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerTransform {
    dim: usize,
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl SpeakerTransform {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            dim,
            matrix,
            offset: vec![0.0; dim],
        }
    }

    pub fn apply(&self, frame: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
                row.iter().zip(frame).map(|(m, f)| m * f).sum::<f64>() + self.offset[i]
            })
            .collect()
    }

    /// Ratio of the largest to the smallest singular value.
    pub fn condition_number(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.matrix);
        let sv = m.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }
}

pub(super) fn generate_speakers(cfg: &WorldConfig) -> Result<Vec<SpeakerTransform>> {
    let f = cfg.frame_dim;
    (0..cfg.num_speakers)
        .map(|s| {
            let mut r = rng::stream(cfg.world_seed, &format!("speaker/{s}"));
            for _ in 0..100 {
                let mut t = SpeakerTransform::identity(f);
                for v in t.matrix.iter_mut() {
                    *v += r.gen_range(-0.15..0.15);
                }
                for o in t.offset.iter_mut() {
                    *o = r.gen_range(-0.25..0.25);
                }
                if t.condition_number() < 100.0 {
                    return Ok(t);
                }
            }
            Err(Error::config(format!("could not draw a well-conditioned speaker {s}")))
        })
        .collect()
}

/// Canonical `frames_per_char x frame_dim` spectral pattern per token.
#[derive(Clone, Debug)]
pub(super) struct PatternTable {
    stride: usize,
    data: Vec<f64>,
}

impl PatternTable {
    pub(super) fn generate(cfg: &WorldConfig) -> Self {
        let stride = cfg.frames_per_char * cfg.frame_dim;
        let mut r = rng::stream(
            cfg.world_seed,
            &format!("patterns/{}x{}", cfg.frames_per_char, cfg.frame_dim),
        );
        let mut data = vec![0.0; VOCAB_SIZE * stride];
        let chars: Vec<usize> = (0..VOCAB_SIZE).filter(|&t| token_to_char(t).is_some()).collect();
        for (i, &t) in chars.iter().enumerate() {
            loop {
                let cand: Vec<f64> = (0..stride).map(|_| r.gen_range(-0.6..0.6)).collect();
                let far_enough = chars[..i].iter().all(|&o| {
                    let other = &data[o * stride..(o + 1) * stride];
                    l2(&cand, other) >= 0.5
                });
                if far_enough {
                    data[t * stride..(t + 1) * stride].copy_from_slice(&cand);
                    break;
                }
            }
        }
        Self { stride, data }
    }

    pub(super) fn get(&self, token: usize) -> &[f64] {
        &self.data[token * self.stride..(token + 1) * self.stride]
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `T x F` frames in [-1, 1]; only the final frame carries a stop flag.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechSeq {
    frames: Vec<f64>,
    frame_dim: usize,
    speaker: Option<SpeakerId>,
}

impl SpeechSeq {
    pub fn new(frames: Vec<f64>, frame_dim: usize, speaker: Option<SpeakerId>) -> Result<Self> {
        if frame_dim == 0 || frames.is_empty() || !frames.len().is_multiple_of(frame_dim) {
            return Err(Error::data(format!(
                "{} values do not form non-empty frames of width {frame_dim}",
                frames.len()
            )));
        }
        if let Some(bad) = frames.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::data(format!("frame value {bad} outside [-1, 1]")));
        }
        Ok(Self {
            frames,
            frame_dim,
            speaker,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.frame_dim
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.frame_dim..(t + 1) * self.frame_dim]
    }

    pub fn stop_flags(&self) -> Vec<bool> {
        let n = self.num_frames();
        (0..n).map(|t| t + 1 == n).collect()
    }

    pub fn speaker(&self) -> Option<SpeakerId> {
        self.speaker
    }

    /// First `n` frames, with the stop flag moving to the new last frame.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.num_frames());
        Self::new(self.frames[..n * self.frame_dim].to_vec(), self.frame_dim, self.speaker)
    }
}

pub(super) fn synth(world: &World, y: &TextSeq, speaker: SpeakerId, seed: u64) -> Result<SpeechSeq> {
    let cfg = world.config();
    let transform = world.speaker(speaker)?;
    let (d, f) = (cfg.frames_per_char, cfg.frame_dim);
    let total = y.chars().len() * d;
    if total == 0 {
        return Err(Error::data("cannot synthesize speech for empty text"));
    }
    if total > cfg.max_frames {
        return Err(Error::data(format!(
            "{total} frames exceed the limit of {}",
            cfg.max_frames
        )));
    }
    let mut r = rng::stream(seed, "speech-noise");
    let sigma = cfg.noise_sigma;
    let mut frames = Vec::with_capacity(total * f);
    for &c in y.chars() {
        let pattern = world.pattern(c);
        for k in 0..d {
            let canon = &pattern[k * f..(k + 1) * f];
            for v in transform.apply(canon) {
                let noise = if sigma > 0.0 { r.gen_range(-sigma..=sigma) } else { 0.0 };
                frames.push((v + noise).clamp(-1.0, 1.0));
            }
        }
    }
    SpeechSeq::new(frames, f, Some(speaker))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::text::CLASS_WORDS;

    fn world() -> World {
        World::new(WorldConfig::default()).unwrap()
    }

    #[test]
    fn patterns_are_pairwise_separated() {
        let w = world();
        let chars: Vec<usize> = (0..VOCAB_SIZE).filter(|&t| token_to_char(t).is_some()).collect();
        let mut min = f64::INFINITY;
        for (i, &a) in chars.iter().enumerate() {
            for &b in &chars[i + 1..] {
                min = min.min(l2(w.pattern(a), w.pattern(b)));
            }
        }
        assert!(min >= 0.5, "closest pair at {min}");
    }

    #[test]
    fn speakers_are_well_conditioned() {
        let w = world();
        for s in 0..w.num_speakers() {
            assert!(w.speaker(SpeakerId(s)).unwrap().condition_number() < 100.0);
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_shaped() {
        let w = world();
        let y = TextSeq::parse("red cat a p", 24).unwrap();
        let a = w.synth_speech(&y, SpeakerId(3), 17).unwrap();
        let b = w.synth_speech(&y, SpeakerId(3), 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_frames(), 11 * 3);
        let flags = a.stop_flags();
        assert!(flags[flags.len() - 1] && flags.iter().filter(|f| **f).count() == 1);
        assert!(a.frames().iter().all(|v| (-1.0..=1.0).contains(v)));
        let c = w.synth_speech(&y, SpeakerId(3), 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_free_identity_speaker_reproduces_patterns() {
        let cfg = WorldConfig {
            noise_sigma: 0.0,
            ..WorldConfig::default()
        };
        let mut w = World::new(cfg).unwrap();
        w.speakers[0] = SpeakerTransform::identity(w.config().frame_dim);
        let y = TextSeq::parse(CLASS_WORDS[2], 24).unwrap();
        let x = w.synth_speech(&y, SpeakerId(0), 1).unwrap();
        let stride = 3 * 8;
        for (i, &c) in y.chars().iter().enumerate() {
            assert_eq!(&x.frames()[i * stride..(i + 1) * stride], w.pattern(c));
        }
    }

    #[test]
    fn nearest_template_recovers_characters() {
        // Nearest-neighbour decoding against each speaker's noise-free templates.
        let w = world();
        let cfg = w.config().clone();
        let stride = cfg.frames_per_char * cfg.frame_dim;
        let chars: Vec<usize> = (0..VOCAB_SIZE).filter(|&t| token_to_char(t).is_some()).collect();
        let (mut right, mut total) = (0usize, 0usize);
        for (k, scene) in w.scenes().enumerate().step_by(7) {
            let y = w.caption_of(&scene);
            let spk = SpeakerId(k % w.num_speakers());
            let transform = w.speaker(spk).unwrap();
            let templates: Vec<(usize, Vec<f64>)> = chars
                .iter()
                .map(|&c| {
                    let p = w.pattern(c);
                    let mut t = Vec::with_capacity(stride);
                    for f in p.chunks(cfg.frame_dim) {
                        t.extend(transform.apply(f).into_iter().map(|v| v.clamp(-1.0, 1.0)));
                    }
                    (c, t)
                })
                .collect();
            let x = w.synth_speech(&y, spk, k as u64).unwrap();
            for (i, &c) in y.chars().iter().enumerate() {
                let block = &x.frames()[i * stride..(i + 1) * stride];
                let best = templates
                    .iter()
                    .min_by(|a, b| l2(block, &a.1).total_cmp(&l2(block, &b.1)))
                    .unwrap()
                    .0;
                right += usize::from(best == c);
                total += 1;
            }
        }
        assert!(right as f64 / total as f64 >= 0.99, "{right}/{total}");
    }

    #[test]
    fn empty_and_overlong_text_are_rejected() {
        let w = world();
        let empty = TextSeq::parse("", 24).unwrap();
        assert!(w.synth_speech(&empty, SpeakerId(0), 0).is_err());
        let cfg = WorldConfig {
            max_frames: 33,
            ..WorldConfig::default()
        };
        let w = World::new(cfg).unwrap();
        let long = TextSeq::parse("abcdefghijkl", 24).unwrap();
        assert!(w.synth_speech(&long, SpeakerId(0), 0).is_err());
    }
}
