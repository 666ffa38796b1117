//! Deterministic synthetic multimodal world.
//!
//! A [`Scene`] (object class, attribute, grid cell) is the shared latent from
//! which a character caption, multi-speaker speech frames and an image are
//! derived. [`gen_corpus`] samples disjoint scene sets into the four training
//! partitions plus dev/test splits.

mod corpus;
mod image;
pub mod io;
mod speech;
pub mod text;

use serde::{Deserialize, Serialize};

pub use corpus::{gen_corpus, topline_pairs, MultimodalExample, Pairing, PartitionCounts, PartitionedDataset};
pub use image::Image;
pub use speech::{SpeakerId, SpeakerTransform, SpeechSeq};
pub use text::{TextSeq, VOCAB_SIZE};

use crate::error::{Error, Result};

/// Dimensions of the synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub num_classes: usize,
    pub num_attributes: usize,
    pub grid: usize,
    pub frame_dim: usize,
    pub num_speakers: usize,
    pub noise_sigma: f64,
    pub frames_per_char: usize,
    pub speakers_per_scene: usize,
    pub captions_per_scene: usize,
    pub image_size: usize,
    pub channels: usize,
    pub max_text_len: usize,
    pub max_frames: usize,
    /// Seed of the fixed world tables (character patterns, speakers, glyphs).
    pub world_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_classes: 12,
            num_attributes: 6,
            grid: 4,
            frame_dim: 8,
            num_speakers: 8,
            noise_sigma: 0.02,
            frames_per_char: 3,
            speakers_per_scene: 2,
            captions_per_scene: 1,
            image_size: 16,
            channels: 1,
            max_text_len: 24,
            max_frames: 96,
            world_seed: 20_200_000,
        }
    }
}

impl WorldConfig {
    /// Larger world whose scene space holds the full-size partition counts.
    pub fn full_scale() -> Self {
        Self {
            num_classes: 16,
            num_attributes: 10,
            grid: 8,
            num_speakers: 64,
            speakers_per_scene: 5,
            captions_per_scene: 5,
            image_size: 32,
            channels: 3,
            ..Self::default()
        }
    }

    pub fn num_scenes(&self) -> usize {
        self.num_classes * self.num_attributes * self.grid * self.grid
    }

    pub fn cell_size(&self) -> usize {
        self.image_size / self.grid
    }

    /// Values per image patch (one patch per grid cell).
    pub fn patch_len(&self) -> usize {
        self.cell_size() * self.cell_size() * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(msg)) };
        check(
            (1..=text::CLASS_WORDS.len()).contains(&self.num_classes),
            "num_classes must be in 1..=16",
        )?;
        check(
            (1..=text::ATTR_WORDS.len()).contains(&self.num_attributes),
            "num_attributes must be in 1..=10",
        )?;
        check((1..=text::MAX_GRID).contains(&self.grid), "grid must be in 1..=8")?;
        check(self.frame_dim >= 2, "frame_dim must be at least 2")?;
        check(self.num_speakers >= 1, "num_speakers must be positive")?;
        check(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "noise_sigma must be finite and non-negative",
        )?;
        check(self.frames_per_char >= 1, "frames_per_char must be positive")?;
        check(
            (1..=self.num_speakers).contains(&self.speakers_per_scene),
            "speakers_per_scene must be in 1..=num_speakers",
        )?;
        check(
            (1..=text::CAPTION_TEMPLATES).contains(&self.captions_per_scene),
            "captions_per_scene must be in 1..=5",
        )?;
        check(
            self.image_size.is_multiple_of(self.grid) && self.cell_size() >= 1,
            "image_size must be a positive multiple of grid",
        )?;
        check(self.channels >= 1, "channels must be positive")?;
        // longest caption: two three-letter words, two letters, three spaces, <eos>
        check(self.max_text_len >= 12, "max_text_len must be at least 12")?;
        check(
            self.max_frames >= 11 * self.frames_per_char,
            "max_frames too small for the longest caption",
        )?;
        Ok(())
    }
}

/// Ground-truth latent shared by every modality of one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scene {
    pub object_class: usize,
    pub attribute: usize,
    /// Row-major grid cell index.
    pub position: usize,
}

impl Scene {
    pub fn from_id(id: usize, cfg: &WorldConfig) -> Result<Self> {
        if id >= cfg.num_scenes() {
            return Err(Error::data(format!(
                "scene id {id} outside scene space of {}",
                cfg.num_scenes()
            )));
        }
        let cells = cfg.grid * cfg.grid;
        Ok(Self {
            object_class: id / (cfg.num_attributes * cells),
            attribute: (id / cells) % cfg.num_attributes,
            position: id % cells,
        })
    }

    pub fn id(&self, cfg: &WorldConfig) -> usize {
        let cells = cfg.grid * cfg.grid;
        (self.object_class * cfg.num_attributes + self.attribute) * cells + self.position
    }

    pub fn row(&self, cfg: &WorldConfig) -> usize {
        self.position / cfg.grid
    }

    pub fn col(&self, cfg: &WorldConfig) -> usize {
        self.position % cfg.grid
    }
}

/// Fixed world tables built from a [`WorldConfig`].
#[derive(Clone, Debug)]
pub struct World {
    cfg: WorldConfig,
    patterns: speech::PatternTable,
    speakers: Vec<SpeakerTransform>,
    glyphs: image::GlyphTable,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let patterns = speech::PatternTable::generate(&cfg);
        let speakers = speech::generate_speakers(&cfg)?;
        let glyphs = image::GlyphTable::generate(&cfg);
        Ok(Self {
            cfg,
            patterns,
            speakers,
            glyphs,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn scenes(&self) -> impl Iterator<Item = Scene> + '_ {
        (0..self.cfg.num_scenes()).map(|id| Scene::from_id(id, &self.cfg).expect("id in range"))
    }

    /// Canonical caption (template 0).
    pub fn caption_of(&self, scene: &Scene) -> TextSeq {
        self.caption_variant(scene, 0)
    }

    pub fn caption_variant(&self, scene: &Scene, variant: usize) -> TextSeq {
        let text = text::caption_text(
            scene.object_class,
            scene.attribute,
            scene.row(&self.cfg),
            scene.col(&self.cfg),
            variant,
        );
        TextSeq::parse(&text, self.cfg.max_text_len).expect("grammar respects max_text_len")
    }

    pub fn speaker(&self, id: SpeakerId) -> Result<&SpeakerTransform> {
        self.speakers
            .get(id.0)
            .ok_or_else(|| Error::data(format!("speaker {} out of range", id.0)))
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// Canonical `frames_per_char x frame_dim` pattern of a character token.
    pub fn pattern(&self, token: usize) -> &[f64] {
        self.patterns.get(token)
    }

    pub fn synth_speech(&self, y: &TextSeq, speaker: SpeakerId, seed: u64) -> Result<SpeechSeq> {
        speech::synth(self, y, speaker, seed)
    }

    pub fn render_image(&self, scene: &Scene) -> Image {
        image::render(&self.cfg, &self.glyphs, scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn scene_ids_round_trip() {
        let cfg = WorldConfig::default();
        for id in 0..cfg.num_scenes() {
            assert_eq!(Scene::from_id(id, &cfg).unwrap().id(&cfg), id);
        }
        assert!(Scene::from_id(cfg.num_scenes(), &cfg).is_err());
    }

    #[test]
    fn captions_are_injective_and_bounded() {
        let w = World::new(WorldConfig::default()).unwrap();
        for variant in 0..text::CAPTION_TEMPLATES {
            let mut seen = HashSet::new();
            for s in w.scenes() {
                let c = w.caption_variant(&s, variant);
                assert!(c.len() <= w.config().max_text_len);
                assert!(seen.insert(c), "duplicate caption for {s:?}");
            }
            assert_eq!(seen.len(), w.config().num_scenes());
        }
    }

    #[test]
    fn first_caption_is_fixed() {
        let w = World::new(WorldConfig::default()).unwrap();
        let s = Scene {
            object_class: 0,
            attribute: 0,
            position: 0,
        };
        assert_eq!(w.caption_of(&s).text(), "red cat a p");
    }

    #[test]
    fn full_scale_world_is_valid() {
        let cfg = WorldConfig::full_scale();
        cfg.validate().unwrap();
        assert!(cfg.num_scenes() >= 800 + 3 * 1500 + 2 * 1850);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = WorldConfig {
            grid: 5,
            ..WorldConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = WorldConfig {
            num_classes: 17,
            ..WorldConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn every_modality_respects_its_invariants(id in 0usize..10_000, speaker in 0usize..8, seed in 0u64..1 << 20) {
            let w = World::new(WorldConfig::default()).unwrap();
            let cfg = w.config();
            let scene = Scene::from_id(id % cfg.num_scenes(), cfg).unwrap();
            let y = w.caption_of(&scene);
            let toks = y.tokens();
            proptest::prop_assert_eq!(toks.iter().filter(|&&t| t == text::EOS).count(), 1);
            proptest::prop_assert_eq!(*toks.last().unwrap(), text::EOS);
            proptest::prop_assert!(!toks.contains(&text::PAD));

            let x = w.synth_speech(&y, SpeakerId(speaker % w.num_speakers()), seed).unwrap();
            let stops = x.stop_flags();
            proptest::prop_assert!(x.num_frames() <= cfg.max_frames);
            proptest::prop_assert_eq!(stops.iter().filter(|&&s| s).count(), 1);
            proptest::prop_assert!(stops[stops.len() - 1]);

            let img = w.render_image(&scene);
            proptest::prop_assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
