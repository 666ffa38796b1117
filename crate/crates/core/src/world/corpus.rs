use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Image, Scene, SpeakerId, SpeechSeq, TextSeq, World};
use crate::error::{Error, Result};
use crate::rng;

/// How an example was sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pairing {
    /// Full `(x, y, z)` triple.
    Paired,
    /// One modality from a scene whose other modalities are withheld.
    Unpaired,
    /// One modality from a partition that only ever holds that modality.
    ModalityOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalExample {
    pub scene_id: usize,
    pub x: Option<SpeechSeq>,
    pub y: Option<TextSeq>,
    pub z: Option<Image>,
    pub pairing: Pairing,
}

impl MultimodalExample {
    pub fn speaker(&self) -> Option<SpeakerId> {
        self.x.as_ref().and_then(|x| x.speaker())
    }
}

/// Number of scenes drawn into each partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionCounts {
    pub paired: usize,
    /// Scenes per unpaired modality; three disjoint draws.
    pub unpaired: usize,
    pub speech_only: usize,
    pub image_only: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for PartitionCounts {
    fn default() -> Self {
        Self {
            paired: 80,
            unpaired: 150,
            speech_only: 185,
            image_only: 185,
            dev: 40,
            test: 40,
        }
    }
}

impl PartitionCounts {
    pub fn full_scale() -> Self {
        Self {
            paired: 800,
            unpaired: 1500,
            speech_only: 1850,
            image_only: 1850,
            dev: 100,
            test: 100,
        }
    }

    pub fn total_scenes(&self) -> usize {
        self.paired + 3 * self.unpaired + self.speech_only + self.image_only + self.dev + self.test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedDataset {
    pub seed: u64,
    pub counts: PartitionCounts,
    pub paired: Vec<MultimodalExample>,
    pub unpaired_speech: Vec<MultimodalExample>,
    pub unpaired_text: Vec<MultimodalExample>,
    pub unpaired_image: Vec<MultimodalExample>,
    pub speech_only: Vec<MultimodalExample>,
    pub image_only: Vec<MultimodalExample>,
    pub dev: Vec<MultimodalExample>,
    pub test: Vec<MultimodalExample>,
}

pub(crate) const PARTITION_NAMES: [&str; 8] = [
    "paired",
    "unpaired_speech",
    "unpaired_text",
    "unpaired_image",
    "speech_only",
    "image_only",
    "dev",
    "test",
];

impl PartitionedDataset {
    pub fn partitions(&self) -> [(&'static str, &Vec<MultimodalExample>); 8] {
        [
            ("paired", &self.paired),
            ("unpaired_speech", &self.unpaired_speech),
            ("unpaired_text", &self.unpaired_text),
            ("unpaired_image", &self.unpaired_image),
            ("speech_only", &self.speech_only),
            ("image_only", &self.image_only),
            ("dev", &self.dev),
            ("test", &self.test),
        ]
    }

    pub fn partition(&self, name: &str) -> Result<&Vec<MultimodalExample>> {
        self.partitions()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::data(format!("unknown partition {name:?}")))
    }

    pub fn scene_set(examples: &[MultimodalExample]) -> BTreeSet<usize> {
        examples.iter().map(|e| e.scene_id).collect()
    }

    /// Scene ids of every training partition (dev and test excluded).
    pub fn training_scene_ids(&self) -> BTreeSet<usize> {
        self.partitions()
            .into_iter()
            .filter(|(n, _)| *n != "dev" && *n != "test")
            .flat_map(|(_, p)| p.iter().map(|e| e.scene_id))
            .collect()
    }

    /// Fails if any scene appears in two partitions.
    pub fn check_disjoint(&self) -> Result<()> {
        let sets: Vec<(&str, BTreeSet<usize>)> = self
            .partitions()
            .into_iter()
            .map(|(n, p)| (n, Self::scene_set(p)))
            .collect();
        for (i, (a, sa)) in sets.iter().enumerate() {
            for (b, sb) in &sets[i + 1..] {
                if let Some(s) = sa.intersection(sb).next() {
                    return Err(Error::data(format!("scene {s} appears in both {a} and {b}")));
                }
            }
        }
        Ok(())
    }
}

fn scene_speakers(world: &World, scene_id: usize, seed: u64) -> Vec<SpeakerId> {
    let mut ids: Vec<usize> = (0..world.num_speakers()).collect();
    let mut r = rng::stream(seed, &format!("corpus/speakers/{scene_id}"));
    ids.shuffle(&mut r);
    ids.truncate(world.config().speakers_per_scene);
    ids.into_iter().map(SpeakerId).collect()
}

/// Utterances of a scene: caption variants cycled over the scene's speakers.
fn utterances(world: &World, scene: &Scene, seed: u64) -> Result<Vec<(SpeechSeq, TextSeq)>> {
    let cfg = world.config();
    let id = scene.id(cfg);
    let n = cfg.speakers_per_scene.max(cfg.captions_per_scene);
    let speakers = scene_speakers(world, id, seed);
    (0..n)
        .map(|j| {
            let y = world.caption_variant(scene, j % cfg.captions_per_scene);
            let noise = rng::derive_seed(seed, &format!("corpus/utt/{id}/{j}"));
            let x = world.synth_speech(&y, speakers[j % speakers.len()], noise)?;
            Ok((x, y))
        })
        .collect()
}

/// Every full triple a scene can produce.
pub(crate) fn paired_examples(world: &World, scene_id: usize, seed: u64) -> Result<Vec<MultimodalExample>> {
    let scene = Scene::from_id(scene_id, world.config())?;
    let z = world.render_image(&scene);
    Ok(utterances(world, &scene, seed)?
        .into_iter()
        .map(|(x, y)| MultimodalExample {
            scene_id,
            x: Some(x),
            y: Some(y),
            z: Some(z.clone()),
            pairing: Pairing::Paired,
        })
        .collect())
}

fn speech_examples(world: &World, scene_id: usize, seed: u64, pairing: Pairing) -> Result<Vec<MultimodalExample>> {
    let scene = Scene::from_id(scene_id, world.config())?;
    Ok(utterances(world, &scene, seed)?
        .into_iter()
        .map(|(x, _)| MultimodalExample {
            scene_id,
            x: Some(x),
            y: None,
            z: None,
            pairing,
        })
        .collect())
}

fn text_examples(world: &World, scene_id: usize) -> Result<Vec<MultimodalExample>> {
    let scene = Scene::from_id(scene_id, world.config())?;
    Ok((0..world.config().captions_per_scene)
        .map(|v| MultimodalExample {
            scene_id,
            x: None,
            y: Some(world.caption_variant(&scene, v)),
            z: None,
            pairing: Pairing::Unpaired,
        })
        .collect())
}

fn image_example(world: &World, scene_id: usize, pairing: Pairing) -> Result<MultimodalExample> {
    let scene = Scene::from_id(scene_id, world.config())?;
    Ok(MultimodalExample {
        scene_id,
        x: None,
        y: None,
        z: Some(world.render_image(&scene)),
        pairing,
    })
}

/// Samples disjoint scene sets for every partition.
pub fn gen_corpus(world: &World, counts: &PartitionCounts, seed: u64) -> Result<PartitionedDataset> {
    let available = world.config().num_scenes();
    if counts.total_scenes() > available {
        return Err(Error::config(format!(
            "partitions need {} distinct scenes but the world has {available}",
            counts.total_scenes()
        )));
    }
    let mut ids: Vec<usize> = (0..available).collect();
    ids.shuffle(&mut rng::stream(seed, "corpus/scenes"));
    let mut cursor = 0;
    let mut take = |n: usize| {
        let out = ids[cursor..cursor + n].to_vec();
        cursor += n;
        out
    };
    let dev = take(counts.dev);
    let test = take(counts.test);
    let paired = take(counts.paired);
    let un_speech = take(counts.unpaired);
    let un_text = take(counts.unpaired);
    let un_image = take(counts.unpaired);
    let sp_only = take(counts.speech_only);
    let im_only = take(counts.image_only);

    let triples = |set: &[usize]| -> Result<Vec<MultimodalExample>> {
        let mut out = Vec::new();
        for &id in set {
            out.extend(paired_examples(world, id, seed)?);
        }
        Ok(out)
    };
    let speech = |set: &[usize], pairing| -> Result<Vec<MultimodalExample>> {
        let mut out = Vec::new();
        for &id in set {
            out.extend(speech_examples(world, id, seed, pairing)?);
        }
        Ok(out)
    };
    let mut unpaired_text = Vec::new();
    for &id in &un_text {
        unpaired_text.extend(text_examples(world, id)?);
    }
    let images = |set: &[usize], pairing| -> Result<Vec<MultimodalExample>> {
        set.iter().map(|&id| image_example(world, id, pairing)).collect()
    };

    let ds = PartitionedDataset {
        seed,
        counts: counts.clone(),
        paired: triples(&paired)?,
        unpaired_speech: speech(&un_speech, Pairing::Unpaired)?,
        unpaired_text,
        unpaired_image: images(&un_image, Pairing::Unpaired)?,
        speech_only: speech(&sp_only, Pairing::ModalityOnly)?,
        image_only: images(&im_only, Pairing::ModalityOnly)?,
        dev: triples(&dev)?,
        test: triples(&test)?,
    };
    ds.check_disjoint()?;
    Ok(ds)
}

/// Full triples for every training scene of `ds`, regenerated with the same
/// speakers and noise as the corpus itself.
pub fn topline_pairs(world: &World, ds: &PartitionedDataset) -> Result<Vec<MultimodalExample>> {
    let mut out = Vec::new();
    for id in ds.training_scene_ids() {
        out.extend(paired_examples(world, id, ds.seed)?);
    }
    Ok(out)
}
