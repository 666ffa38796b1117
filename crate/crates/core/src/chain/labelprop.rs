//! Label propagation: fill in missing modalities once with the current
//! models and keep the results as supervised pairs.

use super::{ChainState, Stage};
use crate::error::{Error, Result};
use crate::models::{asr, ic, ig, tts, ComponentKind};
use crate::world::MultimodalExample;

/// Completes `e` with generated modalities: text by beam decoding (ASR for
/// speech, IC for images), speech by TTS with the default speaker, images by
/// IG. `None` when the decoded text is empty.
pub fn pseudo_pair(st: &ChainState, e: &MultimodalExample) -> Result<Option<MultimodalExample>> {
    let y = match (&e.x, &e.y, &e.z) {
        (_, Some(y), _) => y.clone(),
        (Some(x), None, _) => asr::decode(st.params(ComponentKind::Asr)?, x, st.beam)?,
        (None, None, Some(z)) => ic::decode(st.params(ComponentKind::Ic)?, z, st.beam)?,
        (None, None, None) => return Err(Error::data("example has no modality")),
    };
    if y.is_empty() {
        return Ok(None);
    }
    let x = match &e.x {
        Some(x) => x.clone(),
        None => tts::decode(st.params(ComponentKind::Tts)?, &y, &st.default_speaker)?,
    };
    let z = match &e.z {
        Some(z) => z.clone(),
        None => ig::generate(st.params(ComponentKind::Ig)?, &y)?,
    };
    Ok(Some(MultimodalExample {
        scene_id: e.scene_id,
        x: Some(x),
        y: Some(y),
        z: Some(z),
        pairing: e.pairing,
    }))
}

/// Pseudo-pairs accumulated over stages.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoPool {
    examples: Vec<MultimodalExample>,
    origin: Vec<Stage>,
}

impl PseudoPool {
    /// Replaces this stage's pseudo-pairs with fresh ones from `data`;
    /// examples whose decoded text is empty are left out.
    pub fn generate(&mut self, st: &ChainState, stage: Stage, data: &[&MultimodalExample]) -> Result<usize> {
        let mut fresh = Vec::with_capacity(data.len());
        for e in data {
            fresh.extend(pseudo_pair(st, e)?);
        }
        if fresh.len() < data.len() {
            log::debug!("stage {}: {} empty pseudo-captions dropped", stage.name(), data.len() - fresh.len());
        }
        let keep: Vec<bool> = self.origin.iter().map(|s| *s != stage).collect();
        let mut it = keep.iter();
        self.examples.retain(|_| *it.next().expect("parallel vectors"));
        self.origin.retain(|s| *s != stage);
        let n = fresh.len();
        self.examples.extend(fresh);
        self.origin.extend(std::iter::repeat_n(stage, n));
        Ok(n)
    }

    pub fn from_parts(examples: Vec<MultimodalExample>, origin: Vec<Stage>) -> Self {
        Self { examples, origin }
    }

    /// Stage that produced each example.
    pub fn origins(&self) -> &[Stage] {
        &self.origin
    }

    pub fn examples(&self) -> &[MultimodalExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}
