//! Training protocols: supervised pretraining, the dual-loop (MMC1) and
//! single-loop (MMC2) chains, label propagation and the fully paired topline,
//! driven through a fixed four-stage schedule.

mod eval;
mod labelprop;
pub mod steps;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use eval::{evaluate, EvalContext};
pub use labelprop::{pseudo_pair, PseudoPool};
pub use steps::{
    composite, mmc1_speech_chain, mmc1_text, mmc1_visual_chain, mmc2_sp_img_to_text, mmc2_text_to_sp_img,
    reconstruct_from_caption, supervised_grads, ChainInput, GradSet, Losses,
};

use crate::autodiff::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, WorldClassifier};
use crate::models::{spk, ComponentKind, ComponentParams, Dims, ModelConfig};
use crate::rng;
use crate::world::{topline_pairs, MultimodalExample, PartitionedDataset, SpeechSeq, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Dual loop: speech chain (ASR, TTS) and visual chain (IC, IG).
    Mmc1,
    /// Single loop: ImgSp2Txt, TTS and IG.
    Mmc2,
    /// Generate missing modalities, then retrain everything supervised.
    LabelProp,
    /// Every training scene paired; one supervised stage.
    Topline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Mmc1, Mode::Mmc2, Mode::LabelProp, Mode::Topline];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Mmc1 => "mmc1",
            Mode::Mmc2 => "mmc2",
            Mode::LabelProp => "labelprop",
            Mode::Topline => "supervised-topline",
        }
    }

    /// Components whose dev metrics the mode reports.
    pub fn reported(self) -> &'static [ComponentKind] {
        use ComponentKind::*;
        match self {
            Mode::Mmc1 => &[Asr, Ic, Tts, Ig],
            Mode::Mmc2 => &[ImgSp2Txt, Tts, Ig],
            Mode::LabelProp | Mode::Topline => &[Asr, Ic, ImgSp2Txt, Tts, Ig],
        }
    }

    /// Component whose dev CER is the headline number.
    pub fn transcriber(self) -> ComponentKind {
        match self {
            Mode::Mmc2 => ComponentKind::ImgSp2Txt,
            _ => ComponentKind::Asr,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mode {s:?}; expected mmc1, mmc2, labelprop or supervised-topline")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Paired,
    Unpaired,
    SpeechOnly,
    ImageOnly,
    Topline,
}

impl Stage {
    pub const SCHEDULE: [Stage; 4] = [Stage::Paired, Stage::Unpaired, Stage::SpeechOnly, Stage::ImageOnly];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Paired => "paired",
            Stage::Unpaired => "unpaired",
            Stage::SpeechOnly => "speech-only",
            Stage::ImageOnly => "image-only",
            Stage::Topline => "topline",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        [Stage::Paired, Stage::Unpaired, Stage::SpeechOnly, Stage::ImageOnly, Stage::Topline]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::data(format!("unknown stage {s:?}")))
    }

    /// Unlabelled data the stage consumes.
    pub fn data(self, ds: &PartitionedDataset) -> Vec<&MultimodalExample> {
        match self {
            Stage::Paired | Stage::Topline => Vec::new(),
            Stage::Unpaired => ds
                .unpaired_speech
                .iter()
                .chain(&ds.unpaired_text)
                .chain(&ds.unpaired_image)
                .collect(),
            Stage::SpeechOnly => ds.speech_only.iter().collect(),
            Stage::ImageOnly => ds.image_only.iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub asr: f64,
    pub tts: f64,
    pub ic: f64,
    pub ig: f64,
    pub imgsp2txt: f64,
    pub spkembed: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            asr: 3e-3,
            tts: 3e-3,
            ic: 3e-3,
            ig: 3e-3,
            imgsp2txt: 3e-3,
            spkembed: 3e-3,
        }
    }
}

impl LearningRates {
    pub fn full_scale() -> Self {
        Self {
            asr: 1e-4,
            tts: 2.5e-4,
            ic: 1e-4,
            ig: 2e-4,
            imgsp2txt: 1e-4,
            spkembed: 1e-4,
        }
    }

    pub fn get(&self, k: ComponentKind) -> f64 {
        match k {
            ComponentKind::Asr => self.asr,
            ComponentKind::Tts => self.tts,
            ComponentKind::Ic => self.ic,
            ComponentKind::Ig => self.ig,
            ComponentKind::ImgSp2Txt => self.imgsp2txt,
            ComponentKind::SpkEmbed => self.spkembed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageEpochs {
    pub paired: usize,
    pub unpaired: usize,
    pub speech_only: usize,
    pub image_only: usize,
    pub topline: usize,
}

impl Default for StageEpochs {
    fn default() -> Self {
        Self {
            paired: 12,
            unpaired: 4,
            speech_only: 4,
            image_only: 4,
            topline: 20,
        }
    }
}

impl StageEpochs {
    pub fn get(&self, s: Stage) -> usize {
        match s {
            Stage::Paired => self.paired,
            Stage::Unpaired => self.unpaired,
            Stage::SpeechOnly => self.speech_only,
            Stage::ImageOnly => self.image_only,
            Stage::Topline => self.topline,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub lr: LearningRates,
    pub beam: usize,
    pub epochs: StageEpochs,
    pub batch_size: usize,
    /// Mix supervised paired batches into chain stages for every component
    /// the stage updates.
    pub replay: bool,
    pub labelprop_rounds: usize,
    pub is_splits: usize,
    pub model: ModelConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            lr: LearningRates::default(),
            beam: 3,
            epochs: StageEpochs::default(),
            batch_size: 8,
            replay: true,
            labelprop_rounds: 1,
            is_splits: 2,
            model: ModelConfig::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let lrs = ComponentKind::ALL.map(|k| self.lr.get(k));
        if lrs.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.beam == 0 || self.batch_size == 0 || self.labelprop_rounds == 0 || self.is_splits == 0 {
            return Err(Error::config("beam, batch_size, labelprop_rounds and is_splits must be at least 1"));
        }
        Ok(())
    }
}

/// Which components each stage may update.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub stages: Vec<(Stage, usize, BTreeSet<ComponentKind>)>,
}

impl StagePlan {
    pub fn new(mode: Mode, epochs: &StageEpochs) -> Self {
        use ComponentKind::*;
        let set = |ks: &[ComponentKind]| ks.iter().copied().collect::<BTreeSet<_>>();
        let all = set(&ComponentKind::ALL);
        let stages = match mode {
            Mode::Topline => vec![(Stage::Topline, all)],
            _ => Stage::SCHEDULE
                .into_iter()
                .map(|s| {
                    let t = match (mode, s) {
                        (_, Stage::Paired) => all.clone(),
                        (Mode::Mmc1, Stage::Unpaired) => set(&[Asr, Tts, Ic, Ig]),
                        (Mode::Mmc1, Stage::SpeechOnly) => set(&[Asr, Tts, Ic]),
                        (Mode::Mmc1, Stage::ImageOnly) => set(&[Asr, Ic, Ig]),
                        (Mode::Mmc2, Stage::Unpaired) => set(&[ImgSp2Txt, Tts, Ig]),
                        (Mode::Mmc2, Stage::SpeechOnly) => set(&[ImgSp2Txt, Tts]),
                        (Mode::Mmc2, Stage::ImageOnly) => set(&[ImgSp2Txt, Ig]),
                        _ => set(&[Asr, Tts, Ic, Ig, ImgSp2Txt]),
                    };
                    (s, t)
                })
                .collect(),
        };
        Self {
            stages: stages.into_iter().map(|(s, t)| (s, epochs.get(s), t)).collect(),
        }
    }
}

/// Parameters plus optimizer state of one component.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainable {
    pub params: ComponentParams,
    pub adam: AdamState,
}

/// Everything a protocol updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub components: BTreeMap<ComponentKind, Trainable>,
    /// Speaker embedding used when synthesizing text-only data.
    pub default_speaker: Vec<f64>,
    pub beam: usize,
}

impl ChainState {
    pub fn init(dims: &Dims, cfg: &ChainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut components = BTreeMap::new();
        for k in ComponentKind::ALL {
            let params = ComponentParams::init(k, dims, &cfg.model, seed)?;
            let adam = AdamState::new(&params.params, cfg.lr.get(k));
            components.insert(k, Trainable { params, adam });
        }
        Ok(Self {
            components,
            default_speaker: vec![0.0; cfg.model.spk_dim],
            beam: cfg.beam,
        })
    }

    pub fn params(&self, k: ComponentKind) -> Result<&ComponentParams> {
        self.components
            .get(&k)
            .map(|t| &t.params)
            .ok_or_else(|| Error::data(format!("no {k} component in this state")))
    }

    pub fn speaker_embedding(&self, x: &SpeechSeq) -> Result<Vec<f64>> {
        spk::embed(self.params(ComponentKind::SpkEmbed)?, x)
    }

    /// Mean embedding over `speech`.
    pub fn set_default_speaker<'a>(&mut self, speech: impl IntoIterator<Item = &'a SpeechSeq>) -> Result<()> {
        let mut sum = vec![0.0; self.default_speaker.len()];
        let mut n = 0;
        for x in speech {
            for (s, v) in sum.iter_mut().zip(self.speaker_embedding(x)?) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::data("no speech to average a default speaker from"));
        }
        self.default_speaker = sum.into_iter().map(|s| s / n as f64).collect();
        Ok(())
    }

    /// One Adam step per component in `g`, on its mean gradient.
    pub fn apply(&mut self, g: GradSet) -> Result<()> {
        for (k, grads, n) in g.into_iter() {
            let t = self
                .components
                .get_mut(&k)
                .ok_or_else(|| Error::data(format!("no {k} component in this state")))?;
            t.params.params.zero_grad();
            t.params.params.accumulate(&grads)?;
            t.params.params.scale_grads(1.0 / n as f64);
            adam_step(&mut t.params.params, &mut t.adam)?;
        }
        Ok(())
    }

    /// Per-component parameter checksums.
    pub fn fingerprint(&self) -> BTreeMap<ComponentKind, BTreeMap<String, u64>> {
        self.components
            .iter()
            .map(|(k, t)| (*k, t.params.params.fingerprint()))
            .collect()
    }

    /// Components whose parameters differ from `before`.
    pub fn changed_since(&self, before: &BTreeMap<ComponentKind, BTreeMap<String, u64>>) -> BTreeSet<ComponentKind> {
        self.fingerprint()
            .into_iter()
            .filter(|(k, f)| before.get(k) != Some(f))
            .map(|(k, _)| k)
            .collect()
    }
}

/// One unit of work inside an epoch.
#[derive(Clone, Copy, Debug)]
enum Item<'a> {
    Supervised(ComponentKind, &'a MultimodalExample),
    Chain(&'a MultimodalExample),
}

/// Dispatches an unlabelled example to the chain step its modalities call for.
pub fn chain_item(st: &ChainState, mode: Mode, e: &MultimodalExample, g: &mut GradSet) -> Result<Losses> {
    use crate::world::Pairing;
    if e.pairing == Pairing::ModalityOnly {
        return Ok(steps::composite(st, mode, e, g)?.1);
    }
    match (mode, &e.x, &e.y, &e.z) {
        (Mode::Mmc2, x, None, z) if x.is_some() || z.is_some() => {
            Ok(steps::mmc2_sp_img_to_text(st, x.as_ref(), z.as_ref(), g)?.1)
        }
        (Mode::Mmc2, None, Some(y), None) => Ok(vec![(ComponentKind::ImgSp2Txt, steps::mmc2_text_to_sp_img(st, y, g)?)]),
        (Mode::Mmc1, Some(x), None, None) => Ok(steps::mmc1_speech_chain(st, ChainInput::Speech(x), g)?.1),
        (Mode::Mmc1, None, None, Some(z)) => Ok(steps::mmc1_visual_chain(st, ChainInput::Image(z), g)?.1),
        (Mode::Mmc1, None, Some(y), None) => steps::mmc1_text(st, y, g),
        _ => Err(Error::data(format!("no {mode} chain step for this combination of modalities"))),
    }
}

/// Shared inputs of a training run.
pub struct Trainer<'a> {
    pub cfg: &'a ChainConfig,
    pub mode: Mode,
    pub data: &'a PartitionedDataset,
    pub world: &'a World,
    pub classifier: &'a WorldClassifier,
    pub seed: u64,
    pub config_hash: String,
}

impl Trainer<'_> {
    pub fn plan(&self) -> StagePlan {
        StagePlan::new(self.mode, &self.cfg.epochs)
    }

    pub fn init_state(&self) -> Result<ChainState> {
        ChainState::init(&Dims::from_world(self.world.config()), self.cfg, self.seed)
    }

    /// Runs one stage of the plan in place, then evaluates on dev.
    pub fn run_stage(&self, st: &mut ChainState, stage: Stage, pool: &mut PseudoPool) -> Result<MetricsReport> {
        let t0 = Instant::now();
        let plan = self.plan();
        let (_, epochs, trainable) = plan
            .stages
            .iter()
            .find(|(s, _, _)| *s == stage)
            .ok_or_else(|| Error::config(format!("stage {} is not part of the {} plan", stage.name(), self.mode)))?
            .clone();
        let unlabelled = stage.data(self.data);
        // label propagation always has the paired data to retrain on
        let skip = !matches!(stage, Stage::Paired | Stage::Topline) && self.mode != Mode::LabelProp && unlabelled.is_empty();
        if skip {
            log::warn!("stage {}: no data, skipped", stage.name());
        } else {
            match (stage, self.mode) {
                (Stage::Paired, _) => {
                    let items = supervised_items(&self.data.paired, &trainable);
                    self.epochs(st, stage, epochs, &items)?;
                    st.set_default_speaker(self.data.paired.iter().filter_map(|e| e.x.as_ref()))?;
                }
                (Stage::Topline, _) => {
                    let pairs = topline_pairs(self.world, self.data)?;
                    let items = supervised_items(&pairs, &trainable);
                    self.epochs(st, stage, epochs, &items)?;
                    st.set_default_speaker(pairs.iter().filter_map(|e| e.x.as_ref()))?;
                }
                (_, Mode::LabelProp) => {
                    for round in 0..self.cfg.labelprop_rounds {
                        pool.generate(st, stage, &unlabelled)?;
                        log::info!("stage {} round {round}: {} pseudo-pairs in total", stage.name(), pool.len());
                        let mut items = supervised_items(&self.data.paired, &trainable);
                        items.extend(supervised_items(pool.examples(), &trainable));
                        self.epochs(st, stage, epochs, &items)?;
                    }
                }
                _ => {
                    let mut items: Vec<Item> = unlabelled.iter().map(|e| Item::Chain(e)).collect();
                    if self.cfg.replay {
                        items.extend(supervised_items(&self.data.paired, &trainable));
                    }
                    self.epochs(st, stage, epochs, &items)?;
                }
            }
        }
        let ctx = EvalContext {
            classifier: self.classifier,
            beam: self.cfg.beam,
            is_splits: self.cfg.is_splits,
            seed: self.seed,
        };
        let mut report = MetricsReport::new(stage.name(), self.mode.name(), self.seed, self.config_hash.clone());
        for (c, m, v) in evaluate(st, self.mode.reported(), &self.data.dev, &ctx)? {
            report.push(c, m, v)?;
        }
        report.wall_seconds = t0.elapsed().as_secs_f64();
        log::info!(
            "{} stage {} done in {:.1}s: {}",
            self.mode,
            stage.name(),
            report.wall_seconds,
            report
                .rows
                .iter()
                .map(|r| format!("{}/{}={:.3}", r.component, r.metric.name(), r.value))
                .collect::<Vec<_>>()
                .join(" ")
        );
        Ok(report)
    }

    fn epochs(&self, st: &mut ChainState, stage: Stage, epochs: usize, items: &[Item]) -> Result<()> {
        let mut order: Vec<Item> = items.to_vec();
        for epoch in 0..epochs {
            // the paired stage is shared by every mode, so its order must be too
            let scope = if stage == Stage::Paired { "shared" } else { self.mode.name() };
            let mut r = rng::stream(self.seed, &format!("{scope}/{}/epoch/{epoch}", stage.name()));
            order.shuffle(&mut r);
            let mut totals: BTreeMap<ComponentKind, (f64, usize)> = BTreeMap::new();
            for batch in order.chunks(self.cfg.batch_size) {
                let mut g = GradSet::new();
                for item in batch {
                    let losses = match *item {
                        Item::Supervised(k, e) => vec![(k, steps::supervised_grads(st, k, e, &mut g)?)],
                        Item::Chain(e) => chain_item(st, self.mode, e, &mut g)?,
                    };
                    for (k, l) in losses {
                        let t = totals.entry(k).or_default();
                        t.0 += l;
                        t.1 += 1;
                    }
                }
                st.apply(g)?;
            }
            log::debug!(
                "{} {} epoch {epoch}: {}",
                self.mode,
                stage.name(),
                totals
                    .iter()
                    .map(|(k, (s, n))| format!("{k}={:.4}", s / *n as f64))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
        Ok(())
    }

    /// Every stage of the plan from a fresh state.
    pub fn run(&self) -> Result<(ChainState, Vec<MetricsReport>)> {
        let mut st = self.init_state()?;
        let mut pool = PseudoPool::default();
        let mut reports = Vec::new();
        for (stage, _, _) in self.plan().stages {
            reports.push(self.run_stage(&mut st, stage, &mut pool)?);
        }
        Ok((st, reports))
    }
}

fn supervised_items<'a>(examples: &'a [MultimodalExample], trainable: &BTreeSet<ComponentKind>) -> Vec<Item<'a>> {
    let mut out = Vec::new();
    for e in examples {
        for &k in trainable {
            let ok = match k {
                ComponentKind::Asr | ComponentKind::Tts => e.x.is_some() && e.y.is_some(),
                ComponentKind::Ic | ComponentKind::Ig => e.z.is_some() && e.y.is_some(),
                ComponentKind::ImgSp2Txt => e.y.is_some() && (e.x.is_some() || e.z.is_some()),
                ComponentKind::SpkEmbed => e.x.as_ref().and_then(SpeechSeq::speaker).is_some(),
            };
            if ok {
                out.push(Item::Supervised(k, e));
            }
        }
    }
    out
}
