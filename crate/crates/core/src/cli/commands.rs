use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::autodiff::{GradCheck, GradCheckReport};
use crate::chain::{evaluate, ChainState, EvalContext, Mode, PseudoPool, Stage, Trainable, Trainer};
use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::metrics::{csv_string, MetricsReport, WorldClassifier};
use crate::models::probe::{probe, probe_triple};
use crate::models::{asr, ic, ig, imgsp2txt, spk, tts, Checkpoint, ComponentKind};
use crate::world::text::vocabulary;
use crate::world::{gen_corpus, io, PartitionedDataset, World};

/// Human-readable summary written next to a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub counts: crate::world::PartitionCounts,
    /// Partition name, examples, distinct scenes.
    pub partitions: Vec<(String, usize, usize)>,
    pub vocabulary: Vec<String>,
    pub scene_space: usize,
    pub scenes_used: usize,
    pub sha256: String,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Generates the corpus for `cfg` and writes it with its manifest.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<Manifest> {
    cfg.validate()?;
    let world = World::new(cfg.world.clone())?;
    let ds = gen_corpus(&world, &cfg.counts, cfg.seed)?;
    let hash = cfg.hash();
    let bytes = io::encode(&ds, &cfg.world, Some(&hash))?;
    let manifest = Manifest {
        config_hash: hash,
        seed: cfg.seed,
        counts: cfg.counts.clone(),
        partitions: ds
            .partitions()
            .iter()
            .map(|(n, p)| (n.to_string(), p.len(), PartitionedDataset::scene_set(p).len()))
            .collect(),
        vocabulary: vocabulary(),
        scene_space: cfg.world.num_scenes(),
        scenes_used: cfg.counts.total_scenes(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    };
    let mpath = manifest_path(out);
    if !overwrite && mpath.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists; pass --overwrite to replace it", mpath.display()),
        )));
    }
    codec::write_file(out, &bytes, overwrite)?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::data(e.to_string()))?;
    codec::write_file(&mpath, &json, true)?;
    log::info!("wrote {} ({} bytes)", out.display(), bytes.len());
    Ok(manifest)
}

fn load_dataset(cfg: &RunConfig, path: &Path) -> Result<PartitionedDataset> {
    let (header, ds) = io::read(path)?;
    if header.world != cfg.world {
        return Err(Error::data("dataset was generated for a different world than the config describes"));
    }
    if header.counts != cfg.counts {
        log::warn!("dataset partition counts differ from the config; using the dataset");
    }
    Ok(ds)
}

fn classifier(cfg: &RunConfig, world: &World, cached: Option<&Path>) -> Result<WorldClassifier> {
    if let Some(p) = cached.filter(|p| p.exists()) {
        return WorldClassifier::decode(&codec::read_file(p)?, &cfg.world);
    }
    let clf = WorldClassifier::train(world, &cfg.classifier)?;
    log::info!("world classifier: {:.3} held-out accuracy", clf.dev_accuracy);
    Ok(clf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Progress {
    config_hash: String,
    seed: u64,
    mode: Mode,
    dataset_sha256: String,
    completed: Vec<Stage>,
}

#[derive(Serialize, Deserialize)]
struct StageState {
    default_speaker: Vec<f64>,
    beam: usize,
}

pub struct TrainArgs<'a> {
    pub config: &'a RunConfig,
    pub dataset: &'a Path,
    pub mode: Mode,
    pub out: &'a Path,
    pub overwrite: bool,
}

fn stage_dir(out: &Path, index: usize, stage: Stage) -> PathBuf {
    out.join(format!("stage-{}-{}", index + 1, stage.name()))
}

fn save_state(dir: &Path, st: &ChainState, hash: &str, stage: Stage) -> Result<()> {
    for (k, t) in &st.components {
        let ck = Checkpoint {
            component: t.params.clone(),
            adam: Some(t.adam.clone()),
            config_hash: hash.to_string(),
            stage: stage.name().to_string(),
        };
        ck.save(&dir.join(format!("{k}.ckpt")), true)?;
    }
    let extra = StageState {
        default_speaker: st.default_speaker.clone(),
        beam: st.beam,
    };
    let json = serde_json::to_vec(&extra).map_err(|e| Error::data(e.to_string()))?;
    codec::write_file(&dir.join("state.json"), &json, true)
}

fn load_state(dir: &Path) -> Result<ChainState> {
    let mut components = BTreeMap::new();
    for k in ComponentKind::ALL {
        let ck = load_checkpoint(&dir.join(format!("{k}.ckpt")))?;
        let adam = ck
            .adam
            .ok_or_else(|| Error::data(format!("{k} checkpoint has no optimizer state")))?;
        components.insert(
            k,
            Trainable {
                params: ck.component,
                adam,
            },
        );
    }
    let extra: StageState = serde_json::from_slice(&codec::read_file(&dir.join("state.json"))?)
        .map_err(|e| Error::data(format!("state.json: {e}")))?;
    Ok(ChainState {
        components,
        default_speaker: extra.default_speaker,
        beam: extra.beam,
    })
}

/// Loads a checkpoint whose file stem names its component.
fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        if let Ok(named) = ComponentKind::from_str(stem) {
            if named != ck.component.kind {
                return Err(Error::data(format!(
                    "{} holds a {} checkpoint",
                    path.display(),
                    ck.component.kind
                )));
            }
        }
    }
    Ok(ck)
}

const POOL_MAGIC: &[u8; 8] = b"MMCPOOL1";

fn save_pool(path: &Path, pool: &PseudoPool, stages: &[Stage]) -> Result<()> {
    let mut out = Vec::new();
    codec::put_header(&mut out, POOL_MAGIC, &(pool.len(), stages))?;
    for e in pool.examples() {
        io::put_example(&mut out, e);
    }
    codec::write_file(path, &out, true)
}

fn load_pool(path: &Path, world: &crate::world::WorldConfig) -> Result<PseudoPool> {
    let bytes = codec::read_file(path)?;
    let mut r = Reader::new(&bytes);
    let (n, stages): (usize, Vec<Stage>) = r.header(POOL_MAGIC)?;
    if stages.len() != n {
        return Err(Error::data("pseudo-pair pool header is inconsistent"));
    }
    let examples = (0..n).map(|_| io::read_example(&mut r, world)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(PseudoPool::from_parts(examples, stages))
}

fn write_reports(out: &Path, reports: &[MetricsReport]) -> Result<()> {
    codec::write_file(&out.join("metrics.csv"), csv_string(reports)?.as_bytes(), true)?;
    let json = serde_json::to_vec_pretty(reports).map_err(|e| Error::data(e.to_string()))?;
    codec::write_file(&out.join("reports.json"), &json, true)
}

/// Trains `mode` stage by stage, checkpointing after each stage. A run
/// directory left by an interrupted run with the same config, seed, mode and
/// dataset is resumed from its last completed stage.
pub fn cmd_train(a: &TrainArgs) -> Result<Vec<MetricsReport>> {
    let cfg = a.config;
    cfg.validate()?;
    let hash = cfg.hash();
    let dataset_bytes = codec::read_file(a.dataset)?;
    let dataset_sha = hex::encode(Sha256::digest(&dataset_bytes));
    let (header, data) = io::decode(&dataset_bytes)?;
    if header.world != cfg.world {
        return Err(Error::data("dataset was generated for a different world than the config describes"));
    }
    let world = World::new(cfg.world.clone())?;

    let progress_path = a.out.join("progress.json");
    let mut progress = Progress {
        config_hash: hash.clone(),
        seed: cfg.seed,
        mode: a.mode,
        dataset_sha256: dataset_sha,
        completed: Vec::new(),
    };
    let mut resumed = false;
    if progress_path.exists() {
        let old: Progress = serde_json::from_slice(&codec::read_file(&progress_path)?)
            .map_err(|e| Error::data(format!("progress.json: {e}")))?;
        let same = old.config_hash == progress.config_hash
            && old.seed == progress.seed
            && old.mode == progress.mode
            && old.dataset_sha256 == progress.dataset_sha256;
        let plan_len = crate::chain::StagePlan::new(a.mode, &cfg.chain.epochs).stages.len();
        if same && old.completed.len() < plan_len && !a.overwrite {
            log::info!("resuming after {} completed stage(s)", old.completed.len());
            progress.completed = old.completed;
            resumed = true;
        } else if !a.overwrite {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} already holds a run; pass --overwrite to replace it", a.out.display()),
            )));
        }
    } else if a.out.exists() && a.out.read_dir()?.next().is_some() && !a.overwrite {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} is not empty; pass --overwrite to write into it", a.out.display()),
        )));
    }
    std::fs::create_dir_all(a.out)?;

    let clf_path = a.out.join("classifier.bin");
    let clf = classifier(cfg, &world, resumed.then_some(clf_path.as_path()))?;
    if !resumed {
        codec::write_file(&clf_path, &clf.encode()?, true)?;
    }

    let trainer = Trainer {
        cfg: &cfg.chain,
        mode: a.mode,
        data: &data,
        world: &world,
        classifier: &clf,
        seed: cfg.seed,
        config_hash: hash.clone(),
    };
    let plan = trainer.plan();
    let (mut st, mut pool, mut reports) = if resumed {
        let done = progress.completed.len();
        let dir = stage_dir(a.out, done - 1, progress.completed[done - 1]);
        let pool_path = a.out.join("pool.bin");
        let pool = if pool_path.exists() {
            load_pool(&pool_path, &cfg.world)?
        } else {
            PseudoPool::default()
        };
        let reports: Vec<MetricsReport> = serde_json::from_slice(&codec::read_file(&a.out.join("reports.json"))?)
            .map_err(|e| Error::data(format!("reports.json: {e}")))?;
        (load_state(&dir)?, pool, reports)
    } else {
        (trainer.init_state()?, PseudoPool::default(), Vec::new())
    };

    let mut log_text = String::new();
    for (i, (stage, _, _)) in plan.stages.iter().enumerate() {
        if i < progress.completed.len() {
            continue;
        }
        let t0 = Instant::now();
        let report = trainer.run_stage(&mut st, *stage, &mut pool)?;
        let dir = stage_dir(a.out, i, *stage);
        save_state(&dir, &st, &hash, *stage)?;
        if !pool.is_empty() {
            save_pool(&a.out.join("pool.bin"), &pool, pool.origins())?;
        }
        reports.push(report);
        write_reports(a.out, &reports)?;
        progress.completed.push(*stage);
        let json = serde_json::to_vec_pretty(&progress).map_err(|e| Error::data(e.to_string()))?;
        codec::write_file(&progress_path, &json, true)?;
        let _ = writeln!(
            log_text,
            "mode={} stage={} seed={} config_hash={} seconds={:.2}",
            a.mode,
            stage.name(),
            cfg.seed,
            hash,
            t0.elapsed().as_secs_f64()
        );
    }
    append(&a.out.join("train.log"), &log_text)?;
    Ok(reports)
}

fn append(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split {s:?}; expected dev or test"))),
        }
    }
}

pub struct EvalArgs<'a> {
    pub config: &'a RunConfig,
    /// A stage directory, or one `<component>.ckpt` file.
    pub checkpoint: &'a Path,
    pub dataset: &'a Path,
    pub split: Split,
    pub beam: Option<usize>,
    pub allow_test: bool,
}

/// Evaluates every component found at `checkpoint` on a split.
pub fn cmd_eval(a: &EvalArgs) -> Result<MetricsReport> {
    let cfg = a.config;
    cfg.validate()?;
    if a.split == Split::Test && !a.allow_test {
        return Err(Error::config("evaluating on the test split requires --allow-test"));
    }
    let data = load_dataset(cfg, a.dataset)?;
    let world = World::new(cfg.world.clone())?;
    let (dir, files): (PathBuf, Vec<PathBuf>) = if a.checkpoint.is_dir() {
        let files = ComponentKind::ALL
            .iter()
            .map(|k| a.checkpoint.join(format!("{k}.ckpt")))
            .filter(|p| p.exists())
            .collect();
        (a.checkpoint.to_path_buf(), files)
    } else {
        let dir = a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, vec![a.checkpoint.to_path_buf()])
    };
    let mut checkpoints = BTreeMap::new();
    for f in &files {
        let ck = load_checkpoint(f)?;
        checkpoints.insert(ck.component.kind, ck);
    }
    if checkpoints.is_empty() {
        return Err(Error::data(format!("no checkpoints found at {}", a.checkpoint.display())));
    }
    let wanted: Vec<ComponentKind> = checkpoints.keys().copied().filter(|k| *k != ComponentKind::SpkEmbed).collect();
    if wanted.contains(&ComponentKind::Tts) && !checkpoints.contains_key(&ComponentKind::SpkEmbed) {
        let ck = load_checkpoint(&dir.join("spkembed.ckpt"))
            .map_err(|e| Error::data(format!("evaluating TTS needs spkembed.ckpt beside it: {e}")))?;
        checkpoints.insert(ComponentKind::SpkEmbed, ck);
    }
    let stage = checkpoints.values().next().map(|c| c.stage.clone()).unwrap_or_default();
    let beam = a.beam.unwrap_or(cfg.chain.beam);
    let mut st = ChainState {
        components: BTreeMap::new(),
        default_speaker: Vec::new(),
        beam,
    };
    for (k, ck) in checkpoints {
        if ck.config_hash != cfg.hash() {
            log::warn!("{k} checkpoint was trained under config {}", ck.config_hash);
        }
        let adam = ck.adam.unwrap_or_else(|| crate::autodiff::AdamState::new(&ck.component.params, 1.0));
        st.components.insert(
            k,
            Trainable {
                params: ck.component,
                adam,
            },
        );
    }
    let run_dir = dir.parent().map(|p| p.join("classifier.bin"));
    let clf = classifier(cfg, &world, run_dir.as_deref())?;
    let ctx = EvalContext {
        classifier: &clf,
        beam,
        is_splits: cfg.chain.is_splits,
        seed: cfg.seed,
    };
    let examples = match a.split {
        Split::Dev => &data.dev,
        Split::Test => &data.test,
    };
    let split = match a.split {
        Split::Dev => "dev",
        Split::Test => "test",
    };
    let mut report = MetricsReport::new(stage, format!("eval-{split}"), cfg.seed, cfg.hash());
    for (c, m, v) in evaluate(&st, &wanted, examples, &ctx)? {
        report.push(c, m, v)?;
    }
    Ok(report)
}

/// One line of a gradient-check report.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckRow {
    pub component: ComponentKind,
    pub seed: u64,
    pub tensor: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Finite-difference check of one component's training loss on the probe
/// world.
pub fn gradcheck_component(kind: ComponentKind, seed: u64, checker: &GradCheck) -> Result<GradCheckReport> {
    let m = probe(kind, seed);
    let (x, y, z) = probe_triple(seed, ["ab", "ba c", "cab", "a b", "bc"][seed as usize % 5]);
    let spk_vec: Vec<f64> = (0..m.cfg.spk_dim).map(|i| 0.3 - 0.2 * i as f64).collect();
    checker.run(&m.params, |s| match kind {
        ComponentKind::Asr => Ok(asr::forward(&m, s, &x, &y)?.0),
        ComponentKind::Ic => Ok(ic::forward(&m, s, &z, &y)?.0),
        ComponentKind::Tts => tts::forward(&m, s, &y, &spk_vec, &x),
        ComponentKind::Ig => ig::train_loss(&m, s, &y, &z),
        ComponentKind::ImgSp2Txt => imgsp2txt::train_loss(&m, s, Some(&x), Some(&z), &y),
        ComponentKind::SpkEmbed => {
            let id = x.speaker().ok_or_else(|| Error::data("probe speech has no speaker"))?;
            spk::forward(&m, s, &x, id)
        }
    })
}

/// Runs the gradient check for `components` over `seeds` seeds starting at
/// `seed`. Returns the per-tensor rows and the rendered report.
pub fn cmd_gradcheck(
    components: &[ComponentKind],
    seed: u64,
    seeds: u64,
    checker: &GradCheck,
) -> Result<(Vec<GradcheckRow>, String)> {
    let mut rows = Vec::new();
    let mut text = String::from("component\tseed\ttensor\tmax_rel_error\tstatus\n");
    for &k in components {
        for s in seed..seed + seeds {
            let report = gradcheck_component(k, s, checker)?;
            for t in &report.tensors {
                let _ = writeln!(
                    text,
                    "{k}\t{s}\t{}\t{:.3e}\t{}",
                    t.name,
                    t.max_rel_error,
                    if t.flagged { "FAIL" } else { "ok" }
                );
                rows.push(GradcheckRow {
                    component: k,
                    seed: s,
                    tensor: t.name.clone(),
                    max_rel_error: t.max_rel_error,
                    passed: !t.flagged,
                });
            }
        }
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    let _ = writeln!(text, "{} tensors checked, {failed} failed (tol {:e})", rows.len(), checker.tol);
    Ok((rows, text))
}
