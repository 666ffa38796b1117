//! The command-line workflow as library calls: generate a dataset, train,
//! evaluate a stage checkpoint, and gradient-check a component.

use mmchain::autodiff::GradCheck;
use mmchain::chain::Mode;
use mmchain::cli::{cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_train, EvalArgs, RunConfig, Split, TrainArgs};
use mmchain::metrics::csv_string;
use mmchain::models::ComponentKind;

fn main() -> mmchain::Result<()> {
    let dir = std::env::temp_dir().join("mmchain-pipeline");
    std::fs::create_dir_all(&dir)?;
    let mut cfg = RunConfig::parse(include_str!("../../../configs/toy.toml"))?;
    cfg.chain.epochs.paired = 4;
    cfg.chain.epochs.unpaired = 1;
    cfg.chain.epochs.speech_only = 1;
    cfg.chain.epochs.image_only = 1;

    let data = dir.join("toy.bin");
    let manifest = cmd_gen_data(&cfg, &data, true)?;
    println!("dataset {} ({} partitions)", data.display(), manifest.partitions.len());

    let run = dir.join("mmc1");
    let reports = cmd_train(&TrainArgs {
        config: &cfg,
        dataset: &data,
        mode: Mode::Mmc1,
        out: &run,
        overwrite: true,
    })?;
    print!("{}", csv_string(&reports)?);

    let eval = cmd_eval(&EvalArgs {
        config: &cfg,
        checkpoint: &run.join("stage-4-image-only"),
        dataset: &data,
        split: Split::Dev,
        beam: Some(1),
        allow_test: false,
    })?;
    print!("{}", csv_string(&[eval])?);

    let (_, text) = cmd_gradcheck(&[ComponentKind::Tts], 0, 1, &GradCheck::default())?;
    print!("{text}");
    Ok(())
}
