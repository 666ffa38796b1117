//! Run one training protocol end to end and print the per-stage metrics.
//!
//! `cargo run --release --example chain_protocol -- mmc2 [seed]`

use mmchain::chain::{ChainConfig, Mode, Trainer};
use mmchain::metrics::{write_csv, ClassifierConfig, WorldClassifier};
use mmchain::world::{gen_corpus, PartitionCounts, World, WorldConfig};

fn main() -> mmchain::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mode: Mode = args.next().as_deref().unwrap_or("mmc2").parse()?;
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let world = World::new(WorldConfig::default())?;
    let data = gen_corpus(&world, &PartitionCounts::default(), seed)?;
    let classifier = WorldClassifier::train(&world, &ClassifierConfig::default())?;
    let cfg = ChainConfig::default();
    let trainer = Trainer {
        cfg: &cfg,
        mode,
        data: &data,
        world: &world,
        classifier: &classifier,
        seed,
        config_hash: "example".into(),
    };
    let (_, reports) = trainer.run()?;
    write_csv(std::io::stdout(), &reports)
}
