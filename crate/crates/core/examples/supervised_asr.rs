//! Train the speech recognizer on the paired partition and watch dev CER.
//!
//! `cargo run --release --example supervised_asr -- [epochs]`

use mmchain::autodiff::{adam_step, AdamState};
use mmchain::metrics::corpus_cer;
use mmchain::models::{asr, ComponentKind, ComponentParams, Dims, ModelConfig};
use mmchain::world::{gen_corpus, PartitionCounts, World, WorldConfig};

fn main() -> mmchain::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let world = World::new(WorldConfig::default())?;
    let data = gen_corpus(&world, &PartitionCounts::default(), 0)?;
    let mut m = ComponentParams::init(ComponentKind::Asr, &Dims::from_world(world.config()), &ModelConfig::default(), 0)?;
    let mut adam = AdamState::new(&m.params, 3e-3);

    for epoch in 1..=epochs {
        let mut total = 0.0;
        for batch in data.paired.chunks(8) {
            m.params.zero_grad();
            for e in batch {
                let (x, y) = (e.x.as_ref().unwrap(), e.y.as_ref().unwrap());
                let mut s = m.session();
                let (loss, _) = asr::forward(&m, &mut s, x, y)?;
                total += s.scalar(loss);
                let g = s.backward(loss)?;
                m.params.accumulate(&g)?;
            }
            m.params.scale_grads(1.0 / batch.len() as f64);
            adam_step(&mut m.params, &mut adam)?;
        }
        if epoch % 5 == 0 || epoch == epochs {
            let hyps = data
                .dev
                .iter()
                .map(|e| asr::decode(&m, e.x.as_ref().unwrap(), 3))
                .collect::<mmchain::Result<Vec<_>>>()?;
            let pairs = data.dev.iter().zip(&hyps).map(|(e, h)| (e.y.as_ref().unwrap(), h));
            println!(
                "epoch {epoch:>3}  loss {:.4}  dev CER {:.2}%",
                total / data.paired.len() as f64,
                corpus_cer(pairs)?
            );
        }
    }
    let e = &data.dev[0];
    println!("{:?} -> {:?}", e.y.as_ref().unwrap().text(), asr::decode(&m, e.x.as_ref().unwrap(), 3)?.text());
    Ok(())
}
