//! One scene of the synthetic world in all three modalities.

use mmchain::world::{gen_corpus, PartitionCounts, SpeakerId, World, WorldConfig};

fn main() -> mmchain::Result<()> {
    let world = World::new(WorldConfig::default())?;
    let cfg = world.config();
    println!("{} scenes, {} speakers", cfg.num_scenes(), world.num_speakers());

    let scene = world.scenes().nth(137).expect("scene exists");
    let caption = world.caption_of(&scene);
    println!("caption: {:?}", caption.text());

    for id in [0, 5] {
        let x = world.synth_speech(&caption, SpeakerId(id), 1)?;
        let first: Vec<String> = x.frame(0).iter().map(|v| format!("{v:+.2}")).collect();
        println!("speaker {id}: {} frames x {}, frame 0 = [{}]", x.num_frames(), x.frame_dim(), first.join(" "));
    }

    let img = world.render_image(&scene);
    let (h, w, _) = img.dims();
    for r in 0..h {
        let row: String = (0..w).map(|c| if img.get(r, c, 0) > 0.5 { '#' } else { '.' }).collect();
        println!("{row}");
    }

    let ds = gen_corpus(&world, &PartitionCounts::default(), 0)?;
    for (name, part) in ds.partitions() {
        println!("{name:>16}: {:>4} examples", part.len());
    }
    Ok(())
}
