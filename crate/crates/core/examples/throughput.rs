//! Times training steps and video inference at the default configuration.

use std::time::Instant;

use gsfm::dataio::{generate_sequence, SynthConfig};
use gsfm::model::{Gsfm, GsfmConfig, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let videos: Vec<_> = (0..8)
        .map(|seed| generate_sequence(&SynthConfig { seed, ..SynthConfig::default() }, 12))
        .collect::<Result<_, _>>()?;
    let model = Gsfm::new(GsfmConfig::default())?;
    let mut trainer = Trainer::new(model, TrainConfig { batch_size: 4, pretrain_steps: 0, ..TrainConfig::default() })?;
    let start = Instant::now();
    for _ in 0..5 {
        trainer.run_step(&videos)?;
    }
    let per_step = start.elapsed().as_secs_f64() / 5.0;
    println!("train: {per_step:.3} s/step (batch 4), {:.3} s/sample", per_step / 4.0);
    let v = &videos[0];
    let start = Instant::now();
    trainer.model.segment_video(&v.frames, v.labels[0].as_ref().unwrap(), v.num_objects)?;
    println!("infer: {:.3} s per 12-frame video", start.elapsed().as_secs_f64());
    Ok(())
}
