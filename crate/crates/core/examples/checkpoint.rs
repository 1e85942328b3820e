//! Train briefly, save a checkpoint, reload it and evaluate both copies.

use dawn::data::{synth_textures, SynthSpec};
use dawn::model::{DawnConfig, DawnModel, Levels};
use dawn::training::{evaluate, train, TrainConfig};

fn main() -> dawn::Result<()> {
    let (train_set, test_set) = synth_textures(&SynthSpec {
        size: 16,
        ..SynthSpec::default()
    })?;
    let cfg = DawnConfig {
        input_size: 16,
        init_channels: 4,
        levels: Levels::Fixed(2),
        num_classes: 4,
        ..DawnConfig::default()
    };
    let mut model = DawnModel::build(&cfg, 1)?;
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, None, &tc)?;

    let path = std::env::temp_dir().join("dawn_example.ckpt");
    model.save_checkpoint(&path)?;
    let mut loaded = DawnModel::load_checkpoint(&path, &cfg)?;
    let a = evaluate(&mut model, &test_set, 32)?;
    let b = evaluate(&mut loaded, &test_set, 32)?;
    println!("{} bytes at {}", std::fs::metadata(&path).map_or(0, |m| m.len()), path.display());
    println!("trained {:.4}  reloaded {:.4}", a.accuracy(), b.accuracy());
    std::fs::remove_file(&path).ok();
    Ok(())
}
