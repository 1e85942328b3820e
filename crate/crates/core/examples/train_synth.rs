//! Train a small model on the synthetic texture set until 95% test accuracy.

use dawn::data::{synth_textures, SynthSpec};
use dawn::model::{DawnConfig, DawnModel, Levels};
use dawn::training::{train_with, TrainConfig, TrainIo};

fn main() -> dawn::Result<()> {
    let (train, test) = synth_textures(&SynthSpec::default())?;
    let cfg = DawnConfig {
        init_channels: 8,
        levels: Levels::Fixed(3),
        num_classes: train.num_classes(),
        ..DawnConfig::default()
    };
    let mut model = DawnModel::build(&cfg, 7)?;
    let tc = TrainConfig {
        epochs: 60,
        batch_size: 16,
        seed: 7,
        target_accuracy: Some(0.95),
        ..TrainConfig::default()
    };
    let io = TrainIo {
        out_dir: None,
        on_epoch: Some(Box::new(|r| {
            println!(
                "epoch {:>2} loss {:.4} (ce {:.4}) train {:.3} test {:.3}",
                r.epoch,
                r.loss.total,
                r.loss.cross_entropy,
                r.train_acc,
                r.test_acc.unwrap_or(0.0)
            )
        })),
    };
    let history = train_with(&mut model, &train, Some(&test), &tc, io)?;
    println!("stopped after {} epochs", history.epochs.len());
    Ok(())
}
