//! The CIFAR-10 recipe on real data from `$DAWN_DATA_DIR`, stopped early.
//! Usage: cifar_recipe [epochs] [train_limit]

use std::path::PathBuf;

use dawn::data::{load_cifar, CifarVariant};
use dawn::model::{DawnConfig, DawnModel};
use dawn::training::{train_with, Recipe, TrainConfig, TrainIo};

fn main() -> dawn::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(3, |s| s.parse().expect("epochs"));
    let limit: usize = args.next().map_or(2000, |s| s.parse().expect("train_limit"));
    let Some(root) = std::env::var_os("DAWN_DATA_DIR") else {
        eprintln!("set DAWN_DATA_DIR to the directory holding {}", CifarVariant::Cifar10.subdir());
        return Ok(());
    };
    let dir = PathBuf::from(root).join(CifarVariant::Cifar10.subdir());
    let (train, test) = load_cifar(&dir, CifarVariant::Cifar10)?;
    let (train, test) = (train.take(limit)?, test.take(limit / 5)?);
    let cfg = DawnConfig {
        num_classes: 10,
        ..DawnConfig::default()
    };
    let mut model = DawnModel::build(&cfg, 0)?;
    let tc = TrainConfig {
        stop_after: Some(epochs),
        ..TrainConfig::recipe(Recipe::Cifar)
    };
    let io = TrainIo {
        out_dir: None,
        on_epoch: Some(Box::new(|r| {
            println!("epoch {} lr {} loss {:.4} test {:.4}", r.epoch, r.lr, r.loss.total, r.test_acc.unwrap_or(0.0))
        })),
    };
    train_with(&mut model, &train, Some(&test), &tc, io)?;
    Ok(())
}
