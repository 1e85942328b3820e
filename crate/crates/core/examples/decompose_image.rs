//! Export the sub-bands of a synthetic image using linear predict weights.
//! Usage: decompose_image [out_dir]

use std::path::PathBuf;

use dawn::cli::{decompose_image, set_predict_weights};
use dawn::model::{DawnConfig, DawnModel, Levels};
use dawn::Tensor;

fn main() -> dawn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "decomposition".into()));
    let size = 64;
    let pixels: Vec<f32> = (0..3 * size * size)
        .map(|i| {
            let (r, c) = ((i / size) % size, i % size);
            let disc = ((r as f32 - 32.0).powi(2) + (c as f32 - 32.0).powi(2)).sqrt() < 20.0;
            if disc { 0.8 } else { 0.2 + 0.1 * ((c / 4) % 2) as f32 }
        })
        .collect();
    let image = Tensor::new([1, 3, size, size], pixels)?;
    let cfg = DawnConfig {
        input_size: size,
        init_channels: 0,
        levels: Levels::Fixed(3),
        ..DawnConfig::default()
    };
    let mut model = DawnModel::build(&cfg, 0)?;
    set_predict_weights(&mut model);
    let d = decompose_image(&mut model, &image, 3, 10.0, &out)?;
    for f in &d.files {
        println!("{}", f.display());
    }
    println!("max reconstruction error {:.2e}", d.max_error);
    Ok(())
}
