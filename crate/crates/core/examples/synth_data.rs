//! Generate the synthetic texture set, print statistics and export a few
//! images as PGM.
//! Usage: synth_data [out_dir]

use dawn::data::{augment, synth_textures, AugmentPolicy, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dawn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "textures".into());
    let (train, test) = synth_textures(&SynthSpec::default())?;
    println!("train {} test {} classes {:?}", train.len(), test.len(), train.class_names);
    println!("histogram {:?}", train.class_histogram());
    let (mean, std) = train.channel_stats();
    println!("channel mean {mean:.3?} std {std:.3?}");

    let (x, _) = train.batch(&[0, 1, 2, 3])?;
    let aug = augment(&x, &AugmentPolicy::cifar(), &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("augmented batch {:?}, max change {:.3}", aug.shape(), aug.max_abs_diff(&x));
    for f in train.export_pgm(&out, 8)? {
        println!("{}", f.display());
    }
    Ok(())
}
