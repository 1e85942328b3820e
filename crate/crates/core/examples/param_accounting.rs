//! Parameter counts of the reference configurations, per block.

use dawn::model::{param_count, reference_configs, Levels};

fn main() -> dawn::Result<()> {
    println!("{:>2} {:>2} {:>2} {:>10} {:>10} {:>8}", "k", "h", "l", "ours", "reference", "dev");
    for (cfg, reference) in reference_configs() {
        let Levels::Fixed(l) = cfg.levels else { unreachable!() };
        let ours = param_count(&cfg)?.total();
        let dev = (ours as f64 / reference as f64 - 1.0) * 100.0;
        println!("{:>2} {:>2} {:>2} {ours:>10} {reference:>10} {dev:>+7.2}%", cfg.kernel_size, cfg.hidden_layers, l);
    }
    Ok(())
}
