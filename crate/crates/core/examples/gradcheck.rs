//! Finite-difference checks of every differentiable op and of the full
//! composite loss on a toy model.

use dawn::checks::{check_op, model_gradcheck, CHECKED_OPS};
use dawn::tensor::gradcheck::GradCheckConfig;
use dawn::training::TrainConfig;

fn main() -> dawn::Result<()> {
    let cfg = GradCheckConfig {
        samples: Some(64),
        ..GradCheckConfig::default()
    };
    for op in CHECKED_OPS {
        let r = check_op(op, 3, &cfg)?;
        println!("{op:<16} {:>3} coords  max rel err {:.2e}", r.checked, r.max_rel_error);
    }
    let model_cfg = GradCheckConfig {
        samples: Some(256),
        ..GradCheckConfig::default()
    };
    let r = model_gradcheck(&TrainConfig::default(), &model_cfg, 3)?;
    println!("toy model        {:>3} coords  max rel err {:.2e}", r.checked, r.max_rel_error);
    Ok(())
}
