//! Raw scores are not comparable across models; normalized ones are.

use naopc::toy::{reference_instance, BuiltinModel};
use naopc::{comprehensiveness, exhaustive_limits, normalize, Affine, EvalCache};

pub fn run_example() -> naopc::Result<()> {
    let x = reference_instance();
    for model in [BuiltinModel::F1, BuiltinModel::F2] {
        let f = model.model();
        let truth = model.linear().expect("linear model").ground_truth_attribution(&x)?;
        let cache = EvalCache::new();
        let comp = comprehensiveness(&f, &x, &truth, &cache)?;
        let limits = exhaustive_limits(&f, &x, &cache)?;
        let n = normalize(comp, &limits)?;
        println!("{}: raw {comp:.4} normalized {:.4}", model.name(), n.value);
    }

    // rescaling the model output moves the raw score but not the normalized one
    let f = Affine::new(BuiltinModel::F1.model(), 3.0, -5.0);
    let truth = BuiltinModel::F1.linear().expect("linear model").ground_truth_attribution(&x)?;
    let cache = EvalCache::new();
    let comp = comprehensiveness(&f, &x, &truth, &cache)?;
    let n = normalize(comp, &exhaustive_limits(&f, &x, &cache)?)?;
    println!("3 f1 - 5: raw {comp:.4} normalized {:.4}", n.value);
    assert!((n.value - 1.0).abs() < 1e-9);
    Ok(())
}

#[allow(dead_code)]
fn main() -> naopc::Result<()> {
    run_example()
}
