//! Comprehensiveness, sufficiency and exact limits for the four reference models.

use naopc::toy::{reference_instance, BuiltinModel};
use naopc::{comprehensiveness, exact_shapley, exhaustive_limits, sufficiency, EvalCache};

pub fn run_example() -> naopc::Result<()> {
    let x = reference_instance();
    for model in BuiltinModel::ALL {
        let f = model.model();
        let cache = EvalCache::new();
        let e = exact_shapley(&f, &x, &cache)?;
        let comp = comprehensiveness(&f, &x, &e, &cache)?;
        let suff = sufficiency(&f, &x, &e, &cache)?;
        let limits = exhaustive_limits(&f, &x, &cache)?;
        println!(
            "{}: comp {comp:.4} suff {suff:.4} limits [{:.4}, {:.4}] lower at {:?} upper at {:?}",
            model.name(),
            limits.lower,
            limits.upper,
            limits.arg_lower.to_one_based(),
            limits.arg_upper.to_one_based(),
        );
        assert!(limits.contains(comp) && limits.contains(suff));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> naopc::Result<()> {
    run_example()
}
