//! Occlusion, exact Shapley and random attributions, scored on one model.

use naopc::toy::{reference_instance, BuiltinModel};
use naopc::{
    comprehensiveness, exact_shapley, exhaustive_limits, naopc_comprehensiveness, occlusion1, random_attribution,
    EvalCache,
};

pub fn run_example() -> naopc::Result<()> {
    let f = BuiltinModel::F3.model();
    let x = reference_instance();
    let cache = EvalCache::new();
    let limits = exhaustive_limits(&f, &x, &cache)?;
    let methods = [
        ("occlusion", occlusion1(&f, &x, &cache)?),
        ("shapley", exact_shapley(&f, &x, &cache)?),
        ("random", random_attribution(4, 7)?),
    ];
    for (name, e) in &methods {
        let comp = comprehensiveness(&f, &x, e, &cache)?;
        let n = naopc_comprehensiveness(&f, &x, e, &limits, &cache)?;
        println!("{name:<9} {:?} comp {comp:.4} ncomp {:.4}", e.scores(), n.value);
    }
    // Shapley values add up to f(x) - f(empty)
    let total: f64 = methods[1].1.scores().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    println!("model evaluations: {}", cache.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> naopc::Result<()> {
    run_example()
}
