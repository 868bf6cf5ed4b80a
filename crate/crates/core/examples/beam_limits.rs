//! Beam-searched limits against the exact ones, and auto beam sizing.

use naopc::toy::GateToyModel;
use naopc::toy::ones_instance;
use naopc::{auto_beam_size, beam_limits, exhaustive_limits, AutoBeamConfig, EvalCache};

pub fn run_example() -> naopc::Result<()> {
    let f = GateToyModel::random(8, 5)?;
    let x = ones_instance("gates", 8);
    let cache = EvalCache::new();
    let exact = exhaustive_limits(&f, &x, &cache)?;
    println!("exact   [{:.6}, {:.6}]", exact.lower, exact.upper);
    for b in [1, 2, 4, 16] {
        let l = beam_limits(&f, &x, b, &cache)?;
        println!("beam {b:<2} [{:.6}, {:.6}]", l.lower, l.upper);
        // beam limits are attained by real orderings, so they sit inside the exact ones
        assert!(exact.lower <= l.lower && l.upper <= exact.upper);
    }
    let auto = auto_beam_size(&f, &x, AutoBeamConfig::default(), &cache)?;
    for step in &auto.trace {
        println!("auto B={:<4} [{:.6}, {:.6}]", step.beam_size, step.lower, step.upper);
    }
    println!("auto stopped at B={}", auto.beam_size);
    Ok(())
}

#[allow(dead_code)]
fn main() -> naopc::Result<()> {
    run_example()
}
