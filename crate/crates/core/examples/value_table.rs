//! Tabulating a model once and computing limits from the table alone.

use naopc::io::ValueTable;
use naopc::toy::{reference_instance, BuiltinModel};
use naopc::{exhaustive_limits, EvalCache};

pub fn run_example() -> naopc::Result<()> {
    let f = BuiltinModel::F4.model();
    let x = reference_instance();
    let mut table = ValueTable::new();
    table.tabulate(&f, &x, &EvalCache::new())?;
    let mut bytes = Vec::new();
    table.write(&mut bytes)?;
    println!("{} bytes, first records:", bytes.len());
    for line in String::from_utf8_lossy(&bytes).lines().take(3) {
        println!("  {line}");
    }

    let loaded = ValueTable::read(bytes.as_slice())?;
    loaded.require_complete("x0")?;
    let from_table = exhaustive_limits(&loaded, &loaded.instances()[0], &EvalCache::new())?;
    let direct = exhaustive_limits(&f, &x, &EvalCache::new())?;
    println!("from table [{}, {}]", from_table.lower, from_table.upper);
    assert_eq!(from_table.lower.to_bits(), direct.lower.to_bits());
    assert_eq!(from_table.upper.to_bits(), direct.upper.to_bits());
    Ok(())
}

#[allow(dead_code)]
fn main() -> naopc::Result<()> {
    run_example()
}
