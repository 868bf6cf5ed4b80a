//! How far normalization reorders a ranking of models.

use naopc::rank::{build_rankings, kendall_tau, raw_vs_normalized_tau, Grouping, Metric, RankingTable};
use naopc::toy::{reference_instance, BuiltinModel};
use naopc::{comprehensiveness, exact_shapley, exhaustive_limits, normalize, EvalCache};

pub fn run_example() -> naopc::Result<()> {
    let x = reference_instance();
    let mut table = RankingTable::new(Grouping::ByModel);
    for model in BuiltinModel::ALL {
        let f = model.model();
        let cache = EvalCache::new();
        let e = exact_shapley(&f, &x, &cache)?;
        let comp = comprehensiveness(&f, &x, &e, &cache)?;
        let n = normalize(comp, &exhaustive_limits(&f, &x, &cache)?)?;
        table.insert(model.name(), Metric::Comp, comp);
        table.insert(model.name(), Metric::NComp, n.value);
    }
    for (metric, order) in build_rankings(&table)? {
        println!("{:<5} {}", metric.name(), order.join(" > "));
    }
    println!("tau comp vs ncomp: {:.4}", raw_vs_normalized_tau(&table, Metric::Comp)?);
    println!("tau of a swapped pair: {:.4}", kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> naopc::Result<()> {
    run_example()
}
