//! Plugging in your own model: a bag-of-words scorer that masks tokens.

use std::sync::Arc;

use naopc::{
    comprehensiveness, occlusion1, sufficiency, beam_limits, normalize, EvalCache, Instance, Payload, RemovedSet,
    ValueError, ValueFunction,
};

const MASK: i64 = 0;

struct BagOfWords {
    weights: Vec<f64>,
}

impl ValueFunction for BagOfWords {
    fn evaluate(&self, x: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        let Payload::Tokens(tokens) = x.payload() else {
            return Err(ValueError::Other("expected tokens".into()));
        };
        let logit: f64 = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| if removed.contains(i) { MASK } else { t })
            .map(|t| self.weights[t as usize])
            .sum();
        Ok(1.0 / (1.0 + (-logit).exp()))
    }

    fn description(&self) -> String {
        "bag of words".into()
    }
}

pub fn run_example() -> naopc::Result<()> {
    let model = BagOfWords {
        weights: vec![0.0, 2.0, -1.0, 0.5, 1.5, -0.5],
    };
    let tokens: Arc<[i64]> = Arc::from(vec![1i64, 2, 3, 4, 5, 1]);
    let x = Instance::new("sentence", tokens.len(), Payload::Tokens(tokens))?;
    let cache = EvalCache::new();
    let e = occlusion1(&model, &x, &cache)?;
    let limits = beam_limits(&model, &x, 8, &cache)?;
    let comp = comprehensiveness(&model, &x, &e, &cache)?;
    let suff = sufficiency(&model, &x, &e, &cache)?;
    println!("occlusion {:?}", e.scores());
    println!("comp {comp:.4} ncomp {:.4}", normalize(comp, &limits)?.value);
    println!("suff {suff:.4} nsuff {:.4}", normalize(suff, &limits)?.value);
    Ok(())
}

#[allow(dead_code)]
fn main() -> naopc::Result<()> {
    run_example()
}
