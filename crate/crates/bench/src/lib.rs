//! Shared inputs for the kernel benchmarks.

use cellpred_core::model::dag_to_w;
use cellpred_core::sim::{build_dag, build_design, build_targets, simulate_responses, SimSpec};
use cellpred_core::{ConditionMatrix, InteractionMatrix, ResponseMatrix, TargetMap};
use nalgebra::DMatrix;

/// The benchmark system at the default noise level.
pub struct Fixture {
    pub d: ConditionMatrix,
    pub x: ResponseMatrix,
    pub b: TargetMap,
    pub w: InteractionMatrix,
}

pub fn fixture(seed: u64) -> Fixture {
    let spec = SimSpec {
        seed,
        ..SimSpec::default()
    };
    Fixture {
        d: build_design(),
        x: simulate_responses(&spec),
        b: build_targets(false),
        w: dag_to_w(&build_dag()).expect("benchmark DAG is acyclic"),
    }
}

/// A `p x p` negative-definite generator with off-diagonal coupling.
pub fn stable_generator(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            -2.0 - i as f64 * 0.1
        } else {
            0.3 / (1.0 + (i as f64 - j as f64).abs())
        }
    })
}
