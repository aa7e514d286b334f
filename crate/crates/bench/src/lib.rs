//! Shared fixtures for the engine benchmarks: deterministic training sets
//! built from the analytic forward model on the unit square.

use nalgebra::DVector;

use adagp::forward::NoiseMode;
use adagp::halton::HaltonSequence;
use adagp::{DomainBox, ForwardModel, Hyperparameters, ParabolicCylinderModel, TrainingData};

/// Noise-free training set of `n` Halton points at a common tolerance.
pub fn training_set(n: usize, eps: f64) -> TrainingData {
    let domain = DomainBox::unit(2);
    let model = ParabolicCylinderModel::new(NoiseMode::Exact);
    let mut data = TrainingData::new(domain.clone(), 3).expect("three outputs");
    for u in HaltonSequence::new(2).take(n) {
        let p = domain.from_unit(&u);
        let y = model.true_value(&p);
        data.push(p, eps, y).expect("point inside the domain");
    }
    data
}

/// Hyperparameters of the size the adaptive loop typically settles on.
pub fn typical_hyper() -> Hyperparameters {
    Hyperparameters::new(1.0, DVector::from_vec(vec![0.4, 0.4])).expect("positive hyperparameters")
}

/// Measurement-noise diagonal used across the benchmarks.
pub fn sigma_l() -> DVector<f64> {
    DVector::from_vec(vec![0.01, 0.001, 0.01])
}
