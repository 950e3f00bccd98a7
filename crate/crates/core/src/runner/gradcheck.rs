use std::f64::consts::PI;

use rand::Rng as _;
use serde::Serialize;

use crate::diffcore::Tensor;
use crate::error::Result;
use crate::hybrid::{ArchSpec, HybridModel, Loss};
use crate::qsim::{adjoint_grad, param_shift_grad, weighted_expectation, CircuitLayout};
use crate::rng::{stream, Stream};

/// Tolerance between the three circuit gradients (absolute).
pub const CIRCUIT_TOL: f64 = 1e-7;
/// Tolerance between analytic and finite-difference model gradients
/// (max-norm error relative to the max-norm of the finite difference).
pub const MODEL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub checks: Vec<Check>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: String, error: f64, tolerance: f64) -> Check {
    Check {
        passed: error <= tolerance,
        name,
        error,
        tolerance,
    }
}

/// Adjoint vs parameter-shift vs central difference on `circuits` random
/// circuits with `q <= 4`, `L <= 3`; returns the largest pairwise gap.
pub fn circuit_gradient_gap(circuits: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Stream::Init);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..circuits {
        let layout = CircuitLayout::new(rng.random_range(1..=4), rng.random_range(1..=3))?;
        let params: Vec<f64> = (0..layout.param_count()).map(|_| rng.random_range(-PI..PI)).collect();
        let angles: Vec<f64> = (0..layout.qubits).map(|_| rng.random_range(-PI..PI)).collect();
        let up: Vec<f64> = (0..layout.qubits).map(|_| rng.random_range(-1.0..1.0)).collect();
        let adj = adjoint_grad(&layout, &params, &angles, &up)?;
        for j in 0..params.len() {
            let ps = param_shift_grad(&layout, &params, &angles, &up, j)?;
            let mut p = params.clone();
            p[j] += h;
            let plus = weighted_expectation(&layout, &p, &angles, &up)?;
            p[j] -= 2.0 * h;
            let minus = weighted_expectation(&layout, &p, &angles, &up)?;
            let fd = (plus - minus) / (2.0 * h);
            let a = adj.d_params[j];
            worst = worst.max((a - ps).abs()).max((a - fd).abs()).max((ps - fd).abs());
        }
    }
    Ok(worst)
}

/// Analytic vs central-difference gradient of a cross-entropy loss over
/// every parameter of a fresh Iris model.
pub fn model_gradient_error(seed: u64) -> Result<f64> {
    let model = HybridModel::build(ArchSpec::iris(), seed)?;
    let mut rng = stream(seed, Stream::Split);
    let b = 5;
    let x = Tensor::new(vec![b, 4], (0..b * 4).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    let mut t = vec![0.0; b * 3];
    for r in 0..b {
        t[r * 3 + rng.random_range(0..3)] = 1.0;
    }
    let loss = Loss::CrossEntropy {
        targets: Tensor::new(vec![b, 3], t)?,
        weights: None,
    };
    let analytic = model.loss_grad(&x, &loss)?.params;
    let h = 1e-5;
    let mut num_max: f64 = 0.0;
    let mut diff_max: f64 = 0.0;
    for (name, g) in analytic.iter() {
        for i in 0..g.len() {
            let mut m = model.clone();
            m.params_mut().get_mut(name).expect("present").data_mut()[i] += h;
            let plus = m.loss_grad(&x, &loss)?.loss;
            m.params_mut().get_mut(name).expect("present").data_mut()[i] -= 2.0 * h;
            let minus = m.loss_grad(&x, &loss)?.loss;
            let fd = (plus - minus) / (2.0 * h);
            num_max = num_max.max(fd.abs());
            diff_max = diff_max.max((fd - g.data()[i]).abs());
        }
    }
    Ok(diff_max / num_max.max(1e-12))
}

/// The gradient oracle suite: 20 random circuits and 5 seeded Iris models.
pub fn gradcheck() -> Result<GradcheckReport> {
    let mut checks = vec![check(
        "circuit: adjoint / parameter-shift / central difference, 20 circuits".into(),
        circuit_gradient_gap(20, 0)?,
        CIRCUIT_TOL,
    )];
    for seed in 0..5 {
        checks.push(check(
            format!("iris model: analytic vs central difference, seed {seed}"),
            model_gradient_error(seed)?,
            MODEL_TOL,
        ));
    }
    Ok(GradcheckReport { checks })
}
