use std::f64::consts::FRAC_PI_2;

use super::circuit::{apply_gate_inverse, run_circuit, AngleSource, CircuitLayout, Gate};
use super::state::StateVector;
use crate::error::{Error, Result};

/// Gradient of `sum_i upstream_i <Z_i>` with respect to the rotation
/// parameters and the encoding angles.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitGrad {
    pub d_params: Vec<f64>,
    pub d_angles: Vec<f64>,
}

fn check_upstream(layout: &CircuitLayout, upstream: &[f64]) -> Result<()> {
    if upstream.len() != layout.qubits {
        return Err(Error::dim(format!(
            "upstream has {} entries for {} qubits",
            upstream.len(),
            layout.qubits
        )));
    }
    Ok(())
}

/// Adjoint-method gradient: one forward simulation plus one reverse sweep.
pub fn adjoint_grad(
    layout: &CircuitLayout,
    params: &[f64],
    angles: &[f64],
    upstream: &[f64],
) -> Result<CircuitGrad> {
    let state = run_circuit(layout, params, angles)?;
    adjoint_from_state(layout, params, angles, &state, upstream)
}

/// Reverse sweep starting from an already simulated output `state`.
///
/// With `lambda = H psi` for `H = sum_i u_i Z_i`, the derivative for a gate
/// `exp(-i t/2 sigma)` is `Im <lambda_k| sigma |psi_k>` where both states are
/// taken just after that gate; walking backwards undoes one gate on both.
pub fn adjoint_from_state(
    layout: &CircuitLayout,
    params: &[f64],
    angles: &[f64],
    state: &StateVector,
    upstream: &[f64],
) -> Result<CircuitGrad> {
    layout.check(params, angles)?;
    check_upstream(layout, upstream)?;
    let mut grad = CircuitGrad {
        d_params: vec![0.0; params.len()],
        d_angles: vec![0.0; angles.len()],
    };
    if upstream.iter().all(|&u| u == 0.0) {
        return Ok(grad);
    }
    let mut psi = state.clone();
    let mut lambda = psi.weighted_z(upstream);
    for gate in layout.gates().into_iter().rev() {
        if let Gate::Rot { axis, wire, source } = gate {
            let g = psi.im_pauli_overlap(&lambda, axis, wire);
            match source {
                AngleSource::Input(i) => grad.d_angles[i] += g,
                AngleSource::Param(j) => grad.d_params[j] += g,
            }
        }
        apply_gate_inverse(&mut psi, gate, params, angles)?;
        apply_gate_inverse(&mut lambda, gate, params, angles)?;
    }
    Ok(grad)
}

/// `sum_i upstream_i <Z_i>` of the circuit output.
pub fn weighted_expectation(
    layout: &CircuitLayout,
    params: &[f64],
    angles: &[f64],
    upstream: &[f64],
) -> Result<f64> {
    check_upstream(layout, upstream)?;
    let z = run_circuit(layout, params, angles)?.expect_z();
    Ok(z.iter().zip(upstream).map(|(z, u)| z * u).sum())
}

/// Parameter-shift derivative with respect to rotation parameter `j`:
/// `(g(theta + pi/2 e_j) - g(theta - pi/2 e_j)) / 2`.
pub fn param_shift_grad(
    layout: &CircuitLayout,
    params: &[f64],
    angles: &[f64],
    upstream: &[f64],
    j: usize,
) -> Result<f64> {
    if j >= layout.param_count() {
        return Err(Error::Index(format!(
            "parameter {j} out of range for {} parameters",
            layout.param_count()
        )));
    }
    let mut shifted = params.to_vec();
    shifted[j] = params[j] + FRAC_PI_2;
    let plus = weighted_expectation(layout, &shifted, angles, upstream)?;
    shifted[j] = params[j] - FRAC_PI_2;
    let minus = weighted_expectation(layout, &shifted, angles, upstream)?;
    Ok(0.5 * (plus - minus))
}

/// Parameter-shift derivative with respect to encoding angle `i`.
pub fn angle_shift_grad(
    layout: &CircuitLayout,
    params: &[f64],
    angles: &[f64],
    upstream: &[f64],
    i: usize,
) -> Result<f64> {
    if i >= layout.qubits {
        return Err(Error::Index(format!("angle {i} out of range")));
    }
    let mut shifted = angles.to_vec();
    shifted[i] = angles[i] + FRAC_PI_2;
    let plus = weighted_expectation(layout, params, &shifted, upstream)?;
    shifted[i] = angles[i] - FRAC_PI_2;
    let minus = weighted_expectation(layout, params, &shifted, upstream)?;
    Ok(0.5 * (plus - minus))
}
