//! Dense statevector simulation of the variational block.
//!
//! A circuit is an RY angle encoding of the input followed by `L` layers of
//! (RY, RZ) rotations on every qubit and a CZ ring. Readout is the vector of
//! per-qubit `<Z>` expectations. Gradients come from the adjoint method;
//! the parameter-shift rule is kept as an independent check.

mod circuit;
mod grad;
mod state;

pub use circuit::{encode_angles, run_circuit, AngleSource, CircuitLayout, Gate};
pub use grad::{
    adjoint_from_state, adjoint_grad, angle_shift_grad, param_shift_grad, weighted_expectation,
    CircuitGrad,
};
pub use state::{fidelity, trace_distance, Axis, StateVector, MAX_QUBITS};
