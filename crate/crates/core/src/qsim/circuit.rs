use super::state::{Axis, StateVector, MAX_QUBITS};
use crate::error::{Error, Result};

/// Shape of the variational block: angle encoding, then `layers` repetitions
/// of (RY, RZ on every qubit; CZ ring).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitLayout {
    pub qubits: usize,
    pub layers: usize,
}

/// Where a rotation gate takes its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleSource {
    /// Encoding angle `i`.
    Input(usize),
    /// Trainable parameter `j`.
    Param(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Rot {
        axis: Axis,
        wire: usize,
        source: AngleSource,
    },
    Cz(usize, usize),
}

impl CircuitLayout {
    pub fn new(qubits: usize, layers: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&qubits) {
            return Err(Error::Capacity(format!(
                "qubit count {qubits} outside 1..={MAX_QUBITS}"
            )));
        }
        Ok(CircuitLayout { qubits, layers })
    }

    /// `layers * qubits * 2`.
    pub fn param_count(&self) -> usize {
        self.layers * self.qubits * 2
    }

    /// Index of the rotation parameter for `(layer, qubit, axis)`, axis 0 = RY, 1 = RZ.
    pub fn param_index(&self, layer: usize, qubit: usize, axis: usize) -> usize {
        (layer * self.qubits + qubit) * 2 + axis
    }

    /// Wire pairs of one CZ ring. Two qubits get a single CZ; one qubit gets none.
    pub fn ring(&self) -> Vec<(usize, usize)> {
        match self.qubits {
            1 => vec![],
            2 => vec![(0, 1)],
            q => (0..q).map(|i| (i, (i + 1) % q)).collect(),
        }
    }

    /// The full gate sequence in application order.
    pub fn gates(&self) -> Vec<Gate> {
        let q = self.qubits;
        let ring = self.ring();
        let mut gates = Vec::with_capacity(q + self.layers * (2 * q + ring.len()));
        for wire in 0..q {
            gates.push(Gate::Rot {
                axis: Axis::Y,
                wire,
                source: AngleSource::Input(wire),
            });
        }
        for l in 0..self.layers {
            for wire in 0..q {
                for (k, axis) in [Axis::Y, Axis::Z].into_iter().enumerate() {
                    gates.push(Gate::Rot {
                        axis,
                        wire,
                        source: AngleSource::Param(self.param_index(l, wire, k)),
                    });
                }
            }
            gates.extend(ring.iter().map(|&(a, b)| Gate::Cz(a, b)));
        }
        gates
    }

    pub(crate) fn check(&self, params: &[f64], angles: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(format!(
                "circuit needs {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if angles.len() != self.qubits {
            return Err(Error::dim(format!(
                "circuit needs {} encoding angles, got {}",
                self.qubits,
                angles.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn angle_of(source: AngleSource, params: &[f64], angles: &[f64]) -> f64 {
    match source {
        AngleSource::Input(i) => angles[i],
        AngleSource::Param(j) => params[j],
    }
}

pub(crate) fn apply_gate(state: &mut StateVector, gate: Gate, params: &[f64], angles: &[f64]) -> Result<()> {
    match gate {
        Gate::Rot { axis, wire, source } => {
            state.apply_rotation(axis, wire, angle_of(source, params, angles))
        }
        Gate::Cz(a, b) => state.apply_cz(a, b),
    }
}

pub(crate) fn apply_gate_inverse(
    state: &mut StateVector,
    gate: Gate,
    params: &[f64],
    angles: &[f64],
) -> Result<()> {
    match gate {
        Gate::Rot { axis, wire, source } => {
            state.apply_rotation(axis, wire, -angle_of(source, params, angles))
        }
        Gate::Cz(a, b) => state.apply_cz(a, b),
    }
}

/// Applies `RY(angles[i])` to qubit `i`.
pub fn encode_angles(state: &mut StateVector, angles: &[f64]) -> Result<()> {
    if angles.len() != state.qubits() {
        return Err(Error::dim(format!(
            "{} angles for {} qubits",
            angles.len(),
            state.qubits()
        )));
    }
    for (wire, &a) in angles.iter().enumerate() {
        state.apply_rotation(Axis::Y, wire, a)?;
    }
    Ok(())
}

/// Prepares `|0...0>`, encodes `angles`, then applies every variational layer.
pub fn run_circuit(layout: &CircuitLayout, params: &[f64], angles: &[f64]) -> Result<StateVector> {
    layout.check(params, angles)?;
    let mut state = StateVector::zero(layout.qubits)?;
    for gate in layout.gates() {
        apply_gate(&mut state, gate, params, angles)?;
    }
    Ok(state)
}
