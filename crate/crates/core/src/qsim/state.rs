use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Pure state of `q` qubits as `2^q` complex amplitudes.
///
/// Qubit 0 is the least significant bit of the basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `q` qubits.
    pub fn zero(q: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&q) {
            return Err(Error::Capacity(format!(
                "qubit count {q} outside 1..={MAX_QUBITS}"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << q];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { qubits: q, amps })
    }

    /// Wraps raw amplitudes. The length must be a power of two; the caller is
    /// responsible for normalisation.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n = amps.len();
        if n < 2 || !n.is_power_of_two() || n > 1 << MAX_QUBITS {
            return Err(Error::dim(format!("{n} amplitudes is not 2^q for 1<=q<={MAX_QUBITS}")));
        }
        Ok(StateVector {
            qubits: n.trailing_zeros() as usize,
            amps,
        })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum()
    }

    /// `<self | other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        self.same_size(other)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    fn same_size(&self, other: &StateVector) -> Result<()> {
        if self.qubits != other.qubits {
            return Err(Error::dim(format!(
                "states have {} and {} qubits",
                self.qubits, other.qubits
            )));
        }
        Ok(())
    }

    fn check_wire(&self, wire: usize) -> Result<()> {
        if wire >= self.qubits {
            return Err(Error::Index(format!(
                "wire {wire} out of range for {} qubits",
                self.qubits
            )));
        }
        Ok(())
    }

    /// Applies a 2x2 matrix `[[a, b], [c, d]]` to `wire`.
    fn apply_1q(&mut self, wire: usize, m: [Complex64; 4]) {
        let stride = 1usize << wire;
        for block in self.amps.chunks_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            for (x0, x1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (a0, a1) = (*x0, *x1);
                *x0 = m[0] * a0 + m[1] * a1;
                *x1 = m[2] * a0 + m[3] * a1;
            }
        }
    }

    /// `exp(-i angle/2 sigma_axis)` on `wire`.
    pub fn apply_rotation(&mut self, axis: Axis, wire: usize, angle: f64) -> Result<()> {
        self.check_wire(wire)?;
        let (s, c) = (angle / 2.0).sin_cos();
        let z = Complex64::new(0.0, 0.0);
        let m = match axis {
            Axis::X => [
                Complex64::new(c, 0.0),
                Complex64::new(0.0, -s),
                Complex64::new(0.0, -s),
                Complex64::new(c, 0.0),
            ],
            Axis::Y => [
                Complex64::new(c, 0.0),
                Complex64::new(-s, 0.0),
                Complex64::new(s, 0.0),
                Complex64::new(c, 0.0),
            ],
            Axis::Z => [Complex64::new(c, -s), z, z, Complex64::new(c, s)],
        };
        self.apply_1q(wire, m);
        Ok(())
    }

    /// Controlled-Z: negates amplitudes whose bits `a` and `b` are both 1.
    pub fn apply_cz(&mut self, a: usize, b: usize) -> Result<()> {
        self.check_wire(a)?;
        self.check_wire(b)?;
        if a == b {
            return Err(Error::Index(format!("CZ needs distinct wires, got {a} twice")));
        }
        let mask = (1usize << a) | (1usize << b);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & mask == mask {
                *amp = -*amp;
            }
        }
        Ok(())
    }

    /// Multiplies every amplitude by `e^{i phi}`.
    pub fn apply_global_phase(&mut self, phi: f64) {
        let p = Complex64::from_polar(1.0, phi);
        for a in &mut self.amps {
            *a *= p;
        }
    }

    /// `<Z_i>` for every qubit.
    pub fn expect_z(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.qubits];
        for (b, amp) in self.amps.iter().enumerate() {
            let p = amp.norm_sqr();
            for (i, o) in out.iter_mut().enumerate() {
                if b >> i & 1 == 0 {
                    *o += p;
                } else {
                    *o -= p;
                }
            }
        }
        // rounding in the sum can land an ulp outside the exact range
        for o in &mut out {
            *o = o.clamp(-1.0, 1.0);
        }
        out
    }

    /// `sum_i w_i Z_i |self>`, unnormalised.
    pub(crate) fn weighted_z(&self, weights: &[f64]) -> StateVector {
        let amps = self
            .amps
            .iter()
            .enumerate()
            .map(|(b, amp)| {
                let w: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| if b >> i & 1 == 0 { *w } else { -*w })
                    .sum();
                amp * w
            })
            .collect();
        StateVector {
            qubits: self.qubits,
            amps,
        }
    }

    /// `Im <bra| sigma_axis(wire) |self>`.
    pub(crate) fn im_pauli_overlap(&self, bra: &StateVector, axis: Axis, wire: usize) -> f64 {
        let stride = 1usize << wire;
        let mut acc = Complex64::new(0.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        for (kb, kk) in bra.amps.chunks(stride << 1).zip(self.amps.chunks(stride << 1)) {
            let (b0, b1) = kb.split_at(stride);
            let (k0, k1) = kk.split_at(stride);
            for j in 0..stride {
                let (s0, s1) = match axis {
                    Axis::X => (k1[j], k0[j]),
                    Axis::Y => (-i * k1[j], i * k0[j]),
                    Axis::Z => (k0[j], -k1[j]),
                };
                acc += b0[j].conj() * s0 + b1[j].conj() * s1;
            }
        }
        acc.im
    }
}

/// `|<a|b>|^2`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr().min(1.0))
}

/// Trace distance between pure states, `sqrt(1 - F)`.
pub fn trace_distance(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok((1.0 - fidelity(a, b)?).max(0.0).sqrt())
}
