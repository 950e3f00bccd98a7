//! Independent references shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64 as C;

type Mat = Vec<Vec<C>>;

fn eye(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) }).collect())
        .collect()
}

fn kron(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![C::new(0.0, 0.0); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

fn ry(t: f64) -> Mat {
    let (s, c) = (t / 2.0).sin_cos();
    vec![vec![C::new(c, 0.0), C::new(-s, 0.0)], vec![C::new(s, 0.0), C::new(c, 0.0)]]
}

fn rz(t: f64) -> Mat {
    let z = C::new(0.0, 0.0);
    vec![vec![C::from_polar(1.0, -t / 2.0), z], vec![z, C::from_polar(1.0, t / 2.0)]]
}

/// Lifts a one-qubit gate to `q` qubits; wire 0 is the least significant bit,
/// so it is the rightmost Kronecker factor.
fn lift(g: &Mat, wire: usize, q: usize) -> Mat {
    let mut m = vec![vec![C::new(1.0, 0.0)]];
    for w in (0..q).rev() {
        m = kron(&m, &if w == wire { g.clone() } else { eye(2) });
    }
    m
}

fn cz(a: usize, b: usize, q: usize) -> Mat {
    let mut m = eye(1 << q);
    for (i, row) in m.iter_mut().enumerate() {
        if i >> a & 1 == 1 && i >> b & 1 == 1 {
            row[i] = C::new(-1.0, 0.0);
        }
    }
    m
}

/// Dense unitary of: RY encoding, then per layer RY, RZ on each wire and a CZ ring.
fn reference_unitary(q: usize, layers: usize, params: &[f64], angles: &[f64]) -> Mat {
    let mut u = eye(1 << q);
    let mut push = |g: Mat| u = matmul(&g, &u);
    for (w, &a) in angles.iter().enumerate() {
        push(lift(&ry(a), w, q));
    }
    for l in 0..layers {
        for w in 0..q {
            push(lift(&ry(params[(l * q + w) * 2]), w, q));
            push(lift(&rz(params[(l * q + w) * 2 + 1]), w, q));
        }
        let ring: Vec<(usize, usize)> = match q {
            1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..q).map(|i| (i, (i + 1) % q)).collect(),
        };
        for (a, b) in ring {
            push(cz(a, b, q));
        }
    }
    u
}

pub fn reference_state(q: usize, layers: usize, params: &[f64], angles: &[f64]) -> Vec<C> {
    reference_unitary(q, layers, params, angles).iter().map(|row| row[0]).collect()
}

pub fn reference_z(amps: &[C], q: usize) -> Vec<f64> {
    (0..q)
        .map(|w| {
            amps.iter()
                .enumerate()
                .map(|(i, a)| if i >> w & 1 == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum()
        })
        .collect()
}


/// Iris forward pass composed by hand: affine projection, `pi * tanh`,
/// dense circuit simulation, linear head, softmax.
pub fn iris_reference_probs(params: &qunl::diffcore::LayerParams, layers: usize, x: &[f64]) -> Vec<f64> {
    let (w, b) = (params.get("projection.weight").unwrap(), params.get("projection.bias").unwrap());
    let q = 4;
    let angles: Vec<f64> = (0..q)
        .map(|j| {
            let z: f64 = (0..4).map(|i| x[i] * w.data()[i * q + j]).sum::<f64>() + b.data()[j];
            std::f64::consts::PI * z.tanh()
        })
        .collect();
    let theta = params.get("vqc.theta").unwrap().data();
    let z = reference_z(&reference_state(q, layers, theta, &angles), q);
    let (hw, hb) = (params.get("head.weight").unwrap(), params.get("head.bias").unwrap());
    let k = hb.len();
    let logits: Vec<f64> = (0..k)
        .map(|c| (0..q).map(|j| z[j] * hw.data()[j * k + c]).sum::<f64>() + hb.data()[c])
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn iris() -> qunl::data::LabeledSet {
    qunl::data::load_iris(&std::fs::read_to_string(data_dir().join("iris.csv")).unwrap()).unwrap()
}

/// Subsample-free Iris split for one seed.
pub fn iris_splits(spec: &qunl::data::ForgetSpec, seed: u64) -> qunl::data::SplitDataset {
    let (train, test) = qunl::data::split(&iris(), 0.2, seed).unwrap();
    qunl::data::make_forget(&train, &test, spec).unwrap()
}
