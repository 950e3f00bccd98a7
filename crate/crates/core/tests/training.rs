mod common;

use common::iris;
use qunl::data::split;
use qunl::diffcore::{LayerParams, Tensor};
use qunl::hybrid::ArchSpec;
use qunl::train::{adam_step, fit, train_base, EarlyStop, OptimizerState, TrainConfig};

/// Scalar Adam written out longhand.
fn reference_adam(p0: f64, grads: &[f64], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut p) = (0.0, 0.0, p0);
    let mut out = Vec::new();
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p -= lr * mh / (vh.sqrt() + eps);
        out.push(p);
    }
    out
}

#[test]
fn adam_matches_three_hand_steps() {
    let grads = [[0.5, -2.0], [0.1, 0.0], [-0.3, 4.0]];
    let mut params = LayerParams::new();
    params.insert("w", Tensor::vector(vec![1.0, -1.0]));
    let mut state = OptimizerState::new();
    let mut trace = Vec::new();
    for g in &grads {
        let mut gp = LayerParams::new();
        gp.insert("w", Tensor::vector(g.to_vec()));
        adam_step(&mut params, &gp, &mut state, 0.01).unwrap();
        trace.push(params.get("w").unwrap().data().to_vec());
    }
    for coord in 0..2 {
        let want = reference_adam([1.0, -1.0][coord], &grads.map(|g| g[coord]), 0.01);
        for (step, w) in want.iter().enumerate() {
            assert!((trace[step][coord] - w).abs() < 1e-15, "step {step} coord {coord}");
        }
    }
    // first step moves each coordinate by lr * sign(g)
    assert!((trace[0][0] - 0.99).abs() < 1e-9 && (trace[0][1] + 0.99).abs() < 1e-9);
    assert_eq!(state.step, 3);
}

#[test]
fn absent_gradients_leave_tensors_and_moments_alone() {
    let mut params = LayerParams::new();
    params.insert("a", Tensor::vector(vec![1.0]));
    params.insert("b", Tensor::vector(vec![2.0]));
    let mut gp = LayerParams::new();
    gp.insert("a", Tensor::vector(vec![1.0]));
    let mut state = OptimizerState::new();
    adam_step(&mut params, &gp, &mut state, 0.1).unwrap();
    assert_eq!(params.get("b").unwrap().data(), &[2.0]);
    assert!(state.first_moment("b").is_none());
    assert!(state.first_moment("a").is_some());
}

#[test]
fn early_stopping_keeps_the_first_best() {
    let mut stop = EarlyStop::new(2);
    let mut p = LayerParams::new();
    let scores = [0.5, 0.7, 0.7, 0.6];
    let mut stopped_at = None;
    for (e, s) in scores.iter().enumerate() {
        p.insert("w", Tensor::scalar(e as f64));
        if stop.observe(e + 1, *s, &p) {
            stopped_at = Some(e + 1);
            break;
        }
    }
    assert_eq!(stopped_at, Some(4));
    let (score, epoch, best) = stop.into_best().unwrap();
    assert_eq!((score, epoch), (0.7, 2));
    assert_eq!(best.get("w").unwrap().data(), &[1.0]);
}

#[test]
fn training_is_deterministic_and_restores_the_best_epoch() {
    let (train, test) = split(&iris(), 0.2, 5).unwrap();
    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::for_spec(&ArchSpec::iris())
    };
    let (a, ra) = train_base(&ArchSpec::iris(), &train, &test, &cfg).unwrap();
    let (b, rb) = train_base(&ArchSpec::iris(), &train, &test, &cfg).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(ra, rb);
    let best = ra.test_acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(ra.best_test_acc, best);
    assert_eq!(ra.test_acc[ra.best_epoch - 1], best);
    assert_eq!(ra.test_acc.iter().position(|&x| x == best).unwrap() + 1, ra.best_epoch);
    assert_eq!(qunl::metrics::accuracy_of(&a, &test).unwrap(), best);
    if ra.stopped_early {
        assert_eq!(ra.test_acc.len(), ra.best_epoch + cfg.patience);
    }
}

#[test]
fn bad_configs_are_rejected() {
    let (train, test) = split(&iris(), 0.2, 0).unwrap();
    let model = qunl::hybrid::HybridModel::build(ArchSpec::iris(), 0).unwrap();
    for cfg in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { max_epochs: 0, ..TrainConfig::default() },
    ] {
        assert!(fit(model.clone(), &train, &test, &cfg).is_err());
    }
}

#[test]
fn divergence_is_reported() {
    let (train, test) = split(&iris(), 0.2, 0).unwrap();
    let mut model = qunl::hybrid::HybridModel::build(ArchSpec::iris(), 0).unwrap();
    model.params_mut().get_mut("head.bias").unwrap().data_mut()[0] = f64::NAN;
    let err = fit(model, &train, &test, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, qunl::Error::Diverged { epoch: 1, .. }), "{err}");
}
