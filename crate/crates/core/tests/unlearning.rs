mod common;

use std::sync::OnceLock;

use common::iris_splits;
use proptest::prelude::*;
use qunl::data::{ForgetSpec, SplitDataset};
use qunl::diffcore::Tensor;
use qunl::hybrid::{ArchSpec, HybridModel, GROUP_HEAD};
use qunl::metrics::accuracy_of;
use qunl::train::{train_base, TrainConfig};
use qunl::unlearn::{
    complement_labels, fgsm_uniform, reinit_groups, retain_finetune, run_method, MethodId, UnlearnConfig,
    MAX_UNLEARN_EPOCHS,
};

struct Setup {
    splits: SplitDataset,
    base: HybridModel,
    cfg: UnlearnConfig,
}

fn setup(full: bool) -> &'static Setup {
    static SUBSET: OnceLock<Setup> = OnceLock::new();
    static FULL: OnceLock<Setup> = OnceLock::new();
    let cell = if full { &FULL } else { &SUBSET };
    cell.get_or_init(|| {
        let spec = if full {
            ForgetSpec::FullClass { class: 2 }
        } else {
            ForgetSpec::Subset {
                fraction: 0.05,
                seed: 1,
                stratified: false,
            }
        };
        let splits = iris_splits(&spec, 1);
        let arch = ArchSpec::iris();
        let tc = TrainConfig {
            seed: 1,
            ..TrainConfig::for_spec(&arch)
        };
        let (base, _) = train_base(&arch, &splits.train().unwrap(), &splits.test, &tc).unwrap();
        let cfg = UnlearnConfig {
            seed: 1,
            max_epochs: 6,
            ..UnlearnConfig::for_spec(&arch)
        };
        Setup { splits, base, cfg }
    })
}

fn others_identical(a: &HybridModel, b: &HybridModel, group: &str) -> bool {
    a.params()
        .iter()
        .filter(|(n, _)| !n.starts_with(group))
        .all(|(n, t)| b.params().get(n) == Some(t))
}

fn group_changed(a: &HybridModel, b: &HybridModel, group: &str) -> bool {
    a.params()
        .iter()
        .filter(|(n, _)| n.starts_with(group))
        .all(|(n, t)| b.params().get(n) != Some(t))
}

#[test]
fn every_method_respects_the_budget() {
    for full in [false, true] {
        let s = setup(full);
        let cfg = UnlearnConfig {
            max_epochs: MAX_UNLEARN_EPOCHS,
            ..s.cfg.clone()
        };
        for m in MethodId::ALL {
            let r = run_method(m, &s.base, &s.splits, &cfg).unwrap();
            assert!(r.trace.len() <= MAX_UNLEARN_EPOCHS, "{}", r.label);
            assert!(r.best_epoch.is_some_and(|e| e >= 1 && e <= r.trace.len()));
            assert!(r.model.params().all_finite());
        }
    }
    let too_long = UnlearnConfig {
        max_epochs: MAX_UNLEARN_EPOCHS + 1,
        ..setup(false).cfg.clone()
    };
    let err = run_method(MethodId::Ga, &setup(false).base, &setup(false).splits, &too_long).unwrap_err();
    assert!(err.is_config());
}

#[test]
fn retain_only_limits_are_bit_identical() {
    let s = setup(false);
    let reference = retain_finetune(&s.base, &s.splits, &s.cfg).unwrap();
    let neg = run_method(
        MethodId::NegGradPlus,
        &s.base,
        &s.splits,
        &UnlearnConfig { alpha: 1.0, ..s.cfg.clone() },
    )
    .unwrap();
    let cert = run_method(
        MethodId::Certified,
        &s.base,
        &s.splits,
        &UnlearnConfig {
            sigma_noise: 0.0,
            ..s.cfg.clone()
        },
    )
    .unwrap();
    for r in [&neg, &cert] {
        assert_eq!(r.trace, reference.trace, "{}", r.label);
        assert_eq!(r.model.params(), reference.model.params(), "{}", r.label);
    }
    // and the noise actually matters when it is on
    let noisy = run_method(MethodId::Certified, &s.base, &s.splits, &s.cfg).unwrap();
    assert_ne!(noisy.trace, reference.trace);
}

#[test]
fn eu_k_resets_only_its_groups() {
    let s = setup(true);
    let zero = UnlearnConfig {
        max_epochs: 0,
        ..s.cfg.clone()
    };
    let r = run_method(MethodId::EuK, &s.base, &s.splits, &zero).unwrap();
    assert!(r.trace.is_empty() && r.best_epoch.is_none());
    assert!(group_changed(&s.base, &r.model, GROUP_HEAD));
    assert!(others_identical(&s.base, &r.model, GROUP_HEAD));
    assert_eq!(r.model.params(), reinit_groups(&s.base, 1, s.cfg.seed).unwrap().params());

    let trained = run_method(MethodId::EuK, &s.base, &s.splits, &s.cfg).unwrap();
    assert!(others_identical(&s.base, &trained.model, GROUP_HEAD));

    let two = UnlearnConfig { k: 2, ..zero };
    let r2 = run_method(MethodId::EuK, &s.base, &s.splits, &two).unwrap();
    for g in ["head", "vqc"] {
        assert!(group_changed(&s.base, &r2.model, g));
    }
    assert_eq!(r2.model.params().get("projection.weight"), s.base.params().get("projection.weight"));
}

#[test]
fn cf_k_freezes_everything_but_its_groups() {
    let s = setup(false);
    let r = run_method(MethodId::CfK, &s.base, &s.splits, &s.cfg).unwrap();
    assert!(others_identical(&s.base, &r.model, GROUP_HEAD));
    assert!(group_changed(&s.base, &r.model, GROUP_HEAD));
    let bad = UnlearnConfig { k: 4, ..s.cfg.clone() };
    assert!(run_method(MethodId::CfK, &s.base, &s.splits, &bad).unwrap_err().is_config());
}

#[test]
fn methods_are_deterministic() {
    let s = setup(false);
    for m in MethodId::ALL {
        let a = run_method(m, &s.base, &s.splits, &s.cfg).unwrap();
        let b = run_method(m, &s.base, &s.splits, &s.cfg).unwrap();
        assert_eq!(a.trace, b.trace, "{m}");
        assert_eq!(a.model.params(), b.model.params(), "{m}");
    }
}

#[test]
fn gradient_ascent_raises_forget_loss() {
    let s = setup(true);
    let before = accuracy_of(&s.base, &s.splits.forget).unwrap();
    let cfg = UnlearnConfig {
        max_epochs: 3,
        patience: 3,
        ..s.cfg.clone()
    };
    let r = run_method(MethodId::Ga, &s.base, &s.splits, &cfg).unwrap();
    assert_eq!(r.trace.len(), 3);
    let losses: Vec<f64> = r.trace.iter().map(|t| t.forget_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] >= w[0]), "{losses:?}");
    let accs: Vec<f64> = r.trace.iter().map(|t| t.forget_acc).collect();
    assert!(accs.windows(2).all(|w| w[1] <= w[0]) && accs[0] <= before, "{accs:?}");
}

#[test]
fn adversarial_inputs_stay_in_the_eps_ball() {
    let s = setup(false);
    let x = s.splits.forget.inputs();
    for eps in [1e-3, 0.1, 0.5] {
        let adv = fgsm_uniform(&s.base, x, eps).unwrap();
        let gap = adv.max_abs_diff(x);
        assert!(gap <= eps * (1.0 + 1e-12), "eps {eps}: {gap}");
        assert!((gap - eps).abs() <= 1e-12 * (1.0 + eps));
    }
    let img = HybridModel::build(ArchSpec::mnist(), 0).unwrap();
    let pixels: Vec<f64> = (0..2 * 784).map(|i| (i % 3) as f64 / 2.0).collect();
    let x = Tensor::new(vec![2, 1, 28, 28], pixels).unwrap();
    let adv = fgsm_uniform(&img, &x, 0.1).unwrap();
    assert!(adv.max_abs_diff(&x) <= 0.1 + 1e-15);
    assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #[test]
    fn complement_rows_follow_the_law(k in 2usize..=10, labels in prop::collection::vec(0usize..10, 1..20)) {
        let labels: Vec<usize> = labels.into_iter().map(|y| y % k).collect();
        let t = complement_labels(&labels, k).unwrap();
        for (r, &y) in labels.iter().enumerate() {
            let row = t.row(r);
            prop_assert_eq!(row[y], 0.0);
            for (c, &v) in row.iter().enumerate() {
                if c != y {
                    prop_assert!((v - 1.0 / (k - 1) as f64).abs() <= 1e-15);
                }
            }
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        }
    }
}

#[test]
fn unlearn_config_rejects_unknown_keys_and_bad_ids() {
    assert!(serde_json::from_str::<UnlearnConfig>(r#"{"lr": 0.1, "learning_rate": 1}"#).is_err());
    let c: UnlearnConfig = serde_json::from_str(r#"{"lr": 0.1}"#).unwrap();
    assert_eq!(c.lr, 0.1);
    let e = "XYZ".parse::<MethodId>().unwrap_err();
    assert!(e.is_config() && e.to_string().contains("SCRUB+R"));
    assert_eq!("eu-k3".parse::<MethodId>().unwrap(), MethodId::EuK);
}
