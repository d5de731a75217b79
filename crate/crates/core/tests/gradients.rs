mod common;

use common::*;
use eeggraph::model::Hyper;
use eeggraph::train::{backward, TrainConfig, Variant};

fn check(seed: u64, cfg: &TrainConfig) {
    let inst = random_instance(seed, Hyper { layers: 2, hidden: 4 }, 8, 8);
    let (_, grads) = backward(&inst.params, &inst.batch(), cfg).unwrap();
    for group in Group::ALL {
        let analytic = group.grads(&grads);
        let numeric = finite_difference(&inst, cfg, group);
        if let Some((k, a, n)) = first_mismatch(&analytic, &numeric) {
            panic!("{:?} seed {seed} {group:?}[{k}]: analytic {a} vs numeric {n}", cfg.variant);
        }
    }
}

#[test]
fn every_variant_matches_finite_differences() {
    for (i, variant) in Variant::ALL.into_iter().enumerate() {
        let cfg = TrainConfig {
            lambda: 0.7,
            alpha: 0.05,
            variant,
            ..Default::default()
        };
        check(100 + i as u64, &cfg);
    }
}

#[test]
fn deeper_propagation_matches_finite_differences() {
    for layers in [1, 3] {
        let inst = random_instance(7, Hyper { layers, hidden: 3 }, 5, 4);
        let cfg = TrainConfig {
            lambda: 1.3,
            layers,
            hidden: 3,
            ..Default::default()
        };
        let (_, grads) = backward(&inst.params, &inst.batch(), &cfg).unwrap();
        for group in Group::ALL {
            let numeric = finite_difference(&inst, &cfg, group);
            assert!(first_mismatch(&group.grads(&grads), &numeric).is_none(), "L={layers} {group:?}");
        }
    }
}
