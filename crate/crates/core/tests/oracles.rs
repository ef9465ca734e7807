mod common;

use std::sync::Arc;

use flowrnn::conv::{self, Kernel, LiftedState, VKernel};
use flowrnn::grid_signal::Grid;
use flowrnn::group_flow::{FlowGenerator, FlowSet, GroupElement, GroupKind};
use flowrnn::rnn::{FernnParams, GrnnParams, LiftMode, Nonlinearity, RecurrentModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn group_kind(p4: bool) -> GroupKind {
    if p4 {
        GroupKind::RotoTranslation
    } else {
        GroupKind::Translation
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lift_and_group_conv_match_nested_sums(seed in any::<u64>(), p4 in any::<bool>(), h in 1usize..6, w in 1usize..6, ks in prop::sample::select(vec![1usize, 3, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = group_kind(p4);
        let grid = if p4 { Grid::square(h).unwrap() } else { Grid::new(h, w).unwrap() };
        let f = common::random_signal(&mut rng, grid, 2);
        let u = Kernel::random(&mut rng, 3, 2, 1, ks, 1.0).unwrap();
        let got = conv::lift_conv(&f, &u, g).unwrap();
        prop_assert!(common::max_abs_diff(got.values(), common::lift_conv(&f, &u, g).values()) <= 1e-12);
        let hs = common::random_group_signal(&mut rng, g, grid, 2);
        let wk = Kernel::random(&mut rng, 2, 2, g.rotations(), ks, 1.0).unwrap();
        let got = conv::group_conv(&hs, &wk).unwrap();
        prop_assert!(common::max_abs_diff(got.values(), common::group_conv(&hs, &wk).values()) <= 1e-12);
    }

    #[test]
    fn flow_conv_matches_nested_sums(seed in any::<u64>(), n in 2usize..6, radius in 1usize..3, full in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::square(n).unwrap();
        let set = Arc::new(FlowSet::translation(radius));
        let slices = (0..set.len()).map(|_| common::random_group_signal(&mut rng, GroupKind::Translation, grid, 1)).collect();
        let state = LiftedState::new(set.clone(), slices).unwrap();
        let base = Kernel::random(&mut rng, 2, 1, 1, 3, 1.0).unwrap();
        let vk = if full {
            VKernel::full(base, (0..set.len()).map(|k| 0.1 * k as f64 - 0.3).collect())
        } else {
            VKernel::delta(base)
        };
        let got = conv::flow_conv(&state, &vk).unwrap();
        for (a, b) in got.slices().iter().zip(common::flow_conv(&state, &vk)) {
            prop_assert!(common::max_abs_diff(a.values(), b.values()) <= 1e-12);
        }
    }

    #[test]
    fn group_actions_compose(seed in any::<u64>(), n in 1usize..7, r1 in 0i64..4, r2 in 0i64..4, t in (-9i64..9, -9i64..9, -9i64..9, -9i64..9)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::square(n).unwrap();
        let a = GroupElement::new(r1, t.0, t.1);
        let b = GroupElement::new(r2, t.2, t.3);
        let hs = common::random_group_signal(&mut rng, GroupKind::RotoTranslation, grid, 1);
        let two_step = common::act_group_signal(&common::act_group_signal(&hs, &b), &a);
        let once = common::act_group_signal(&hs, &a.compose(&b));
        prop_assert_eq!(two_step.values(), once.values());
        let (lib, naive) = (hs.act(&a).unwrap(), common::act_group_signal(&hs, &a));
        prop_assert_eq!(lib.values(), naive.values());
    }
}

#[test]
fn fernn_residuals_vanish_for_interior_velocities_only() {
    // With V^T_1, a flow at (1,0) maps slice ν to ν − (1,0); slices whose
    // partner leaves V are truncated, so only interior slices must match.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = Grid::square(7).unwrap();
    let set = Arc::new(FlowSet::translation(1));
    let u = Kernel::random(&mut rng, 2, 1, 1, 3, 0.6).unwrap();
    let w = Kernel::random(&mut rng, 2, 2, 1, 3, 0.2).unwrap();
    let p = FernnParams::new(GroupKind::Translation, u, VKernel::delta(w), set.clone(), Nonlinearity::Relu, LiftMode::Trivial)
        .unwrap();
    let model = RecurrentModel::Fernn(p);
    let f = common::random_sequence(&mut rng, grid, 6);
    let nu = FlowGenerator::translation(1, 0);
    let plain = model.hidden_trajectory(&f).unwrap();
    let moved = model.hidden_trajectory(&common::apply_flow(&f, &nu)).unwrap();
    let mut boundary: f64 = 0.0;
    for t in 1..=6 {
        let (a, b) = (moved[t].as_lifted().unwrap(), plain[t].as_lifted().unwrap());
        assert!(common::lifted_residual(a, b, &nu, &common::flow(&nu, t as i64 - 1)) <= 1e-12);
        for (i, g) in set.iter().enumerate() {
            if common::index_of(&set, &g.sub(&nu)).is_none() {
                let want = common::act_group_signal(b.slice(i), &common::flow(&nu, t as i64 - 1));
                boundary = boundary.max(common::max_abs_diff(a.slice(i).values(), want.values()));
            }
        }
    }
    assert!(boundary > 1e-3, "boundary slices should differ, got {boundary}");
}

#[test]
fn grnn_breaks_flow_equivariance_after_first_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let grid = Grid::new(6, 8).unwrap();
    let p = GrnnParams::new(
        GroupKind::Translation,
        Kernel::random(&mut rng, 2, 1, 1, 3, 0.6).unwrap(),
        Kernel::random(&mut rng, 2, 2, 1, 3, 0.3).unwrap(),
        Nonlinearity::Relu,
    )
    .unwrap();
    let model = RecurrentModel::Grnn(p);
    let f = common::random_sequence(&mut rng, grid, 6);
    let nu = FlowGenerator::translation(0, 1);
    let plain = model.hidden_trajectory(&f).unwrap();
    let moved = model.hidden_trajectory(&common::apply_flow(&f, &nu)).unwrap();
    let at = |t: usize| {
        let want = common::act_group_signal(plain[t].as_group().unwrap(), &common::flow(&nu, t as i64 - 1));
        common::max_abs_diff(moved[t].as_group().unwrap().values(), want.values())
    };
    assert!(at(1) <= 1e-12);
    assert!(at(4) > 1e-3);
}
