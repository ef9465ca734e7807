//! Dual-rollout residuals: run a model on `f` and on `ψ(ν̂)·f`, map the
//! first trajectory through the expected output action, and report the
//! largest discrepancy per time step.

use crate::conv::GroupSignal;
use crate::error::{Error, Result};
use crate::grid_signal::{apply_flow_to_sequence, SpaceTimeSignal};
use crate::group_flow::{flow_element, rotate_vec, FlowGenerator, GroupElement};
use crate::rnn::{FernnParams, GrnnParams, HiddenState, LiftMode, RecurrentModel};

fn lifted_pairs(
    p: &FernnParams,
    f: &SpaceTimeSignal,
    nu_hat: &FlowGenerator,
) -> Result<(Vec<HiddenState>, Vec<HiddenState>)> {
    let model = RecurrentModel::Fernn(p.clone());
    let plain = model.hidden_trajectory(f)?;
    let moved = model.hidden_trajectory(&apply_flow_to_sequence(f, nu_hat)?)?;
    Ok((plain, moved))
}

/// Per-step residual (`t = 1..=T`) of
/// `h_t[ψ(ν̂)·f](ν, g) = h_t[f](ν − ν̂, ψ_{t−1}(ν̂)⁻¹·g)` for a trivial-lift
/// FERNN, over the `ν` with `ν − ν̂ ∈ V`. For a non-trivial-lift FERNN the
/// expected action is the pure `V` shift `h_t[f](ν − ν̂, g)`.
pub fn fernn_flow_residuals(p: &FernnParams, f: &SpaceTimeSignal, nu_hat: &FlowGenerator) -> Result<Vec<f64>> {
    if !p.flow_set.contains(nu_hat) {
        return Err(Error::GeneratorNotInSet(nu_hat.key()));
    }
    let (plain, moved) = lifted_pairs(p, f, nu_hat)?;
    let mut out = Vec::with_capacity(f.len());
    for t in 1..plain.len() {
        let a = moved[t].as_lifted().expect("FERNN state");
        let b = plain[t].as_lifted().expect("FERNN state");
        let g = match p.lift_mode {
            LiftMode::Trivial => flow_element(nu_hat, t as i64 - 1),
            LiftMode::Nontrivial => GroupElement::IDENTITY,
        };
        let mut worst: f64 = 0.0;
        for (i, nu) in p.flow_set.iter().enumerate() {
            if let Some(j) = p.flow_set.shift_index(nu, nu_hat)? {
                let expected = b.slice(j).act(&g)?;
                worst = worst.max(a.slice(i).max_abs_diff(&expected)?);
            }
        }
        out.push(worst);
    }
    Ok(out)
}

fn grnn_pairs(p: &GrnnParams, f: &SpaceTimeSignal, nu_hat: &FlowGenerator) -> Result<(Vec<GroupSignal>, Vec<GroupSignal>)> {
    let model = RecurrentModel::Grnn(p.clone());
    let unwrap = |v: Vec<HiddenState>| v.into_iter().map(|h| h.as_group().expect("G-RNN state").clone()).collect();
    let plain = unwrap(model.hidden_trajectory(f)?);
    let moved = unwrap(model.hidden_trajectory(&apply_flow_to_sequence(f, nu_hat)?)?);
    Ok((plain, moved))
}

/// Per-step `‖h_t[ψ(ν̂)·f] − ψ_{t−1}(ν̂)·h_t[f]‖_∞` for a G-RNN, `t = 1..=T`.
pub fn grnn_flow_residuals(p: &GrnnParams, f: &SpaceTimeSignal, nu_hat: &FlowGenerator) -> Result<Vec<f64>> {
    let (plain, moved) = grnn_pairs(p, f, nu_hat)?;
    (1..plain.len())
        .map(|t| moved[t].max_abs_diff(&plain[t].act(&flow_element(nu_hat, t as i64 - 1))?))
        .collect()
}

/// Per-step `‖h_t[ψ(ν̂)·f] − h_t[f]‖_∞` (flow invariance), `t = 1..=T`.
pub fn grnn_invariance_residuals(p: &GrnnParams, f: &SpaceTimeSignal, nu_hat: &FlowGenerator) -> Result<Vec<f64>> {
    let (plain, moved) = grnn_pairs(p, f, nu_hat)?;
    (1..plain.len()).map(|t| moved[t].max_abs_diff(&plain[t])).collect()
}

/// Generator `ν'` with `g·ψ_s(ν')·g⁻¹ = ψ_s(ν)`, or `None` when the
/// conjugate is not a flow of the same kind (rotation flows under a
/// translated `g`).
fn conjugate_generator(nu: &FlowGenerator, g: &GroupElement) -> Option<FlowGenerator> {
    if nu.is_rotation() {
        (g.translation == (0, 0)).then_some(*nu)
    } else {
        let (vx, vy) = rotate_vec(nu.velocity(), (4 - g.rotation % 4) % 4);
        Some(FlowGenerator::translation(vx, vy))
    }
}

/// Per-step residual of static equivariance: every frame moved by the same
/// `g`. Group states are compared with `g·h_t`; lifted states with slice `ν`
/// of the moved run against `g·h_t(ν')`, where `ν'` is `ν` conjugated back
/// by `g` (a pure relabeling for translations, the identity for rotations).
/// For lifted models `g` must normalize the flow set and, with a full V
/// profile, leave the profile invariant.
pub fn static_residuals(model: &RecurrentModel, f: &SpaceTimeSignal, g: &GroupElement) -> Result<Vec<f64>> {
    let moved_input =
        SpaceTimeSignal::new(f.frames().iter().map(|s| s.act(g)).collect::<Result<Vec<_>>>()?)?;
    let plain = model.hidden_trajectory(f)?;
    let moved = model.hidden_trajectory(&moved_input)?;
    (1..plain.len())
        .map(|t| match (&moved[t], &plain[t]) {
            (HiddenState::Group(a), HiddenState::Group(b)) => a.max_abs_diff(&b.act(g)?),
            (HiddenState::Lifted(a), HiddenState::Lifted(b)) => {
                let set = a.flow_set();
                let mut worst: f64 = 0.0;
                for (i, nu) in set.iter().enumerate() {
                    let j = conjugate_generator(nu, g).and_then(|c| set.position(&c)).ok_or_else(|| {
                        Error::InvalidArgument(format!("{g:?} does not map the flow set onto itself"))
                    })?;
                    worst = worst.max(a.slice(i).max_abs_diff(&b.slice(j).act(g)?)?);
                }
                Ok(worst)
            }
            _ => unreachable!("trajectories of one model share a state kind"),
        })
        .collect()
}

pub fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}
