//! Naive reference implementations used as test oracles. Everything here is
//! written directly from the defining sums, pixel by pixel, without sharing
//! code with the library's kernels.
#![allow(dead_code)]

use flowrnn::conv::{GroupSignal, Kernel, LiftedState, VKernel, VProfile};
use flowrnn::grid_signal::{Grid, Signal, SpaceTimeSignal};
use flowrnn::group_flow::{FlowGenerator, FlowSet, GroupElement, GroupKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn md(a: i64, n: usize) -> usize {
    a.rem_euclid(n as i64) as usize
}

/// `R^r (x, y)` with `R(x, y) = (−y, x)`.
pub fn rot(r: i64, p: (i64, i64)) -> (i64, i64) {
    let mut q = p;
    for _ in 0..r.rem_euclid(4) {
        q = (-q.1, q.0);
    }
    q
}

pub fn random_signal(rng: &mut ChaCha8Rng, grid: Grid, channels: usize) -> Signal {
    Signal::from_vec(grid, channels, (0..channels * grid.area()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_group_signal(rng: &mut ChaCha8Rng, group: GroupKind, grid: Grid, channels: usize) -> GroupSignal {
    let n = channels * group.rotations() * grid.area();
    GroupSignal::from_vec(group, grid, channels, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, grid: Grid, steps: usize) -> SpaceTimeSignal {
    SpaceTimeSignal::new((0..steps).map(|_| random_signal(rng, grid, 1)).collect()).unwrap()
}

fn tap(k: &Kernel, o: usize, i: usize, q: usize, d: (i64, i64)) -> f64 {
    let (kh, kw) = k.size();
    let (ch, cw) = ((kh / 2) as i64, (kw / 2) as i64);
    if d.0.abs() > ch || d.1.abs() > cw {
        return 0.0;
    }
    let a = (d.0 + ch) as usize;
    let b = (d.1 + cw) as usize;
    k.data()[(((o * k.in_channels() + i) * k.rotations() + q) * kh + a) * kw + b]
}

/// `(g·f)(p) = f(g⁻¹ p)` with `g p = R^r p + t`.
pub fn act_signal(f: &Signal, g: &GroupElement) -> Signal {
    let grid = f.grid();
    let (h, w) = (grid.height, grid.width);
    let r = g.rotation as i64;
    let mut out = vec![0.0; f.values().len()];
    for c in 0..f.channels() {
        for x in 0..h as i64 {
            for y in 0..w as i64 {
                let src = rot(-r, (x - g.translation.0, y - g.translation.1));
                out[c * h * w + x as usize * w + y as usize] = f.get(c, src.0, src.1);
            }
        }
    }
    Signal::from_vec(grid, f.channels(), out).unwrap()
}

/// `(g·h)(r, u) = h(r − q, R^{−q}(u − t))`.
pub fn act_group_signal(hs: &GroupSignal, g: &GroupElement) -> GroupSignal {
    let grid = hs.grid();
    let (h, w) = (grid.height, grid.width);
    let nr = hs.rotations();
    let q = g.rotation as i64;
    let mut out = vec![0.0; hs.values().len()];
    for c in 0..hs.channels() {
        for r in 0..nr {
            for x in 0..h as i64 {
                for y in 0..w as i64 {
                    let src = rot(-q, (x - g.translation.0, y - g.translation.1));
                    let rs = md(r as i64 - q, nr);
                    out[((c * nr + r) * h + x as usize) * w + y as usize] = hs.get(c, rs, src.0, src.1);
                }
            }
        }
    }
    GroupSignal::from_vec(hs.group(), grid, hs.channels(), out).unwrap()
}

/// `out(o, r, t) = Σ_i Σ_d f_i(t + R^r d) U(o, i, d)`.
pub fn lift_conv(f: &Signal, u: &Kernel, group: GroupKind) -> GroupSignal {
    let grid = f.grid();
    let (h, w) = (grid.height, grid.width);
    let nr = group.rotations();
    let (kh, kw) = u.size();
    let (ch, cw) = ((kh / 2) as i64, (kw / 2) as i64);
    let mut out = vec![0.0; u.out_channels() * nr * h * w];
    for o in 0..u.out_channels() {
        for r in 0..nr {
            for x in 0..h as i64 {
                for y in 0..w as i64 {
                    let mut acc = 0.0;
                    for i in 0..u.in_channels() {
                        for dx in -ch..=ch {
                            for dy in -cw..=cw {
                                let p = rot(r as i64, (dx, dy));
                                acc += f.get(i, x + p.0, y + p.1) * tap(u, o, i, 0, (dx, dy));
                            }
                        }
                    }
                    out[((o * nr + r) * h + x as usize) * w + y as usize] = acc;
                }
            }
        }
    }
    GroupSignal::from_vec(group, grid, u.out_channels(), out).unwrap()
}

/// `out(o, r, t) = Σ_i Σ_q Σ_d h(i, r + q, t + R^r d) W(o, i, q, d)`.
pub fn group_conv(hs: &GroupSignal, wk: &Kernel) -> GroupSignal {
    let grid = hs.grid();
    let (h, w) = (grid.height, grid.width);
    let nr = hs.rotations();
    let (kh, kw) = wk.size();
    let (ch, cw) = ((kh / 2) as i64, (kw / 2) as i64);
    let mut out = vec![0.0; wk.out_channels() * nr * h * w];
    for o in 0..wk.out_channels() {
        for r in 0..nr {
            for x in 0..h as i64 {
                for y in 0..w as i64 {
                    let mut acc = 0.0;
                    for i in 0..wk.in_channels() {
                        for q in 0..nr {
                            for dx in -ch..=ch {
                                for dy in -cw..=cw {
                                    let p = rot(r as i64, (dx, dy));
                                    acc += hs.get(i, (r + q) % nr, x + p.0, y + p.1) * tap(wk, o, i, q, (dx, dy));
                                }
                            }
                        }
                    }
                    out[((o * nr + r) * h + x as usize) * w + y as usize] = acc;
                }
            }
        }
    }
    GroupSignal::from_vec(hs.group(), grid, wk.out_channels(), out).unwrap()
}

/// Position of `g` in `set`, by linear search.
pub fn index_of(set: &FlowSet, g: &FlowGenerator) -> Option<usize> {
    set.generators().iter().position(|x| x == g)
}

/// `out(ν) = Σ_γ w(γ − ν) [h(γ) ⋆ W]`, with the δ profile keeping only `γ = ν`.
pub fn flow_conv(hs: &LiftedState, wk: &VKernel) -> Vec<GroupSignal> {
    let set = hs.flow_set();
    let gens = set.generators();
    let convolved: Vec<GroupSignal> = hs.slices().iter().map(|s| group_conv(s, &wk.base)).collect();
    gens.iter()
        .map(|nu| {
            let mut acc = vec![0.0; convolved[0].values().len()];
            for (gi, gamma) in gens.iter().enumerate() {
                let weight = match &wk.profile {
                    VProfile::DeltaAtIdentity => {
                        if gamma == nu {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    VProfile::Full(p) => match index_of(set, &gamma.sub(nu)) {
                        Some(d) => p[d],
                        None => 0.0,
                    },
                };
                for (a, v) in acc.iter_mut().zip(convolved[gi].values()) {
                    *a += weight * v;
                }
            }
            GroupSignal::from_vec(hs.group(), hs.grid(), wk.base.out_channels(), acc).unwrap()
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Flow element `ψ_t(ν)` computed independently: rotation `tω`, translation `t·v`.
pub fn flow(nu: &FlowGenerator, t: i64) -> GroupElement {
    let (vx, vy) = nu.velocity();
    GroupElement::new(t * nu.angular_velocity(), t * vx, t * vy)
}

/// Expected flow-equivariance residual of a FERNN trajectory pair:
/// `max |h_t[ψf](ν) − g_t·h_t[f](ν − ν̂)|` over `ν` with `ν − ν̂ ∈ V`, where
/// `g_t = ψ_{t−1}(ν̂)` (trivial lift) or the identity (non-trivial lift).
pub fn lifted_residual(moved: &LiftedState, plain: &LiftedState, nu_hat: &FlowGenerator, g: &GroupElement) -> f64 {
    let set = moved.flow_set();
    let mut worst: f64 = 0.0;
    for (i, nu) in set.generators().iter().enumerate() {
        if let Some(j) = index_of(set, &nu.sub(nu_hat)) {
            let want = act_group_signal(plain.slice(j), g);
            worst = worst.max(max_abs_diff(moved.slice(i).values(), want.values()));
        }
    }
    worst
}

pub fn apply_flow(seq: &SpaceTimeSignal, nu: &FlowGenerator) -> SpaceTimeSignal {
    SpaceTimeSignal::new(seq.frames().iter().enumerate().map(|(t, f)| act_signal(f, &flow(nu, t as i64))).collect())
        .unwrap()
}
