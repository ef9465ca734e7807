//! Lifting, group, flow-lifting and flow convolutions on cyclic grids.
//!
//! All operators are cross-correlations with the kernel indexed as
//! `W(g⁻¹·x)`. For the translation group this is
//! `out(t) = Σ_d f(t + d) W(d)`; for `p4` the kernel is additionally rotated
//! by each output rotation `r` and, for group convolutions, cycled along the
//! rotation axis. Kernels have odd square support centered at the origin and
//! are zero outside it.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_signal::{act_plane, Grid, Signal};
use crate::group_flow::{flow_element, rotate_vec, FlowGenerator, FlowSet, GroupElement, GroupKind, Truncation};

/// Convolution weights `K' × K × (rotations) × kh × kw`.
///
/// `rotations` is the size of the rotation axis of the kernel's domain: 1 for
/// lifting kernels and translation-group kernels, 4 for `p4` group kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    out_channels: usize,
    in_channels: usize,
    rotations: usize,
    kh: usize,
    kw: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        rotations: usize,
        (kh, kw): (usize, usize),
        data: Vec<f64>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidArgument("kernel channel counts must be positive".into()));
        }
        if rotations != 1 && rotations != 4 {
            return Err(Error::InvalidArgument(format!("kernel rotation axis must be 1 or 4, got {rotations}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel taps must be odd, got {kh}x{kw}")));
        }
        let n = out_channels * in_channels * rotations * kh * kw;
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!("kernel expects {n} taps, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel taps must be finite".into()));
        }
        Ok(Kernel { out_channels, in_channels, rotations, kh, kw, data })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, rotations: usize, size: usize) -> Result<Self> {
        let n = out_channels * in_channels * rotations * size * size;
        Self::new(out_channels, in_channels, rotations, (size, size), vec![0.0; n])
    }

    /// Identity map: unit tap at the spatial center (and rotation offset 0)
    /// connecting channel `i` to channel `i`.
    pub fn delta(channels: usize, rotations: usize, size: usize) -> Result<Self> {
        let mut k = Self::zeros(channels, channels, rotations, size)?;
        let c = size / 2;
        for i in 0..channels {
            let idx = k.index(i, i, 0, c, c);
            k.data[idx] = 1.0;
        }
        Ok(k)
    }

    pub fn constant(out_channels: usize, in_channels: usize, rotations: usize, size: usize, value: f64) -> Result<Self> {
        let n = out_channels * in_channels * rotations * size * size;
        Self::new(out_channels, in_channels, rotations, (size, size), vec![value; n])
    }

    /// Uniform taps in `±scale`.
    pub fn random(
        rng: &mut impl Rng,
        out_channels: usize,
        in_channels: usize,
        rotations: usize,
        size: usize,
        scale: f64,
    ) -> Result<Self> {
        let n = out_channels * in_channels * rotations * size * size;
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self::new(out_channels, in_channels, rotations, (size, size), data)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn rotations(&self) -> usize {
        self.rotations
    }

    pub fn size(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn index(&self, o: usize, i: usize, q: usize, a: usize, b: usize) -> usize {
        (((o * self.in_channels + i) * self.rotations + q) * self.kh + a) * self.kw + b
    }

    /// Tap value at integer offset `d` (zero outside the support).
    pub fn tap(&self, o: usize, i: usize, q: usize, d: (i64, i64)) -> f64 {
        let (ch, cw) = ((self.kh / 2) as i64, (self.kw / 2) as i64);
        if d.0.abs() > ch || d.1.abs() > cw {
            return 0.0;
        }
        self.data[self.index(o, i, q, (d.0 + ch) as usize, (d.1 + cw) as usize)]
    }

    /// All `K'×K×q` planes rotated by `r` quarter turns:
    /// `out(d') = in(R^{−r} d')`. Requires square support.
    fn rotated(&self, r: u8) -> Vec<f64> {
        if r == 0 {
            return self.data.clone();
        }
        let s = self.kh * self.kw;
        let mut out = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks_exact(s).zip(out.chunks_exact_mut(s)) {
            rotate_taps(src, dst, self.kh, r);
        }
        out
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("kernel taps must be finite".into()))
        }
    }
}

/// `dst(d') = src(R^{−r} d')` for a square `k × k` tap plane.
fn rotate_taps(src: &[f64], dst: &mut [f64], k: usize, r: u8) {
    let c = (k / 2) as i64;
    for a in 0..k {
        for b in 0..k {
            let d = rotate_vec((a as i64 - c, b as i64 - c), (4 - r % 4) % 4);
            dst[a * k + b] = src[((d.0 + c) as usize) * k + (d.1 + c) as usize];
        }
    }
}

/// Adjoint of [`rotate_taps`]: `dst(d) += src(R^{r} d)`.
fn unrotate_taps_add(src: &[f64], dst: &mut [f64], k: usize, r: u8) {
    let c = (k / 2) as i64;
    for a in 0..k {
        for b in 0..k {
            let d = rotate_vec((a as i64 - c, b as i64 - c), r);
            dst[a * k + b] += src[((d.0 + c) as usize) * k + (d.1 + c) as usize];
        }
    }
}

/// Cyclic cross-correlation on one plane:
/// `out(x, y) += Σ_{a,b} k(a, b) · inp(x + a − ch, y + b − cw)`.
pub(crate) fn corr_add(out: &mut [f64], inp: &[f64], h: usize, w: usize, k: &[f64], kh: usize, kw: usize) {
    let (ch, cw) = (kh / 2, kw / 2);
    for a in 0..kh {
        for b in 0..kw {
            let wt = k[a * kw + b];
            if wt == 0.0 {
                continue;
            }
            let sy = (b + w * (cw / w + 1) - cw) % w;
            for x in 0..h {
                let sx = (x + a + h * (ch / h + 1) - ch) % h;
                let src = &inp[sx * w..(sx + 1) * w];
                let dst = &mut out[x * w..(x + 1) * w];
                // dst[y] += wt * src[(y + sy) % w]
                let split = w - sy;
                for (d, s) in dst[..split].iter_mut().zip(&src[sy..]) {
                    *d += wt * s;
                }
                for (d, s) in dst[split..].iter_mut().zip(&src[..sy]) {
                    *d += wt * s;
                }
            }
        }
    }
}

/// Adjoint of [`corr_add`] with respect to `inp`:
/// `gin(x + a − ch, y + b − cw) += k(a, b) · gout(x, y)`.
pub(crate) fn corr_add_adjoint(gin: &mut [f64], gout: &[f64], h: usize, w: usize, k: &[f64], kh: usize, kw: usize) {
    let (ch, cw) = (kh / 2, kw / 2);
    for a in 0..kh {
        for b in 0..kw {
            let wt = k[a * kw + b];
            if wt == 0.0 {
                continue;
            }
            let sy = (b + w * (cw / w + 1) - cw) % w;
            for x in 0..h {
                let sx = (x + a + h * (ch / h + 1) - ch) % h;
                let src = &gout[x * w..(x + 1) * w];
                let dst = &mut gin[sx * w..(sx + 1) * w];
                let split = w - sy;
                for (s, d) in src[..split].iter().zip(&mut dst[sy..]) {
                    *d += wt * s;
                }
                for (s, d) in src[split..].iter().zip(&mut dst[..sy]) {
                    *d += wt * s;
                }
            }
        }
    }
}

/// Gradient of [`corr_add`] with respect to the taps:
/// `gk(a, b) += Σ_{x,y} gout(x, y) · inp(x + a − ch, y + b − cw)`.
pub(crate) fn corr_kernel_grad(gk: &mut [f64], inp: &[f64], gout: &[f64], h: usize, w: usize, kh: usize, kw: usize) {
    let (ch, cw) = (kh / 2, kw / 2);
    for a in 0..kh {
        for b in 0..kw {
            let sy = (b + w * (cw / w + 1) - cw) % w;
            let mut acc = 0.0;
            for x in 0..h {
                let sx = (x + a + h * (ch / h + 1) - ch) % h;
                let src = &inp[sx * w..(sx + 1) * w];
                let g = &gout[x * w..(x + 1) * w];
                let split = w - sy;
                for (gv, s) in g[..split].iter().zip(&src[sy..]) {
                    acc += gv * s;
                }
                for (gv, s) in g[split..].iter().zip(&src[..sy]) {
                    acc += gv * s;
                }
            }
            gk[a * kw + b] += acc;
        }
    }
}

/// A `K`-channel function on the group: rotation axis (1 or 4) × grid.
/// Layout `[channel][rotation][x][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSignal {
    group: GroupKind,
    grid: Grid,
    channels: usize,
    values: Vec<f64>,
}

impl GroupSignal {
    pub fn zeros(group: GroupKind, grid: Grid, channels: usize) -> Self {
        let n = channels * group.rotations() * grid.area();
        GroupSignal { group, grid, channels, values: vec![0.0; n] }
    }

    pub fn from_vec(group: GroupKind, grid: Grid, channels: usize, values: Vec<f64>) -> Result<Self> {
        let n = channels * group.rotations() * grid.area();
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!("group signal expects {n} values, got {}", values.len())));
        }
        if group == GroupKind::RotoTranslation {
            grid.require_square()?;
        }
        Ok(GroupSignal { group, grid, channels, values })
    }

    /// A spatial signal viewed as a function on the translation group.
    pub fn from_signal(s: &Signal) -> Self {
        GroupSignal {
            group: GroupKind::Translation,
            grid: s.grid(),
            channels: s.channels(),
            values: s.values().to_vec(),
        }
    }

    /// Flatten the rotation axis into channels (`K·R` spatial channels).
    pub fn to_signal(&self) -> Signal {
        Signal::from_vec(self.grid, self.channels * self.group.rotations(), self.values.clone())
            .expect("group signal layout is channel-major")
    }

    pub fn group(&self) -> GroupKind {
        self.group
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rotations(&self) -> usize {
        self.group.rotations()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn plane(&self, c: usize, r: usize) -> &[f64] {
        let a = self.grid.area();
        let start = (c * self.rotations() + r) * a;
        &self.values[start..start + a]
    }

    pub fn get(&self, c: usize, r: usize, x: i64, y: i64) -> f64 {
        self.plane(c, r)[self.grid.wrap(x, y)]
    }

    pub fn same_shape(&self, other: &GroupSignal) -> bool {
        self.group == other.group && self.grid == other.grid && self.channels == other.channels
    }

    pub(crate) fn check_shape(&self, other: &GroupSignal) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "group signals differ: {:?} {}ch {:?} vs {:?} {}ch {:?}",
                self.group, self.channels, self.grid, other.group, other.channels, other.grid
            )))
        }
    }

    pub fn lin_comb(&self, alpha: f64, other: &GroupSignal, beta: f64) -> Result<GroupSignal> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(GroupSignal { values, ..self.clone_empty() })
    }

    pub fn max_abs_diff(&self, other: &GroupSignal) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn clone_empty(&self) -> GroupSignal {
        GroupSignal { group: self.group, grid: self.grid, channels: self.channels, values: Vec::new() }
    }

    /// Left action `(g·h)(r, u) = h(r − q, R^{−q}(u − t))` for `g = (q, t)`.
    pub fn act(&self, g: &GroupElement) -> Result<GroupSignal> {
        if g.rotation != 0 && self.group != GroupKind::RotoTranslation {
            return Err(Error::GroupMismatch(
                "rotations do not act on translation-group feature maps".into(),
            ));
        }
        let (h, w) = (self.grid.height, self.grid.width);
        let a = self.grid.area();
        let nr = self.rotations();
        let mut out = vec![0.0; self.values.len()];
        for c in 0..self.channels {
            for r in 0..nr {
                let src_r = (r + nr - g.rotation as usize % nr) % nr;
                let src = self.plane(c, src_r);
                let dst = &mut out[(c * nr + r) * a..(c * nr + r + 1) * a];
                act_plane(src, dst, h, w, g);
            }
        }
        Ok(GroupSignal { values: out, ..self.clone_empty() })
    }

    /// Pointwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> GroupSignal {
        GroupSignal { values: self.values.iter().map(|v| f(*v)).collect(), ..self.clone_empty() }
    }
}

fn check_lift(f: &Signal, u: &Kernel, group: GroupKind) -> Result<()> {
    u.check_finite()?;
    if u.rotations != 1 {
        return Err(Error::ShapeMismatch("lifting kernels have no rotation axis".into()));
    }
    if u.in_channels != f.channels() {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {} input channels, signal has {}",
            u.in_channels,
            f.channels()
        )));
    }
    if group == GroupKind::RotoTranslation {
        f.grid().require_square()?;
        if u.kh != u.kw {
            return Err(Error::ShapeMismatch("p4 kernels need square support".into()));
        }
    }
    Ok(())
}

/// Lifting convolution `[f ⋆̂ U](g) = Σ_x Σ_k f_k(x) U_k(g⁻¹·x)`.
pub fn lift_conv(f: &Signal, u: &Kernel, group: GroupKind) -> Result<GroupSignal> {
    check_lift(f, u, group)?;
    let grid = f.grid();
    let (h, w, a) = (grid.height, grid.width, grid.area());
    let nr = group.rotations();
    let mut out = GroupSignal::zeros(group, grid, u.out_channels);
    for r in 0..nr {
        let rk = u.rotated(r as u8);
        let s = u.kh * u.kw;
        for o in 0..u.out_channels {
            let dst = &mut out.values[(o * nr + r) * a..(o * nr + r + 1) * a];
            for i in 0..u.in_channels {
                let k = &rk[(o * u.in_channels + i) * s..(o * u.in_channels + i + 1) * s];
                corr_add(dst, f.channel(i), h, w, k, u.kh, u.kw);
            }
        }
    }
    Ok(out)
}

/// Accumulate `∂L/∂U` for [`lift_conv`] given the output gradient.
pub fn lift_conv_kernel_grad(f: &Signal, gout: &GroupSignal, u: &Kernel, grad: &mut [f64]) -> Result<()> {
    check_lift(f, u, gout.group)?;
    if gout.channels != u.out_channels || gout.grid != f.grid() || grad.len() != u.data.len() {
        return Err(Error::ShapeMismatch("lift_conv gradient shapes disagree".into()));
    }
    let grid = f.grid();
    let (h, w) = (grid.height, grid.width);
    let nr = gout.rotations();
    let s = u.kh * u.kw;
    let mut rotated_grad = vec![0.0; u.data.len()];
    for r in 0..nr {
        rotated_grad.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..u.out_channels {
            let g = gout.plane(o, r);
            for i in 0..u.in_channels {
                let gk = &mut rotated_grad[(o * u.in_channels + i) * s..(o * u.in_channels + i + 1) * s];
                corr_kernel_grad(gk, f.channel(i), g, h, w, u.kh, u.kw);
            }
        }
        if r == 0 {
            grad.iter_mut().zip(&rotated_grad).for_each(|(d, s)| *d += s);
        } else {
            for (src, dst) in rotated_grad.chunks_exact(s).zip(grad.chunks_exact_mut(s)) {
                unrotate_taps_add(src, dst, u.kh, r as u8);
            }
        }
    }
    Ok(())
}

fn check_group(hs: &GroupSignal, wk: &Kernel) -> Result<()> {
    wk.check_finite()?;
    if wk.rotations != hs.rotations() {
        return Err(Error::ShapeMismatch(format!(
            "kernel rotation axis {} does not match state rotation axis {}",
            wk.rotations,
            hs.rotations()
        )));
    }
    if wk.in_channels != hs.channels {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {} input channels, state has {}",
            wk.in_channels, hs.channels
        )));
    }
    if hs.group == GroupKind::RotoTranslation && wk.kh != wk.kw {
        return Err(Error::ShapeMismatch("p4 kernels need square support".into()));
    }
    Ok(())
}

/// Group convolution `[h ⋆ W](g) = Σ_m Σ_k h_k(m) W_k(g⁻¹·m)`.
pub fn group_conv(hs: &GroupSignal, wk: &Kernel) -> Result<GroupSignal> {
    check_group(hs, wk)?;
    let mut out = GroupSignal::zeros(hs.group, hs.grid, wk.out_channels);
    group_conv_into(hs, wk, &mut out);
    Ok(out)
}

/// `out += hs ⋆ wk` (shapes already validated).
pub(crate) fn group_conv_into(hs: &GroupSignal, wk: &Kernel, out: &mut GroupSignal) {
    let (h, w, a) = (hs.grid.height, hs.grid.width, hs.grid.area());
    let nr = hs.rotations();
    let s = wk.kh * wk.kw;
    for r in 0..nr {
        let rk = wk.rotated(r as u8);
        for o in 0..wk.out_channels {
            let dst = &mut out.values[(o * nr + r) * a..(o * nr + r + 1) * a];
            for i in 0..wk.in_channels {
                for q in 0..nr {
                    let k = &rk[((o * wk.in_channels + i) * nr + q) * s..][..s];
                    corr_add(dst, hs.plane(i, (r + q) % nr), h, w, k, wk.kh, wk.kw);
                }
            }
        }
    }
}

/// Adjoint of [`group_conv`] in its first argument, accumulated into `gin`.
pub(crate) fn group_conv_input_grad(gout: &GroupSignal, wk: &Kernel, gin: &mut GroupSignal) {
    let (h, w, a) = (gout.grid.height, gout.grid.width, gout.grid.area());
    let nr = gout.rotations();
    let s = wk.kh * wk.kw;
    for r in 0..nr {
        let rk = wk.rotated(r as u8);
        for o in 0..wk.out_channels {
            let g = gout.plane(o, r);
            for i in 0..wk.in_channels {
                for q in 0..nr {
                    let k = &rk[((o * wk.in_channels + i) * nr + q) * s..][..s];
                    let start = (i * nr + (r + q) % nr) * a;
                    corr_add_adjoint(&mut gin.values[start..start + a], g, h, w, k, wk.kh, wk.kw);
                }
            }
        }
    }
}

/// Accumulate `∂L/∂W` for [`group_conv`].
pub(crate) fn group_conv_kernel_grad(hs: &GroupSignal, gout: &GroupSignal, wk: &Kernel, grad: &mut [f64]) {
    let (h, w) = (hs.grid.height, hs.grid.width);
    let nr = hs.rotations();
    let s = wk.kh * wk.kw;
    let mut rotated_grad = vec![0.0; wk.data.len()];
    for r in 0..nr {
        rotated_grad.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..wk.out_channels {
            let g = gout.plane(o, r);
            for i in 0..wk.in_channels {
                for q in 0..nr {
                    let base = ((o * wk.in_channels + i) * nr + q) * s;
                    corr_kernel_grad(&mut rotated_grad[base..base + s], hs.plane(i, (r + q) % nr), g, h, w, wk.kh, wk.kw);
                }
            }
        }
        if r == 0 {
            grad.iter_mut().zip(&rotated_grad).for_each(|(d, s)| *d += s);
        } else {
            for (src, dst) in rotated_grad.chunks_exact(s).zip(grad.chunks_exact_mut(s)) {
                unrotate_taps_add(src, dst, wk.kh, r as u8);
            }
        }
    }
}

/// How a flow kernel couples the `V` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VProfile {
    /// `W(ν, g) = δ_{ν=0} W(g)`: no mixing between `V` channels.
    DeltaAtIdentity,
    /// `W(ν, g) = p[ν] · W(g)`, one real weight per generator of `V`
    /// (in `V` order), applied to the difference `γ − ν`.
    Full(Vec<f64>),
}

/// Hidden-to-hidden kernel on `V × G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VKernel {
    pub base: Kernel,
    pub profile: VProfile,
}

impl VKernel {
    pub fn delta(base: Kernel) -> Self {
        VKernel { base, profile: VProfile::DeltaAtIdentity }
    }

    pub fn full(base: Kernel, profile: Vec<f64>) -> Self {
        VKernel { base, profile: VProfile::Full(profile) }
    }

    pub fn param_count(&self) -> usize {
        self.base.param_count()
            + match &self.profile {
                VProfile::DeltaAtIdentity => 0,
                VProfile::Full(p) => p.len(),
            }
    }
}

/// Hidden state on `V × G`: one group signal per generator, in `V` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState {
    flow_set: Arc<FlowSet>,
    slices: Vec<GroupSignal>,
}

impl LiftedState {
    pub fn new(flow_set: Arc<FlowSet>, slices: Vec<GroupSignal>) -> Result<Self> {
        if slices.len() != flow_set.len() {
            return Err(Error::FlowSetMismatch(format!(
                "{} slices for a flow set of {} generators",
                slices.len(),
                flow_set.len()
            )));
        }
        for s in &slices[1..] {
            slices[0].check_shape(s)?;
        }
        Ok(LiftedState { flow_set, slices })
    }

    pub fn zeros(flow_set: Arc<FlowSet>, group: GroupKind, grid: Grid, channels: usize) -> Self {
        let slices = vec![GroupSignal::zeros(group, grid, channels); flow_set.len()];
        LiftedState { flow_set, slices }
    }

    pub fn flow_set(&self) -> &Arc<FlowSet> {
        &self.flow_set
    }

    pub fn slices(&self) -> &[GroupSignal] {
        &self.slices
    }

    pub fn slices_mut(&mut self) -> &mut [GroupSignal] {
        &mut self.slices
    }

    pub fn slice(&self, i: usize) -> &GroupSignal {
        &self.slices[i]
    }

    pub fn slice_for(&self, nu: &FlowGenerator) -> Option<&GroupSignal> {
        self.flow_set.position(nu).map(|i| &self.slices[i])
    }

    pub fn group(&self) -> GroupKind {
        self.slices[0].group
    }

    pub fn grid(&self) -> Grid {
        self.slices[0].grid
    }

    pub fn channels(&self) -> usize {
        self.slices[0].channels
    }

    pub fn same_shape(&self, other: &LiftedState) -> bool {
        *self.flow_set == *other.flow_set && self.slices[0].same_shape(&other.slices[0])
    }

    pub fn max_abs_diff(&self, other: &LiftedState) -> Result<f64> {
        if *self.flow_set != *other.flow_set {
            return Err(Error::FlowSetMismatch("lifted states use different flow sets".into()));
        }
        self.slices.iter().zip(&other.slices).try_fold(0.0, |m, (a, b)| Ok(f64::max(m, a.max_abs_diff(b)?)))
    }

    pub fn lin_comb(&self, alpha: f64, other: &LiftedState, beta: f64) -> Result<LiftedState> {
        if *self.flow_set != *other.flow_set {
            return Err(Error::FlowSetMismatch("lifted states use different flow sets".into()));
        }
        let slices = self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(a, b)| a.lin_comb(alpha, b, beta))
            .collect::<Result<Vec<_>>>()?;
        Ok(LiftedState { flow_set: self.flow_set.clone(), slices })
    }

    /// The same group element applied to every slice.
    pub fn act_uniform(&self, g: &GroupElement) -> Result<LiftedState> {
        let slices = self.slices.iter().map(|s| s.act(g)).collect::<Result<Vec<_>>>()?;
        Ok(LiftedState { flow_set: self.flow_set.clone(), slices })
    }

    /// Slice `ν` acted on by `ψ_t(ν)`.
    pub fn act_flow(&self, t: i64) -> Result<LiftedState> {
        let slices = self
            .slices
            .iter()
            .zip(self.flow_set.iter())
            .map(|(s, nu)| s.act(&flow_element(nu, t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LiftedState { flow_set: self.flow_set.clone(), slices })
    }

    /// `out(ν) = self(ν − ν̂)`; slices whose source leaves the set are zero
    /// under [`Truncation::Drop`].
    pub fn shift_v(&self, nu_hat: &FlowGenerator, policy: Truncation) -> Result<LiftedState> {
        let mut slices = Vec::with_capacity(self.slices.len());
        for nu in self.flow_set.iter() {
            let s = match self.flow_set.shift_index_with(nu, nu_hat, policy)? {
                Some(j) => self.slices[j].clone(),
                None => GroupSignal::zeros(self.group(), self.grid(), self.channels()),
            };
            slices.push(s);
        }
        Ok(LiftedState { flow_set: self.flow_set.clone(), slices })
    }
}

/// Trivial flow lift: the lifting convolution copied to every `ν`.
pub fn flow_lift_conv(f: &Signal, u: &Kernel, group: GroupKind, flow_set: &Arc<FlowSet>) -> Result<LiftedState> {
    check_flow_group(flow_set, group)?;
    let lifted = lift_conv(f, u, group)?;
    Ok(LiftedState { flow_set: flow_set.clone(), slices: vec![lifted; flow_set.len()] })
}

/// Non-trivial lift at time `t`:
/// `[f ⋆̂ U](ν, g) = Σ_x Σ_k f_k(x) U_k(g⁻¹·ψ_t(ν)⁻¹·x)`, computed as the
/// lifting convolution of `ψ_t(ν)⁻¹·f`.
pub fn nontrivial_lift_conv(
    f: &Signal,
    u: &Kernel,
    group: GroupKind,
    flow_set: &Arc<FlowSet>,
    t: i64,
) -> Result<LiftedState> {
    check_flow_group(flow_set, group)?;
    let slices = flow_set
        .iter()
        .map(|nu| lift_conv(&f.act(&flow_element(nu, t).inverse())?, u, group))
        .collect::<Result<Vec<_>>>()?;
    Ok(LiftedState { flow_set: flow_set.clone(), slices })
}

pub(crate) fn check_flow_group(flow_set: &FlowSet, group: GroupKind) -> Result<()> {
    if flow_set.required_group() == GroupKind::RotoTranslation && group != GroupKind::RotoTranslation {
        return Err(Error::GroupMismatch("rotation flows need the p4 group".into()));
    }
    Ok(())
}

/// Position of `γ − ν` in `V` for every `(ν, γ)` pair (drop truncation).
pub(crate) fn difference_table(flow_set: &FlowSet) -> Vec<Vec<Option<usize>>> {
    flow_set
        .iter()
        .map(|nu| flow_set.iter().map(|gamma| flow_set.position(&gamma.sub(nu))).collect())
        .collect()
}

/// Flow convolution
/// `[h ⋆ W](ν, g) = Σ_γ Σ_m Σ_k h_k(γ, m) W_k(γ − ν, g⁻¹·m)`;
/// differences leaving `V` are dropped.
pub fn flow_conv(hs: &LiftedState, wk: &VKernel) -> Result<LiftedState> {
    check_group(&hs.slices[0], &wk.base)?;
    let nv = hs.flow_set.len();
    let zero = GroupSignal::zeros(hs.group(), hs.grid(), wk.base.out_channels);
    let slices = match &wk.profile {
        VProfile::DeltaAtIdentity => hs
            .slices
            .iter()
            .map(|s| {
                let mut out = zero.clone();
                group_conv_into(s, &wk.base, &mut out);
                out
            })
            .collect(),
        VProfile::Full(p) => {
            if p.len() != nv {
                return Err(Error::FlowSetMismatch(format!("profile has {} weights, V has {nv}", p.len())));
            }
            let convolved: Vec<GroupSignal> = hs
                .slices
                .iter()
                .map(|s| {
                    let mut out = zero.clone();
                    group_conv_into(s, &wk.base, &mut out);
                    out
                })
                .collect();
            let table = difference_table(&hs.flow_set);
            table
                .iter()
                .map(|row| {
                    let mut out = zero.clone();
                    for (gamma, d) in row.iter().enumerate() {
                        if let Some(d) = d {
                            let c = p[*d];
                            if c != 0.0 {
                                out.values.iter_mut().zip(&convolved[gamma].values).for_each(|(o, v)| *o += c * v);
                            }
                        }
                    }
                    out
                })
                .collect()
        }
    };
    Ok(LiftedState { flow_set: hs.flow_set.clone(), slices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_signal(rng: &mut ChaCha8Rng, grid: Grid, k: usize) -> Signal {
        Signal::from_vec(grid, k, (0..k * grid.area()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_group_signal(rng: &mut ChaCha8Rng, group: GroupKind, grid: Grid, k: usize) -> GroupSignal {
        let n = k * group.rotations() * grid.area();
        GroupSignal::from_vec(group, grid, k, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn delta_kernels_are_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = Grid::square(5).unwrap();
        let f = rand_signal(&mut rng, grid, 1);
        let out = lift_conv(&f, &Kernel::delta(1, 1, 3).unwrap(), GroupKind::Translation).unwrap();
        assert_eq!(out.values(), f.values());
        for group in [GroupKind::Translation, GroupKind::RotoTranslation] {
            let h = rand_group_signal(&mut rng, group, grid, 3);
            let out = group_conv(&h, &Kernel::delta(3, group.rotations(), 3).unwrap()).unwrap();
            assert_eq!(out, h);
        }
    }

    #[test]
    fn lift_of_impulse_is_flipped_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grid = Grid::square(5).unwrap();
        let u = Kernel::random(&mut rng, 1, 1, 1, 3, 1.0).unwrap();
        let out = lift_conv(&Signal::delta(grid, 0, 0), &u, GroupKind::Translation).unwrap();
        for x in -2..=2 {
            for y in -2..=2 {
                assert_eq!(out.get(0, 0, x, y), u.tap(0, 0, 0, (-x, -y)));
            }
        }
    }

    #[test]
    fn lift_conv_equivariance_witness() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = Grid::square(6).unwrap();
        let f = rand_signal(&mut rng, grid, 1);
        let u = Kernel::random(&mut rng, 1, 1, 1, 3, 1.0).unwrap();
        let g = GroupElement::translation(2, 1);
        let a = lift_conv(&f.act(&g).unwrap(), &u, GroupKind::Translation).unwrap();
        let b = lift_conv(&f, &u, GroupKind::Translation).unwrap().act(&g).unwrap();
        assert_eq!(a.max_abs_diff(&b).unwrap(), 0.0);
    }

    #[test]
    fn constant_kernel_gives_constant_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let grid = Grid::square(4).unwrap();
        let h = rand_group_signal(&mut rng, GroupKind::Translation, grid, 2);
        // 5x5 taps on a 4x4 torus would double count; use 3x3 and check the
        // all-ones kernel sums a 3x3 neighbourhood, then a full-support case.
        let w = Kernel::constant(1, 2, 1, 3, 0.5).unwrap();
        let out = group_conv(&h, &w).unwrap();
        for x in 0..4 {
            for y in 0..4 {
                let mut s = 0.0;
                for c in 0..2 {
                    for dx in -1..=1 {
                        for dy in -1..=1 {
                            s += h.get(c, 0, x + dx, y + dy);
                        }
                    }
                }
                assert!((out.get(0, 0, x, y) - 0.5 * s).abs() < 1e-12);
            }
        }
        let grid3 = Grid::square(3).unwrap();
        let h3 = rand_group_signal(&mut rng, GroupKind::Translation, grid3, 2);
        let total: f64 = h3.values().iter().sum();
        let out = group_conv(&h3, &w).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.5 * total).abs() < 1e-12));
    }

    #[test]
    fn p4_lift_and_group_conv_rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = Grid::square(6).unwrap();
        let f = rand_signal(&mut rng, grid, 2);
        let u = Kernel::random(&mut rng, 3, 2, 1, 3, 1.0).unwrap();
        let w = Kernel::random(&mut rng, 2, 3, 4, 3, 1.0).unwrap();
        for r in 0..4 {
            let g = GroupElement::new(r, 1, -2);
            let lifted = lift_conv(&f, &u, GroupKind::RotoTranslation).unwrap();
            let a = lift_conv(&f.act(&g).unwrap(), &u, GroupKind::RotoTranslation).unwrap();
            assert!(a.max_abs_diff(&lifted.act(&g).unwrap()).unwrap() <= 1e-12);
            let b = group_conv(&lifted.act(&g).unwrap(), &w).unwrap();
            let c = group_conv(&lifted, &w).unwrap().act(&g).unwrap();
            assert!(b.max_abs_diff(&c).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn flow_lift_copies_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = Grid::square(5).unwrap();
        let f = rand_signal(&mut rng, grid, 1);
        let u = Kernel::random(&mut rng, 2, 1, 1, 3, 1.0).unwrap();
        let v1 = Arc::new(FlowSet::translation(1));
        let lifted = flow_lift_conv(&f, &u, GroupKind::Translation, &v1).unwrap();
        let plain = lift_conv(&f, &u, GroupKind::Translation).unwrap();
        assert_eq!(lifted.slices().len(), 9);
        assert!(lifted.slices().iter().all(|s| *s == plain));
        let v0 = Arc::new(FlowSet::trivial());
        assert_eq!(flow_lift_conv(&f, &u, GroupKind::Translation, &v0).unwrap().slice(0), &plain);
        assert!(flow_lift_conv(&f, &u, GroupKind::Translation, &Arc::new(FlowSet::rotation(1))).is_err());
    }

    #[test]
    fn nontrivial_lift_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let grid = Grid::square(6).unwrap();
        let f = rand_signal(&mut rng, grid, 1);
        let u = Kernel::random(&mut rng, 2, 1, 1, 3, 1.0).unwrap();
        let v1 = Arc::new(FlowSet::translation(1));
        let t0 = nontrivial_lift_conv(&f, &u, GroupKind::Translation, &v1, 0).unwrap();
        assert_eq!(t0, flow_lift_conv(&f, &u, GroupKind::Translation, &v1).unwrap());
        let t2 = nontrivial_lift_conv(&f, &u, GroupKind::Translation, &v1, 2).unwrap();
        let plain = lift_conv(&f, &u, GroupKind::Translation).unwrap();
        assert_eq!(t2.slice_for(&FlowGenerator::ZERO).unwrap(), &plain);
        for (i, nu) in v1.iter().enumerate() {
            let (vx, vy) = nu.velocity();
            let expect = lift_conv(&f.act_translate((-2 * vx, -2 * vy)), &u, GroupKind::Translation).unwrap();
            assert_eq!(t2.slice(i), &expect);
        }
    }

    #[test]
    fn flow_conv_delta_profile_is_slicewise() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let grid = Grid::square(5).unwrap();
        let v1 = Arc::new(FlowSet::translation(1));
        let slices = (0..9).map(|_| rand_group_signal(&mut rng, GroupKind::Translation, grid, 2)).collect();
        let hs = LiftedState::new(v1, slices).unwrap();
        let id = VKernel::delta(Kernel::delta(2, 1, 3).unwrap());
        assert_eq!(flow_conv(&hs, &id).unwrap(), hs);
        let w = Kernel::random(&mut rng, 3, 2, 1, 3, 1.0).unwrap();
        let out = flow_conv(&hs, &VKernel::delta(w.clone())).unwrap();
        for i in 0..9 {
            assert_eq!(out.slice(i), &group_conv(hs.slice(i), &w).unwrap());
        }
    }

    #[test]
    fn corr_primitives_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (h, w) = (4, 7);
        let inp: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; h * w];
        corr_add(&mut out, &inp, h, w, &k, 3, 5);
        let lhs: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut gin = vec![0.0; h * w];
        corr_add_adjoint(&mut gin, &g, h, w, &k, 3, 5);
        let rhs: f64 = gin.iter().zip(&inp).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let mut gk = vec![0.0; 15];
        corr_kernel_grad(&mut gk, &inp, &g, h, w, 3, 5);
        let rhs2: f64 = gk.iter().zip(&k).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs2).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let grid = Grid::square(4).unwrap();
        let f = Signal::zeros(grid, 2);
        let u = Kernel::zeros(1, 1, 1, 3).unwrap();
        assert!(matches!(lift_conv(&f, &u, GroupKind::Translation), Err(Error::ShapeMismatch(_))));
        let h = GroupSignal::zeros(GroupKind::RotoTranslation, grid, 1);
        assert!(matches!(group_conv(&h, &u), Err(Error::ShapeMismatch(_))));
        assert!(Kernel::zeros(1, 1, 1, 2).is_err());
        assert!(GroupSignal::from_vec(GroupKind::RotoTranslation, Grid::new(2, 3).unwrap(), 1, vec![0.0; 24]).is_err());
    }
}
