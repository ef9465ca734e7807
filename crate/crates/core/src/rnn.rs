//! Recurrent cores (G-RNN, FERNN with trivial or non-trivial lift), pooling
//! over the flow axis, a convolutional decoder, and sequence rollouts.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{
    flow_conv, group_conv, lift_conv, nontrivial_lift_conv, check_flow_group, corr_add, GroupSignal, Kernel,
    LiftedState, VKernel, VProfile,
};
use crate::error::{Error, Result};
use crate::grid_signal::{Grid, Signal, SpaceTimeSignal};
use crate::group_flow::{flow_element, FlowSet, GroupKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Tanh,
    Identity,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative given the pre-activation and the activation.
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => 1.0 - post * post,
            Nonlinearity::Identity => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Nonlinearity::Relu),
            "tanh" => Ok(Nonlinearity::Tanh),
            "identity" | "id" => Ok(Nonlinearity::Identity),
            _ => Err(Error::InvalidArgument(format!("unknown nonlinearity `{s}`"))),
        }
    }
}

/// `h_{t+1} = σ(h_t ⋆_G W + f_t ⋆̂_G U)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrnnParams {
    pub group: GroupKind,
    pub u: Kernel,
    pub w: Kernel,
    pub nonlinearity: Nonlinearity,
}

impl GrnnParams {
    pub fn new(group: GroupKind, u: Kernel, w: Kernel, nonlinearity: Nonlinearity) -> Result<Self> {
        validate_kernels(group, &u, &w)?;
        Ok(GrnnParams { group, u, w, nonlinearity })
    }

    pub fn hidden_channels(&self) -> usize {
        self.u.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.u.param_count() + self.w.param_count()
    }
}

fn validate_kernels(group: GroupKind, u: &Kernel, w: &Kernel) -> Result<()> {
    if u.rotations() != 1 {
        return Err(Error::ShapeMismatch("input kernel U must be a lifting kernel".into()));
    }
    if w.rotations() != group.rotations() {
        return Err(Error::ShapeMismatch(format!(
            "hidden kernel W has rotation axis {}, group {} needs {}",
            w.rotations(),
            group.name(),
            group.rotations()
        )));
    }
    if w.in_channels() != u.out_channels() || w.out_channels() != u.out_channels() {
        return Err(Error::ShapeMismatch(format!(
            "W must map {0} hidden channels to {0}, got {1}->{2}",
            u.out_channels(),
            w.in_channels(),
            w.out_channels()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftMode {
    Trivial,
    Nontrivial,
}

/// `h_{t+1}(ν, g) = σ(ψ₁(ν)·[h_t ⋆ W](ν, g) + [f_t ⋆̂ U](ν, g))` (trivial
/// lift), or without the `ψ₁(ν)` roll and with a time-dependent lift
/// (non-trivial lift).
#[derive(Debug, Clone, PartialEq)]
pub struct FernnParams {
    pub group: GroupKind,
    pub u: Kernel,
    pub w: VKernel,
    pub flow_set: Arc<FlowSet>,
    pub nonlinearity: Nonlinearity,
    pub lift_mode: LiftMode,
}

impl FernnParams {
    pub fn new(
        group: GroupKind,
        u: Kernel,
        w: VKernel,
        flow_set: Arc<FlowSet>,
        nonlinearity: Nonlinearity,
        lift_mode: LiftMode,
    ) -> Result<Self> {
        validate_kernels(group, &u, &w.base)?;
        check_flow_group(&flow_set, group)?;
        if let VProfile::Full(p) = &w.profile {
            if p.len() != flow_set.len() {
                return Err(Error::FlowSetMismatch(format!(
                    "profile has {} weights, V has {}",
                    p.len(),
                    flow_set.len()
                )));
            }
        }
        Ok(FernnParams { group, u, w, flow_set, nonlinearity, lift_mode })
    }

    /// The FERNN sharing a G-RNN's kernels, with a δ-restricted `W`.
    pub fn from_grnn(p: &GrnnParams, flow_set: Arc<FlowSet>, lift_mode: LiftMode) -> Result<Self> {
        Self::new(p.group, p.u.clone(), VKernel::delta(p.w.clone()), flow_set, p.nonlinearity, lift_mode)
    }

    pub fn hidden_channels(&self) -> usize {
        self.u.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.u.param_count() + self.w.param_count()
    }
}

fn check_state(h: &GroupSignal, f: &Signal, group: GroupKind, channels: usize) -> Result<()> {
    if h.group() != group || h.grid() != f.grid() || h.channels() != channels {
        return Err(Error::ShapeMismatch(format!(
            "hidden state ({} {}ch {:?}) does not fit model ({} {}ch) on input grid {:?}",
            h.group().name(),
            h.channels(),
            h.grid(),
            group.name(),
            channels,
            f.grid()
        )));
    }
    Ok(())
}

fn add_activate(mut pre: GroupSignal, other: &GroupSignal, sigma: Nonlinearity) -> GroupSignal {
    pre.values_mut().iter_mut().zip(other.values()).for_each(|(a, b)| *a = sigma.apply(*a + b));
    pre
}

/// One G-RNN update.
pub fn grnn_step(h: &GroupSignal, f: &Signal, p: &GrnnParams) -> Result<GroupSignal> {
    check_state(h, f, p.group, p.hidden_channels())?;
    let rec = group_conv(h, &p.w)?;
    let inp = lift_conv(f, &p.u, p.group)?;
    Ok(add_activate(rec, &inp, p.nonlinearity))
}

fn check_lifted(h: &LiftedState, f: &Signal, p: &FernnParams) -> Result<()> {
    if **h.flow_set() != *p.flow_set {
        return Err(Error::FlowSetMismatch("hidden state and model use different flow sets".into()));
    }
    check_state(h.slice(0), f, p.group, p.hidden_channels())
}

/// One trivial-lift FERNN update; `t` is unused.
pub fn fernn_step(h: &LiftedState, f: &Signal, p: &FernnParams, _t: i64) -> Result<LiftedState> {
    if p.lift_mode != LiftMode::Trivial {
        return Err(Error::InvalidArgument("fernn_step needs a trivial-lift model".into()));
    }
    check_lifted(h, f, p)?;
    let rec = flow_conv(h, &p.w)?;
    let inp = lift_conv(f, &p.u, p.group)?;
    let slices = rec
        .slices()
        .iter()
        .zip(p.flow_set.iter())
        .map(|(s, nu)| Ok(add_activate(s.act(&flow_element(nu, 1))?, &inp, p.nonlinearity)))
        .collect::<Result<Vec<_>>>()?;
    LiftedState::new(p.flow_set.clone(), slices)
}

/// One non-trivial-lift FERNN update at time `t` (no `ψ₁` roll).
pub fn fernn_step_nontrivial(h: &LiftedState, f: &Signal, p: &FernnParams, t: i64) -> Result<LiftedState> {
    if p.lift_mode != LiftMode::Nontrivial {
        return Err(Error::InvalidArgument("fernn_step_nontrivial needs a non-trivial-lift model".into()));
    }
    check_lifted(h, f, p)?;
    let rec = flow_conv(h, &p.w)?;
    let inp = nontrivial_lift_conv(f, &p.u, p.group, &p.flow_set, t)?;
    let slices = rec
        .slices()
        .iter()
        .zip(inp.slices())
        .map(|(a, b)| add_activate(a.clone(), b, p.nonlinearity))
        .collect();
    LiftedState::new(p.flow_set.clone(), slices)
}

/// Elementwise maximum over `V` and the winning slice per entry
/// (ties resolve to the lowest `V` index).
pub fn pool_with_argmax(h: &LiftedState) -> (GroupSignal, Vec<u32>) {
    let mut pooled = h.slice(0).clone();
    let mut arg = vec![0u32; pooled.values().len()];
    for (j, s) in h.slices().iter().enumerate().skip(1) {
        for ((p, a), v) in pooled.values_mut().iter_mut().zip(arg.iter_mut()).zip(s.values()) {
            if *v > *p {
                *p = *v;
                *a = j as u32;
            }
        }
    }
    (pooled, arg)
}

/// Max-pool over the flow axis.
pub fn pool_over_v(h: &LiftedState) -> GroupSignal {
    pool_with_argmax(h).0
}

/// Spatial convolution stack with ReLU between layers; the input is the
/// (pooled) group signal with its rotation axis folded into channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub layers: Vec<Kernel>,
}

impl DecoderParams {
    pub fn new(layers: Vec<Kernel>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("decoder needs at least one layer".into()));
        }
        for k in &layers {
            if k.rotations() != 1 {
                return Err(Error::ShapeMismatch("decoder kernels are spatial".into()));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::ShapeMismatch(format!(
                    "decoder layer emits {} channels, next expects {}",
                    pair[0].out_channels(),
                    pair[1].in_channels()
                )));
            }
        }
        Ok(DecoderParams { layers })
    }

    /// A single 1×1 identity layer.
    pub fn identity(channels: usize) -> Self {
        DecoderParams { layers: vec![Kernel::delta(channels, 1, 1).expect("valid delta kernel")] }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Kernel::param_count).sum()
    }

    pub fn decode(&self, h: &GroupSignal) -> Result<Signal> {
        let mut z = h.to_signal();
        if z.channels() != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} channels, state provides {}",
                self.in_channels(),
                z.channels()
            )));
        }
        let last = self.layers.len() - 1;
        for (l, k) in self.layers.iter().enumerate() {
            z = spatial_conv(&z, k);
            if l < last {
                z.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(z)
    }
}

/// Plain cyclic cross-correlation of a spatial signal.
pub(crate) fn spatial_conv(z: &Signal, k: &Kernel) -> Signal {
    let grid = z.grid();
    let (h, w, a) = (grid.height, grid.width, grid.area());
    let (kh, kw) = k.size();
    let s = kh * kw;
    let mut out = Signal::zeros(grid, k.out_channels());
    for o in 0..k.out_channels() {
        let dst = &mut out.values_mut()[o * a..(o + 1) * a];
        for i in 0..k.in_channels() {
            corr_add(dst, z.channel(i), h, w, &k.data()[(o * k.in_channels() + i) * s..][..s], kh, kw);
        }
    }
    out
}

/// A recurrent core of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentModel {
    Grnn(GrnnParams),
    Fernn(FernnParams),
}

/// Hidden state of a [`RecurrentModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenState {
    Group(GroupSignal),
    Lifted(LiftedState),
}

impl HiddenState {
    pub fn as_group(&self) -> Option<&GroupSignal> {
        match self {
            HiddenState::Group(g) => Some(g),
            HiddenState::Lifted(_) => None,
        }
    }

    pub fn as_lifted(&self) -> Option<&LiftedState> {
        match self {
            HiddenState::Lifted(l) => Some(l),
            HiddenState::Group(_) => None,
        }
    }
}

impl RecurrentModel {
    pub fn group(&self) -> GroupKind {
        match self {
            RecurrentModel::Grnn(p) => p.group,
            RecurrentModel::Fernn(p) => p.group,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        match self {
            RecurrentModel::Grnn(p) => p.hidden_channels(),
            RecurrentModel::Fernn(p) => p.hidden_channels(),
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            RecurrentModel::Grnn(p) => p.u.in_channels(),
            RecurrentModel::Fernn(p) => p.u.in_channels(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            RecurrentModel::Grnn(p) => p.param_count(),
            RecurrentModel::Fernn(p) => p.param_count(),
        }
    }

    /// Zero initial state (group-invariant and constant over `V`).
    pub fn zero_state(&self, grid: Grid) -> HiddenState {
        match self {
            RecurrentModel::Grnn(p) => HiddenState::Group(GroupSignal::zeros(p.group, grid, p.hidden_channels())),
            RecurrentModel::Fernn(p) => {
                HiddenState::Lifted(LiftedState::zeros(p.flow_set.clone(), p.group, grid, p.hidden_channels()))
            }
        }
    }

    pub fn step(&self, h: &HiddenState, f: &Signal, t: i64) -> Result<HiddenState> {
        match (self, h) {
            (RecurrentModel::Grnn(p), HiddenState::Group(g)) => Ok(HiddenState::Group(grnn_step(g, f, p)?)),
            (RecurrentModel::Fernn(p), HiddenState::Lifted(l)) => Ok(HiddenState::Lifted(match p.lift_mode {
                LiftMode::Trivial => fernn_step(l, f, p, t)?,
                LiftMode::Nontrivial => fernn_step_nontrivial(l, f, p, t)?,
            })),
            _ => Err(Error::ShapeMismatch("hidden state kind does not match model family".into())),
        }
    }

    /// The group signal handed to the decoder: the state itself for a G-RNN,
    /// the max over `V` for a FERNN.
    pub fn readout(&self, h: &HiddenState) -> GroupSignal {
        match h {
            HiddenState::Group(g) => g.clone(),
            HiddenState::Lifted(l) => pool_over_v(l),
        }
    }

    /// `h_0, h_1, …, h_T` where `h_{t+1}` has consumed `f_t`.
    pub fn hidden_trajectory(&self, seq: &SpaceTimeSignal) -> Result<Vec<HiddenState>> {
        let mut states = Vec::with_capacity(seq.len() + 1);
        states.push(self.zero_state(seq.grid()));
        for (t, f) in seq.frames().iter().enumerate() {
            let next = self.step(&states[t], f, t as i64)?;
            states.push(next);
        }
        Ok(states)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    TeacherForced,
    Autoregressive,
}

/// Predict frames `warmup .. warmup + horizon − 1`.
///
/// The prediction of frame `t + 1` is decoded from `h_{t+1}`. Teacher forcing
/// feeds ground truth throughout and needs `warmup + horizon − 1` input
/// frames; autoregressive mode needs only the `warmup` prefix and feeds each
/// prediction back as the next input.
pub fn rollout(
    model: &RecurrentModel,
    decoder: &DecoderParams,
    f: &SpaceTimeSignal,
    warmup: usize,
    horizon: usize,
    mode: RolloutMode,
) -> Result<SpaceTimeSignal> {
    if warmup == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("warmup and horizon must be at least 1".into()));
    }
    let needed = match mode {
        RolloutMode::TeacherForced => warmup + horizon - 1,
        RolloutMode::Autoregressive => warmup,
    };
    if f.len() < needed {
        return Err(Error::ShapeMismatch(format!("rollout needs {needed} input frames, got {}", f.len())));
    }
    if f.channels() != model.input_channels() || decoder.out_channels() != f.channels() {
        return Err(Error::ShapeMismatch("model/decoder channels do not match the frames".into()));
    }
    let mut h = model.zero_state(f.grid());
    let mut preds: Vec<Signal> = Vec::with_capacity(horizon);
    for t in 0..warmup + horizon - 1 {
        let input = if t < warmup || mode == RolloutMode::TeacherForced {
            f.frame(t)
        } else {
            &preds[t - warmup]
        };
        h = model.step(&h, input, t as i64)?;
        if t + 1 >= warmup {
            let pred = decoder.decode(&model.readout(&h))?;
            preds.push(pred);
        }
    }
    SpaceTimeSignal::new(preds)
}

/// Architecture description used to build models from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub group: GroupKind,
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    /// Hidden widths of the decoder; the last layer always emits
    /// `input_channels`.
    pub decoder_hidden: Vec<usize>,
    pub decoder_kernel_size: usize,
    pub nonlinearity: Nonlinearity,
    /// Generator set for FERNNs; ignored for G-RNNs.
    pub flow_set: Option<FlowSet>,
    pub full_profile: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Grnn,
    Fernn,
    FernnNontrivial,
}

impl ModelFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grnn" => Ok(ModelFamily::Grnn),
            "fernn" => Ok(ModelFamily::Fernn),
            "fernn-nontrivial" => Ok(ModelFamily::FernnNontrivial),
            _ => Err(Error::InvalidArgument(format!("unknown model family `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Grnn => "grnn",
            ModelFamily::Fernn => "fernn",
            ModelFamily::FernnNontrivial => "fernn-nontrivial",
        }
    }
}

impl ModelSpec {
    /// Random initialization. Kernels are drawn in a fixed order from one
    /// seeded stream, so a G-RNN and a FERNN built from the same seed and
    /// shapes share `U`, `W` and the decoder exactly.
    pub fn build(&self, seed: u64) -> Result<(RecurrentModel, DecoderParams)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nr = self.group.rotations();
        let k = self.kernel_size;
        let hc = self.hidden_channels;
        let fan_u = (self.input_channels * k * k) as f64;
        let u = Kernel::random(&mut rng, hc, self.input_channels, 1, k, (3.0 / fan_u).sqrt())?;
        let fan_w = (hc * nr * k * k) as f64;
        let w = Kernel::random(&mut rng, hc, hc, nr, k, 0.5 * (3.0 / fan_w).sqrt())?;
        let dk = self.decoder_kernel_size;
        let mut widths = vec![hc * nr];
        widths.extend(&self.decoder_hidden);
        widths.push(self.input_channels);
        let mut layers = Vec::new();
        for pair in widths.windows(2) {
            let fan = (pair[0] * dk * dk) as f64;
            layers.push(Kernel::random(&mut rng, pair[1], pair[0], 1, dk, (6.0 / fan).sqrt())?);
        }
        let decoder = DecoderParams::new(layers)?;
        let grnn = GrnnParams::new(self.group, u, w, self.nonlinearity)?;
        let model = match self.family {
            ModelFamily::Grnn => RecurrentModel::Grnn(grnn),
            ModelFamily::Fernn | ModelFamily::FernnNontrivial => {
                let v = Arc::new(
                    self.flow_set.clone().ok_or_else(|| Error::InvalidArgument("FERNN needs a flow set".into()))?,
                );
                let mode = if self.family == ModelFamily::Fernn { LiftMode::Trivial } else { LiftMode::Nontrivial };
                let mut p = FernnParams::from_grnn(&grnn, v.clone(), mode)?;
                if self.full_profile {
                    let profile = v.iter().map(|g| if g.is_zero() { 1.0 } else { 0.0 }).collect();
                    p.w = VKernel::full(p.w.base, profile);
                }
                RecurrentModel::Fernn(p)
            }
        };
        Ok((model, decoder))
    }
}
