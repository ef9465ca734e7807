//! MSE objective, backpropagation through time for G-RNN and FERNN models,
//! Adam/SGD training and finite-difference gradient verification.
//!
//! The backward pass re-runs the recurrence on a private traced forward path
//! and then walks the trace in reverse. Permutation layers (the `ψ₁(ν)` roll
//! and the non-trivial lift's input transform) back-propagate through their
//! inverse permutation; the max over `V` routes each gradient entry to the
//! slice that won the forward maximum (lowest index on ties).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{
    corr_add_adjoint, corr_kernel_grad, difference_table, group_conv_input_grad, group_conv_into,
    group_conv_kernel_grad, lift_conv, lift_conv_kernel_grad, GroupSignal, Kernel, VProfile,
};
use crate::error::{Error, Result};
use crate::grid_signal::{Signal, SpaceTimeSignal};
use crate::group_flow::{flow_element, GroupElement, GroupKind};
use crate::rnn::{rollout, spatial_conv, DecoderParams, LiftMode, Nonlinearity, RecurrentModel, RolloutMode};

/// A recurrent core together with its decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub core: RecurrentModel,
    pub decoder: DecoderParams,
}

impl Model {
    pub fn new(core: RecurrentModel, decoder: DecoderParams) -> Result<Self> {
        let expected = core.hidden_channels() * core.group().rotations();
        if decoder.in_channels() != expected {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} channels, model emits {expected}",
                decoder.in_channels()
            )));
        }
        if decoder.out_channels() != core.input_channels() {
            return Err(Error::ShapeMismatch("decoder must emit the input channel count".into()));
        }
        Ok(Model { core, decoder })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["U".to_string(), "W".to_string()];
        if let RecurrentModel::Fernn(p) = &self.core {
            if matches!(p.w.profile, VProfile::Full(_)) {
                names.push("W.profile".into());
            }
        }
        names.extend((0..self.decoder.layers.len()).map(|l| format!("decoder.{l}")));
        names
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        match &self.core {
            RecurrentModel::Grnn(p) => {
                out.push(p.u.data());
                out.push(p.w.data());
            }
            RecurrentModel::Fernn(p) => {
                out.push(p.u.data());
                out.push(p.w.base.data());
                if let VProfile::Full(v) = &p.w.profile {
                    out.push(v);
                }
            }
        }
        out.extend(self.decoder.layers.iter().map(Kernel::data));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        match &mut self.core {
            RecurrentModel::Grnn(p) => {
                out.push(p.u.data_mut());
                out.push(p.w.data_mut());
            }
            RecurrentModel::Fernn(p) => {
                out.push(p.u.data_mut());
                out.push(p.w.base.data_mut());
                if let VProfile::Full(v) = &mut p.w.profile {
                    out.push(v.as_mut_slice());
                }
            }
        }
        out.extend(self.decoder.layers.iter_mut().map(Kernel::data_mut));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// One gradient array per parameter tensor, in [`Model::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub names: Vec<String>,
    pub tensors: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        GradientSet {
            names: model.param_names(),
            tensors: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.names.iter().zip(&self.tensors) {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total_mse: f64,
    pub per_step_mse: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_velocity_mse: Option<BTreeMap<String, f64>>,
}

/// Mean over frames of the per-frame mean squared error.
pub fn mse_loss(pred: &SpaceTimeSignal, target: &SpaceTimeSignal) -> Result<LossReport> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted vs {} target frames", pred.len(), target.len())));
    }
    let per_step_mse = pred
        .frames()
        .iter()
        .zip(target.frames())
        .map(|(p, t)| {
            p.check_shape(t)?;
            let n = p.values().len() as f64;
            Ok(p.values().iter().zip(t.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
        })
        .collect::<Result<Vec<_>>>()?;
    let total_mse = per_step_mse.iter().sum::<f64>() / per_step_mse.len() as f64;
    Ok(LossReport { total_mse, per_step_mse, per_velocity_mse: None })
}

fn target_window(seq: &SpaceTimeSignal, warmup: usize, horizon: usize) -> Result<SpaceTimeSignal> {
    if seq.len() < warmup + horizon {
        return Err(Error::ShapeMismatch(format!(
            "sequence has {} frames, need warmup {warmup} + horizon {horizon}",
            seq.len()
        )));
    }
    SpaceTimeSignal::new(seq.frames()[warmup..warmup + horizon].to_vec())
}

/// Mean of per-sequence reports (per-step and total averaged over the batch).
fn average_reports(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let steps = reports[0].per_step_mse.len();
    let per_step_mse: Vec<f64> =
        (0..steps).map(|k| reports.iter().map(|r| r.per_step_mse[k]).sum::<f64>() / n).collect();
    let total_mse = per_step_mse.iter().sum::<f64>() / steps as f64;
    LossReport { total_mse, per_step_mse, per_velocity_mse: None }
}

/// Batch loss through the public rollout path (teacher forced).
pub fn batch_loss(model: &Model, batch: &[SpaceTimeSignal], warmup: usize, horizon: usize) -> Result<LossReport> {
    evaluate(model, batch, warmup, horizon, RolloutMode::TeacherForced)
}

/// Loss of `rollout` predictions against ground truth, averaged over sequences.
pub fn evaluate(
    model: &Model,
    seqs: &[SpaceTimeSignal],
    warmup: usize,
    horizon: usize,
    mode: RolloutMode,
) -> Result<LossReport> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let reports = seqs
        .par_iter()
        .map(|s| {
            let pred = rollout(&model.core, &model.decoder, s, warmup, horizon, mode)?;
            mse_loss(&pred, &target_window(s, warmup, horizon)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average_reports(&reports))
}

/// Like [`evaluate`], additionally averaging `total_mse` per group key. A
/// sequence contributes once to each distinct key in its list.
pub fn evaluate_grouped(
    model: &Model,
    seqs: &[SpaceTimeSignal],
    keys: &[Vec<String>],
    warmup: usize,
    horizon: usize,
    mode: RolloutMode,
) -> Result<LossReport> {
    if keys.len() != seqs.len() {
        return Err(Error::ShapeMismatch("one key list per sequence required".into()));
    }
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let reports = seqs
        .par_iter()
        .map(|s| {
            let pred = rollout(&model.core, &model.decoder, s, warmup, horizon, mode)?;
            mse_loss(&pred, &target_window(s, warmup, horizon)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut overall = average_reports(&reports);
    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (ks, r) in keys.iter().zip(&reports) {
        let mut distinct: Vec<&String> = ks.iter().collect();
        distinct.sort();
        distinct.dedup();
        for k in distinct {
            let e = groups.entry(k.clone()).or_insert((0.0, 0));
            e.0 += r.total_mse;
            e.1 += 1;
        }
    }
    overall.per_velocity_mse = Some(groups.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect());
    Ok(overall)
}

/// Uniform view of both model families for the traced pass.
struct CoreView<'a> {
    group: GroupKind,
    u: &'a Kernel,
    w: &'a Kernel,
    profile: Option<&'a [f64]>,
    sigma: Nonlinearity,
    /// `ψ₁(ν)` per slice (trivial-lift FERNN only).
    rolls: Option<Vec<GroupElement>>,
    /// Generators whose `ψ_t(ν)⁻¹` pre-transforms the input (non-trivial lift).
    lift_flows: Option<Vec<crate::group_flow::FlowGenerator>>,
    nslices: usize,
    pooled: bool,
    diffs: Option<Vec<Vec<Option<usize>>>>,
}

impl<'a> CoreView<'a> {
    fn new(core: &'a RecurrentModel) -> Self {
        match core {
            RecurrentModel::Grnn(p) => CoreView {
                group: p.group,
                u: &p.u,
                w: &p.w,
                profile: None,
                sigma: p.nonlinearity,
                rolls: None,
                lift_flows: None,
                nslices: 1,
                pooled: false,
                diffs: None,
            },
            RecurrentModel::Fernn(p) => {
                let (rolls, lift_flows) = match p.lift_mode {
                    LiftMode::Trivial => (Some(p.flow_set.iter().map(|nu| flow_element(nu, 1)).collect()), None),
                    LiftMode::Nontrivial => (None, Some(p.flow_set.generators().to_vec())),
                };
                let (profile, diffs) = match &p.w.profile {
                    VProfile::DeltaAtIdentity => (None, None),
                    VProfile::Full(v) => (Some(v.as_slice()), Some(difference_table(&p.flow_set))),
                };
                CoreView {
                    group: p.group,
                    u: &p.u,
                    w: &p.w.base,
                    profile,
                    sigma: p.nonlinearity,
                    rolls,
                    lift_flows,
                    nslices: p.flow_set.len(),
                    pooled: true,
                    diffs,
                }
            }
        }
    }

    fn lift_input(&self, f: &Signal, j: usize, t: usize) -> Result<Signal> {
        match &self.lift_flows {
            Some(flows) => f.act(&flow_element(&flows[j], t as i64).inverse()),
            None => Ok(f.clone()),
        }
    }
}

struct StepTrace {
    /// Group-convolved previous state per slice (full profile only).
    convolved: Vec<GroupSignal>,
    pre: Vec<GroupSignal>,
    post: Vec<GroupSignal>,
    argmax: Vec<u32>,
    /// Decoder inputs/pre-activations when this step produces a prediction.
    decoder: Option<DecoderTrace>,
}

struct DecoderTrace {
    inputs: Vec<Signal>,
    pre: Vec<Signal>,
}

fn decode_traced(dec: &DecoderParams, pooled: &GroupSignal) -> DecoderTrace {
    let mut inputs = vec![pooled.to_signal()];
    let mut pre = Vec::with_capacity(dec.layers.len());
    let last = dec.layers.len() - 1;
    for (l, k) in dec.layers.iter().enumerate() {
        let a = spatial_conv(&inputs[l], k);
        if l < last {
            let mut z = a.clone();
            z.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            inputs.push(z);
        }
        pre.push(a);
    }
    DecoderTrace { inputs, pre }
}

fn forward_traced(
    view: &CoreView,
    dec: &DecoderParams,
    seq: &SpaceTimeSignal,
    warmup: usize,
    horizon: usize,
) -> Result<Vec<StepTrace>> {
    let grid = seq.grid();
    let hc = view.u.out_channels();
    let zero = GroupSignal::zeros(view.group, grid, hc);
    let mut prev: Vec<GroupSignal> = vec![zero.clone(); view.nslices];
    let mut traces = Vec::with_capacity(warmup + horizon - 1);
    for t in 0..warmup + horizon - 1 {
        let f = seq.frame(t);
        let convolved: Vec<GroupSignal> = prev
            .iter()
            .map(|h| {
                let mut out = zero.clone();
                if t > 0 {
                    group_conv_into(h, view.w, &mut out);
                }
                out
            })
            .collect();
        let shared_lift = if view.lift_flows.is_none() { Some(lift_conv(f, view.u, view.group)?) } else { None };
        let mut pre = Vec::with_capacity(view.nslices);
        for j in 0..view.nslices {
            let mixed = match (&view.profile, &view.diffs) {
                (Some(p), Some(diffs)) => {
                    let mut acc = zero.clone();
                    for (gamma, d) in diffs[j].iter().enumerate() {
                        if let Some(d) = d {
                            let c = p[*d];
                            acc.values_mut().iter_mut().zip(convolved[gamma].values()).for_each(|(a, v)| *a += c * v);
                        }
                    }
                    acc
                }
                _ => convolved[j].clone(),
            };
            let mut p = match &view.rolls {
                Some(r) => mixed.act(&r[j])?,
                None => mixed,
            };
            let lift = match &shared_lift {
                Some(l) => l.clone(),
                None => lift_conv(&view.lift_input(f, j, t)?, view.u, view.group)?,
            };
            p.values_mut().iter_mut().zip(lift.values()).for_each(|(a, b)| *a += b);
            pre.push(p);
        }
        let post: Vec<GroupSignal> = pre.iter().map(|p| p.map(|v| view.sigma.apply(v))).collect();
        let (pooled, argmax) = if view.pooled {
            pool_slices(&post)
        } else {
            (post[0].clone(), Vec::new())
        };
        let decoder = if t + 1 >= warmup { Some(decode_traced(dec, &pooled)) } else { None };
        let keep_convolved = if view.profile.is_some() { convolved } else { Vec::new() };
        prev = post.clone();
        traces.push(StepTrace { convolved: keep_convolved, pre, post, argmax, decoder });
    }
    Ok(traces)
}

fn pool_slices(slices: &[GroupSignal]) -> (GroupSignal, Vec<u32>) {
    let mut pooled = slices[0].clone();
    let mut arg = vec![0u32; pooled.values().len()];
    for (j, s) in slices.iter().enumerate().skip(1) {
        for ((p, a), v) in pooled.values_mut().iter_mut().zip(arg.iter_mut()).zip(s.values()) {
            if *v > *p {
                *p = *v;
                *a = j as u32;
            }
        }
    }
    (pooled, arg)
}

/// Backward through the decoder; returns the gradient w.r.t. its input.
fn decoder_backward(dec: &DecoderParams, tr: &DecoderTrace, dpred: Signal, grads: &mut [Vec<f64>]) -> Signal {
    let mut da = dpred;
    let mut dz = Signal::zeros(da.grid(), 1);
    for l in (0..dec.layers.len()).rev() {
        let k = &dec.layers[l];
        let z = &tr.inputs[l];
        let grid = z.grid();
        let (h, w, a) = (grid.height, grid.width, grid.area());
        let (kh, kw) = k.size();
        let s = kh * kw;
        let mut gz = Signal::zeros(grid, k.in_channels());
        for o in 0..k.out_channels() {
            let g = da.channel(o);
            for i in 0..k.in_channels() {
                let base = (o * k.in_channels() + i) * s;
                corr_kernel_grad(&mut grads[l][base..base + s], z.channel(i), g, h, w, kh, kw);
                corr_add_adjoint(&mut gz.values_mut()[i * a..(i + 1) * a], g, h, w, &k.data()[base..base + s], kh, kw);
            }
        }
        if l > 0 {
            let pre = &tr.pre[l - 1];
            gz.values_mut().iter_mut().zip(pre.values()).for_each(|(g, p)| {
                if *p <= 0.0 {
                    *g = 0.0
                }
            });
            da = gz;
        } else {
            dz = gz;
        }
    }
    dz
}

fn sequence_gradient(
    model: &Model,
    seq: &SpaceTimeSignal,
    warmup: usize,
    horizon: usize,
    scale: f64,
) -> Result<(LossReport, GradientSet)> {
    let view = CoreView::new(&model.core);
    let traces = forward_traced(&view, &model.decoder, seq, warmup, horizon)?;
    let targets = target_window(seq, warmup, horizon)?;
    let preds = SpaceTimeSignal::new(
        traces.iter().filter_map(|s| s.decoder.as_ref().map(|d| d.pre.last().expect("layer").clone())).collect(),
    )?;
    let report = mse_loss(&preds, &targets)?;

    let mut grads = GradientSet::zeros_like(model);
    let has_profile = view.profile.is_some();
    let dec_offset = if has_profile { 3 } else { 2 };
    let (head, dec_grads) = grads.tensors.split_at_mut(dec_offset);
    let (gu, rest) = head.split_at_mut(1);
    let gu = &mut gu[0];
    let (gw, gprofile) = rest.split_at_mut(1);
    let gw = &mut gw[0];

    let grid = seq.grid();
    let hc = view.u.out_channels();
    let zero = GroupSignal::zeros(view.group, grid, hc);
    let mut carry: Vec<GroupSignal> = vec![zero.clone(); view.nslices];
    let nelem = targets.frame(0).values().len() as f64;
    let coeff = 2.0 * scale / (nelem * horizon as f64);

    for t in (0..traces.len()).rev() {
        let tr = &traces[t];
        let mut dpost = std::mem::replace(&mut carry, vec![zero.clone(); view.nslices]);
        if let Some(dtr) = &tr.decoder {
            let k = t + 1 - warmup;
            let pred = dtr.pre.last().expect("layer");
            let target = targets.frame(k);
            let dpred_vals = pred.values().iter().zip(target.values()).map(|(p, y)| coeff * (p - y)).collect();
            let dpred = Signal::from_vec(pred.grid(), pred.channels(), dpred_vals)?;
            let dpooled = decoder_backward(&model.decoder, dtr, dpred, dec_grads);
            if view.pooled {
                for (e, (g, a)) in dpooled.values().iter().zip(&tr.argmax).enumerate() {
                    dpost[*a as usize].values_mut()[e] += g;
                }
            } else {
                dpost[0].values_mut().iter_mut().zip(dpooled.values()).for_each(|(d, g)| *d += g);
            }
        }
        // through σ
        let dpre: Vec<GroupSignal> = dpost
            .into_iter()
            .zip(tr.pre.iter().zip(&tr.post))
            .map(|(mut d, (p, q))| {
                d.values_mut()
                    .iter_mut()
                    .zip(p.values().iter().zip(q.values()))
                    .for_each(|(g, (pv, qv))| *g *= view.sigma.derivative(*pv, *qv));
                d
            })
            .collect();
        // input lift
        let f = seq.frame(t);
        if view.lift_flows.is_some() {
            for (j, d) in dpre.iter().enumerate() {
                lift_conv_kernel_grad(&view.lift_input(f, j, t)?, d, view.u, gu)?;
            }
        } else {
            let mut sum = zero.clone();
            for d in &dpre {
                sum.values_mut().iter_mut().zip(d.values()).for_each(|(a, b)| *a += b);
            }
            lift_conv_kernel_grad(f, &sum, view.u, gu)?;
        }
        if t == 0 {
            // h_0 is a constant; nothing upstream.
            continue;
        }
        let dmixed: Vec<GroupSignal> = match &view.rolls {
            Some(r) => dpre.iter().zip(r).map(|(d, g)| d.act(&g.inverse())).collect::<Result<_>>()?,
            None => dpre,
        };
        let dconv: Vec<GroupSignal> = match (&view.profile, &view.diffs) {
            (Some(p), Some(diffs)) => {
                let gp = &mut gprofile[0];
                let mut out = vec![zero.clone(); view.nslices];
                for (j, dm) in dmixed.iter().enumerate() {
                    for (gamma, d) in diffs[j].iter().enumerate() {
                        if let Some(d) = d {
                            let c = p[*d];
                            let conv = &tr.convolved[gamma];
                            gp[*d] += dm.values().iter().zip(conv.values()).map(|(a, b)| a * b).sum::<f64>();
                            out[gamma].values_mut().iter_mut().zip(dm.values()).for_each(|(o, v)| *o += c * v);
                        }
                    }
                }
                out
            }
            _ => dmixed,
        };
        let prev = &traces[t - 1].post;
        for (j, dc) in dconv.iter().enumerate() {
            group_conv_kernel_grad(&prev[j], dc, view.w, gw);
            group_conv_input_grad(dc, view.w, &mut carry[j]);
        }
    }
    Ok((report, grads))
}

/// Teacher-forced loss and exact gradients for a batch (loss averaged over
/// sequences, predicted frames and pixels).
pub fn backward(
    model: &Model,
    batch: &[SpaceTimeSignal],
    warmup: usize,
    horizon: usize,
) -> Result<(LossReport, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if warmup == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("warmup and horizon must be at least 1".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|s| sequence_gradient(model, s, warmup, horizon, scale))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = GradientSet::zeros_like(model);
    let mut reports = Vec::with_capacity(parts.len());
    for (r, g) in parts {
        grads.add_assign(&g);
        reports.push(r);
    }
    grads.check_finite()?;
    Ok((average_reports(&reports), grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Global L2 norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub warmup: usize,
    pub horizon: usize,
    /// Validation period in steps (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            steps: 1000,
            batch: 8,
            grad_clip: Some(1.0),
            seed: 0,
            optimizer: OptimizerKind::Adam,
            warmup: 6,
            horizon: 6,
            eval_every: 0,
        }
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    fn step(&mut self, model: &mut Model, grads: &GradientSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in model.params_mut().into_iter().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Held-out sequences with their per-velocity group keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub seqs: Vec<SpaceTimeSignal>,
    pub keys: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Training loss per optimizer step.
    pub loss_curve: Vec<f64>,
    /// `(step, report)` at each validation point.
    pub validation: Vec<(usize, LossReport)>,
}

/// Mini-batch training with teacher forcing. Batches are drawn from epoch
/// shuffles of `train` using a generator seeded from `cfg.seed`.
pub fn train(
    model: &mut Model,
    train: &[SpaceTimeSignal],
    val: Option<&ValidationSet>,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossReport),
) -> Result<TrainOutcome> {
    if cfg.steps > 0 && (train.is_empty() || cfg.batch == 0) {
        return Err(Error::InvalidArgument("training needs data and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(cfg.lr, model);
    let mut outcome = TrainOutcome { loss_curve: Vec::with_capacity(cfg.steps), validation: Vec::new() };
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train[order[cursor]].clone());
            cursor += 1;
        }
        let (report, mut grads) = backward(model, &batch, cfg.warmup, cfg.horizon)?;
        if let Some(clip) = cfg.grad_clip {
            let norm = grads.global_norm();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        match cfg.optimizer {
            OptimizerKind::Adam => adam.step(model, &grads),
            OptimizerKind::Sgd => {
                for (p, g) in model.params_mut().into_iter().zip(&grads.tensors) {
                    p.iter_mut().zip(g).for_each(|(a, b)| *a -= cfg.lr * b);
                }
            }
        }
        outcome.loss_curve.push(report.total_mse);
        on_step(step, &report);
        if let Some(v) = val {
            if cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
                let report = evaluate_grouped(model, &v.seqs, &v.keys, cfg.warmup, cfg.horizon, RolloutMode::TeacherForced)?;
                outcome.validation.push((step + 1, report));
            }
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: Vec<GradCheckSample>,
}

/// Denominator floor of the relative error, so taps whose true gradient
/// vanishes are judged on absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compare [`backward`] against central differences of [`batch_loss`] on
/// `taps` parameter entries chosen uniformly (seeded) across all tensors.
pub fn gradient_check(
    model: &Model,
    batch: &[SpaceTimeSignal],
    warmup: usize,
    horizon: usize,
    taps: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = backward(model, batch, warmup, horizon)?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<(usize, usize)> = Vec::with_capacity(taps);
    // every tensor gets at least one tap
    for (ti, &n) in sizes.iter().enumerate() {
        if picks.len() < taps {
            picks.push((ti, rng.gen_range(0..n)));
        }
    }
    while picks.len() < taps {
        let mut flat = rng.gen_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        picks.push((ti, flat));
    }
    let names = model.param_names();
    let samples = picks
        .par_iter()
        .map(|&(ti, i)| {
            let eval = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                m.params_mut()[ti][i] += delta;
                Ok(batch_loss(&m, batch, warmup, horizon)?.total_mse)
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let analytic = grads.tensors[ti][i];
            let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            Ok(GradCheckSample { tensor: names[ti].clone(), index: i, analytic, numeric, rel_error })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, samples })
}
