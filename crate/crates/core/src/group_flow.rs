//! Discrete groups acting on pixel coordinates, flow generators, and the
//! finite generator sets `V` used to lift recurrent states.
//!
//! Group elements are pairs `(r, t)` acting on `Z²` by `x ↦ Rʳ x + t`, where
//! `R(x, y) = (−y, x)` is the quarter turn about the origin. On a cyclic grid
//! the same formula is applied modulo the grid dimensions, which keeps every
//! action an exact permutation of pixels.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which group the convolutions are built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    /// Integer translations of the plane.
    Translation,
    /// Quarter-turn rotations together with translations (`p4`).
    #[serde(rename = "p4")]
    RotoTranslation,
}

impl GroupKind {
    /// Size of the rotation axis carried by group-indexed feature maps.
    pub fn rotations(self) -> usize {
        match self {
            GroupKind::Translation => 1,
            GroupKind::RotoTranslation => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Translation => "translation",
            GroupKind::RotoTranslation => "p4",
        }
    }
}

/// Rotate an integer vector by `r` quarter turns: `R(x, y) = (−y, x)`.
pub fn rotate_vec(v: (i64, i64), r: u8) -> (i64, i64) {
    match r % 4 {
        0 => v,
        1 => (-v.1, v.0),
        2 => (-v.0, -v.1),
        _ => (v.1, -v.0),
    }
}

/// An element `(r, t)` of `C₄ ⋉ Z²`; pure translations have `r = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GroupElement {
    pub rotation: u8,
    pub translation: (i64, i64),
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement { rotation: 0, translation: (0, 0) };

    pub fn translation(dx: i64, dy: i64) -> Self {
        GroupElement { rotation: 0, translation: (dx, dy) }
    }

    pub fn rotation(quarter_turns: i64) -> Self {
        GroupElement { rotation: quarter_turns.rem_euclid(4) as u8, translation: (0, 0) }
    }

    pub fn new(quarter_turns: i64, dx: i64, dy: i64) -> Self {
        GroupElement { rotation: quarter_turns.rem_euclid(4) as u8, translation: (dx, dy) }
    }

    /// `k` quarter turns about the center of an `n × n` grid, expressed as
    /// an origin rotation followed by the compensating translation.
    pub fn center_rotation(k: i64, n: usize) -> Self {
        let m = n as i64 - 1;
        let t = match k.rem_euclid(4) {
            0 => (0, 0),
            1 => (m, 0),
            2 => (m, m),
            _ => (0, m),
        };
        GroupElement::new(k, t.0, t.1)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// `self ∘ other`, i.e. first apply `other`, then `self`.
    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        let t = rotate_vec(other.translation, self.rotation);
        GroupElement {
            rotation: (self.rotation + other.rotation) % 4,
            translation: (t.0 + self.translation.0, t.1 + self.translation.1),
        }
    }

    pub fn inverse(&self) -> GroupElement {
        let r = (4 - self.rotation) % 4;
        let t = rotate_vec(self.translation, r);
        GroupElement { rotation: r, translation: (-t.0, -t.1) }
    }

    /// Action on a point of `Z²`.
    pub fn apply_point(&self, p: (i64, i64)) -> (i64, i64) {
        let q = rotate_vec(p, self.rotation);
        (q.0 + self.translation.0, q.1 + self.translation.1)
    }

    /// Equality as elements acting on an `h × w` torus.
    pub fn eq_on_grid(&self, other: &GroupElement, h: usize, w: usize) -> bool {
        self.rotation == other.rotation
            && (self.translation.0 - other.translation.0).rem_euclid(h as i64) == 0
            && (self.translation.1 - other.translation.1).rem_euclid(w as i64) == 0
    }
}

/// A flow generator: a constant velocity (pixels/step) or a constant angular
/// velocity (quarter turns/step). The zero generator is both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowGenerator {
    velocity: (i64, i64),
    angular_velocity: i64,
}

impl FlowGenerator {
    pub const ZERO: FlowGenerator = FlowGenerator { velocity: (0, 0), angular_velocity: 0 };

    pub fn translation(vx: i64, vy: i64) -> Self {
        FlowGenerator { velocity: (vx, vy), angular_velocity: 0 }
    }

    pub fn rotation(quarter_turns_per_step: i64) -> Self {
        FlowGenerator { velocity: (0, 0), angular_velocity: quarter_turns_per_step }
    }

    pub fn velocity(&self) -> (i64, i64) {
        self.velocity
    }

    pub fn angular_velocity(&self) -> i64 {
        self.angular_velocity
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    pub fn is_rotation(&self) -> bool {
        self.angular_velocity != 0
    }

    /// Chebyshev norm of the velocity, or |ω| for rotation generators.
    pub fn norm_inf(&self) -> i64 {
        self.velocity.0.abs().max(self.velocity.1.abs()).max(self.angular_velocity.abs())
    }

    /// `self − other` in the (abelian) generator lattice.
    ///
    /// Mixed translation/rotation differences are not generators; callers
    /// only subtract generators drawn from a single [`FlowSet`].
    pub fn sub(&self, other: &FlowGenerator) -> FlowGenerator {
        FlowGenerator {
            velocity: (self.velocity.0 - other.velocity.0, self.velocity.1 - other.velocity.1),
            angular_velocity: self.angular_velocity - other.angular_velocity,
        }
    }

    pub fn neg(&self) -> FlowGenerator {
        FlowGenerator::ZERO.sub(self)
    }

    pub(crate) fn key(&self) -> (i64, i64, i64) {
        (self.velocity.0, self.velocity.1, self.angular_velocity)
    }
}

impl fmt::Display for FlowGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.angular_velocity != 0 {
            write!(f, "w{}", self.angular_velocity)
        } else {
            write!(f, "({},{})", self.velocity.0, self.velocity.1)
        }
    }
}

/// `ψ_t(ν) = exp(tν)`: translation by `t·v`, or rotation by `t·ω` quarter turns.
pub fn flow_element(nu: &FlowGenerator, t: i64) -> GroupElement {
    GroupElement::new(
        t * nu.angular_velocity,
        t * nu.velocity.0,
        t * nu.velocity.1,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Translation,
    Rotation,
}

/// What to do when `γ − ν` leaves the generator set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    /// Out-of-set differences contribute nothing.
    #[default]
    Drop,
    /// Standard sets are treated as a `(2N+1)`-torus (per component).
    Wrap,
}

/// An ordered, duplicate-free set of flow generators.
///
/// Standard translation sets are stored in row-major velocity order:
/// `vx` outer, `vy` inner, both ascending from `−N` to `N`.
#[derive(Debug, Clone)]
pub struct FlowSet {
    kind: FlowKind,
    radius: Option<usize>,
    generators: Vec<FlowGenerator>,
    index: HashMap<FlowGenerator, usize>,
}

impl PartialEq for FlowSet {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.generators == other.generators
    }
}

impl FlowSet {
    /// `V^T_N = {ν ∈ Z² : ‖ν‖_∞ ≤ N}`.
    pub fn translation(radius: usize) -> Self {
        let n = radius as i64;
        let generators = (-n..=n)
            .flat_map(|vx| (-n..=n).map(move |vy| FlowGenerator::translation(vx, vy)))
            .collect();
        Self::build(FlowKind::Translation, Some(radius), generators)
    }

    /// `V^R_N = {k quarter turns/step : k = −N..N}`.
    pub fn rotation(radius: usize) -> Self {
        let n = radius as i64;
        let generators = (-n..=n).map(FlowGenerator::rotation).collect();
        Self::build(FlowKind::Rotation, Some(radius), generators)
    }

    /// The singleton `{0}`.
    pub fn trivial() -> Self {
        Self::translation(0)
    }

    pub fn from_generators(kind: FlowKind, generators: Vec<FlowGenerator>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::InvalidArgument("flow set must be nonempty".into()));
        }
        for g in &generators {
            let ok = match kind {
                FlowKind::Translation => g.angular_velocity == 0,
                FlowKind::Rotation => g.velocity == (0, 0),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "generator {g} does not belong to a {kind:?} flow set"
                )));
            }
        }
        let set = Self::build(kind, None, generators);
        if set.index.len() != set.generators.len() {
            return Err(Error::InvalidArgument("flow set generators must be distinct".into()));
        }
        Ok(set)
    }

    fn build(kind: FlowKind, radius: Option<usize>, generators: Vec<FlowGenerator>) -> Self {
        let index = generators.iter().enumerate().map(|(i, g)| (*g, i)).collect();
        FlowSet { kind, radius, generators, index }
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn radius(&self) -> Option<usize> {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn generators(&self) -> &[FlowGenerator] {
        &self.generators
    }

    pub fn get(&self, i: usize) -> FlowGenerator {
        self.generators[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &FlowGenerator> {
        self.generators.iter()
    }

    pub fn position(&self, nu: &FlowGenerator) -> Option<usize> {
        self.index.get(nu).copied()
    }

    pub fn contains(&self, nu: &FlowGenerator) -> bool {
        self.index.contains_key(nu)
    }

    /// Group the convolutions must be built over to represent these flows.
    pub fn required_group(&self) -> GroupKind {
        match self.kind {
            FlowKind::Translation => GroupKind::Translation,
            FlowKind::Rotation => GroupKind::RotoTranslation,
        }
    }

    /// Position of `ν − ν̂` in the set, `None` when it falls outside
    /// (the truncation boundary).
    pub fn shift_index(&self, nu: &FlowGenerator, nu_hat: &FlowGenerator) -> Result<Option<usize>> {
        self.shift_index_with(nu, nu_hat, Truncation::Drop)
    }

    pub fn shift_index_with(
        &self,
        nu: &FlowGenerator,
        nu_hat: &FlowGenerator,
        policy: Truncation,
    ) -> Result<Option<usize>> {
        if !self.contains(nu) {
            return Err(Error::GeneratorNotInSet(nu.key()));
        }
        let diff = nu.sub(nu_hat);
        match policy {
            Truncation::Drop => Ok(self.position(&diff)),
            Truncation::Wrap => {
                let n = self.radius.ok_or_else(|| {
                    Error::InvalidArgument("wrap truncation needs a standard (radius-N) set".into())
                })? as i64;
                let m = 2 * n + 1;
                let wrap = |v: i64| (v + n).rem_euclid(m) - n;
                let wrapped = match self.kind {
                    FlowKind::Translation => {
                        FlowGenerator::translation(wrap(diff.velocity.0), wrap(diff.velocity.1))
                    }
                    FlowKind::Rotation => FlowGenerator::rotation(wrap(diff.angular_velocity)),
                };
                Ok(self.position(&wrapped))
            }
        }
    }

    pub fn to_json(&self) -> FlowSetJson {
        FlowSetJson {
            kind: self.kind,
            n: self.radius,
            generators: self
                .generators
                .iter()
                .map(|g| match self.kind {
                    FlowKind::Translation => vec![g.velocity.0, g.velocity.1],
                    FlowKind::Rotation => vec![g.angular_velocity],
                })
                .collect(),
        }
    }

    pub fn from_json(j: &FlowSetJson) -> Result<Self> {
        let generators = j
            .generators
            .iter()
            .map(|v| match (j.kind, v.as_slice()) {
                (FlowKind::Translation, [vx, vy]) => Ok(FlowGenerator::translation(*vx, *vy)),
                (FlowKind::Rotation, [w]) => Ok(FlowGenerator::rotation(*w)),
                _ => Err(Error::Format(format!("bad generator entry {v:?} for {:?} set", j.kind))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = Self::from_generators(j.kind, generators)?;
        if let Some(n) = j.n {
            let standard = match j.kind {
                FlowKind::Translation => Self::translation(n),
                FlowKind::Rotation => Self::rotation(n),
            };
            if standard != set {
                return Err(Error::Format(format!("generators do not match standard set N={n}")));
            }
            set.radius = Some(n);
        }
        Ok(set)
    }
}

/// Wire form: `{"kind":"translation","N":2,"generators":[[vx,vy],…]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSetJson {
    pub kind: FlowKind,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub generators: Vec<Vec<i64>>,
}

impl Serialize for FlowSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FlowSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = FlowSetJson::deserialize(d)?;
        FlowSet::from_json(&j).map_err(serde::de::Error::custom)
    }
}
