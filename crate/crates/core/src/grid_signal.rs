//! Real-valued multi-channel signals on cyclic 2-D grids and the exact
//! pixel-permutation actions of translations and quarter turns.
//!
//! Coordinates are `(x, y)` with `x` the row index (`0..height`) and `y` the
//! column index (`0..width`). Values are stored channel-major, row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group_flow::{flow_element, FlowGenerator, GroupElement};

/// A cyclic `height × width` pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("grid must be nonempty, got {height}x{width}")));
        }
        Ok(Grid { height, width })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Flat offset of `(x, y)` after reducing both coordinates cyclically.
    pub fn wrap(&self, x: i64, y: i64) -> usize {
        let xr = x.rem_euclid(self.height as i64) as usize;
        let yr = y.rem_euclid(self.width as i64) as usize;
        xr * self.width + yr
    }

    pub(crate) fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::NonSquareGrid { height: self.height, width: self.width })
        }
    }
}

/// `dst(x, y) = src(x − dx, y − dy)` on one plane.
pub(crate) fn shift_plane(src: &[f64], dst: &mut [f64], h: usize, w: usize, dx: i64, dy: i64) {
    let sx = dx.rem_euclid(h as i64) as usize;
    let sy = dy.rem_euclid(w as i64) as usize;
    for x in 0..h {
        let from = (x + h - sx) % h;
        let s = &src[from * w..(from + 1) * w];
        let d = &mut dst[x * w..(x + 1) * w];
        // d[y] = s[y - sy]
        d[sy..].copy_from_slice(&s[..w - sy]);
        d[..sy].copy_from_slice(&s[w - sy..]);
    }
}

/// `dst(p) = src(R^{−r} p)` on one square plane, with `R(x, y) = (−y, x)`.
pub(crate) fn rotate_plane(src: &[f64], dst: &mut [f64], n: usize, r: u8) {
    let n_i = n as i64;
    for x in 0..n {
        for y in 0..n {
            let (px, py) = crate::group_flow::rotate_vec((x as i64, y as i64), (4 - r % 4) % 4);
            let from = (px.rem_euclid(n_i) as usize) * n + py.rem_euclid(n_i) as usize;
            dst[x * n + y] = src[from];
        }
    }
}

/// `dst(p) = src(g^{-1} p)` on one plane. Rotations require a square plane.
pub(crate) fn act_plane(src: &[f64], dst: &mut [f64], h: usize, w: usize, g: &GroupElement) {
    if g.rotation == 0 {
        shift_plane(src, dst, h, w, g.translation.0, g.translation.1);
    } else {
        let mut tmp = vec![0.0; h * w];
        rotate_plane(src, &mut tmp, h, g.rotation);
        shift_plane(&tmp, dst, h, w, g.translation.0, g.translation.1);
    }
}

/// A `K`-channel signal on a cyclic grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    grid: Grid,
    channels: usize,
    values: Vec<f64>,
}

impl Signal {
    pub fn zeros(grid: Grid, channels: usize) -> Self {
        Signal { grid, channels, values: vec![0.0; channels * grid.area()] }
    }

    pub fn from_vec(grid: Grid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("signal needs at least one channel".into()));
        }
        if values.len() != channels * grid.area() {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{}x{} = {} values, got {}",
                channels,
                grid.height,
                grid.width,
                channels * grid.area(),
                values.len()
            )));
        }
        Ok(Signal { grid, channels, values })
    }

    /// Single-channel unit impulse at `(x, y)`.
    pub fn delta(grid: Grid, x: i64, y: i64) -> Self {
        let mut s = Self::zeros(grid, 1);
        s.values[grid.wrap(x, y)] = 1.0;
        s
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn channel(&self, k: usize) -> &[f64] {
        let a = self.grid.area();
        &self.values[k * a..(k + 1) * a]
    }

    pub fn get(&self, k: usize, x: i64, y: i64) -> f64 {
        self.values[k * self.grid.area() + self.grid.wrap(x, y)]
    }

    pub fn set(&mut self, k: usize, x: i64, y: i64, v: f64) {
        let i = k * self.grid.area() + self.grid.wrap(x, y);
        self.values[i] = v;
    }

    pub fn same_shape(&self, other: &Signal) -> bool {
        self.grid == other.grid && self.channels == other.channels
    }

    pub(crate) fn check_shape(&self, other: &Signal) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.channels,
                self.grid.height,
                self.grid.width,
                other.channels,
                other.grid.height,
                other.grid.width
            )))
        }
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: f64, other: &Signal, beta: f64) -> Result<Signal> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(Signal { grid: self.grid, channels: self.channels, values })
    }

    pub fn max_abs_diff(&self, other: &Signal) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn map_planes(&self, f: impl Fn(&[f64], &mut [f64])) -> Signal {
        let a = self.grid.area();
        let mut out = vec![0.0; self.values.len()];
        for (src, dst) in self.values.chunks_exact(a).zip(out.chunks_exact_mut(a)) {
            f(src, dst);
        }
        Signal { grid: self.grid, channels: self.channels, values: out }
    }

    /// `out(k, x, y) = in(k, x − dx, y − dy)`, cyclically.
    pub fn act_translate(&self, d: (i64, i64)) -> Signal {
        let Grid { height, width } = self.grid;
        self.map_planes(|s, o| shift_plane(s, o, height, width, d.0, d.1))
    }

    /// Rotate by `k` quarter turns about the grid center (counter-clockwise
    /// in row/column display, like `numpy.rot90`). Pure index permutation.
    pub fn act_rotate90(&self, k: i64) -> Result<Signal> {
        self.grid.require_square()?;
        self.act(&GroupElement::center_rotation(k, self.grid.height))
    }

    /// `(g·f)(x) = f(g^{-1}·x)`.
    pub fn act(&self, g: &GroupElement) -> Result<Signal> {
        if g.rotation != 0 {
            self.grid.require_square()?;
        }
        let Grid { height, width } = self.grid;
        Ok(self.map_planes(|s, o| act_plane(s, o, height, width, g)))
    }
}

/// An ordered sequence of same-shape frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeSignal {
    frames: Vec<Signal>,
}

impl SpaceTimeSignal {
    pub fn new(frames: Vec<Signal>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("a sequence needs at least one frame".into()))?;
        for f in &frames[1..] {
            first.check_shape(f)?;
        }
        Ok(SpaceTimeSignal { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Signal] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Signal {
        &self.frames[t]
    }

    pub fn into_frames(self) -> Vec<Signal> {
        self.frames
    }

    pub fn grid(&self) -> Grid {
        self.frames[0].grid()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    /// First `n` frames.
    pub fn prefix(&self, n: usize) -> Result<SpaceTimeSignal> {
        if n == 0 || n > self.frames.len() {
            return Err(Error::InvalidArgument(format!("prefix {n} of a {}-frame sequence", self.len())));
        }
        Ok(SpaceTimeSignal { frames: self.frames[..n].to_vec() })
    }

    pub fn max_abs_diff(&self, other: &SpaceTimeSignal) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!("{} vs {} frames", self.len(), other.len())));
        }
        self.frames.iter().zip(&other.frames).try_fold(0.0, |m, (a, b)| Ok(f64::max(m, a.max_abs_diff(b)?)))
    }
}

/// `(ψ(ν)·f)_t = ψ_t(ν)·f_t`.
pub fn apply_flow_to_sequence(seq: &SpaceTimeSignal, nu: &FlowGenerator) -> Result<SpaceTimeSignal> {
    let frames = seq
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| f.act(&flow_element(nu, t as i64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpaceTimeSignal { frames })
}
