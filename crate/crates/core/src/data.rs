//! Synthetic flowing-sprite sequences: small patterns placed on a cyclic grid
//! and carried along by per-sprite flows.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_signal::{Grid, Signal, SpaceTimeSignal};
use crate::group_flow::{flow_element, FlowGenerator, FlowSet};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpriteKind {
    Gaussian,
    Glyph,
    /// Alternating Gaussian and glyph sprites.
    Mixed,
}

impl SpriteKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(SpriteKind::Gaussian),
            "glyph" => Ok(SpriteKind::Glyph),
            "mixed" => Ok(SpriteKind::Mixed),
            _ => Err(Error::InvalidArgument(format!("unknown sprite kind `{s}`"))),
        }
    }
}

/// Small single-channel patterns with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteBank {
    sprites: Vec<Signal>,
    seed: u64,
}

impl SpriteBank {
    /// `count` procedural `size × size` sprites drawn from `seed`.
    pub fn procedural(count: usize, size: usize, kind: SpriteKind, seed: u64) -> Result<Self> {
        if count == 0 || size == 0 {
            return Err(Error::InvalidArgument("sprite bank needs a positive count and size".into()));
        }
        let grid = Grid::square(size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sprites = (0..count)
            .map(|i| {
                let glyph = match kind {
                    SpriteKind::Gaussian => false,
                    SpriteKind::Glyph => true,
                    SpriteKind::Mixed => i % 2 == 1,
                };
                if glyph {
                    glyph_sprite(&mut rng, grid)
                } else {
                    gaussian_sprite(&mut rng, grid)
                }
            })
            .collect();
        Ok(SpriteBank { sprites, seed })
    }

    /// Wrap externally supplied single-channel images.
    pub fn from_images(images: Vec<Signal>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("no sprite images".into()));
        }
        for (i, s) in images.iter().enumerate() {
            if s.channels() != 1 {
                return Err(Error::ShapeMismatch(format!("sprite {i} has {} channels", s.channels())));
            }
            if s.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("sprite {i} has values outside [0, 1]")));
            }
            if s.values().iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidArgument(format!("sprite {i} is all zero")));
            }
        }
        Ok(SpriteBank { sprites: images, seed: 0 })
    }

    pub fn sprites(&self) -> &[Signal] {
        &self.sprites
    }

    pub fn len(&self) -> usize {
        self.sprites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sprites.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn gaussian_sprite(rng: &mut ChaCha8Rng, grid: Grid) -> Signal {
    let c = (grid.height as f64 - 1.0) / 2.0;
    let cx = c + rng.gen_range(-0.5..0.5);
    let cy = c + rng.gen_range(-0.5..0.5);
    let sx = rng.gen_range(0.7..1.6);
    let sy = rng.gen_range(0.7..1.6);
    let mut values = Vec::with_capacity(grid.area());
    for x in 0..grid.height {
        for y in 0..grid.width {
            let dx = (x as f64 - cx) / sx;
            let dy = (y as f64 - cy) / sy;
            values.push((-0.5 * (dx * dx + dy * dy)).exp());
        }
    }
    let peak = values.iter().copied().fold(0.0, f64::max);
    values.iter_mut().for_each(|v| *v /= peak);
    Signal::from_vec(grid, 1, values).expect("sized")
}

fn glyph_sprite(rng: &mut ChaCha8Rng, grid: Grid) -> Signal {
    loop {
        let values: Vec<f64> = (0..grid.area()).map(|_| if rng.gen_bool(0.45) { 1.0 } else { 0.0 }).collect();
        if values.iter().any(|v| *v > 0.0) {
            return Signal::from_vec(grid, 1, values).expect("sized");
        }
    }
}

/// Copy `sprite` into a zero `grid` signal with its top-left corner at `pos`,
/// wrapping cyclically.
pub fn place_sprite(sprite: &Signal, grid: Grid, pos: (i64, i64)) -> Signal {
    let mut out = Signal::zeros(grid, sprite.channels());
    let sg = sprite.grid();
    for k in 0..sprite.channels() {
        for a in 0..sg.height as i64 {
            for b in 0..sg.width as i64 {
                let v = sprite.get(k, a, b);
                let cur = out.get(k, pos.0 + a, pos.1 + b);
                out.set(k, pos.0 + a, pos.1 + b, cur + v);
            }
        }
    }
    out
}

/// Unit-style bump carried by `nu`: frame `t` is `amplitude` at `ψ_t(ν)·0`.
pub fn gen_bump_sequence(grid: Grid, nu: &FlowGenerator, steps: usize, amplitude: f64) -> Result<SpaceTimeSignal> {
    let base = Signal::delta(grid, 0, 0);
    bump_frames(&base, nu, steps, amplitude)
}

/// Like [`gen_bump_sequence`] with an isotropic Gaussian of width `sigma`
/// centred at the origin (cyclic distance).
pub fn gen_gaussian_bump_sequence(
    grid: Grid,
    nu: &FlowGenerator,
    steps: usize,
    amplitude: f64,
    sigma: f64,
) -> Result<SpaceTimeSignal> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let mut values = Vec::with_capacity(grid.area());
    for x in 0..grid.height {
        for y in 0..grid.width {
            let dx = x.min(grid.height - x) as f64;
            let dy = y.min(grid.width - y) as f64;
            values.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    bump_frames(&Signal::from_vec(grid, 1, values)?, nu, steps, amplitude)
}

fn bump_frames(base: &Signal, nu: &FlowGenerator, steps: usize, amplitude: f64) -> Result<SpaceTimeSignal> {
    if amplitude <= 0.0 || steps == 0 {
        return Err(Error::InvalidArgument("bump needs amplitude > 0 and at least one frame".into()));
    }
    let scaled = base.lin_comb(amplitude, base, 0.0)?;
    let frames = (0..steps).map(|t| scaled.act(&flow_element(nu, t as i64))).collect::<Result<Vec<_>>>()?;
    SpaceTimeSignal::new(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDatasetConfig {
    pub grid: Grid,
    pub steps: usize,
    pub v_train: FlowSet,
    pub v_val: FlowSet,
    pub v_test: FlowSet,
    pub sprites_per_sequence: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub sprite_count: usize,
    pub sprite_size: usize,
    pub sprite_kind: SpriteKind,
    pub seed: u64,
}

impl Default for FlowDatasetConfig {
    fn default() -> Self {
        FlowDatasetConfig {
            grid: Grid { height: 16, width: 16 },
            steps: 12,
            v_train: FlowSet::translation(1),
            v_val: FlowSet::translation(1),
            v_test: FlowSet::translation(1),
            sprites_per_sequence: 2,
            train_count: 256,
            val_count: 32,
            test_count: 64,
            sprite_count: 32,
            sprite_size: 5,
            sprite_kind: SpriteKind::Mixed,
            seed: 0,
        }
    }
}

impl FlowDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidArgument("sequences need at least 2 steps".into()));
        }
        if self.train_count == 0 || self.val_count == 0 || self.test_count == 0 {
            return Err(Error::InvalidArgument("every split needs at least one sequence".into()));
        }
        if self.sprites_per_sequence == 0 {
            return Err(Error::InvalidArgument("sprites_per_sequence must be at least 1".into()));
        }
        for v in [&self.v_train, &self.v_val, &self.v_test] {
            if v.is_empty() {
                return Err(Error::InvalidArgument("flow sets must be nonempty".into()));
            }
            if v.generators().iter().any(|g| g.is_rotation()) {
                self.grid.require_square()?;
            }
        }
        Ok(())
    }

    pub fn flow_set(&self, split: Split) -> &FlowSet {
        match split {
            Split::Train => &self.v_train,
            Split::Val => &self.v_val,
            Split::Test => &self.v_test,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_count,
            Split::Val => self.val_count,
            Split::Test => self.test_count,
        }
    }

    pub fn sprite_bank(&self) -> Result<SpriteBank> {
        SpriteBank::procedural(self.sprite_count, self.sprite_size, self.sprite_kind, self.seed)
    }
}

/// One placed sprite of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteTrack {
    pub sprite_id: usize,
    pub position: (i64, i64),
    pub generator: FlowGenerator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub tracks: Vec<SpriteTrack>,
}

impl SequenceMeta {
    /// Generators of all sprites joined with `+`, e.g. `(1,0)+(0,-1)`.
    pub fn key(&self) -> String {
        self.tracks.iter().map(|t| t.generator.to_string()).collect::<Vec<_>>().join("+")
    }

    pub fn generators(&self) -> Vec<FlowGenerator> {
        self.tracks.iter().map(|t| t.generator).collect()
    }
}

/// `f_t = Σ_k ψ_t(ν_k)·place(s_k, p_k)`.
pub fn render_sequence(bank: &SpriteBank, grid: Grid, steps: usize, meta: &SequenceMeta) -> Result<SpaceTimeSignal> {
    let placed = meta
        .tracks
        .iter()
        .map(|tr| {
            let s = bank
                .sprites()
                .get(tr.sprite_id)
                .ok_or_else(|| Error::InvalidArgument(format!("sprite id {} out of range", tr.sprite_id)))?;
            Ok(place_sprite(s, grid, tr.position))
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = (0..steps)
        .map(|t| {
            let mut acc = Signal::zeros(grid, 1);
            for (p, tr) in placed.iter().zip(&meta.tracks) {
                let moved = p.act(&flow_element(&tr.generator, t as i64))?;
                acc = acc.lin_comb(1.0, &moved, 1.0)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeSignal::new(frames)
}

/// Draw the metadata of sequence `index` of `split`. Every sequence has its
/// own generator stream, so generation is order-independent.
pub fn sample_meta(cfg: &FlowDatasetConfig, bank: &SpriteBank, split: Split, index: usize) -> SequenceMeta {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((split.stream() << 40) | index as u64);
    let v = cfg.flow_set(split);
    let tracks = (0..cfg.sprites_per_sequence)
        .map(|_| SpriteTrack {
            sprite_id: rng.gen_range(0..bank.len()),
            position: (rng.gen_range(0..cfg.grid.height as i64), rng.gen_range(0..cfg.grid.width as i64)),
            generator: v.get(rng.gen_range(0..v.len())),
        })
        .collect();
    SequenceMeta { tracks }
}

pub fn gen_flowing_sprites(cfg: &FlowDatasetConfig, split: Split) -> Result<Vec<(SpaceTimeSignal, SequenceMeta)>> {
    let bank = cfg.sprite_bank()?;
    gen_flowing_sprites_with(cfg, &bank, split)
}

pub fn gen_flowing_sprites_with(
    cfg: &FlowDatasetConfig,
    bank: &SpriteBank,
    split: Split,
) -> Result<Vec<(SpaceTimeSignal, SequenceMeta)>> {
    cfg.validate()?;
    (0..cfg.count(split))
        .into_par_iter()
        .map(|i| {
            let meta = sample_meta(cfg, bank, split, i);
            Ok((render_sequence(bank, cfg.grid, cfg.steps, &meta)?, meta))
        })
        .collect()
}

/// One stored sequence of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub file: String,
    pub meta: SequenceMeta,
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: FlowDatasetConfig,
    pub sprites_file: String,
    pub sequences: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "flowrnn-dataset";

/// Generate all splits into `dir` as `FSIG` files plus a manifest.
pub fn write_dataset(dir: &Path, cfg: &FlowDatasetConfig, bank: &SpriteBank) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let sprites = SpaceTimeSignal::new(bank.sprites().to_vec())
        .map_err(|_| Error::ShapeMismatch("sprites must share one size to be stored".into()))?;
    let sprites_file = "sprites.fsig".to_string();
    io::write_bytes(&dir.join(&sprites_file), &io::encode_sequence(&sprites)?)?;
    let mut sequences = Vec::new();
    for split in Split::ALL {
        std::fs::create_dir_all(dir.join(split.name()))?;
        for (i, (seq, meta)) in gen_flowing_sprites_with(cfg, bank, split)?.into_iter().enumerate() {
            let file = format!("{}/seq_{i:05}.fsig", split.name());
            io::write_bytes(&dir.join(&file), &io::encode_sequence(&seq)?)?;
            sequences.push(ManifestEntry { split, file, meta });
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: io::VERSION,
        seed: cfg.seed,
        config: cfg.clone(),
        sprites_file,
        sequences,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    io::write_bytes(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let bytes = io::read_bytes(&dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_slice(&bytes)?;
    if m.format != MANIFEST_FORMAT || m.version != io::VERSION {
        return Err(Error::Format(format!("unsupported manifest {} v{}", m.format, m.version)));
    }
    Ok(m)
}

pub fn load_sprite_bank(dir: &Path, manifest: &Manifest) -> Result<SpriteBank> {
    let seq = io::decode_sequence(&io::read_bytes(&dir.join(&manifest.sprites_file))?)?;
    let mut bank = SpriteBank::from_images(seq.into_frames())?;
    bank.seed = manifest.seed;
    Ok(bank)
}

pub fn load_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<(SpaceTimeSignal, SequenceMeta)>> {
    manifest
        .sequences
        .iter()
        .filter(|e| e.split == split)
        .map(|e| Ok((io::decode_sequence(&io::read_bytes(&dir.join(&e.file))?)?, e.meta.clone())))
        .collect()
}
