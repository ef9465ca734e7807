//! Little-endian binary containers.
//!
//! * `FSIG` v1: `K, H, W` (u32) then `K·H·W` f64 values; sequences prepend `T`.
//! * `FKRN` v1: `K', K, R, kH, kW` (u32) then the taps.
//! * `FMDL` v1: u32 length + JSON header, then the model's kernels as `FKRN`
//!   records and, for a full `V` profile, one f64 per generator.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conv::{Kernel, VKernel, VProfile};
use crate::error::{Error, Result};
use crate::grid_signal::{Grid, Signal, SpaceTimeSignal};
use crate::group_flow::{FlowSet, GroupKind};
use crate::learn::Model;
use crate::rnn::{DecoderParams, FernnParams, GrnnParams, LiftMode, ModelFamily, Nonlinearity, RecurrentModel};

pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    out.reserve(vs.len() * 8);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} does not fit in u32")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Format("unexpected end of data".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn product(dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("size overflow".into()))
}

pub fn encode_signal(s: &Signal) -> Result<Vec<u8>> {
    let mut out = b"FSIG".to_vec();
    put_u32(&mut out, VERSION);
    for d in [s.channels(), s.grid().height, s.grid().width] {
        put_u32(&mut out, to_u32(d)?);
    }
    put_f64s(&mut out, s.values());
    Ok(out)
}

pub fn decode_signal(buf: &[u8]) -> Result<Signal> {
    let mut c = Cursor::new(buf);
    c.header(b"FSIG")?;
    let (k, h, w) = (c.dim()?, c.dim()?, c.dim()?);
    let values = c.f64s(product(&[k, h, w])?)?;
    c.finish()?;
    Signal::from_vec(Grid::new(h, w)?, k, values)
}

pub fn encode_sequence(s: &SpaceTimeSignal) -> Result<Vec<u8>> {
    let mut out = b"FSIG".to_vec();
    put_u32(&mut out, VERSION);
    for d in [s.len(), s.channels(), s.grid().height, s.grid().width] {
        put_u32(&mut out, to_u32(d)?);
    }
    for f in s.frames() {
        put_f64s(&mut out, f.values());
    }
    Ok(out)
}

pub fn decode_sequence(buf: &[u8]) -> Result<SpaceTimeSignal> {
    let mut c = Cursor::new(buf);
    c.header(b"FSIG")?;
    let (t, k, h, w) = (c.dim()?, c.dim()?, c.dim()?, c.dim()?);
    let grid = Grid::new(h, w)?;
    let n = product(&[k, h, w])?;
    let frames = (0..t).map(|_| Signal::from_vec(grid, k, c.f64s(n)?)).collect::<Result<Vec<_>>>()?;
    c.finish()?;
    SpaceTimeSignal::new(frames)
}

fn put_kernel(out: &mut Vec<u8>, k: &Kernel) -> Result<()> {
    out.extend_from_slice(b"FKRN");
    put_u32(out, VERSION);
    let (kh, kw) = k.size();
    for d in [k.out_channels(), k.in_channels(), k.rotations(), kh, kw] {
        put_u32(out, to_u32(d)?);
    }
    put_f64s(out, k.data());
    Ok(())
}

fn take_kernel(c: &mut Cursor) -> Result<Kernel> {
    c.header(b"FKRN")?;
    let (o, i, r, kh, kw) = (c.dim()?, c.dim()?, c.dim()?, c.dim()?, c.dim()?);
    let data = c.f64s(product(&[o, i, r, kh, kw])?)?;
    Kernel::new(o, i, r, (kh, kw), data)
}

pub fn encode_kernel(k: &Kernel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_kernel(&mut out, k)?;
    Ok(out)
}

pub fn decode_kernel(buf: &[u8]) -> Result<Kernel> {
    let mut c = Cursor::new(buf);
    let k = take_kernel(&mut c)?;
    c.finish()?;
    Ok(k)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    family: ModelFamily,
    group: GroupKind,
    nonlinearity: Nonlinearity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flow_set: Option<FlowSet>,
    full_profile: bool,
    decoder_layers: usize,
}

pub fn encode_model(m: &Model) -> Result<Vec<u8>> {
    let (header, u, w, profile) = match &m.core {
        RecurrentModel::Grnn(p) => (
            ModelHeader {
                family: ModelFamily::Grnn,
                group: p.group,
                nonlinearity: p.nonlinearity,
                flow_set: None,
                full_profile: false,
                decoder_layers: m.decoder.layers.len(),
            },
            &p.u,
            &p.w,
            None,
        ),
        RecurrentModel::Fernn(p) => {
            let profile = match &p.w.profile {
                VProfile::DeltaAtIdentity => None,
                VProfile::Full(v) => Some(v.as_slice()),
            };
            (
                ModelHeader {
                    family: match p.lift_mode {
                        LiftMode::Trivial => ModelFamily::Fernn,
                        LiftMode::Nontrivial => ModelFamily::FernnNontrivial,
                    },
                    group: p.group,
                    nonlinearity: p.nonlinearity,
                    flow_set: Some((*p.flow_set).clone()),
                    full_profile: profile.is_some(),
                    decoder_layers: m.decoder.layers.len(),
                },
                &p.u,
                &p.w.base,
                profile,
            )
        }
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = b"FMDL".to_vec();
    put_u32(&mut out, VERSION);
    put_u32(&mut out, to_u32(json.len())?);
    out.extend_from_slice(&json);
    put_kernel(&mut out, u)?;
    put_kernel(&mut out, w)?;
    if let Some(v) = profile {
        put_f64s(&mut out, v);
    }
    for k in &m.decoder.layers {
        put_kernel(&mut out, k)?;
    }
    Ok(out)
}

pub fn decode_model(buf: &[u8]) -> Result<Model> {
    let mut c = Cursor::new(buf);
    c.header(b"FMDL")?;
    let n = c.dim()?;
    let header: ModelHeader = serde_json::from_slice(c.take(n)?)?;
    let u = take_kernel(&mut c)?;
    let w = take_kernel(&mut c)?;
    let core = match header.family {
        ModelFamily::Grnn => RecurrentModel::Grnn(GrnnParams::new(header.group, u, w, header.nonlinearity)?),
        ModelFamily::Fernn | ModelFamily::FernnNontrivial => {
            let set = header.flow_set.ok_or_else(|| Error::Format("FERNN checkpoint without flow set".into()))?;
            let wk = if header.full_profile { VKernel::full(w, c.f64s(set.len())?) } else { VKernel::delta(w) };
            let mode = if header.family == ModelFamily::Fernn { LiftMode::Trivial } else { LiftMode::Nontrivial };
            RecurrentModel::Fernn(FernnParams::new(header.group, u, wk, Arc::new(set), header.nonlinearity, mode)?)
        }
    };
    let layers = (0..header.decoder_layers).map(|_| take_kernel(&mut c)).collect::<Result<Vec<_>>>()?;
    c.finish()?;
    Model::new(core, DecoderParams::new(layers)?)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}

/// Images for a sprite bank: a single-frame or multi-frame `FSIG` file,
/// each frame one grayscale image.
pub fn load_images(path: &Path) -> Result<Vec<Signal>> {
    let buf = read_bytes(path)?;
    match decode_sequence(&buf) {
        Ok(seq) => Ok(seq.into_frames()),
        Err(_) => Ok(vec![decode_signal(&buf)?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::ModelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn signal_layout_is_exact() {
        let s = Signal::from_vec(Grid::new(1, 2).unwrap(), 1, vec![1.0, -2.5]).unwrap();
        let b = encode_signal(&s).unwrap();
        let mut want = b"FSIG".to_vec();
        for v in [1u32, 1, 1, 2] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&1.0f64.to_le_bytes());
        want.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(b, want);
        assert_eq!(decode_signal(&b).unwrap(), s);
    }

    #[test]
    fn round_trips_and_rejections() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::new(3, 4).unwrap();
        let frames: Vec<_> =
            (0..3).map(|_| Signal::from_vec(g, 2, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()).collect();
        let seq = SpaceTimeSignal::new(frames).unwrap();
        let b = encode_sequence(&seq).unwrap();
        assert_eq!(decode_sequence(&b).unwrap(), seq);
        assert!(decode_sequence(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_sequence(&bad).is_err());
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(decode_sequence(&v2).is_err());
        assert!(decode_signal(&b).is_err());

        let k = Kernel::random(&mut rng, 2, 3, 4, 3, 1.0).unwrap();
        assert_eq!(decode_kernel(&encode_kernel(&k).unwrap()).unwrap(), k);
    }

    #[test]
    fn model_round_trip() {
        for (family, full) in
            [(ModelFamily::Grnn, false), (ModelFamily::Fernn, true), (ModelFamily::FernnNontrivial, false)]
        {
            let spec = ModelSpec {
                family,
                group: GroupKind::RotoTranslation,
                input_channels: 1,
                hidden_channels: 2,
                kernel_size: 3,
                decoder_hidden: vec![4],
                decoder_kernel_size: 3,
                nonlinearity: Nonlinearity::Relu,
                flow_set: Some(FlowSet::rotation(1)),
                full_profile: full,
            };
            let (core, dec) = spec.build(2).unwrap();
            let m = Model::new(core, dec).unwrap();
            let b = encode_model(&m).unwrap();
            assert_eq!(decode_model(&b).unwrap(), m);
            assert_eq!(encode_model(&decode_model(&b).unwrap()).unwrap(), b);
        }
    }
}
