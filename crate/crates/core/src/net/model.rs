//! Binary model serialization.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "USIS"
//! version u32      currently 1
//! preset  u8       1 = paper26, 2 = toy8
//! count   u32      number of conv records
//! record  repeated:
//!   kind     u8   0 = conv, 1 = transposed conv
//!   flags    u8   bit 0 = has norm, bit 1 = has relu
//!   in,out   u16 each
//!   k,stride,dilation,pad,out_pad  u8 each
//!   weights  f32 * (out*in*k*k)   (in*out*k*k for transposed)
//!   bias     f32 * out
//!   norm     (if flagged) gain, shift, ema_mean, ema_var: f32 * out each
//! ```
//!
//! Parameters are kept on the f32 grid in memory, so a save/load round
//! trip reproduces forward outputs bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{build, Network, PresetKind};

pub const MODEL_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"USIS";

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    let wr = |e: std::io::Error| Error::Unwritable {
        path: path.to_path_buf(),
        source: e,
    };

    out.write_all(MAGIC).map_err(wr)?;
    out.write_all(&MODEL_VERSION.to_le_bytes()).map_err(wr)?;
    out.write_all(&[net.preset.tag()]).map_err(wr)?;
    let units = net.units();
    out.write_all(&(units.len() as u32).to_le_bytes()).map_err(wr)?;

    for u in units {
        let c = &u.conv;
        let mut flags = 0u8;
        if u.norm.is_some() {
            flags |= 1;
        }
        if u.relu.is_some() {
            flags |= 2;
        }
        out.write_all(&[c.transposed as u8, flags]).map_err(wr)?;
        out.write_all(&(c.in_ch as u16).to_le_bytes()).map_err(wr)?;
        out.write_all(&(c.out_ch as u16).to_le_bytes()).map_err(wr)?;
        out.write_all(&[
            c.k as u8,
            c.stride as u8,
            c.dilation as u8,
            c.pad as u8,
            c.out_pad as u8,
        ])
        .map_err(wr)?;
        for &v in c.weight.value.iter().chain(&c.bias.value) {
            out.write_all(&(v as f32).to_le_bytes()).map_err(wr)?;
        }
        if let Some(norm) = &u.norm {
            for &v in norm
                .gain
                .value
                .iter()
                .chain(&norm.shift.value)
                .chain(&norm.ema_mean)
                .chain(&norm.ema_var)
            {
                out.write_all(&(v as f32).to_le_bytes()).map_err(wr)?;
            }
        }
    }
    out.flush().map_err(wr)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFormat("truncated model file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(4 * n)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

pub fn load_model(path: &Path) -> Result<Network> {
    let file = File::open(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|source| Error::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    if cur.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic (not a model file)".into()));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::ModelVersion {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let preset = PresetKind::from_tag(cur.u8()?)?;
    let count = cur.u32()? as usize;

    // The preset fixes the architecture; records carry the dims again so
    // a file from a mismatched build is rejected instead of misread.
    let mut net = build(preset, 0);
    let mut units = net.units_mut();
    if units.len() != count {
        return Err(Error::ModelFormat(format!(
            "record count {count} does not match {} layers of preset {}",
            units.len(),
            preset.name()
        )));
    }

    for (idx, u) in units.iter_mut().enumerate() {
        let kind = cur.u8()?;
        let flags = cur.u8()?;
        let in_ch = cur.u16()? as usize;
        let out_ch = cur.u16()? as usize;
        let dims = cur.take(5)?;
        let (k, stride, dilation, pad, out_pad) = (
            dims[0] as usize,
            dims[1] as usize,
            dims[2] as usize,
            dims[3] as usize,
            dims[4] as usize,
        );
        let c = &mut u.conv;
        let matches = (kind == 1) == c.transposed
            && (flags & 1 != 0) == u.norm.is_some()
            && (flags & 2 != 0) == u.relu.is_some()
            && in_ch == c.in_ch
            && out_ch == c.out_ch
            && k == c.k
            && stride == c.stride
            && dilation == c.dilation
            && pad == c.pad
            && out_pad == c.out_pad;
        if !matches {
            return Err(Error::ModelFormat(format!(
                "layer {idx} record does not match preset {} architecture",
                preset.name()
            )));
        }
        let wlen = out_ch * in_ch * k * k;
        c.weight = super::Param::new(cur.f32_vec(wlen)?);
        c.bias = super::Param::new(cur.f32_vec(out_ch)?);
        if let Some(norm) = &mut u.norm {
            norm.gain = super::Param::new(cur.f32_vec(out_ch)?);
            norm.shift = super::Param::new(cur.f32_vec(out_ch)?);
            norm.ema_mean = cur.f32_vec(out_ch)?;
            norm.ema_var = cur.f32_vec(out_ch)?;
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::ModelFormat("trailing bytes after last layer".into()));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::net::to_f32_grid;
    use crate::rng::Rng;

    fn rand_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        let data = (0..h * w * 3).map(|_| rng.next_f64()).collect();
        Image::new(h, w, 3, data).unwrap()
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("smoothlab_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn roundtrip_outputs_bit_exact() {
        let mut net = build(PresetKind::Toy8, 5);
        // Give the final layer nonzero weights so the test is not vacuous.
        {
            let mut rng = Rng::new(6);
            let mut units = net.units_mut();
            let last = units.last_mut().unwrap();
            for v in last.conv.weight.value.iter_mut() {
                *v = to_f32_grid(rng.next_normal() * 0.1);
            }
        }
        let img = rand_image(8, 8, 7);
        let before = net.forward_smooth(&img, false).unwrap();

        let path = tmp("roundtrip.usis");
        save_model(&net, &path).unwrap();
        let mut loaded = load_model(&path).unwrap();
        let after = loaded.forward_smooth(&img, false).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn corrupted_magic_rejected() {
        let net = build(PresetKind::Toy8, 1);
        let path = tmp("badmagic.usis");
        save_model(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn future_version_rejected() {
        let net = build(PresetKind::Toy8, 1);
        let path = tmp("badversion.usis");
        save_model(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&(MODEL_VERSION + 1).to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_model(&path) {
            Err(Error::ModelVersion { found, expected }) => {
                assert_eq!(found, MODEL_VERSION + 1);
                assert_eq!(expected, MODEL_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_rejected() {
        let net = build(PresetKind::Toy8, 1);
        let path = tmp("trunc.usis");
        save_model(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn parameters_roundtrip_identically() {
        let net = build(PresetKind::Toy8, 9);
        let path = tmp("params.usis");
        save_model(&net, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        for (a, b) in net.units().iter().zip(loaded.units()) {
            assert_eq!(a.conv.weight.value, b.conv.weight.value);
            assert_eq!(a.conv.bias.value, b.conv.bias.value);
        }
    }
}
