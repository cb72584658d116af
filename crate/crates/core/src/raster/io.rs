//! FPS1 patch files.
//!
//! Layout: magic `FPS1`, a little-endian u32 header length, a UTF-8 JSON header,
//! then each channel as `size_p²` little-endian f32 values in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Channel, ChannelRole, PatchStack, RasterGrid};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FPS1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    size_p: usize,
    cell_size: f64,
    origin: [f64; 2],
    channels: Vec<ChannelHeader>,
    nodata: f64,
    #[serde(default)]
    center: Option<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChannelHeader {
    name: String,
    role: ChannelRole,
}

pub fn encode_patch(patch: &PatchStack) -> Result<Vec<u8>> {
    patch.validate()?;
    let t = patch.template()?;
    if t.nodata as f32 as f64 != t.nodata {
        return Err(Error::Invalid(format!("nodata {} is not representable in f32", t.nodata)));
    }
    let header = Header {
        size_p: patch.size_p,
        cell_size: t.cell_size,
        origin: [t.origin.0, t.origin.1],
        channels: patch
            .channels
            .iter()
            .map(|c| ChannelHeader { name: c.name.clone(), role: c.role })
            .collect(),
        nodata: t.nodata,
        center: Some([patch.center.0, patch.center.1]),
    };
    let json = serde_json::to_vec(&header)?;
    let n = patch.size_p * patch.size_p;
    let mut buf = Vec::with_capacity(8 + json.len() + 4 * n * patch.channels.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for ch in &patch.channels {
        for v in &ch.grid.values {
            let f = if ch.grid.is_nodata(*v) { t.nodata as f32 } else { *v as f32 };
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_patch(bytes: &[u8]) -> Result<PatchStack> {
    if bytes.len() < 8 || bytes[..4] != MAGIC {
        return Err(Error::Format("missing FPS1 magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::Format(format!("header length {hlen} exceeds file size")))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let n = header.size_p * header.size_p;
    let data = &bytes[8 + hlen..];
    let expected = 4 * n * header.channels.len();
    if data.len() != expected {
        return Err(Error::Corrupt(format!(
            "expected {expected} bytes of channel data, found {}",
            data.len()
        )));
    }
    let origin = (header.origin[0], header.origin[1]);
    let channels = header
        .channels
        .into_iter()
        .zip(data.chunks_exact(4 * n.max(1)))
        .map(|(ch, raw)| {
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let mut grid = RasterGrid::from_values(header.size_p, header.size_p, header.cell_size, origin, values)?;
            grid.nodata = header.nodata;
            Ok(Channel::new(ch.name, ch.role, grid))
        })
        .collect::<Result<Vec<_>>>()?;
    let center = header.center.map(|c| (c[0], c[1])).unwrap_or_else(|| {
        let half = (header.size_p / 2) as f64 + 0.5;
        (origin.0 + half * header.cell_size, origin.1 - half * header.cell_size)
    });
    PatchStack::new(header.size_p, center, channels)
}

pub fn write_patch(patch: &PatchStack, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_patch(patch)?)?;
    Ok(())
}

pub fn read_patch(path: impl AsRef<Path>) -> Result<PatchStack> {
    decode_patch(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_channel(size: usize, seed: u64) -> PatchStack {
        let lc: Vec<f64> = (0..size * size).map(|i| if (i as u64 + seed) % 3 == 0 { 11.0 } else { 41.0 }).collect();
        let d: Vec<f64> = (0..size * size).map(|i| (i as f64 * 0.37 + seed as f64).sqrt() * 30.0).collect();
        let origin = (1000.0, 5000.0);
        let g1 = RasterGrid::from_values(size, size, 30.0, origin, lc).unwrap();
        let g2 = RasterGrid::from_values(size, size, 30.0, origin, d).unwrap();
        PatchStack::new(
            size,
            (1000.0 + 30.0 * size as f64 / 2.0, 5000.0 - 30.0 * size as f64 / 2.0),
            vec![
                Channel::new("landcover", ChannelRole::Landcover, g1),
                Channel::new("dist_chem", ChannelRole::Distance, g2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_8x8() {
        let p = two_channel(8, 1);
        let once = decode_patch(&encode_patch(&p).unwrap()).unwrap();
        assert_eq!(once.channels.len(), 2);
        assert_eq!(once.channels[0].name, "landcover");
        assert_eq!(once.channels[1].role, ChannelRole::Distance);
        assert_eq!(once.channels[0].grid.values, p.channels[0].grid.values);
        // values are f32-rounded once, then stable
        let twice = decode_patch(&encode_patch(&once).unwrap()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = encode_patch(&two_channel(4, 0)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_patch(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_data_is_corruption() {
        let mut bytes = encode_patch(&two_channel(4, 0)).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(decode_patch(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn large_patch_round_trip_is_fast() {
        let size = 256;
        let origin = (0.0, 0.0);
        let channels = (0..18)
            .map(|k| {
                let v = (0..size * size).map(|i| ((i * (k + 1)) % 977) as f64 * 0.5).collect();
                let g = RasterGrid::from_values(size, size, 30.0, origin, v).unwrap();
                Channel::new(format!("c{k}"), ChannelRole::Distance, g)
            })
            .collect();
        let p = PatchStack::new(size, (3840.0, -3840.0), channels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.fps");
        let t = std::time::Instant::now();
        write_patch(&p, &path).unwrap();
        let back = read_patch(&path).unwrap();
        let elapsed = t.elapsed();
        assert_eq!(back, p);
        assert!(elapsed.as_millis() < 100, "round trip took {elapsed:?}");
    }

    proptest! {
        #[test]
        fn read_write_is_idempotent(size in 1usize..12, vals in proptest::collection::vec(-1e6f64..1e6, 144)) {
            let v: Vec<f64> = vals[..size * size].to_vec();
            let g = RasterGrid::from_values(size, size, 30.0, (0.0, 0.0), v).unwrap();
            let p = PatchStack::new(size, (0.0, 0.0), vec![Channel::new("x", ChannelRole::Dem, g)]).unwrap();
            let once = decode_patch(&encode_patch(&p).unwrap()).unwrap();
            let twice = decode_patch(&encode_patch(&once).unwrap()).unwrap();
            prop_assert_eq!(&once, &twice);
            for (a, b) in once.channels[0].grid.values.iter().zip(&p.channels[0].grid.values) {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
        }
    }
}
