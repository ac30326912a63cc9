//! Little-endian binary interchange formats.
//!
//! | magic  | header                                   | payload                     |
//! |--------|------------------------------------------|-----------------------------|
//! | `PCD1` | u32 count                                | count x 3 f32               |
//! | `SDF1` | 3 x u32 resolution, 6 x f64 bounds       | f32 per node, x fastest     |
//! | `COL1` | as `SDF1`                                | 3 x f32 per node            |
//! | `DWF1` | u32 bones, then as `SDF1`                | f32 per node, bone-major    |
//! | `OPA1` | u32 width, u32 height                    | f32 per pixel, row-major    |
//!
//! Images are binary PPM (`P6`, max value 255).

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::field::{Aabb, ColorGrid, Lattice, SdfGrid};
use crate::mesh::PointCloud;
use crate::skinning::DeltaWeightField;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(Reader { bytes, pos: 4 })
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().unwrap_or([0; N]))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take()?) as f64)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.bytes.len() - self.pos < n * 4 {
            return Err(Error::Format(format!("payload holds fewer than {n} values")));
        }
        (0..n).map(|_| self.f32()).collect()
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn encode_point_cloud(cloud: &PointCloud) -> Result<Vec<u8>> {
    let mut out = b"PCD1".to_vec();
    put_u32(&mut out, cloud.len())?;
    for p in cloud.points() {
        p.iter().for_each(|&v| put_f32(&mut out, v));
    }
    Ok(out)
}

pub fn decode_point_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader::new(bytes, b"PCD1")?;
    let n = r.u32()?;
    let v = r.f32s(n * 3)?;
    r.finish()?;
    PointCloud::new(v.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
}

fn put_lattice(out: &mut Vec<u8>, lattice: &Lattice) -> Result<()> {
    for r in lattice.resolution() {
        put_u32(out, r)?;
    }
    let b = lattice.bounds();
    for v in b.min.iter().chain(b.max.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn get_lattice(r: &mut Reader) -> Result<([usize; 3], Aabb)> {
    let res = [r.u32()?, r.u32()?, r.u32()?];
    let mut b = [0.0; 6];
    for v in &mut b {
        *v = r.f64()?;
    }
    let bounds = Aabb::new(Vector3::new(b[0], b[1], b[2]), Vector3::new(b[3], b[4], b[5]))?;
    Lattice::new(res, bounds)?;
    Ok((res, bounds))
}

pub fn encode_sdf(grid: &SdfGrid) -> Result<Vec<u8>> {
    let mut out = b"SDF1".to_vec();
    put_lattice(&mut out, grid.lattice())?;
    grid.values().iter().for_each(|&v| put_f32(&mut out, v));
    Ok(out)
}

pub fn decode_sdf(bytes: &[u8]) -> Result<SdfGrid> {
    let mut r = Reader::new(bytes, b"SDF1")?;
    let (res, bounds) = get_lattice(&mut r)?;
    let values = r.f32s(res.iter().product())?;
    r.finish()?;
    SdfGrid::new(res, bounds, values)
}

pub fn encode_color(grid: &ColorGrid) -> Result<Vec<u8>> {
    let mut out = b"COL1".to_vec();
    put_lattice(&mut out, grid.lattice())?;
    grid.values().iter().flatten().for_each(|&v| put_f32(&mut out, v));
    Ok(out)
}

pub fn decode_color(bytes: &[u8]) -> Result<ColorGrid> {
    let mut r = Reader::new(bytes, b"COL1")?;
    let (res, bounds) = get_lattice(&mut r)?;
    let values = r.f32s(3 * res.iter().product::<usize>())?;
    r.finish()?;
    ColorGrid::new(res, bounds, values.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

pub fn encode_delta(field: &DeltaWeightField) -> Result<Vec<u8>> {
    let mut out = b"DWF1".to_vec();
    put_u32(&mut out, field.bone_count())?;
    put_lattice(&mut out, field.lattice())?;
    field.values().iter().for_each(|&v| put_f32(&mut out, v));
    Ok(out)
}

pub fn decode_delta(bytes: &[u8]) -> Result<DeltaWeightField> {
    let mut r = Reader::new(bytes, b"DWF1")?;
    let bones = r.u32()?;
    let (res, bounds) = get_lattice(&mut r)?;
    let values = r.f32s(bones * res.iter().product::<usize>())?;
    r.finish()?;
    DeltaWeightField::from_values(bones, bounds, res, values)
}

/// Row-major RGB image with channel values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for px in &img.rgb {
        for &c in px {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn encode_opacity(img: &Image) -> Result<Vec<u8>> {
    let mut out = b"OPA1".to_vec();
    put_u32(&mut out, img.width)?;
    put_u32(&mut out, img.height)?;
    img.opacity.iter().for_each(|&v| put_f32(&mut out, v));
    Ok(out)
}

/// `(width, height, values)` of an opacity map.
pub fn decode_opacity(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = Reader::new(bytes, b"OPA1")?;
    let (w, h) = (r.u32()?, r.u32()?);
    let v = r.f32s(w * h)?;
    r.finish()?;
    Ok((w, h, v))
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}
