//! Single-file NIfTI-1 support, deliberately minimal: little-endian float32
//! volumes only, spacing carried in `pixdim`, dose level and subject id
//! stashed in `descrip`. Files ending in `.gz` are gzip-wrapped.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{DoseLevel, Volume};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use ndarray::Array3;
use std::io::{Cursor, Read, Write};
use std::path::Path;

const HEADER_LEN: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_FLOAT32: i16 = 16;

pub fn write<F: Scalar>(path: &Path, v: &Volume<F>) -> Result<()> {
    let [nx, ny, nz] = v.shape();
    if nx > i16::MAX as usize || ny > i16::MAX as usize || nz > i16::MAX as usize {
        return Err(Error::data(format!("shape {:?} exceeds NIfTI-1 dim range", v.shape())));
    }
    let mut buf = Cursor::new(vec![0u8; VOX_OFFSET]);
    buf.write_i32::<LittleEndian>(HEADER_LEN as i32)?;
    buf.set_position(40);
    for d in [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1] {
        buf.write_i16::<LittleEndian>(d)?;
    }
    buf.set_position(70);
    buf.write_i16::<LittleEndian>(DT_FLOAT32)?;
    buf.write_i16::<LittleEndian>(32)?; // bitpix
    buf.set_position(76);
    for p in [
        1.0f32,
        v.spacing[0] as f32,
        v.spacing[1] as f32,
        v.spacing[2] as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ] {
        buf.write_f32::<LittleEndian>(p)?;
    }
    buf.write_f32::<LittleEndian>(VOX_OFFSET as f32)?; // vox_offset
    buf.write_f32::<LittleEndian>(1.0)?; // scl_slope
    buf.write_f32::<LittleEndian>(0.0)?; // scl_inter
    buf.set_position(123);
    buf.write_u8(2)?; // xyzt_units: millimetres
    buf.set_position(148);
    let descrip = format!("drf={};id={}", v.dose.factor(), v.id);
    let bytes = descrip.as_bytes();
    let n = bytes.len().min(79);
    buf.get_mut()[148..148 + n].copy_from_slice(&bytes[..n]);
    buf.set_position(254);
    buf.write_i16::<LittleEndian>(1)?; // sform_code: scaled voxel grid
    buf.set_position(280);
    let sx = v.spacing[0] as f32;
    let sy = v.spacing[1] as f32;
    let sz = v.spacing[2] as f32;
    for row in [[sx, 0.0, 0.0, 0.0], [0.0, sy, 0.0, 0.0], [0.0, 0.0, sz, 0.0]] {
        for c in row {
            buf.write_f32::<LittleEndian>(c)?;
        }
    }
    buf.set_position(344);
    buf.write_all(b"n+1\0")?;

    let mut out: Box<dyn Write> = if is_gz(path) {
        Box::new(GzEncoder::new(
            std::io::BufWriter::new(std::fs::File::create(path)?),
            flate2::Compression::default(),
        ))
    } else {
        Box::new(std::io::BufWriter::new(std::fs::File::create(path)?))
    };
    out.write_all(buf.get_ref())?;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.write_f32::<LittleEndian>(v.voxels[[x, y, z]].as_f64() as f32)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read<F: Scalar>(path: &Path) -> Result<Volume<F>> {
    let file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    if is_gz(path) {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        std::io::BufReader::new(file).read_to_end(&mut bytes)?;
    }
    if bytes.len() < VOX_OFFSET {
        return Err(Error::data(format!("'{}' shorter than a NIfTI-1 header", path.display())));
    }
    let mut hdr = Cursor::new(&bytes[..VOX_OFFSET]);
    let sizeof_hdr = hdr.read_i32::<LittleEndian>()?;
    if sizeof_hdr != HEADER_LEN as i32 {
        return Err(Error::data(format!(
            "'{}' is not little-endian NIfTI-1 (sizeof_hdr = {sizeof_hdr})",
            path.display()
        )));
    }
    hdr.set_position(40);
    let ndim = hdr.read_i16::<LittleEndian>()?;
    if ndim != 3 {
        return Err(Error::data(format!("'{}' has dim[0] = {ndim}, expected 3", path.display())));
    }
    let nx = hdr.read_i16::<LittleEndian>()? as usize;
    let ny = hdr.read_i16::<LittleEndian>()? as usize;
    let nz = hdr.read_i16::<LittleEndian>()? as usize;
    hdr.set_position(70);
    let datatype = hdr.read_i16::<LittleEndian>()?;
    if datatype != DT_FLOAT32 {
        return Err(Error::data(format!(
            "'{}' has datatype {datatype}; only float32 (16) is supported",
            path.display()
        )));
    }
    hdr.set_position(76 + 4);
    let spacing = [
        hdr.read_f32::<LittleEndian>()? as f64,
        hdr.read_f32::<LittleEndian>()? as f64,
        hdr.read_f32::<LittleEndian>()? as f64,
    ];
    hdr.set_position(108);
    let vox_offset = hdr.read_f32::<LittleEndian>()? as usize;
    let descrip: String = bytes[148..228]
        .iter()
        .take_while(|&&b| b != 0)
        .map(|&b| b as char)
        .collect();
    let (dose, id) = parse_descrip(&descrip, path);

    let need = vox_offset + nx * ny * nz * 4;
    if bytes.len() < need {
        return Err(Error::data(format!(
            "'{}' payload truncated: {} bytes, need {}",
            path.display(),
            bytes.len(),
            need
        )));
    }
    let mut r = Cursor::new(&bytes[vox_offset..need]);
    let mut voxels = Array3::from_elem((nx, ny, nz), F::zero());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                voxels[[x, y, z]] = F::of(r.read_f32::<LittleEndian>()? as f64);
            }
        }
    }
    Volume::new(voxels, spacing, dose, &id)
}

fn parse_descrip(descrip: &str, path: &Path) -> (DoseLevel, String) {
    let mut dose = DoseLevel::Full;
    let mut id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("volume")
        .trim_end_matches(".nii")
        .to_string();
    for part in descrip.split(';') {
        if let Some(v) = part.strip_prefix("drf=") {
            if let Ok(f) = v.parse::<u32>() {
                if let Ok(d) = DoseLevel::from_factor(f) {
                    dose = d;
                }
            }
        } else if let Some(v) = part.strip_prefix("id=") {
            if !v.is_empty() {
                id = v.to_string();
            }
        }
    }
    (dose, id)
}

fn is_gz(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.ends_with(".gz"))
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn sample() -> Volume<f32> {
        let mut rng = rng_from(3);
        let voxels = Array3::from_shape_fn((6, 5, 4), |_| rng.gen_range(0.0f32..8.0));
        Volume::new(voxels, [1.65, 1.65, 2.886], DoseLevel::Drf20, "nif01").unwrap()
    }

    #[test]
    fn round_trip_plain() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.nii");
        let v = sample();
        write(&p, &v).unwrap();
        let back: Volume<f32> = read(&p).unwrap();
        assert_eq!(back.voxels, v.voxels);
        assert_eq!(back.dose, DoseLevel::Drf20);
        assert_eq!(back.id, "nif01");
        for (a, b) in back.spacing.iter().zip(v.spacing.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn round_trip_gz() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.nii.gz");
        let v = sample();
        write(&p, &v).unwrap();
        let back: Volume<f32> = read(&p).unwrap();
        assert_eq!(back.voxels, v.voxels);
    }

    #[test]
    fn rejects_wrong_datatype() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.nii");
        write(&p, &sample()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[70] = 4; // int16
        std::fs::write(&p, bytes).unwrap();
        let err = read::<f32>(&p).unwrap_err();
        assert!(err.to_string().contains("datatype"), "{err}");
    }
}
