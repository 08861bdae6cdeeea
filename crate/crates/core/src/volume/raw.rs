//! Raw volume format: `<name>.vol` holds the payload as little-endian float32
//! with x fastest and z slowest; `<name>.vol.json` is the sidecar carrying
//! shape, spacing, dose level and subject id.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{DoseLevel, Volume};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

pub const SIDECAR_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    schema_version: u32,
    shape: [usize; 3],
    spacing: [f64; 3],
    drf: u32,
    id: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write<F: Scalar>(path: &Path, v: &Volume<F>) -> Result<()> {
    let side = Sidecar {
        schema_version: SIDECAR_SCHEMA_VERSION,
        shape: v.shape(),
        spacing: v.spacing,
        drf: v.dose.factor(),
        id: v.id.clone(),
    };
    let json = serde_json::to_string_pretty(&side)
        .map_err(|e| Error::data(format!("sidecar encode: {e}")))?;
    std::fs::write(sidecar_path(path), json)?;

    let mut w = BufWriter::new(File::create(path)?);
    let [nx, ny, nz] = v.shape();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                w.write_f32::<LittleEndian>(v.voxels[[x, y, z]].as_f64() as f32)?;
            }
        }
    }
    Ok(())
}

pub fn read<F: Scalar>(path: &Path) -> Result<Volume<F>> {
    let sc = sidecar_path(path);
    let text = std::fs::read_to_string(&sc)
        .map_err(|e| Error::data(format!("missing sidecar '{}': {e}", sc.display())))?;
    let side: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("sidecar '{}' malformed: {e}", sc.display())))?;
    if side.schema_version != SIDECAR_SCHEMA_VERSION {
        return Err(Error::data(format!(
            "sidecar '{}' has schema_version {}, this build reads {}",
            sc.display(),
            side.schema_version,
            SIDECAR_SCHEMA_VERSION
        )));
    }
    let [nx, ny, nz] = side.shape;
    let expect = nx
        .checked_mul(ny)
        .and_then(|p| p.checked_mul(nz))
        .ok_or_else(|| Error::data("sidecar shape overflows".to_string()))?;
    let meta = std::fs::metadata(path)?;
    if meta.len() != (expect as u64) * 4 {
        return Err(Error::data(format!(
            "payload '{}' holds {} bytes, sidecar shape {:?} needs {}",
            path.display(),
            meta.len(),
            side.shape,
            expect * 4
        )));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut voxels = Array3::from_elem((nx, ny, nz), F::zero());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                voxels[[x, y, z]] = F::of(r.read_f32::<LittleEndian>()? as f64);
            }
        }
    }
    Volume::new(voxels, side.spacing, DoseLevel::from_factor(side.drf)?, &side.id)
}
