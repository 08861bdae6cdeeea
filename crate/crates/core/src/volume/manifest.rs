//! Dataset manifest: one JSON file naming every subject's full-dose volume,
//! its low-dose companions keyed by DRF, and the train/val/test assignment.
//! Paths are stored relative to the manifest's directory.

use crate::error::{Error, Result};
use crate::metrics::RoiSphere;
use crate::rng::rng_from;
use crate::volume::DoseLevel;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitBucket {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for SplitBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitBucket::Train => "train",
            SplitBucket::Val => "val",
            SplitBucket::Test => "test",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject: String,
    pub full: PathBuf,
    /// Low-dose volumes keyed by the decimal DRF ("4", "10", ...).
    pub low: BTreeMap<String, PathBuf>,
    /// Reference ROI recorded by the generator (liver centre, 20 mm sphere).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<RoiSphere>,
}

impl SubjectEntry {
    pub fn low_path(&self, dose: DoseLevel) -> Option<&Path> {
        self.low.get(&dose.factor().to_string()).map(|p| p.as_path())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub entries: Vec<SubjectEntry>,
    pub split: BTreeMap<String, SplitBucket>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("manifest '{}': {e}", path.display())))?;
        let m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("manifest '{}' malformed: {e}", path.display())))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::data(format!(
                "manifest '{}' has schema_version {}, this build reads {}",
                path.display(),
                m.schema_version,
                MANIFEST_SCHEMA_VERSION
            )));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("manifest encode: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::data("manifest has no subjects".to_string()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.subject) {
                return Err(Error::data(format!("duplicate subject '{}'", e.subject)));
            }
            for key in e.low.keys() {
                let f: u32 = key
                    .parse()
                    .map_err(|_| Error::data(format!("subject '{}': bad DRF key '{key}'", e.subject)))?;
                DoseLevel::from_factor(f)?;
            }
        }
        for id in self.split.keys() {
            if !self.entries.iter().any(|e| &e.subject == id) {
                return Err(Error::data(format!("split names unknown subject '{id}'")));
            }
        }
        Ok(())
    }

    pub fn subjects_in(&self, bucket: SplitBucket) -> Vec<&SubjectEntry> {
        self.entries
            .iter()
            .filter(|e| self.split.get(&e.subject) == Some(&bucket))
            .collect()
    }

    pub fn entry(&self, subject: &str) -> Option<&SubjectEntry> {
        self.entries.iter().find(|e| e.subject == subject)
    }
}

/// Assign subjects to train/val/test buckets. Bucket sizes follow the
/// largest-remainder rule so they are within one subject of the exact
/// fractions; the shuffle is a seeded ChaCha stream.
pub fn split_dataset(
    ids: &[String],
    fractions: [f64; 3],
    seed: u64,
) -> Result<BTreeMap<String, SplitBucket>> {
    if ids.is_empty() {
        return Err(Error::config("split_dataset: no subject ids".to_string()));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(Error::config(format!("split_dataset: duplicate id '{id}'")));
            }
        }
    }
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::config(format!("split fractions must be non-negative, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions must sum to 1, got {total}")));
    }

    let sizes = largest_remainder(ids.len(), &fractions);
    for (i, (&sz, &f)) in sizes.iter().zip(fractions.iter()).enumerate() {
        if f > 0.0 && sz == 0 {
            let name = ["train", "val", "test"][i];
            return Err(Error::config(format!(
                "split_dataset: {} subjects cannot give the {name} bucket (fraction {f}) at least one member",
                ids.len()
            )));
        }
    }

    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut rng_from(seed));

    let mut out = BTreeMap::new();
    let buckets = [SplitBucket::Train, SplitBucket::Val, SplitBucket::Test];
    let mut cursor = 0usize;
    for (b, &sz) in buckets.iter().zip(sizes.iter()) {
        for id in &order[cursor..cursor + sz] {
            out.insert((*id).clone(), *b);
        }
        cursor += sz;
    }
    Ok(out)
}

/// Integer apportionment: floor the quotas, then hand the leftover seats to
/// the largest fractional remainders (ties resolved in bucket order).
fn largest_remainder(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    let mut rem: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (i, q) in quotas.iter().enumerate() {
        sizes[i] = q.floor() as usize;
        assigned += sizes[i];
        rem.push((i, q - q.floor()));
    }
    rem.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in rem.iter().take(n - assigned) {
        sizes[*i] += 1;
    }
    sizes
}
