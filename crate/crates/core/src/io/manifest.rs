use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
}

/// Scene list with split assignment and the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestEntry>,
    pub seed: u64,
    /// `[train, val, test]`.
    pub split_sizes: [usize; 3],
    #[serde(default)]
    pub settings: serde_json::Value,
}

impl DatasetManifest {
    /// Unsplit manifest; every record starts in `train`.
    pub fn new(ids: impl IntoIterator<Item = String>, settings: serde_json::Value) -> Self {
        let records: Vec<_> = ids
            .into_iter()
            .map(|id| ManifestEntry {
                id,
                split: Split::Train,
            })
            .collect();
        let n = records.len();
        Self {
            records,
            seed: 0,
            split_sizes: [n, 0, 0],
            settings,
        }
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.records
            .iter()
            .filter(move |r| r.split == split)
            .map(|r| r.id.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Exact `[train, val, test]` sizes; must sum to the record count.
    Counts([usize; 3]),
    /// Relative weights, rounded with the largest-remainder rule.
    Ratios([f64; 3]),
}

impl SplitSpec {
    fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        match *self {
            SplitSpec::Counts(c) => {
                let total: usize = c.iter().sum();
                if total != n {
                    return Err(Error::InvalidArgument(format!(
                        "split counts {c:?} sum to {total}, but there are {n} records"
                    )));
                }
                Ok(c)
            }
            SplitSpec::Ratios(r) => {
                let total: f64 = r.iter().sum();
                if r.iter().any(|v| !v.is_finite() || *v < 0.0) || total <= 0.0 {
                    return Err(Error::InvalidArgument(format!("bad split ratios {r:?}")));
                }
                let exact: Vec<f64> = r.iter().map(|v| v / total * n as f64).collect();
                let mut sizes = [0usize; 3];
                for (s, e) in sizes.iter_mut().zip(&exact) {
                    *s = e.floor() as usize;
                }
                let mut order = [0usize, 1, 2];
                order.sort_by(|&a, &b| {
                    let fa = exact[a] - exact[a].floor();
                    let fb = exact[b] - exact[b].floor();
                    fb.total_cmp(&fa).then(a.cmp(&b))
                });
                let mut left = n - sizes.iter().sum::<usize>();
                for i in order {
                    if left == 0 {
                        break;
                    }
                    if r[i] > 0.0 {
                        sizes[i] += 1;
                        left -= 1;
                    }
                }
                Ok(sizes)
            }
        }
    }
}

/// Deterministically shuffles the records with `seed` and partitions them.
/// Record order in the returned manifest is preserved; only splits change.
pub fn split_dataset(
    manifest: &DatasetManifest,
    spec: SplitSpec,
    seed: u64,
) -> Result<DatasetManifest> {
    let n = manifest.records.len();
    let sizes = spec.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.records[idx].split = if rank < sizes[0] {
            Split::Train
        } else if rank < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    out.seed = seed;
    out.split_sizes = sizes;
    Ok(out)
}
