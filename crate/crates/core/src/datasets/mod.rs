//! Datasets on disk and synthetic workload generators.
//!
//! A dataset directory holds `corpus.vibe`, `test.vibe`, optionally
//! `train.vibe`, a `meta.json` sidecar and, once computed, ground truth in
//! `gt_test.vigt` / `gt_train.vigt`.

pub mod format;
pub mod generate;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::GroundTruth;
use crate::quantization::{binarize_with_thresholds, column_means};
use crate::vector::{ByteMatrix, Measure, Space, VectorSet};

pub use format::{read_ground_truth, read_vectors, write_ground_truth, write_vectors};
pub use generate::{generate_id_gaussian, generate_ood_mips, generate_ood_shifted, IdGaussian, OodMips, OodShifted};

pub const CORPUS_FILE: &str = "corpus.vibe";
pub const TEST_FILE: &str = "test.vibe";
pub const TRAIN_FILE: &str = "train.vibe";
pub const META_FILE: &str = "meta.json";

/// Default number of held-out test queries.
pub const DEFAULT_TEST_QUERIES: usize = 1000;
/// Default size of the training sample of queries for OOD datasets.
pub const DEFAULT_TRAIN_QUERIES: usize = 10_000;

/// Query split a ground-truth file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Test,
    Train,
}

impl Split {
    pub fn gt_file(self) -> &'static str {
        match self {
            Split::Test => "gt_test.vigt",
            Split::Train => "gt_train.vigt",
        }
    }
}

/// Sidecar metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub measure: Measure,
    pub normalized: bool,
    pub seed: u64,
    /// Generator name and parameters, free-form.
    pub generator: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub corpus: VectorSet,
    pub test: VectorSet,
    pub train: Option<VectorSet>,
    pub measure: Measure,
    pub normalized: bool,
    pub seed: u64,
    pub generator: serde_json::Value,
}

impl Dataset {
    /// Checks that every matrix shares dimension and representation and that
    /// the representation suits the measure.
    pub fn validate(&self) -> Result<()> {
        let d = self.corpus.dim();
        let rep = self.corpus.representation();
        for set in std::iter::once(&self.test).chain(&self.train) {
            if set.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: set.dim(),
                });
            }
            if set.representation() != rep {
                return Err(Error::invalid(format!(
                    "query representation {} differs from corpus {rep}",
                    set.representation()
                )));
            }
        }
        let binary = matches!(self.corpus, VectorSet::Bits(_));
        if binary != self.measure.is_binary() {
            return Err(Error::RepresentationMismatch {
                measure: self.measure.as_str(),
                representation: rep,
            });
        }
        Ok(())
    }

    /// Corpus bound to the dataset measure, ready for indexing.
    pub fn space(&self) -> Result<Space> {
        Space::new(Arc::new(self.corpus.clone().into_searchable()), self.measure)
    }

    /// Test queries in searchable form.
    pub fn test_queries(&self) -> VectorSet {
        self.test.clone().into_searchable()
    }

    pub fn train_queries(&self) -> Option<VectorSet> {
        self.train.clone().map(VectorSet::into_searchable)
    }

    pub fn meta(&self) -> Meta {
        Meta {
            name: self.name.clone(),
            measure: self.measure,
            normalized: self.normalized,
            seed: self.seed,
            generator: self.generator.clone(),
        }
    }

    /// Writes the dataset into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_vectors(&dir.join(CORPUS_FILE), &self.corpus, self.normalized)?;
        write_vectors(&dir.join(TEST_FILE), &self.test, self.normalized)?;
        let train = dir.join(TRAIN_FILE);
        match &self.train {
            Some(t) => write_vectors(&train, t, self.normalized)?,
            None if train.exists() => std::fs::remove_file(&train).map_err(|e| Error::io(&train, e))?,
            None => {}
        }
        let meta = dir.join(META_FILE);
        let json = serde_json::to_string_pretty(&self.meta()).expect("metadata serializes");
        std::fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: meta_path.clone(),
            source,
        })?;
        let load = |name: &str| -> Result<VectorSet> {
            let path = dir.join(name);
            let (set, normalized) = read_vectors(&path)?;
            if normalized != meta.normalized {
                return Err(Error::format(
                    &path,
                    format!("normalized flag {normalized} disagrees with {META_FILE}"),
                ));
            }
            Ok(set)
        };
        let train_path = dir.join(TRAIN_FILE);
        let ds = Self {
            corpus: load(CORPUS_FILE)?,
            test: load(TEST_FILE)?,
            train: if train_path.exists() {
                Some(load(TRAIN_FILE)?)
            } else {
                None
            },
            name: meta.name,
            measure: meta.measure,
            normalized: meta.normalized,
            seed: meta.seed,
            generator: meta.generator,
        };
        ds.validate().map_err(|e| Error::format(dir, e.to_string()))?;
        Ok(ds)
    }

    /// Binary version of a dense dataset under Hamming: every matrix is
    /// thresholded at the corpus column means.
    pub fn binarized(&self) -> Result<Self> {
        let corpus = self
            .corpus
            .as_dense()
            .ok_or_else(|| Error::Unsupported("binarizing non-dense data".into()))?;
        let means = column_means(corpus);
        let bits = |set: &VectorSet| -> VectorSet {
            VectorSet::Bits(binarize_with_thresholds(set.as_dense().expect("validated dense"), &means))
        };
        Ok(Self {
            name: format!("{}-binary", self.name),
            corpus: bits(&self.corpus),
            test: bits(&self.test),
            train: self.train.as_ref().map(bits),
            measure: Measure::Hamming,
            normalized: false,
            seed: self.seed,
            generator: serde_json::json!({ "binarized": self.generator, "threshold": "corpus column means" }),
        })
    }

    /// 8-bit version of a dense dataset: one affine map per dimension taken
    /// from the corpus range is applied to corpus and queries alike, with
    /// query values clamped to the code range.
    pub fn quantized_u8(&self) -> Result<Self> {
        let corpus = self
            .corpus
            .as_dense()
            .ok_or_else(|| Error::Unsupported("quantizing non-dense data".into()))?;
        let sq = crate::quantization::scalar_quantize(corpus)?;
        let codes = |set: &VectorSet| -> Result<VectorSet> {
            let m = set.as_dense().expect("validated dense");
            let mut data = Vec::with_capacity(m.rows() * m.dim());
            for row in m.iter() {
                data.extend(sq.encode(row));
            }
            Ok(VectorSet::Bytes(ByteMatrix::from_vec(m.dim(), data)?))
        };
        Ok(Self {
            name: format!("{}-u8", self.name),
            corpus: VectorSet::Bytes(sq.codes().clone()),
            test: codes(&self.test)?,
            train: self.train.as_ref().map(codes).transpose()?,
            measure: self.measure,
            normalized: false,
            seed: self.seed,
            generator: serde_json::json!({ "quantized_u8": self.generator }),
        })
    }
}

pub fn gt_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(split.gt_file())
}

pub fn load_ground_truth(dir: &Path, split: Split) -> Result<GroundTruth> {
    read_ground_truth(&gt_path(dir, split))
}

/// Holds out `q` rows as queries, sampled without replacement under `seed`.
/// Both parts keep the original row order.
pub fn split_queries(set: &VectorSet, q: usize, seed: u64) -> Result<(VectorSet, VectorSet)> {
    let n = set.rows();
    if q >= n {
        return Err(Error::invalid(format!("cannot hold out {q} of {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = rand::seq::index::sample(&mut rng, n, q).into_vec();
    held.sort_unstable();
    let mut is_query = vec![false; n];
    for &i in &held {
        is_query[i] = true;
    }
    let kept: Vec<usize> = (0..n).filter(|&i| !is_query[i]).collect();
    Ok((set.select(&kept), set.select(&held)))
}
