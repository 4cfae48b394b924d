//! Vector storage and dissimilarity measures.
//!
//! Dense kernels accumulate in `f32` over eight fixed lanes: lane `l` sums
//! products at positions `l, l + 8, l + 16, ...`, the lanes are then added in
//! order starting from `0.0`, and the tail is added sequentially. The order is
//! fixed, so every score is bit-stable across runs and threads. For `d < 16`
//! the result is bit-identical to a plain sequential loop.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANES: usize = 8;

/// Norms below this are treated as zero under the cosine measure.
pub const MIN_NORM: f32 = 1e-12;

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    let mut acc = [0f32; LANES];
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = 0f32;
    for v in acc {
        s += v;
    }
    for (x, y) in ta.iter().zip(tb) {
        s += x * y;
    }
    s
}

#[inline]
pub fn l2_squared(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    let mut acc = [0f32; LANES];
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let t = x[l] - y[l];
            acc[l] += t * t;
        }
    }
    let mut s = 0f32;
    for v in acc {
        s += v;
    }
    for (x, y) in ta.iter().zip(tb) {
        let t = x - y;
        s += t * t;
    }
    s
}

#[inline]
pub fn norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[inline]
fn cosine_from_parts(dot: f32, na: f32, nb: f32) -> f32 {
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Dissimilarity measure. Every measure is "smaller is closer".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Euclidean,
    Cosine,
    NegInnerProduct,
    Hamming,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Euclidean => "euclidean",
            Measure::Cosine => "cosine",
            Measure::NegInnerProduct => "neg-inner-product",
            Measure::Hamming => "hamming",
        }
    }

    pub fn is_binary(self) -> bool {
        self == Measure::Hamming
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Measure::Euclidean => 0,
            Measure::Cosine => 1,
            Measure::NegInnerProduct => 2,
            Measure::Hamming => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Measure::Euclidean,
            1 => Measure::Cosine,
            2 => Measure::NegInnerProduct,
            3 => Measure::Hamming,
            _ => return None,
        })
    }

    /// Score of two dense vectors whose norms are already known. The norms are
    /// only read under [`Measure::Cosine`].
    #[inline]
    pub fn dense_score(self, a: &[f32], b: &[f32], na: f32, nb: f32) -> f32 {
        match self {
            Measure::Euclidean => l2_squared(a, b).sqrt(),
            Measure::Cosine => cosine_from_parts(dot(a, b), na, nb),
            Measure::NegInnerProduct => -dot(a, b),
            Measure::Hamming => unreachable!("hamming on dense data"),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(Measure::Euclidean),
            "cosine" | "angular" => Ok(Measure::Cosine),
            "neg-inner-product" | "ip" | "mips" => Ok(Measure::NegInnerProduct),
            "hamming" => Ok(Measure::Hamming),
            other => Err(Error::invalid(format!("unknown measure `{other}`"))),
        }
    }
}

/// One search result: a corpus row and its dissimilarity to the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub dissimilarity: f32,
}

impl Neighbor {
    pub fn new(id: u32, dissimilarity: f32) -> Self {
        Self { id, dissimilarity }
    }

    /// Total order used for every ranking in the crate: (dissimilarity, id) ascending.
    #[inline]
    pub fn cmp_rank(&self, other: &Self) -> Ordering {
        self.dissimilarity
            .partial_cmp(&other.dissimilarity)
            .unwrap_or_else(|| self.dissimilarity.total_cmp(&other.dissimilarity))
            .then(self.id.cmp(&other.id))
    }
}

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    /// Wraps row-major data, rejecting ragged lengths and non-finite values.
    pub fn from_vec(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::invalid("no rows"))?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(dim, data)
    }

    pub fn push(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: self.rows(),
                col,
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn select(&self, ids: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::with_capacity(self.dim, ids.len());
        for &i in ids {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    /// Unit-norm copy. Fails on any zero row.
    pub fn normalized(&self) -> Result<DenseMatrix> {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.iter() {
            data.extend(normalize(row)?);
        }
        Ok(DenseMatrix {
            dim: self.dim,
            data,
        })
    }

    pub fn scaled(&self, factor: f32) -> DenseMatrix {
        DenseMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Packed bit rows. Bit `j` of a row lives in word `j / 64` at position
/// `j % 64` (little-endian within the word); pad bits are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    dim: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn words_for(dim: usize) -> usize {
        dim.div_ceil(64)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        let words_per_row = Self::words_for(dim);
        Self {
            dim,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    /// Wraps packed words, rejecting rows with nonzero pad bits.
    pub fn from_words(dim: usize, words: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let words_per_row = Self::words_for(dim);
        if words.len() % words_per_row != 0 {
            return Err(Error::invalid(format!(
                "{} words do not form rows of {dim} bits",
                words.len()
            )));
        }
        let m = Self {
            dim,
            words_per_row,
            words,
        };
        let mask = m.pad_mask();
        if mask != 0 {
            for (i, row) in m.words.chunks_exact(words_per_row).enumerate() {
                if row[words_per_row - 1] & mask != 0 {
                    return Err(Error::invalid(format!("row {i} has nonzero pad bits")));
                }
            }
        }
        Ok(m)
    }

    pub fn from_bools<R: AsRef<[bool]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::invalid("no rows"))?;
        let mut m = Self::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            for (j, &b) in r.iter().enumerate() {
                if b {
                    m.set(i, j);
                }
            }
        }
        Ok(m)
    }

    fn pad_mask(&self) -> u64 {
        let used = self.dim % 64;
        if used == 0 {
            0
        } else {
            !0u64 << used
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, bit: usize) {
        debug_assert!(bit < self.dim);
        self.words[row * self.words_per_row + bit / 64] |= 1u64 << (bit % 64);
    }

    #[inline]
    pub fn get(&self, row: usize, bit: usize) -> bool {
        self.words[row * self.words_per_row + bit / 64] >> (bit % 64) & 1 == 1
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub fn rows(&self) -> usize {
        self.words.len() / self.words_per_row.max(1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn as_words(&self) -> &[u64] {
        &self.words
    }

    pub fn select(&self, ids: &[usize]) -> BitMatrix {
        let mut words = Vec::with_capacity(ids.len() * self.words_per_row);
        for &i in ids {
            words.extend_from_slice(self.row(i));
        }
        BitMatrix {
            dim: self.dim,
            words_per_row: self.words_per_row,
            words,
        }
    }
}

/// Row-major `u8` matrix, e.g. scalar-quantized codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteMatrix {
    dim: usize,
    data: Vec<u8>,
}

impl ByteMatrix {
    pub fn from_vec(dim: usize, data: Vec<u8>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} bytes do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn select(&self, ids: &[usize]) -> ByteMatrix {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        ByteMatrix {
            dim: self.dim,
            data,
        }
    }

    /// Codes reinterpreted as `f32` coordinates.
    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix {
            dim: self.dim,
            data: self.data.iter().map(|&c| c as f32).collect(),
        }
    }
}

/// Any matrix the harness stores.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorSet {
    Dense(DenseMatrix),
    Bytes(ByteMatrix),
    Bits(BitMatrix),
}

impl VectorSet {
    pub fn rows(&self) -> usize {
        match self {
            VectorSet::Dense(m) => m.rows(),
            VectorSet::Bytes(m) => m.rows(),
            VectorSet::Bits(m) => m.rows(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorSet::Dense(m) => m.dim(),
            VectorSet::Bytes(m) => m.dim(),
            VectorSet::Bits(m) => m.dim(),
        }
    }

    pub fn representation(&self) -> &'static str {
        match self {
            VectorSet::Dense(_) => "dense f32",
            VectorSet::Bytes(_) => "u8",
            VectorSet::Bits(_) => "binary",
        }
    }

    pub fn as_dense(&self) -> Option<&DenseMatrix> {
        match self {
            VectorSet::Dense(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_bits(&self) -> Option<&BitMatrix> {
        match self {
            VectorSet::Bits(m) => Some(m),
            _ => None,
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> VectorRef<'_> {
        match self {
            VectorSet::Dense(m) => VectorRef::Dense(m.row(i)),
            VectorSet::Bits(m) => VectorRef::Bits {
                words: m.row(i),
                dim: m.dim(),
            },
            VectorSet::Bytes(_) => panic!("u8 rows must be converted with into_searchable"),
        }
    }

    pub fn select(&self, ids: &[usize]) -> VectorSet {
        match self {
            VectorSet::Dense(m) => VectorSet::Dense(m.select(ids)),
            VectorSet::Bytes(m) => VectorSet::Bytes(m.select(ids)),
            VectorSet::Bits(m) => VectorSet::Bits(m.select(ids)),
        }
    }

    /// Dense or bit form suitable for search; `u8` codes become `f32` coordinates.
    pub fn into_searchable(self) -> VectorSet {
        match self {
            VectorSet::Bytes(m) => VectorSet::Dense(m.to_dense()),
            other => other,
        }
    }
}

/// Borrowed view of a single vector.
#[derive(Debug, Clone, Copy)]
pub enum VectorRef<'a> {
    Dense(&'a [f32]),
    Bits { words: &'a [u64], dim: usize },
}

impl<'a> VectorRef<'a> {
    pub fn dim(&self) -> usize {
        match self {
            VectorRef::Dense(v) => v.len(),
            VectorRef::Bits { dim, .. } => *dim,
        }
    }

    fn representation(&self) -> &'static str {
        match self {
            VectorRef::Dense(_) => "dense f32",
            VectorRef::Bits { .. } => "binary",
        }
    }
}

fn check_measure(measure: Measure, v: &VectorRef<'_>) -> Result<()> {
    let ok = matches!(
        (measure.is_binary(), v),
        (true, VectorRef::Bits { .. }) | (false, VectorRef::Dense(_))
    );
    if ok {
        Ok(())
    } else {
        Err(Error::RepresentationMismatch {
            measure: measure.as_str(),
            representation: v.representation(),
        })
    }
}

/// Dissimilarity of two vectors under `measure`.
pub fn dissimilarity(a: VectorRef<'_>, b: VectorRef<'_>, measure: Measure) -> Result<f32> {
    check_measure(measure, &a)?;
    check_measure(measure, &b)?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    match (a, b) {
        (VectorRef::Bits { words: x, .. }, VectorRef::Bits { words: y, .. }) => {
            Ok(hamming_words(x, y) as f32)
        }
        (VectorRef::Dense(x), VectorRef::Dense(y)) => {
            let (nx, ny) = if measure == Measure::Cosine {
                let (nx, ny) = (norm(x), norm(y));
                if nx < MIN_NORM || ny < MIN_NORM {
                    return Err(Error::ZeroVector);
                }
                (nx, ny)
            } else {
                (0.0, 0.0)
            };
            Ok(measure.dense_score(x, y, nx, ny))
        }
        _ => unreachable!("representations checked above"),
    }
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>> {
    let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if n < MIN_NORM as f64 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

/// A corpus bound to one measure, with row norms cached when the measure
/// needs them. Oracle and indexes score through the same path so their
/// dissimilarities are bit-identical.
#[derive(Debug, Clone)]
pub struct Space {
    data: Arc<VectorSet>,
    measure: Measure,
    norms: Vec<f32>,
}

impl Space {
    pub fn new(data: Arc<VectorSet>, measure: Measure) -> Result<Self> {
        let compatible = match &*data {
            VectorSet::Dense(_) => !measure.is_binary(),
            VectorSet::Bits(_) => measure.is_binary(),
            VectorSet::Bytes(_) => false,
        };
        if !compatible {
            return Err(Error::RepresentationMismatch {
                measure: measure.as_str(),
                representation: data.representation(),
            });
        }
        if data.rows() == 0 {
            return Err(Error::invalid("empty corpus"));
        }
        let norms = match (&*data, measure) {
            (VectorSet::Dense(m), Measure::Cosine) => {
                let norms: Vec<f32> = m.iter().map(norm).collect();
                if norms.iter().any(|&n| n < MIN_NORM) {
                    return Err(Error::ZeroVector);
                }
                norms
            }
            _ => Vec::new(),
        };
        Ok(Self {
            data,
            measure,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn data(&self) -> &Arc<VectorSet> {
        &self.data
    }

    pub fn dense(&self) -> Option<&DenseMatrix> {
        self.data.as_dense()
    }

    #[inline]
    pub fn norm(&self, id: usize) -> f32 {
        self.norms.get(id).copied().unwrap_or(0.0)
    }

    /// Validates `query` against the corpus and prepares it for repeated scoring.
    pub fn scorer<'q>(&'q self, query: VectorRef<'q>) -> Result<QueryScorer<'q>> {
        check_measure(self.measure, &query)?;
        if query.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: query.dim(),
            });
        }
        let query_norm = match (query, self.measure) {
            (VectorRef::Dense(q), Measure::Cosine) => {
                let n = norm(q);
                if n < MIN_NORM {
                    return Err(Error::ZeroVector);
                }
                n
            }
            _ => 0.0,
        };
        Ok(QueryScorer {
            space: self,
            query,
            query_norm,
        })
    }
}

pub struct QueryScorer<'a> {
    space: &'a Space,
    query: VectorRef<'a>,
    query_norm: f32,
}

impl<'a> QueryScorer<'a> {
    /// Exact dissimilarity between the query and corpus row `id`.
    #[inline]
    pub fn score(&self, id: usize) -> f32 {
        match (&*self.space.data, self.query) {
            (VectorSet::Dense(m), VectorRef::Dense(q)) => {
                self.space
                    .measure
                    .dense_score(q, m.row(id), self.query_norm, self.space.norm(id))
            }
            (VectorSet::Bits(m), VectorRef::Bits { words, .. }) => {
                hamming_words(words, m.row(id)) as f32
            }
            _ => unreachable!("representation validated in Space::scorer"),
        }
    }

    #[inline]
    pub fn neighbor(&self, id: usize) -> Neighbor {
        Neighbor::new(id as u32, self.score(id))
    }

    pub fn query(&self) -> VectorRef<'a> {
        self.query
    }

    pub fn dense_query(&self) -> Option<&'a [f32]> {
        match self.query {
            VectorRef::Dense(q) => Some(q),
            _ => None,
        }
    }
}
