//! Binary, 8-bit scalar and product quantization.

use crate::error::{Error, Result};
use crate::indexes::kmeans::kmeans;
use crate::vector::{dot, l2_squared, BitMatrix, ByteMatrix, DenseMatrix, Measure};

/// Per-dimension means in `f64`.
pub fn column_means(matrix: &DenseMatrix) -> Vec<f64> {
    let mut means = vec![0f64; matrix.dim()];
    for row in matrix.iter() {
        for (m, &v) in means.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    let n = matrix.rows().max(1) as f64;
    means.iter_mut().for_each(|m| *m /= n);
    means
}

/// Sign quantization: bit `j` is set iff the value (minus the column mean when
/// `center`) is strictly positive. Values exactly at the threshold map to 0.
pub fn binarize(matrix: &DenseMatrix, center: bool) -> Result<BitMatrix> {
    if matrix.rows() == 0 {
        return Err(Error::invalid("cannot binarize an empty matrix"));
    }
    let thresholds = if center {
        column_means(matrix)
    } else {
        vec![0.0; matrix.dim()]
    };
    Ok(binarize_with_thresholds(matrix, &thresholds))
}

/// Sign quantization against explicit per-dimension thresholds, e.g. corpus
/// means applied to a query set.
pub fn binarize_with_thresholds(matrix: &DenseMatrix, thresholds: &[f64]) -> BitMatrix {
    assert_eq!(thresholds.len(), matrix.dim());
    let mut out = BitMatrix::zeros(matrix.rows(), matrix.dim());
    for (i, row) in matrix.iter().enumerate() {
        for (j, (&v, &t)) in row.iter().zip(thresholds).enumerate() {
            if v as f64 - t > 0.0 {
                out.set(i, j);
            }
        }
    }
    out
}

/// Codes plus the per-dimension affine map back to `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarQuantizedMatrix {
    codes: ByteMatrix,
    scale: Vec<f32>,
    offset: Vec<f32>,
}

/// Maps each dimension's `[min, max]` range onto `[0, 255]`. Constant
/// dimensions get scale 1 and code 0.
pub fn scalar_quantize(matrix: &DenseMatrix) -> Result<ScalarQuantizedMatrix> {
    if matrix.rows() < 2 {
        return Err(Error::invalid("scalar quantization needs at least two rows"));
    }
    let dim = matrix.dim();
    let mut lo = vec![f32::INFINITY; dim];
    let mut hi = vec![f32::NEG_INFINITY; dim];
    for row in matrix.iter() {
        for j in 0..dim {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let mut scale = vec![1f32; dim];
    for j in 0..dim {
        if hi[j] > lo[j] {
            scale[j] = ((hi[j] as f64 - lo[j] as f64) / 255.0) as f32;
        }
    }
    let mut data = Vec::with_capacity(matrix.rows() * dim);
    for row in matrix.iter() {
        data.extend(encode_affine(row, &scale, &lo));
    }
    Ok(ScalarQuantizedMatrix {
        codes: ByteMatrix::from_vec(dim, data)?,
        scale,
        offset: lo,
    })
}

fn encode_affine<'a>(
    row: &'a [f32],
    scale: &'a [f32],
    offset: &'a [f32],
) -> impl Iterator<Item = u8> + 'a {
    row.iter().zip(scale.iter().zip(offset)).map(|(&v, (&s, &o))| {
        let c = ((v as f64 - o as f64) / s as f64).round();
        c.clamp(0.0, 255.0) as u8
    })
}

impl ScalarQuantizedMatrix {
    /// Encodes an arbitrary row with this matrix's map, clamping out-of-range values.
    pub fn encode(&self, row: &[f32]) -> Vec<u8> {
        encode_affine(row, &self.scale, &self.offset).collect()
    }

    pub fn dequantize(&self, i: usize) -> Vec<f32> {
        self.codes
            .row(i)
            .iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(&c, (&s, &o))| o + s * c as f32)
            .collect()
    }

    pub fn codes(&self) -> &ByteMatrix {
        &self.codes
    }

    pub fn scale(&self) -> &[f32] {
        &self.scale
    }

    pub fn offset(&self) -> &[f32] {
        &self.offset
    }
}

/// Product quantizer: `subspaces` independent codebooks of `2^bits` centroids,
/// each over a contiguous slice of `dim / subspaces` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    dim: usize,
    subspaces: usize,
    bits: u32,
    /// Layout: subspace-major, then centroid, then coordinate.
    centroids: Vec<f32>,
}

pub fn pq_train(matrix: &DenseMatrix, subspaces: usize, bits: u32, seed: u64) -> Result<PqCodebook> {
    let dim = matrix.dim();
    if subspaces == 0 || dim % subspaces != 0 {
        return Err(Error::invalid(format!(
            "{subspaces} subspaces do not divide dimension {dim}"
        )));
    }
    if !(1..=8).contains(&bits) {
        return Err(Error::invalid(format!("bits per code must be 1..=8, got {bits}")));
    }
    let ksub = 1usize << bits;
    if matrix.rows() < ksub {
        return Err(Error::invalid(format!(
            "{} training points for {ksub} centroids per subspace",
            matrix.rows()
        )));
    }
    let sub_dim = dim / subspaces;
    let mut centroids = Vec::with_capacity(subspaces * ksub * sub_dim);
    for j in 0..subspaces {
        let mut sub = DenseMatrix::with_capacity(sub_dim, matrix.rows());
        for row in matrix.iter() {
            sub.push(&row[j * sub_dim..(j + 1) * sub_dim])?;
        }
        let km = kmeans(&sub, ksub, seed.wrapping_add(j as u64))?;
        centroids.extend_from_slice(km.centroids.as_slice());
    }
    Ok(PqCodebook {
        dim,
        subspaces,
        bits,
        centroids,
    })
}

impl PqCodebook {
    /// Builds a codebook from explicit centroids (subspace-major layout).
    pub fn from_parts(dim: usize, subspaces: usize, bits: u32, centroids: Vec<f32>) -> Result<Self> {
        if subspaces == 0 || dim % subspaces != 0 || !(1..=8).contains(&bits) {
            return Err(Error::invalid("malformed product quantizer shape"));
        }
        if centroids.len() != dim * (1 << bits) {
            return Err(Error::invalid(format!(
                "expected {} centroid values, got {}",
                dim * (1 << bits),
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite centroid"));
        }
        Ok(Self {
            dim,
            subspaces,
            bits,
            centroids,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subspaces(&self) -> usize {
        self.subspaces
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.subspaces
    }

    pub fn codes_per_subspace(&self) -> usize {
        1 << self.bits
    }

    pub fn raw_centroids(&self) -> &[f32] {
        &self.centroids
    }

    #[inline]
    pub fn centroid(&self, subspace: usize, code: usize) -> &[f32] {
        let sd = self.sub_dim();
        let start = (subspace * self.codes_per_subspace() + code) * sd;
        &self.centroids[start..start + sd]
    }

    fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// Nearest centroid per subspace; ties go to the lowest code.
    pub fn encode(&self, v: &[f32]) -> Result<Vec<u8>> {
        self.check_dim(v)?;
        let mut out = vec![0u8; self.subspaces];
        self.encode_into(v, &mut out);
        Ok(out)
    }

    pub(crate) fn encode_into(&self, v: &[f32], out: &mut [u8]) {
        let sd = self.sub_dim();
        for (j, code) in out.iter_mut().enumerate() {
            let part = &v[j * sd..(j + 1) * sd];
            let mut best = (0usize, f32::INFINITY);
            for c in 0..self.codes_per_subspace() {
                let d = l2_squared(part, self.centroid(j, c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            *code = best.0 as u8;
        }
    }

    pub fn encode_matrix(&self, matrix: &DenseMatrix) -> Result<PqCodes> {
        if matrix.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: matrix.dim(),
            });
        }
        let mut codes = vec![0u8; matrix.rows() * self.subspaces];
        for (row, out) in matrix.iter().zip(codes.chunks_exact_mut(self.subspaces)) {
            self.encode_into(row, out);
        }
        Ok(PqCodes {
            subspaces: self.subspaces,
            codes,
        })
    }

    /// Concatenation of the centroids selected by `codes`.
    pub fn reconstruct(&self, codes: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim);
        for (j, &c) in codes.iter().enumerate() {
            out.extend_from_slice(self.centroid(j, c as usize));
        }
        out
    }

    /// Lookup table of per-subspace contributions for `query`. Squared
    /// Euclidean partials under [`Measure::Euclidean`], negative inner
    /// products under [`Measure::NegInnerProduct`]; cosine data must be
    /// normalized and routed through one of those two.
    pub fn adc_table(&self, query: &[f32], measure: Measure) -> Result<AdcTable> {
        self.check_dim(query)?;
        if !matches!(measure, Measure::Euclidean | Measure::NegInnerProduct) {
            return Err(Error::Unsupported(format!("ADC under {measure}")));
        }
        let mut table = Vec::new();
        self.fill_table(query, measure, &mut table);
        Ok(AdcTable {
            measure,
            ksub: self.codes_per_subspace(),
            table,
        })
    }

    pub(crate) fn fill_table(&self, query: &[f32], measure: Measure, table: &mut Vec<f32>) {
        let sd = self.sub_dim();
        table.clear();
        for j in 0..self.subspaces {
            let part = &query[j * sd..(j + 1) * sd];
            for c in 0..self.codes_per_subspace() {
                let cen = self.centroid(j, c);
                table.push(match measure {
                    Measure::Euclidean => l2_squared(part, cen),
                    _ => -dot(part, cen),
                });
            }
        }
    }

    /// Mean squared reconstruction error over the rows of `matrix`.
    pub fn reconstruction_mse(&self, matrix: &DenseMatrix) -> Result<f64> {
        let codes = self.encode_matrix(matrix)?;
        let mut total = 0f64;
        for (i, row) in matrix.iter().enumerate() {
            total += l2_squared(row, &self.reconstruct(codes.row(i))) as f64;
        }
        Ok(total / (matrix.rows().max(1) * self.dim) as f64)
    }
}

/// Code rows, one byte per subspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PqCodes {
    subspaces: usize,
    codes: Vec<u8>,
}

impl PqCodes {
    pub fn row(&self, i: usize) -> &[u8] {
        &self.codes[i * self.subspaces..(i + 1) * self.subspaces]
    }

    pub fn rows(&self) -> usize {
        self.codes.len() / self.subspaces
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.codes
    }
}

/// Query-side lookup table for asymmetric distance computation.
#[derive(Debug, Clone)]
pub struct AdcTable {
    measure: Measure,
    ksub: usize,
    table: Vec<f32>,
}

impl AdcTable {
    /// Sum of table entries selected by `codes`, added left to right.
    #[inline]
    pub fn lookup_sum(&self, codes: &[u8]) -> f32 {
        lookup(&self.table, self.ksub, codes)
    }

    /// Approximate dissimilarity of the encoded vector: the Euclidean
    /// distance (square root of the summed partials) or the negative inner
    /// product.
    pub fn score(&self, codes: &[u8]) -> f32 {
        let s = self.lookup_sum(codes);
        match self.measure {
            Measure::Euclidean => s.max(0.0).sqrt(),
            _ => s,
        }
    }

    pub fn entry(&self, subspace: usize, code: usize) -> f32 {
        self.table[subspace * self.ksub + code]
    }
}

#[inline]
pub(crate) fn lookup(table: &[f32], ksub: usize, codes: &[u8]) -> f32 {
    let mut s = 0f32;
    for (j, &c) in codes.iter().enumerate() {
        s += table[j * ksub + c as usize];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::{dissimilarity, VectorRef};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, dim: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        DenseMatrix::from_vec(dim, data).unwrap()
    }

    #[test]
    fn binarize_examples() {
        let m = DenseMatrix::from_rows(&[[0.5f32, -0.2, 0.0]]).unwrap();
        let b = binarize(&m, false).unwrap();
        assert_eq!(
            (b.get(0, 0), b.get(0, 1), b.get(0, 2)),
            (true, false, false)
        );

        let pos = DenseMatrix::from_rows(&[[0.1f32, 2.0, 3.0], [1.0, 1.0, 9.0]]).unwrap();
        let b = binarize(&pos, false).unwrap();
        assert!((0..2).all(|i| (0..3).all(|j| b.get(i, j))));

        let m = DenseMatrix::from_rows(&[[1.0f32, 3.0], [3.0, 1.0]]).unwrap();
        let b = binarize(&m, true).unwrap();
        assert_eq!((b.get(0, 0), b.get(0, 1)), (false, true));
        assert_eq!((b.get(1, 0), b.get(1, 1)), (true, false));
    }

    #[test]
    fn scalar_quantize_examples() {
        let m = DenseMatrix::from_rows(&[[0.0f32, 5.0], [255.0, 5.0], [0.0, 5.0]]).unwrap();
        let sq = scalar_quantize(&m).unwrap();
        assert_eq!(sq.codes().row(0), &[0, 0]);
        assert_eq!(sq.codes().row(1), &[255, 0]);
        assert_eq!(sq.scale(), &[1.0, 1.0]);
        assert_eq!(sq.offset(), &[0.0, 5.0]);
        assert_eq!(sq.dequantize(2), vec![0.0, 5.0]);

        let m = DenseMatrix::from_rows(&[[0.0f32], [1.0]]).unwrap();
        let sq = scalar_quantize(&m).unwrap();
        for i in 0..2 {
            let err = (sq.dequantize(i)[0] - m.row(i)[0]).abs();
            assert!(err <= 1.0 / 510.0, "{err}");
        }
        assert!(scalar_quantize(&DenseMatrix::from_rows(&[[1.0f32]]).unwrap()).is_err());
    }

    #[test]
    fn pq_train_shapes_and_k_equals_n() {
        let m = DenseMatrix::from_rows(&[[0.0f32, 0.0], [1.0, 3.0], [4.0, -1.0], [2.0, 2.0]])
            .unwrap();
        let cb = pq_train(&m, 1, 2, 5).unwrap();
        assert_eq!(cb.reconstruction_mse(&m).unwrap(), 0.0);

        let m = random_matrix(300, 8, 1);
        let cb = pq_train(&m, 4, 4, 2).unwrap();
        assert_eq!(cb.sub_dim(), 2);
        assert_eq!(cb.centroid(3, 15).len(), 2);
        assert_eq!(cb, pq_train(&m, 4, 4, 2).unwrap());

        assert!(pq_train(&m, 3, 4, 0).is_err());
        assert!(pq_train(&random_matrix(10, 8, 1), 4, 4, 0).is_err());
    }

    #[test]
    fn encode_picks_exact_centroids() {
        let m = random_matrix(400, 8, 3);
        let cb = pq_train(&m, 2, 4, 9).unwrap();
        let mut v = cb.centroid(0, 0).to_vec();
        v.extend_from_slice(cb.centroid(1, 3));
        let codes = cb.encode(&v).unwrap();
        assert_eq!(codes, vec![0, 3]);
        let t = cb.adc_table(&v, Measure::Euclidean).unwrap();
        assert!(t.score(&codes).abs() < 1e-5);
        assert!(matches!(
            cb.adc_table(&v, Measure::Cosine),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn adc_matches_reconstruction_distance() {
        let m = random_matrix(2000, 64, 4);
        let cb = pq_train(&m, 8, 8, 1).unwrap();
        let queries = random_matrix(20, 64, 5);
        let codes = cb.encode_matrix(&m).unwrap();
        for measure in [Measure::Euclidean, Measure::NegInnerProduct] {
            for q in queries.iter() {
                let t = cb.adc_table(q, measure).unwrap();
                for i in (0..m.rows()).step_by(97) {
                    let rec = cb.reconstruct(codes.row(i));
                    let exact =
                        dissimilarity(VectorRef::Dense(q), VectorRef::Dense(&rec), measure)
                            .unwrap();
                    assert!((t.score(codes.row(i)) - exact).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn lookup_sum_is_left_to_right() {
        let m = random_matrix(300, 12, 6);
        let cb = pq_train(&m, 6, 3, 1).unwrap();
        let t = cb.adc_table(m.row(0), Measure::Euclidean).unwrap();
        let codes = cb.encode(m.row(7)).unwrap();
        let mut s = 0f32;
        for (j, &c) in codes.iter().enumerate() {
            s += t.entry(j, c as usize);
        }
        assert_eq!(s.to_bits(), t.lookup_sum(&codes).to_bits());
    }

    #[test]
    fn more_bits_lower_error() {
        let m = random_matrix(3000, 16, 8);
        let e4 = pq_train(&m, 4, 4, 3).unwrap().reconstruction_mse(&m).unwrap();
        let e8 = pq_train(&m, 4, 8, 3).unwrap().reconstruction_mse(&m).unwrap();
        assert!(e8 <= e4, "{e8} > {e4}");
    }
}
