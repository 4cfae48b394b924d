//! Inverted file whose lists hold product-quantized residuals. Candidates
//! from the probed lists are ranked by ADC, the best `rerank` are rescored
//! exactly.
//!
//! With residual `r` of centroid `c`, the squared distance to the
//! reconstruction is `|q - c|^2 - 2<q, r> + (2<c, r> + |r|^2)`. The middle
//! term comes from one inner-product table per query, the last is stored per
//! code, so no table is rebuilt per probed list.

use super::codec::{get_bytes, get_f32s, get_u64, put_bytes, put_f32s, put_u64};
use super::ivf::InvertedFile;
use super::{training_sample, SearchOutput, TopK};
use crate::error::{Error, Result};
use crate::quantization::{lookup, pq_train, PqCodebook};
use crate::vector::{dot, l2_squared, normalize, DenseMatrix, Measure, Neighbor, QueryScorer, Space};

/// Residual rows used to train the product quantizer.
pub const PQ_TRAIN_ROWS: usize = 16_384;

#[derive(Debug, Clone, PartialEq)]
pub struct IvfPq {
    coarse: InvertedFile,
    /// Measure the coarse quantizer and ADC work under; cosine data is
    /// normalized and routed as Euclidean.
    routing: Measure,
    codebook: PqCodebook,
    /// Codes per list, aligned with the coarse list order.
    codes: Vec<Vec<u8>>,
    /// `2<c, r> + |r|^2` per code under Euclidean routing; derived, not stored.
    terms: Vec<Vec<f32>>,
}

impl IvfPq {
    pub fn build(
        space: &Space,
        clusters: usize,
        subspaces: usize,
        bits: u32,
        seed: u64,
    ) -> Result<Self> {
        let corpus = space
            .dense()
            .ok_or_else(|| Error::Unsupported("ivf-pq over non-dense data".into()))?;
        if subspaces == 0 || corpus.dim() % subspaces != 0 {
            return Err(Error::invalid(format!(
                "{subspaces} subspaces do not divide dimension {}",
                corpus.dim()
            )));
        }
        let (routing, normalized);
        let routed: &DenseMatrix = match space.measure() {
            Measure::Cosine => {
                routing = Measure::Euclidean;
                normalized = corpus.normalized()?;
                &normalized
            }
            m => {
                routing = m;
                corpus
            }
        };
        let coarse = InvertedFile::train(routed, clusters, seed)?;

        let dim = routed.dim();
        let mut residuals = DenseMatrix::with_capacity(dim, routed.rows());
        let mut owner = vec![0usize; routed.rows()];
        for (c, list) in coarse.lists().iter().enumerate() {
            for &id in list {
                owner[id as usize] = c;
            }
        }
        let mut buf = vec![0f32; dim];
        for (i, row) in routed.iter().enumerate() {
            residual(row, coarse.centroids().row(owner[i]), &mut buf);
            residuals.push(&buf)?;
        }
        let sample = training_sample(&residuals, PQ_TRAIN_ROWS, seed.wrapping_add(1));
        let codebook = pq_train(&sample, subspaces, bits, seed.wrapping_add(2))?;

        let codes = coarse
            .lists()
            .iter()
            .map(|list| {
                let mut out = vec![0u8; list.len() * subspaces];
                for (slot, &id) in out.chunks_exact_mut(subspaces).zip(list) {
                    codebook.encode_into(residuals.row(id as usize), slot);
                }
                out
            })
            .collect();
        Ok(Self::assemble(coarse, routing, codebook, codes))
    }

    fn assemble(coarse: InvertedFile, routing: Measure, codebook: PqCodebook, codes: Vec<Vec<u8>>) -> Self {
        let m = codebook.subspaces();
        let terms = if routing == Measure::Euclidean {
            codes
                .iter()
                .enumerate()
                .map(|(c, list)| {
                    let centroid = coarse.centroids().row(c);
                    list.chunks_exact(m)
                        .map(|code| {
                            let r = codebook.reconstruct(code);
                            2.0 * dot(centroid, &r) + dot(&r, &r)
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            coarse,
            routing,
            codebook,
            codes,
            terms,
        }
    }

    pub fn coarse(&self) -> &InvertedFile {
        &self.coarse
    }

    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub(crate) fn search(
        &self,
        space: &Space,
        scorer: &QueryScorer<'_>,
        k: usize,
        nprobe: usize,
        rerank: usize,
    ) -> SearchOutput {
        let raw = scorer.dense_query().expect("dense query");
        let owned;
        let q: &[f32] = if space.measure() == Measure::Cosine {
            owned = normalize(raw).expect("scorer rejected zero queries");
            &owned
        } else {
            raw
        };
        let m = self.codebook.subspaces();
        let ksub = self.codebook.codes_per_subspace();
        let mut table = Vec::with_capacity(m * ksub);
        self.codebook.fill_table(q, Measure::NegInnerProduct, &mut table);

        let mut approx = TopK::new(rerank);
        let mut scanned = 0;
        for c in self.coarse.probe(q, self.routing, nprobe) {
            let list = &self.coarse.lists()[c];
            if list.is_empty() {
                continue;
            }
            let centroid = self.coarse.centroids().row(c);
            let codes = self.codes[c].chunks_exact(m);
            if self.routing == Measure::NegInnerProduct {
                let base = -dot(q, centroid);
                for (&id, code) in list.iter().zip(codes) {
                    approx.push(Neighbor::new(id, base + lookup(&table, ksub, code)));
                }
            } else {
                let base = l2_squared(q, centroid);
                for ((&id, code), &t) in list.iter().zip(codes).zip(&self.terms[c]) {
                    approx.push(Neighbor::new(id, base + 2.0 * lookup(&table, ksub, code) + t));
                }
            }
            scanned += list.len();
        }

        let mut top = TopK::new(k);
        for n in approx.into_sorted() {
            top.push(scorer.neighbor(n.id as usize));
        }
        let mut out = SearchOutput::new(top.into_sorted(), scanned, k);
        out.capped = rerank < k;
        out
    }

    pub(crate) fn write(&self, w: &mut Vec<u8>) {
        self.coarse.write(w);
        w.push(self.routing.tag());
        put_u64(w, self.codebook.dim() as u64);
        put_u64(w, self.codebook.subspaces() as u64);
        put_u64(w, self.codebook.bits() as u64);
        put_f32s(w, self.codebook.raw_centroids());
        put_u64(w, self.codes.len() as u64);
        for c in &self.codes {
            put_bytes(w, c);
        }
    }

    pub(crate) fn read(r: &mut &[u8]) -> Result<Self> {
        let coarse = InvertedFile::read(r)?;
        let (&tag, rest) = r
            .split_first()
            .ok_or_else(|| Error::invalid("truncated index data"))?;
        *r = rest;
        let routing = Measure::from_tag(tag).ok_or_else(|| Error::invalid("bad routing tag"))?;
        let dim = get_u64(r)? as usize;
        let subspaces = get_u64(r)? as usize;
        let bits = get_u64(r)? as u32;
        let codebook = PqCodebook::from_parts(dim, subspaces, bits, get_f32s(r)?)?;
        let lists = get_u64(r)? as usize;
        if lists != coarse.lists().len() {
            return Err(Error::invalid("code list count differs from list count"));
        }
        let mut codes = Vec::with_capacity(lists);
        for (c, list) in coarse.lists().iter().enumerate() {
            let bytes = get_bytes(r)?;
            if bytes.len() != list.len() * subspaces
                || bytes.iter().any(|&b| (b as usize) >= (1 << bits))
            {
                return Err(Error::invalid(format!("corrupt codes for list {c}")));
            }
            codes.push(bytes);
        }
        Ok(Self::assemble(coarse, routing, codebook, codes))
    }
}

#[inline]
fn residual(v: &[f32], centroid: &[f32], out: &mut [f32]) {
    for ((o, a), b) in out.iter_mut().zip(v).zip(centroid) {
        *o = a - b;
    }
}
