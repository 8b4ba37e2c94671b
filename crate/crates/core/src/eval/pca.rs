//! PCA of flattened encoder embeddings and the embedding file format:
//! u32 rows, u32 dim, f32 values row-major, i16 labels, i16 snr_db per row,
//! then one f64 explained-variance ratio per dimension, all little-endian.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, FormatError, Result};
use crate::iqcore::{standardize_dataset, IQFrame, SignalDataset, StandardizationStats};
use crate::models::{batch_tensor, encode, Checkpoint};
use crate::rng::rng_for;
use crate::train::EVAL_BATCH;

/// Above this many rows and columns the top components are found by
/// randomized subspace iteration instead of a full eigendecomposition.
const EXACT_LIMIT: usize = 2048;
const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 6;

/// Label written for frames without a class.
pub const NO_LABEL: i16 = -1;
/// SNR written for frames without a label.
pub const NO_SNR: i16 = i16::MIN;

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// Principal axes as orthonormal columns, `[dim][k]`.
    pub components: DMatrix<f64>,
    /// Sample variance along each axis, non-increasing.
    pub variances: Vec<f64>,
    /// Sum of all per-feature sample variances.
    pub total_variance: f64,
}

fn eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Orthonormal basis of the column space of `m` (thin QR).
fn orthonormal(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Gram-Schmidt completion of `basis` columns `from..` against the earlier
/// ones, for directions with no variance.
fn complete_basis(basis: &mut DMatrix<f64>, from: usize) {
    let dim = basis.nrows();
    let mut next_axis = 0;
    for c in from..basis.ncols() {
        loop {
            let mut v = DVector::zeros(dim);
            v[next_axis % dim] = 1.0;
            next_axis += 1;
            for p in 0..c {
                let col = basis.column(p).clone_owned();
                v -= &col * col.dot(&v);
            }
            let norm = v.norm();
            if norm > 1e-6 {
                basis.set_column(c, &(v / norm));
                break;
            }
        }
    }
}

impl Pca {
    /// Fits `k` components to the rows of `x`.
    pub fn fit(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<Self> {
        let (n, d) = x.shape();
        let limit = n.min(d);
        if k == 0 || k > limit {
            return Err(Error::PcaDims { requested: k, limit });
        }
        let mean = x.row_mean().transpose();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= mean.transpose();
        }
        let dof = (n.max(2) - 1) as f64;
        let total_variance = xc.norm_squared() / dof;

        let (variances, mut components) = if d <= EXACT_LIMIT && d <= n {
            let (vals, vecs) = eigen_desc(xc.tr_mul(&xc) / dof);
            (vals[..k].to_vec(), vecs.columns(0, k).clone_owned())
        } else if n <= EXACT_LIMIT {
            // eigenvectors of the Gram matrix map to principal axes via X^T u / s
            let (vals, u) = eigen_desc(&xc * xc.transpose() / dof);
            let top = vals[0].max(f64::MIN_POSITIVE);
            let mut comps = DMatrix::zeros(d, k);
            let mut filled = 0;
            for c in 0..k {
                if vals[c] <= top * 1e-12 {
                    break;
                }
                let v = xc.tr_mul(&u.column(c)) / (vals[c] * dof).sqrt();
                comps.set_column(c, &v);
                filled += 1;
            }
            complete_basis(&mut comps, filled);
            (vals[..k].to_vec(), comps)
        } else {
            randomized(&xc, k, dof, seed)
        };
        // sign convention: largest-magnitude entry of each axis is positive
        for mut col in components.column_iter_mut() {
            let peak = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            if peak < 0.0 {
                col.neg_mut();
            }
        }
        Ok(Self {
            mean,
            components,
            variances,
            total_variance,
        })
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance > 0.0 {
            self.variances.iter().map(|v| v / self.total_variance).collect()
        } else {
            vec![0.0; self.variances.len()]
        }
    }

    /// Projects the rows of `x` onto the components, `[n][k]`.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= self.mean.transpose();
        }
        xc * &self.components
    }
}

/// Top-`k` axes by subspace iteration on a seeded Gaussian sketch.
fn randomized(xc: &DMatrix<f64>, k: usize, dof: f64, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = xc.shape();
    let l = (k + OVERSAMPLE).min(n.min(d));
    let mut rng = rng_for(seed, &[0x5ca]);
    let omega = DMatrix::from_fn(d, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = orthonormal(xc * omega);
    for _ in 0..POWER_ITERS {
        let z = orthonormal(xc.tr_mul(&q));
        q = orthonormal(xc * z);
    }
    // Rayleigh-Ritz in the captured subspace
    let b = q.tr_mul(xc);
    let (vals, u) = eigen_desc(&b * b.transpose() / dof);
    let mut comps = DMatrix::zeros(d, k);
    let mut filled = 0;
    for c in 0..k {
        if vals[c] <= vals[0].max(f64::MIN_POSITIVE) * 1e-12 {
            break;
        }
        comps.set_column(c, &(b.tr_mul(&u.column(c)) / (vals[c] * dof).sqrt()));
        filled += 1;
    }
    complete_basis(&mut comps, filled);
    (vals[..k].to_vec(), comps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f32>,
    pub labels: Vec<i16>,
    pub snr_db: Vec<i16>,
    pub explained_variance_ratio: Vec<f64>,
}

impl EmbeddingFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len() + 4 * self.rows + 8 * self.dim);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        self.values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.labels.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.snr_db.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.explained_variance_ratio
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<u32> {
            let b = bytes.get(at..at + 4).ok_or(FormatError::TruncatedHeader)?;
            Ok(u32::from_le_bytes(b.try_into().unwrap()))
        };
        let rows = word(0)? as usize;
        let dim = word(4)? as usize;
        let expected = 8 + 4 * rows * dim + 4 * rows + 8 * dim;
        if bytes.len() < expected {
            return Err(FormatError::TruncatedBody {
                expected,
                found: bytes.len(),
            }
            .into());
        }
        if bytes.len() > expected {
            return Err(FormatError::TrailingBytes(bytes.len() - expected).into());
        }
        let mut at = 8;
        let mut take = |n: usize| {
            let s = &bytes[at..at + n];
            at += n;
            s
        };
        let values = take(4 * rows * dim)
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = take(2 * rows)
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let snr_db = take(2 * rows)
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let explained_variance_ratio = take(8 * dim)
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            rows,
            dim,
            values,
            labels,
            snr_db,
            explained_variance_ratio,
        })
    }
}

pub fn write_embeddings(path: &Path, e: &EmbeddingFile) -> Result<()> {
    std::fs::write(path, e.encode())?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    EmbeddingFile::decode(&std::fs::read(path)?)
}

/// Encodes every frame with the checkpoint's encoder, flattens, and reduces
/// to `pca_dims` principal components.
pub fn export_embeddings(ckpt: &Checkpoint, ds: &SignalDataset, pca_dims: usize, seed: u64) -> Result<EmbeddingFile> {
    if ds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let flat = ckpt.arch.embed_channels() * ds.frame_len() / ckpt.arch.encoder_downsample();
    if pca_dims > ds.len().min(flat) {
        return Err(Error::PcaDims {
            requested: pca_dims,
            limit: ds.len().min(flat),
        });
    }
    let stats = ckpt.stats.unwrap_or_else(StandardizationStats::identity);
    let data = standardize_dataset(ds, &stats);
    let mut x = DMatrix::<f64>::zeros(ds.len(), flat);
    let mut row = 0;
    for chunk in data.frames().chunks(EVAL_BATCH) {
        let refs: Vec<&IQFrame> = chunk.iter().collect();
        let z = encode(&ckpt.arch, &ckpt.params, &batch_tensor(&refs)?)?;
        for frame in z.data().chunks_exact(flat) {
            for (c, &v) in frame.iter().enumerate() {
                x[(row, c)] = f64::from(v);
            }
            row += 1;
        }
    }
    let pca = Pca::fit(&x, pca_dims, seed)?;
    let y = pca.transform(&x);
    let values = (0..y.nrows())
        .flat_map(|r| (0..y.ncols()).map(move |c| (r, c)))
        .map(|(r, c)| y[(r, c)] as f32)
        .collect();
    let (labels, snr_db) = if ds.is_labeled() {
        ds.labels().iter().map(|l| (l.class_id as i16, l.snr_db)).unzip()
    } else {
        (vec![NO_LABEL; ds.len()], vec![NO_SNR; ds.len()])
    };
    Ok(EmbeddingFile {
        rows: ds.len(),
        dim: pca_dims,
        values,
        labels,
        snr_db,
        explained_variance_ratio: pca.explained_variance_ratio(),
    })
}
