//! Principal components via dense eigendecomposition of the covariance
//! matrix, with a deterministic sign convention.

use crate::data::{TactileFrame, FRAME_LEN};
use crate::error::{Result, TdexError};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n x n).
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// rows of an n x n row-major matrix.
pub(crate) fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    // v starts as identity; columns accumulate the rotations
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro_sq: f64 = a.iter().map(|x| x * x).sum();
    let tol_sq = fro_sq * 1e-26 + f64::MIN_POSITIVE;

    for _sweep in 0..100 {
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off_sq += 2.0 * a[p * n + q] * a[p * n + q];
            }
        }
        if off_sq <= tol_sq {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let nkp = akp - s * (akq + tau * akp);
                    let nkq = akq + s * (akp - tau * akq);
                    a[k * n + p] = nkp;
                    a[p * n + k] = nkp;
                    a[k * n + q] = nkq;
                    a[q * n + k] = nkq;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = vkp - s * (vkq + tau * vkp);
                    v[k * n + q] = vkq + s * (vkp - tau * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (row, &col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[row * n + k] = v[k * n + col];
        }
    }
    (eigenvalues, vectors)
}

/// Top-k principal components of a dataset: mean, orthonormal component rows
/// and non-increasing explained variances.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// k x dim, row-major; each row has its largest-magnitude entry positive.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
    dim: usize,
}

impl PcaModel {
    /// Fits on arbitrary equal-length vectors. Covariance uses the 1/n
    /// convention so a single sample stays defined.
    pub fn fit_vectors(rows: &[Vec<f64>], k: usize) -> Result<PcaModel> {
        let n = rows.len();
        if n == 0 {
            return Err(TdexError::EmptyDataset);
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(TdexError::InvalidData("ragged input rows".into()));
        }
        if k == 0 || k > dim || k > n {
            return Err(TdexError::InvalidArg(format!(
                "k must satisfy 1 <= k <= min(dim={dim}, n={n}), got {k}"
            )));
        }
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; dim * dim];
        let mut centered = vec![0.0; dim];
        for row in rows {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
                *c = v - m;
            }
            for i in 0..dim {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                for j in i..dim {
                    cov[i * dim + j] += ci * centered[j];
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for i in 0..dim {
            for j in i..dim {
                let v = cov[i * dim + j] * inv_n;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }

        let (eigenvalues, vectors) = symmetric_eigen(&cov, dim);
        let mut components = vec![0.0; k * dim];
        let mut explained = Vec::with_capacity(k);
        for row in 0..k {
            let src = &vectors[row * dim..(row + 1) * dim];
            // sign convention: the largest-magnitude entry is positive
            let mut best = 0usize;
            for (i, v) in src.iter().enumerate() {
                if v.abs() > src[best].abs() {
                    best = i;
                }
            }
            let flip = if src[best] < 0.0 { -1.0 } else { 1.0 };
            for (dst, v) in components[row * dim..(row + 1) * dim].iter_mut().zip(src) {
                *dst = flip * v;
            }
            explained.push(eigenvalues[row].max(0.0));
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance: explained,
            dim,
        })
    }

    pub fn k(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// z = components * (x - mean)
    pub fn project_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(TdexError::InvalidData(format!(
                "pca expects dim {}, got {}",
                self.dim,
                x.len()
            )));
        }
        let mut z = vec![0.0; self.k()];
        for (i, zi) in z.iter_mut().enumerate() {
            let row = self.component(i);
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += row[j] * (x[j] - self.mean[j]);
            }
            *zi = acc;
        }
        Ok(z)
    }

    /// x = mean + components^T * z
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.k() {
            return Err(TdexError::InvalidData(format!(
                "pca expects {} coefficients, got {}",
                self.k(),
                z.len()
            )));
        }
        let mut x = self.mean.clone();
        for (i, &zi) in z.iter().enumerate() {
            let row = self.component(i);
            for j in 0..self.dim {
                x[j] += zi * row[j];
            }
        }
        Ok(x)
    }

    pub(crate) fn from_parts(
        mean: Vec<f64>,
        components: Vec<f64>,
        explained_variance: Vec<f64>,
    ) -> Result<PcaModel> {
        let k = explained_variance.len();
        if k == 0 || components.len() % k != 0 {
            return Err(TdexError::InvalidData("malformed pca model".into()));
        }
        let dim = components.len() / k;
        if mean.len() != dim {
            return Err(TdexError::InvalidData("pca mean dim mismatch".into()));
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
            dim,
        })
    }
}

/// Fits PCA on flattened 720-dimensional tactile frames.
pub fn pca_fit(frames: &[TactileFrame], k: usize) -> Result<PcaModel> {
    let rows: Vec<Vec<f64>> = frames.iter().map(|f| f.flattened().to_vec()).collect();
    if !rows.is_empty() {
        debug_assert_eq!(rows[0].len(), FRAME_LEN);
    }
    PcaModel::fit_vectors(&rows, k)
}

pub fn pca_project(model: &PcaModel, frame: &TactileFrame) -> Result<Vec<f64>> {
    model.project_vec(frame.flattened())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    fn orthonormality_error(model: &PcaModel) -> f64 {
        let k = model.k();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = model
                    .component(i)
                    .iter()
                    .zip(model.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    #[test]
    fn line_data_has_one_component() {
        let mut dir = vec![0.0; 30];
        dir[3] = 0.6;
        dir[17] = -0.8;
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| dir.iter().map(|d| d * i as f64).collect())
            .collect();
        let model = PcaModel::fit_vectors(&rows, 3).unwrap();
        let total: f64 = model.explained_variance().iter().sum();
        assert!(model.explained_variance()[0] / total > 1.0 - 1e-10);
        // sign convention: largest-magnitude entry positive, so the component
        // is -dir/|dir| flipped to make entry 17 positive
        assert!(model.component(0)[17] > 0.0);
    }

    #[test]
    fn complete_basis_reconstructs_exactly() {
        let rows = random_rows(30, 20, 1);
        let model = PcaModel::fit_vectors(&rows, 20).unwrap();
        assert!(orthonormality_error(&model) < 1e-10);
        for row in &rows {
            let z = model.project_vec(row).unwrap();
            let back = model.reconstruct(&z).unwrap();
            let err: f64 = row
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-8, "reconstruction error {err}");
        }
    }

    #[test]
    fn project_mean_is_zero() {
        let rows = random_rows(15, 10, 2);
        let model = PcaModel::fit_vectors(&rows, 4).unwrap();
        let z = model.project_vec(&model.mean().to_vec()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn explained_variance_non_increasing_and_matches_projection_covariance() {
        let rows = random_rows(60, 12, 3);
        let model = PcaModel::fit_vectors(&rows, 12).unwrap();
        let ev = model.explained_variance();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));

        // covariance of projected, centered data is diag(explained_variance)
        let zs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| model.project_vec(r).unwrap())
            .collect();
        let k = model.k();
        for i in 0..k {
            for j in 0..k {
                let cov: f64 =
                    zs.iter().map(|z| z[i] * z[j]).sum::<f64>() / rows.len() as f64;
                let target = if i == j { ev[i] } else { 0.0 };
                assert!(
                    (cov - target).abs() < 1e-8,
                    "cov[{i}][{j}] = {cov}, want {target}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let rows = random_rows(5, 8, 4);
        assert!(PcaModel::fit_vectors(&rows, 0).is_err());
        assert!(PcaModel::fit_vectors(&rows, 9).is_err()); // k > dim
        assert!(PcaModel::fit_vectors(&rows, 6).is_err()); // k > n
        assert!(PcaModel::fit_vectors(&[], 1).is_err());
    }

    #[test]
    fn matches_dense_eigensolver_oracle() {
        use nalgebra::{DMatrix, SymmetricEigen};
        let rows = random_rows(25, 16, 5);
        let n = rows.len();
        let dim = rows[0].len();
        let model = PcaModel::fit_vectors(&rows, 6).unwrap();

        // independent covariance + eigensolver
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for r in &rows {
            for i in 0..dim {
                for j in 0..dim {
                    cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / n as f64;
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..dim)
            .map(|c| {
                (
                    eig.eigenvalues[c],
                    (0..dim).map(|r| eig.eigenvectors[(r, c)]).collect(),
                )
            })
            .collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

        for i in 0..model.k() {
            assert!(
                (model.explained_variance()[i] - pairs[i].0).abs() < 1e-9,
                "eigenvalue {i}"
            );
        }
        // reconstruction residual agrees with the oracle subspace residual
        for r in &rows {
            let mine = {
                let z = model.project_vec(r).unwrap();
                let back = model.reconstruct(&z).unwrap();
                r.iter()
                    .zip(&back)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            };
            let oracle = {
                let centered: Vec<f64> = r.iter().zip(&mean).map(|(a, m)| a - m).collect();
                let mut residual: f64 = centered.iter().map(|v| v * v).sum();
                for (_, vec) in pairs.iter().take(model.k()) {
                    let dot: f64 = centered.iter().zip(vec).map(|(a, b)| a * b).sum();
                    residual -= dot * dot;
                }
                residual
            };
            assert!((mine - oracle).abs() < 1e-8, "{mine} vs {oracle}");
        }
    }
}
