//! Gaussian-kernel Gram factors.
//!
//! Gram matrices are never formed. A pivoted incomplete Cholesky gives
//! `K ~ L L^T` with `L` of size `m x r`; centring the columns of `L` gives
//! the factor of `H K H`.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::CiError;

/// Zero-mean, unit-variance copy of a column.
pub fn standardize(col: &[f64]) -> Result<Vec<f64>, CiError> {
    let m = col.len() as f64;
    let mean = col.iter().sum::<f64>() / m;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(f64::MIN_POSITIVE)) || !sd.is_finite() {
        return Err(CiError::Degenerate);
    }
    Ok(col.iter().map(|v| (v - mean) / sd).collect())
}

/// Row-major `m x d` block of standardized variables.
#[derive(Clone, Debug)]
pub struct Block {
    pub m: usize,
    pub d: usize,
    data: Vec<f64>,
}

impl Block {
    pub fn from_columns<C: AsRef<[f64]>>(cols: &[C]) -> Result<Self, CiError> {
        let d = cols.len();
        let m = cols.first().map_or(0, |c| c.as_ref().len());
        let std: Vec<Vec<f64>> = cols.iter().map(|c| standardize(c.as_ref())).collect::<Result<_, _>>()?;
        let mut data = vec![0.0; m * d];
        for (j, c) in std.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                data[i * d + j] = *v;
            }
        }
        Ok(Block { m, d, data })
    }

    /// Block with `m` rows and no columns.
    pub fn empty(m: usize) -> Self {
        Block { m, d: 0, data: Vec::new() }
    }

    /// Columns of `self` followed by columns of `other`.
    pub fn concat(&self, other: &Block) -> Block {
        let d = self.d + other.d;
        let mut data = Vec::with_capacity(self.m * d);
        for i in 0..self.m {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Block { m: self.m, d, data }
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Block {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Block { m: self.m, d: self.d, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.row(i).iter().zip(self.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Median pairwise distance over at most `max_rows` evenly strided rows.
    pub fn median_distance(&self, max_rows: usize) -> Result<f64, CiError> {
        let n = self.m.min(max_rows);
        let rows: Vec<usize> = (0..n).map(|k| k * self.m / n).collect();
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for (a, &i) in rows.iter().enumerate() {
            for &j in &rows[a + 1..] {
                d.push(self.sq_dist(i, j));
            }
        }
        if d.is_empty() {
            return Err(CiError::TooFewSamples { got: self.m, need: 2 });
        }
        let mid = d.len() / 2;
        let (_, med, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        let med = med.sqrt();
        if !(med > 0.0) {
            return Err(CiError::Degenerate);
        }
        Ok(med)
    }
}

/// Pivoted incomplete Cholesky of the RBF Gram matrix of `x`, stopping when
/// the largest residual diagonal drops to `tol` or at `max_rank` columns.
/// The returned columns are centred.
pub fn centered_factor(x: &Block, sigma: f64, tol: f64, max_rank: usize) -> DMatrix<f64> {
    let m = x.m;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let max_rank = max_rank.min(m);
    let mut l = DMatrix::<f64>::zeros(m, max_rank);
    let mut diag = vec![1.0f64; m];
    let mut pivots: Vec<usize> = Vec::with_capacity(max_rank);
    let mut rank = 0;
    while rank < max_rank {
        let (piv, &dmax) = diag.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).unwrap();
        if dmax <= tol {
            break;
        }
        let scale = 1.0 / dmax.sqrt();
        let (done, rest) = l.as_mut_slice().split_at_mut(rank * m);
        let col = &mut rest[..m];
        for (t, c) in col.iter_mut().enumerate() {
            *c = (-gamma * x.sq_dist(t, piv)).exp();
        }
        for prev in done.chunks_exact(m) {
            let f = prev[piv];
            for (c, p) in col.iter_mut().zip(prev) {
                *c -= f * p;
            }
        }
        for (c, d) in col.iter_mut().zip(&mut diag) {
            *c *= scale;
            *d -= *c * *c;
        }
        diag[piv] = 0.0;
        for &p in &pivots {
            diag[p] = 0.0;
        }
        pivots.push(piv);
        rank += 1;
    }
    let mut l = l.columns(0, rank).into_owned();
    for mut c in l.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
    }
    l
}

/// Applies `R = eps (C C^T + eps I)^{-1} = I - C (C^T C + eps I)^{-1} C^T`.
pub struct Residualizer {
    c: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Residualizer {
    pub fn new(c: DMatrix<f64>, eps: f64) -> Self {
        let mut gram = c.tr_mul(&c);
        for i in 0..gram.nrows() {
            gram[(i, i)] += eps;
        }
        let chol = Cholesky::new(gram).expect("C^T C + eps I is positive definite");
        Residualizer { c, chol }
    }

    pub fn rank(&self) -> usize {
        self.c.ncols()
    }

    pub fn apply(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        if self.c.ncols() == 0 {
            return a.clone();
        }
        let w = self.chol.solve(&(self.c.transpose() * a));
        a - &self.c * w
    }
}

/// `||U^T V||_F^2`.
pub fn cross_norm_sq(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    (u.transpose() * v).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(cols: &[Vec<f64>]) -> Block {
        Block::from_columns(cols).unwrap()
    }

    fn gram(x: &Block, sigma: f64) -> DMatrix<f64> {
        DMatrix::from_fn(x.m, x.m, |i, j| (-x.sq_dist(i, j) / (2.0 * sigma * sigma)).exp())
    }

    #[test]
    fn standardize_rejects_constant() {
        assert_eq!(standardize(&[2.5; 30]), Err(CiError::Degenerate));
        let s = standardize(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn full_rank_factor_reproduces_centred_gram() {
        let x = block(&[(0..40).map(|i| ((i * 7) % 13) as f64 * 0.3).collect::<Vec<_>>()]);
        let sigma = x.median_distance(500).unwrap();
        let l = centered_factor(&x, sigma, 0.0, 40);
        let k = gram(&x, sigma);
        let h = DMatrix::<f64>::identity(40, 40) - DMatrix::from_element(40, 40, 1.0 / 40.0);
        let want = &h * k * &h;
        let got = &l * l.transpose();
        assert!((want - got).amax() < 1e-8);
    }

    #[test]
    fn residualizer_matches_dense_formula() {
        let x = block(&[
            (0..30).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>(),
            (0..30).map(|i| (i as f64 * 0.11).cos()).collect::<Vec<_>>(),
        ]);
        let c = centered_factor(&x, 1.0, 0.0, 30);
        let eps = 1e-2;
        let r = Residualizer::new(c.clone(), eps);
        let dense = (&c * c.transpose() + DMatrix::<f64>::identity(30, 30) * eps).try_inverse().unwrap() * eps;
        let a = DMatrix::from_fn(30, 3, |i, j| ((i + 3 * j) as f64).sin());
        assert!((r.apply(&a) - dense * a).amax() < 1e-8);
    }
}
