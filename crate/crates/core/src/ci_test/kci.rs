use std::cmp::Ordering;

use nalgebra::DMatrix;

use super::kernel::{centered_factor, cross_norm_sq, Block, Residualizer};
use super::{Bandwidth, CiError, CiMethod, CiTestResult, Decision, KernelParams, QuartetData, MIN_SAMPLES};
use crate::rng::CounterRng;

const BANDWIDTH_ROWS: usize = 500;

fn check_samples(m: usize) -> Result<(), CiError> {
    if m < MIN_SAMPLES {
        return Err(CiError::TooFewSamples { got: m, need: MIN_SAMPLES });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Left,
    Right,
}

/// Conditioning block together with the regularised residual operator
/// `R_Z = eps (K_Z + eps I)^{-1}`. Reusable across every test sharing `Z`.
pub struct KciConditioner {
    z: Block,
    res: Residualizer,
}

/// One side of a test: the standardized raw block, the bandwidth used for
/// the block augmented with `Z`, and the residualised factor `R_Z L`.
#[derive(Clone, Debug)]
pub struct KciSide {
    raw: Block,
    sigma: f64,
    u: DMatrix<f64>,
}

impl KciSide {
    pub fn n_samples(&self) -> usize {
        self.raw.m
    }
}

fn block_cmp(a: &Block, b: &Block) -> Ordering {
    a.d.cmp(&b.d).then_with(|| {
        (0..a.m)
            .flat_map(|i| a.row(i).iter().zip(b.row(i)))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

impl KciConditioner {
    pub fn new<C: AsRef<[f64]>>(cond: &[C], m: usize, kp: &KernelParams) -> Result<Self, CiError> {
        kp.validate()?;
        check_samples(m)?;
        if cond.iter().any(|c| c.as_ref().len() != m) {
            return Err(CiError::Shape("conditioning columns have the wrong length".into()));
        }
        let z = if cond.is_empty() { Block::empty(m) } else { Block::from_columns(cond)? };
        let c = if z.d == 0 {
            DMatrix::zeros(m, 0)
        } else {
            let sigma = match kp.bandwidth {
                Bandwidth::Median => z.median_distance(BANDWIDTH_ROWS)?,
                Bandwidth::Fixed { z, .. } => z,
            };
            centered_factor(&z, sigma, kp.lowrank_tol, kp.max_rank)
        };
        Ok(KciConditioner { z, res: Residualizer::new(c, kp.ridge) })
    }

    pub fn n_samples(&self) -> usize {
        self.z.m
    }

    pub fn conditioning_block(&self) -> &Block {
        &self.z
    }

    pub fn side<C: AsRef<[f64]>>(&self, cols: &[C], role: Role, kp: &KernelParams) -> Result<KciSide, CiError> {
        if cols.is_empty() || cols.iter().any(|c| c.as_ref().len() != self.z.m) {
            return Err(CiError::Shape("test columns missing or of the wrong length".into()));
        }
        let raw = Block::from_columns(cols)?;
        let aug = raw.concat(&self.z);
        let sigma = match (kp.bandwidth, role) {
            (Bandwidth::Median, _) => aug.median_distance(BANDWIDTH_ROWS)?,
            (Bandwidth::Fixed { x, .. }, Role::Left) => x,
            (Bandwidth::Fixed { y, .. }, Role::Right) => y,
        };
        let u = self.res.apply(&centered_factor(&aug, sigma, kp.lowrank_tol, kp.max_rank));
        Ok(KciSide { raw, sigma, u })
    }

    /// Unresidualised factor of `side` with its rows reordered by `perm`.
    fn resample(&self, side: &KciSide, perm: &[usize], kp: &KernelParams) -> DMatrix<f64> {
        let aug = side.raw.permuted(perm).concat(&self.z);
        centered_factor(&aug, side.sigma, kp.lowrank_tol, kp.max_rank)
    }

    /// Statistic for two prepared sides. Sides are put in a canonical order
    /// first, so the value does not depend on which one is passed first.
    pub fn statistic(&self, a: &KciSide, b: &KciSide) -> f64 {
        let (a, b) = canonical(a, b);
        pair_statistic(a, b)
    }

    /// Conditional-permutation p-value: rows of one side are shuffled within
    /// nearest-neighbour clusters of `Z`. `R_Z` is symmetric, so each
    /// permuted statistic is `||(R_Z U_a)^T L_b||^2`.
    pub fn p_value(&self, a: &KciSide, b: &KciSide, permutations: usize, seed: u64, kp: &KernelParams) -> f64 {
        let (a, b) = canonical(a, b);
        let observed = pair_statistic(a, b);
        let m = self.z.m;
        let clusters = permutation_clusters(&self.z, cluster_size(m));
        let rng = CounterRng::new(seed);
        let mut perm: Vec<usize> = (0..m).collect();
        let twice = self.res.apply(&a.u);
        let mut exceed = 0usize;
        for i in 0..permutations {
            conditional_permutation(&clusters, &rng.split(i as u64), &mut perm);
            let v = self.resample(b, &perm, kp);
            if cross_norm_sq(&twice, &v) / (m * m) as f64 >= observed {
                exceed += 1;
            }
        }
        (1 + exceed) as f64 / (1 + permutations) as f64
    }
}

fn canonical<'s>(a: &'s KciSide, b: &'s KciSide) -> (&'s KciSide, &'s KciSide) {
    if block_cmp(&a.raw, &b.raw) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

fn pair_statistic(a: &KciSide, b: &KciSide) -> f64 {
    let m = a.raw.m as f64;
    cross_norm_sq(&a.u, &b.u) / (m * m)
}

/// Cluster size used by the conditional permutation.
pub fn cluster_size(m: usize) -> usize {
    (m / 100).max(5)
}

/// Greedy partition of the rows of `z` into clusters of `k` nearest
/// neighbours. Each cluster is seeded at the free row with the smallest
/// first coordinate; a remainder shorter than `2k` forms the last cluster.
/// An empty block yields a single cluster.
pub fn permutation_clusters(z: &Block, k: usize) -> Vec<Vec<usize>> {
    let m = z.m;
    if z.d == 0 || k >= m {
        return vec![(0..m).collect()];
    }
    let mut free: Vec<usize> = (0..m).collect();
    free.sort_by(|&i, &j| z.row(i)[0].total_cmp(&z.row(j)[0]).then(i.cmp(&j)));
    let mut clusters = Vec::with_capacity(m / k + 1);
    while !free.is_empty() {
        if free.len() < 2 * k {
            let mut last = std::mem::take(&mut free);
            last.sort_unstable();
            clusters.push(last);
            break;
        }
        let seed = free[0];
        let mut by_dist: Vec<(f64, usize)> = free.iter().map(|&i| (z.sq_dist(seed, i), i)).collect();
        by_dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut cluster: Vec<usize> = by_dist[..k].iter().map(|p| p.1).collect();
        cluster.sort_unstable();
        free.retain(|i| cluster.binary_search(i).is_err());
        clusters.push(cluster);
    }
    clusters
}

fn conditional_permutation(clusters: &[Vec<usize>], rng: &CounterRng, perm: &mut [usize]) {
    let mut s = rng.stream();
    for cl in clusters {
        let mut src = cl.clone();
        s.shuffle(&mut src);
        for (&slot, from) in cl.iter().zip(src) {
            perm[slot] = from;
        }
    }
}

/// Kernel conditional-independence statistic
/// `(1/m^2) Tr(R_Z K_X' R_Z R_Z K_Y' R_Z)`, where `X' = (X, Z)` and
/// `Y' = (Y, Z)` and all Gram matrices are centred.
pub fn kci_statistic(q: &QuartetData, kp: &KernelParams) -> Result<f64, CiError> {
    let cond = KciConditioner::new(&q.cond, q.n_samples(), kp)?;
    let a = cond.side(&q.left, Role::Left, kp)?;
    let b = cond.side(&q.right, Role::Right, kp)?;
    Ok(cond.statistic(&a, &b))
}

pub fn kci_test(q: &QuartetData, kp: &KernelParams) -> Result<CiTestResult, CiError> {
    let cond = KciConditioner::new(&q.cond, q.n_samples(), kp)?;
    let a = cond.side(&q.left, Role::Left, kp)?;
    let b = cond.side(&q.right, Role::Right, kp)?;
    let stat = cond.statistic(&a, &b);
    Ok(match kp.decision {
        Decision::Tolerance(tau) => CiTestResult::from_threshold(stat, tau, CiMethod::Kci),
        Decision::Permutation { permutations, alpha } => {
            let p = cond.p_value(&a, &b, permutations, kp.seed, kp);
            CiTestResult::from_p_value(stat, p, alpha, CiMethod::Kci)
        }
    })
}

/// HSIC test of `x ⊥ y`. The statistic is `(1/m^2) Tr(K_x K_y)` with centred
/// Gram matrices; permutation mode shuffles all rows of `y`.
pub fn uncond_independence(x: &[f64], y: &[f64], kp: &KernelParams) -> Result<CiTestResult, CiError> {
    let m = x.len();
    if y.len() != m {
        return Err(CiError::Shape("x and y have different lengths".into()));
    }
    let cond = KciConditioner::new::<Vec<f64>>(&[], m, kp)?;
    let a = cond.side(&[x], Role::Left, kp)?;
    let b = cond.side(&[y], Role::Right, kp)?;
    let (a, b) = canonical(&a, &b);
    let stat = pair_statistic(a, b);
    Ok(match kp.decision {
        Decision::Tolerance(tau) => CiTestResult::from_threshold(stat, tau, CiMethod::Hsic),
        Decision::Permutation { permutations, alpha } => {
            let rng = CounterRng::new(kp.seed);
            let mut perm: Vec<usize> = (0..m).collect();
            let mut exceed = 0usize;
            for i in 0..permutations {
                rng.split(i as u64).stream().shuffle(&mut perm);
                let v = b.u.select_rows(&perm);
                if cross_norm_sq(&a.u, &v) / (m * m) as f64 >= stat {
                    exceed += 1;
                }
            }
            let p = (1 + exceed) as f64 / (1 + permutations) as f64;
            CiTestResult::from_p_value(stat, p, alpha, CiMethod::Hsic)
        }
    })
}
