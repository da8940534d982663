//! Shared helpers for integration tests: random small instances on a dyadic
//! grid and an exact rational-arithmetic oracle.
//!
//! The oracle evaluates each defining formula through the normal equations
//! in exact arithmetic, independently of the QR route used by the library.
//! Inputs are dyadic, so they convert to rationals without rounding.

#![allow(dead_code)]

use cluster_infer::{Cluster, ClusteredDataset};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Q = BigRational;

pub fn q(v: f64) -> Q {
    Q::from_float(v).expect("finite")
}

pub fn qi(v: i64) -> Q {
    Q::from_integer(BigInt::from(v))
}

/// Dense row-major rational matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct QMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Q>,
}

impl QMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Q::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Q::one());
        }
        m
    }

    pub fn from_f64(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, q(m[(i, j)]));
            }
        }
        out
    }

    pub fn from_vec(v: &DVector<f64>) -> Self {
        let mut out = Self::zeros(v.len(), 1);
        for i in 0..v.len() {
            out.set(i, 0, q(v[i]));
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> &Q {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Q) {
        self.data[i * self.cols + j] = v;
    }

    pub fn t(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j).clone());
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Q::zero();
                for l in 0..self.cols {
                    acc += self.get(i, l) * other.get(l, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: &Q) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(&Q, &Q) -> Q) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    /// Gauss–Jordan inverse; `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n).find(|&r| !a.get(r, col).is_zero())?;
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let p = a.get(col, col).clone();
            for j in 0..n {
                let v = a.get(col, j) / &p;
                a.set(col, j, v);
                let v = inv.get(col, j) / &p;
                inv.set(col, j, v);
            }
            for r in 0..n {
                if r == col || a.get(r, col).is_zero() {
                    continue;
                }
                let f = a.get(r, col).clone();
                for j in 0..n {
                    let v = a.get(r, j) - &f * a.get(col, j);
                    a.set(r, j, v);
                    let v = inv.get(r, j) - &f * inv.get(col, j);
                    inv.set(r, j, v);
                }
            }
        }
        Some(inv)
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            self.get(i, j).to_f64().expect("representable")
        })
    }

    pub fn to_vec(&self) -> DVector<f64> {
        assert_eq!(self.cols, 1);
        DVector::from_fn(self.rows, |i, _| {
            self.get(i, 0).to_f64().expect("representable")
        })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    pub fn max_abs(&self) -> Q {
        self.data
            .iter()
            .map(|v| v.abs())
            .fold(Q::zero(), |a, b| if b > a { b } else { a })
    }
}

/// `(X'X)⁻¹` and `(X'X)⁻¹X'y` in exact arithmetic.
pub fn exact_ols(x: &QMat, y: &QMat) -> Option<(QMat, QMat)> {
    let gram_inv = x.t().mul(x).inverse()?;
    let beta = gram_inv.mul(&x.t().mul(y));
    Some((gram_inv, beta))
}

pub struct ExactCluster {
    pub x: QMat,
    pub y: QMat,
    pub gram_inv: QMat,
    pub beta: QMat,
}

pub fn exact_clusters(ds: &ClusteredDataset) -> Vec<ExactCluster> {
    ds.clusters()
        .iter()
        .map(|c| {
            let x = QMat::from_f64(&c.x);
            let y = QMat::from_vec(&c.y);
            let (gram_inv, beta) = exact_ols(&x, &y).expect("full-rank cluster");
            ExactCluster {
                x,
                y,
                gram_inv,
                beta,
            }
        })
        .collect()
}

pub fn exact_mean(vs: &[&QMat]) -> QMat {
    let mut sum = QMat::zeros(vs[0].rows, vs[0].cols);
    for v in vs {
        sum = sum.add(v);
    }
    sum.scale(&Q::new(BigInt::one(), BigInt::from(vs.len())))
}

pub fn exact_beta_bar(cs: &[ExactCluster]) -> QMat {
    exact_mean(&cs.iter().map(|c| &c.beta).collect::<Vec<_>>())
}

/// `Σ_g A_g X_g' e_g e_g' X_g A_g` with `e_g = Y_g − X_g b` over `members`.
fn exact_sandwich_sum(cs: &[ExactCluster], members: &[usize], b: &QMat) -> QMat {
    let k = b.rows;
    let mut sum = QMat::zeros(k, k);
    for &g in members {
        let c = &cs[g];
        let e = c.y.sub(&c.x.mul(b));
        let s = c.gram_inv.mul(&c.x.t().mul(&e));
        sum = sum.add(&s.mul(&s.t()));
    }
    sum
}

/// `V̂_G = (1/G) Σ_g A_g X_g'e_g e_g'X_g A_g`, `e_g = Y_g − X_g β̄̂`.
pub fn exact_vhat(cs: &[ExactCluster]) -> QMat {
    let b = exact_beta_bar(cs);
    let all: Vec<usize> = (0..cs.len()).collect();
    exact_sandwich_sum(cs, &all, &b).scale(&Q::new(BigInt::one(), BigInt::from(cs.len())))
}

/// `(β̂_POLS, Σ̂)` with `Σ̂ = (X'X)⁻¹ Σ_g X_g'ε̂_g ε̂_g'X_g (X'X)⁻¹`.
pub fn exact_pols(cs: &[ExactCluster]) -> (QMat, QMat) {
    let k = cs[0].x.cols;
    let mut xtx = QMat::zeros(k, k);
    let mut xty = QMat::zeros(k, 1);
    for c in cs {
        xtx = xtx.add(&c.x.t().mul(&c.x));
        xty = xty.add(&c.x.t().mul(&c.y));
    }
    let inv = xtx.inverse().expect("full-rank pooled design");
    let beta = inv.mul(&xty);
    let mut meat = QMat::zeros(k, k);
    for c in cs {
        let e = c.y.sub(&c.x.mul(&beta));
        let s = c.x.t().mul(&e);
        meat = meat.add(&s.mul(&s.t()));
    }
    let sigma = inv.mul(&meat).mul(&inv);
    (beta, sigma)
}

/// `(β̃_l, Ṽ_l)` with `Ṽ_l = (1/P_l²) Σ_{g∈S_l} A_g X_g'e*_g e*_g'X_g A_g`.
pub fn exact_superblock(cs: &[ExactCluster], members: &[usize]) -> (QMat, QMat) {
    let beta = exact_mean(&members.iter().map(|&g| &cs[g].beta).collect::<Vec<_>>());
    let p = BigInt::from(members.len());
    let v = exact_sandwich_sum(cs, members, &beta).scale(&Q::new(BigInt::one(), &p * &p));
    (beta, v)
}

/// `scale · d'(R V R')⁻¹ d`, `d = R b − r`.
pub fn exact_wald(b: &QMat, v: &QMat, r: &QMat, target: &QMat, scale: &Q) -> Q {
    let d = r.mul(b).sub(target);
    let m = r.mul(v).mul(&r.t()).inverse().expect("nonsingular R V R'");
    d.t().mul(&m).mul(&d).get(0, 0) * scale
}

/// `Σ_l (β̃_l − β̄̂)'Ṽ_l⁻¹(β̃_l − β̄̂)`.
pub fn exact_t_sb(cs: &[ExactCluster], groups: &[Vec<usize>]) -> Q {
    let bar = exact_beta_bar(cs);
    let mut t = Q::zero();
    for members in groups {
        let (b, v) = exact_superblock(cs, members);
        let d = b.sub(&bar);
        t += d
            .t()
            .mul(&v.inverse().expect("nonsingular V_l"))
            .mul(&d)
            .get(0, 0);
    }
    t
}

/// `‖a − b‖_F / ‖b‖_F` (absolute when `b = 0`).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = b.norm();
    let diff = (a - b).norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Random small instance on a dyadic grid: intercept plus `k − 1`
/// regressors in multiples of 1/4, responses in multiples of 1/8, every
/// cluster of full column rank. With `superblocks = Some(d)` clusters are
/// assigned round-robin to `d` blocks (so `g ≥ 2d` gives `P_l ≥ 2`).
pub fn dyadic_dataset(
    seed: u64,
    g: usize,
    k: usize,
    superblocks: Option<usize>,
) -> ClusteredDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (0..g)
        .map(|i| loop {
            let n = rng.random_range(k + 1..=k + 5);
            let x = DMatrix::from_fn(n, k, |_, j| {
                if j == 0 {
                    1.0
                } else {
                    rng.random_range(-16i32..=16) as f64 / 4.0
                }
            });
            if QMat::from_f64(&x)
                .t()
                .mul(&QMat::from_f64(&x))
                .inverse()
                .is_none()
            {
                continue;
            }
            let y = DVector::from_fn(n, |_, _| rng.random_range(-64i32..=64) as f64 / 8.0);
            break Cluster::new(format!("c{i}"), x, y).unwrap();
        })
        .collect();
    let labels = superblocks.map(|d| (0..g).map(|i| format!("s{}", i % d)).collect());
    ClusteredDataset::new(clusters, labels).unwrap()
}

/// Member index lists for the round-robin assignment of [`dyadic_dataset`].
pub fn round_robin_groups(g: usize, d: usize) -> Vec<Vec<usize>> {
    (0..d).map(|l| (l..g).step_by(d).collect()).collect()
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic `P(D_n > d)` (Kolmogorov series with Stephens' correction).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// CDF of χ²₂, `1 − exp(−x/2)`.
pub fn chi2_2_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x / 2.0).exp_m1()
    }
}
