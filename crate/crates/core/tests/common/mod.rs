#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Reference implementations used as test oracles. They share no code with the
//! engine beyond plain linear algebra.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use funsor::models::{GmmSpec, HmmSpec, KalmanSpec, Matrix, SldsSpec};

pub const LOG_2PI: f64 = 1.837_877_066_409_345_5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

pub fn mat(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m[0].len(), |r, c| m[r][c])
}

pub fn rows(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("positive definite");
    let r = x - mean;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (r.dot(&chol.solve(&r)) + logdet + x.len() as f64 * LOG_2PI)
}

/// Log-space forward algorithm over `T` states.
pub fn forward(spec: &HmmSpec) -> f64 {
    let k = spec.transition.len();
    let init = spec.initial.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let mut alpha: Vec<f64> = (0..k).map(|i| init[i].ln() + spec.emission[0][i].ln()).collect();
    for e in &spec.emission[1..] {
        alpha = (0..k)
            .map(|j| {
                let terms: Vec<f64> = (0..k).map(|i| alpha[i] + spec.transition[i][j].ln()).collect();
                lse(&terms) + e[j].ln()
            })
            .collect();
    }
    lse(&alpha)
}

/// Best path log score by brute force over all `K^T` paths.
pub fn brute_max_path(spec: &HmmSpec) -> f64 {
    let k = spec.transition.len();
    let t = spec.emission.len();
    let init = spec.initial.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let mut best = f64::NEG_INFINITY;
    for code in 0..k.pow(t as u32) {
        let path: Vec<usize> = (0..t).map(|i| code / k.pow(i as u32) % k).collect();
        let mut s = init[path[0]].ln() + spec.emission[0][path[0]].ln();
        for i in 1..t {
            s += spec.transition[path[i - 1]][path[i]].ln() + spec.emission[i][path[i]].ln();
        }
        best = best.max(s);
    }
    best
}

/// Predict/update Kalman filter with time-varying parameters; returns the
/// marginal log-likelihood of `ys`.
pub fn kalman_loglik(
    fs: &[DMatrix<f64>],
    qs: &[DMatrix<f64>],
    hs: &[DMatrix<f64>],
    rs: &[DMatrix<f64>],
    mu0: &DVector<f64>,
    p0: &DMatrix<f64>,
    ys: &[DVector<f64>],
) -> f64 {
    let (mut m, mut p) = (mu0.clone(), p0.clone());
    let mut ll = 0.0;
    for (t, y) in ys.iter().enumerate() {
        if t > 0 {
            m = &fs[t] * &m;
            p = &fs[t] * &p * fs[t].transpose() + &qs[t];
        }
        let s = &hs[t] * &p * hs[t].transpose() + &rs[t];
        let s = (&s + s.transpose()) * 0.5;
        ll += mvn_logpdf(y, &(&hs[t] * &m), &s);
        let gain = &p * hs[t].transpose() * s.clone().try_inverse().expect("invertible");
        m = &m + &gain * (y - &hs[t] * &m);
        p = &p - &gain * &hs[t] * &p;
        p = (&p + p.transpose()) * 0.5;
    }
    ll
}

fn init_of(mean: &Option<Vec<f64>>, cov: &Option<Matrix>, n: usize) -> (DVector<f64>, DMatrix<f64>) {
    (mean.clone().map_or(DVector::zeros(n), DVector::from_vec), cov.as_ref().map_or(DMatrix::identity(n, n), mat))
}

fn observations(m: &Matrix) -> Vec<DVector<f64>> {
    m.iter().map(|r| DVector::from_vec(r.clone())).collect()
}

/// Textbook filter for a Kalman spec; a bias becomes extra state `[z; β]`.
pub fn kalman_oracle(spec: &KalmanSpec) -> f64 {
    let ys = observations(&spec.observations);
    let t = ys.len();
    let (mu0, p0) = init_of(&spec.init_mean, &spec.init_cov, spec.F.len());
    let (f, h, q, r) = (mat(&spec.F), mat(&spec.H), mat(&spec.Q), mat(&spec.R));
    match &spec.bias_cov {
        None => kalman_loglik(&vec![f; t], &vec![q; t], &vec![h; t], &vec![r; t], &mu0, &p0, &ys),
        Some(b) => {
            let (nz, nx) = (f.nrows(), h.nrows());
            let n = nz + nx;
            let mut fa = DMatrix::identity(n, n);
            fa.view_mut((0, 0), (nz, nz)).copy_from(&f);
            let mut qa = DMatrix::zeros(n, n);
            qa.view_mut((0, 0), (nz, nz)).copy_from(&q);
            let mut ha = DMatrix::zeros(nx, n);
            ha.view_mut((0, 0), (nx, nz)).copy_from(&h);
            ha.view_mut((0, nz), (nx, nx)).copy_from(&DMatrix::identity(nx, nx));
            let mut pa = DMatrix::zeros(n, n);
            pa.view_mut((0, 0), (nz, nz)).copy_from(&p0);
            pa.view_mut((nz, nz), (nx, nx)).copy_from(&mat(b));
            let mut ma = DVector::zeros(n);
            ma.rows_mut(0, nz).copy_from(&mu0);
            kalman_loglik(&vec![fa; t], &vec![qa; t], &vec![ha; t], &vec![r; t], &ma, &pa, &ys)
        }
    }
}

/// Exact SLDS marginal by enumerating all `K^T` switching sequences.
pub fn slds_oracle(spec: &SldsSpec) -> f64 {
    let k = spec.transition.len();
    let ys = observations(&spec.observations);
    let t = ys.len();
    let (mu0, p0) = init_of(&spec.init_mean, &spec.init_cov, spec.F[0].len());
    let mut terms = Vec::new();
    for code in 0..k.pow(t as u32) {
        let s: Vec<usize> = (0..t).map(|i| code / k.pow(i as u32) % k).collect();
        let mut lp = spec.transition[0][s[0]].ln();
        for i in 1..t {
            lp += spec.transition[s[i - 1]][s[i]].ln();
        }
        let pick = |m: &[Matrix]| s.iter().map(|&j| mat(&m[j])).collect::<Vec<_>>();
        terms.push(lp + kalman_loglik(&pick(&spec.F), &pick(&spec.Q), &pick(&spec.H), &pick(&spec.R), &mu0, &p0, &ys));
    }
    lse(&terms)
}

/// Joint density of all data when there is a single component.
pub fn gmm_single_oracle(spec: &GmmSpec) -> f64 {
    let d = spec.prior_mean.len();
    let n = spec.data.len();
    let sz = mat(&spec.prior_cov);
    let sx = mat(&spec.obs_cov[0]);
    let mut cov = DMatrix::zeros(n * d, n * d);
    let mut mean = DVector::zeros(n * d);
    for a in 0..n {
        mean.rows_mut(a * d, d).copy_from(&DVector::from_vec(spec.prior_mean.clone()));
        for b in 0..n {
            let mut blk = sz.clone();
            if a == b {
                blk += &sx;
            }
            cov.view_mut((a * d, b * d), (d, d)).copy_from(&blk);
        }
    }
    let x = DVector::from_iterator(n * d, spec.data.iter().flatten().copied());
    spec.weights[0].ln() * n as f64 + mvn_logpdf(&x, &mean, &cov)
}

/// Exact marginal by enumerating the component of every data point; points
/// sharing a component are jointly normal through its mean.
pub fn gmm_enumeration_oracle(spec: &GmmSpec) -> f64 {
    let (k, n) = (spec.weights.len(), spec.data.len());
    let mut terms = Vec::new();
    for code in 0..k.pow(n as u32) {
        let c: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
        let mut total = 0.0;
        for comp in 0..k {
            let data: Matrix = (0..n).filter(|&i| c[i] == comp).map(|i| spec.data[i].clone()).collect();
            if data.is_empty() {
                continue;
            }
            let single = GmmSpec {
                weights: vec![spec.weights[comp]],
                data,
                obs_cov: vec![spec.obs_cov[comp].clone()],
                ..spec.clone()
            };
            total += gmm_single_oracle(&single);
        }
        terms.push(total);
    }
    lse(&terms)
}

/// Exact mixture likelihood of a single data point.
pub fn gmm_one_point_oracle(spec: &GmmSpec) -> f64 {
    let x = DVector::from_vec(spec.data[0].clone());
    let mu = DVector::from_vec(spec.prior_mean.clone());
    let terms: Vec<f64> = spec
        .weights
        .iter()
        .zip(&spec.obs_cov)
        .map(|(w, c)| w.ln() + mvn_logpdf(&x, &mu, &(mat(&spec.prior_cov) + mat(c))))
        .collect();
    lse(&terms)
}

pub fn random_stochastic(rng: &mut ChaCha8Rng, k: usize) -> Matrix {
    (0..k).map(|_| random_simplex(rng, k)).collect()
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let s = &a * a.transpose() + DMatrix::identity(n, n) * floor;
    (&s + s.transpose()) * 0.5
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_hmm(rng: &mut ChaCha8Rng, k: usize, t: usize) -> HmmSpec {
    HmmSpec {
        transition: random_stochastic(rng, k),
        emission: (0..t).map(|_| (0..k).map(|_| rng.random_range(0.01..1.0)).collect()).collect(),
        initial: Some(random_simplex(rng, k)),
    }
}

pub fn random_kalman(rng: &mut ChaCha8Rng, nz: usize, nx: usize, t: usize, bias: bool) -> KalmanSpec {
    let f = random_matrix(rng, nz, nz, 0.6);
    let h = random_matrix(rng, nx, nz, 1.0);
    let ys: Matrix = (0..t).map(|_| (0..nx).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    KalmanSpec {
        F: rows(&f),
        H: rows(&h),
        Q: rows(&random_spd(rng, nz, 0.2)),
        R: rows(&random_spd(rng, nx, 0.3)),
        observations: ys,
        bias_cov: bias.then(|| rows(&random_spd(rng, nx, 0.5))),
        init_mean: Some((0..nz).map(|_| rng.random_range(-1.0..1.0)).collect()),
        init_cov: Some(rows(&random_spd(rng, nz, 0.5))),
    }
}

pub fn random_slds(rng: &mut ChaCha8Rng, k: usize, t: usize, window: usize) -> SldsSpec {
    let n = 2;
    let m = 1;
    SldsSpec {
        transition: random_stochastic(rng, k),
        F: (0..k).map(|_| rows(&random_matrix(rng, n, n, 0.8))).collect(),
        Q: (0..k).map(|_| rows(&random_spd(rng, n, 0.2))).collect(),
        H: (0..k).map(|_| rows(&random_matrix(rng, m, n, 1.5))).collect(),
        R: (0..k).map(|j| rows(&(random_spd(rng, m, 0.1) * (1.0 + 2.0 * j as f64)))).collect(),
        observations: (0..t).map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
        window,
        init_mean: None,
        init_cov: None,
    }
}

pub mod criteria;
