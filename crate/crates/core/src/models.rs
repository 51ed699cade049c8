//! Builders for the standard model families and a runner that evaluates them.
//!
//! Model files are JSON objects with a `"model"` discriminator. Probabilities
//! are given in linear space; matrices are nested row-major arrays.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domains::{FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::gaussian::{jittered_cholesky, GaussianAtom};
use crate::interp::{EvalConfig, Evaluator, Interp, ScanMode};
use crate::ops::{logsumexp, ReduceOp};
use crate::tensor::TensorAtom;
use crate::terms::{StepMatching, Term};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Semiring {
    SumProduct,
    MaxProduct,
}

impl Semiring {
    pub fn sum_op(self) -> ReduceOp {
        match self {
            Semiring::SumProduct => ReduceOp::LogSumExp,
            Semiring::MaxProduct => ReduceOp::Max,
        }
    }
}

impl FromStr for Semiring {
    type Err = FunsorError;
    fn from_str(s: &str) -> Result<Semiring> {
        match s {
            "sumproduct" => Ok(Semiring::SumProduct),
            "maxproduct" => Ok(Semiring::MaxProduct),
            _ => Err(FunsorError::InvalidConfig(format!("unknown semiring `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmSpec {
    /// `K×K` row-stochastic transition matrix.
    pub transition: Matrix,
    /// `T×K` emission likelihoods `p(y_t | x_t = k)`.
    pub emission: Matrix,
    /// Distribution of the first state; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct KalmanSpec {
    pub F: Matrix,
    pub H: Matrix,
    pub Q: Matrix,
    pub R: Matrix,
    /// `T×n_x` observations.
    pub observations: Matrix,
    /// Covariance of a persistent observation bias; no bias when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_cov: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_cov: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SldsSpec {
    /// `K×K` switching probabilities; the state before the first step is 0.
    pub transition: Matrix,
    /// Per-state dynamics and emission parameters.
    pub F: Vec<Matrix>,
    pub Q: Vec<Matrix>,
    pub H: Vec<Matrix>,
    pub R: Vec<Matrix>,
    pub observations: Matrix,
    /// Moment-matching window length `L ≥ 1`.
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_cov: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    /// Mixture weights over components.
    pub weights: Vec<f64>,
    /// `N×D` data.
    pub data: Matrix,
    /// Shared Gaussian prior on each component mean.
    pub prior_mean: Vec<f64>,
    pub prior_cov: Matrix,
    /// Per-component observation covariance around the component mean.
    pub obs_cov: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelSpec {
    Hmm(HmmSpec),
    Kalman(KalmanSpec),
    Slds(SldsSpec),
    Gmm(GmmSpec),
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<ModelSpec> {
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| FunsorError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Hmm(_) => "hmm",
            ModelSpec::Kalman(_) => "kalman",
            ModelSpec::Slds(_) => "slds",
            ModelSpec::Gmm(_) => "gmm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Hmm(s) => s.validate(),
            ModelSpec::Kalman(s) => s.validate(),
            ModelSpec::Slds(s) => s.validate(),
            ModelSpec::Gmm(s) => s.validate(),
        }
    }

    pub fn build(&self, semiring: Semiring) -> Result<Term> {
        match (self, semiring) {
            (ModelSpec::Hmm(s), _) => build_hmm(s, semiring.sum_op()),
            (_, Semiring::MaxProduct) => {
                Err(FunsorError::InvalidConfig(format!("maxproduct needs a discrete-only model, not {}", self.name())))
            }
            (ModelSpec::Kalman(s), _) => build_kalman(s),
            (ModelSpec::Slds(s), _) => build_slds_marginal(s),
            (ModelSpec::Gmm(s), _) => build_gmm(s),
        }
    }
}

fn invalid(msg: impl Into<String>) -> FunsorError {
    FunsorError::InvalidModel(msg.into())
}

fn to_matrix(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(invalid(format!("{what} must be {rows}×{cols}")));
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| m[r][c]))
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn check_cov(m: &Matrix, n: usize, what: &str) -> Result<DMatrix<f64>> {
    check_finite(m, what)?;
    let a = to_matrix(m, n, n, what)?;
    if (&a - a.transpose()).amax() > 1e-9 * a.amax().max(1.0) {
        return Err(invalid(format!("{what} is not symmetric")));
    }
    if nalgebra::Cholesky::new(a.clone()).is_none() {
        return Err(invalid(format!("{what} is not positive definite")));
    }
    Ok(a)
}

fn check_stochastic(m: &Matrix, k: usize, what: &str) -> Result<()> {
    if k == 0 {
        return Err(invalid(format!("{what} is empty")));
    }
    to_matrix(m, k, k, what)?;
    for row in m {
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid(format!("{what} has entries outside [0, ∞)")));
        }
        if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("rows of {what} must sum to 1")));
        }
    }
    Ok(())
}

fn check_distribution(p: &[f64], k: usize, what: &str) -> Result<()> {
    if p.len() != k || p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(invalid(format!("{what} must be {k} nonnegative numbers")));
    }
    if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("{what} must sum to 1")));
    }
    Ok(())
}

impl HmmSpec {
    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_states();
        check_stochastic(&self.transition, k, "transition")?;
        if self.emission.is_empty() {
            return Err(invalid("an HMM needs at least one time step"));
        }
        to_matrix(&self.emission, self.emission.len(), k, "emission")?;
        if self.emission.iter().flatten().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("emission likelihoods must be finite and nonnegative"));
        }
        if let Some(p) = &self.initial {
            check_distribution(p, k, "initial")?;
        }
        Ok(())
    }
}

impl KalmanSpec {
    pub fn state_dim(&self) -> usize {
        self.F.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.H.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (nz, nx) = (self.state_dim(), self.obs_dim());
        if nz == 0 || nx == 0 {
            return Err(invalid("state and observation dimensions must be positive"));
        }
        check_finite(&self.F, "F")?;
        check_finite(&self.H, "H")?;
        to_matrix(&self.F, nz, nz, "F")?;
        to_matrix(&self.H, nx, nz, "H")?;
        check_cov(&self.Q, nz, "Q")?;
        check_cov(&self.R, nx, "R")?;
        if self.observations.is_empty() {
            return Err(invalid("at least one observation is needed"));
        }
        check_finite(&self.observations, "observations")?;
        to_matrix(&self.observations, self.observations.len(), nx, "observations")?;
        if let Some(b) = &self.bias_cov {
            check_cov(b, nx, "bias_cov")?;
        }
        init_prior(&self.init_mean, &self.init_cov, nz)?;
        Ok(())
    }
}

impl SldsSpec {
    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn state_dim(&self) -> usize {
        self.F.first().map_or(0, |f| f.len())
    }

    pub fn obs_dim(&self) -> usize {
        self.H.first().map_or(0, |h| h.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_states();
        check_stochastic(&self.transition, k, "transition")?;
        if self.window == 0 {
            return Err(invalid("window must be at least 1"));
        }
        let (n, m) = (self.state_dim(), self.obs_dim());
        if n == 0 || m == 0 {
            return Err(invalid("state and observation dimensions must be positive"));
        }
        for (what, v) in [("F", &self.F), ("Q", &self.Q), ("H", &self.H), ("R", &self.R)] {
            if v.len() != k {
                return Err(invalid(format!("{what} needs one matrix per switching state")));
            }
        }
        for j in 0..k {
            check_finite(&self.F[j], "F")?;
            check_finite(&self.H[j], "H")?;
            to_matrix(&self.F[j], n, n, "F")?;
            to_matrix(&self.H[j], m, n, "H")?;
            check_cov(&self.Q[j], n, "Q")?;
            check_cov(&self.R[j], m, "R")?;
        }
        if self.observations.is_empty() {
            return Err(invalid("at least one observation is needed"));
        }
        check_finite(&self.observations, "observations")?;
        to_matrix(&self.observations, self.observations.len(), m, "observations")?;
        init_prior(&self.init_mean, &self.init_cov, n)?;
        Ok(())
    }
}

impl GmmSpec {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = (self.num_components(), self.dim());
        if k == 0 || d == 0 {
            return Err(invalid("a mixture needs components and a positive dimension"));
        }
        check_distribution(&self.weights, k, "weights")?;
        if self.data.is_empty() {
            return Err(invalid("at least one data point is needed"));
        }
        check_finite(&self.data, "data")?;
        to_matrix(&self.data, self.data.len(), d, "data")?;
        if self.prior_mean.iter().any(|x| !x.is_finite()) {
            return Err(invalid("prior_mean has non-finite entries"));
        }
        check_cov(&self.prior_cov, d, "prior_cov")?;
        if self.obs_cov.len() != k {
            return Err(invalid("obs_cov needs one matrix per component"));
        }
        for c in &self.obs_cov {
            check_cov(c, d, "obs_cov")?;
        }
        Ok(())
    }
}

fn init_prior(mean: &Option<Vec<f64>>, cov: &Option<Matrix>, n: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mu = match mean {
        Some(m) if m.len() == n && m.iter().all(|x| x.is_finite()) => DVector::from_vec(m.clone()),
        Some(_) => return Err(invalid(format!("init_mean must have {n} finite entries"))),
        None => DVector::zeros(n),
    };
    let p = match cov {
        Some(c) => check_cov(c, n, "init_cov")?,
        None => DMatrix::identity(n, n),
    };
    Ok((mu, p))
}

/// One batch slice of `log N(Σⱼ Cⱼ uⱼ + c; 0, Σ)`.
#[derive(Clone, Debug)]
pub struct LinearResidual {
    pub coefs: Vec<DMatrix<f64>>,
    pub offset: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// The Gaussian log-density of an affine residual, as a normalizing Tensor
/// plus a Gaussian over the inputs. `slices` follow `batch` in row-major order.
pub fn gaussian_factor(batch: &TypeContext, inputs: &[(Name, usize)], slices: &[LinearResidual]) -> Result<Term> {
    let reals = TypeContext::new(inputs.iter().map(|(n, d)| (n.clone(), FunsorType::Real(vec![*d]))).collect())?;
    let dim: usize = inputs.iter().map(|(_, d)| d).sum();
    let mut consts = Vec::with_capacity(slices.len());
    let mut params = Vec::with_capacity(slices.len());
    for s in slices {
        let m = s.offset.len();
        let mut c = DMatrix::zeros(m, dim);
        let mut col = 0;
        for (a, (_, d)) in s.coefs.iter().zip(inputs) {
            c.columns_mut(col, *d).copy_from(a);
            col += d;
        }
        let chol = jittered_cholesky(&s.cov)?;
        let sc = chol.solve(&c);
        let so = chol.solve(&s.offset);
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        consts.push(-0.5 * s.offset.dot(&so) - 0.5 * (m as f64 * crate::gaussian::LOG_2PI + logdet));
        params.push((-(c.transpose() * so), c.transpose() * sc));
    }
    let w = TensorAtom::from_vec(batch.clone(), FunsorType::scalar(), consts)?;
    let g = GaussianAtom::from_slices(batch.clone(), reals, &params)?;
    Ok(Term::from(w) + Term::from(g))
}

fn bounded(name: &str, n: usize) -> TypeContext {
    TypeContext::single(Name::from(name), FunsorType::Bounded(n))
}

fn log_tensor(ctx: TypeContext, probs: impl IntoIterator<Item = f64>) -> Result<Term> {
    Ok(TensorAtom::from_vec(ctx, FunsorType::scalar(), probs.into_iter().map(f64::ln).collect())?.into())
}

/// `log Σ_{x₀…} π(x₀) e₀(x₀) Πₜ A(xₜ₋₁, xₜ) eₜ(xₜ)` with the transitions as a
/// Markov product over `t`. Under `Max` this is the best path score.
pub fn build_hmm(spec: &HmmSpec, op: ReduceOp) -> Result<Term> {
    spec.validate()?;
    let k = spec.num_states();
    let steps = spec.emission.len();
    let prev = Name::from("x_prev");
    let init = spec.initial.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let first = log_tensor(bounded("x_prev", k), init.iter().zip(&spec.emission[0]).map(|(p, e)| p * e))?;
    if steps == 1 {
        return Ok(Term::reduce(op, prev, &first));
    }
    let pair = bounded("x_prev", k).union(&bounded("x_curr", k))?;
    let trans = log_tensor(pair, spec.transition.iter().flatten().copied())?;
    let emis = log_tensor(
        bounded("t", steps - 1).union(&bounded("x_curr", k))?,
        spec.emission[1..].iter().flatten().copied(),
    )?;
    let matching = StepMatching::new(vec![(prev.clone(), Name::from("x_curr"))])?;
    let chain = Term::markov("t", matching, op, &(trans + emis));
    Ok(Term::reduce_all(op, &[prev, Name::from("x_curr")], &(first + chain)))
}

/// Linear-Gaussian state space model with an optional persistent bias `β`
/// added to every observation; `β` is integrated outside the Markov product.
pub fn build_kalman(spec: &KalmanSpec) -> Result<Term> {
    spec.validate()?;
    let (nz, nx) = (spec.state_dim(), spec.obs_dim());
    let steps = spec.observations.len();
    let f = to_matrix(&spec.F, nz, nz, "F")?;
    let h = to_matrix(&spec.H, nx, nz, "H")?;
    let q = to_matrix(&spec.Q, nz, nz, "Q")?;
    let r = to_matrix(&spec.R, nx, nx, "R")?;
    let (mu0, p0) = init_prior(&spec.init_mean, &spec.init_cov, nz)?;
    let y = |t: usize| DVector::from_vec(spec.observations[t].clone());
    let (zp, zc, beta) = (Name::from("z_prev"), Name::from("z_curr"), Name::from("beta"));
    let bias = spec.bias_cov.as_ref().map(|b| to_matrix(b, nx, nx, "bias_cov")).transpose()?;

    let emission = |z: &Name, obs: Vec<DVector<f64>>, batch: TypeContext| -> Result<Term> {
        let mut inputs = vec![(z.clone(), nz)];
        if bias.is_some() {
            inputs.push((beta.clone(), nx));
        }
        let slices: Vec<LinearResidual> = obs
            .into_iter()
            .map(|yt| {
                let mut coefs = vec![h.clone()];
                if bias.is_some() {
                    coefs.push(DMatrix::identity(nx, nx));
                }
                LinearResidual { coefs, offset: -yt, cov: r.clone() }
            })
            .collect();
        gaussian_factor(&batch, &inputs, &slices)
    };

    let init = gaussian_factor(
        &TypeContext::empty(),
        &[(zp.clone(), nz)],
        &[LinearResidual { coefs: vec![DMatrix::identity(nz, nz)], offset: -mu0, cov: p0 }],
    )?;
    let mut total = init + emission(&zp, vec![y(0)], TypeContext::empty())?;
    let mut reduce = vec![zp.clone()];
    if steps > 1 {
        let trans = gaussian_factor(
            &TypeContext::empty(),
            &[(zp.clone(), nz), (zc.clone(), nz)],
            &[LinearResidual { coefs: vec![-f, DMatrix::identity(nz, nz)], offset: DVector::zeros(nz), cov: q }],
        )?;
        let emis = emission(&zc, (1..steps).map(y).collect(), bounded("t", steps - 1))?;
        let matching = StepMatching::new(vec![(zp.clone(), zc.clone())])?;
        total = total + Term::markov("t", matching, ReduceOp::LogSumExp, &(trans + emis));
        reduce.push(zc);
    }
    if let Some(b) = bias {
        let prior = gaussian_factor(
            &TypeContext::empty(),
            &[(beta.clone(), nx)],
            &[LinearResidual { coefs: vec![DMatrix::identity(nx, nx)], offset: DVector::zeros(nx), cov: b }],
        )?;
        total = total + prior;
        reduce.push(beta);
    }
    Ok(Term::reduce_all(ReduceOp::LogSumExp, &reduce, &total))
}

/// Switching linear dynamical system with a running window: the pair
/// `{s_{t−L}, x_{t−L}}` is eliminated at step `t`, which is a moment-matching
/// step once the Gaussian depends on `s_{t−L}`. The last `L` pairs are
/// eliminated jointly, reals first.
pub fn build_slds_marginal(spec: &SldsSpec) -> Result<Term> {
    spec.validate()?;
    let (k, n, m) = (spec.num_states(), spec.state_dim(), spec.obs_dim());
    let steps = spec.observations.len();
    let window = spec.window.min(steps);
    let s = |t: usize| Name::from(format!("s_{t}").as_str());
    let x = |t: usize| Name::from(format!("x_{t}").as_str());
    let sctx = |t: usize| TypeContext::single(s(t), FunsorType::Bounded(k));
    let (mu0, p0) = init_prior(&spec.init_mean, &spec.init_cov, n)?;
    let fs: Vec<DMatrix<f64>> = spec.F.iter().map(|a| to_matrix(a, n, n, "F")).collect::<Result<_>>()?;
    let hs: Vec<DMatrix<f64>> = spec.H.iter().map(|a| to_matrix(a, m, n, "H")).collect::<Result<_>>()?;
    let qs: Vec<DMatrix<f64>> = spec.Q.iter().map(|a| to_matrix(a, n, n, "Q")).collect::<Result<_>>()?;
    let rs: Vec<DMatrix<f64>> = spec.R.iter().map(|a| to_matrix(a, m, m, "R")).collect::<Result<_>>()?;

    let mut f = log_tensor(sctx(0), spec.transition[0].iter().copied())?
        + gaussian_factor(
            &TypeContext::empty(),
            &[(x(0), n)],
            &[LinearResidual { coefs: vec![DMatrix::identity(n, n)], offset: -mu0, cov: p0 }],
        )?;
    for t in 0..steps {
        if t > 0 {
            let pair = sctx(t - 1).union(&sctx(t))?;
            let switch = log_tensor(pair, spec.transition.iter().flatten().copied())?;
            let slices: Vec<LinearResidual> = (0..k)
                .map(|j| LinearResidual {
                    coefs: vec![-fs[j].clone(), DMatrix::identity(n, n)],
                    offset: DVector::zeros(n),
                    cov: qs[j].clone(),
                })
                .collect();
            f = f + switch + gaussian_factor(&sctx(t), &[(x(t - 1), n), (x(t), n)], &slices)?;
        }
        if t >= window {
            f = Term::reduce(ReduceOp::LogSumExp, s(t - window), &Term::reduce(ReduceOp::LogSumExp, x(t - window), &f));
        }
        let yt = DVector::from_vec(spec.observations[t].clone());
        let slices: Vec<LinearResidual> = (0..k)
            .map(|j| LinearResidual { coefs: vec![hs[j].clone()], offset: -yt.clone(), cov: rs[j].clone() })
            .collect();
        f = f + gaussian_factor(&sctx(t), &[(x(t), n)], &slices)?;
    }
    let rest: Vec<Name> = (steps - window..steps).map(x).chain((steps - window..steps).map(s)).collect();
    Ok(Term::reduce_all(ReduceOp::LogSumExp, &rest, &f))
}

/// Gaussian mixture marginal likelihood
/// `Σ_z Π_j Σ_c [p_c + p_{x|c,z}[μ := z[c], x := x̂[j]] + (1/N) Π_{c′} p_z[μ := z[c′]]]`.
/// The prior is spread evenly over the data plate so that every mixture
/// component is a proper Gaussian in `z` when `c` is eliminated.
pub fn build_gmm(spec: &GmmSpec) -> Result<Term> {
    spec.validate()?;
    let (k, d, n) = (spec.num_components(), spec.dim(), spec.data.len());
    let mu = Name::from("mu");
    let xv = Name::from("x");
    let z = Term::variable("z", FunsorType::Real(vec![k, d]));
    let c = Term::variable("c", FunsorType::Bounded(k));
    let c_prior = Term::variable("c_prior", FunsorType::Bounded(k));
    let j = Term::variable("j", FunsorType::Bounded(n));

    let logp_c = log_tensor(bounded("c", k), spec.weights.iter().copied())?;
    let prior = gaussian_factor(
        &TypeContext::empty(),
        &[(mu.clone(), d)],
        &[LinearResidual {
            coefs: vec![DMatrix::identity(d, d)],
            offset: -DVector::from_vec(spec.prior_mean.clone()),
            cov: to_matrix(&spec.prior_cov, d, d, "prior_cov")?,
        }],
    )?;
    let slices: Vec<LinearResidual> = spec
        .obs_cov
        .iter()
        .map(|cov| {
            Ok(LinearResidual {
                coefs: vec![-DMatrix::identity(d, d), DMatrix::identity(d, d)],
                offset: DVector::zeros(d),
                cov: to_matrix(cov, d, d, "obs_cov")?,
            })
        })
        .collect::<Result<_>>()?;
    let logp_xc = gaussian_factor(&bounded("c", k), &[(mu.clone(), d), (xv.clone(), d)], &slices)?;
    let data = TensorAtom::from_vec(
        TypeContext::empty(),
        FunsorType::Real(vec![n, d]),
        spec.data.iter().flatten().copied().collect(),
    )?;

    let plated_prior = Term::reduce(ReduceOp::Add, "c_prior", &prior.subst1(mu.clone(), &Term::take(&z, &c_prior)));
    let share = &Term::scalar(1.0 / n as f64) * &plated_prior;
    let lik = Term::subst(&logp_xc, vec![(mu, Term::take(&z, &c)), (xv, Term::take(&Term::from(data), &j))]);
    let mixture = Term::reduce(ReduceOp::LogSumExp, "c", &(logp_c + lik + share));
    Ok(Term::reduce(ReduceOp::LogSumExp, "z", &Term::reduce(ReduceOp::Add, "j", &mixture)))
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub interp: Interp,
    pub semiring: Semiring,
    pub config: EvalConfig,
}

impl Default for RunOptions {
    fn default() -> RunOptions {
        RunOptions { interp: Interp::Exact, semiring: Semiring::SumProduct, config: EvalConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub log_value: f64,
    /// Contraction levels of the last Markov product, for models that have one.
    pub levels: Option<usize>,
}

/// The scalar value of an evaluated closed term, averaging Monte Carlo
/// particles in linear space.
pub fn ground_value(ev: &Evaluator, t: &Term) -> Result<f64> {
    let x = t.as_tensor().filter(|x| x.output().is_scalar_real()).ok_or_else(|| {
        FunsorError::Intractable(format!(
            "{} interpretation left a lazy term with {} nodes",
            ev.interp().name(),
            t.size()
        ))
    })?;
    if let Some(v) = x.value() {
        return Ok(v);
    }
    match ev.particle() {
        Some((p, n)) if x.context().len() == 1 && x.context().contains(p) => {
            let xs: Vec<f64> = x.data().iter().copied().collect();
            Ok(logsumexp(&xs) - (*n as f64).ln())
        }
        _ => Err(FunsorError::Intractable(format!("result has free variables {}", x.context()))),
    }
}

pub fn run_model(spec: &ModelSpec, opts: &RunOptions) -> Result<RunOutput> {
    let term = spec.build(opts.semiring)?;
    let ev = Evaluator::new(opts.interp, opts.config.clone());
    let out = ev.run(&term)?;
    let log_value = ground_value(&ev, &out)?;
    let levels = matches!(spec, ModelSpec::Hmm(_) | ModelSpec::Kalman(_)).then(|| ev.levels());
    Ok(RunOutput { log_value, levels })
}

/// HMM with `steps` transitions used by the scan benchmark: random transition
/// and emission tables from a fixed seed.
pub fn bench_hmm(steps: usize, states: usize, seed: u64) -> Result<Term> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let row = |rng: &mut rand_chacha::ChaCha8Rng| {
        let w: Vec<f64> = (0..states).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let transition: Matrix = (0..states).map(|_| row(&mut rng)).collect();
    let emission: Matrix = (0..=steps).map(|_| (0..states).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
    build_hmm(&HmmSpec { transition, emission, initial: None }, ReduceOp::LogSumExp)
}

pub fn scan_config(scan: ScanMode) -> EvalConfig {
    EvalConfig { scan, ..EvalConfig::default() }
}
