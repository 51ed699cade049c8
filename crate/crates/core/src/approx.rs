//! Approximate interpretations: moment matching of Gaussian mixtures and
//! Monte Carlo sampling of reductions.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::delta::DeltaAtom;
use crate::domains::{FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::gaussian::{jittered_cholesky, GaussianAtom, LOG_2PI};
use crate::interp::normal_form::NormalForm;
use crate::interp::{EvalConfig, Evaluator, Head, Interp, Rule};
use crate::ops::{logsumexp, ReduceOp};
use crate::tensor::TensorAtom;
use crate::terms::{Term, TermKind};

/// Collapses the mixture over `v` of `exp(t + g)` into one Gaussian with the
/// same mass, mean and covariance. Returns the log-mass correction and the
/// matched Gaussian; a missing `t` means equal weights.
pub fn moment_match(t: Option<&TensorAtom>, g: &GaussianAtom, v: &Name) -> Result<(TensorAtom, GaussianAtom)> {
    let n = g
        .batch()
        .get(v)
        .or_else(|| t.and_then(|t| t.context().get(v)))
        .and_then(|ty| ty.bound())
        .ok_or_else(|| FunsorError::NameAbsent(v.clone()))?;
    let mut outer = g.batch().clone();
    if let Some(t) = t {
        outer = outer.union(t.context())?;
    }
    let outer = outer.without(std::slice::from_ref(v));
    let full = outer.with(v.clone(), FunsorType::Bounded(n))?;
    let gx = g.expand_batch(&full)?;
    let tx = match t {
        Some(t) => t.expand_to(&full)?,
        None => TensorAtom::zeros(full.clone()),
    };
    let slices = gx.slices();
    let weights = tx.data().as_slice().expect("standard layout").to_vec();
    let d = g.dim();

    let mut masses = Vec::with_capacity(slices.len() / n);
    let mut matched = Vec::with_capacity(slices.len() / n);
    for (b, chunk) in slices.chunks(n).enumerate() {
        let mut logits = Vec::with_capacity(n);
        let mut means = Vec::with_capacity(n);
        let mut covs = Vec::with_capacity(n);
        for (k, (i, p)) in chunk.iter().enumerate() {
            let chol = jittered_cholesky(p)?;
            let mean = chol.solve(i);
            let cov = chol.solve(&DMatrix::identity(d, d));
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            let log_z = 0.5 * d as f64 * LOG_2PI - 0.5 * logdet + 0.5 * i.dot(&mean);
            logits.push(weights[b * n + k] + log_z);
            means.push(mean);
            covs.push(cov);
        }
        let log_mass = logsumexp(&logits);
        let w: Vec<f64> = if log_mass == f64::NEG_INFINITY {
            vec![1.0 / n as f64; n]
        } else {
            logits.iter().map(|l| (l - log_mass).exp()).collect()
        };
        let mu = means.iter().zip(&w).fold(DVector::zeros(d), |acc, (m, wk)| acc + m * *wk);
        let mut sigma = DMatrix::zeros(d, d);
        for ((m, c), wk) in means.iter().zip(&covs).zip(&w) {
            let dm = m - &mu;
            sigma += (c + &dm * dm.transpose()) * *wk;
        }
        let chol = jittered_cholesky(&sigma)?;
        let prec = chol.solve(&DMatrix::identity(d, d));
        let info = &prec * &mu;
        let logdet_sigma = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let log_z = 0.5 * d as f64 * LOG_2PI + 0.5 * logdet_sigma + 0.5 * info.dot(&mu);
        masses.push(log_mass - log_z);
        matched.push((info, prec));
    }
    let w = TensorAtom::from_vec(outer.clone(), FunsorType::scalar(), masses)?;
    let g = GaussianAtom::from_slices_unchecked(outer, g.reals().clone(), matched)?;
    Ok((w, g))
}

pub fn moment_matching_rules() -> Vec<Rule> {
    vec![Rule::post("moment_match_mixture", Head::Reduce, moment_match_rule)]
}

fn moment_match_rule(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (v, body) = match t.kind() {
        TermKind::Reduce(ReduceOp::LogSumExp, v, body) => (v, body),
        _ => return Ok(None),
    };
    if !body.output()?.is_scalar_real() {
        return Ok(None);
    }
    let nf = NormalForm::from_term(body)?;
    let g = match &nf.gaussian {
        Some(g) if g.batch().contains(v) => g,
        _ => return Ok(None),
    };
    if !nf.is_closed_form() || nf.deltas.iter().any(|d| d.context().contains(v)) {
        return Ok(None);
    }
    let (w, g) = moment_match(nf.tensor.as_ref(), g, v)?;
    let out = NormalForm { deltas: nf.deltas.clone(), tensor: Some(w), gaussian: Some(g), lazy_rest: vec![] };
    Ok(Some(out.to_term()))
}

pub fn monte_carlo_rules() -> Vec<Rule> {
    vec![
        Rule::post("sample_discrete", Head::Reduce, sample_discrete_rule),
        Rule::post("sample_gaussian", Head::Reduce, sample_gaussian_rule),
    ]
}

/// Batch context extended by the particle variable, when there is one.
fn sample_batch(ev: &Evaluator, ctx: &TypeContext) -> Result<TypeContext> {
    match ev.particle() {
        Some((p, n)) if !ctx.contains(p) => ctx.with(p.clone(), FunsorType::Bounded(*n)),
        _ => Ok(ctx.clone()),
    }
}

/// Replaces the reduction of `v` by a reduction against a sampled point mass.
fn resample(v: &Name, delta: DeltaAtom, rest: NormalForm, weight: TensorAtom) -> Term {
    let dice = TensorAtom::scalar(0.0);
    let inner = Term::reduce(ReduceOp::LogSumExp, v.clone(), &(Term::from(delta) + rest.to_term()));
    Term::from(weight) + Term::from(dice) + inner
}

fn reducible_body(t: &Term) -> Result<Option<(Name, NormalForm)>> {
    let (v, body) = match t.kind() {
        TermKind::Reduce(ReduceOp::LogSumExp, v, body) => (v, body),
        _ => return Ok(None),
    };
    if !body.output()?.is_scalar_real() {
        return Ok(None);
    }
    let nf = NormalForm::from_term(body)?;
    if nf.deltas.iter().any(|d| d.context().contains(v)) {
        return Ok(None);
    }
    Ok(Some((v.clone(), nf)))
}

/// Draws one index per batch slice from the categorical with logits `logits`
/// over `v`. Returns the log normalizer and the sample.
pub fn mc_sample_discrete(
    logits: &TensorAtom,
    v: &Name,
    batch: &TypeContext,
    rng: &mut impl Rng,
) -> Result<(TensorAtom, TensorAtom)> {
    let n = logits.context().get(v).and_then(|t| t.bound()).ok_or_else(|| FunsorError::NameAbsent(v.clone()))?;
    let full = batch.with(v.clone(), FunsorType::Bounded(n))?;
    let flat = logits.expand_to(&full)?;
    let data = flat.data().as_slice().expect("standard layout");
    let mut norms = Vec::with_capacity(data.len() / n);
    let mut picks = Vec::with_capacity(data.len() / n);
    for chunk in data.chunks(n) {
        let z = logsumexp(chunk);
        norms.push(z);
        if z == f64::NEG_INFINITY {
            picks.push(0.0);
            continue;
        }
        let probs: Vec<f64> = chunk.iter().map(|l| (l - z).exp()).collect();
        let dist = WeightedIndex::new(&probs).map_err(|e| FunsorError::DomainError(e.to_string()))?;
        picks.push(dist.sample(rng) as f64);
    }
    Ok((
        TensorAtom::from_vec(batch.clone(), FunsorType::scalar(), norms)?,
        TensorAtom::from_vec(batch.clone(), FunsorType::Bounded(n), picks)?,
    ))
}

fn sample_discrete_rule(ev: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (v, nf) = match reducible_body(t)? {
        Some(x) => x,
        None => return Ok(None),
    };
    let n = match nf.context().get(&v) {
        Some(FunsorType::Bounded(n)) => *n,
        _ => return Ok(None),
    };
    let vctx = TypeContext::single(v.clone(), FunsorType::Bounded(n));
    let (logits, rest_tensor) = match &nf.tensor {
        Some(x) if x.context().contains(&v) => (x.clone(), None),
        other => (TensorAtom::zeros(vctx), other.clone()),
    };
    let batch = sample_batch(ev, &logits.context().without(std::slice::from_ref(&v)))?;
    let (weight, point) = mc_sample_discrete(&logits, &v, &batch, &mut ev.next_rng())?;
    let rest = NormalForm { tensor: rest_tensor, ..nf };
    Ok(Some(resample(&v, DeltaAtom::new(v.clone(), point)?, rest, weight)))
}

/// Draws `μ + L⁻ᵀε` per batch slice, with `Λ = LLᵀ`. Returns the log
/// normalizer and the sample.
pub fn mc_sample_gaussian(
    g: &GaussianAtom,
    batch: &TypeContext,
    rng: &mut impl Rng,
) -> Result<(TensorAtom, TensorAtom)> {
    let ty = match g.reals().entries() {
        [(_, t)] => t.clone(),
        _ => return Err(FunsorError::Intractable("sampling a Gaussian over several real variables".into())),
    };
    let gx = g.expand_batch(batch)?;
    let d = g.dim();
    let mut vals = Vec::with_capacity(gx.num_slices() * d);
    for (i, p) in gx.slices() {
        let chol = jittered_cholesky(&p)?;
        let mean = chol.solve(&i);
        let eps = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let lt = chol.l().transpose();
        let offset = lt.solve_upper_triangular(&eps).expect("triangular factor is invertible");
        vals.extend((mean + offset).iter());
    }
    let norm = gx.log_normalizer()?;
    Ok((norm, TensorAtom::from_vec(batch.clone(), ty, vals)?))
}

fn sample_gaussian_rule(ev: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (v, nf) = match reducible_body(t)? {
        Some(x) => x,
        None => return Ok(None),
    };
    let g = match &nf.gaussian {
        Some(g) if g.reals().len() == 1 && g.reals().contains(&v) => g.clone(),
        _ => return Ok(None),
    };
    let batch = sample_batch(ev, g.batch())?;
    let (weight, point) = mc_sample_gaussian(&g, &batch, &mut ev.next_rng())?;
    let rest = NormalForm { gaussian: None, ..nf };
    Ok(Some(resample(&v, DeltaAtom::new(v.clone(), point)?, rest, weight)))
}

/// Per-particle log estimates of a closed term under Monte Carlo.
pub fn monte_carlo_particles(t: &Term, seed: u64, samples: usize) -> Result<Vec<f64>> {
    let ev = Evaluator::new(Interp::MonteCarlo, EvalConfig { seed, samples, ..EvalConfig::default() });
    let out = ev.run(t)?;
    let x = out.as_tensor().ok_or_else(|| FunsorError::Intractable(format!("Monte Carlo left a lazy term: {out}")))?;
    match ev.particle() {
        Some((p, n)) if x.context().contains(p) => {
            Ok(x.expand_to(&TypeContext::single(p.clone(), FunsorType::Bounded(*n)))?.data().iter().copied().collect())
        }
        Some((_, n)) => Ok(vec![x.value().unwrap_or(f64::NAN); *n]),
        None => Ok(vec![x.value().unwrap_or(f64::NAN)]),
    }
}

/// `log mean exp` of the particle estimates.
pub fn monte_carlo_estimate(t: &Term, seed: u64, samples: usize) -> Result<f64> {
    let xs = monte_carlo_particles(t, seed, samples)?;
    Ok(logsumexp(&xs) - (xs.len() as f64).ln())
}
