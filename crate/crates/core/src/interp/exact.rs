//! Exact rules: eager numerics on atoms and normal forms. Whatever they decline
//! falls through to Lazy.

use super::normal_form::NormalForm;
use super::{Evaluator, Head, Rule};
use crate::domains::{FunsorType, Name};
use crate::error::{FunsorError, Result};
use crate::gaussian::affine::affine_substitute;
use crate::ops::LiftedOp;
use crate::tensor::TensorAtom;
use crate::terms::{Term, TermKind};

pub fn rules() -> Vec<Rule> {
    vec![
        Rule::post("variable_arange", Head::Variable, variable_arange),
        Rule::post("slice_tensor", Head::Slice, slice_tensor),
        Rule::post("apply_tensors", Head::Apply, apply_tensors),
        Rule::post("apply_sum_normal_form", Head::Apply, apply_sum),
        Rule::post("apply_scale", Head::Apply, apply_scale),
        Rule::post("subst_atoms", Head::Subst, subst_atoms),
        Rule::post("reduce_normal_form", Head::Reduce, reduce_normal_form),
        Rule::post("markov_product", Head::MarkovProd, crate::markov::markov_rule),
        Rule::post("cat_tensors", Head::Cat, cat_tensors),
        Rule::post("cat_normal_form", Head::Cat, cat_normal_form),
    ]
}

fn variable_arange(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    match t.kind() {
        TermKind::Variable(n, FunsorType::Bounded(k)) => Ok(Some(TensorAtom::arange(n.clone(), *k).into())),
        _ => Ok(None),
    }
}

fn slice_tensor(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    match t.kind() {
        &TermKind::Slice { ref over, start, stop, stride, bound } => {
            let n = (stop - start).div_ceil(stride);
            let ctx = crate::domains::TypeContext::single(over.clone(), FunsorType::Bounded(n));
            let x = TensorAtom::from_fn(ctx, FunsorType::Bounded(bound), |ix| (start + stride * ix[0]) as f64)?;
            Ok(Some(x.into()))
        }
        _ => Ok(None),
    }
}

fn apply_tensors(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (op, args) = match t.kind() {
        TermKind::Apply(op, args) => (op, args),
        _ => return Ok(None),
    };
    let xs: Option<Vec<&TensorAtom>> = args.iter().map(|a| a.as_tensor()).collect();
    match xs {
        Some(xs) => Ok(Some(TensorAtom::apply(*op, &xs)?.into())),
        None => Ok(None),
    }
}

/// Log-space sums are flattened into a normal form and rebuilt.
fn apply_sum(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    if !matches!(t.kind(), TermKind::Apply(LiftedOp::Add, _)) || !t.output()?.is_scalar_real() {
        return Ok(None);
    }
    let out = NormalForm::from_term(t)?.to_term();
    Ok((out != *t).then_some(out))
}

/// `k · e` for a ground `k ≥ 0` and a closed-form `e` with a Gaussian part.
fn apply_scale(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let args = match t.kind() {
        TermKind::Apply(LiftedOp::Mul, args) => args,
        _ => return Ok(None),
    };
    let (k, e) = match (args[0].value(), args[1].value()) {
        (Some(k), _) => (k, &args[1]),
        (_, Some(k)) => (k, &args[0]),
        _ => return Ok(None),
    };
    if k < 0.0 || !e.output()?.is_scalar_real() {
        return Ok(None);
    }
    let nf = NormalForm::from_term(e)?;
    if nf.gaussian.is_none() || !nf.deltas.is_empty() || !nf.is_closed_form() {
        return Ok(None);
    }
    let out = NormalForm {
        tensor: nf.tensor.map(|x| x.map(|w| k * w)),
        gaussian: nf.gaussian.map(|g| g.scale(k)),
        ..Default::default()
    };
    Ok(Some(out.to_term()))
}

fn subst_atoms(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (base, bs) = match t.kind() {
        TermKind::Subst(base, bs) if bs.len() == 1 => (base, bs),
        _ => return Ok(None),
    };
    let (v, value) = (&bs[0].0, &bs[0].1);
    if !base.has_free(v) {
        return Ok(None);
    }
    if let TermKind::Tensor(x) = base.kind() {
        return match value.kind() {
            TermKind::Tensor(i) => Ok(Some(x.index(v, i)?.into())),
            TermKind::Variable(u, _) if !x.context().contains(u) => Ok(Some(x.rename(v, u)?.into())),
            _ => Ok(None),
        };
    }
    if !base.output()?.is_scalar_real() {
        return Ok(None);
    }
    let nf = NormalForm::from_term(base)?;
    let atoms_mention = nf.deltas.iter().any(|d| d.context().contains(v))
        || nf.tensor.as_ref().is_some_and(|x| x.context().contains(v))
        || nf.gaussian.as_ref().is_some_and(|g| g.context().contains(v));
    if !atoms_mention {
        return Ok(None);
    }
    Ok(substitute_normal_form(&nf, v, value)?.map(|n| n.to_term()))
}

/// `nf[v := value]` when the result stays in closed form on the atomic parts.
pub fn substitute_normal_form(nf: &NormalForm, v: &Name, value: &Term) -> Result<Option<NormalForm>> {
    let ctx = nf.context();
    let vty = match ctx.get(v) {
        Some(t) => t.clone(),
        None => return Ok(Some(nf.clone())),
    };
    let wrap = |l: &Term| if l.has_free(v) { Term::subst(l, vec![(v.clone(), value.clone())]) } else { l.clone() };
    match value.kind() {
        TermKind::Tensor(x) => {
            let mut out = NormalForm::default();
            for d in &nf.deltas {
                if d.name() == v {
                    out.absorb(d.indicator(x)?.into())?;
                } else if d.point().context().contains(v) {
                    out.absorb(d.index(v, x)?.into())?;
                } else {
                    out.absorb(d.clone().into())?;
                }
            }
            if let Some(s) = &nf.tensor {
                let s = if s.context().contains(v) { s.index(v, x)? } else { s.clone() };
                out.absorb(s.into())?;
            }
            if let Some(g) = &nf.gaussian {
                if g.reals().contains(v) {
                    let (c, rest) = g.substitute(&[(v.clone(), x)])?;
                    out.absorb(c.into())?;
                    if let Some(r) = rest {
                        out.absorb(r.into())?;
                    }
                } else if g.batch().contains(v) {
                    out.absorb(g.index(v, x)?.into())?;
                } else {
                    out.absorb(g.clone().into())?;
                }
            }
            for l in &nf.lazy_rest {
                out.absorb(wrap(l))?;
            }
            Ok(Some(out))
        }
        TermKind::Variable(u, _) if !ctx.contains(u) => Ok(Some(nf.rename(v, u)?)),
        _ if vty.is_real() => {
            if nf.deltas.iter().any(|d| d.name() == v) {
                return Ok(None);
            }
            let g = match &nf.gaussian {
                Some(g) if g.reals().contains(v) => g,
                _ => return Ok(None),
            };
            let (c, rest) = match affine_substitute(g, v, value) {
                Ok(r) => r,
                Err(FunsorError::NotAffine(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let mut out = NormalForm::default();
            for d in &nf.deltas {
                out.absorb(d.clone().into())?;
            }
            if let Some(s) = &nf.tensor {
                out.absorb(s.clone().into())?;
            }
            out.absorb(c.into())?;
            if let Some(r) = rest {
                out.absorb(r.into())?;
            }
            for l in &nf.lazy_rest {
                out.absorb(wrap(l))?;
            }
            Ok(Some(out))
        }
        _ => Ok(None),
    }
}

fn reduce_normal_form(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (op, v, body) = match t.kind() {
        TermKind::Reduce(op, v, body) => (op, v, body),
        _ => return Ok(None),
    };
    if let TermKind::Tensor(x) = body.kind() {
        if x.context().contains(v) {
            return Ok(Some(x.reduce(*op, v)?.into()));
        }
    }
    if !body.output()?.is_scalar_real() {
        return Ok(None);
    }
    let nf = NormalForm::from_term(body)?;
    Ok(nf.reduce(*op, v)?.map(|n| n.to_term()))
}

fn cat_tensors(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (over, parts) = match t.kind() {
        TermKind::Cat(over, parts) => (over, parts),
        _ => return Ok(None),
    };
    let xs: Option<Vec<&TensorAtom>> = parts.iter().map(|p| p.as_tensor()).collect();
    match xs {
        Some(xs) => Ok(Some(TensorAtom::cat(over, &xs)?.into())),
        None => Ok(None),
    }
}

fn cat_normal_form(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (over, parts) = match t.kind() {
        TermKind::Cat(over, parts) => (over, parts),
        _ => return Ok(None),
    };
    let mut nfs = Vec::with_capacity(parts.len());
    for p in parts {
        if !p.output()?.is_scalar_real() {
            return Ok(None);
        }
        let nf = NormalForm::from_term(p)?;
        if !nf.is_closed_form() || !nf.deltas.is_empty() {
            return Ok(None);
        }
        nfs.push(nf);
    }
    Ok(Some(NormalForm::cat(over, &nfs)?.to_term()))
}
