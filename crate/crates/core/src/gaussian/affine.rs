//! Substitution of affine expressions into Gaussians.
//!
//! Affinity is decided by a structural check. The coefficients are then
//! recovered by probing: once at zero for the constant and once per unit
//! vector of every real input, the unit vectors batched along a fresh
//! discrete variable.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{batch_assignments, dim_of, GaussianAtom};
use crate::domains::{FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::ops::LiftedOp;
use crate::tensor::TensorAtom;
use crate::terms::{Term, TermKind};

fn has_real_free(t: &Term) -> bool {
    t.free_vars().iter().any(|(_, ty)| ty.is_real())
}

fn is_constant(t: &Term) -> bool {
    match t.kind() {
        TermKind::Tensor(_) => true,
        TermKind::Variable(_, ty) => !ty.is_real(),
        TermKind::Apply(_, args) => args.iter().all(is_constant),
        _ => false,
    }
}

/// Sound but incomplete affinity check. Leaves are real variables and tensors;
/// inner nodes are add, sub, neg, take with a constant index, and products with
/// a constant factor.
pub fn is_affine(t: &Term) -> bool {
    if !has_real_free(t) {
        return is_constant(t);
    }
    match t.kind() {
        TermKind::Variable(_, ty) => ty.is_real(),
        TermKind::Apply(LiftedOp::Add | LiftedOp::Sub, args) => args.iter().all(is_affine),
        TermKind::Apply(LiftedOp::Neg, args) => is_affine(&args[0]),
        TermKind::Apply(LiftedOp::Take, args) => {
            is_affine(&args[0]) && !has_real_free(&args[1]) && is_constant(&args[1])
        }
        TermKind::Apply(LiftedOp::Mul, args) => {
            let (a, b) = (&args[0], &args[1]);
            (!has_real_free(a) && is_constant(a) && is_affine(b))
                || (!has_real_free(b) && is_constant(b) && is_affine(a))
        }
        _ => false,
    }
}

/// Evaluates a constant-or-affine expression with the real inputs bound to tensors.
fn eval(t: &Term, env: &BTreeMap<Name, TensorAtom>) -> Result<TensorAtom> {
    match t.kind() {
        TermKind::Tensor(x) => Ok(x.clone()),
        TermKind::Variable(n, FunsorType::Bounded(k)) => Ok(TensorAtom::arange(n.clone(), *k)),
        TermKind::Variable(n, _) => env.get(n).cloned().ok_or_else(|| FunsorError::MissingAssignment(n.clone())),
        TermKind::Apply(op, args) => {
            let vals = args.iter().map(|a| eval(a, env)).collect::<Result<Vec<_>>>()?;
            TensorAtom::apply(*op, &vals.iter().collect::<Vec<_>>())
        }
        _ => Err(FunsorError::NotAffine(format!("cannot probe {t}"))),
    }
}

/// `g[v := expr]` for an affine `expr`. Returns the constant produced by the
/// change of variables and the Gaussian over the remaining and new reals.
pub fn affine_substitute(g: &GaussianAtom, v: &Name, expr: &Term) -> Result<(TensorAtom, Option<GaussianAtom>)> {
    let vty = g.reals().get(v).ok_or_else(|| FunsorError::NameAbsent(v.clone()))?.clone();
    let ety = expr.output()?;
    if ety != vty {
        return Err(FunsorError::TypeError(format!("cannot substitute a value of type {ety} for `{v}`: {vty}")));
    }
    if !is_affine(expr) {
        return Err(FunsorError::NotAffine(format!("{expr} is not affine in its real inputs")));
    }
    let inputs = expr.free_vars().reals();
    let zeros: BTreeMap<Name, TensorAtom> = inputs
        .iter()
        .map(|(n, ty)| (n.clone(), TensorAtom::filled(TypeContext::empty(), ty.clone(), 0.0).expect("real type")))
        .collect();
    let constant = eval(expr, &zeros)?;

    // One coefficient block per input: column k is expr(e_k) − expr(0).
    let mut coefs = Vec::with_capacity(inputs.len());
    for (u, uty) in inputs.iter() {
        let probe = Name::fresh(&Name::from("probe"));
        let mut env = zeros.clone();
        env.insert(u.clone(), unit_vectors(&probe, uty)?);
        let col = TensorAtom::binary(LiftedOp::Sub, &eval(expr, &env)?, &constant)?;
        coefs.push((probe, col));
    }

    let mut batch = g.batch().union(constant.context())?;
    for (p, c) in &coefs {
        batch = batch.union(&c.context().without(std::slice::from_ref(p)))?;
    }
    let mut new_reals = g.reals().without(std::slice::from_ref(v));
    for (u, ty) in inputs.iter() {
        if !new_reals.contains(u) {
            new_reals = new_reals.with(u.clone(), ty.clone())?;
        }
    }
    let old_d = dim_of(g.reals());
    let new_d = dim_of(&new_reals);
    let dv = vty.num_elements();
    let vrange = g.real_range(v).expect("v is real");
    let offsets = |ctx: &TypeContext, name: &Name| {
        let mut off = 0;
        for (n, t) in ctx.iter() {
            if n == name {
                return off;
            }
            off += t.num_elements();
        }
        unreachable!("name present")
    };

    let constant = constant.expand_to(&batch)?;
    let coefs: Vec<TensorAtom> = coefs
        .iter()
        .map(|(p, c)| {
            let full = batch.with(p.clone(), c.context().get(p).cloned().expect("probe in context"))?;
            c.expand_to(&full)
        })
        .collect::<Result<_>>()?;

    let mut maps = Vec::new();
    for ix in batch_assignments(&batch) {
        let mut m = DMatrix::zeros(old_d, new_d);
        let mut b = DVector::zeros(old_d);
        for (n, t) in g.reals().iter() {
            if n == v {
                continue;
            }
            let (r0, c0) = (offsets(g.reals(), n), offsets(&new_reals, n));
            for k in 0..t.num_elements() {
                m[(r0 + k, c0 + k)] = 1.0;
            }
        }
        let c = constant.slice_at(&ix);
        for (k, x) in c.iter().enumerate() {
            b[vrange.start + k] = *x;
        }
        for ((u, uty), a) in inputs.iter().zip(&coefs) {
            let c0 = offsets(&new_reals, u);
            for j in 0..uty.num_elements() {
                let mut jx = ix.clone();
                jx.push(j);
                let col = a.slice_at(&jx);
                for (r, x) in col.iter().enumerate().take(dv) {
                    m[(vrange.start + r, c0 + j)] += *x;
                }
            }
        }
        maps.push((m, b));
    }
    g.transform(&batch, &new_reals, &maps)
}

/// `Tensor(p, e_p)`: the unit vectors of a real type batched along `p`.
fn unit_vectors(p: &Name, ty: &FunsorType) -> Result<TensorAtom> {
    let d = ty.num_elements();
    let ctx = TypeContext::single(p.clone(), FunsorType::Bounded(d));
    let mut vals = vec![0.0; d * d];
    for k in 0..d {
        vals[k * d + k] = 1.0;
    }
    TensorAtom::from_vec(ctx, ty.clone(), vals)
}
