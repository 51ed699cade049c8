//! Lazy rules: substitution is pushed towards the leaves and nothing is computed.

use super::{Evaluator, Head, Rule};
use crate::domains::Name;
use crate::error::Result;
use crate::terms::{alpha_rename, check_markov_subst, rename_free, Term, TermKind};

pub fn rules() -> Vec<Rule> {
    vec![
        Rule::post("subst_drop_absent", Head::Subst, drop_absent),
        Rule::post("subst_split", Head::Subst, split),
        Rule::post("subst_variable", Head::Subst, variable),
        Rule::post("subst_apply", Head::Subst, push_apply),
        Rule::post("subst_reduce", Head::Subst, push_reduce),
        Rule::post("subst_markov", Head::Subst, push_markov),
        Rule::post("subst_cat", Head::Subst, push_cat),
    ]
}

fn parts(t: &Term) -> (&Term, &[(Name, Term)]) {
    match t.kind() {
        TermKind::Subst(base, bs) => (base, bs),
        _ => unreachable!("registered for Subst"),
    }
}

/// `e[v := x] → e` when `v` is not free in `e`.
fn drop_absent(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (base, bs) = parts(t);
    let live: Vec<(Name, Term)> = bs.iter().filter(|(n, _)| base.has_free(n)).cloned().collect();
    if live.len() == bs.len() {
        return Ok(None);
    }
    if live.is_empty() {
        return Ok(Some(base.clone()));
    }
    Ok(Some(Term::subst(base, live)))
}

/// Simultaneous bindings become nested single bindings. When a value mentions a
/// bound name the bound names are first renamed apart.
fn split(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (base, bs) = parts(t);
    if bs.len() < 2 {
        return Ok(None);
    }
    let clash = bs.iter().any(|(_, v)| bs.iter().any(|(n, _)| v.has_free(n)));
    let mut base = base.clone();
    let mut seq = Vec::with_capacity(bs.len());
    for (n, v) in bs {
        if clash {
            let fresh = Name::fresh(n);
            base = rename_free(&base, n, &fresh)?;
            seq.push((fresh, v.clone()));
        } else {
            seq.push((n.clone(), v.clone()));
        }
    }
    Ok(Some(seq.into_iter().fold(base, |acc, b| Term::subst(&acc, vec![b]))))
}

fn variable(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (base, bs) = parts(t);
    if let TermKind::Variable(n, _) = base.kind() {
        if let Some((_, v)) = bs.iter().find(|(m, _)| m == n) {
            return Ok(Some(v.clone()));
        }
    }
    Ok(None)
}

fn push_apply(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (base, bs) = parts(t);
    match base.kind() {
        TermKind::Apply(op, args) => {
            Ok(Some(Term::apply(*op, args.iter().map(|a| Term::subst(a, bs.to_vec())).collect())))
        }
        _ => Ok(None),
    }
}

fn push_reduce(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (base, bs) = parts(t);
    let v = match base.kind() {
        TermKind::Reduce(_, v, _) => v,
        _ => return Ok(None),
    };
    let base = if bs.iter().any(|(_, e)| e.has_free(v)) { alpha_rename(base)? } else { base.clone() };
    match base.kind() {
        TermKind::Reduce(op, v, body) => Ok(Some(Term::reduce(*op, v.clone(), &Term::subst(body, bs.to_vec())))),
        _ => unreachable!(),
    }
}

fn push_markov(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (base, bs) = parts(t);
    let (time, steps) = match base.kind() {
        TermKind::MarkovProd { time, steps, .. } => (time, steps),
        _ => return Ok(None),
    };
    check_markov_subst(time, steps, bs)?;
    let base = if bs.iter().any(|(_, e)| e.has_free(time)) { alpha_rename(base)? } else { base.clone() };
    match base.kind() {
        TermKind::MarkovProd { time, steps, sum_op, body } => {
            Ok(Some(Term::markov(time.clone(), steps.clone(), *sum_op, &Term::subst(body, bs.to_vec()))))
        }
        _ => unreachable!(),
    }
}

fn push_cat(_: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (base, bs) = parts(t);
    match base.kind() {
        TermKind::Cat(over, ps) if bs.iter().all(|(n, _)| n != over) => {
            Ok(Some(Term::cat(over.clone(), ps.iter().map(|p| Term::subst(p, bs.to_vec())).collect())))
        }
        _ => Ok(None),
    }
}
