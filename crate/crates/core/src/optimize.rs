//! Variable elimination: reductions are distributed into log-space sums and the
//! factors are contracted pairwise along a greedy low-cost order.

use crate::domains::{FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::interp::normal_form::{flatten_sum, NormalForm};
use crate::interp::{Evaluator, Head, Interp, Rule};
use crate::ops::ReduceOp;
use crate::terms::{Term, TermKind};

/// Pairwise contraction steps. Leaves are numbered `0..n` in input order and the
/// result of step `k` gets id `n + k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContractionPlan {
    pub num_factors: usize,
    pub steps: Vec<PlanStep>,
    pub estimated_cost: u128,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanStep {
    pub fuse: (usize, usize),
    pub reduce: Vec<Name>,
    pub cost: u128,
}

/// Memory proxy for a context: discrete bounds times `(d + 1)²` per real variable.
pub fn context_cost(ctx: &TypeContext) -> u128 {
    ctx.iter()
        .map(|(_, t)| match t {
            FunsorType::Bounded(n) => *n as u128,
            FunsorType::Real(_) => {
                let d = t.num_elements() as u128 + 1;
                d * d
            }
        })
        .product()
}

/// Reduces each variable that occurs in exactly one factor inside that factor.
/// Returns the new factors and the variables still to eliminate.
pub fn push_singleton_sums(op: ReduceOp, factors: Vec<Term>, vars: &[Name]) -> (Vec<Term>, Vec<Name>) {
    let ctxs: Vec<TypeContext> = factors.iter().map(|f| f.free_vars().clone()).collect();
    let (private, residual) = split_private(&ctxs, vars);
    let factors = factors
        .into_iter()
        .zip(private)
        .map(|(f, p)| if p.is_empty() { f } else { Term::reduce_all(op, &p, &f) })
        .collect();
    (factors, residual)
}

/// Per-factor private variables (reals first) and the shared remainder.
fn split_private(ctxs: &[TypeContext], vars: &[Name]) -> (Vec<Vec<Name>>, Vec<Name>) {
    let mut private = vec![Vec::new(); ctxs.len()];
    let mut residual = Vec::new();
    for v in vars {
        let owners: Vec<usize> = (0..ctxs.len()).filter(|&k| ctxs[k].contains(v)).collect();
        match owners.as_slice() {
            [k] => private[*k].push(v.clone()),
            _ => residual.push(v.clone()),
        }
    }
    for (p, c) in private.iter_mut().zip(ctxs) {
        *p = reals_first(c, p);
    }
    (private, residual)
}

fn reals_first(ctx: &TypeContext, vars: &[Name]) -> Vec<Name> {
    let is_real = |v: &Name| ctx.get(v).is_some_and(|t| t.is_real());
    vars.iter().filter(|v| is_real(v)).chain(vars.iter().filter(|v| !is_real(v))).cloned().collect()
}

pub fn greedy_plan(factors: &[Term], vars: &[Name]) -> ContractionPlan {
    let ctxs: Vec<TypeContext> = factors.iter().map(|f| f.free_vars().clone()).collect();
    plan_contexts(&ctxs, vars)
}

/// Greedy pairing over factor contexts. Each step fuses the pair whose fused and
/// reduced context is cheapest, ties going to the lowest index pair; the fused
/// factor takes the position of the first.
pub fn plan_contexts(ctxs: &[TypeContext], vars: &[Name]) -> ContractionPlan {
    let n = ctxs.len();
    let mut active: Vec<(usize, TypeContext)> = ctxs.iter().cloned().enumerate().collect();
    let mut remaining: Vec<Name> = vars.to_vec();
    let mut steps = Vec::new();
    let mut total = 0u128;
    while active.len() > 1 {
        let mut best: Option<(u128, usize, usize, TypeContext, Vec<Name>)> = None;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let fused = active[a].1.union(&active[b].1).expect("factors share types");
                let reduce: Vec<Name> = remaining
                    .iter()
                    .filter(|v| fused.contains(v))
                    .filter(|v| !active.iter().enumerate().any(|(k, (_, c))| k != a && k != b && c.contains(v)))
                    .cloned()
                    .collect();
                let out = fused.without(&reduce);
                let cost = context_cost(&out);
                if best.as_ref().is_none_or(|(c, ..)| cost < *c) {
                    best = Some((cost, a, b, fused, reduce));
                }
            }
        }
        let (cost, a, b, fused, reduce) = best.expect("at least one pair");
        let reduce = reals_first(&fused, &reduce);
        steps.push(PlanStep { fuse: (active[a].0, active[b].0), reduce: reduce.clone(), cost });
        total += cost;
        remaining.retain(|v| !reduce.contains(v));
        active[a] = (n + steps.len() - 1, fused.without(&reduce));
        active.remove(b);
    }
    ContractionPlan { num_factors: n, steps, estimated_cost: total }
}

/// Runs the plan under Exact. The leftover variables of a single-factor plan
/// are reduced at the end.
pub fn execute_plan(
    ev: &Evaluator,
    op: ReduceOp,
    plan: &ContractionPlan,
    factors: Vec<Term>,
    leftover: &[Name],
) -> Result<Term> {
    let mut slots: Vec<Option<Term>> = factors.into_iter().map(Some).collect();
    for step in &plan.steps {
        let a = slots[step.fuse.0].take().expect("each id used once");
        let b = slots[step.fuse.1].take().expect("each id used once");
        let fused = Term::reduce_all(op, &step.reduce, &(a + b));
        slots.push(Some(ev.eval_under(Interp::Exact, &fused)?));
    }
    let last = slots.into_iter().rev().flatten().next().unwrap_or_else(|| Term::scalar(0.0));
    let vars: Vec<Name> = leftover.iter().filter(|v| last.has_free(v)).cloned().collect();
    if vars.is_empty() {
        return Ok(last);
    }
    let ordered = reals_first(last.free_vars(), &vars);
    ev.eval_under(Interp::Exact, &Term::reduce_all(op, &ordered, &last))
}

/// Contracts normal forms and eliminates `vars`, reals before discretes.
pub fn contract(op: ReduceOp, factors: Vec<NormalForm>, vars: &[Name]) -> Result<NormalForm> {
    let ctxs: Vec<TypeContext> = factors.iter().map(|f| f.context()).collect();
    let (private, residual) = split_private(&ctxs, vars);
    let mut slots = Vec::with_capacity(factors.len());
    for (f, p) in factors.into_iter().zip(&private) {
        slots.push(Some(reduce_or_fail(&f, op, p)?));
    }
    let ctxs: Vec<TypeContext> = slots.iter().map(|f| f.as_ref().expect("present").context()).collect();
    let plan = plan_contexts(&ctxs, &residual);
    for step in &plan.steps {
        let a = slots[step.fuse.0].take().expect("each id used once");
        let b = slots[step.fuse.1].take().expect("each id used once");
        slots.push(Some(reduce_or_fail(&a.add(&b)?, op, &step.reduce)?));
    }
    Ok(slots.into_iter().rev().flatten().next().unwrap_or_default())
}

fn reduce_or_fail(nf: &NormalForm, op: ReduceOp, vars: &[Name]) -> Result<NormalForm> {
    nf.reduce_all(op, vars)?
        .ok_or_else(|| FunsorError::Intractable(format!("cannot eliminate {vars:?} in closed form")))
}

pub fn rules() -> Vec<Rule> {
    vec![Rule::pre("optimize_reduce_chain", Head::Reduce, optimize_reduce)]
}

fn contains_reduce(t: &Term) -> bool {
    matches!(t.kind(), TermKind::Reduce(..)) || t.children().into_iter().any(contains_reduce)
}

/// `Σ_V e₁ + ⋯ + eₙ`: collects the chain of same-op reductions, evaluates the
/// factors, pushes private sums inward and contracts the rest greedily.
fn optimize_reduce(ev: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let op = match t.kind() {
        TermKind::Reduce(op @ (ReduceOp::LogSumExp | ReduceOp::Max), ..) => *op,
        _ => return Ok(None),
    };
    let mut vars = Vec::new();
    let mut body = t;
    while let TermKind::Reduce(o, v, b) = body.kind() {
        if *o != op {
            break;
        }
        vars.push(v.clone());
        body = b;
    }
    if !body.output()?.is_scalar_real() {
        return Ok(None);
    }
    let parts = flatten_sum(body);
    if parts.len() < 2 {
        return Ok(None);
    }
    let factors = parts.iter().map(|p| ev.eval(p)).collect::<Result<Vec<_>>>()?;
    let (factors, residual) = push_singleton_sums(op, factors, &vars);
    let factors = factors.iter().map(|f| ev.eval_under(Interp::Exact, f)).collect::<Result<Vec<_>>>()?;
    let plan = greedy_plan(&factors, &residual);
    let out = execute_plan(ev, op, &plan, factors, &residual)?;
    if contains_reduce(&out) {
        return Ok(None);
    }
    Ok(Some(out))
}
