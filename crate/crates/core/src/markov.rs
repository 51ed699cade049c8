//! Markov products: the sequential recursion and the parallel scan that halves
//! the time axis once per level.

use crate::domains::{FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::interp::normal_form::NormalForm;
use crate::interp::{EvalConfig, Evaluator, Interp, ScanMode};
use crate::ops::ReduceOp;
use crate::optimize::contract;
use crate::tensor::TensorAtom;
use crate::terms::{StepMatching, Term, TermKind};

/// Checks that the matching is one-to-one, avoids the time variable, and pairs
/// identically typed names that are free in `body`.
pub fn validate_step(body: &Term, time: &Name, steps: &StepMatching) -> Result<()> {
    StepMatching::new(steps.pairs().to_vec())?;
    if steps.mentions(time) {
        return Err(FunsorError::InvalidMatching {
            condition: "time variable not matched",
            detail: format!("`{time}` appears in {steps}"),
        });
    }
    let fv = body.free_vars();
    for (p, c) in steps.pairs() {
        match (fv.get(p), fv.get(c)) {
            (Some(a), Some(b)) if a == b => {}
            (Some(a), Some(b)) => {
                return Err(FunsorError::InvalidMatching {
                    condition: "identically typed",
                    detail: format!("`{p}`: {a} but `{c}`: {b}"),
                })
            }
            _ => {
                return Err(FunsorError::InvalidMatching {
                    condition: "matched names free in body",
                    detail: format!("`{p}` or `{c}` is not free in the body"),
                })
            }
        }
    }
    Ok(())
}

fn ground_index(k: usize, n: usize) -> TensorAtom {
    TensorAtom::from_vec(TypeContext::empty(), FunsorType::Bounded(n), vec![k as f64]).expect("index in range")
}

/// Makes sure the time variable appears in the normal form.
fn with_time(body: &NormalForm, time: &Name, n: usize) -> Result<NormalForm> {
    let mut nf = body.clone();
    if !nf.context().contains(time) {
        nf.absorb(TensorAtom::zeros(TypeContext::single(time.clone(), FunsorType::Bounded(n))).into())?;
    }
    Ok(nf)
}

fn fresh_names(steps: &StepMatching) -> Vec<Name> {
    steps.prevs().map(Name::fresh).collect()
}

/// Def A.1 by induction on time: the prefix's current names and the next
/// step's previous names are renamed to fresh names and eliminated.
pub fn markov_sequential_nf(
    body: &NormalForm,
    time: &Name,
    n: usize,
    steps: &StepMatching,
    op: ReduceOp,
) -> Result<NormalForm> {
    let body = with_time(body, time, n)?;
    let mut acc = body.index(time, &ground_index(0, n))?;
    for k in 1..n {
        let w = fresh_names(steps);
        let mut next = body.index(time, &ground_index(k, n))?;
        for ((p, c), w) in steps.pairs().iter().zip(&w) {
            acc = acc.rename(c, w)?;
            next = next.rename(p, w)?;
        }
        acc = contract(op, vec![acc, next], &w)?;
    }
    Ok(acc)
}

/// Algorithm 1. Returns the result and the number of contraction levels.
pub fn markov_parallel_nf(
    body: &NormalForm,
    time: &Name,
    n: usize,
    steps: &StepMatching,
    op: ReduceOp,
) -> Result<(NormalForm, usize)> {
    let mut f = with_time(body, time, n)?;
    let mut len = n;
    let mut levels = 0;
    while len > 1 {
        let half = len / 2;
        let mut even = f.slice(time, 0, 2 * half, 2)?;
        let mut odd = f.slice(time, 1, 2 * half, 2)?;
        let w = fresh_names(steps);
        for ((p, c), w) in steps.pairs().iter().zip(&w) {
            even = even.rename(c, w)?;
            odd = odd.rename(p, w)?;
        }
        let mut next = with_time(&contract(op, vec![even, odd], &w)?, time, half)?;
        if len % 2 == 1 {
            let last = f.slice(time, len - 1, len, 1)?;
            next = NormalForm::cat(time, &[next, last])?;
        }
        f = next;
        len = len.div_ceil(2);
        levels += 1;
    }
    Ok((f.index(time, &ground_index(0, 1))?, levels))
}

/// Exact rule for `MarkovProd` over a closed-form body.
pub(crate) fn markov_rule(ev: &Evaluator, t: &Term) -> Result<Option<Term>> {
    let (time, steps, op, body) = match t.kind() {
        TermKind::MarkovProd { time, steps, sum_op, body } => (time, steps, *sum_op, body),
        _ => return Ok(None),
    };
    let n = match body.free_vars().get(time) {
        Some(FunsorType::Bounded(n)) => *n,
        _ => return Ok(None),
    };
    let nf = NormalForm::from_term(body)?;
    if !nf.is_closed_form() || !nf.deltas.is_empty() {
        return Ok(None);
    }
    let out = match ev.config().scan {
        ScanMode::Sequential => {
            ev.record_levels(n - 1);
            markov_sequential_nf(&nf, time, n, steps, op)?
        }
        ScanMode::Parallel => {
            let (out, levels) = markov_parallel_nf(&nf, time, n, steps, op)?;
            ev.record_levels(levels);
            out
        }
    };
    Ok(Some(out.to_term()))
}

fn run_markov(body: &Term, time: &Name, steps: &StepMatching, op: ReduceOp, scan: ScanMode) -> Result<(Term, usize)> {
    validate_step(body, time, steps)?;
    let ev = Evaluator::new(Interp::Exact, EvalConfig { scan, ..EvalConfig::default() });
    let out = ev.run(&Term::markov(time.clone(), steps.clone(), op, body))?;
    Ok((out, ev.levels()))
}

/// The Markov product evaluated exactly by the sequential recursion.
pub fn markov_sequential(body: &Term, time: &Name, steps: &StepMatching, op: ReduceOp) -> Result<Term> {
    Ok(run_markov(body, time, steps, op, ScanMode::Sequential)?.0)
}

/// The Markov product evaluated exactly by the parallel scan, with its level count.
pub fn markov_parallel(body: &Term, time: &Name, steps: &StepMatching, op: ReduceOp) -> Result<(Term, usize)> {
    run_markov(body, time, steps, op, ScanMode::Parallel)
}

/// `⌈log₂ n⌉`, the level count of the parallel scan.
pub fn expected_levels(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}
