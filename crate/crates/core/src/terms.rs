//! The funsor term language: atoms, variables, lifted functions, substitution,
//! semiring reductions, Markov products, and the compound `Slice` and `Cat` forms.
//!
//! Terms are immutable and cheap to clone. Free variables and typing judgements
//! are computed on demand and cached per node.

use std::fmt;
use std::ops;
use std::sync::{Arc, OnceLock};

use crate::delta::DeltaAtom;
use crate::domains::{FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::gaussian::GaussianAtom;
use crate::ops::{LiftedOp, ReduceOp};
use crate::tensor::TensorAtom;

/// A one-to-one pairing of "previous" names with "current" names.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StepMatching {
    pairs: Vec<(Name, Name)>,
}

impl StepMatching {
    pub fn new(pairs: Vec<(Name, Name)>) -> Result<StepMatching> {
        let mut seen: Vec<&Name> = Vec::with_capacity(2 * pairs.len());
        for (a, b) in &pairs {
            for n in [a, b] {
                if seen.contains(&n) {
                    return Err(FunsorError::InvalidMatching {
                        condition: "one-to-one",
                        detail: format!("`{n}` occurs more than once"),
                    });
                }
                seen.push(n);
            }
        }
        Ok(StepMatching { pairs })
    }

    pub fn empty() -> StepMatching {
        StepMatching { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(Name, Name)] {
        &self.pairs
    }

    pub fn prevs(&self) -> impl Iterator<Item = &Name> {
        self.pairs.iter().map(|(p, _)| p)
    }

    pub fn currs(&self) -> impl Iterator<Item = &Name> {
        self.pairs.iter().map(|(_, c)| c)
    }

    pub fn mentions(&self, name: &Name) -> bool {
        self.pairs.iter().any(|(p, c)| p == name || c == name)
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl fmt::Display for StepMatching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, (p, c)) in self.pairs.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}→{c}")?;
        }
        f.write_str("}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TermKind {
    Tensor(TensorAtom),
    Gaussian(GaussianAtom),
    Delta(DeltaAtom),
    Variable(Name, FunsorType),
    Apply(LiftedOp, Vec<Term>),
    /// Simultaneous substitution of distinct names.
    Subst(Term, Vec<(Name, Term)>),
    Reduce(ReduceOp, Name, Term),
    /// Markov product over `time` with step matching `steps`. `sum_op` is the
    /// semiring sum used to eliminate the interior variables.
    MarkovProd {
        time: Name,
        steps: StepMatching,
        sum_op: ReduceOp,
        body: Term,
    },
    /// The integer-valued function `over ↦ start + stride·over` with values in ℤ_bound.
    Slice {
        over: Name,
        start: usize,
        stop: usize,
        stride: usize,
        bound: usize,
    },
    Cat(Name, Vec<Term>),
}

struct Node {
    kind: TermKind,
    free: OnceLock<TypeContext>,
    judgement: OnceLock<Result<(TypeContext, FunsorType)>>,
}

#[derive(Clone)]
pub struct Term(Arc<Node>);

impl PartialEq for Term {
    fn eq(&self, other: &Term) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.kind == other.0.kind
    }
}

impl From<TermKind> for Term {
    fn from(kind: TermKind) -> Term {
        Term(Arc::new(Node { kind, free: OnceLock::new(), judgement: OnceLock::new() }))
    }
}

impl From<TensorAtom> for Term {
    fn from(t: TensorAtom) -> Term {
        TermKind::Tensor(t).into()
    }
}

impl From<GaussianAtom> for Term {
    fn from(g: GaussianAtom) -> Term {
        TermKind::Gaussian(g).into()
    }
}

impl From<DeltaAtom> for Term {
    fn from(d: DeltaAtom) -> Term {
        TermKind::Delta(d).into()
    }
}

impl Term {
    pub fn kind(&self) -> &TermKind {
        &self.0.kind
    }

    pub fn scalar(x: f64) -> Term {
        TensorAtom::scalar(x).into()
    }

    pub fn variable(name: impl Into<Name>, ty: FunsorType) -> Term {
        TermKind::Variable(name.into(), ty).into()
    }

    pub fn apply(op: LiftedOp, args: Vec<Term>) -> Term {
        TermKind::Apply(op, args).into()
    }

    pub fn unary(op: LiftedOp, x: &Term) -> Term {
        Term::apply(op, vec![x.clone()])
    }

    pub fn binary(op: LiftedOp, x: &Term, y: &Term) -> Term {
        Term::apply(op, vec![x.clone(), y.clone()])
    }

    /// `take(x, i)`: index the leading dimension of `x` with `i`.
    pub fn take(x: &Term, i: &Term) -> Term {
        Term::binary(LiftedOp::Take, x, i)
    }

    pub fn exp(&self) -> Term {
        Term::unary(LiftedOp::Exp, self)
    }

    pub fn log(&self) -> Term {
        Term::unary(LiftedOp::Log, self)
    }

    pub fn logaddexp(&self, other: &Term) -> Term {
        Term::binary(LiftedOp::LogAddExp, self, other)
    }

    pub fn subst(base: &Term, bindings: Vec<(Name, Term)>) -> Term {
        TermKind::Subst(base.clone(), bindings).into()
    }

    pub fn subst1(&self, name: impl Into<Name>, value: &Term) -> Term {
        Term::subst(self, vec![(name.into(), value.clone())])
    }

    pub fn reduce(op: ReduceOp, var: impl Into<Name>, body: &Term) -> Term {
        TermKind::Reduce(op, var.into(), body.clone()).into()
    }

    /// Nested reductions, innermost first in `vars` order.
    pub fn reduce_all(op: ReduceOp, vars: &[Name], body: &Term) -> Term {
        vars.iter().fold(body.clone(), |acc, v| Term::reduce(op, v.clone(), &acc))
    }

    pub fn markov(time: impl Into<Name>, steps: StepMatching, sum_op: ReduceOp, body: &Term) -> Term {
        TermKind::MarkovProd { time: time.into(), steps, sum_op, body: body.clone() }.into()
    }

    pub fn slice(over: impl Into<Name>, start: usize, stop: usize, stride: usize, bound: usize) -> Term {
        TermKind::Slice { over: over.into(), start, stop, stride, bound }.into()
    }

    pub fn cat(over: impl Into<Name>, parts: Vec<Term>) -> Term {
        TermKind::Cat(over.into(), parts).into()
    }

    /// Left-nested log-space sum of the given terms; `None` if empty.
    pub fn sum_all(parts: impl IntoIterator<Item = Term>) -> Option<Term> {
        parts.into_iter().reduce(|a, b| &a + &b)
    }

    pub fn as_tensor(&self) -> Option<&TensorAtom> {
        match self.kind() {
            TermKind::Tensor(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianAtom> {
        match self.kind() {
            TermKind::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_delta(&self) -> Option<&DeltaAtom> {
        match self.kind() {
            TermKind::Delta(d) => Some(d),
            _ => None,
        }
    }

    pub fn is_atom(&self) -> bool {
        matches!(self.kind(), TermKind::Tensor(_) | TermKind::Gaussian(_) | TermKind::Delta(_))
    }

    /// The value of a ground real scalar tensor.
    pub fn value(&self) -> Option<f64> {
        self.as_tensor().and_then(|t| t.value())
    }

    pub fn children(&self) -> Vec<&Term> {
        match self.kind() {
            TermKind::Apply(_, args) => args.iter().collect(),
            TermKind::Subst(base, bs) => std::iter::once(base).chain(bs.iter().map(|(_, v)| v)).collect(),
            TermKind::Reduce(_, _, body) => vec![body],
            TermKind::MarkovProd { body, .. } => vec![body],
            TermKind::Cat(_, parts) => parts.iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Rebuilds the node with each child replaced by `f(child)`.
    pub fn map_children(&self, mut f: impl FnMut(&Term) -> Result<Term>) -> Result<Term> {
        Ok(match self.kind() {
            TermKind::Apply(op, args) => Term::apply(*op, args.iter().map(&mut f).collect::<Result<_>>()?),
            TermKind::Subst(base, bs) => {
                let base = f(base)?;
                let bs = bs.iter().map(|(n, v)| Ok((n.clone(), f(v)?))).collect::<Result<_>>()?;
                Term::subst(&base, bs)
            }
            TermKind::Reduce(op, v, body) => Term::reduce(*op, v.clone(), &f(body)?),
            TermKind::MarkovProd { time, steps, sum_op, body } => {
                Term::markov(time.clone(), steps.clone(), *sum_op, &f(body)?)
            }
            TermKind::Cat(over, parts) => Term::cat(over.clone(), parts.iter().map(&mut f).collect::<Result<_>>()?),
            _ => self.clone(),
        })
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    /// Free variables with their types. Conflicting types keep the first one seen;
    /// [`Term::infer_type`] reports such conflicts.
    pub fn free_vars(&self) -> &TypeContext {
        self.0.free.get_or_init(|| compute_free_vars(self))
    }

    pub fn has_free(&self, name: &Name) -> bool {
        self.free_vars().contains(name)
    }

    /// The typing judgement `Γ ⊢ t : τ`.
    pub fn infer_type(&self) -> Result<(TypeContext, FunsorType)> {
        self.0.judgement.get_or_init(|| infer(self)).clone()
    }

    pub fn output(&self) -> Result<FunsorType> {
        Ok(self.infer_type()?.1)
    }
}

fn lenient_union(a: &TypeContext, b: &TypeContext) -> TypeContext {
    let extra = b.filter(|n, _| !a.contains(n));
    a.union(&extra).expect("disjoint")
}

fn compute_free_vars(t: &Term) -> TypeContext {
    match t.kind() {
        TermKind::Tensor(a) => a.context().clone(),
        TermKind::Gaussian(g) => g.context(),
        TermKind::Delta(d) => d.context(),
        TermKind::Variable(n, ty) => TypeContext::single(n.clone(), ty.clone()),
        TermKind::Apply(_, args) => args.iter().fold(TypeContext::empty(), |acc, a| lenient_union(&acc, a.free_vars())),
        TermKind::Subst(base, bs) => {
            let fb = base.free_vars();
            let present: Vec<&(Name, Term)> = bs.iter().filter(|(n, _)| fb.contains(n)).collect();
            let names: Vec<Name> = present.iter().map(|(n, _)| n.clone()).collect();
            present.iter().fold(fb.without(&names), |acc, (_, v)| lenient_union(&acc, v.free_vars()))
        }
        TermKind::Reduce(_, v, body) => body.free_vars().without(std::slice::from_ref(v)),
        TermKind::MarkovProd { time, body, .. } => body.free_vars().without(std::slice::from_ref(time)),
        TermKind::Slice { over, start, stop, stride, .. } => {
            let len = stop.saturating_sub(*start).div_ceil((*stride).max(1)).max(1);
            TypeContext::single(over.clone(), FunsorType::Bounded(len))
        }
        TermKind::Cat(over, parts) => {
            let total: usize = parts.iter().filter_map(|p| p.free_vars().get(over).and_then(|t| t.bound())).sum();
            let mut ctx = TypeContext::empty();
            for p in parts {
                let fv = p.free_vars();
                for (n, ty) in fv.iter() {
                    if ctx.contains(n) {
                        continue;
                    }
                    let ty = if n == over { FunsorType::Bounded(total.max(1)) } else { ty.clone() };
                    ctx = ctx.with(n.clone(), ty).expect("fresh entry");
                }
            }
            ctx
        }
    }
}

fn type_error(t: &Term, msg: impl fmt::Display) -> FunsorError {
    FunsorError::TypeError(format!("{msg} in `{}`", Abbrev(t)))
}

fn rethrow(t: &Term, e: FunsorError) -> FunsorError {
    match e {
        FunsorError::TypeError(msg) => type_error(t, msg),
        e => type_error(t, e),
    }
}

fn union_typed(t: &Term, a: &TypeContext, b: &TypeContext) -> Result<TypeContext> {
    a.union(b).map_err(|e| rethrow(t, e))
}

fn infer(t: &Term) -> Result<(TypeContext, FunsorType)> {
    match t.kind() {
        TermKind::Tensor(a) => Ok((a.context().clone(), a.output().clone())),
        TermKind::Gaussian(g) => Ok((g.context(), FunsorType::scalar())),
        TermKind::Delta(d) => Ok((d.context(), FunsorType::scalar())),
        TermKind::Variable(n, ty) => Ok((TypeContext::single(n.clone(), ty.clone()), ty.clone())),
        TermKind::Apply(op, args) => {
            let mut ctx = TypeContext::empty();
            let mut tys = Vec::with_capacity(args.len());
            for a in args {
                let (c, ty) = a.infer_type()?;
                ctx = union_typed(t, &ctx, &c)?;
                tys.push(ty);
            }
            let refs: Vec<&FunsorType> = tys.iter().collect();
            let out = op.output_type(&refs).map_err(|e| rethrow(t, e))?;
            Ok((ctx, out))
        }
        TermKind::Subst(base, bs) => {
            let (bctx, out) = base.infer_type()?;
            let mut names: Vec<Name> = Vec::new();
            for (n, _) in bs {
                if names.contains(n) {
                    return Err(type_error(t, format!("`{n}` is bound twice")));
                }
                names.push(n.clone());
            }
            let mut ctx = bctx.without(&names);
            for (n, v) in bs {
                let (vctx, vty) = v.infer_type()?;
                match bctx.get(n) {
                    Some(ty) if *ty != vty => {
                        return Err(type_error(t, format!("`{n}: {ty}` cannot take a value of type {vty}")))
                    }
                    Some(_) => ctx = union_typed(t, &ctx, &vctx)?,
                    None => {}
                }
            }
            Ok((ctx, out))
        }
        TermKind::Reduce(op, v, body) => {
            let (bctx, out) = body.infer_type()?;
            if !out.is_real() {
                return Err(type_error(t, format!("reduction of a non-real body of type {out}")));
            }
            let vty =
                bctx.get(v).ok_or_else(|| type_error(t, format!("reduced variable `{v}` is not free in the body")))?;
            if vty.is_real() && *op != ReduceOp::LogSumExp {
                return Err(type_error(t, format!("{op} reduction over real variable `{v}`")));
            }
            Ok((bctx.without(std::slice::from_ref(v)), out))
        }
        TermKind::MarkovProd { time, steps, sum_op, body } => {
            let (bctx, out) = body.infer_type()?;
            if !out.is_scalar_real() {
                return Err(type_error(t, format!("Markov product of a body of type {out}")));
            }
            if *sum_op == ReduceOp::Add {
                return Err(type_error(t, "Markov product needs a semiring sum (logsumexp or max)"));
            }
            match bctx.get(time) {
                Some(FunsorType::Bounded(_)) => {}
                Some(ty) => return Err(type_error(t, format!("time variable `{time}` has type {ty}"))),
                None => return Err(type_error(t, format!("time variable `{time}` is not free in the body"))),
            }
            if steps.mentions(time) {
                return Err(FunsorError::InvalidMatching {
                    condition: "time variable not matched",
                    detail: format!("`{time}` appears in the step matching"),
                });
            }
            for (p, c) in steps.pairs() {
                match (bctx.get(p), bctx.get(c)) {
                    (Some(a), Some(b)) if a == b => {}
                    (Some(a), Some(b)) => {
                        return Err(FunsorError::InvalidMatching {
                            condition: "identically typed",
                            detail: format!("`{p}: {a}` is matched with `{c}: {b}`"),
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
            Ok((bctx.without(std::slice::from_ref(time)), out))
        }
        TermKind::Slice { over, start, stop, stride, bound } => {
            if *stride == 0 || start >= stop || stop > bound {
                return Err(type_error(t, format!("slice {start}:{stop}:{stride} outside ℤ{bound}")));
            }
            let len = (stop - start).div_ceil(*stride);
            Ok((TypeContext::single(over.clone(), FunsorType::Bounded(len)), FunsorType::Bounded(*bound)))
        }
        TermKind::Cat(over, parts) => {
            if parts.is_empty() {
                return Err(type_error(t, "concatenation of zero parts"));
            }
            let mut out: Option<FunsorType> = None;
            let mut rest = TypeContext::empty();
            let mut total = 0;
            for p in parts {
                let (c, ty) = p.infer_type()?;
                match c.get(over) {
                    Some(FunsorType::Bounded(n)) => total += n,
                    _ => return Err(type_error(t, format!("part does not range over `{over}`"))),
                }
                if let Some(o) = &out {
                    if *o != ty {
                        return Err(type_error(t, format!("parts have outputs {o} and {ty}")));
                    }
                }
                out = Some(ty);
                rest = union_typed(t, &rest, &c.without(std::slice::from_ref(over)))?;
            }
            let ctx = t.free_vars().clone();
            debug_assert!(ctx.get(over) == Some(&FunsorType::Bounded(total)));
            let ctx = TypeContext::new(
                ctx.iter().map(|(n, ty)| (n.clone(), rest.get(n).cloned().unwrap_or_else(|| ty.clone()))).collect(),
            )?;
            Ok((ctx, out.expect("nonempty")))
        }
    }
}

/// Renames the free variable `old` to `new` everywhere, including inside atoms.
/// Binders named `new` are α-renamed first.
pub fn rename_free(t: &Term, old: &Name, new: &Name) -> Result<Term> {
    if old == new || !t.has_free(old) {
        return Ok(t.clone());
    }
    Ok(match t.kind() {
        TermKind::Tensor(a) => a.rename(old, new)?.into(),
        TermKind::Gaussian(g) => g.rename(old, new)?.into(),
        TermKind::Delta(d) => d.rename(old, new)?.into(),
        TermKind::Variable(_, ty) => Term::variable(new.clone(), ty.clone()),
        TermKind::Apply(..) | TermKind::Cat(..) => t.map_children(|c| rename_free(c, old, new))?,
        TermKind::Subst(base, bs) => {
            let base = if bs.iter().any(|(n, _)| n == old) { base.clone() } else { rename_free(base, old, new)? };
            let bs = bs.iter().map(|(n, v)| Ok((n.clone(), rename_free(v, old, new)?))).collect::<Result<_>>()?;
            Term::subst(&base, bs)
        }
        TermKind::Reduce(..) | TermKind::MarkovProd { .. } => {
            let t = if binder(t) == Some(new) { alpha_rename(t)? } else { t.clone() };
            t.map_children(|c| rename_free(c, old, new))?
        }
        TermKind::Slice { start, stop, stride, bound, .. } => Term::slice(new.clone(), *start, *stop, *stride, *bound),
    })
}

fn binder(t: &Term) -> Option<&Name> {
    match t.kind() {
        TermKind::Reduce(_, v, _) => Some(v),
        TermKind::MarkovProd { time, .. } => Some(time),
        _ => None,
    }
}

/// Renames the head binder of a `Reduce` or `MarkovProd` to a fresh name.
pub fn alpha_rename(t: &Term) -> Result<Term> {
    match t.kind() {
        TermKind::Reduce(op, v, body) => {
            let fresh = Name::fresh(v);
            Ok(Term::reduce(*op, fresh.clone(), &rename_free(body, v, &fresh)?))
        }
        TermKind::MarkovProd { time, steps, sum_op, body } => {
            let fresh = Name::fresh(time);
            Ok(Term::markov(fresh.clone(), steps.clone(), *sum_op, &rename_free(body, time, &fresh)?))
        }
        _ => Err(FunsorError::TypeError(format!("`{}` has no binder to rename", Abbrev(t)))),
    }
}

/// Capture-avoiding simultaneous substitution, pushed down to the leaves.
/// Atoms and other nodes that cannot absorb a binding keep a `Subst` wrapper.
pub fn substitute(t: &Term, bindings: &[(Name, Term)]) -> Result<Term> {
    let fv = t.free_vars();
    let live: Vec<(Name, Term)> = bindings.iter().filter(|(n, _)| fv.contains(n)).cloned().collect();
    if live.is_empty() {
        return Ok(t.clone());
    }
    for (n, v) in &live {
        let want = fv.get(n).expect("live");
        let got = v.output()?;
        if *want != got {
            return Err(FunsorError::TypeError(format!("`{n}: {want}` cannot take a value of type {got}")));
        }
    }
    match t.kind() {
        TermKind::Variable(n, _) => Ok(live.iter().find(|(m, _)| m == n).expect("live").1.clone()),
        TermKind::Apply(..) => t.map_children(|c| substitute(c, &live)),
        TermKind::Reduce(_, v, _) => {
            let t = if live.iter().any(|(_, e)| e.has_free(v)) { alpha_rename(t)? } else { t.clone() };
            t.map_children(|c| substitute(c, &live))
        }
        TermKind::MarkovProd { time, steps, .. } => {
            check_markov_subst(time, steps, &live)?;
            let t = if live.iter().any(|(_, e)| e.has_free(time)) { alpha_rename(t)? } else { t.clone() };
            t.map_children(|c| substitute(c, &live))
        }
        TermKind::Subst(base, inner) => {
            // t = base[inner]; t[live] = base[inner[live], live restricted to names not bound by inner]
            let mut bs: Vec<(Name, Term)> =
                inner.iter().map(|(n, v)| Ok((n.clone(), substitute(v, &live)?))).collect::<Result<_>>()?;
            let shadow: Vec<&Name> = inner.iter().map(|(n, _)| n).collect();
            let pass: Vec<(Name, Term)> = live.iter().filter(|(n, _)| !shadow.contains(&n)).cloned().collect();
            if pass.iter().any(|(_, e)| e.free_vars().iter().any(|(m, _)| shadow.contains(&m))) {
                return Ok(Term::subst(t, live));
            }
            bs.extend(pass.into_iter().filter(|(n, _)| base.has_free(n)));
            Ok(Term::subst(base, bs))
        }
        _ => Ok(Term::subst(t, live)),
    }
}

pub(crate) fn check_markov_subst(time: &Name, steps: &StepMatching, live: &[(Name, Term)]) -> Result<()> {
    for (n, e) in live {
        if steps.mentions(n) || e.free_vars().names().any(|m| steps.mentions(m)) {
            return Err(FunsorError::InvalidMatching {
                condition: "substitution distinct from matched names",
                detail: format!("substituting `{n}` into a Markov product over `{time}` touches its step matching"),
            });
        }
    }
    Ok(())
}

macro_rules! binary_operator {
    ($trait:ident, $method:ident, $op:expr) => {
        impl ops::$trait<&Term> for &Term {
            type Output = Term;
            fn $method(self, rhs: &Term) -> Term {
                Term::binary($op, self, rhs)
            }
        }

        impl ops::$trait<Term> for Term {
            type Output = Term;
            fn $method(self, rhs: Term) -> Term {
                Term::binary($op, &self, &rhs)
            }
        }

        impl ops::$trait<&Term> for Term {
            type Output = Term;
            fn $method(self, rhs: &Term) -> Term {
                Term::binary($op, &self, rhs)
            }
        }

        impl ops::$trait<Term> for &Term {
            type Output = Term;
            fn $method(self, rhs: Term) -> Term {
                Term::binary($op, self, &rhs)
            }
        }
    };
}

binary_operator!(Add, add, LiftedOp::Add);
binary_operator!(Sub, sub, LiftedOp::Sub);
binary_operator!(Mul, mul, LiftedOp::Mul);

impl ops::Neg for &Term {
    type Output = Term;
    fn neg(self) -> Term {
        Term::unary(LiftedOp::Neg, self)
    }
}

impl ops::Neg for Term {
    type Output = Term;
    fn neg(self) -> Term {
        -&self
    }
}

fn fmt_values(f: &mut fmt::Formatter<'_>, data: &ndarray::ArrayD<f64>) -> fmt::Result {
    const SHOWN: usize = 6;
    f.write_str("[")?;
    for (k, x) in data.iter().take(SHOWN).enumerate() {
        if k > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{x}")?;
    }
    if data.len() > SHOWN {
        f.write_str(", …")?;
    }
    f.write_str("]")
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            TermKind::Tensor(a) => {
                if let Some(x) = a.value() {
                    return write!(f, "{x}");
                }
                write!(f, "Tensor({}, ", a.context())?;
                fmt_values(f, a.data())?;
                write!(f, ") : {}", a.output())
            }
            TermKind::Gaussian(g) => write!(f, "Gaussian({}, {})", g.batch(), g.reals()),
            TermKind::Delta(d) => {
                write!(f, "Delta({}, ", d.name())?;
                fmt_values(f, d.point().data())?;
                f.write_str(")")
            }
            TermKind::Variable(n, _) => write!(f, "{n}"),
            TermKind::Apply(op, args) => {
                let infix = match op {
                    LiftedOp::Add => Some("+"),
                    LiftedOp::Sub => Some("-"),
                    LiftedOp::Mul => Some("×"),
                    _ => None,
                };
                match (infix, args.as_slice()) {
                    (Some(s), [a, b]) => write!(f, "({a} {s} {b})"),
                    _ => {
                        write!(f, "{op}(")?;
                        for (k, a) in args.iter().enumerate() {
                            if k > 0 {
                                f.write_str(", ")?;
                            }
                            write!(f, "{a}")?;
                        }
                        f.write_str(")")
                    }
                }
            }
            TermKind::Subst(base, bs) => {
                write!(f, "{base}[")?;
                for (k, (n, v)) in bs.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{n} := {v}")?;
                }
                f.write_str("]")
            }
            TermKind::Reduce(op, v, body) => match op {
                ReduceOp::LogSumExp => write!(f, "Σ_{v} {body}"),
                ReduceOp::Add => write!(f, "Π_{v} {body}"),
                ReduceOp::Max => write!(f, "max_{v} {body}"),
            },
            TermKind::MarkovProd { time, steps, sum_op, body } => {
                write!(f, "Π_{time}/{steps}")?;
                if *sum_op == ReduceOp::Max {
                    f.write_str("⟨max⟩")?;
                }
                write!(f, " {body}")
            }
            TermKind::Slice { over, start, stop, stride, bound } => {
                write!(f, "Slice({over}, {start}:{stop}:{stride}, ℤ{bound})")
            }
            TermKind::Cat(over, parts) => {
                write!(f, "Cat({over}, ")?;
                for (k, p) in parts.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Display truncated to a readable length for error messages.
struct Abbrev<'a>(&'a Term);

impl fmt::Display for Abbrev<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0.to_string();
        if s.chars().count() > 120 {
            let cut: String = s.chars().take(117).collect();
            write!(f, "{cut}...")
        } else {
            f.write_str(&s)
        }
    }
}
