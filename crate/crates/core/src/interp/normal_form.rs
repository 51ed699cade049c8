//! Finitary products in log space: zero or more deltas, at most one tensor, at
//! most one Gaussian, and whatever could not be absorbed.

use crate::delta::DeltaAtom;
use crate::domains::{FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::gaussian::GaussianAtom;
use crate::ops::{LiftedOp, ReduceOp};
use crate::tensor::TensorAtom;
use crate::terms::{rename_free, Term, TermKind};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormalForm {
    pub deltas: Vec<DeltaAtom>,
    pub tensor: Option<TensorAtom>,
    pub gaussian: Option<GaussianAtom>,
    pub lazy_rest: Vec<Term>,
}

/// Leaves of a tree of scalar log-space sums.
pub fn flatten_sum(t: &Term) -> Vec<Term> {
    let mut out = Vec::new();
    collect(t, &mut out);
    out
}

fn collect(t: &Term, out: &mut Vec<Term>) {
    match t.kind() {
        TermKind::Apply(LiftedOp::Add, args) if args.len() == 2 && is_scalar(t) => {
            collect(&args[0], out);
            collect(&args[1], out);
        }
        _ => out.push(t.clone()),
    }
}

fn is_scalar(t: &Term) -> bool {
    matches!(t.output(), Ok(ty) if ty.is_scalar_real())
}

impl NormalForm {
    pub fn from_tensor(t: TensorAtom) -> NormalForm {
        NormalForm { tensor: Some(t), ..Default::default() }
    }

    pub fn from_gaussian(g: GaussianAtom) -> NormalForm {
        NormalForm { gaussian: Some(g), ..Default::default() }
    }

    /// Flattens a (typically already evaluated) sum and absorbs its leaves.
    pub fn from_term(t: &Term) -> Result<NormalForm> {
        let mut nf = NormalForm::default();
        for part in flatten_sum(t) {
            nf.absorb(part)?;
        }
        Ok(nf)
    }

    pub fn is_closed_form(&self) -> bool {
        self.lazy_rest.is_empty()
    }

    pub fn num_parts(&self) -> usize {
        self.deltas.len() + self.tensor.is_some() as usize + self.gaussian.is_some() as usize + self.lazy_rest.len()
    }

    pub fn context(&self) -> TypeContext {
        let mut ctx = TypeContext::empty();
        for d in &self.deltas {
            ctx = ctx.union(&d.context()).expect("consistent normal form");
        }
        if let Some(t) = &self.tensor {
            ctx = ctx.union(t.context()).expect("consistent normal form");
        }
        if let Some(g) = &self.gaussian {
            ctx = ctx.union(&g.context()).expect("consistent normal form");
        }
        for l in &self.lazy_rest {
            ctx = ctx.union(l.free_vars()).expect("consistent normal form");
        }
        ctx
    }

    /// Deltas, then the tensor, then the Gaussian, then the lazy parts, as a
    /// left-nested sum. The empty product is the ground scalar `0`.
    pub fn to_term(&self) -> Term {
        let parts = self
            .deltas
            .iter()
            .map(|d| Term::from(d.clone()))
            .chain(self.tensor.iter().map(|t| Term::from(t.clone())))
            .chain(self.gaussian.iter().map(|g| Term::from(g.clone())))
            .chain(self.lazy_rest.iter().cloned());
        Term::sum_all(parts).unwrap_or_else(|| Term::scalar(0.0))
    }

    fn add_tensor(&mut self, t: TensorAtom) -> Result<()> {
        self.tensor = Some(match self.tensor.take() {
            None => t,
            Some(s) => TensorAtom::binary(LiftedOp::Add, &s, &t)?,
        });
        Ok(())
    }

    fn add_gaussian(&mut self, g: GaussianAtom) -> Result<()> {
        self.gaussian = Some(match self.gaussian.take() {
            None => g,
            Some(h) => GaussianAtom::fuse(&h, &g)?,
        });
        Ok(())
    }

    /// Adds one part, applying the substitutions triggered by deltas on both sides.
    pub fn absorb(&mut self, part: Term) -> Result<()> {
        match part.kind() {
            TermKind::Tensor(t) if t.output().is_scalar_real() => {
                let t = self.deltas.iter().try_fold(t.clone(), |acc, d| subst_tensor(&acc, d))?;
                self.add_tensor(t)
            }
            TermKind::Gaussian(g) => {
                let mut g = Some(g.clone());
                for d in &self.deltas.clone() {
                    if let Some(h) = g.take() {
                        let (c, rest) = subst_gaussian(&h, d)?;
                        if let Some(c) = c {
                            self.add_tensor(c)?;
                        }
                        g = rest;
                    }
                }
                match g {
                    Some(g) => self.add_gaussian(g),
                    None => Ok(()),
                }
            }
            TermKind::Delta(d) => self.add_delta(d.clone()),
            _ => {
                let mut part = part;
                for d in &self.deltas {
                    if part.has_free(d.name()) {
                        part = Term::subst(&part, vec![(d.name().clone(), d.point().clone().into())]);
                    }
                }
                self.lazy_rest.push(part);
                Ok(())
            }
        }
    }

    fn add_delta(&mut self, d: DeltaAtom) -> Result<()> {
        let mut d = d;
        for e in &self.deltas.clone() {
            if e.name() == d.name() {
                // Two point masses on one variable: keep the first, weight by agreement.
                let ind = e.indicator(d.point())?;
                return self.add_tensor(ind);
            }
            if d.point().context().contains(e.name()) {
                d = d.index(e.name(), e.point())?;
            }
        }
        let v = d.name().clone();
        if let Some(t) = self.tensor.take() {
            self.tensor = Some(subst_tensor(&t, &d)?);
        }
        if let Some(g) = self.gaussian.take() {
            let (c, rest) = subst_gaussian(&g, &d)?;
            self.gaussian = rest;
            if let Some(c) = c {
                self.add_tensor(c)?;
            }
        }
        for e in self.deltas.iter_mut() {
            if e.point().context().contains(&v) {
                *e = e.index(&v, d.point())?;
            }
        }
        for l in self.lazy_rest.iter_mut() {
            if l.has_free(&v) {
                *l = Term::subst(l, vec![(v.clone(), d.point().clone().into())]);
            }
        }
        self.deltas.push(d);
        Ok(())
    }

    pub fn add(&self, other: &NormalForm) -> Result<NormalForm> {
        let mut nf = self.clone();
        for d in &other.deltas {
            nf.absorb(d.clone().into())?;
        }
        if let Some(t) = &other.tensor {
            nf.absorb(t.clone().into())?;
        }
        if let Some(g) = &other.gaussian {
            nf.absorb(g.clone().into())?;
        }
        for l in &other.lazy_rest {
            nf.absorb(l.clone())?;
        }
        Ok(nf)
    }

    /// Reduces `v` when the result stays in closed form. `Ok(None)` means the
    /// reduction is not available exactly (e.g. a Gaussian mixture).
    pub fn reduce(&self, op: ReduceOp, v: &Name) -> Result<Option<NormalForm>> {
        let ctx = self.context();
        let vty = match ctx.get(v) {
            Some(t) => t.clone(),
            None => return Ok(Some(self.clone())),
        };
        if self.lazy_rest.iter().any(|l| l.has_free(v)) {
            return Ok(None);
        }
        if self.deltas.iter().any(|d| d.point().context().contains(v)) {
            return Ok(None);
        }
        if op == ReduceOp::Add && !self.deltas.is_empty() {
            return Ok(None);
        }
        let mut out = NormalForm::default();
        let mut lazy = self.lazy_rest.clone();
        if op == ReduceOp::Add {
            let n = vty.bound().expect("typing rejects plates over reals") as f64;
            lazy = lazy.into_iter().map(|l| &Term::scalar(n) * &l).collect();
        }

        if let Some(k) = self.deltas.iter().position(|d| d.name() == v) {
            if op == ReduceOp::Add || (op == ReduceOp::Max && vty.is_real()) {
                return Ok(None);
            }
            // The remaining parts no longer mention v; the point mass integrates to one.
            let d = &self.deltas[k];
            out.deltas = self.deltas.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, e)| e.clone()).collect();
            out.tensor = self.tensor.clone();
            out.gaussian = self.gaussian.clone();
            out.add_tensor(TensorAtom::zeros(d.point().context().clone()))?;
            out.lazy_rest = lazy;
            return Ok(Some(out));
        }
        out.deltas = self.deltas.clone();
        out.lazy_rest = lazy;

        match vty {
            FunsorType::Real(_) => {
                let g = match &self.gaussian {
                    Some(g) if g.reals().contains(v) => g,
                    _ => return Ok(None),
                };
                let (w, rest) = g.marginalize(std::slice::from_ref(v))?;
                out.tensor = self.tensor.clone();
                out.gaussian = rest;
                out.add_tensor(w)?;
            }
            FunsorType::Bounded(n) => {
                let in_gauss = self.gaussian.as_ref().is_some_and(|g| g.batch().contains(v));
                match op {
                    ReduceOp::Add => {
                        out.gaussian = match &self.gaussian {
                            Some(g) if in_gauss => Some(g.plate(v)?),
                            Some(g) => Some(g.scale(n as f64)),
                            None => None,
                        };
                        out.tensor = match &self.tensor {
                            Some(t) if t.context().contains(v) => Some(t.reduce(op, v)?),
                            Some(t) => Some(t.map(|x| x * n as f64)),
                            None => None,
                        };
                    }
                    _ => {
                        if in_gauss {
                            return Ok(None);
                        }
                        out.gaussian = self.gaussian.clone();
                        out.tensor = match &self.tensor {
                            Some(t) if t.context().contains(v) => Some(t.reduce(op, v)?),
                            _ => return Ok(None),
                        };
                    }
                }
            }
        }
        Ok(Some(out))
    }

    pub fn reduce_all(&self, op: ReduceOp, vars: &[Name]) -> Result<Option<NormalForm>> {
        let mut nf = self.clone();
        for v in vars {
            match nf.reduce(op, v)? {
                Some(n) => nf = n,
                None => return Ok(None),
            }
        }
        Ok(Some(nf))
    }

    pub fn rename(&self, old: &Name, new: &Name) -> Result<NormalForm> {
        Ok(NormalForm {
            deltas: self.deltas.iter().map(|d| d.rename(old, new)).collect::<Result<_>>()?,
            tensor: self.tensor.as_ref().map(|t| t.rename(old, new)).transpose()?,
            gaussian: self.gaussian.as_ref().map(|g| g.rename(old, new)).transpose()?,
            lazy_rest: self.lazy_rest.iter().map(|l| rename_free(l, old, new)).collect::<Result<_>>()?,
        })
    }

    /// Substitutes an integer-valued atom for a discrete variable.
    pub fn index(&self, v: &Name, idx: &TensorAtom) -> Result<NormalForm> {
        let mut nf = NormalForm::default();
        for d in &self.deltas {
            let d2 = if d.point().context().contains(v) { d.index(v, idx)? } else { d.clone() };
            nf.deltas.push(d2);
        }
        nf.tensor = match &self.tensor {
            Some(t) if t.context().contains(v) => Some(t.index(v, idx)?),
            t => t.clone(),
        };
        nf.gaussian = match &self.gaussian {
            Some(g) if g.batch().contains(v) => Some(g.index(v, idx)?),
            g => g.clone(),
        };
        nf.lazy_rest = self
            .lazy_rest
            .iter()
            .map(|l| if l.has_free(v) { Term::subst(l, vec![(v.clone(), idx.clone().into())]) } else { l.clone() })
            .collect();
        Ok(nf)
    }

    /// Strided slice along a discrete variable present in every closed-form part.
    pub fn slice(&self, v: &Name, start: usize, stop: usize, stride: usize) -> Result<NormalForm> {
        if !self.lazy_rest.is_empty() || !self.deltas.is_empty() {
            return Err(FunsorError::Intractable("slicing a normal form with lazy or delta parts".into()));
        }
        let n = self.context().get(v).and_then(|t| t.bound()).ok_or_else(|| FunsorError::NameAbsent(v.clone()))?;
        let full = TypeContext::single(v.clone(), FunsorType::Bounded(n));
        let tensor = match &self.tensor {
            Some(t) => Some(expand_with(t, &full)?.slice(v, start, stop, stride)?),
            None => None,
        };
        let gaussian = match &self.gaussian {
            Some(g) => {
                let batch = g.batch().union(&full)?;
                Some(g.expand_batch(&batch)?.slice(v, start, stop, stride)?)
            }
            None => None,
        };
        Ok(NormalForm { deltas: vec![], tensor, gaussian, lazy_rest: vec![] })
    }

    /// Concatenates closed-form parts along `v`. Missing tensors are zero and
    /// missing Gaussians are the flat Gaussian over the same reals.
    pub fn cat(v: &Name, parts: &[NormalForm]) -> Result<NormalForm> {
        if parts.iter().any(|p| !p.lazy_rest.is_empty() || !p.deltas.is_empty()) {
            return Err(FunsorError::Intractable("concatenating lazy or delta parts".into()));
        }
        let ctxs: Vec<TypeContext> = parts.iter().map(|p| p.context()).collect();
        let mut shared = TypeContext::empty();
        for c in &ctxs {
            shared = shared.union(&c.without(std::slice::from_ref(v)))?;
        }
        let discrete = shared.discrete();
        let reals = shared.reals();
        let mut tensors = Vec::new();
        let mut gaussians = Vec::new();
        for (p, c) in parts.iter().zip(&ctxs) {
            let n = c.get(v).and_then(|t| t.bound()).ok_or_else(|| FunsorError::NameAbsent(v.clone()))?;
            let full = TypeContext::single(v.clone(), FunsorType::Bounded(n)).union(&discrete)?;
            let t = p.tensor.clone().unwrap_or_else(|| TensorAtom::zeros(TypeContext::empty()));
            tensors.push(expand_with(&t, &full)?);
            if !reals.is_empty() {
                let g = match &p.gaussian {
                    Some(g) => g.embed(&reals)?,
                    None => flat_gaussian(&reals)?,
                };
                gaussians.push(g.expand_batch(&full)?);
            }
        }
        let tensor = TensorAtom::cat(v, &tensors.iter().collect::<Vec<_>>())?;
        let gaussian = if gaussians.is_empty() {
            None
        } else {
            Some(GaussianAtom::cat(v, &gaussians.iter().collect::<Vec<_>>())?)
        };
        Ok(NormalForm { deltas: vec![], tensor: Some(tensor), gaussian, lazy_rest: vec![] })
    }
}

/// Tensor expanded so that its context also covers `extra`.
fn expand_with(t: &TensorAtom, extra: &TypeContext) -> Result<TensorAtom> {
    let ctx = t.context().union(extra)?;
    t.expand_to(&ctx)
}

/// The Gaussian with `i = 0`, `Λ = 0`: the log-space unit over the given reals.
pub fn flat_gaussian(reals: &TypeContext) -> Result<GaussianAtom> {
    let d: usize = reals.iter().map(|(_, t)| t.num_elements()).sum();
    GaussianAtom::from_slices(
        TypeContext::empty(),
        reals.clone(),
        &[(nalgebra::DVector::zeros(d), nalgebra::DMatrix::zeros(d, d))],
    )
}

fn subst_tensor(t: &TensorAtom, d: &DeltaAtom) -> Result<TensorAtom> {
    if t.context().contains(d.name()) {
        t.index(d.name(), d.point())
    } else {
        Ok(t.clone())
    }
}

fn subst_gaussian(g: &GaussianAtom, d: &DeltaAtom) -> Result<(Option<TensorAtom>, Option<GaussianAtom>)> {
    if g.reals().contains(d.name()) {
        let (c, rest) = g.substitute(&[(d.name().clone(), d.point())])?;
        Ok((Some(c), rest))
    } else if g.batch().contains(d.name()) {
        Ok((None, Some(g.index(d.name(), d.point())?)))
    } else {
        Ok((None, Some(g.clone())))
    }
}
