//! Information-form Gaussian factors over real-array variables, batched over
//! discrete variables.
//!
//! A [`GaussianAtom`] represents the log-density `g(x) = iᵀx − ½ xᵀΛx` of the
//! flattened concatenation `x` of its real variables. It stores no constant, so
//! `g(0) = 0`; normalizers live in [`TensorAtom`] factors next to it.

pub mod affine;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::IxDyn;

use crate::domains::{Assignment, FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::ops::{LiftedOp, ReduceOp};
use crate::tensor::{increment, TensorAtom};

pub(crate) const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianAtom {
    reals: TypeContext,
    /// Batch context `Γ_d`, output `ℝ^D`.
    info: TensorAtom,
    /// Same batch context as `info`, output `ℝ^{D×D}`.
    precision: TensorAtom,
}

/// Moment-form parameters of one batch slice.
#[derive(Clone, Debug)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianAtom {
    /// Builds an atom from batched arrays. The precision is symmetrized and
    /// checked to be positive semidefinite in every batch slice.
    pub fn new(reals: TypeContext, info: TensorAtom, precision: TensorAtom) -> Result<GaussianAtom> {
        let g = GaussianAtom::assemble(reals, info, precision)?;
        let slices = g.slices();
        for (k, (_, p)) in slices.iter().enumerate() {
            check_psd(p).map_err(|_| {
                FunsorError::TypeError(format!("precision of batch slice {k} is not positive semidefinite"))
            })?;
        }
        Ok(g)
    }

    fn assemble(reals: TypeContext, info: TensorAtom, precision: TensorAtom) -> Result<GaussianAtom> {
        if reals.is_empty() {
            return Err(FunsorError::TypeError("a Gaussian needs at least one real variable".into()));
        }
        if let Some((n, t)) = reals.iter().find(|(_, t)| !t.is_real()) {
            return Err(FunsorError::TypeError(format!("Gaussian real entry `{n}` has type {t}")));
        }
        if let Some((n, _)) = reals.iter().find(|(n, _)| info.context().contains(n)) {
            return Err(FunsorError::TypeError(format!("`{n}` is both a batch and a real variable")));
        }
        let d = dim_of(&reals);
        if info.output() != &FunsorType::Real(vec![d]) {
            return Err(FunsorError::TypeError(format!(
                "information vector has type {} but the reals need ℝ^{d}",
                info.output()
            )));
        }
        if precision.output() != &FunsorType::Real(vec![d, d]) {
            return Err(FunsorError::TypeError(format!(
                "precision has type {} but the reals need ℝ^{d}×{d}",
                precision.output()
            )));
        }
        let precision = precision.permute_to(info.context())?;
        let sym = symmetrize(precision.data().view(), d);
        let precision = TensorAtom::new(info.context().clone(), precision.output().clone(), sym)?;
        Ok(GaussianAtom { reals, info, precision })
    }

    /// Builds an atom from per-slice parameters listed in row-major batch order.
    pub fn from_slices(
        batch: TypeContext,
        reals: TypeContext,
        slices: &[(DVector<f64>, DMatrix<f64>)],
    ) -> Result<GaussianAtom> {
        let d = dim_of(&reals);
        let mut iv = Vec::with_capacity(slices.len() * d);
        let mut pv = Vec::with_capacity(slices.len() * d * d);
        for (i, p) in slices {
            iv.extend(i.iter());
            for r in 0..d {
                for c in 0..d {
                    pv.push(p[(r, c)]);
                }
            }
        }
        let info = TensorAtom::from_vec(batch.clone(), FunsorType::Real(vec![d]), iv)?;
        let precision = TensorAtom::from_vec(batch, FunsorType::Real(vec![d, d]), pv)?;
        GaussianAtom::new(reals, info, precision)
    }

    pub(crate) fn from_slices_unchecked(
        batch: TypeContext,
        reals: TypeContext,
        slices: Vec<(DVector<f64>, DMatrix<f64>)>,
    ) -> Result<GaussianAtom> {
        let d = dim_of(&reals);
        let mut iv = Vec::with_capacity(slices.len() * d);
        let mut pv = Vec::with_capacity(slices.len() * d * d);
        for (i, p) in &slices {
            iv.extend(i.iter());
            for r in 0..d {
                for c in 0..d {
                    pv.push(0.5 * (p[(r, c)] + p[(c, r)]));
                }
            }
        }
        let info = TensorAtom::from_vec(batch.clone(), FunsorType::Real(vec![d]), iv)?;
        let precision = TensorAtom::from_vec(batch, FunsorType::Real(vec![d, d]), pv)?;
        Ok(GaussianAtom { reals, info, precision })
    }

    /// An unbatched atom over a single real variable.
    pub fn single(name: Name, ty: FunsorType, info: DVector<f64>, precision: DMatrix<f64>) -> Result<GaussianAtom> {
        GaussianAtom::from_slices(TypeContext::empty(), TypeContext::single(name, ty), &[(info, precision)])
    }

    pub fn batch(&self) -> &TypeContext {
        self.info.context()
    }

    pub fn reals(&self) -> &TypeContext {
        &self.reals
    }

    /// Batch variables first, then real variables.
    pub fn context(&self) -> TypeContext {
        self.batch().union(&self.reals).expect("disjoint batch and reals")
    }

    pub fn info(&self) -> &TensorAtom {
        &self.info
    }

    pub fn precision(&self) -> &TensorAtom {
        &self.precision
    }

    /// Flattened real dimension `D`.
    pub fn dim(&self) -> usize {
        dim_of(&self.reals)
    }

    /// Offset range of a real variable inside the flattened vector.
    pub fn real_range(&self, name: &Name) -> Option<std::ops::Range<usize>> {
        let mut off = 0;
        for (n, t) in self.reals.iter() {
            let k = t.num_elements();
            if n == name {
                return Some(off..off + k);
            }
            off += k;
        }
        None
    }

    pub fn num_slices(&self) -> usize {
        self.batch().num_assignments()
    }

    /// Per-slice `(i, Λ)` in row-major batch order.
    pub fn slices(&self) -> Vec<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let iv = self.info.data().as_slice().expect("standard layout");
        let pv = self.precision.data().as_slice().expect("standard layout");
        (0..self.num_slices())
            .map(|b| {
                (
                    DVector::from_row_slice(&iv[b * d..(b + 1) * d]),
                    DMatrix::from_row_slice(d, d, &pv[b * d * d..(b + 1) * d * d]),
                )
            })
            .collect()
    }

    /// `iᵀx − ½ xᵀΛx` at a ground assignment of all batch and real variables.
    pub fn eval(&self, point: &Assignment) -> Result<f64> {
        let bix = TensorAtom::batch_index(self.batch(), point)?;
        let mut x = Vec::with_capacity(self.dim());
        for (n, t) in self.reals.iter() {
            let v = point.get(n).ok_or_else(|| FunsorError::MissingAssignment(n.clone()))?;
            if v.len() != t.num_elements() {
                return Err(FunsorError::TypeError(format!(
                    "`{n}` needs {} values, got {}",
                    t.num_elements(),
                    v.len()
                )));
            }
            x.extend_from_slice(v);
        }
        let x = DVector::from_vec(x);
        let d = self.dim();
        let i = DVector::from_iterator(d, self.info.slice_at(&bix).iter().copied());
        let p = DMatrix::from_row_iterator(d, d, self.precision.slice_at(&bix).iter().copied());
        Ok(i.dot(&x) - 0.5 * x.dot(&(&p * &x)))
    }

    /// Re-expresses the atom over a superset of its real variables, zero-padding.
    pub fn embed(&self, reals: &TypeContext) -> Result<GaussianAtom> {
        if self.reals == *reals {
            return Ok(self.clone());
        }
        if !self.reals.is_subset(reals) {
            return Err(FunsorError::ContextMismatch(format!("cannot embed reals {} into {}", self.reals, reals)));
        }
        let target = GaussianAtom { reals: reals.clone(), info: self.info.clone(), precision: self.precision.clone() };
        let map: Vec<usize> = self.reals.names().flat_map(|n| target.real_range(n).expect("subset")).collect();
        let d2 = dim_of(reals);
        let slices = self
            .slices()
            .into_iter()
            .map(|(i, p)| {
                let mut i2 = DVector::zeros(d2);
                let mut p2 = DMatrix::zeros(d2, d2);
                for (a, &ma) in map.iter().enumerate() {
                    i2[ma] = i[a];
                    for (b, &mb) in map.iter().enumerate() {
                        p2[(ma, mb)] = p[(a, b)];
                    }
                }
                (i2, p2)
            })
            .collect();
        GaussianAtom::from_slices_unchecked(self.batch().clone(), reals.clone(), slices)
    }

    /// Product of two Gaussians: information vectors and precisions add.
    pub fn fuse(a: &GaussianAtom, b: &GaussianAtom) -> Result<GaussianAtom> {
        a.context().union(&b.context())?;
        let reals = a.reals.union(&b.reals)?;
        let a = a.embed(&reals)?;
        let b = b.embed(&reals)?;
        Ok(GaussianAtom {
            reals,
            info: TensorAtom::binary(LiftedOp::Add, &a.info, &b.info)?,
            precision: TensorAtom::binary(LiftedOp::Add, &a.precision, &b.precision)?,
        })
    }

    /// Integrates out the named real variables. Returns the log-normalizer over
    /// the batch and the Gaussian over the remaining reals, if any.
    pub fn marginalize(&self, names: &[Name]) -> Result<(TensorAtom, Option<GaussianAtom>)> {
        let mut vix = Vec::new();
        for n in names {
            let r = self.real_range(n).ok_or_else(|| FunsorError::NameAbsent(n.clone()))?;
            vix.extend(r);
        }
        let uix: Vec<usize> = (0..self.dim()).filter(|k| !vix.contains(k)).collect();
        let dv = vix.len();
        let mut weights = Vec::with_capacity(self.num_slices());
        let mut rest = Vec::with_capacity(self.num_slices());
        for (i, p) in self.slices() {
            let pvv = p.select_rows(&vix).select_columns(&vix);
            let iv = i.select_rows(&vix);
            let chol = jittered_cholesky(&pvv)?;
            let sol = chol.solve(&iv);
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            weights.push(0.5 * dv as f64 * LOG_2PI - 0.5 * logdet + 0.5 * iv.dot(&sol));
            if !uix.is_empty() {
                let puv = p.select_rows(&uix).select_columns(&vix);
                let puu = p.select_rows(&uix).select_columns(&uix);
                let x = chol.solve(&puv.transpose());
                let i2 = i.select_rows(&uix) - &puv * &sol;
                let p2 = puu - &puv * x;
                rest.push((i2, p2));
            }
        }
        let w = TensorAtom::from_vec(self.batch().clone(), FunsorType::scalar(), weights)?;
        if uix.is_empty() {
            return Ok((w, None));
        }
        let reals = self.reals.without(names);
        Ok((w, Some(GaussianAtom::from_slices_unchecked(self.batch().clone(), reals, rest)?)))
    }

    /// `log ∫ exp g(x) dx` per batch slice.
    pub fn log_normalizer(&self) -> Result<TensorAtom> {
        let names: Vec<Name> = self.reals.names().cloned().collect();
        Ok(self.marginalize(&names)?.0)
    }

    /// Applies the change of variables `x = M y + b` where `y` ranges over
    /// `new_reals`. `batch` must contain the atom's batch; `maps` lists one
    /// `(M, b)` per slice of `batch` in row-major order. Returns the constant
    /// `iᵀb − ½ bᵀΛb` and the Gaussian over `y` (absent when `y` is empty).
    pub fn transform(
        &self,
        batch: &TypeContext,
        new_reals: &TypeContext,
        maps: &[(DMatrix<f64>, DVector<f64>)],
    ) -> Result<(TensorAtom, Option<GaussianAtom>)> {
        let expanded = self.expand_batch(batch)?;
        let mut consts = Vec::with_capacity(maps.len());
        let mut out = Vec::with_capacity(maps.len());
        for ((i, p), (m, b)) in expanded.slices().into_iter().zip(maps) {
            let pb = &p * b;
            consts.push(i.dot(b) - 0.5 * b.dot(&pb));
            if !new_reals.is_empty() {
                let i2 = m.transpose() * (&i - &pb);
                let p2 = m.transpose() * &p * m;
                out.push((i2, p2));
            }
        }
        let c = TensorAtom::from_vec(batch.clone(), FunsorType::scalar(), consts)?;
        if new_reals.is_empty() {
            return Ok((c, None));
        }
        Ok((c, Some(GaussianAtom::from_slices_unchecked(batch.clone(), new_reals.clone(), out)?)))
    }

    /// Substitutes ground (possibly batched) values for some real variables.
    pub fn substitute(&self, bindings: &[(Name, &TensorAtom)]) -> Result<(TensorAtom, Option<GaussianAtom>)> {
        let mut batch = self.batch().clone();
        for (n, x) in bindings {
            let ty = self.reals.get(n).ok_or_else(|| FunsorError::NameAbsent(n.clone()))?;
            if x.output() != ty {
                return Err(FunsorError::TypeError(format!(
                    "cannot substitute a value of type {} for `{n}`: {ty}",
                    x.output()
                )));
            }
            batch = batch.union(x.context())?;
        }
        let names: Vec<Name> = bindings.iter().map(|(n, _)| n.clone()).collect();
        let new_reals = self.reals.without(&names);
        let d = self.dim();
        let d2 = dim_of(&new_reals);
        let mut m = DMatrix::zeros(d, d2);
        let mut col = 0;
        for (n, _) in new_reals.iter() {
            for r in self.real_range(n).expect("present") {
                m[(r, col)] = 1.0;
                col += 1;
            }
        }
        let values: Vec<(std::ops::Range<usize>, ndarray::ArrayD<f64>)> = bindings
            .iter()
            .map(|(n, x)| Ok((self.real_range(n).expect("present"), x.expand(&batch, x.out_shape())?)))
            .collect::<Result<_>>()?;
        let slices = batch.num_assignments();
        let maps: Vec<_> = (0..slices)
            .map(|s| {
                let mut b = DVector::zeros(d);
                for (range, vals) in &values {
                    let k = range.len();
                    let flat = vals.as_slice().expect("standard layout");
                    for (j, r) in range.clone().enumerate() {
                        b[r] = flat[s * k + j];
                    }
                }
                (m.clone(), b)
            })
            .collect();
        self.transform(&batch, &new_reals, &maps)
    }

    /// Plated product over a batch variable: sums `i` and `Λ` along its axis.
    pub fn plate(&self, name: &Name) -> Result<GaussianAtom> {
        Ok(GaussianAtom {
            reals: self.reals.clone(),
            info: self.info.reduce(ReduceOp::Add, name)?,
            precision: self.precision.reduce(ReduceOp::Add, name)?,
        })
    }

    /// The atom raised to a nonnegative power `k` (log-density scaled by `k`).
    pub fn scale(&self, k: f64) -> GaussianAtom {
        GaussianAtom {
            reals: self.reals.clone(),
            info: self.info.map(|x| k * x),
            precision: self.precision.map(|x| k * x),
        }
    }

    /// Substitutes an integer-valued atom for a batch variable.
    pub fn index(&self, name: &Name, idx: &TensorAtom) -> Result<GaussianAtom> {
        if idx.context().iter().any(|(n, _)| self.reals.contains(n)) {
            return Err(FunsorError::TypeError("index context collides with real variables".into()));
        }
        let info = self.info.index(name, idx)?;
        let precision = self.precision.index(name, idx)?.permute_to(info.context())?;
        Ok(GaussianAtom { reals: self.reals.clone(), info, precision })
    }

    pub fn rename(&self, old: &Name, new: &Name) -> Result<GaussianAtom> {
        if old == new {
            return Ok(self.clone());
        }
        if self.context().contains(new) && self.context().contains(old) {
            return Err(FunsorError::TypeConflict {
                name: new.clone(),
                left: self.context().get(new).cloned().expect("present"),
                right: self.context().get(old).cloned().expect("present"),
            });
        }
        Ok(GaussianAtom {
            reals: self.reals.rename(old, new),
            info: self.info.rename(old, new)?,
            precision: self.precision.rename(old, new)?,
        })
    }

    /// Broadcasts the parameters over a larger batch context.
    pub fn expand_batch(&self, batch: &TypeContext) -> Result<GaussianAtom> {
        if self.batch() == batch {
            return Ok(self.clone());
        }
        if let Some((n, _)) = batch.iter().find(|(n, _)| self.reals.contains(n)) {
            return Err(FunsorError::TypeError(format!("`{n}` is a real variable of the Gaussian")));
        }
        Ok(GaussianAtom {
            reals: self.reals.clone(),
            info: self.info.expand_to(batch)?,
            precision: self.precision.expand_to(batch)?,
        })
    }

    /// Strided slice of a batch variable.
    pub fn slice(&self, name: &Name, start: usize, stop: usize, stride: usize) -> Result<GaussianAtom> {
        Ok(GaussianAtom {
            reals: self.reals.clone(),
            info: self.info.slice(name, start, stop, stride)?,
            precision: self.precision.slice(name, start, stop, stride)?,
        })
    }

    /// Concatenation along a batch variable; the parts must share their reals.
    pub fn cat(name: &Name, parts: &[&GaussianAtom]) -> Result<GaussianAtom> {
        let first = parts.first().ok_or_else(|| FunsorError::ContextMismatch("cat of zero parts".into()))?;
        let mut infos = Vec::new();
        let mut precs = Vec::new();
        for p in parts {
            if !p.reals.set_eq(&first.reals) {
                return Err(FunsorError::ContextMismatch(format!(
                    "cat parts have reals {} and {}",
                    first.reals, p.reals
                )));
            }
            let p = p.embed(&first.reals)?;
            infos.push(p.info);
            precs.push(p.precision);
        }
        let info = TensorAtom::cat(name, &infos.iter().collect::<Vec<_>>())?;
        let precision = TensorAtom::cat(name, &precs.iter().collect::<Vec<_>>())?.permute_to(info.context())?;
        Ok(GaussianAtom { reals: first.reals.clone(), info, precision })
    }

    /// Mean and covariance of each slice. Requires full-rank precision.
    pub fn moments(&self) -> Result<Vec<Moments>> {
        self.slices()
            .into_iter()
            .map(|(i, p)| {
                let chol = jittered_cholesky(&p)?;
                Ok(Moments { mean: chol.solve(&i), cov: chol.solve(&DMatrix::identity(p.nrows(), p.nrows())) })
            })
            .collect()
    }

    /// Number of floats allocated for the parameters.
    pub fn allocated_len(&self) -> usize {
        self.info.data().len() + self.precision.data().len()
    }
}

pub(crate) fn dim_of(reals: &TypeContext) -> usize {
    reals.iter().map(|(_, t)| t.num_elements()).sum()
}

fn symmetrize(p: ndarray::ArrayViewD<'_, f64>, d: usize) -> ndarray::ArrayD<f64> {
    let shape = p.shape().to_vec();
    let flat: Vec<f64> = p.iter().copied().collect();
    let mut out = flat.clone();
    for s in 0..flat.len() / (d * d).max(1) {
        let base = s * d * d;
        for r in 0..d {
            for c in 0..d {
                out[base + r * d + c] = 0.5 * (flat[base + r * d + c] + flat[base + c * d + r]);
            }
        }
    }
    ndarray::ArrayD::from_shape_vec(IxDyn(&shape), out).expect("same shape")
}

fn check_psd(p: &DMatrix<f64>) -> Result<()> {
    if p.iter().any(|x| !x.is_finite()) {
        return Err(FunsorError::TypeError("non-finite precision".into()));
    }
    let scale = p.diagonal().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-8 * scale;
    let shifted = p + DMatrix::identity(p.nrows(), p.nrows()) * eps;
    Cholesky::new(shifted).map(|_| ()).ok_or_else(|| FunsorError::TypeError("not positive semidefinite".into()))
}

/// Cholesky factorization with one retry at `+1e-10·mean(diag)·I`.
pub fn jittered_cholesky(p: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(p.clone()) {
        return Ok(c);
    }
    let n = p.nrows();
    let mean = p.diagonal().iter().sum::<f64>() / n.max(1) as f64;
    let jitter = 1e-10 * mean.abs();
    Cholesky::new(p + DMatrix::identity(n, n) * jitter)
        .ok_or_else(|| FunsorError::RankDeficient(format!("Cholesky failed for a {n}×{n} precision block")))
}

/// Iterates over the row-major assignments of a discrete context.
pub(crate) fn batch_assignments(ctx: &TypeContext) -> Vec<Vec<usize>> {
    let shape = ctx.bounds();
    let total: usize = shape.iter().product();
    let mut ix = vec![0usize; shape.len()];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push(ix.clone());
        increment(&mut ix, &shape);
    }
    out
}
