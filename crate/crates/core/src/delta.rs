//! Dirac point masses `Delta(v, x)`.
//!
//! The point `x` is a ground or batched [`TensorAtom`] whose output type is the
//! type of `v`. Weighted deltas are expressed as sums with a tensor factor.

use crate::domains::{FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::ops::LiftedOp;
use crate::tensor::TensorAtom;

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaAtom {
    name: Name,
    point: TensorAtom,
}

impl DeltaAtom {
    pub fn new(name: Name, point: TensorAtom) -> Result<DeltaAtom> {
        if point.context().contains(&name) {
            return Err(FunsorError::TypeError(format!("delta variable `{name}` appears in its own point")));
        }
        Ok(DeltaAtom { name, point })
    }

    pub fn name(&self) -> &Name {
        &self.name
    }

    pub fn point(&self) -> &TensorAtom {
        &self.point
    }

    pub fn var_type(&self) -> &FunsorType {
        self.point.output()
    }

    /// `(v: τ)` followed by the point's batch variables.
    pub fn context(&self) -> TypeContext {
        TypeContext::single(self.name.clone(), self.var_type().clone())
            .union(self.point.context())
            .expect("name not in point context")
    }

    pub fn rename(&self, old: &Name, new: &Name) -> Result<DeltaAtom> {
        if &self.name == old {
            DeltaAtom::new(new.clone(), self.point.clone())
        } else {
            DeltaAtom::new(self.name.clone(), self.point.rename(old, new)?)
        }
    }

    /// Substitutes an integer-valued atom for a batch variable of the point.
    pub fn index(&self, batch_var: &Name, idx: &TensorAtom) -> Result<DeltaAtom> {
        DeltaAtom::new(self.name.clone(), self.point.index(batch_var, idx)?)
    }

    /// `Delta(v, x)[v := y]` as a log indicator: `0` where `y = x`, `−∞` elsewhere.
    /// For a real `v` this is the degenerate reading of the point mass used when
    /// two deltas meet on the same variable.
    pub fn indicator(&self, value: &TensorAtom) -> Result<TensorAtom> {
        if value.output() != self.var_type() {
            return Err(FunsorError::TypeError(format!(
                "cannot substitute a value of type {} into a delta on {}",
                value.output(),
                self.var_type()
            )));
        }
        let diff = TensorAtom::binary(LiftedOp::Sub, &as_real(&self.point)?, &as_real(value)?)?;
        let n = diff.out_shape().iter().product::<usize>().max(1);
        let ctx = diff.context().clone();
        let flat = diff.data().as_slice().expect("standard layout");
        let vals: Vec<f64> =
            flat.chunks(n).map(|c| if c.iter().all(|&d| d == 0.0) { 0.0 } else { f64::NEG_INFINITY }).collect();
        TensorAtom::from_vec(ctx, FunsorType::scalar(), vals)
    }
}

/// Views integer-valued data as real scalars so it can be compared arithmetically.
fn as_real(t: &TensorAtom) -> Result<TensorAtom> {
    match t.output() {
        FunsorType::Bounded(_) => TensorAtom::new(t.context().clone(), FunsorType::scalar(), t.data().clone()),
        _ => Ok(t.clone()),
    }
}
