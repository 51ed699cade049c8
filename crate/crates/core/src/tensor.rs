//! Discrete factors: dense row-major arrays of log-space reals indexed by named
//! bounded-integer variables.
//!
//! A [`TensorAtom`] stores one array whose leading axes follow its context and
//! whose trailing axes hold the output shape. Binary operations align both
//! operands to the union context by permuting axes and inserting unit extents,
//! then broadcast.

use ndarray::{ArrayD, ArrayViewD, Axis, Dimension, IxDyn, Slice, Zip};

use crate::domains::{Assignment, FunsorType, Name, TypeContext};
use crate::error::{FunsorError, Result};
use crate::ops::{LiftedOp, ReduceOp};

#[derive(Clone, Debug, PartialEq)]
pub struct TensorAtom {
    context: TypeContext,
    output: FunsorType,
    data: ArrayD<f64>,
}

impl TensorAtom {
    pub fn new(context: TypeContext, output: FunsorType, data: ArrayD<f64>) -> Result<TensorAtom> {
        if let Some((name, ty)) = context.iter().find(|(_, t)| t.is_real()) {
            return Err(FunsorError::TypeError(format!("tensor context entry `{name}` has real type {ty}")));
        }
        let mut expected = context.bounds();
        expected.extend_from_slice(output.shape());
        if data.shape() != expected.as_slice() {
            return Err(FunsorError::TypeError(format!(
                "tensor data shape {:?} does not match context {} with output {}",
                data.shape(),
                context,
                output
            )));
        }
        if let FunsorType::Bounded(n) = output {
            if let Some(&bad) = data.iter().find(|&&x| x.fract() != 0.0 || x < 0.0 || x >= n as f64) {
                return Err(FunsorError::IndexOutOfRange { index: bad as i64, bound: n });
            }
        }
        let data = if data.is_standard_layout() { data } else { data.as_standard_layout().into_owned() };
        Ok(TensorAtom { context, output, data })
    }

    pub fn from_vec(context: TypeContext, output: FunsorType, values: Vec<f64>) -> Result<TensorAtom> {
        let mut shape = context.bounds();
        shape.extend_from_slice(output.shape());
        let data = ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|e| FunsorError::TypeError(format!("tensor data: {e}")))?;
        TensorAtom::new(context, output, data)
    }

    /// A ground real scalar.
    pub fn scalar(x: f64) -> TensorAtom {
        TensorAtom {
            context: TypeContext::empty(),
            output: FunsorType::scalar(),
            data: ArrayD::from_elem(IxDyn(&[]), x),
        }
    }

    /// A ground real array of the given shape.
    pub fn ground(shape: &[usize], values: Vec<f64>) -> Result<TensorAtom> {
        TensorAtom::from_vec(TypeContext::empty(), FunsorType::real(shape)?, values)
    }

    pub fn filled(context: TypeContext, output: FunsorType, value: f64) -> Result<TensorAtom> {
        let mut shape = context.bounds();
        shape.extend_from_slice(output.shape());
        TensorAtom::new(context, output, ArrayD::from_elem(IxDyn(&shape), value))
    }

    pub fn zeros(context: TypeContext) -> TensorAtom {
        TensorAtom::filled(context, FunsorType::scalar(), 0.0).expect("discrete context")
    }

    /// `Variable(name: ℤn)` materialized as the identity index array `0..n`.
    pub fn arange(name: Name, n: usize) -> TensorAtom {
        TensorAtom {
            context: TypeContext::single(name, FunsorType::Bounded(n)),
            output: FunsorType::Bounded(n),
            data: ArrayD::from_shape_fn(IxDyn(&[n]), |ix| ix[0] as f64),
        }
    }

    /// Builds an atom by evaluating `f` at every (batch index, output index) position.
    pub fn from_fn(context: TypeContext, output: FunsorType, f: impl Fn(&[usize]) -> f64) -> Result<TensorAtom> {
        let mut shape = context.bounds();
        shape.extend_from_slice(output.shape());
        let data = ArrayD::from_shape_fn(IxDyn(&shape), |ix| f(ix.slice()));
        TensorAtom::new(context, output, data)
    }

    pub fn context(&self) -> &TypeContext {
        &self.context
    }

    pub fn output(&self) -> &FunsorType {
        &self.output
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn into_data(self) -> ArrayD<f64> {
        self.data
    }

    pub fn batch_shape(&self) -> Vec<usize> {
        self.context.bounds()
    }

    pub fn out_shape(&self) -> &[usize] {
        self.output.shape()
    }

    pub fn is_ground(&self) -> bool {
        self.context.is_empty()
    }

    /// The value of a ground scalar atom.
    pub fn value(&self) -> Option<f64> {
        if self.context.is_empty() && self.data.len() == 1 {
            self.data.iter().next().copied()
        } else {
            None
        }
    }

    /// The output block at a batch assignment given in context order.
    pub fn slice_at(&self, batch: &[usize]) -> ArrayViewD<'_, f64> {
        let mut v = self.data.view();
        for &i in batch {
            v = v.index_axis_move(Axis(0), i);
        }
        v
    }

    /// Batch indices of an assignment, in context order.
    pub fn batch_index(context: &TypeContext, point: &Assignment) -> Result<Vec<usize>> {
        context
            .iter()
            .map(|(n, t)| {
                let v = point.get(n).ok_or_else(|| FunsorError::MissingAssignment(n.clone()))?;
                let b = t.bound().unwrap_or(1);
                match v.as_slice() {
                    [k] if k.fract() == 0.0 && *k >= 0.0 && (*k as usize) < b => Ok(*k as usize),
                    _ => Err(FunsorError::TypeError(format!("`{n}` needs a value in ℤ{b}, got {v:?}"))),
                }
            })
            .collect()
    }

    /// The output block (flattened) at a ground assignment of the context.
    pub fn eval(&self, point: &Assignment) -> Result<Vec<f64>> {
        let ix = TensorAtom::batch_index(&self.context, point)?;
        Ok(self.slice_at(&ix).iter().copied().collect())
    }

    /// Permutes and unit-extends the data so that it broadcasts against `ctx`
    /// followed by `out_rank` output axes. `ctx` must contain this context.
    fn aligned_view(&self, ctx: &TypeContext, out_rank: usize) -> ArrayViewD<'_, f64> {
        let nb = self.context.len();
        let own_out = self.output.shape().len();
        let mut perm: Vec<usize> = ctx.names().filter_map(|n| self.context.position(n)).collect();
        perm.extend(nb..nb + own_out);
        let mut v = self.data.view().permuted_axes(IxDyn(&perm));
        for (k, n) in ctx.names().enumerate() {
            if !self.context.contains(n) {
                v = v.insert_axis(Axis(k));
            }
        }
        for _ in own_out..out_rank {
            v = v.insert_axis(Axis(ctx.len()));
        }
        v
    }

    /// Data broadcast to `ctx` (a superset of this context) and `out_shape`, materialized.
    pub fn expand(&self, ctx: &TypeContext, out_shape: &[usize]) -> Result<ArrayD<f64>> {
        if !self.context.is_subset(ctx) {
            return Err(FunsorError::ContextMismatch(format!("cannot expand {} to {}", self.context, ctx)));
        }
        let own = self.output.shape();
        if !own.is_empty() && own != out_shape {
            return Err(FunsorError::TypeError(format!("cannot broadcast output {:?} to {:?}", own, out_shape)));
        }
        let mut shape = ctx.bounds();
        shape.extend_from_slice(out_shape);
        let v = self.aligned_view(ctx, out_shape.len());
        let b = v
            .broadcast(IxDyn(&shape))
            .ok_or_else(|| FunsorError::ContextMismatch(format!("cannot broadcast to {shape:?}")))?;
        Ok(b.as_standard_layout().into_owned())
    }

    /// This atom re-expressed over a larger discrete context (in `ctx` order).
    pub fn expand_to(&self, ctx: &TypeContext) -> Result<TensorAtom> {
        let data = self.expand(ctx, self.output.shape())?;
        TensorAtom::new(ctx.clone(), self.output.clone(), data)
    }

    /// Reorders the axes to follow `ctx`, which must be set-equal to this context.
    pub fn permute_to(&self, ctx: &TypeContext) -> Result<TensorAtom> {
        if !ctx.set_eq(&self.context) {
            return Err(FunsorError::ContextMismatch(format!("{} is not a permutation of {}", ctx, self.context)));
        }
        self.expand_to(ctx)
    }

    pub fn rename(&self, old: &Name, new: &Name) -> Result<TensorAtom> {
        if !self.context.contains(old) || old == new {
            return Ok(self.clone());
        }
        if let Some(t) = self.context.get(new) {
            return Err(FunsorError::TypeConflict {
                name: new.clone(),
                left: t.clone(),
                right: self.context.get(old).cloned().unwrap_or(FunsorType::scalar()),
            });
        }
        Ok(TensorAtom { context: self.context.rename(old, new), output: self.output.clone(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TensorAtom {
        TensorAtom { context: self.context.clone(), output: self.output.clone(), data: self.data.mapv(f) }
    }

    /// Pointwise lifted op over aligned arguments; the context is the union.
    pub fn apply(op: LiftedOp, args: &[&TensorAtom]) -> Result<TensorAtom> {
        let types: Vec<&FunsorType> = args.iter().map(|a| &a.output).collect();
        let output = op.output_type(&types)?;
        match op.arity() {
            1 => Ok(TensorAtom { context: args[0].context.clone(), output, data: args[0].data.mapv(|x| op.unary(x)) }),
            _ if op == LiftedOp::Take => take(args[0], args[1], output),
            _ => {
                let (ctx, a, b) = align(args[0], args[1])?;
                let mut shape = ctx.bounds();
                shape.extend_from_slice(output.shape());
                let dim = IxDyn(&shape);
                let a = a.broadcast(dim.clone()).expect("aligned");
                let b = b.broadcast(dim.clone()).expect("aligned");
                let mut out = ArrayD::zeros(dim);
                Zip::from(&mut out).and(&a).and(&b).for_each(|o, &x, &y| *o = op.binary(x, y));
                Ok(TensorAtom { context: ctx, output, data: out })
            }
        }
    }

    pub fn binary(op: LiftedOp, a: &TensorAtom, b: &TensorAtom) -> Result<TensorAtom> {
        TensorAtom::apply(op, &[a, b])
    }

    /// Folds `op` over the axis of `name`.
    pub fn reduce(&self, op: ReduceOp, name: &Name) -> Result<TensorAtom> {
        let p = self.context.position(name).ok_or_else(|| FunsorError::NameAbsent(name.clone()))?;
        if !self.output.is_real() {
            return Err(FunsorError::TypeError(format!("cannot reduce integer-valued tensor over `{name}`")));
        }
        let data = self.data.map_axis(Axis(p), |lane| match lane.as_slice() {
            Some(s) => op.fold(s),
            None => op.fold(&lane.to_vec()),
        });
        Ok(TensorAtom {
            context: self.context.without(std::slice::from_ref(name)),
            output: self.output.clone(),
            data: data.as_standard_layout().into_owned(),
        })
    }

    /// Substitutes the integer-valued atom `idx` for `name`, gathering along its axis.
    pub fn index(&self, name: &Name, idx: &TensorAtom) -> Result<TensorAtom> {
        let p = self.context.position(name).ok_or_else(|| FunsorError::NameAbsent(name.clone()))?;
        let n = self.context.entries()[p].1.bound().expect("discrete context");
        if idx.output != FunsorType::Bounded(n) {
            return Err(FunsorError::TypeError(format!(
                "cannot substitute a value of type {} for `{name}`: ℤ{n}",
                idx.output
            )));
        }
        let rest = self.context.without(std::slice::from_ref(name));
        let target = rest.union(&idx.context)?;
        let tshape = target.bounds();
        let ivals = idx.expand(&target, &[])?;
        let ivals = ivals.as_slice().expect("standard layout");

        let block: usize = block_size(&self.output);
        let own_bounds = self.context.bounds();
        let mut strides = vec![0usize; own_bounds.len()];
        let mut acc = block;
        for k in (0..own_bounds.len()).rev() {
            strides[k] = acc;
            acc *= own_bounds[k];
        }
        // For each own axis, the position in `target` it reads from (None for `name`).
        let source: Vec<Option<usize>> =
            self.context.names().map(|m| if m == name { None } else { target.position(m) }).collect();

        let total: usize = tshape.iter().product();
        let src = self.data.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(total * block);
        let mut ix = vec![0usize; tshape.len()];
        for &iv in ivals.iter().take(total) {
            if iv < 0.0 || iv >= n as f64 {
                return Err(FunsorError::IndexOutOfRange { index: iv as i64, bound: n });
            }
            let mut off = 0;
            for (k, s) in source.iter().enumerate() {
                let i = match s {
                    Some(t) => ix[*t],
                    None => iv as usize,
                };
                off += i * strides[k];
            }
            out.extend_from_slice(&src[off..off + block]);
            increment(&mut ix, &tshape);
        }
        TensorAtom::from_vec(target, self.output.clone(), out)
    }

    /// Strided slice along `name`; the variable keeps its name with bound
    /// `ceil((stop - start) / stride)`.
    pub fn slice(&self, name: &Name, start: usize, stop: usize, stride: usize) -> Result<TensorAtom> {
        let p = self.context.position(name).ok_or_else(|| FunsorError::NameAbsent(name.clone()))?;
        let n = self.data.shape()[p];
        if stride == 0 || start >= stop || stop > n {
            return Err(FunsorError::BoundsError(format!("slice {start}:{stop}:{stride} of `{name}` with bound {n}")));
        }
        let len = (stop - start).div_ceil(stride);
        let data = self
            .data
            .slice_axis(Axis(p), Slice::new(start as isize, Some(stop as isize), stride as isize))
            .as_standard_layout()
            .into_owned();
        let context = TypeContext::new(
            self.context
                .iter()
                .map(|(m, t)| if m == name { (m.clone(), FunsorType::Bounded(len)) } else { (m.clone(), t.clone()) })
                .collect(),
        )?;
        TensorAtom::new(context, self.output.clone(), data)
    }

    /// Concatenates parts along `name`. Every part must contain `name`, and all
    /// parts must agree on the remaining context and on the output type.
    pub fn cat(name: &Name, parts: &[&TensorAtom]) -> Result<TensorAtom> {
        let first = parts.first().ok_or_else(|| FunsorError::ContextMismatch("cat of zero parts".into()))?;
        let p = first.context.position(name).ok_or_else(|| FunsorError::NameAbsent(name.clone()))?;
        let others = first.context.without(std::slice::from_ref(name));
        let mut views = Vec::with_capacity(parts.len());
        let mut total = 0;
        for part in parts {
            if part.output != first.output {
                return Err(FunsorError::ContextMismatch(format!(
                    "cat parts have outputs {} and {}",
                    first.output, part.output
                )));
            }
            let n =
                part.context.get(name).and_then(|t| t.bound()).ok_or_else(|| FunsorError::NameAbsent(name.clone()))?;
            if !part.context.without(std::slice::from_ref(name)).set_eq(&others) {
                return Err(FunsorError::ContextMismatch(format!(
                    "cat parts have contexts {} and {}",
                    first.context, part.context
                )));
            }
            total += n;
            let order = TypeContext::new(
                first
                    .context
                    .iter()
                    .map(|(m, t)| if m == name { (m.clone(), FunsorType::Bounded(n)) } else { (m.clone(), t.clone()) })
                    .collect(),
            )?;
            views.push(part.permute_to(&order)?.data);
        }
        let vs: Vec<_> = views.iter().map(|v| v.view()).collect();
        let data = ndarray::concatenate(Axis(p), &vs).map_err(|e| FunsorError::ContextMismatch(format!("cat: {e}")))?;
        let context = TypeContext::new(
            first
                .context
                .iter()
                .map(|(m, t)| if m == name { (m.clone(), FunsorType::Bounded(total)) } else { (m.clone(), t.clone()) })
                .collect(),
        )?;
        TensorAtom::new(context, first.output.clone(), data)
    }
}

fn block_size(t: &FunsorType) -> usize {
    t.shape().iter().product()
}

/// Aligns two atoms for broadcasting: the union context and each array permuted
/// and unit-extended so same-named axes coincide. No data is copied.
pub fn align<'a>(
    a: &'a TensorAtom,
    b: &'a TensorAtom,
) -> Result<(TypeContext, ArrayViewD<'a, f64>, ArrayViewD<'a, f64>)> {
    let ctx = a.context.union(&b.context)?;
    let rank = a.output.shape().len().max(b.output.shape().len());
    let va = a.aligned_view(&ctx, rank);
    let vb = b.aligned_view(&ctx, rank);
    Ok((ctx, va, vb))
}

fn take(x: &TensorAtom, i: &TensorAtom, output: FunsorType) -> Result<TensorAtom> {
    let ctx = x.context.union(&i.context)?;
    let xs = x.expand(&ctx, x.output.shape())?;
    let is = i.expand(&ctx, &[])?;
    let n = x.output.shape()[0];
    let r = block_size(&output);
    let xs = xs.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(is.len() * r);
    for (b, &iv) in is.iter().enumerate() {
        let k = iv as usize;
        if iv < 0.0 || k >= n {
            return Err(FunsorError::IndexOutOfRange { index: iv as i64, bound: n });
        }
        let off = b * n * r + k * r;
        out.extend_from_slice(&xs[off..off + r]);
    }
    TensorAtom::from_vec(ctx, output, out)
}

/// Advances a row-major multi-index.
pub(crate) fn increment(ix: &mut [usize], shape: &[usize]) {
    for k in (0..shape.len()).rev() {
        ix[k] += 1;
        if ix[k] < shape[k] {
            return;
        }
        ix[k] = 0;
    }
}
