use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use funsor::models::{run_model as run_spec, ModelSpec, RunOptions, Semiring};
use funsor::{
    DeltaAtom, EvalConfig, Evaluator, FunsorError, FunsorType, GaussianAtom, Interp, LiftedOp, Name, ReduceOp,
    ScanMode, StepMatching, TensorAtom, Term, TypeContext,
};

create_exception!(funsor_rs, Error, PyException, "Raised for any engine error; args are (code, detail).");

fn err(e: FunsorError) -> PyErr {
    Error::new_err((e.code(), e.to_string()))
}

fn reduce_op(s: &str) -> PyResult<ReduceOp> {
    match s {
        "logsumexp" | "sum" => Ok(ReduceOp::LogSumExp),
        "add" | "plate" => Ok(ReduceOp::Add),
        "max" => Ok(ReduceOp::Max),
        _ => Err(err(FunsorError::InvalidConfig(format!("unknown reduction `{s}`")))),
    }
}

fn context(inputs: Vec<(String, Domain)>) -> PyResult<TypeContext> {
    let entries = inputs
        .into_iter()
        .map(|(n, d)| Ok((Name::new(&n)?, d.0)))
        .collect::<Result<Vec<_>, FunsorError>>()
        .map_err(err)?;
    TypeContext::new(entries).map_err(err)
}

/// A variable domain: `bint(n)` or `reals(*shape)`.
#[pyclass(frozen, eq, from_py_object, module = "funsor_rs")]
#[derive(Clone, PartialEq)]
struct Domain(FunsorType);

#[pymethods]
impl Domain {
    #[getter]
    fn bound(&self) -> Option<usize> {
        self.0.bound()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    fn __repr__(&self) -> String {
        self.0.to_string()
    }
}

#[pyfunction]
fn bint(n: usize) -> PyResult<Domain> {
    FunsorType::bounded(n).map(Domain).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (*shape))]
fn reals(shape: Vec<usize>) -> PyResult<Domain> {
    FunsorType::real(&shape).map(Domain).map_err(err)
}

/// An immutable functional tensor.
#[pyclass(frozen, from_py_object, name = "Funsor", module = "funsor_rs")]
#[derive(Clone)]
struct PyFunsor(Term);

enum Operand {
    Funsor(Term),
    Number(f64),
}

impl<'py> FromPyObject<'_, 'py> for Operand {
    type Error = PyErr;

    fn extract(ob: Borrowed<'_, 'py, PyAny>) -> PyResult<Self> {
        if let Ok(f) = ob.cast::<PyFunsor>() {
            return Ok(Operand::Funsor(f.get().0.clone()));
        }
        Ok(Operand::Number(ob.extract()?))
    }
}

impl Operand {
    fn term(self) -> Term {
        match self {
            Operand::Funsor(t) => t,
            Operand::Number(x) => Term::scalar(x),
        }
    }
}

impl PyFunsor {
    fn binary(&self, op: LiftedOp, other: Operand, flip: bool) -> PyFunsor {
        let o = other.term();
        PyFunsor(if flip { Term::binary(op, &o, &self.0) } else { Term::binary(op, &self.0, &o) })
    }
}

#[pymethods]
impl PyFunsor {
    /// Free variables and their domains.
    #[getter]
    fn inputs(&self) -> Vec<(String, Domain)> {
        self.0.free_vars().iter().map(|(n, t)| (n.to_string(), Domain(t.clone()))).collect()
    }

    #[getter]
    fn output(&self) -> PyResult<Domain> {
        self.0.output().map(Domain).map_err(err)
    }

    #[getter]
    fn size(&self) -> usize {
        self.0.size()
    }

    /// Scalar value of a ground result, or None.
    fn value(&self) -> Option<f64> {
        self.0.value()
    }

    /// Flat row-major data of a tensor atom, or None for other terms.
    fn data(&self) -> Option<Vec<f64>> {
        self.0.as_tensor().map(|t| t.data().iter().copied().collect())
    }

    fn is_atom(&self) -> bool {
        self.0.is_atom()
    }

    fn exp(&self) -> PyFunsor {
        PyFunsor(self.0.exp())
    }

    fn log(&self) -> PyFunsor {
        PyFunsor(self.0.log())
    }

    fn logaddexp(&self, other: Operand) -> PyFunsor {
        self.binary(LiftedOp::LogAddExp, other, false)
    }

    /// Reduce over the named variables, all free ones by default.
    #[pyo3(signature = (op, names = None))]
    fn reduce(&self, op: &str, names: Option<Vec<String>>) -> PyResult<PyFunsor> {
        let op = reduce_op(op)?;
        let names: Vec<Name> = match names {
            Some(ns) => ns.iter().map(|n| Name::new(n)).collect::<Result<_, _>>().map_err(err)?,
            None => self.0.free_vars().names().cloned().collect(),
        };
        Ok(PyFunsor(Term::reduce_all(op, &names, &self.0)))
    }

    /// Substitute keyword arguments for free variables: `f(x=y, i=2)`.
    #[pyo3(signature = (**kwargs))]
    fn __call__(&self, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<PyFunsor> {
        let mut bindings = Vec::new();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let name = Name::new(&k.extract::<String>()?).map_err(err)?;
                let value = match v.extract::<Operand>()? {
                    Operand::Funsor(t) => t,
                    Operand::Number(x) => match self.0.free_vars().get(&name) {
                        Some(b @ FunsorType::Bounded(_)) => {
                            TensorAtom::from_vec(TypeContext::empty(), b.clone(), vec![x]).map_err(err)?.into()
                        }
                        _ => Term::scalar(x),
                    },
                };
                bindings.push((name, value));
            }
        }
        Ok(PyFunsor(Term::subst(&self.0, bindings)))
    }

    fn __add__(&self, other: Operand) -> PyFunsor {
        self.binary(LiftedOp::Add, other, false)
    }

    fn __radd__(&self, other: Operand) -> PyFunsor {
        self.binary(LiftedOp::Add, other, true)
    }

    fn __sub__(&self, other: Operand) -> PyFunsor {
        self.binary(LiftedOp::Sub, other, false)
    }

    fn __rsub__(&self, other: Operand) -> PyFunsor {
        self.binary(LiftedOp::Sub, other, true)
    }

    fn __mul__(&self, other: Operand) -> PyFunsor {
        self.binary(LiftedOp::Mul, other, false)
    }

    fn __rmul__(&self, other: Operand) -> PyFunsor {
        self.binary(LiftedOp::Mul, other, true)
    }

    fn __neg__(&self) -> PyFunsor {
        PyFunsor(-&self.0)
    }

    fn __repr__(&self) -> String {
        self.0.to_string()
    }
}

#[pyfunction]
fn variable(name: &str, domain: Domain) -> PyResult<PyFunsor> {
    Ok(PyFunsor(Term::variable(Name::new(name).map_err(err)?, domain.0)))
}

/// Dense tensor over bounded inputs, data flat in row-major order.
#[pyfunction]
#[pyo3(signature = (data, inputs = Vec::new(), shape = Vec::new()))]
fn tensor(data: Vec<f64>, inputs: Vec<(String, Domain)>, shape: Vec<usize>) -> PyResult<PyFunsor> {
    let ctx = context(inputs)?;
    let out = FunsorType::real(&shape).map_err(err)?;
    TensorAtom::from_vec(ctx, out, data).map(|t| PyFunsor(t.into())).map_err(err)
}

/// Unnormalized Gaussian `iᵀx - ½xᵀΛx` over real inputs, given as info vector and precision rows.
#[pyfunction]
fn gaussian(info: Vec<f64>, precision: Vec<Vec<f64>>, inputs: Vec<(String, Domain)>) -> PyResult<PyFunsor> {
    let reals = context(inputs)?;
    let d = info.len();
    if precision.len() != d || precision.iter().any(|r| r.len() != d) {
        return Err(err(FunsorError::DomainError(format!("precision must be {d}×{d}"))));
    }
    let lambda = nalgebra::DMatrix::from_fn(d, d, |i, j| precision[i][j]);
    let slices = [(nalgebra::DVector::from_vec(info), lambda)];
    GaussianAtom::from_slices(TypeContext::empty(), reals, &slices).map(|g| PyFunsor(g.into())).map_err(err)
}

/// Point mass of a real variable at `point`.
#[pyfunction]
fn delta(name: &str, point: Vec<f64>) -> PyResult<PyFunsor> {
    let shape = if point.len() == 1 { vec![] } else { vec![point.len()] };
    let p = TensorAtom::from_vec(TypeContext::empty(), FunsorType::real(&shape).map_err(err)?, point).map_err(err)?;
    DeltaAtom::new(Name::new(name).map_err(err)?, p).map(|d| PyFunsor(d.into())).map_err(err)
}

/// Product of `body` over the time variable, threading each (prev, curr) pair.
#[pyfunction]
#[pyo3(signature = (time, steps, body, op = "logsumexp"))]
fn markov(time: &str, steps: Vec<(String, String)>, body: PyFunsor, op: &str) -> PyResult<PyFunsor> {
    let pairs = steps
        .iter()
        .map(|(p, c)| Ok((Name::new(p)?, Name::new(c)?)))
        .collect::<Result<Vec<_>, FunsorError>>()
        .map_err(err)?;
    let steps = StepMatching::new(pairs).map_err(err)?;
    let time = Name::new(time).map_err(err)?;
    Ok(PyFunsor(Term::markov(time, steps, reduce_op(op)?, &body.0)))
}

fn config(scan: &str, seed: u64, samples: usize, fuel: Option<usize>) -> PyResult<EvalConfig> {
    let mut cfg = EvalConfig { scan: scan.parse::<ScanMode>().map_err(err)?, seed, samples, ..EvalConfig::default() };
    if let Some(f) = fuel {
        cfg.fuel = f;
    }
    Ok(cfg)
}

/// Evaluate under an interpretation. Returns the result and the number of rewrites.
#[pyfunction]
#[pyo3(signature = (f, interp = "exact", scan = "parallel", seed = 0, samples = 1, fuel = None))]
fn evaluate(
    f: PyFunsor,
    interp: &str,
    scan: &str,
    seed: u64,
    samples: usize,
    fuel: Option<usize>,
) -> PyResult<(PyFunsor, usize)> {
    let ev = Evaluator::new(interp.parse::<Interp>().map_err(err)?, config(scan, seed, samples, fuel)?);
    let out = ev.run(&f.0).map_err(err)?;
    Ok((PyFunsor(out), ev.rewrites()))
}

/// Log marginal of a JSON model description.
#[pyfunction]
#[pyo3(signature = (json, interp = "exact", semiring = "sumproduct", scan = "parallel", seed = 0, samples = 1))]
fn run_model(json: &str, interp: &str, semiring: &str, scan: &str, seed: u64, samples: usize) -> PyResult<f64> {
    let spec = ModelSpec::from_json(json).map_err(err)?;
    let opts = RunOptions {
        interp: interp.parse::<Interp>().map_err(err)?,
        semiring: semiring.parse::<Semiring>().map_err(err)?,
        config: config(scan, seed, samples, None)?,
    };
    run_spec(&spec, &opts).map(|o| o.log_value).map_err(err)
}

#[pymodule]
fn funsor_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("Error", m.py().get_type::<Error>())?;
    m.add_class::<Domain>()?;
    m.add_class::<PyFunsor>()?;
    m.add_function(wrap_pyfunction!(bint, m)?)?;
    m.add_function(wrap_pyfunction!(reals, m)?)?;
    m.add_function(wrap_pyfunction!(variable, m)?)?;
    m.add_function(wrap_pyfunction!(tensor, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(delta, m)?)?;
    m.add_function(wrap_pyfunction!(markov, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_model, m)?)?;
    Ok(())
}
