//! Functional tensors: a typed term language for exact and approximate
//! probabilistic inference.
//!
//! ```
//! use funsor::{interpret, FunsorType, Interp, ReduceOp, TensorAtom, Term, TypeContext};
//!
//! let i = TypeContext::single("i".into(), FunsorType::bounded(3)?);
//! let f = Term::from(TensorAtom::from_vec(i, FunsorType::scalar(), vec![0.0, 1.0, 2.0])?);
//! let z = interpret(Interp::Exact, &Term::reduce(ReduceOp::LogSumExp, "i", &f))?;
//! assert!((z.value().unwrap() - 2.40760596).abs() < 1e-8);
//! # Ok::<(), funsor::FunsorError>(())
//! ```

pub mod approx;
pub mod delta;
pub mod domains;
pub mod error;
pub mod gaussian;
pub mod interp;
pub mod markov;
pub mod models;
pub mod ops;
pub mod optimize;
pub mod tensor;
pub mod terms;

pub use delta::DeltaAtom;
pub use domains::{Assignment, FunsorType, Name, TypeContext};
pub use error::{FunsorError, Result};
pub use gaussian::GaussianAtom;
pub use interp::{evaluate, interpret, normalize, EvalConfig, Evaluator, Interp, NormalForm, ScanMode};
pub use ops::{LiftedOp, ReduceOp};
pub use tensor::TensorAtom;
pub use terms::{StepMatching, Term, TermKind};
