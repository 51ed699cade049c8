//! Lifted elementwise functions and reduction monoids.

use std::fmt;

use crate::domains::FunsorType;
use crate::error::{FunsorError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LiftedOp {
    Add,
    Sub,
    Mul,
    Neg,
    Exp,
    Log,
    LogAddExp,
    Max,
    Min,
    /// `take(x, i)`: index the leading dimension of a real array with a bounded integer.
    Take,
}

impl LiftedOp {
    pub fn arity(self) -> usize {
        match self {
            LiftedOp::Neg | LiftedOp::Exp | LiftedOp::Log => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LiftedOp::Add => "add",
            LiftedOp::Sub => "sub",
            LiftedOp::Mul => "mul",
            LiftedOp::Neg => "neg",
            LiftedOp::Exp => "exp",
            LiftedOp::Log => "log",
            LiftedOp::LogAddExp => "logaddexp",
            LiftedOp::Max => "max",
            LiftedOp::Min => "min",
            LiftedOp::Take => "take",
        }
    }

    pub fn from_name(s: &str) -> Option<LiftedOp> {
        Some(match s {
            "add" => LiftedOp::Add,
            "sub" => LiftedOp::Sub,
            "mul" => LiftedOp::Mul,
            "neg" => LiftedOp::Neg,
            "exp" => LiftedOp::Exp,
            "log" => LiftedOp::Log,
            "logaddexp" => LiftedOp::LogAddExp,
            "max" => LiftedOp::Max,
            "min" => LiftedOp::Min,
            "take" => LiftedOp::Take,
            _ => return None,
        })
    }

    /// Output type of the op applied to arguments of the given types.
    pub fn output_type(self, args: &[&FunsorType]) -> Result<FunsorType> {
        if args.len() != self.arity() {
            return Err(FunsorError::TypeError(format!(
                "{} expects {} arguments, got {}",
                self.name(),
                self.arity(),
                args.len()
            )));
        }
        match self {
            LiftedOp::Neg | LiftedOp::Exp | LiftedOp::Log => match args[0] {
                t @ FunsorType::Real(_) => Ok(t.clone()),
                t => Err(FunsorError::TypeError(format!("{} of non-real type {t}", self.name()))),
            },
            LiftedOp::Take => match (args[0], args[1]) {
                (FunsorType::Real(shape), FunsorType::Bounded(n)) if !shape.is_empty() && shape[0] == *n => {
                    Ok(FunsorType::Real(shape[1..].to_vec()))
                }
                (x, i) => Err(FunsorError::TypeError(format!("take({x}, {i}) is ill-typed"))),
            },
            _ => match (args[0], args[1]) {
                (FunsorType::Real(a), FunsorType::Real(b)) => {
                    if a == b || b.is_empty() {
                        Ok(FunsorType::Real(a.clone()))
                    } else if a.is_empty() {
                        Ok(FunsorType::Real(b.clone()))
                    } else {
                        Err(FunsorError::TypeError(format!(
                            "{}: shape mismatch {} vs {}",
                            self.name(),
                            args[0],
                            args[1]
                        )))
                    }
                }
                (a, b) => Err(FunsorError::TypeError(format!("{} is not defined on {a} × {b}", self.name()))),
            },
        }
    }

    pub fn unary(self, x: f64) -> f64 {
        match self {
            LiftedOp::Neg => -x,
            LiftedOp::Exp => x.exp(),
            LiftedOp::Log => x.ln(),
            _ => unreachable!("{} is not unary", self.name()),
        }
    }

    pub fn binary(self, x: f64, y: f64) -> f64 {
        match self {
            LiftedOp::Add => x + y,
            LiftedOp::Sub => x - y,
            LiftedOp::Mul => x * y,
            LiftedOp::LogAddExp => logaddexp(x, y),
            LiftedOp::Max => nan_max(x, y),
            LiftedOp::Min => {
                if x.is_nan() || y.is_nan() {
                    f64::NAN
                } else {
                    x.min(y)
                }
            }
            _ => unreachable!("{} is not an elementwise binary op", self.name()),
        }
    }
}

impl fmt::Display for LiftedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reduction monoids. `LogSumExp` is log-space summation (or integration over a real
/// variable), `Add` is the log-space plated product and `Max` gives max-product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    LogSumExp,
    Add,
    Max,
}

impl ReduceOp {
    pub fn name(self) -> &'static str {
        match self {
            ReduceOp::LogSumExp => "logsumexp",
            ReduceOp::Add => "add",
            ReduceOp::Max => "max",
        }
    }

    pub fn identity(self) -> f64 {
        match self {
            ReduceOp::LogSumExp | ReduceOp::Max => f64::NEG_INFINITY,
            ReduceOp::Add => 0.0,
        }
    }

    pub fn combine(self, x: f64, y: f64) -> f64 {
        match self {
            ReduceOp::LogSumExp => logaddexp(x, y),
            ReduceOp::Add => x + y,
            ReduceOp::Max => nan_max(x, y),
        }
    }

    /// Folds a slice of values. Log-sum-exp uses the max-shift trick.
    pub fn fold(self, xs: &[f64]) -> f64 {
        match self {
            ReduceOp::LogSumExp => logsumexp(xs),
            _ => xs.iter().fold(self.identity(), |acc, &x| self.combine(acc, x)),
        }
    }
}

impl fmt::Display for ReduceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn nan_max(x: f64, y: f64) -> f64 {
    if x.is_nan() || y.is_nan() {
        f64::NAN
    } else {
        x.max(y)
    }
}

pub fn logaddexp(x: f64, y: f64) -> f64 {
    if x.is_nan() || y.is_nan() {
        return f64::NAN;
    }
    let m = x.max(y);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + ((x - m).exp() + (y - m).exp()).ln()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    if xs.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
