//! Types, type contexts and the shape algebra that generalizes tensor shapes.
//!
//! A [`FunsorType`] is either a bounded integer `ℤn` or a real array `ℝ^{s1×…×sk}`.
//! A [`TypeContext`] is a set of named, typed free variables. It is semantically
//! unordered but stores a deterministic order: entries appear in the order they
//! were first encountered while building an expression left to right.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{FunsorError, Result};

static FRESH_COUNTER: AtomicU64 = AtomicU64::new(1);

/// An interned variable name. `#` is reserved for generated names.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Name(Arc<str>);

impl Name {
    pub fn new(s: &str) -> Result<Name> {
        if s.is_empty() || s.contains('#') {
            return Err(FunsorError::InvalidName(s.to_string()));
        }
        Ok(Name(Arc::from(s)))
    }

    /// A fresh name derived from `base`, e.g. `x#7`. Never collides with user names.
    pub fn fresh(base: &Name) -> Name {
        let k = FRESH_COUNTER.fetch_add(1, Ordering::Relaxed);
        Name(Arc::from(format!("{}#{}", base.base(), k)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The user-facing part of the name, without any `#counter` suffix.
    pub fn base(&self) -> &str {
        self.0.split('#').next().unwrap_or(&self.0)
    }

    pub fn is_generated(&self) -> bool {
        self.0.contains('#')
    }
}

/// Convenience conversion for literal names.
///
/// Panics if the name is empty or contains the reserved `#`.
impl From<&str> for Name {
    fn from(s: &str) -> Name {
        Name::new(s).expect("invalid variable name")
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum FunsorType {
    Bounded(usize),
    /// Real array; the empty shape is the scalar type ℝ.
    Real(Vec<usize>),
}

impl FunsorType {
    pub fn bounded(n: usize) -> Result<FunsorType> {
        if n == 0 {
            return Err(FunsorError::TypeError("bounded integer type needs n >= 1".into()));
        }
        Ok(FunsorType::Bounded(n))
    }

    pub fn real(shape: &[usize]) -> Result<FunsorType> {
        if shape.contains(&0) {
            return Err(FunsorError::TypeError(format!("real array shape {shape:?} has a zero extent")));
        }
        Ok(FunsorType::Real(shape.to_vec()))
    }

    pub fn scalar() -> FunsorType {
        FunsorType::Real(Vec::new())
    }

    pub fn is_real(&self) -> bool {
        matches!(self, FunsorType::Real(_))
    }

    pub fn is_scalar_real(&self) -> bool {
        matches!(self, FunsorType::Real(s) if s.is_empty())
    }

    pub fn bound(&self) -> Option<usize> {
        match self {
            FunsorType::Bounded(n) => Some(*n),
            FunsorType::Real(_) => None,
        }
    }

    /// Array shape of a value of this type; bounded integers are scalars.
    pub fn shape(&self) -> &[usize] {
        match self {
            FunsorType::Bounded(_) => &[],
            FunsorType::Real(s) => s,
        }
    }

    pub fn num_elements(&self) -> usize {
        match self {
            FunsorType::Bounded(n) => *n,
            FunsorType::Real(s) => s.iter().product(),
        }
    }
}

impl fmt::Display for FunsorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunsorType::Bounded(n) => write!(f, "ℤ{n}"),
            FunsorType::Real(s) if s.is_empty() => write!(f, "ℝ"),
            FunsorType::Real(s) => {
                let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
                write!(f, "ℝ^{}", dims.join("×"))
            }
        }
    }
}

impl fmt::Debug for FunsorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct TypeContext {
    entries: Vec<(Name, FunsorType)>,
}

impl TypeContext {
    pub fn empty() -> TypeContext {
        TypeContext::default()
    }

    pub fn new(entries: Vec<(Name, FunsorType)>) -> Result<TypeContext> {
        for (k, (name, _)) in entries.iter().enumerate() {
            if entries[..k].iter().any(|(n, _)| n == name) {
                return Err(FunsorError::TypeError(format!("duplicate name `{name}` in context")));
            }
        }
        Ok(TypeContext { entries })
    }

    pub fn single(name: Name, ty: FunsorType) -> TypeContext {
        TypeContext { entries: vec![(name, ty)] }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Name, FunsorType)> {
        self.entries.iter()
    }

    pub fn entries(&self) -> &[(Name, FunsorType)] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &Name> {
        self.entries.iter().map(|(n, _)| n)
    }

    pub fn get(&self, name: &Name) -> Option<&FunsorType> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn position(&self, name: &Name) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn contains(&self, name: &Name) -> bool {
        self.position(name).is_some()
    }

    /// Set union; entries of `self` first, then new entries of `other` in their order.
    pub fn union(&self, other: &TypeContext) -> Result<TypeContext> {
        let mut entries = self.entries.clone();
        for (name, ty) in &other.entries {
            match self.get(name) {
                Some(existing) if existing != ty => {
                    return Err(FunsorError::TypeConflict {
                        name: name.clone(),
                        left: existing.clone(),
                        right: ty.clone(),
                    })
                }
                Some(_) => {}
                None => entries.push((name.clone(), ty.clone())),
            }
        }
        Ok(TypeContext { entries })
    }

    pub fn union_all<'a>(contexts: impl IntoIterator<Item = &'a TypeContext>) -> Result<TypeContext> {
        contexts.into_iter().try_fold(TypeContext::empty(), |acc, c| acc.union(c))
    }

    pub fn remove(&self, name: &Name) -> Result<TypeContext> {
        if !self.contains(name) {
            return Err(FunsorError::NameAbsent(name.clone()));
        }
        Ok(self.without(std::slice::from_ref(name)))
    }

    /// Drops every listed name that is present; absent names are ignored.
    pub fn without(&self, names: &[Name]) -> TypeContext {
        TypeContext { entries: self.entries.iter().filter(|(n, _)| !names.contains(n)).cloned().collect() }
    }

    pub fn with(&self, name: Name, ty: FunsorType) -> Result<TypeContext> {
        self.union(&TypeContext::single(name, ty))
    }

    pub fn filter(&self, pred: impl Fn(&Name, &FunsorType) -> bool) -> TypeContext {
        TypeContext { entries: self.entries.iter().filter(|(n, t)| pred(n, t)).cloned().collect() }
    }

    pub fn discrete(&self) -> TypeContext {
        self.filter(|_, t| !t.is_real())
    }

    pub fn reals(&self) -> TypeContext {
        self.filter(|_, t| t.is_real())
    }

    pub fn rename(&self, old: &Name, new: &Name) -> TypeContext {
        TypeContext {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| if n == old { (new.clone(), t.clone()) } else { (n.clone(), t.clone()) })
                .collect(),
        }
    }

    /// Equality as sets, ignoring the stored order.
    pub fn set_eq(&self, other: &TypeContext) -> bool {
        self.len() == other.len() && self.entries.iter().all(|(n, t)| other.get(n) == Some(t))
    }

    pub fn is_subset(&self, other: &TypeContext) -> bool {
        self.entries.iter().all(|(n, t)| other.get(n) == Some(t))
    }

    /// Extents of the bounded entries, in order. Real entries are skipped.
    pub fn bounds(&self) -> Vec<usize> {
        self.entries.iter().filter_map(|(_, t)| t.bound()).collect()
    }

    /// Number of joint assignments to the discrete entries.
    pub fn num_assignments(&self) -> usize {
        self.bounds().iter().product()
    }
}

impl fmt::Display for TypeContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (k, (n, t)) in self.entries.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}:{t}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Debug for TypeContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

pub fn num_elements(t: &FunsorType) -> usize {
    t.num_elements()
}

/// Ground values for free variables: a bounded integer is a one-element vector,
/// a real array is its row-major flattening.
pub type Assignment = std::collections::BTreeMap<Name, Vec<f64>>;
