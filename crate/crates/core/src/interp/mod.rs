//! Interpretations: ordered rewrite-rule sets evaluated bottom-up, with fallback
//! chaining and reflection of terms that no rule matches.
//!
//! Each node is first offered to the `Pre` rules of the current interpretation
//! and its fallbacks, then its children are evaluated, then `Post` rules are
//! tried. Within one interpretation rules fire in registration order and a
//! handler may decline by returning `Ok(None)`. The result of a firing rule is
//! evaluated again. A term that no rule rewrites is returned as is.

pub mod exact;
pub mod lazy;
pub mod normal_form;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domains::Name;
use crate::error::{FunsorError, Result};
use crate::terms::{Term, TermKind};

pub use normal_form::NormalForm;

pub const DEFAULT_FUEL: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interp {
    Lazy,
    Exact,
    Optimize,
    MomentMatching,
    MonteCarlo,
}

impl Interp {
    pub fn name(self) -> &'static str {
        match self {
            Interp::Lazy => "lazy",
            Interp::Exact => "exact",
            Interp::Optimize => "optimize",
            Interp::MomentMatching => "momentmatching",
            Interp::MonteCarlo => "montecarlo",
        }
    }

    pub fn interpretation(self) -> &'static Interpretation {
        static LAZY: OnceLock<Interpretation> = OnceLock::new();
        static EXACT: OnceLock<Interpretation> = OnceLock::new();
        static OPTIMIZE: OnceLock<Interpretation> = OnceLock::new();
        static MM: OnceLock<Interpretation> = OnceLock::new();
        static MC: OnceLock<Interpretation> = OnceLock::new();
        match self {
            Interp::Lazy => LAZY.get_or_init(|| Interpretation::new("lazy", lazy::rules(), None)),
            Interp::Exact => EXACT.get_or_init(|| Interpretation::new("exact", exact::rules(), Some(Interp::Lazy))),
            Interp::Optimize => {
                OPTIMIZE.get_or_init(|| Interpretation::new("optimize", crate::optimize::rules(), Some(Interp::Exact)))
            }
            Interp::MomentMatching => MM.get_or_init(|| {
                Interpretation::new("momentmatching", crate::approx::moment_matching_rules(), Some(Interp::Exact))
            }),
            Interp::MonteCarlo => MC.get_or_init(|| {
                Interpretation::new("montecarlo", crate::approx::monte_carlo_rules(), Some(Interp::Exact))
            }),
        }
    }
}

impl fmt::Display for Interp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Interp {
    type Err = FunsorError;
    fn from_str(s: &str) -> Result<Interp> {
        Ok(match s {
            "lazy" => Interp::Lazy,
            "exact" => Interp::Exact,
            "optimize" => Interp::Optimize,
            "momentmatching" => Interp::MomentMatching,
            "montecarlo" => Interp::MonteCarlo,
            _ => return Err(FunsorError::InvalidConfig(format!("unknown interpretation `{s}`"))),
        })
    }
}

/// Head constructor a rule is registered for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Variable,
    Apply,
    Subst,
    Reduce,
    MarkovProd,
    Slice,
    Cat,
}

impl Head {
    fn of(t: &Term) -> Option<Head> {
        Some(match t.kind() {
            TermKind::Variable(..) => Head::Variable,
            TermKind::Apply(..) => Head::Apply,
            TermKind::Subst(..) => Head::Subst,
            TermKind::Reduce(..) => Head::Reduce,
            TermKind::MarkovProd { .. } => Head::MarkovProd,
            TermKind::Slice { .. } => Head::Slice,
            TermKind::Cat(..) => Head::Cat,
            TermKind::Tensor(_) | TermKind::Gaussian(_) | TermKind::Delta(_) => return None,
        })
    }
}

/// `Pre` rules see a node before its children are evaluated; `Post` rules after.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pre,
    Post,
}

pub type Handler = fn(&Evaluator, &Term) -> Result<Option<Term>>;

pub struct Rule {
    pub name: &'static str,
    pub head: Head,
    pub phase: Phase,
    pub handler: Handler,
}

impl Rule {
    pub const fn post(name: &'static str, head: Head, handler: Handler) -> Rule {
        Rule { name, head, phase: Phase::Post, handler }
    }

    pub const fn pre(name: &'static str, head: Head, handler: Handler) -> Rule {
        Rule { name, head, phase: Phase::Pre, handler }
    }
}

pub struct Interpretation {
    pub name: &'static str,
    pub rules: Vec<Rule>,
    pub fallback: Option<Interp>,
}

impl Interpretation {
    pub fn new(name: &'static str, rules: Vec<Rule>, fallback: Option<Interp>) -> Interpretation {
        Interpretation { name, rules, fallback }
    }

    pub fn rule_names(&self) -> Vec<&'static str> {
        self.rules.iter().map(|r| r.name).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    Sequential,
    Parallel,
}

impl FromStr for ScanMode {
    type Err = FunsorError;
    fn from_str(s: &str) -> Result<ScanMode> {
        match s {
            "sequential" => Ok(ScanMode::Sequential),
            "parallel" => Ok(ScanMode::Parallel),
            _ => Err(FunsorError::InvalidConfig(format!("unknown scan mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub fuel: usize,
    pub scan: ScanMode,
    pub seed: u64,
    /// Number of Monte Carlo particles drawn per sample site.
    pub samples: usize,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig { fuel: DEFAULT_FUEL, scan: ScanMode::Parallel, seed: 0, samples: 1 }
    }
}

/// Reproducible random streams: stream `counter` of the generator seeded by `seed`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> RngState {
        RngState { seed, counter: 0 }
    }

    pub fn rng_at(&self, counter: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(counter);
        rng
    }

    pub fn next_rng(&mut self) -> ChaCha8Rng {
        let rng = self.rng_at(self.counter);
        self.counter += 1;
        rng
    }
}

pub struct Evaluator {
    interp: Cell<Interp>,
    config: EvalConfig,
    fuel_used: Cell<usize>,
    rng: RefCell<RngState>,
    levels: Cell<usize>,
    particle: Option<(Name, usize)>,
}

impl Evaluator {
    pub fn new(interp: Interp, config: EvalConfig) -> Evaluator {
        let particle = (config.samples > 1).then(|| (Name::fresh(&Name::from("particle")), config.samples));
        Evaluator {
            interp: Cell::new(interp),
            rng: RefCell::new(RngState::new(config.seed)),
            config,
            fuel_used: Cell::new(0),
            levels: Cell::new(0),
            particle,
        }
    }

    pub fn interp(&self) -> Interp {
        self.interp.get()
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    /// Contraction levels executed by the most recent Markov product.
    pub fn levels(&self) -> usize {
        self.levels.get()
    }

    pub(crate) fn record_levels(&self, n: usize) {
        self.levels.set(n);
    }

    pub fn rewrites(&self) -> usize {
        self.fuel_used.get()
    }

    /// The batch variable indexing Monte Carlo particles, when more than one is drawn.
    pub fn particle(&self) -> Option<&(Name, usize)> {
        self.particle.as_ref()
    }

    pub fn next_rng(&self) -> ChaCha8Rng {
        self.rng.borrow_mut().next_rng()
    }

    /// Type-checks `t`, resets the fuel counter and evaluates.
    pub fn run(&self, t: &Term) -> Result<Term> {
        t.infer_type()?;
        self.fuel_used.set(0);
        self.eval(t)
    }

    /// Evaluates under a different interpretation, sharing fuel and randomness.
    pub fn eval_under(&self, interp: Interp, t: &Term) -> Result<Term> {
        let saved = self.interp.replace(interp);
        let out = self.eval(t);
        self.interp.set(saved);
        out
    }

    fn burn(&self) -> Result<()> {
        let used = self.fuel_used.get() + 1;
        if used > self.config.fuel {
            return Err(FunsorError::FuelExhausted(self.config.fuel));
        }
        self.fuel_used.set(used);
        Ok(())
    }

    fn try_rules(&self, t: &Term, head: Head, phase: Phase) -> Result<Option<Term>> {
        let mut next = Some(self.interp.get());
        while let Some(i) = next {
            let interp = i.interpretation();
            for rule in interp.rules.iter().filter(|r| r.head == head && r.phase == phase) {
                if let Some(r) = (rule.handler)(self, t)? {
                    self.burn()?;
                    return Ok(Some(r));
                }
            }
            next = interp.fallback;
        }
        Ok(None)
    }

    pub fn eval(&self, t: &Term) -> Result<Term> {
        let head = match Head::of(t) {
            Some(h) => h,
            None => return Ok(t.clone()),
        };
        if let Some(r) = self.try_rules(t, head, Phase::Pre)? {
            return self.eval(&r);
        }
        let t = t.map_children(|c| self.eval(c))?;
        if let Some(r) = self.try_rules(&t, head, Phase::Post)? {
            return self.eval(&r);
        }
        Ok(t)
    }
}

thread_local! {
    static STACK: RefCell<Vec<Interp>> = const { RefCell::new(Vec::new()) };
}

/// The innermost pushed interpretation, or Exact.
pub fn current_interpretation() -> Interp {
    STACK.with(|s| s.borrow().last().copied().unwrap_or(Interp::Exact))
}

pub fn push_interpretation(i: Interp) {
    STACK.with(|s| s.borrow_mut().push(i));
}

pub fn pop_interpretation() -> Result<Interp> {
    STACK.with(|s| s.borrow_mut().pop()).ok_or(FunsorError::StackUnderflow)
}

/// Runs `f` with `i` pushed, popping afterwards even if `f` fails.
pub fn with_interpretation<T>(i: Interp, f: impl FnOnce() -> T) -> T {
    push_interpretation(i);
    let out = f();
    let _ = pop_interpretation();
    out
}

/// Evaluates `t` under `i` with the default configuration.
pub fn interpret(i: Interp, t: &Term) -> Result<Term> {
    Evaluator::new(i, EvalConfig::default()).run(t)
}

/// Evaluates `t` under the current interpretation.
pub fn evaluate(t: &Term) -> Result<Term> {
    interpret(current_interpretation(), t)
}

/// Exact evaluation followed by flattening into a normal form.
pub fn normalize(t: &Term) -> Result<NormalForm> {
    NormalForm::from_term(&interpret(Interp::Exact, t)?)
}
