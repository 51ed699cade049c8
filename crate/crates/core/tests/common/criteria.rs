//! Randomized checks shared by the integration tests and the acceptance run.
//! Each returns `Err` with a description of the first violation.

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use funsor::approx::{moment_match, monte_carlo_particles};
use funsor::gaussian::affine::affine_substitute;
use funsor::markov::{markov_parallel, markov_sequential};
use funsor::models::*;
use funsor::{
    normalize, Assignment, DeltaAtom, EvalConfig, Evaluator, FunsorError, FunsorType, GaussianAtom, Interp, LiftedOp,
    Name, NormalForm, ReduceOp, ScanMode, StepMatching, TensorAtom, Term, TypeContext,
};

use super::*;

pub type Check = std::result::Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn same(a: f64, b: f64, tol: f64) -> bool {
    (a == f64::NEG_INFINITY && b == f64::NEG_INFINITY) || (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn ceil_log2(n: usize) -> usize {
    let mut levels = 0;
    while (1usize << levels) < n {
        levels += 1;
    }
    levels
}

fn random_subset<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> Vec<&'a T> {
    items.iter().filter(|_| rng.random_bool(0.5)).collect()
}

fn ctx_of(entries: &[&(&str, FunsorType)]) -> TypeContext {
    TypeContext::new(entries.iter().map(|(n, t)| (Name::from(*n), t.clone())).collect()).unwrap()
}

fn random_spd_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    random_spd(rng, d, 0.5)
}

/// Row-major offset of a ground assignment into a context's batch grid.
fn offset(ctx: &TypeContext, point: &Assignment) -> usize {
    ctx.iter().fold(0, |acc, (n, t)| acc * t.bound().unwrap() + point[n][0] as usize)
}

/// `iᵀx − ½xᵀΛx` computed from the raw slices.
pub fn gaussian_at(g: &GaussianAtom, point: &Assignment) -> f64 {
    let (i, p) = &g.slices()[offset(g.batch(), point)];
    let x = DVector::from_iterator(i.len(), g.reals().names().flat_map(|n| point[n].iter().copied()));
    i.dot(&x) - 0.5 * x.dot(&(p * &x))
}

fn tensor_at(t: &TensorAtom, point: &Assignment) -> f64 {
    t.data().as_slice().unwrap()[offset(t.context(), point)]
}

fn delta_at(d: &DeltaAtom, point: &Assignment) -> f64 {
    let p = d.point();
    let n = p.out_shape().iter().product::<usize>().max(1);
    let k = offset(p.context(), point);
    let want = &p.data().as_slice().unwrap()[k * n..(k + 1) * n];
    if point[d.name()].as_slice() == want {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

#[derive(Clone, Debug)]
enum Leaf {
    T(TensorAtom),
    G(GaussianAtom),
    D(DeltaAtom),
}

fn leaf_at(l: &Leaf, point: &Assignment) -> f64 {
    match l {
        Leaf::T(t) => tensor_at(t, point),
        Leaf::G(g) => gaussian_at(g, point),
        Leaf::D(d) => delta_at(d, point),
    }
}

fn nf_at(nf: &NormalForm, point: &Assignment) -> f64 {
    nf.deltas.iter().map(|d| delta_at(d, point)).sum::<f64>()
        + nf.tensor.as_ref().map_or(0.0, |t| tensor_at(t, point))
        + nf.gaussian.as_ref().map_or(0.0, |g| gaussian_at(g, point))
}

/// `log ∫ exp f` for `f` quadratic in the listed coordinates, recovered by
/// probing `f` at unit offsets.
fn integrate_quadratic(f: &dyn Fn(&[f64]) -> f64, d: usize) -> f64 {
    let at = |v: &[f64]| f(v);
    let c = at(&vec![0.0; d]);
    if c == f64::NEG_INFINITY {
        return c;
    }
    let unit = |k: usize, s: f64| {
        let mut v = vec![0.0; d];
        v[k] = s;
        v
    };
    let mut h = DVector::zeros(d);
    let mut a = DMatrix::zeros(d, d);
    for k in 0..d {
        let (fp, fm) = (at(&unit(k, 1.0)), at(&unit(k, -1.0)));
        h[k] = 0.5 * (fp - fm);
        a[(k, k)] = -(fp + fm - 2.0 * c);
    }
    for k in 0..d {
        for l in k + 1..d {
            let mut v = unit(k, 1.0);
            v[l] = 1.0;
            let akl = c + h[k] + h[l] - 0.5 * a[(k, k)] - 0.5 * a[(l, l)] - at(&v);
            a[(k, l)] = akl;
            a[(l, k)] = akl;
        }
    }
    let chol = a.clone().cholesky().expect("integrable quadratic");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    c + 0.5 * h.dot(&chol.solve(&h)) + 0.5 * d as f64 * LOG_2PI - 0.5 * logdet
}

/// One random sum of atoms with Exact-legal reductions: normalizing must give
/// a closed normal form that agrees pointwise with the original.
pub fn closure_case(seed: u64) -> Check {
    let mut rng = rng(seed);
    let discrete = [("i", FunsorType::Bounded(2)), ("j", FunsorType::Bounded(3))];
    let reals = [("x", FunsorType::Real(vec![])), ("y", FunsorType::Real(vec![2]))];
    let mut leaves = Vec::new();
    let (nt, ng, nd) = (rng.random_range(0..=3), rng.random_range(0..=2), rng.random_range(0..=2));
    for _ in 0..nt {
        let ctx = ctx_of(&random_subset(&mut rng, &discrete));
        let vals = (0..ctx.num_assignments()).map(|_| rng.random_range(-2.0..2.0)).collect();
        leaves.push(Leaf::T(TensorAtom::from_vec(ctx, FunsorType::scalar(), vals).map_err(fail)?));
    }
    for _ in 0..ng {
        let mut rs = random_subset(&mut rng, &reals);
        if rs.is_empty() {
            rs.push(reals.choose(&mut rng).unwrap());
        }
        let rctx = ctx_of(&rs);
        let batch = ctx_of(&random_subset(&mut rng, &discrete));
        let d: usize = rctx.iter().map(|(_, t)| t.num_elements()).sum();
        let slices: Vec<_> = (0..batch.num_assignments())
            .map(|_| (DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)), random_spd_matrix(&mut rng, d)))
            .collect();
        leaves.push(Leaf::G(GaussianAtom::from_slices(batch, rctx, &slices).map_err(fail)?));
    }
    for _ in 0..nd {
        let (v, ty) = reals.choose(&mut rng).unwrap();
        let batch = ctx_of(&random_subset(&mut rng, &discrete));
        let n = batch.num_assignments() * ty.num_elements();
        let vals = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let point = TensorAtom::from_vec(batch, ty.clone(), vals).map_err(fail)?;
        leaves.push(Leaf::D(DeltaAtom::new(Name::from(*v), point).map_err(fail)?));
    }
    if leaves.is_empty() {
        return Ok(());
    }

    let in_gauss_batch = |n: &Name| leaves.iter().any(|l| matches!(l, Leaf::G(g) if g.batch().contains(n)));
    let in_delta = |n: &Name| leaves.iter().any(|l| matches!(l, Leaf::D(d) if d.context().contains(n)));
    let in_gauss_reals = |n: &Name| leaves.iter().any(|l| matches!(l, Leaf::G(g) if g.reals().contains(n)));
    let in_tensor = |n: &Name| leaves.iter().any(|l| matches!(l, Leaf::T(t) if t.context().contains(n)));
    let mut red_discrete = Vec::new();
    for (n, t) in &discrete {
        let n = Name::from(*n);
        if in_tensor(&n) && !in_gauss_batch(&n) && !in_delta(&n) && rng.random_bool(0.5) {
            red_discrete.push((n, t.bound().unwrap()));
        }
    }
    let mut red_reals = Vec::new();
    for (n, t) in &reals {
        let n = Name::from(*n);
        if in_gauss_reals(&n) && !in_delta(&n) && rng.random_bool(0.5) {
            red_reals.push((n, t.num_elements()));
        }
    }

    let sum = Term::sum_all(leaves.iter().map(|l| match l {
        Leaf::T(t) => Term::from(t.clone()),
        Leaf::G(g) => Term::from(g.clone()),
        Leaf::D(d) => Term::from(d.clone()),
    }))
    .unwrap();
    let vars: Vec<Name> =
        red_reals.iter().map(|(n, _)| n.clone()).chain(red_discrete.iter().map(|(n, _)| n.clone())).collect();
    let term = Term::reduce_all(ReduceOp::LogSumExp, &vars, &sum);
    let nf = normalize(&term).map_err(|e| format!("seed {seed}: {e}"))?;
    ensure!(nf.lazy_rest.is_empty(), "seed {seed}: lazy parts remain in {}", nf.to_term());

    let oracle = |point: &Assignment| -> f64 {
        let mut terms = Vec::new();
        let combos: usize = red_discrete.iter().map(|(_, n)| n).product();
        for code in 0..combos {
            let mut p = point.clone();
            let mut rem = code;
            for (n, k) in &red_discrete {
                p.insert(n.clone(), vec![(rem % k) as f64]);
                rem /= k;
            }
            let dim: usize = red_reals.iter().map(|(_, d)| d).sum();
            let f = |x: &[f64]| {
                let mut q = p.clone();
                let mut at = 0;
                for (n, d) in &red_reals {
                    q.insert(n.clone(), x[at..at + d].to_vec());
                    at += d;
                }
                leaves.iter().map(|l| leaf_at(l, &q)).sum::<f64>()
            };
            terms.push(if dim == 0 { f(&[]) } else { integrate_quadratic(&f, dim) });
        }
        lse(&terms)
    };

    for _ in 0..10 {
        let mut point = Assignment::new();
        for (n, t) in &discrete {
            point.insert(Name::from(*n), vec![rng.random_range(0..t.bound().unwrap()) as f64]);
        }
        for (n, t) in &reals {
            point.insert(Name::from(*n), (0..t.num_elements()).map(|_| rng.random_range(-2.0..2.0)).collect());
        }
        for l in &leaves {
            if let Leaf::D(d) = l {
                if rng.random_bool(0.8) {
                    let p = d.point();
                    let n = p.out_shape().iter().product::<usize>().max(1);
                    let k = offset(p.context(), &point);
                    point.insert(d.name().clone(), p.data().as_slice().unwrap()[k * n..(k + 1) * n].to_vec());
                }
            }
        }
        let (want, got) = (oracle(&point), nf_at(&nf, &point));
        ensure!(same(got, want, 1e-8), "seed {seed}: normal form {got} vs original {want} at {point:?}");
    }
    Ok(())
}

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|k| f(lo + h * k as f64) * if k == 0 || k == n - 1 { 0.5 } else { 1.0 }).sum::<f64>() * h
}

fn scalar_point(entries: &[(&str, Vec<f64>)]) -> Assignment {
    entries.iter().map(|(n, v)| (Name::from(*n), v.clone())).collect()
}

/// Normalizers against trapezoid quadrature, and fuse / substitute /
/// affine substitution against pointwise evaluation.
pub fn gaussian_calculus(n1: usize, n2: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..n1 {
        let lam = rng.random_range(0.3..4.0);
        let info = rng.random_range(-3.0..3.0);
        let g = GaussianAtom::single(
            Name::from("x"),
            FunsorType::Real(vec![]),
            DVector::from_element(1, info),
            DMatrix::from_element(1, 1, lam),
        )
        .map_err(fail)?;
        let got = g.marginalize(&[Name::from("x")]).map_err(fail)?.0.value().unwrap();
        let (mu, sd) = (info / lam, lam.powf(-0.5));
        let q = trapezoid(|x| (info * x - 0.5 * lam * x * x).exp(), mu - 12.0 * sd, mu + 12.0 * sd, 4001).ln();
        ensure!((got - q).abs() < 1e-6, "1-D case {case}: {got} vs quadrature {q}");
    }
    for case in 0..n2 {
        let p = random_spd_matrix(&mut rng, 2);
        let i = DVector::from_fn(2, |_, _| rng.random_range(-1.5..1.5));
        let g = GaussianAtom::single(Name::from("y"), FunsorType::Real(vec![2]), i.clone(), p.clone()).map_err(fail)?;
        let got = g.marginalize(&[Name::from("y")]).map_err(fail)?.0.value().unwrap();
        let cov = p.clone().try_inverse().unwrap();
        let mu = &cov * &i;
        let (s0, s1) = (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt());
        let inner = |a: f64| {
            trapezoid(
                |b| {
                    let x = DVector::from_vec(vec![a, b]);
                    (i.dot(&x) - 0.5 * x.dot(&(&p * &x))).exp()
                },
                mu[1] - 10.0 * s1,
                mu[1] + 10.0 * s1,
                401,
            )
        };
        let q = trapezoid(inner, mu[0] - 10.0 * s0, mu[0] + 10.0 * s0, 401).ln();
        ensure!((got - q).abs() < 1e-4, "2-D case {case}: {got} vs quadrature {q}");
    }

    let tol = 1e-10;
    for case in 0..n1 {
        let xy =
            TypeContext::new(vec![("x".into(), FunsorType::Real(vec![])), ("y".into(), FunsorType::Real(vec![2]))])
                .unwrap();
        let batch = TypeContext::single("i".into(), FunsorType::Bounded(2));
        let slices = |rng: &mut ChaCha8Rng, n: usize, d: usize| -> Vec<(DVector<f64>, DMatrix<f64>)> {
            (0..n)
                .map(|_| (DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)), random_spd_matrix(rng, d)))
                .collect()
        };
        let a = GaussianAtom::from_slices(batch.clone(), xy.clone(), &slices(&mut rng, 2, 3)).map_err(fail)?;
        let b = GaussianAtom::from_slices(
            TypeContext::empty(),
            TypeContext::single("y".into(), FunsorType::Real(vec![2])),
            &slices(&mut rng, 1, 2),
        )
        .map_err(fail)?;
        let fused = GaussianAtom::fuse(&a, &b).map_err(fail)?;
        let xv = rng.random_range(-2.0..2.0);
        let yv = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let iv = rng.random_range(0..2) as f64;
        let pt = scalar_point(&[("x", vec![xv]), ("y", yv.clone()), ("i", vec![iv])]);
        let (want, got) = (gaussian_at(&a, &pt) + gaussian_at(&b, &pt), gaussian_at(&fused, &pt));
        ensure!(same(got, want, tol), "fuse case {case}: {got} vs {want}");

        let ybar = TensorAtom::from_vec(TypeContext::empty(), FunsorType::Real(vec![2]), yv.clone()).map_err(fail)?;
        let (c, rest) = a.substitute(&[("y".into(), &ybar)]).map_err(fail)?;
        let got = tensor_at(&c, &pt) + rest.map_or(0.0, |r| gaussian_at(&r, &pt));
        let want = gaussian_at(&a, &pt);
        ensure!(same(got, want, tol), "substitute case {case}: {got} vs {want}");

        let (s, k) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
        let u = Term::variable("u", FunsorType::Real(vec![]));
        let expr = &(&Term::scalar(s) * &u) + &Term::scalar(k);
        let (c, rest) = affine_substitute(&a, &"x".into(), &expr).map_err(fail)?;
        let uv = rng.random_range(-2.0..2.0);
        let upt = scalar_point(&[("u", vec![uv]), ("y", yv.clone()), ("i", vec![iv])]);
        let got = tensor_at(&c, &upt) + rest.map_or(0.0, |r| gaussian_at(&r, &upt));
        let want = gaussian_at(&a, &scalar_point(&[("x", vec![s * uv + k]), ("y", yv.clone()), ("i", vec![iv])]));
        ensure!(same(got, want, tol), "affine case {case}: {got} vs {want}");

        let w = Term::variable("w", FunsorType::Real(vec![2]));
        let shift =
            TensorAtom::from_vec(TypeContext::empty(), FunsorType::Real(vec![2]), vec![0.5, -1.0]).map_err(fail)?;
        let expr = &(&Term::scalar(-2.0) * &w) + &Term::from(shift);
        let (c, rest) = affine_substitute(&a, &"y".into(), &expr).map_err(fail)?;
        let wv = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let wpt = scalar_point(&[("x", vec![xv]), ("w", wv.clone()), ("i", vec![iv])]);
        let got = tensor_at(&c, &wpt) + rest.map_or(0.0, |r| gaussian_at(&r, &wpt));
        let ysub = vec![-2.0 * wv[0] + 0.5, -2.0 * wv[1] - 1.0];
        let want = gaussian_at(&a, &scalar_point(&[("x", vec![xv]), ("y", ysub), ("i", vec![iv])]));
        ensure!(same(got, want, tol), "affine vector case {case}: {got} vs {want}");
    }
    Ok(())
}

fn opts(interp: Interp, scan: ScanMode, semiring: Semiring) -> RunOptions {
    RunOptions { interp, semiring, config: EvalConfig { scan, ..EvalConfig::default() } }
}

/// Random HMMs against the forward algorithm, under every exact evaluation path.
pub fn hmm_exactness(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let k = rng.random_range(1..=4);
        let t = rng.random_range(1..=32);
        let spec = random_hmm(&mut rng, k, t);
        let want = forward(&spec);
        let model = ModelSpec::Hmm(spec);
        for interp in [Interp::Exact, Interp::Optimize] {
            for scan in [ScanMode::Sequential, ScanMode::Parallel] {
                let got = run_model(&model, &opts(interp, scan, Semiring::SumProduct)).map_err(fail)?.log_value;
                ensure!((got - want).abs() < 1e-9, "case {case} (K={k}, T={t}, {interp:?}, {scan:?}): {got} vs {want}");
            }
        }
    }
    Ok(())
}

/// Random linear-Gaussian systems against the textbook filter, with and
/// without a persistent observation bias.
pub fn kalman_exactness(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        for bias in [false, true] {
            let nz = rng.random_range(1..=3);
            let nx = rng.random_range(1..=2);
            let t = rng.random_range(1..=50);
            let spec = random_kalman(&mut rng, nz, nx, t, bias);
            let want = kalman_oracle(&spec);
            let model = ModelSpec::Kalman(spec);
            for scan in [ScanMode::Sequential, ScanMode::Parallel] {
                let got = run_model(&model, &opts(Interp::Exact, scan, Semiring::SumProduct)).map_err(fail)?.log_value;
                ensure!((got - want).abs() < 1e-6, "case {case} (bias {bias}, T={t}, {scan:?}): {got} vs {want}");
            }
        }
    }
    Ok(())
}

/// Level counts of the parallel scan and agreement with the sequential
/// recursion, on discrete and Gaussian bodies.
pub fn markov_levels(lengths: &[usize], seed: u64) -> Check {
    let mut rng = rng(seed);
    let matching = StepMatching::new(vec![("a".into(), "b".into())]).map_err(fail)?;
    for &t in lengths {
        let k = 3;
        let ctx = TypeContext::new(vec![
            ("t".into(), FunsorType::Bounded(t)),
            ("a".into(), FunsorType::Bounded(k)),
            ("b".into(), FunsorType::Bounded(k)),
        ])
        .unwrap();
        let vals = (0..t * k * k).map(|_| rng.random_range(-1.5..0.0)).collect();
        let body = Term::from(TensorAtom::from_vec(ctx, FunsorType::scalar(), vals).map_err(fail)?);
        for op in [ReduceOp::LogSumExp, ReduceOp::Max] {
            let (par, levels) = markov_parallel(&body, &"t".into(), &matching, op).map_err(fail)?;
            let seq = markov_sequential(&body, &"t".into(), &matching, op).map_err(fail)?;
            ensure!(levels == ceil_log2(t), "T={t}: {levels} levels, expected {}", ceil_log2(t));
            let (p, s) = (par.as_tensor().unwrap(), seq.as_tensor().unwrap());
            let p = p.permute_to(s.context()).map_err(fail)?;
            for (x, y) in p.data().iter().zip(s.data().iter()) {
                ensure!(same(*x, *y, 1e-8), "T={t} {op:?}: parallel {x} vs sequential {y}");
            }
        }
        if t <= 64 {
            let reals = TypeContext::new(vec![
                ("a".into(), FunsorType::Real(vec![2])),
                ("b".into(), FunsorType::Real(vec![2])),
            ])
            .unwrap();
            let batch = TypeContext::single("t".into(), FunsorType::Bounded(t));
            let slices: Vec<_> = (0..t)
                .map(|_| {
                    let f = random_matrix(&mut rng, 2, 2, 0.8);
                    let q = random_spd(&mut rng, 2, 0.3).try_inverse().unwrap();
                    let mut m = DMatrix::zeros(2, 4);
                    m.view_mut((0, 0), (2, 2)).copy_from(&(-f));
                    m.view_mut((0, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
                    let mut p = m.transpose() * &q * &m;
                    p += DMatrix::identity(4, 4) * 1e-3;
                    (DVector::from_fn(4, |_, _| rng.random_range(-0.5..0.5)), p)
                })
                .collect();
            let body = Term::from(GaussianAtom::from_slices(batch, reals, &slices).map_err(fail)?);
            let (par, levels) = markov_parallel(&body, &"t".into(), &matching, ReduceOp::LogSumExp).map_err(fail)?;
            let seq = markov_sequential(&body, &"t".into(), &matching, ReduceOp::LogSumExp).map_err(fail)?;
            ensure!(levels == ceil_log2(t), "Gaussian T={t}: {levels} levels");
            let (pn, sn) = (NormalForm::from_term(&par).map_err(fail)?, NormalForm::from_term(&seq).map_err(fail)?);
            for _ in 0..5 {
                let pt = scalar_point(&[
                    ("a", vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                    ("b", vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                ]);
                let (x, y) = (nf_at(&pn, &pt), nf_at(&sn, &pt));
                ensure!(same(x, y, 1e-8), "Gaussian T={t}: parallel {x} vs sequential {y}");
            }
        }
    }
    Ok(())
}

fn gaussian_1d(batch: TypeContext, params: &[(f64, f64)]) -> GaussianAtom {
    let slices: Vec<_> = params
        .iter()
        .map(|(mean, var)| (DVector::from_element(1, mean / var), DMatrix::from_element(1, 1, 1.0 / var)))
        .collect();
    GaussianAtom::from_slices(batch, TypeContext::single("x".into(), FunsorType::Real(vec![])), &slices).unwrap()
}

/// Moment matching: degenerate mixtures, the symmetric two-point example,
/// mass preservation, and the SLDS window behaviour.
pub fn moment_matching(seed: u64, slds_cases: usize) -> Check {
    let mut rng = rng(seed);
    let v = Name::from("c");
    let vctx = |k: usize| TypeContext::single("c".into(), FunsorType::Bounded(k));

    for case in 0..10 {
        let k = rng.random_range(1..=4);
        let d = rng.random_range(1..=3);
        let comp = (DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)), random_spd_matrix(&mut rng, d));
        let reals = TypeContext::single("y".into(), FunsorType::Real(vec![d]));
        let g = GaussianAtom::from_slices(vctx(k), reals.clone(), &vec![comp.clone(); k]).map_err(fail)?;
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = TensorAtom::from_vec(vctx(k), FunsorType::scalar(), logits.clone()).map_err(fail)?;
        let (w, m) = moment_match(Some(&t), &g, &v).map_err(fail)?;
        let (i, p) = &m.slices()[0];
        ensure!(
            (i - &comp.0).amax() < 1e-10 && (p - &comp.1).amax() < 1e-10,
            "degenerate case {case}: component changed"
        );
        let (wv, want) = (w.value().unwrap(), lse(&logits));
        ensure!((wv - want).abs() < 1e-10, "degenerate case {case}: log mass {wv} vs {want}");
    }

    let g = gaussian_1d(vctx(2), &[(-1.0, 1.0), (1.0, 1.0)]);
    let (_, m) = moment_match(None, &g, &v).map_err(fail)?;
    let mo = &m.moments().map_err(fail)?[0];
    ensure!(mo.mean[0].abs() < 1e-15 && (mo.cov[(0, 0)] - 2.0).abs() < 1e-15, "symmetric example gave {mo:?}");

    for case in 0..20 {
        let k = rng.random_range(2..=4);
        let params: Vec<(f64, f64)> =
            (0..k).map(|_| (rng.random_range(-2.0..2.0), rng.random_range(0.3..2.0))).collect();
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = gaussian_1d(vctx(k), &params);
        let t = TensorAtom::from_vec(vctx(k), FunsorType::scalar(), logits.clone()).map_err(fail)?;
        let (w, m) = moment_match(Some(&t), &g, &v).map_err(fail)?;
        let (mi, mp) = m.slices()[0].clone();
        let w = w.value().unwrap();
        let mixture = |x: f64| {
            params
                .iter()
                .zip(&logits)
                .map(|((mean, var), l)| (l + mean / var * x - 0.5 * x * x / var).exp())
                .sum::<f64>()
        };
        let matched = |x: f64| (w + mi[0] * x - 0.5 * mp[(0, 0)] * x * x).exp();
        let (a, b) = (trapezoid(mixture, -40.0, 40.0, 40001), trapezoid(matched, -40.0, 40.0, 40001));
        ensure!(((a - b) / a).abs() < 1e-4, "mass case {case}: mixture {a} vs matched {b}");
    }

    let mm = |spec: SldsSpec| {
        run_model(&ModelSpec::Slds(spec), &opts(Interp::MomentMatching, ScanMode::Parallel, Semiring::SumProduct))
    };
    for t in 1..=6 {
        let spec = random_slds(&mut rng, 2, t, t);
        let want = slds_oracle(&spec);
        let got = mm(spec).map_err(fail)?.log_value;
        ensure!((got - want).abs() < 1e-8, "SLDS T={t}, L=T: {got} vs enumeration {want}");
    }
    for case in 0..slds_cases {
        let t = 6;
        let spec = random_slds(&mut rng, 2, t, 1);
        let exact = slds_oracle(&spec);
        let short = mm(spec.clone()).map_err(fail)?.log_value;
        let long = mm(SldsSpec { window: t - 1, ..spec }).map_err(fail)?.log_value;
        ensure!(short.is_finite() && long.is_finite(), "SLDS case {case}: non-finite window value");
        ensure!(
            (long - exact).abs() <= (short - exact).abs() + 1e-12,
            "SLDS case {case}: L=T-1 error {} exceeds L=1 error {}",
            (long - exact).abs(),
            (short - exact).abs()
        );
    }
    Ok(())
}

/// Closed models with exact values used to check the Monte Carlo estimator.
pub fn monte_carlo_models(seed: u64) -> Vec<(&'static str, Term)> {
    let mut rng = rng(seed);
    let mut tensor = |names: &[(&str, usize)]| {
        let ctx =
            TypeContext::new(names.iter().map(|(n, k)| (Name::from(*n), FunsorType::Bounded(*k))).collect()).unwrap();
        let vals = (0..ctx.num_assignments()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Term::from(TensorAtom::from_vec(ctx, FunsorType::scalar(), vals).unwrap())
    };
    let lse_all = |vars: &[&str], body: &Term| {
        let vars: Vec<Name> = vars.iter().map(|v| Name::from(*v)).collect();
        Term::reduce_all(ReduceOp::LogSumExp, &vars, body)
    };
    let ti = tensor(&[("i", 4)]);
    let tij = tensor(&[("i", 3), ("j", 2)]);
    let tj = tensor(&[("j", 2)]);
    let ti3 = tensor(&[("i", 3)]);
    let tp = tensor(&[("i", 2), ("j", 3)]);
    let ti2 = tensor(&[("i", 2)]);
    let tmix = tensor(&[("i", 3)]);
    let g1 = Term::from(gaussian_1d(TypeContext::empty(), &[(0.7, 1.5)]));
    let g2 = Term::from(gaussian_1d(TypeContext::empty(), &[(0.0, 1.0)]));
    let g3 = Term::from(gaussian_1d(TypeContext::empty(), &[(-0.5, 0.5)]));
    let gi = Term::from(gaussian_1d(
        TypeContext::single("i".into(), FunsorType::Bounded(3)),
        &[(-1.0, 0.5), (0.0, 1.0), (2.0, 0.8)],
    ));
    let xy = GaussianAtom::from_slices(
        TypeContext::empty(),
        TypeContext::new(vec![("x".into(), FunsorType::Real(vec![])), ("y".into(), FunsorType::Real(vec![]))]).unwrap(),
        &[(DVector::from_vec(vec![0.3, -0.2]), DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 1.0]))],
    )
    .unwrap();
    let hmm = build_hmm(&random_hmm(&mut rng, 2, 3), ReduceOp::LogSumExp).unwrap();
    let kalman = build_kalman(&random_kalman(&mut rng, 1, 1, 3, false)).unwrap();
    let plate = Term::reduce(ReduceOp::Add, "j", &tp);
    vec![
        ("categorical", lse_all(&["i"], &ti)),
        ("two discrete", lse_all(&["i", "j"], &(tij + tj))),
        ("gaussian normalizer", lse_all(&["x"], &g1)),
        ("gaussian product", lse_all(&["x"], &(g2 + g3.clone()))),
        ("batched gaussian", lse_all(&["i"], &(lse_all(&["x"], &gi) + ti3))),
        ("batched product", lse_all(&["i"], &lse_all(&["x"], &(tmix + gi + g3.clone())))),
        ("bivariate", lse_all(&["y", "x"], &Term::from(xy))),
        ("plate", lse_all(&["i"], &(plate + ti2))),
        ("hmm", hmm),
        ("kalman", kalman),
    ]
}

/// Particle estimates against exact values, and bit-for-bit reproducibility.
pub fn monte_carlo(samples: usize, seed: u64) -> Check {
    for (name, term) in monte_carlo_models(seed) {
        let exact = Evaluator::new(Interp::Exact, EvalConfig::default())
            .run(&term)
            .map_err(fail)?
            .value()
            .ok_or_else(|| format!("{name}: no exact value"))?;
        let xs = monte_carlo_particles(&term, seed, samples).map_err(|e| format!("{name}: {e}"))?;
        ensure!(xs.len() == samples, "{name}: {} particles", xs.len());
        let ratios: Vec<f64> = xs.iter().map(|x| (x - exact).exp()).collect();
        let n = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / n;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        ensure!((mean - 1.0).abs() <= 3.0 * se + 1e-9, "{name}: mean ratio {mean} with standard error {se}");
        let again = monte_carlo_particles(&term, seed, samples).map_err(fail)?;
        ensure!(
            xs.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits()),
            "{name}: same seed gave different particles"
        );
    }
    Ok(())
}

/// Max-product over random discrete factor graphs against enumeration.
pub fn max_product(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let names = ["a", "b", "c", "d"];
    for case in 0..cases {
        let nv = rng.random_range(1..=4);
        let bounds: Vec<usize> = (0..nv).map(|_| rng.random_range(1..=3)).collect();
        let nf = rng.random_range(1..=4);
        let mut factors: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        for _ in 0..nf {
            let mut vars: Vec<usize> = (0..nv).filter(|_| rng.random_bool(0.5)).collect();
            if vars.is_empty() {
                vars.push(rng.random_range(0..nv));
            }
            let size: usize = vars.iter().map(|&v| bounds[v]).product();
            factors.push((vars, (0..size).map(|_| rng.random_range(-3.0..3.0)).collect()));
        }
        for (v, &b) in bounds.iter().enumerate() {
            if !factors.iter().any(|(vs, _)| vs.contains(&v)) {
                factors.push((vec![v], vec![0.0; b]));
            }
        }
        let mut want = f64::NEG_INFINITY;
        let total: usize = bounds.iter().product();
        for code in 0..total {
            let mut rem = code;
            let assign: Vec<usize> = bounds
                .iter()
                .map(|b| {
                    let x = rem % b;
                    rem /= b;
                    x
                })
                .collect();
            let score: f64 =
                factors.iter().map(|(vs, vals)| vals[vs.iter().fold(0, |acc, &v| acc * bounds[v] + assign[v])]).sum();
            want = want.max(score);
        }
        let terms = factors.iter().map(|(vs, vals)| {
            let ctx =
                TypeContext::new(vs.iter().map(|&v| (Name::from(names[v]), FunsorType::Bounded(bounds[v]))).collect())
                    .unwrap();
            Term::from(TensorAtom::from_vec(ctx, FunsorType::scalar(), vals.clone()).unwrap())
        });
        let body = Term::sum_all(terms).unwrap();
        let vars: Vec<Name> = names[..nv].iter().map(|n| Name::from(*n)).collect();
        let term = Term::reduce_all(ReduceOp::Max, &vars, &body);
        for interp in [Interp::Exact, Interp::Optimize] {
            let got = Evaluator::new(interp, EvalConfig::default()).run(&term).map_err(fail)?.value();
            ensure!(got.is_some_and(|g| (g - want).abs() < 1e-10), "case {case} {interp:?}: {got:?} vs {want}");
        }
    }
    Ok(())
}

fn other_shape(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<usize> {
    loop {
        let len = rng.random_range(1..=2);
        let s: Vec<usize> = (0..len).map(|_| rng.random_range(1..=4)).collect();
        if s != shape {
            return s;
        }
    }
}

fn filled(ctx: TypeContext, ty: FunsorType) -> Term {
    Term::from(TensorAtom::filled(ctx, ty, 0.5).unwrap())
}

/// Builds a well-typed term and a copy with one leaf's shape perturbed.
fn typed_pair(rng: &mut ChaCha8Rng) -> (Term, Term) {
    let n = rng.random_range(2..=4);
    let batch = TypeContext::single("i".into(), FunsorType::Bounded(n));
    let shape: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=4)).collect();
    let bad = other_shape(rng, &shape);
    match rng.random_range(0..5) {
        0 => {
            let op = *[LiftedOp::Add, LiftedOp::Sub, LiftedOp::Mul].choose(rng).unwrap();
            let y = Term::variable("y", FunsorType::Real(shape.clone()));
            let ok = Term::binary(op, &filled(batch.clone(), FunsorType::Real(shape)), &y);
            let broken = Term::binary(op, &filled(batch, FunsorType::Real(bad)), &y);
            (ok, broken)
        }
        1 => {
            let i = Term::variable("j", FunsorType::Bounded(n));
            let ok = Term::take(&filled(TypeContext::empty(), FunsorType::Real(vec![n, 2])), &i);
            let broken = Term::take(&filled(TypeContext::empty(), FunsorType::Real(vec![n + 1, 2])), &i);
            (ok, broken)
        }
        2 => {
            let other = TypeContext::single("i".into(), FunsorType::Bounded(n + 1));
            let a = filled(batch.clone(), FunsorType::scalar());
            let ok = Term::reduce(ReduceOp::LogSumExp, "i", &(&a + &filled(batch, FunsorType::scalar())));
            let broken = Term::reduce(ReduceOp::LogSumExp, "i", &(&a + &filled(other, FunsorType::scalar())));
            (ok, broken)
        }
        3 => {
            let d = shape.iter().product::<usize>();
            let g = GaussianAtom::from_slices(
                TypeContext::empty(),
                TypeContext::single("y".into(), FunsorType::Real(vec![d])),
                &[(DVector::zeros(d), DMatrix::identity(d, d))],
            )
            .unwrap();
            let g = Term::from(g);
            let ok = g.subst1("y", &filled(batch.clone(), FunsorType::Real(vec![d])));
            let broken = g.subst1("y", &filled(batch, FunsorType::Real(vec![d + 1])));
            (ok, broken)
        }
        _ => {
            let x = Term::variable("x", FunsorType::Real(shape.clone()));
            let ok = &x + &filled(batch.clone(), FunsorType::Real(shape.clone()));
            let broken = &(&x + &filled(batch, FunsorType::Real(shape))) + &Term::variable("x", FunsorType::Real(bad));
            (ok, broken)
        }
    }
}

/// Corrupted terms fail type inference and are rejected before any rewrite.
pub fn typing_guard(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let (ok, broken) = typed_pair(&mut rng);
        ensure!(ok.infer_type().is_ok(), "case {case}: original `{ok}` does not type-check");
        ensure!(matches!(broken.infer_type(), Err(FunsorError::TypeError(_))), "case {case}: `{broken}` was accepted");
        let ev = Evaluator::new(Interp::Exact, EvalConfig::default());
        ensure!(matches!(ev.run(&broken), Err(FunsorError::TypeError(_))), "case {case}: evaluation did not fail");
        ensure!(ev.rewrites() == 0, "case {case}: {} rewrites before the type error", ev.rewrites());
    }
    Ok(())
}
