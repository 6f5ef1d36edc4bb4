//! PPT feasibility of a compiled EVM problem and the resulting verdict.
//!
//! Feasibility is posed as `max t` subject to every cone block minus `t I`
//! being PSD and every inequality exceeding `t`. Diagonal entries forced to zero by the linear data are found
//! first and their rows are dropped from the cones (facial reduction), so
//! feasible points on the boundary come back with `t* = 0` instead of a
//! slightly negative value. An `ENTANGLED` verdict needs an upper bound on
//! `t*` below zero recomputed from the dual matrix by our own arithmetic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::detectors::{renormalize, DetectorModel};
use crate::error::{Error, Result};
use crate::evm::{compile, partial_transpose, EvmProblem, ObservedStatistics, Relation, TailBounds, ALICE_OUTCOMES};
use crate::fockspace::{FockSpace, PolBasis};
use crate::idealops::{build_dictionary, DictionaryOptions, OperatorDictionary};
use crate::linalg::{kron, sym_eigenvalues, sym_min_eigenvalue, RMat};
use crate::photon_bounds::tail_tables;
use crate::povm::{build_povm, Outcome};
use crate::sdp::{Affine, ProblemBuilder, SdpOptions, SdpSolution, SdpStatus};

/// Anything that can solve a [`ProblemBuilder`] instance.
pub trait SolverBackend: Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &ProblemBuilder, opts: &SdpOptions) -> SdpSolution;
}

/// The crate's own primal-dual interior-point method.
#[derive(Clone, Copy, Debug, Default)]
pub struct InteriorPoint;

impl SolverBackend for InteriorPoint {
    fn name(&self) -> &'static str {
        "interior-point"
    }

    fn solve(&self, problem: &ProblemBuilder, opts: &SdpOptions) -> SdpSolution {
        problem.solve(opts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Entangled,
    NotVerified,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Entangled => "ENTANGLED",
            Verdict::NotVerified => "NOT_VERIFIED",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub sdp: SdpOptions,
    /// `t*` must fall below `-entangled_margin`.
    pub entangled_margin: f64,
    /// Cone eigenvalues of a returned point must exceed `-cone_tol`.
    pub cone_tol: f64,
    /// Linear constraints of a returned point must hold within this.
    pub constraint_tol: f64,
    /// Linear data below this magnitude count as zero in facial reduction.
    pub zero_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { sdp: SdpOptions::default(), entangled_margin: 1e-7, cone_tol: 1e-9, constraint_tol: 1e-7, zero_tol: 1e-12 }
    }
}

/// Outcome of a verification run.
#[derive(Clone, Debug)]
pub struct FeasibilityVerdict {
    pub verdict: Verdict,
    /// Optimal margin `t*`.
    pub margin: f64,
    /// Upper bound on `t*` from the dual matrix, when computable.
    pub certificate_bound: Option<f64>,
    /// Smallest cone eigenvalue of the returned point, over full cones.
    pub min_cone_eigenvalue: f64,
    /// Worst linear violation of the returned point.
    pub max_violation: f64,
    pub status: SdpStatus,
    pub iterations: usize,
    /// Cone rows dropped by facial reduction.
    pub dropped_rows: usize,
    pub backend: &'static str,
    pub message: String,
    /// Returned point, one full matrix per cone.
    pub witness: Vec<RMat>,
}

/// A cone block given as a matrix of variable indices (`None` = zero).
#[derive(Clone, Debug)]
pub struct VarMatrix {
    pub size: usize,
    entries: Vec<Option<usize>>,
}

impl VarMatrix {
    pub fn from_fn<F: FnMut(usize, usize) -> Option<usize>>(size: usize, mut f: F) -> Self {
        let mut entries = vec![None; size * size];
        for r in 0..size {
            for c in 0..size {
                entries[r * size + c] = f(r, c);
            }
        }
        VarMatrix { size, entries }
    }

    pub fn get(&self, r: usize, c: usize) -> Option<usize> {
        self.entries[r * self.size + c]
    }

    pub fn value(&self, y: &[f64]) -> RMat {
        RMat::from_fn(self.size, self.size, |r, c| self.get(r, c).map(|v| y[v]).unwrap_or(0.0))
    }
}

/// Linear data plus cones, before facial reduction.
#[derive(Clone, Debug)]
pub struct MarginProblem {
    pub n_vars: usize,
    pub equalities: Vec<Affine>,
    pub inequalities: Vec<Affine>,
    pub cones: Vec<VarMatrix>,
    /// `|y_k| <= bound[k]` holds for every feasible point.
    pub bound: Vec<f64>,
}

#[derive(Clone, Debug)]
struct MarginResult {
    t: f64,
    certificate: Option<f64>,
    y: Vec<f64>,
    status: SdpStatus,
    iterations: usize,
    dropped: usize,
    message: String,
}

/// Variables that sit on some cone diagonal (hence are nonnegative).
fn diagonal_vars(p: &MarginProblem) -> BTreeMap<usize, Vec<(usize, usize)>> {
    let mut out: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (b, m) in p.cones.iter().enumerate() {
        for r in 0..m.size {
            if let Some(v) = m.get(r, r) {
                out.entry(v).or_default().push((b, r));
            }
        }
    }
    out
}

/// Iteratively find diagonal variables forced to zero; returns dropped rows
/// per cone and the variables fixed to zero.
fn facial_reduction(p: &MarginProblem, opts: &VerifyOptions) -> (Vec<BTreeSet<usize>>, BTreeSet<usize>) {
    let diag = diagonal_vars(p);
    let mut dropped: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p.cones.len()];
    let mut zero: BTreeSet<usize> = BTreeSet::new();
    loop {
        let mut eqs = p.equalities.clone();
        for &v in &zero {
            eqs.push(Affine::new(0.0, vec![(v, 1.0)]));
        }
        let mut b = ProblemBuilder::new(p.n_vars);
        for e in eqs {
            b.add_equality(e);
        }
        let elim = b.eliminate(&opts.sdp);
        if elim.inconsistency.is_some() {
            break;
        }
        let mut found: BTreeSet<usize> = BTreeSet::new();
        // A nonnegative combination of diagonals bounded above by ~0.
        let forced = |f: &Affine| -> Option<Vec<usize>> {
            if f.constant > opts.zero_tol || f.terms.is_empty() {
                return None;
            }
            if f.terms.iter().all(|&(fv, w)| w < 0.0 && diag.contains_key(&elim.free[fv])) {
                Some(f.terms.iter().map(|&(fv, _)| elim.free[fv]).collect())
            } else {
                None
            }
        };
        for &v in diag.keys() {
            let (c, ref t) = elim.map[v];
            if c.abs() <= opts.zero_tol && t.is_empty() {
                found.insert(v);
                continue;
            }
            if let Some(vs) = forced(&Affine::new(c, t.clone())) {
                found.extend(vs);
                found.insert(v);
            }
        }
        for ineq in &p.inequalities {
            if let Some(vs) = forced(&elim.substitute(ineq)) {
                found.extend(vs);
            }
        }
        let mut new_rows = false;
        for v in found {
            for &(bk, r) in diag.get(&v).map(|x| x.as_slice()).unwrap_or(&[]) {
                if dropped[bk].insert(r) {
                    new_rows = true;
                    let m = &p.cones[bk];
                    for c in 0..m.size {
                        if let Some(u) = m.get(r, c) {
                            zero.insert(u);
                        }
                    }
                }
            }
            zero.insert(v);
        }
        if !new_rows {
            break;
        }
    }
    (dropped, zero)
}

fn solve_margin(p: &MarginProblem, backend: &dyn SolverBackend, opts: &VerifyOptions) -> MarginResult {
    let (dropped, zero) = facial_reduction(p, opts);
    let n_dropped = dropped.iter().map(|d| d.len()).sum();
    let mut b = ProblemBuilder::new(p.n_vars);
    let t = b.add_var();
    for e in &p.equalities {
        b.add_equality(e.clone());
    }
    for &v in &zero {
        b.add_equality(Affine::new(0.0, vec![(v, 1.0)]));
    }
    for f in &p.inequalities {
        let mut g = f.clone();
        g.terms.push((t, -1.0));
        b.add_inequality(g);
    }
    for (bk, m) in p.cones.iter().enumerate() {
        let keep: Vec<usize> = (0..m.size).filter(|r| !dropped[bk].contains(r)).collect();
        if keep.is_empty() {
            continue;
        }
        let blk = b.add_block(keep.len());
        for (a, &r) in keep.iter().enumerate() {
            for (cidx, &c) in keep.iter().enumerate().skip(a) {
                if let Some(v) = m.get(r, c) {
                    b.block_term(blk, v, a, cidx, 1.0);
                }
            }
            b.block_term(blk, t, a, a, -1.0);
        }
    }
    b.set_objective(vec![(t, 1.0)]);
    let sol = backend.solve(&b, &opts.sdp);
    let certificate = if matches!(sol.status, SdpStatus::Optimal | SdpStatus::Inaccurate) {
        certificate_bound(&b, &sol, t, &p.bound, &opts.sdp)
    } else {
        None
    };
    let mut y = sol.y.clone();
    y.truncate(p.n_vars);
    MarginResult {
        t: sol.objective,
        certificate,
        y,
        status: sol.status,
        iterations: sol.iterations,
        dropped: n_dropped,
        message: sol.message,
    }
}

/// Upper bound on `max t` from the solver's dual matrices, recomputed here:
/// for `X >= 0` normalized so the `t` coefficient vanishes,
/// `t* <= <C, X> + obj_c + sum_f |obj_f + <A_f, X>| * bound_f`.
fn certificate_bound(b: &ProblemBuilder, sol: &SdpSolution, t: usize, bound: &[f64], opts: &SdpOptions) -> Option<f64> {
    let elim = b.eliminate(opts);
    if elim.inconsistency.is_some() {
        return None;
    }
    let red = b.reduce(&elim);
    if sol.x_blocks.len() != red.blocks.len() {
        return None;
    }
    // Project onto the cones.
    let xs: Vec<RMat> = sol
        .x_blocks
        .iter()
        .map(|x| {
            let sym = (x + x.transpose()) * 0.5;
            let e = nalgebra::SymmetricEigen::new(sym);
            let d = e.eigenvalues.map(|v| v.max(0.0));
            &e.eigenvectors * RMat::from_diagonal(&d) * e.eigenvectors.transpose()
        })
        .collect();
    let xl: Vec<f64> = sol.x_lp.iter().map(|v| v.max(0.0)).collect();
    let inner = |entries: &crate::sdp::SymEntries, x: &RMat| entries.iter().map(|&(r, c, v)| v * x[(r, c)]).sum::<f64>();
    let grad = |f: usize, xs: &[RMat], xl: &[f64]| {
        let mut g = red.obj[f];
        for (bl, x) in xs.iter().enumerate() {
            g += inner(&red.a[f][bl], x);
        }
        for &(r, v) in &red.lp_a[f] {
            g += v * xl[r];
        }
        g
    };
    let ft = elim.free.iter().position(|&k| k == t)?;
    // t enters every kept block as -I and every LP row with -1: scale X so
    // its coefficient is zero.
    let tr: f64 = xs.iter().map(|x| x.trace()).sum::<f64>() + xl.iter().sum::<f64>();
    if tr <= 0.0 {
        return None;
    }
    let s = red.obj[ft] / tr;
    let xs: Vec<RMat> = xs.into_iter().map(|x| x * s).collect();
    let xl: Vec<f64> = xl.into_iter().map(|v| v * s).collect();
    let mut ub = red.obj_constant;
    for (bl, x) in xs.iter().enumerate() {
        ub += inner(&red.c[bl], x);
    }
    for (r, &v) in xl.iter().enumerate() {
        ub += red.lp_c[r] * v;
    }
    for f in 0..red.m {
        if f == ft {
            continue;
        }
        let k = elim.free[f];
        let g = grad(f, &xs, &xl);
        ub += g.abs() * bound.get(k).copied().unwrap_or(f64::INFINITY);
    }
    let g_t = grad(ft, &xs, &xl);
    if g_t.abs() > 1e-9 {
        return None;
    }
    Some(ub)
}

/// Assemble the verdict from a margin solve and independent re-validation.
fn judge(
    res: MarginResult,
    p: &MarginProblem,
    backend: &'static str,
    opts: &VerifyOptions,
    extra_violation: impl Fn(&[f64]) -> f64,
) -> FeasibilityVerdict {
    let witness: Vec<RMat> = p.cones.iter().map(|m| m.value(&res.y)).collect();
    let min_eig = witness.iter().map(sym_min_eigenvalue).fold(f64::INFINITY, f64::min);
    let mut viol = extra_violation(&res.y);
    for e in &p.equalities {
        viol = viol.max(e.eval(&res.y).abs());
    }
    for f in &p.inequalities {
        viol = viol.max(-f.eval(&res.y));
    }
    let solved = matches!(res.status, SdpStatus::Optimal | SdpStatus::Inaccurate);
    let verdict = if res.status == SdpStatus::InconsistentEqualities {
        // The observations contradict the linear relations outright.
        Verdict::Entangled
    } else if solved && res.t < -opts.entangled_margin && res.certificate.map(|c| c < 0.0).unwrap_or(false) {
        Verdict::Entangled
    } else if solved && min_eig >= -opts.cone_tol && viol <= opts.constraint_tol {
        Verdict::NotVerified
    } else {
        Verdict::Inconclusive
    };
    FeasibilityVerdict {
        verdict,
        margin: res.t,
        certificate_bound: res.certificate,
        min_cone_eigenvalue: min_eig,
        max_violation: viol,
        status: res.status,
        iterations: res.iterations,
        dropped_rows: res.dropped,
        backend,
        message: res.message,
        witness,
    }
}

/// Margin problem of a compiled EVM: cones `chi'` and `chi'^Gamma`.
pub fn margin_problem(problem: &EvmProblem) -> MarginProblem {
    let d = problem.dim();
    let nb = problem.dict.bob_dim();
    let n = problem.n_vars();
    let mut eqs = Vec::new();
    let mut ineqs = Vec::new();
    for row in &problem.rows {
        let f = Affine::new(-row.rhs, row.terms.clone());
        match row.relation {
            Relation::Eq => eqs.push(f),
            Relation::Ge => ineqs.push(f),
        }
    }
    // Tr chi <= sum_j ||B_j||^2 with every operator of norm at most one.
    let diag: Vec<(usize, f64)> = (0..d).filter_map(|a| problem.var(a, a).map(|v| (v, -1.0))).collect();
    ineqs.push(Affine::new(nb as f64, diag));
    let chi = VarMatrix::from_fn(d, |r, c| problem.var(r, c));
    let gamma = VarMatrix::from_fn(d, |r, c| {
        let (i, j) = (r / nb, r % nb);
        let (k, l) = (c / nb, c % nb);
        problem.var(k * nb + j, i * nb + l)
    });
    // |chi'| <= 1/2: diagonals are <|i><i| (x) B^2> <= 1/2 and chi' is PSD.
    MarginProblem { n_vars: n, equalities: eqs, inequalities: ineqs, cones: vec![chi, gamma], bound: vec![0.5; n] }
}

/// Verify a compiled EVM problem.
pub fn verify(problem: &EvmProblem, backend: &dyn SolverBackend, opts: &VerifyOptions) -> FeasibilityVerdict {
    let mp = margin_problem(problem);
    let res = solve_margin(&mp, backend, opts);
    let mut v = judge(res, &mp, backend.name(), opts, |y| {
        // Entries eliminated by orthogonality are zero by construction; check
        // the complex constraints on the rebuilt EVM as a second route.
        let chi = problem.complex_matrix(&problem.real_matrix(y));
        problem.constraints.iter().map(|c| c.violation(&chi)).fold(0.0, f64::max)
    });
    if v.verdict != Verdict::Entangled && !v.witness.is_empty() {
        // Re-derive the PPT cone from the first witness independently.
        let g = partial_transpose(&v.witness[0], 2, problem.dict.bob_dim()).expect("square EVM");
        v.min_cone_eigenvalue = v.min_cone_eigenvalue.min(sym_min_eigenvalue(&g));
        if v.verdict == Verdict::NotVerified && v.min_cone_eigenvalue < -opts.cone_tol {
            v.verdict = Verdict::Inconclusive;
        }
    }
    v
}

/// Options for the end-to-end pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOptions {
    pub dictionary: DictionaryOptions,
    /// Fold the largest efficiency into the channel before building operators.
    pub renormalize: bool,
    /// Include photon-number tail rows.
    pub tails: bool,
    /// Grades beyond the tail grade used when minimizing tail bounds.
    pub tail_extra: usize,
    pub verify: VerifyOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { dictionary: DictionaryOptions::default(), renormalize: true, tails: true, tail_extra: 3, verify: VerifyOptions::default() }
    }
}

/// Tail bounds for a dictionary, or `None` when disabled or not applicable.
pub fn pipeline_tails(dict: &OperatorDictionary, opts: &PipelineOptions) -> Result<Option<TailBounds>> {
    if !opts.tails || dict.families.is_empty() {
        return Ok(None);
    }
    tail_tables(dict, opts.tail_extra, &opts.verify.sdp).map(Some)
}

/// Build, compile and verify in one go.
pub fn verify_statistics(
    model: &DetectorModel,
    obs: &ObservedStatistics,
    backend: &dyn SolverBackend,
    opts: &PipelineOptions,
) -> Result<FeasibilityVerdict> {
    let dict = Arc::new(pipeline_dictionary(model, opts)?);
    let tails = pipeline_tails(&dict, opts)?;
    verify_with(dict, obs, tails.as_ref(), backend, opts)
}

/// Dictionary for `model`, renormalized when the options ask for it. The
/// observed statistics need no change: the common factor acts as extra loss.
pub fn pipeline_dictionary(model: &DetectorModel, opts: &PipelineOptions) -> Result<OperatorDictionary> {
    if opts.renormalize {
        build_dictionary(&renormalize(model)?.model, opts.dictionary)
    } else {
        build_dictionary(model, opts.dictionary)
    }
}

/// Verify with a prebuilt dictionary and tail bounds (reused across scans).
pub fn verify_with(
    dict: Arc<OperatorDictionary>,
    obs: &ObservedStatistics,
    tails: Option<&TailBounds>,
    backend: &dyn SolverBackend,
    opts: &PipelineOptions,
) -> Result<FeasibilityVerdict> {
    let problem = compile(dict, obs, tails)?;
    Ok(verify(&problem, backend, &opts.verify))
}

/// PPT test of squashed statistics on an explicit qubit-qutrit state.
///
/// Bob is a single photon plus vacuum measured by perfect detectors. PPT is
/// exact for a 2 x 3 system, so this is the full separability test.
pub fn verify_squashed(obs: &ObservedStatistics, backend: &dyn SolverBackend, opts: &VerifyOptions) -> Result<FeasibilityVerdict> {
    obs.validate(1e-9)?;
    for (_, y, p) in obs.entries() {
        if matches!(y, Outcome::HV | Outcome::DA | Outcome::CC) && p.abs() > 1e-12 {
            return Err(Error::Observations(format!("squashed statistics still contain {} events", y.name())));
        }
    }
    let model = DetectorModel::uniform(obs.scheme, 1, 1.0)?;
    let space: Arc<FockSpace> = FockSpace::shared(1, PolBasis::HV, 1)?;
    let povm = build_povm(&model, space)?;
    let db = 3;
    let m = 2 * db;
    let mut idx = vec![vec![0usize; m]; m];
    let mut n = 0;
    for r in 0..m {
        for c in r..m {
            idx[r][c] = n;
            idx[c][r] = n;
            n += 1;
        }
    }
    // Tr(rho X) for symmetric X as a form over the upper triangle.
    let form = |x: &RMat, rhs: f64| {
        let mut terms = Vec::new();
        for r in 0..m {
            for c in r..m {
                let w = if r == c { x[(r, c)] } else { x[(r, c)] + x[(c, r)] };
                if w != 0.0 {
                    terms.push((idx[r][c], w));
                }
            }
        }
        Affine::new(-rhs, terms)
    };
    let mut eqs = Vec::new();
    for i in 0..2 {
        for k in i..2 {
            let mut a = RMat::zeros(2, 2);
            a[(i, k)] += 0.5;
            a[(k, i)] += 0.5;
            eqs.push(form(&kron(&a, &RMat::identity(db, db)), if i == k { 0.5 } else { 0.0 }));
        }
    }
    for &x in &ALICE_OUTCOMES {
        for (y, op) in povm.elements() {
            let el = kron(&(x.projector() * 0.5), &op.real_matrix());
            eqs.push(form(&el, obs.get(x, *y)));
        }
    }
    let rho = VarMatrix::from_fn(m, |r, c| Some(idx[r][c]));
    let gamma = VarMatrix::from_fn(m, |r, c| {
        let (i, j) = (r / db, r % db);
        let (k, l) = (c / db, c % db);
        Some(idx[k * db + j][i * db + l])
    });
    let mp = MarginProblem { n_vars: n, equalities: eqs, inequalities: Vec::new(), cones: vec![rho, gamma], bound: vec![1.0; n] };
    let res = solve_margin(&mp, backend, opts);
    Ok(judge(res, &mp, backend.name(), opts, |_| 0.0))
}

/// Result of an efficiency bisection.
#[derive(Clone, Debug, PartialEq)]
pub enum EtaMin {
    /// Verified on `[eta, hi]` and not at `eta - tol`.
    Value { eta: f64, lower: f64, upper: f64 },
    /// Verified already at the lower end of the range.
    Below(f64),
    /// Not verified anywhere in the range, including the upper end.
    NotVerifiable,
}

impl EtaMin {
    pub fn value(&self) -> Option<f64> {
        match *self {
            EtaMin::Value { eta, .. } => Some(eta),
            EtaMin::Below(lo) => Some(lo),
            EtaMin::NotVerifiable => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaScan {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    /// Evenly spaced samples checked for monotonicity before bisecting.
    pub samples: usize,
}

impl Default for EtaScan {
    fn default() -> Self {
        EtaScan { lo: 0.0, hi: 1.0, tol: 1e-3, samples: 6 }
    }
}

/// Smallest `eta` in the range for which `verified(eta)` holds, assuming the
/// verdict is monotone in `eta`. Every evaluated point is checked against that
/// assumption and a violation is reported with the offending triple.
pub fn find_eta_min<F>(scan: &EtaScan, mut verified: F) -> Result<EtaMin>
where
    F: FnMut(f64) -> Result<bool>,
{
    if !(scan.lo < scan.hi) || !(scan.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("bad eta range [{}, {}] / tol {}", scan.lo, scan.hi, scan.tol)));
    }
    let mut seen: Vec<(f64, bool)> = Vec::new();
    let mut eval = |eta: f64, seen: &mut Vec<(f64, bool)>| -> Result<bool> {
        let v = verified(eta)?;
        seen.push((eta, v));
        seen.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in seen.windows(3) {
            if w[0].1 && !w[1].1 && w[2].1 {
                return Err(Error::Numerical(format!(
                    "verdict not monotone in eta: verified at {}, not at {}, verified at {}",
                    w[0].0, w[1].0, w[2].0
                )));
            }
        }
        for w in seen.windows(2) {
            if w[0].1 && !w[1].1 {
                return Err(Error::Numerical(format!(
                    "verdict not monotone in eta: verified at {}, not at {}",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(v)
    };
    let n = scan.samples.max(2);
    for k in 0..n {
        let eta = scan.lo + (scan.hi - scan.lo) * k as f64 / (n - 1) as f64;
        eval(eta, &mut seen)?;
    }
    if seen.first().map(|s| s.1).unwrap_or(false) {
        return Ok(EtaMin::Below(scan.lo));
    }
    if !seen.last().map(|s| s.1).unwrap_or(false) {
        return Ok(EtaMin::NotVerifiable);
    }
    let mut lo = seen.iter().filter(|s| !s.1).map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let mut hi = seen.iter().filter(|s| s.1).map(|s| s.0).fold(f64::INFINITY, f64::min);
    while hi - lo > scan.tol {
        let mid = 0.5 * (lo + hi);
        if eval(mid, &mut seen)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(EtaMin::Value { eta: hi, lower: lo, upper: hi })
}

/// Eigenvalue summary used in reports.
pub fn spectrum_summary(m: &RMat) -> (f64, f64) {
    let e = sym_eigenvalues(m);
    (e.first().copied().unwrap_or(0.0), e.last().copied().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{simulate_statistics, squash_statistics, ChannelParams, Resend};
    use crate::detectors::Scheme;

    fn run(model: &DetectorModel, omega: f64, loss: f64, p: f64) -> FeasibilityVerdict {
        let params = ChannelParams::new(omega, loss, p, Resend::Photons(2)).unwrap();
        let obs = simulate_statistics(&params, model).unwrap();
        verify_statistics(model, &obs, &InteriorPoint, &PipelineOptions::default()).unwrap()
    }

    #[test]
    fn noiseless_single_mode_is_entangled() {
        let m = DetectorModel::new(Scheme::Active, vec![vec![1.0, 1.0]]).unwrap();
        let v = run(&m, 0.0, 0.0, 0.0);
        assert_eq!(v.verdict, Verdict::Entangled, "{v:?}");
    }

    #[test]
    fn heavy_noise_is_not_verified() {
        let m = DetectorModel::new(Scheme::Active, vec![vec![0.9, 0.6]]).unwrap();
        let v = run(&m, 0.8, 0.2, 0.0);
        assert_eq!(v.verdict, Verdict::NotVerified, "{v:?}");
    }

    #[test]
    fn bisection_finds_step() {
        let scan = EtaScan { lo: 0.0, hi: 1.0, tol: 1e-3, samples: 5 };
        let r = find_eta_min(&scan, |eta| Ok(eta >= 0.3371)).unwrap();
        let eta = r.value().unwrap();
        assert!(eta >= 0.3371 && eta - 0.3371 <= 1e-3, "{r:?}");
        assert_eq!(find_eta_min(&scan, |_| Ok(true)).unwrap(), EtaMin::Below(0.0));
        assert_eq!(find_eta_min(&scan, |_| Ok(false)).unwrap(), EtaMin::NotVerifiable);
        assert!(find_eta_min(&scan, |eta| Ok((0.2..0.6).contains(&eta))).is_err());
    }

    #[test]
    fn squashed_extremes() {
        let m = DetectorModel::uniform(Scheme::Passive, 1, 1.0).unwrap();
        let good = simulate_statistics(&ChannelParams::new(0.0, 0.0, 0.0, Resend::Photons(2)).unwrap(), &m).unwrap();
        let v = verify_squashed(&squash_statistics(&good).unwrap(), &InteriorPoint, &VerifyOptions::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Entangled, "{v:?}");
        let bad = simulate_statistics(&ChannelParams::new(0.9, 0.0, 0.3, Resend::Photons(2)).unwrap(), &m).unwrap();
        let v = verify_squashed(&squash_statistics(&bad).unwrap(), &InteriorPoint, &VerifyOptions::default()).unwrap();
        assert_eq!(v.verdict, Verdict::NotVerified, "{v:?}");
    }
}
