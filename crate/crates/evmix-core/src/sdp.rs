//! Dense primal-dual interior-point solver for small block SDPs.
//!
//! Problems are stated in "slack" form over a vector `y`:
//!
//! ```text
//! maximize    c . y
//! subject to  S_b(y) = F0_b + sum_k y_k F_kb  is PSD for every block b,
//!             g0 + G y >= 0                   (linear rows),
//!             E y = h                          (equalities).
//! ```
//!
//! [`ProblemBuilder`] collects such a problem with sparse coefficient
//! matrices. Equalities are removed once by sparse Gaussian elimination
//! (`y = y0 + N z`), and the reduced problem is solved by an infeasible
//! HKM path-following method with a Mehrotra predictor-corrector.
//! The primal matrix `X` of the conic dual is returned as a certificate.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{RMat, RVec};

/// Sparse symmetric coefficient: every `(r, c, v)` with `r != c` also
/// contributes `v` at `(c, r)`.
pub type SymEntries = Vec<(usize, usize, f64)>;

/// Linear form `constant + sum coef * y_var`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    pub fn new(constant: f64, terms: Vec<(usize, f64)>) -> Self {
        Affine { constant, terms }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(k, a)| a * y[k]).sum::<f64>()
    }
}

/// Solver tolerances and limits.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the boundary taken per step.
    pub step_fraction: f64,
    /// Pivots below this magnitude are treated as zero in elimination.
    pub pivot_tol: f64,
    /// Equality rows whose reduced residual exceeds this are inconsistent.
    pub consistency_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            gap_tol: 1e-9,
            feas_tol: 1e-9,
            max_iter: 100,
            step_fraction: 0.95,
            pivot_tol: 1e-11,
            consistency_tol: 1e-9,
        }
    }
}

/// Outcome classification of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// Stopped early but close to optimal.
    Inaccurate,
    /// The equality system has no solution.
    InconsistentEqualities,
    /// The iteration broke down.
    Failed,
}

impl SdpStatus {
    pub fn name(self) -> &'static str {
        match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Inaccurate => "inaccurate",
            SdpStatus::InconsistentEqualities => "inconsistent",
            SdpStatus::Failed => "failed",
        }
    }
}

/// A PSD block under construction.
#[derive(Clone, Debug, Default)]
struct BlockSpec {
    size: usize,
    constant: SymEntries,
    terms: Vec<(usize, usize, usize, f64)>,
}

/// Collects an SDP over named scalar variables.
#[derive(Clone, Debug, Default)]
pub struct ProblemBuilder {
    n_vars: usize,
    blocks: Vec<BlockSpec>,
    lp: Vec<Affine>,
    eqs: Vec<Affine>,
    objective: Vec<(usize, f64)>,
}

impl ProblemBuilder {
    pub fn new(n_vars: usize) -> Self {
        ProblemBuilder { n_vars, ..Default::default() }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Append a fresh variable and return its index.
    pub fn add_var(&mut self) -> usize {
        self.n_vars += 1;
        self.n_vars - 1
    }

    /// Add an empty PSD block of the given size; returns its index.
    pub fn add_block(&mut self, size: usize) -> usize {
        self.blocks.push(BlockSpec { size, ..Default::default() });
        self.blocks.len() - 1
    }

    /// Add `v * (E_rc + E_cr)` (or `v * E_rr`) times `y_var` to a block.
    pub fn block_term(&mut self, block: usize, var: usize, r: usize, c: usize, v: f64) {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        self.blocks[block].terms.push((var, r, c, v));
    }

    /// Add a constant symmetric entry to a block.
    pub fn block_constant(&mut self, block: usize, r: usize, c: usize, v: f64) {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        self.blocks[block].constant.push((r, c, v));
    }

    /// Require `form >= 0`.
    pub fn add_inequality(&mut self, form: Affine) {
        self.lp.push(form);
    }

    /// Require `form == 0`.
    pub fn add_equality(&mut self, form: Affine) {
        self.eqs.push(form);
    }

    pub fn set_objective(&mut self, terms: Vec<(usize, f64)>) {
        self.objective = terms;
    }

    pub fn equalities(&self) -> &[Affine] {
        &self.eqs
    }

    pub fn inequalities(&self) -> &[Affine] {
        &self.lp
    }

    /// Eliminate the equalities, producing `y = y0 + N z`.
    pub fn eliminate(&self, opts: &SdpOptions) -> Elimination {
        Elimination::compute(self.n_vars, &self.eqs, opts)
    }

    /// Eliminate, solve and map the solution back to `y`.
    pub fn solve(&self, opts: &SdpOptions) -> SdpSolution {
        let elim = self.eliminate(opts);
        if let Some(res) = elim.inconsistency {
            return SdpSolution::inconsistent(self.n_vars, res);
        }
        let reduced = self.reduce(&elim);
        let sol = solve_reduced(&reduced, opts);
        let y = elim.expand(&sol.z);
        SdpSolution {
            status: sol.status,
            objective: sol.dual_objective,
            primal_objective: sol.primal_objective,
            y,
            x_blocks: sol.x_blocks,
            x_lp: sol.x_lp,
            iterations: sol.iterations,
            gap: sol.gap,
            primal_infeasibility: sol.pinf,
            dual_infeasibility: sol.dinf,
            equality_residual: elim.max_residual,
            free_vars: elim.free.clone(),
            message: sol.message,
        }
    }

    /// The reduced problem in the free variables of `elim`.
    pub fn reduce(&self, elim: &Elimination) -> ReducedSdp {
        let m = elim.free.len();
        let nb = self.blocks.len();
        let mut c: Vec<BTreeMap<(usize, usize), f64>> = vec![BTreeMap::new(); nb];
        let mut a: Vec<Vec<BTreeMap<(usize, usize), f64>>> = vec![vec![BTreeMap::new(); nb]; m];
        for (b, spec) in self.blocks.iter().enumerate() {
            for &(r, cc, v) in &spec.constant {
                *c[b].entry((r, cc)).or_insert(0.0) += v;
            }
            for &(var, r, cc, v) in &spec.terms {
                let (k0, ref comb) = elim.map[var];
                if k0 != 0.0 {
                    *c[b].entry((r, cc)).or_insert(0.0) += v * k0;
                }
                for &(f, w) in comb {
                    *a[f][b].entry((r, cc)).or_insert(0.0) += v * w;
                }
            }
        }
        let full = |m: &BTreeMap<(usize, usize), f64>| -> SymEntries {
            let mut out = Vec::with_capacity(2 * m.len());
            for (&(r, cc), &v) in m {
                if v == 0.0 {
                    continue;
                }
                out.push((r, cc, v));
                if r != cc {
                    out.push((cc, r, v));
                }
            }
            out
        };
        let lp_c: Vec<f64> = self.lp.iter().map(|f| elim.substitute(f).constant).collect();
        let mut lp_a: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (row, f) in self.lp.iter().enumerate() {
            for (fv, w) in elim.substitute(f).terms {
                lp_a[fv].push((row, w));
            }
        }
        let obj_aff = elim.substitute(&Affine::new(0.0, self.objective.clone()));
        let mut obj = vec![0.0; m];
        for (f, w) in obj_aff.terms {
            obj[f] += w;
        }
        ReducedSdp {
            m,
            blocks: self.blocks.iter().map(|b| b.size).collect(),
            c: c.iter().map(full).collect(),
            a: a.iter().map(|per| per.iter().map(full).collect()).collect(),
            lp_c,
            lp_a,
            obj,
            obj_constant: obj_aff.constant,
        }
    }

    /// Evaluate block `b` at `y` as a dense matrix.
    pub fn block_value(&self, b: usize, y: &[f64]) -> RMat {
        let spec = &self.blocks[b];
        let mut s = RMat::zeros(spec.size, spec.size);
        let mut put = |r: usize, c: usize, v: f64| {
            s[(r, c)] += v;
            if r != c {
                s[(c, r)] += v;
            }
        };
        for &(r, c, v) in &spec.constant {
            put(r, c, v);
        }
        for &(var, r, c, v) in &spec.terms {
            put(r, c, v * y[var]);
        }
        s
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_size(&self, b: usize) -> usize {
        self.blocks[b].size
    }
}

/// Result of eliminating the equality constraints.
#[derive(Clone, Debug)]
pub struct Elimination {
    /// For each original variable: `(constant, [(free index, coef)])`.
    pub map: Vec<(f64, Vec<(usize, f64)>)>,
    /// Original indices of the free variables, in free-index order.
    pub free: Vec<usize>,
    /// Largest residual among dependent equality rows.
    pub max_residual: f64,
    /// Set when some row reduced to `0 = r` with `|r|` above tolerance.
    pub inconsistency: Option<f64>,
}

impl Elimination {
    fn compute(n: usize, eqs: &[Affine], opts: &SdpOptions) -> Elimination {
        // Pivot expressions: var -> (constant, terms over non-pivot vars).
        let mut pivots: BTreeMap<usize, (f64, BTreeMap<usize, f64>)> = BTreeMap::new();
        // Which pivot expressions mention a given non-pivot var.
        let mut users: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        let mut max_residual = 0.0f64;
        let mut inconsistency = None;
        for eq in eqs {
            // Row: constant + sum a_k y_k = 0.
            let scale = eq.terms.iter().fold(eq.constant.abs(), |m, &(_, a)| m.max(a.abs())).max(1.0);
            let mut konst = eq.constant;
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            for &(k, a) in &eq.terms {
                if let Some((pc, pt)) = pivots.get(&k) {
                    konst += a * pc;
                    for (&f, &w) in pt {
                        *row.entry(f).or_insert(0.0) += a * w;
                    }
                } else {
                    *row.entry(k).or_insert(0.0) += a;
                }
            }
            row.retain(|_, v| v.abs() > opts.pivot_tol * scale);
            if row.is_empty() {
                let r = konst.abs() / scale;
                max_residual = max_residual.max(r);
                if r > opts.consistency_tol && inconsistency.is_none() {
                    inconsistency = Some(r);
                }
                continue;
            }
            let (&p, &ap) = row
                .iter()
                .max_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).unwrap().then(y.0.cmp(x.0)))
                .unwrap();
            // y_p = -(konst + sum_{k != p} a_k y_k) / a_p
            let pc = -konst / ap;
            let mut pt: BTreeMap<usize, f64> = BTreeMap::new();
            for (&k, &a) in &row {
                if k != p {
                    pt.insert(k, -a / ap);
                }
            }
            // Substitute into existing pivot rows that use y_p.
            if let Some(us) = users.remove(&p) {
                for u in us {
                    let (uc, ut) = pivots.get_mut(&u).unwrap();
                    let w = ut.remove(&p).unwrap_or(0.0);
                    if w == 0.0 {
                        continue;
                    }
                    *uc += w * pc;
                    for (&k, &a) in &pt {
                        let e = ut.entry(k).or_insert(0.0);
                        *e += w * a;
                        users.entry(k).or_default().insert(u);
                    }
                    ut.retain(|_, v| v.abs() > 1e-15);
                }
            }
            for &k in pt.keys() {
                users.entry(k).or_default().insert(p);
            }
            pivots.insert(p, (pc, pt));
        }
        let free: Vec<usize> = (0..n).filter(|k| !pivots.contains_key(k)).collect();
        let mut pos = vec![usize::MAX; n];
        for (i, &k) in free.iter().enumerate() {
            pos[k] = i;
        }
        let map = (0..n)
            .map(|k| match pivots.get(&k) {
                Some((c, t)) => (*c, t.iter().map(|(&f, &w)| (pos[f], w)).collect()),
                None => (0.0, vec![(pos[k], 1.0)]),
            })
            .collect();
        Elimination { map, free, max_residual, inconsistency }
    }

    /// Express an affine form of `y` in the free variables.
    pub fn substitute(&self, f: &Affine) -> Affine {
        let mut konst = f.constant;
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(k, a) in &f.terms {
            let (c, ref t) = self.map[k];
            konst += a * c;
            for &(fv, w) in t {
                *acc.entry(fv).or_insert(0.0) += a * w;
            }
        }
        Affine::new(konst, acc.into_iter().filter(|(_, v)| *v != 0.0).collect())
    }

    /// Map free values back to the full variable vector.
    pub fn expand(&self, z: &[f64]) -> Vec<f64> {
        self.map.iter().map(|(c, t)| c + t.iter().map(|&(f, w)| w * z[f]).sum::<f64>()).collect()
    }

    /// True when original variable `k` is pinned to a constant.
    pub fn is_fixed(&self, k: usize) -> bool {
        self.map[k].1.is_empty()
    }
}

/// Problem after equality elimination; slack is `F0 + sum z_f F_f`.
#[derive(Clone, Debug)]
pub struct ReducedSdp {
    pub m: usize,
    pub blocks: Vec<usize>,
    pub c: Vec<SymEntries>,
    pub a: Vec<Vec<SymEntries>>,
    pub lp_c: Vec<f64>,
    pub lp_a: Vec<Vec<(usize, f64)>>,
    pub obj: Vec<f64>,
    pub obj_constant: f64,
}

/// Raw solver output in reduced coordinates.
#[derive(Clone, Debug)]
pub struct ReducedSolution {
    pub status: SdpStatus,
    pub z: Vec<f64>,
    pub x_blocks: Vec<RMat>,
    pub x_lp: Vec<f64>,
    pub dual_objective: f64,
    pub primal_objective: f64,
    pub gap: f64,
    pub pinf: f64,
    pub dinf: f64,
    pub iterations: usize,
    pub message: String,
}

/// Solution mapped back to the builder's variables.
#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Optimal value of `c . y` (dual side).
    pub objective: f64,
    /// Value of the conic dual (upper bound for maximization).
    pub primal_objective: f64,
    pub y: Vec<f64>,
    /// Certificate matrices, one per PSD block.
    pub x_blocks: Vec<RMat>,
    pub x_lp: Vec<f64>,
    pub iterations: usize,
    pub gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub equality_residual: f64,
    pub free_vars: Vec<usize>,
    pub message: String,
}

impl SdpSolution {
    fn inconsistent(n: usize, res: f64) -> Self {
        SdpSolution {
            status: SdpStatus::InconsistentEqualities,
            objective: f64::NEG_INFINITY,
            primal_objective: f64::NEG_INFINITY,
            y: vec![0.0; n],
            x_blocks: Vec::new(),
            x_lp: Vec::new(),
            iterations: 0,
            gap: f64::INFINITY,
            primal_infeasibility: f64::INFINITY,
            dual_infeasibility: f64::INFINITY,
            equality_residual: res,
            free_vars: Vec::new(),
            message: format!("equalities inconsistent (residual {res:e})"),
        }
    }
}

fn sym_inner(entries: &SymEntries, y: &RMat) -> f64 {
    entries.iter().map(|&(r, c, v)| v * y[(r, c)]).sum()
}

fn add_entries(target: &mut RMat, entries: &SymEntries, s: f64) {
    for &(r, c, v) in entries {
        target[(r, c)] += s * v;
    }
}

fn symmetrize(m: &RMat) -> RMat {
    (m + m.transpose()) * 0.5
}

/// Largest `alpha` with `x + alpha d` PSD (infinity if unbounded).
fn max_step(x: &RMat, d: &RMat) -> f64 {
    if x.nrows() == 0 {
        return f64::INFINITY;
    }
    let ch = match x.clone().cholesky() {
        Some(c) => c,
        None => return 0.0,
    };
    let l = ch.l();
    // L^-1 d L^-T
    let li_d = l.solve_lower_triangular(d).unwrap_or_else(|| RMat::zeros(d.nrows(), d.ncols()));
    let t = l.solve_lower_triangular(&li_d.transpose()).unwrap_or_else(|| RMat::zeros(d.nrows(), d.ncols()));
    let lmin = crate::linalg::sym_min_eigenvalue(&symmetrize(&t));
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn max_step_lp(x: &[f64], d: &[f64]) -> f64 {
    x.iter().zip(d).filter(|(_, &di)| di < 0.0).map(|(&xi, &di)| -xi / di).fold(f64::INFINITY, f64::min)
}

fn inverse_spd(z: &RMat) -> Option<RMat> {
    if z.nrows() == 0 {
        return Some(RMat::zeros(0, 0));
    }
    z.clone().cholesky().map(|c| c.inverse())
}

/// Solve a reduced problem by infeasible HKM path following.
pub fn solve_reduced(p: &ReducedSdp, opts: &SdpOptions) -> ReducedSolution {
    let m = p.m;
    let nb = p.blocks.len();
    let nlp = p.lp_c.len();
    let n_total: usize = p.blocks.iter().sum::<usize>() + nlp;
    let b: Vec<f64> = p.obj.clone();

    let fro = |e: &SymEntries| libm::sqrt(e.iter().map(|&(_, _, v)| v * v).sum::<f64>());
    let mut a_norm = vec![0.0f64; m];
    for k in 0..m {
        let s: f64 = p.a[k].iter().map(|e| { let f = fro(e); f * f }).sum::<f64>()
            + p.lp_a[k].iter().map(|&(_, v)| v * v).sum::<f64>();
        a_norm[k] = libm::sqrt(s);
    }
    let c_norm = libm::sqrt(
        p.c.iter().map(|e| { let f = fro(e); f * f }).sum::<f64>() + p.lp_c.iter().map(|v| v * v).sum::<f64>(),
    );
    let b_norm = libm::sqrt(b.iter().map(|v| v * v).sum::<f64>());
    let sqrt_n = libm::sqrt(n_total.max(1) as f64);
    let mut xi_p: f64 = 10.0f64.max(sqrt_n);
    for k in 0..m {
        xi_p = xi_p.max(sqrt_n * (1.0 + b[k].abs()) / (1.0 + a_norm[k]));
    }
    let xi_d = 10.0f64.max(sqrt_n).max(c_norm).max(a_norm.iter().fold(0.0f64, |a, &v| a.max(v)));

    let mut x: Vec<RMat> = p.blocks.iter().map(|&n| RMat::identity(n, n) * xi_p).collect();
    let mut zm: Vec<RMat> = p.blocks.iter().map(|&n| RMat::identity(n, n) * xi_d).collect();
    let mut xl = vec![xi_p; nlp];
    let mut zl = vec![xi_d; nlp];
    let mut y = vec![0.0; m];

    let mut status = SdpStatus::Failed;
    let mut message = String::new();
    let (mut gap, mut pinf, mut dinf) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let (mut pobj, mut dobj) = (0.0, 0.0);
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<RMat>, Vec<f64>)> = None;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        // Residuals.
        let mut rp = vec![0.0; m];
        for k in 0..m {
            let mut s = 0.0;
            for bl in 0..nb {
                s += sym_inner(&p.a[k][bl], &x[bl]);
            }
            for &(r, v) in &p.lp_a[k] {
                s += v * xl[r];
            }
            rp[k] = -b[k] - s;
        }
        let mut rd: Vec<RMat> = Vec::with_capacity(nb);
        for bl in 0..nb {
            let mut s = -zm[bl].clone();
            add_entries(&mut s, &p.c[bl], 1.0);
            for k in 0..m {
                if y[k] != 0.0 {
                    add_entries(&mut s, &p.a[k][bl], y[k]);
                }
            }
            rd.push(s);
        }
        let mut rdl: Vec<f64> = (0..nlp).map(|r| p.lp_c[r] - zl[r]).collect();
        for k in 0..m {
            for &(r, v) in &p.lp_a[k] {
                rdl[r] += v * y[k];
            }
        }
        let mut xz = 0.0;
        for bl in 0..nb {
            xz += x[bl].dot(&zm[bl]);
        }
        xz += xl.iter().zip(&zl).map(|(a, b)| a * b).sum::<f64>();
        let mu = xz / n_total.max(1) as f64;
        pobj = p.c.iter().zip(&x).map(|(c, xb)| sym_inner(c, xb)).sum::<f64>()
            + p.lp_c.iter().zip(&xl).map(|(c, v)| c * v).sum::<f64>();
        dobj = b.iter().zip(&y).map(|(a, v)| a * v).sum::<f64>();
        gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        pinf = libm::sqrt(rp.iter().map(|v| v * v).sum::<f64>()) / (1.0 + b_norm);
        dinf = libm::sqrt(
            rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rdl.iter().map(|v| v * v).sum::<f64>(),
        ) / (1.0 + c_norm);
        if !(pinf.is_finite() && dinf.is_finite() && gap.is_finite()) {
            message = format!("non-finite residuals at iteration {it}");
            break;
        }
        let merit = gap.max(pinf).max(dinf);
        if best.as_ref().map(|b| merit < b.0).unwrap_or(true) {
            best = Some((merit, y.clone(), x.clone(), xl.clone()));
        }
        if gap < opts.gap_tol && pinf < opts.feas_tol && dinf < opts.feas_tol {
            status = SdpStatus::Optimal;
            break;
        }

        // W = Z^-1 per block.
        let mut w: Vec<RMat> = Vec::with_capacity(nb);
        let mut ok = true;
        for bl in 0..nb {
            match inverse_spd(&zm[bl]) {
                Some(v) => w.push(v),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            message = format!("dual slack lost definiteness at iteration {it}");
            break;
        }
        // Schur complement M_kl = <F_k, X F_l W> + LP part.
        let mut schur = RMat::zeros(m, m);
        // Per block, cache X F_k W for every k.
        for bl in 0..nb {
            let n = p.blocks[bl];
            if n == 0 {
                continue;
            }
            for k in 0..m {
                let ak = &p.a[k][bl];
                if ak.is_empty() {
                    continue;
                }
                // XA: column c accumulates v * X[:, r].
                let mut cols: BTreeMap<usize, RVec> = BTreeMap::new();
                for &(r, c, v) in ak {
                    let e = cols.entry(c).or_insert_with(|| RVec::zeros(n));
                    e.axpy(v, &x[bl].column(r), 1.0);
                }
                let mut t = RMat::zeros(n, n);
                for (c, col) in &cols {
                    // t += col * W[c, :]
                    let wr = w[bl].row(*c);
                    for j in 0..n {
                        let s = wr[j];
                        if s != 0.0 {
                            for i in 0..n {
                                t[(i, j)] += col[i] * s;
                            }
                        }
                    }
                }
                for l in k..m {
                    let al = &p.a[l][bl];
                    if al.is_empty() {
                        continue;
                    }
                    let v = sym_inner(al, &t);
                    schur[(l, k)] += v;
                }
            }
        }
        // LP part.
        let mut lp_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nlp];
        for k in 0..m {
            for &(r, v) in &p.lp_a[k] {
                lp_rows[r].push((k, v));
            }
        }
        for r in 0..nlp {
            let d = xl[r] / zl[r];
            for &(k, u) in &lp_rows[r] {
                for &(l, v) in &lp_rows[r] {
                    if l >= k {
                        schur[(l, k)] += u * v * d;
                    }
                }
            }
        }
        for k in 0..m {
            for l in (k + 1)..m {
                schur[(k, l)] = schur[(l, k)];
            }
        }
        let diag_max = (0..m).fold(0.0f64, |a, k| a.max(schur[(k, k)].abs())).max(1e-300);
        let chol = {
            let mut reg = 0.0;
            let mut out = None;
            for _ in 0..8 {
                let mut mm = schur.clone();
                for k in 0..m {
                    mm[(k, k)] += reg;
                }
                if let Some(c) = mm.cholesky() {
                    out = Some(c);
                    break;
                }
                reg = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
            }
            out
        };
        let chol = match chol {
            Some(c) => c,
            None => {
                message = format!("Schur complement not positive definite at iteration {it}");
                break;
            }
        };

        // Newton direction for a given complementarity target.
        let direction = |rc: &[RMat], rcl: &[f64]| -> (Vec<f64>, Vec<RMat>, Vec<RMat>, Vec<f64>, Vec<f64>) {
            // rhs_k = b_k + <F_k, Rc W - X Rd W> (+ LP)
            let mut g: Vec<RMat> = Vec::with_capacity(nb);
            for bl in 0..nb {
                let t = &rc[bl] * &w[bl] - &x[bl] * &rd[bl] * &w[bl];
                g.push(t);
            }
            let gl: Vec<f64> = (0..nlp).map(|r| (rcl[r] - xl[r] * rdl[r]) / zl[r]).collect();
            let mut rhs = RVec::zeros(m);
            for k in 0..m {
                let mut s = b[k];
                for bl in 0..nb {
                    s += sym_inner(&p.a[k][bl], &g[bl]);
                }
                for &(r, v) in &p.lp_a[k] {
                    s += v * gl[r];
                }
                rhs[k] = s;
            }
            let dy = chol.solve(&rhs);
            let dy: Vec<f64> = dy.iter().copied().collect();
            let mut dz: Vec<RMat> = rd.clone();
            for bl in 0..nb {
                for k in 0..m {
                    if dy[k] != 0.0 {
                        add_entries(&mut dz[bl], &p.a[k][bl], dy[k]);
                    }
                }
            }
            let mut dzl = rdl.clone();
            for k in 0..m {
                for &(r, v) in &p.lp_a[k] {
                    dzl[r] += v * dy[k];
                }
            }
            let mut dx: Vec<RMat> = Vec::with_capacity(nb);
            for bl in 0..nb {
                let t = &rc[bl] * &w[bl] - &x[bl] - &x[bl] * &dz[bl] * &w[bl];
                dx.push(symmetrize(&t));
            }
            let dxl: Vec<f64> = (0..nlp).map(|r| (rcl[r] - xl[r] * dzl[r]) / zl[r] - xl[r]).collect();
            (dy, dx, dz, dxl, dzl)
        };

        // Predictor.
        let rc0: Vec<RMat> = p.blocks.iter().map(|&n| RMat::zeros(n, n)).collect();
        let rcl0 = vec![0.0; nlp];
        let (_, dxa, dza, dxla, dzla) = direction(&rc0, &rcl0);
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for bl in 0..nb {
            ap = ap.min(max_step(&x[bl], &dxa[bl]));
            ad = ad.min(max_step(&zm[bl], &dza[bl]));
        }
        ap = ap.min(max_step_lp(&xl, &dxla)).min(1.0);
        ad = ad.min(max_step_lp(&zl, &dzla)).min(1.0);
        let mut xz_aff = 0.0;
        for bl in 0..nb {
            xz_aff += (&x[bl] + &dxa[bl] * ap).dot(&(&zm[bl] + &dza[bl] * ad));
        }
        for r in 0..nlp {
            xz_aff += (xl[r] + ap * dxla[r]) * (zl[r] + ad * dzla[r]);
        }
        let mu_aff = xz_aff / n_total.max(1) as f64;
        let sigma = {
            let ratio = (mu_aff / mu).clamp(0.0, 1.0);
            (ratio * ratio * ratio).clamp(0.0, 1.0)
        };
        // Corrector.
        let rc: Vec<RMat> = (0..nb)
            .map(|bl| {
                let n = p.blocks[bl];
                RMat::identity(n, n) * (sigma * mu) - &dxa[bl] * &dza[bl]
            })
            .collect();
        let rcl: Vec<f64> = (0..nlp).map(|r| sigma * mu - dxla[r] * dzla[r]).collect();
        let (dy, dx, dz, dxl, dzl) = direction(&rc, &rcl);
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for bl in 0..nb {
            ap = ap.min(max_step(&x[bl], &dx[bl]));
            ad = ad.min(max_step(&zm[bl], &dz[bl]));
        }
        ap = (opts.step_fraction * ap.min(max_step_lp(&xl, &dxl))).min(1.0);
        ad = (opts.step_fraction * ad.min(max_step_lp(&zl, &dzl))).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            message = format!("step length collapsed at iteration {it}");
            break;
        }
        for bl in 0..nb {
            x[bl] += &dx[bl] * ap;
            zm[bl] += &dz[bl] * ad;
        }
        for r in 0..nlp {
            xl[r] += ap * dxl[r];
            zl[r] += ad * dzl[r];
        }
        for k in 0..m {
            y[k] += ad * dy[k];
        }
    }
    if status != SdpStatus::Optimal {
        let merit = gap.max(pinf).max(dinf);
        if let Some((bm, by, bx, bxl)) = best {
            if bm < merit {
                y = by;
                x = bx;
                xl = bxl;
                dobj = b.iter().zip(&y).map(|(a, v)| a * v).sum::<f64>();
                pobj = p.c.iter().zip(&x).map(|(c, xb)| sym_inner(c, xb)).sum::<f64>()
                    + p.lp_c.iter().zip(&xl).map(|(c, v)| c * v).sum::<f64>();
            }
            if bm.min(merit) < 1e-6 {
                status = SdpStatus::Inaccurate;
            }
        }
        if message.is_empty() {
            message = format!("iteration limit reached (gap {gap:e}, pinf {pinf:e}, dinf {dinf:e})");
        }
    }
    ReducedSolution {
        status,
        z: y,
        x_blocks: x,
        x_lp: xl,
        dual_objective: dobj + p.obj_constant,
        primal_objective: pobj + p.obj_constant,
        gap,
        pinf,
        dinf,
        iterations,
        message,
    }
}

/// Minimum eigenvalue of every block of the builder at `y`, and the worst
/// linear-row and equality violations: `(block_mins, min_lp, max_eq)`.
pub fn validate(builder: &ProblemBuilder, y: &[f64]) -> (Vec<f64>, f64, f64) {
    let mins = (0..builder.block_count())
        .map(|b| crate::linalg::sym_min_eigenvalue(&builder.block_value(b, y)))
        .collect();
    let lp = builder.inequalities().iter().map(|f| f.eval(y)).fold(f64::INFINITY, f64::min);
    let eq = builder.equalities().iter().map(|f| f.eval(y).abs()).fold(0.0f64, f64::max);
    (mins, lp, eq)
}

/// Error helper for callers that need a hard failure.
pub fn require_optimal(sol: &SdpSolution) -> Result<()> {
    match sol.status {
        SdpStatus::Optimal | SdpStatus::Inaccurate => Ok(()),
        s => Err(Error::Numerical(format!("SDP {}: {}", s.name(), sol.message))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// max t s.t. [[1, x], [x, 1]] - t I PSD, x = 0.5  -> t = 0.5
    #[test]
    fn tiny_lmi_with_equality() {
        let mut b = ProblemBuilder::new(2); // x, t
        let blk = b.add_block(2);
        b.block_constant(blk, 0, 0, 1.0);
        b.block_constant(blk, 1, 1, 1.0);
        b.block_term(blk, 0, 0, 1, 1.0);
        b.block_term(blk, 1, 0, 0, -1.0);
        b.block_term(blk, 1, 1, 1, -1.0);
        b.add_equality(Affine::new(-0.5, vec![(0, 1.0)]));
        b.set_objective(vec![(1, 1.0)]);
        let s = b.solve(&SdpOptions::default());
        assert_eq!(s.status, SdpStatus::Optimal, "{}", s.message);
        assert!((s.objective - 0.5).abs() < 1e-7, "{}", s.objective);
        assert!((s.y[0] - 0.5).abs() < 1e-12);
    }

    /// Minimum eigenvalue of a fixed symmetric matrix via max t.
    #[test]
    fn min_eigenvalue_as_sdp() {
        let a = RMat::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let mut b = ProblemBuilder::new(1);
        let blk = b.add_block(3);
        for r in 0..3 {
            for c in r..3 {
                if a[(r, c)] != 0.0 {
                    b.block_constant(blk, r, c, a[(r, c)]);
                }
            }
            b.block_term(blk, 0, r, r, -1.0);
        }
        b.set_objective(vec![(0, 1.0)]);
        let s = b.solve(&SdpOptions::default());
        let want = 2.0 - libm::sqrt(2.0);
        assert!((s.objective - want).abs() < 1e-7, "{} vs {want}", s.objective);
    }

    /// LP rows: max x + y s.t. x <= 1, y <= 2, x + y <= 2.5, scalar block t <= x.
    #[test]
    fn linear_rows() {
        let mut b = ProblemBuilder::new(2);
        b.add_inequality(Affine::new(1.0, vec![(0, -1.0)]));
        b.add_inequality(Affine::new(2.0, vec![(1, -1.0)]));
        b.add_inequality(Affine::new(2.5, vec![(0, -1.0), (1, -1.0)]));
        b.add_inequality(Affine::new(0.0, vec![(0, 1.0)]));
        b.add_inequality(Affine::new(0.0, vec![(1, 1.0)]));
        b.set_objective(vec![(0, 1.0), (1, 1.0)]);
        let s = b.solve(&SdpOptions::default());
        assert!((s.objective - 2.5).abs() < 1e-7, "{}", s.objective);
    }

    #[test]
    fn inconsistent_equalities_reported() {
        let mut b = ProblemBuilder::new(1);
        b.add_equality(Affine::new(-1.0, vec![(0, 1.0)]));
        b.add_equality(Affine::new(-2.0, vec![(0, 1.0)]));
        let s = b.solve(&SdpOptions::default());
        assert_eq!(s.status, SdpStatus::InconsistentEqualities);
    }

    #[test]
    fn elimination_chains() {
        // y0 = y1, y1 = y2 + 1, y2 = 3
        let eqs = vec![
            Affine::new(0.0, vec![(0, 1.0), (1, -1.0)]),
            Affine::new(-1.0, vec![(1, 1.0), (2, -1.0)]),
            Affine::new(-3.0, vec![(2, 1.0)]),
        ];
        let e = Elimination::compute(4, &eqs, &SdpOptions::default());
        let y = e.expand(&vec![7.0; e.free.len()]);
        assert_eq!(e.free, vec![3]);
        assert!((y[0] - 4.0).abs() < 1e-14 && (y[1] - 4.0).abs() < 1e-14 && (y[2] - 3.0).abs() < 1e-14);
    }
}
