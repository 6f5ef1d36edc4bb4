//! Expectation-values matrix: constraint compiler, oracle and partial transpose.
//!
//! Entry `chi[(i,j),(k,l)] = Tr(rho |i><k| (x) B_j^dag B_l)` with row index
//! `i * n_bob + j`. Constraints are generated on these complex entries, one
//! group per kind of knowledge, and then reduced to real rows over the
//! symmetric real matrix `chi'` defined by `chi = conj(c_j) c_l chi'`, which
//! is exact for real-valued states.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::detectors::Scheme;
use crate::error::{Error, Result};
use crate::fockspace::{FockOperator, FockSpace};
use crate::idealops::{pair_phase, BobKind, OperatorDictionary};
use crate::linalg::{CMat, RMat, C64, ZERO};
use crate::povm::{Outcome, PovmSet};

/// Alice's BB84 outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AliceOutcome {
    H,
    V,
    D,
    A,
}

pub const ALICE_OUTCOMES: [AliceOutcome; 4] = [AliceOutcome::H, AliceOutcome::V, AliceOutcome::D, AliceOutcome::A];

impl AliceOutcome {
    pub fn name(self) -> &'static str {
        match self {
            AliceOutcome::H => "H",
            AliceOutcome::V => "V",
            AliceOutcome::D => "D",
            AliceOutcome::A => "A",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "H" => Ok(AliceOutcome::H),
            "V" => Ok(AliceOutcome::V),
            "D" => Ok(AliceOutcome::D),
            "A" => Ok(AliceOutcome::A),
            o => Err(Error::Observations(format!("unknown Alice outcome '{o}'"))),
        }
    }

    /// Projector `|x><x|` on Alice's qubit in the `{H, V}` basis.
    pub fn projector(self) -> RMat {
        match self {
            AliceOutcome::H => RMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            AliceOutcome::V => RMat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            AliceOutcome::D => RMat::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            AliceOutcome::A => RMat::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]),
        }
    }

    /// Bob outcome that counts as an error for this preparation.
    pub fn error_outcome(self) -> Outcome {
        match self {
            AliceOutcome::H => Outcome::V,
            AliceOutcome::V => Outcome::H,
            AliceOutcome::D => Outcome::A,
            AliceOutcome::A => Outcome::D,
        }
    }

    /// Double click in the same basis.
    pub fn double_click(self) -> Outcome {
        match self {
            AliceOutcome::H | AliceOutcome::V => Outcome::HV,
            AliceOutcome::D | AliceOutcome::A => Outcome::DA,
        }
    }
}

/// Joint probabilities `p(x, y) = Tr(rho (1/2 P_x) (x) M_y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedStatistics {
    pub scheme: Scheme,
    probs: BTreeMap<(AliceOutcome, Outcome), f64>,
}

impl ObservedStatistics {
    pub fn new(scheme: Scheme) -> Self {
        ObservedStatistics { scheme, probs: BTreeMap::new() }
    }

    pub fn set(&mut self, x: AliceOutcome, y: Outcome, p: f64) -> Result<()> {
        if !y.valid_for(self.scheme) {
            return Err(Error::Observations(format!("outcome {} not in the {} alphabet", y.name(), self.scheme.name())));
        }
        self.probs.insert((x, y), p);
        Ok(())
    }

    /// Probability, zero when absent.
    pub fn get(&self, x: AliceOutcome, y: Outcome) -> f64 {
        self.probs.get(&(x, y)).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (AliceOutcome, Outcome, f64)> + '_ {
        self.probs.iter().map(|(&(x, y), &p)| (x, y, p))
    }

    /// `sum_x p(x, y)` i.e. `<I (x) M_y>`.
    pub fn bob_marginal(&self, y: Outcome) -> f64 {
        ALICE_OUTCOMES.iter().map(|&x| self.get(x, y)).sum()
    }

    /// Check ranges, completeness and the per-preparation normalization.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (&(x, y), &p) in &self.probs {
            if !(-tol..=1.0 + tol).contains(&p) || !p.is_finite() {
                return Err(Error::Observations(format!("p({}, {}) = {p} outside [0, 1]", x.name(), y.name())));
            }
        }
        let alpha = Outcome::alphabet(self.scheme);
        for &x in &ALICE_OUTCOMES {
            for &y in alpha {
                if !self.probs.contains_key(&(x, y)) {
                    return Err(Error::Observations(format!("missing p({}, {})", x.name(), y.name())));
                }
            }
            let groups: Vec<Vec<Outcome>> = match self.scheme {
                Scheme::Active => vec![alpha[..4].to_vec(), alpha[4..].to_vec()],
                Scheme::Passive => vec![alpha.to_vec()],
            };
            for g in groups {
                let s: f64 = g.iter().map(|&y| self.get(x, y)).sum();
                if (s - 0.25).abs() > tol {
                    return Err(Error::Observations(format!(
                        "outcomes for Alice {} sum to {s}, expected 1/4 per measurement basis",
                        x.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exact statistics of `rho` (Alice qubit (x) Bob space, Alice-major).
    pub fn from_state(rho: &CMat, povm: &PovmSet) -> Result<Self> {
        let db = povm.space().dim();
        if rho.nrows() != 2 * db {
            return Err(Error::DimensionMismatch(format!("state of size {} for Bob dimension {db}", rho.nrows())));
        }
        let blocks = alice_blocks(rho, db);
        let mut out = ObservedStatistics::new(povm.config.scheme);
        for &x in &ALICE_OUTCOMES {
            let p = x.projector();
            for (y, m) in povm.elements() {
                let mut acc = ZERO;
                for i in 0..2 {
                    for k in 0..2 {
                        if p[(i, k)] != 0.0 {
                            acc += crate::linalg::trace_product(&blocks[k][i], m.matrix()) * (0.5 * p[(i, k)]);
                        }
                    }
                }
                out.probs.insert((x, *y), acc.re);
            }
        }
        Ok(out)
    }
}

/// `blocks[k][i]` is the Bob block `<k| rho |i>`.
fn alice_blocks(rho: &CMat, db: usize) -> [[CMat; 2]; 2] {
    let b = |k: usize, i: usize| rho.view((k * db, i * db), (db, db)).into_owned();
    [[b(0, 0), b(0, 1)], [b(1, 0), b(1, 1)]]
}

/// Origin of a constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    /// Alice's reduced state and diagonal observations.
    Observation,
    /// Off-diagonal Alice entries from the D/A statistics.
    CrossObservation,
    /// Commuting pairs of Bob operators.
    OperatorRelation,
    /// Pauli and spin-1 product identities.
    Commutation,
    /// Real-valued operators have real expectations.
    Realness,
    /// POVM blocks expanded in ideal operators.
    ProjectionDecomposition,
    /// Operator orderings such as `M >= M^2 >= 0`.
    RelationInequality,
    /// Photon-number tail and vacuum bounds.
    PhotonTail,
}

pub const PROVENANCES: [Provenance; 8] = [
    Provenance::Observation,
    Provenance::CrossObservation,
    Provenance::OperatorRelation,
    Provenance::Commutation,
    Provenance::Realness,
    Provenance::ProjectionDecomposition,
    Provenance::RelationInequality,
    Provenance::PhotonTail,
];

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Observation => "observation",
            Provenance::CrossObservation => "cross-observation",
            Provenance::OperatorRelation => "operator-relation",
            Provenance::Commutation => "commutation",
            Provenance::Realness => "realness",
            Provenance::ProjectionDecomposition => "projection-decomposition",
            Provenance::RelationInequality => "relation-inequality",
            Provenance::PhotonTail => "photon-tail",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Ge,
}

/// `sum coef * chi[row, col]  (= or >=)  rhs` over complex entries.
#[derive(Clone, Debug)]
pub struct LinearConstraint {
    pub terms: Vec<((usize, usize), C64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub provenance: Provenance,
    pub label: String,
}

impl LinearConstraint {
    /// Value of the left side on a complex EVM.
    pub fn lhs(&self, chi: &CMat) -> C64 {
        self.terms.iter().fold(ZERO, |acc, &((r, c), a)| acc + a * chi[(r, c)])
    }

    /// Signed violation: `|lhs - rhs|` for equalities, `max(0, rhs - lhs)` otherwise.
    pub fn violation(&self, chi: &CMat) -> f64 {
        let v = self.lhs(chi);
        match self.relation {
            Relation::Eq => crate::linalg::cabs(v - C64::new(self.rhs, 0.0)),
            Relation::Ge => (self.rhs - v.re).max(0.0).max(v.im.abs()),
        }
    }
}

/// A constraint reduced to the real symmetric variables.
#[derive(Clone, Debug)]
pub struct RealRow {
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub provenance: Provenance,
    /// Index of the generating [`LinearConstraint`].
    pub source: usize,
}

/// Tail values of the photon-number bounds used by the compiler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailBounds {
    /// First grade not covered by ideal operators.
    pub grade: usize,
    /// `d_min` (active) or `c_min` (passive) at `grade`.
    pub clicks: f64,
    /// `e_min` at `grade` (active only).
    pub error: Option<f64>,
}

/// Compiled EVM feasibility problem.
#[derive(Clone, Debug)]
pub struct EvmProblem {
    pub dict: Arc<OperatorDictionary>,
    pub constraints: Vec<LinearConstraint>,
    /// Entries `(r, c)`, `r <= c`, that vanish because the operators are orthogonal.
    pub zero_entries: Vec<(usize, usize)>,
    /// Real variable of each `(r, c)` with `r <= c`, `None` when eliminated.
    var_of: BTreeMap<(usize, usize), usize>,
    /// Inverse map: representative entry of each variable.
    pub var_entries: Vec<(usize, usize)>,
    pub rows: Vec<RealRow>,
    /// Constraints whose real reduction is empty.
    pub discharged: usize,
}

impl EvmProblem {
    pub fn dim(&self) -> usize {
        self.dict.evm_dim()
    }

    pub fn n_vars(&self) -> usize {
        self.var_entries.len()
    }

    /// Real variable holding `chi'(r, c)`, if not eliminated.
    pub fn var(&self, r: usize, c: usize) -> Option<usize> {
        let key = if r <= c { (r, c) } else { (c, r) };
        self.var_of.get(&key).copied()
    }

    /// Number of generated constraints per provenance.
    pub fn counts(&self) -> Vec<(Provenance, usize)> {
        PROVENANCES.iter().map(|&p| (p, self.constraints.iter().filter(|c| c.provenance == p).count())).collect()
    }

    /// Phase `conj(c_j) c_l` of entry `(r, c)`.
    pub fn phase(&self, r: usize, c: usize) -> C64 {
        let (_, j) = self.dict.split(r);
        let (_, l) = self.dict.split(c);
        pair_phase(&self.dict, j, l)
    }

    /// Real matrix `chi'` from variable values (eliminated entries are zero).
    pub fn real_matrix(&self, y: &[f64]) -> RMat {
        let d = self.dim();
        let mut m = RMat::zeros(d, d);
        for (v, &(r, c)) in self.var_entries.iter().enumerate() {
            m[(r, c)] = y[v];
            m[(c, r)] = y[v];
        }
        m
    }

    /// Complex EVM from the real one.
    pub fn complex_matrix(&self, chi_real: &RMat) -> CMat {
        let d = self.dim();
        CMat::from_fn(d, d, |r, c| self.phase(r, c) * chi_real[(r, c)])
    }

    /// Real parametrization of a complex EVM; imaginary leftovers are returned
    /// as the second value.
    pub fn real_part(&self, chi: &CMat) -> (RMat, f64) {
        let d = self.dim();
        let mut worst = 0.0f64;
        let m = RMat::from_fn(d, d, |r, c| {
            let z = chi[(r, c)] * self.phase(r, c).conj();
            worst = worst.max(z.im.abs());
            z.re
        });
        (m, worst)
    }

    /// Plain-text listing of every constraint with its provenance.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let d = &self.dict;
        let name = |e: usize| {
            let (i, j) = d.split(e);
            format!("{}.{}", d.alice[i].name, d.bob[j].name)
        };
        let _ = writeln!(s, "# evm dim {} vars {} zero-entries {}", self.dim(), self.n_vars(), self.zero_entries.len());
        for (p, n) in self.counts() {
            let _ = writeln!(s, "# group {} {}", p.tag(), n);
        }
        for (k, c) in self.constraints.iter().enumerate() {
            let rel = if c.relation == Relation::Eq { "=" } else { ">=" };
            let _ = write!(s, "{k} [{}] ", c.provenance.tag());
            for &((r, cc), a) in &c.terms {
                let _ = write!(s, "{:+}{:+}i*X({},{}) ", fmt_num(a.re), fmt_num(a.im), name(r), name(cc));
            }
            let _ = writeln!(s, "{rel} {}  ; {}", fmt_num(c.rhs), c.label);
        }
        s
    }
}

fn fmt_num(x: f64) -> f64 {
    // Stable printing: round away floating dust.
    libm::round(x * 1e12) / 1e12
}

/// Linear form over complex EVM entries.
#[derive(Clone, Debug, Default)]
struct Form {
    terms: Vec<((usize, usize), C64)>,
}

impl Form {
    fn add(&mut self, r: usize, c: usize, a: C64) {
        if a != ZERO {
            self.terms.push(((r, c), a));
        }
    }

    fn addr(&mut self, r: usize, c: usize, a: f64) {
        self.add(r, c, C64::new(a, 0.0));
    }

    fn extend(&mut self, other: &Form, s: f64) {
        for &((r, c), a) in &other.terms {
            self.add(r, c, a * s);
        }
    }
}

struct Compiler<'a> {
    dict: &'a OperatorDictionary,
    out: Vec<LinearConstraint>,
}

impl<'a> Compiler<'a> {
    fn e(&self, i: usize, j: usize) -> usize {
        self.dict.entry(i, j)
    }

    fn push(&mut self, f: Form, relation: Relation, rhs: f64, provenance: Provenance, label: String) {
        self.out.push(LinearConstraint { terms: f.terms, relation, rhs, provenance, label });
    }

    /// `<X (x) B_m>` for a real 2x2 Alice matrix `X`.
    fn alice_weighted(&self, x: &RMat, m: usize) -> Form {
        let mut f = Form::default();
        for i in 0..2 {
            for k in 0..2 {
                if x[(i, k)] != 0.0 {
                    // Tr(rho |i><k| (x) B) pairs with X(k, i).
                    f.addr(self.e(i, 0), self.e(k, m), x[(k, i)]);
                }
            }
        }
        f
    }
}

fn observed_bob(obs: &ObservedStatistics, x: AliceOutcome, o: Outcome) -> f64 {
    obs.get(x, o)
}

/// Compile every constraint group for a dictionary and its observations.
pub fn compile(
    dict: Arc<OperatorDictionary>,
    obs: &ObservedStatistics,
    tails: Option<&TailBounds>,
) -> Result<EvmProblem> {
    if obs.scheme != dict.scheme() {
        return Err(Error::Observations("observations and dictionary use different schemes".into()));
    }
    obs.validate(1e-9)?;
    let d: &OperatorDictionary = &dict;
    let nb = d.bob_dim();
    let mut c = Compiler { dict: d, out: Vec::new() };
    let meas = d.measurement_ops();
    let ideal = d.ideal_ops();
    let outcome = |j: usize| match d.bob[j].kind {
        BobKind::Measurement(o) => o,
        _ => unreachable!(),
    };
    let alice_x = [AliceOutcome::H, AliceOutcome::V];

    // Alice's reduced state and diagonal observations.
    for i in 0..2 {
        for k in 0..2 {
            let mut f = Form::default();
            f.addr(c.e(i, 0), c.e(k, 0), 1.0);
            let rhs = if i == k { 0.5 } else { 0.0 };
            c.push(f, Relation::Eq, rhs, Provenance::Observation, format!("rho_A({i},{k})"));
        }
    }
    for i in 0..2 {
        for &m in &meas {
            let mut f = Form::default();
            f.addr(c.e(i, 0), c.e(i, m), 1.0);
            let p = 2.0 * observed_bob(obs, alice_x[i], outcome(m));
            c.push(f, Relation::Eq, p, Provenance::Observation, format!("2 p({},{})", alice_x[i].name(), d.bob[m].name));
        }
    }
    // Off-diagonal Alice entries: |H><V| + |V><H| = P_D - P_A.
    for (i, k) in [(0usize, 1usize), (1, 0)] {
        for &m in &meas {
            let mut f = Form::default();
            f.addr(c.e(i, 0), c.e(k, m), 1.0);
            let o = outcome(m);
            let p = obs.get(AliceOutcome::D, o) - obs.get(AliceOutcome::A, o);
            c.push(f, Relation::Eq, p, Provenance::CrossObservation, format!("p(D,{0}) - p(A,{0})", d.bob[m].name));
        }
    }
    // Commuting pairs.
    for &(j, l) in &d.relations.commuting {
        for i in 0..2 {
            for k in 0..2 {
                let mut f = Form::default();
                f.addr(c.e(i, j), c.e(k, l), 1.0);
                f.addr(c.e(i, l), c.e(k, j), -1.0);
                c.push(f, Relation::Eq, 0.0, Provenance::OperatorRelation, format!("[{},{}]=0", d.bob[j].name, d.bob[l].name));
            }
        }
    }
    // Product identities inside families.
    for id in &d.relations.identities {
        let idf = d.families[id.family].identity();
        for i in 0..2 {
            for k in 0..2 {
                let mut f = Form::default();
                for &(j, l, a) in &id.bilinear {
                    f.add(c.e(i, j), c.e(k, l), a);
                }
                for &(m, a) in &id.linear {
                    f.add(c.e(i, idf), c.e(k, m), -a);
                }
                c.push(f, Relation::Eq, 0.0, Provenance::Commutation, id.name.clone());
            }
        }
    }
    // Realness of <|i><i| (x) B_l>.
    for i in 0..2 {
        for l in 1..nb {
            let mut f = Form::default();
            f.addr(c.e(i, 0), c.e(i, l), 1.0);
            f.addr(c.e(i, l), c.e(i, 0), -1.0);
            c.push(f, Relation::Eq, 0.0, Provenance::Realness, format!("Im <{}>", d.bob[l].name));
        }
    }
    // Measurement blocks times ideal operators.
    let non_ideal: Vec<usize> = (0..nb).filter(|&j| !d.bob[j].is_ideal()).collect();
    for &j in &non_ideal {
        for &l in &ideal {
            let BobKind::Ideal(fam) = d.bob[l].kind else { unreachable!() };
            if d.is_orthogonal(j, l) {
                continue;
            }
            let Some(dec) = d.decomposition(j, fam) else { continue };
            let reversed = !d.commute(j, l);
            for i in 0..2 {
                for k in 0..2 {
                    let mut f = Form::default();
                    f.addr(c.e(i, j), c.e(k, l), 1.0);
                    for &(a, x) in &dec.coefficients {
                        f.addr(c.e(i, a), c.e(k, l), -x);
                    }
                    c.push(f, Relation::Eq, 0.0, Provenance::ProjectionDecomposition, format!("{} {}", d.bob[j].name, d.bob[l].name));
                    if reversed {
                        let mut f = Form::default();
                        f.addr(c.e(i, l), c.e(k, j), 1.0);
                        for &(a, x) in &dec.coefficients {
                            f.addr(c.e(i, l), c.e(k, a), -x);
                        }
                        c.push(f, Relation::Eq, 0.0, Provenance::ProjectionDecomposition, format!("{} {}", d.bob[l].name, d.bob[j].name));
                    }
                }
            }
        }
    }
    // Operator orderings.
    let triples: Vec<Vec<usize>> = match d.scheme() {
        Scheme::Active => [[Outcome::H, Outcome::V, Outcome::HV], [Outcome::D, Outcome::A, Outcome::DA]]
            .iter()
            .map(|t| t.iter().filter_map(|&o| d.measurement_index(o)).collect())
            .collect(),
        Scheme::Passive => Vec::new(),
    };
    for i in 0..2 {
        match d.scheme() {
            Scheme::Active => {
                for t in &triples {
                    for &j in t {
                        for &l in t {
                            let mut f = Form::default();
                            f.addr(c.e(i, j), c.e(i, l), 1.0);
                            c.push(f, Relation::Ge, 0.0, Provenance::RelationInequality, format!("{}{} >= 0", d.bob[j].name, d.bob[l].name));
                            let mut f = Form::default();
                            f.addr(c.e(i, 0), c.e(i, j), 1.0);
                            f.addr(c.e(i, j), c.e(i, l), -1.0);
                            c.push(f, Relation::Ge, 0.0, Provenance::RelationInequality, format!("{0} >= {0}{1}", d.bob[j].name, d.bob[l].name));
                        }
                    }
                }
            }
            Scheme::Passive => {
                for &m in &meas {
                    let mut f = Form::default();
                    f.addr(c.e(i, m), c.e(i, m), 1.0);
                    c.push(f, Relation::Ge, 0.0, Provenance::RelationInequality, format!("{}^2 >= 0", d.bob[m].name));
                    let mut f = Form::default();
                    f.addr(c.e(i, 0), c.e(i, m), 1.0);
                    f.addr(c.e(i, m), c.e(i, m), -1.0);
                    c.push(f, Relation::Ge, 0.0, Provenance::RelationInequality, format!("{0} >= {0}^2", d.bob[m].name));
                }
            }
        }
        for &m in &meas {
            let decs = d.decompose_combination(&[(m, 1.0)]);
            // a) M - M^(blocks) >= 0
            let mut low = Form::default();
            let mut ids = Form::default();
            for (fam, coef) in &decs {
                for &(a, x) in coef {
                    low.addr(c.e(i, 0), c.e(i, a), x);
                }
                ids.addr(c.e(i, 0), c.e(i, d.families[*fam].identity()), 1.0);
            }
            let mut f = Form::default();
            f.addr(c.e(i, 0), c.e(i, m), 1.0);
            f.extend(&low, -1.0);
            c.push(f, Relation::Ge, 0.0, Provenance::RelationInequality, format!("{0} >= {0}^(low)", d.bob[m].name));
            // b) (I - M) - (I - M)^(blocks) >= 0
            let mut f = Form::default();
            f.addr(c.e(i, 0), c.e(i, 0), 1.0);
            f.addr(c.e(i, 0), c.e(i, m), -1.0);
            f.extend(&ids, -1.0);
            f.extend(&low, 1.0);
            c.push(f, Relation::Ge, 0.0, Provenance::RelationInequality, format!("I-{0} >= (I-{0})^(low)", d.bob[m].name));
            // c) M^(blocks) >= 0
            c.push(low, Relation::Ge, 0.0, Provenance::RelationInequality, format!("{}^(low) >= 0", d.bob[m].name));
        }
    }
    // Photon-number tails.
    if let Some(t) = tails {
        if !d.families.is_empty() {
            photon_tail_rows(&mut c, obs, t)?;
        }
    }

    reduce(dict.clone(), c.out)
}

fn photon_tail_rows(c: &mut Compiler<'_>, obs: &ObservedStatistics, t: &TailBounds) -> Result<()> {
    let d = c.dict;
    let idx = |o: Outcome| {
        d.measurement_index(o).ok_or_else(|| Error::Unsupported(format!("{} missing from dictionary", o.name())))
    };
    let covered: Vec<usize> = d.families.iter().map(|f| f.identity()).collect();
    // <X (x) I_cov> and <X (x) K^(low)> for an Alice matrix X.
    let cover = |c: &Compiler<'_>, x: &RMat| {
        let mut f = Form::default();
        for &m in &covered {
            f.extend(&c.alice_weighted(x, m), 1.0);
        }
        f
    };
    let low = |c: &Compiler<'_>, x: &RMat, terms: &[(usize, f64)]| {
        let mut f = Form::default();
        for (_, coef) in d.decompose_combination(terms) {
            for (a, w) in coef {
                f.extend(&c.alice_weighted(x, a), w);
            }
        }
        f
    };
    let (k_terms, k_obs): (Vec<(usize, f64)>, Vec<f64>) = match d.scheme() {
        Scheme::Active => (
            vec![(idx(Outcome::HV)?, 0.5), (idx(Outcome::DA)?, 0.5)],
            ALICE_OUTCOMES.iter().map(|&x| 0.5 * (obs.get(x, Outcome::HV) + obs.get(x, Outcome::DA))).collect(),
        ),
        Scheme::Passive => (
            vec![(idx(Outcome::CC)?, 1.0)],
            ALICE_OUTCOMES.iter().map(|&x| obs.get(x, Outcome::CC)).collect(),
        ),
    };
    let g = t.grade;
    for (n, &x) in ALICE_OUTCOMES.iter().enumerate() {
        let px = x.projector() * 0.5;
        let mass = c.alice_weighted(&px, 0);
        let cov = cover(c, &px);
        // K_obs(x) - <P K^(low)> - tau (<P> - p_cov) >= 0, written as form >= -K_obs.
        let mut full = Form::default();
        full.extend(&low(c, &px, &k_terms), -1.0);
        full.extend(&mass, -t.clicks);
        full.extend(&cov, t.clicks);
        c.push(full, Relation::Ge, -k_obs[n], Provenance::PhotonTail, format!("clicks({}) full, tail grade {g}", x.name()));
        let mut weak = Form::default();
        weak.extend(&mass, -t.clicks);
        weak.extend(&cov, t.clicks);
        c.push(weak, Relation::Ge, -k_obs[n], Provenance::PhotonTail, format!("clicks({}) weak", x.name()));
        let mut tail = Form::default();
        tail.extend(&mass, 1.0);
        tail.extend(&cov, -1.0);
        c.push(tail, Relation::Ge, 0.0, Provenance::PhotonTail, format!("tail({}) >= 0", x.name()));
    }
    let id2 = RMat::identity(2, 2);
    if d.scheme() == Scheme::Active {
        if let Some(e3) = t.error {
            let mut ee_low = Form::default();
            let mut e_obs = 0.0;
            for &x in &ALICE_OUTCOMES {
                let px = x.projector() * 0.25;
                let terms = [(idx(x.error_outcome())?, 1.0), (idx(x.double_click())?, 0.5)];
                ee_low.extend(&low(c, &px, &terms), 1.0);
                e_obs += 0.5 * (obs.get(x, x.error_outcome()) + 0.5 * obs.get(x, x.double_click()));
            }
            let mass = c.alice_weighted(&id2, 0);
            let cov = cover(c, &id2);
            let mut full = Form::default();
            full.extend(&ee_low, -1.0);
            full.extend(&mass, -e3);
            full.extend(&cov, e3);
            c.push(full, Relation::Ge, -e_obs, Provenance::PhotonTail, "effective error full".into());
            let mut weak = Form::default();
            weak.extend(&mass, -e3);
            weak.extend(&cov, e3);
            c.push(weak, Relation::Ge, -e_obs, Provenance::PhotonTail, "effective error weak".into());
        }
    }
    let vac = d.bob_index("Vac");
    if let Some(v) = vac {
        let empties: &[Outcome] = match d.scheme() {
            Scheme::Active => &[Outcome::EmptyHV, Outcome::EmptyDA],
            Scheme::Passive => &[Outcome::Empty],
        };
        for &o in empties {
            let mut f = Form::default();
            f.extend(&c.alice_weighted(&id2, v), -1.0);
            c.push(f, Relation::Ge, -obs.bob_marginal(o), Provenance::PhotonTail, format!("p0 <= <{}>", o.name()));
        }
    }
    Ok(())
}

/// Orthogonality zeros, variable map and real reduction.
fn reduce(dict: Arc<OperatorDictionary>, constraints: Vec<LinearConstraint>) -> Result<EvmProblem> {
    let d = dict.evm_dim();
    let nb = dict.bob_dim();
    let mut zero_entries = Vec::new();
    let mut var_of = BTreeMap::new();
    let mut var_entries = Vec::new();
    for r in 0..d {
        for c in r..d {
            let (j, l) = (r % nb, c % nb);
            if dict.is_orthogonal(j, l) {
                zero_entries.push((r, c));
            } else {
                var_of.insert((r, c), var_entries.len());
                var_entries.push((r, c));
            }
        }
    }
    let mut p = EvmProblem { dict, constraints, zero_entries, var_of, var_entries, rows: Vec::new(), discharged: 0 };
    let mut rows = Vec::new();
    let mut discharged = 0;
    for (k, con) in p.constraints.iter().enumerate() {
        let mut acc: BTreeMap<usize, C64> = BTreeMap::new();
        for &((r, c), a) in &con.terms {
            let z = a * p.phase(r, c);
            if let Some(v) = p.var(r, c) {
                *acc.entry(v).or_insert(ZERO) += z;
            }
        }
        let scale = acc.values().fold(1.0f64, |m, z| m.max(crate::linalg::cabs(*z)));
        let re: Vec<(usize, f64)> = acc.iter().filter(|(_, z)| z.re.abs() > 1e-14 * scale).map(|(&v, z)| (v, z.re)).collect();
        let im: Vec<(usize, f64)> = acc.iter().filter(|(_, z)| z.im.abs() > 1e-14 * scale).map(|(&v, z)| (v, z.im)).collect();
        match con.relation {
            Relation::Eq => {
                if re.is_empty() && im.is_empty() {
                    if con.rhs.abs() > 1e-12 {
                        return Err(Error::Observations(format!(
                            "constraint '{}' forces {} = 0 on identically vanishing entries",
                            con.label, con.rhs
                        )));
                    }
                    discharged += 1;
                    continue;
                }
                if !re.is_empty() || con.rhs != 0.0 {
                    rows.push(RealRow { terms: re, relation: Relation::Eq, rhs: con.rhs, provenance: con.provenance, source: k });
                }
                if !im.is_empty() {
                    rows.push(RealRow { terms: im, relation: Relation::Eq, rhs: 0.0, provenance: con.provenance, source: k });
                }
            }
            Relation::Ge => {
                if !im.is_empty() {
                    return Err(Error::Numerical(format!("inequality '{}' has imaginary coefficients", con.label)));
                }
                if re.is_empty() {
                    if con.rhs > 1e-12 {
                        return Err(Error::Observations(format!("inequality '{}' reads 0 >= {}", con.label, con.rhs)));
                    }
                    discharged += 1;
                    continue;
                }
                rows.push(RealRow { terms: re, relation: Relation::Ge, rhs: con.rhs, provenance: con.provenance, source: k });
            }
        }
    }
    p.rows = rows;
    p.discharged = discharged;
    Ok(p)
}

/// `chi^Gamma[(i,j),(k,l)] = chi[(k,j),(i,l)]`.
pub fn partial_transpose<T: nalgebra::Scalar + Copy>(
    m: &nalgebra::DMatrix<T>,
    alice: usize,
    bob: usize,
) -> Result<nalgebra::DMatrix<T>> {
    let d = alice * bob;
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch(format!("matrix {:?} for {alice}x{bob} operators", m.shape())));
    }
    Ok(nalgebra::DMatrix::from_fn(d, d, |r, c| {
        let (i, j) = (r / bob, r % bob);
        let (k, l) = (c / bob, c % bob);
        m[(k * bob + j, i * bob + l)]
    }))
}

/// Complex EVM of a joint state by direct traces.
pub fn evm_of_state(rho: &CMat, space: &Arc<FockSpace>, dict: &OperatorDictionary) -> Result<CMat> {
    let db = space.dim();
    if rho.nrows() != 2 * db || rho.ncols() != 2 * db {
        return Err(Error::DimensionMismatch(format!("state of size {} for Bob dimension {db}", rho.nrows())));
    }
    let ops: Vec<FockOperator> = (0..dict.bob_dim()).map(|j| dict.bob_operator(j, space)).collect::<Result<_>>()?;
    let blocks = alice_blocks(rho, db);
    let nb = dict.bob_dim();
    let n = dict.evm_dim();
    let mut chi = CMat::zeros(n, n);
    for j in 0..nb {
        let bj = ops[j].matrix().adjoint();
        for l in 0..nb {
            let y = &bj * ops[l].matrix();
            for i in 0..2 {
                for k in 0..2 {
                    chi[(dict.entry(i, j), dict.entry(k, l))] = crate::linalg::trace_product(&blocks[k][i], &y);
                }
            }
        }
    }
    Ok(chi)
}

/// Joint state `sum_i |i><k| (x) rho_ik` helper: Alice-major Kronecker product.
pub fn joint_product(alice: &CMat, bob: &CMat) -> CMat {
    crate::linalg::ckron(alice, bob)
}


#[cfg(test)]
mod group_counts {
    use super::*;
    use crate::detectors::DetectorModel;
    use crate::fockspace::PolBasis;
    use crate::idealops::{build_dictionary, DictionaryOptions};
    use crate::povm::build_povm;

    fn counts(scheme: Scheme, rows: Vec<Vec<f64>>) -> Vec<usize> {
        let m = DetectorModel::new(scheme, rows).unwrap();
        let d = Arc::new(build_dictionary(&m, DictionaryOptions::default()).unwrap());
        let sp = FockSpace::shared(m.spatial_modes(), PolBasis::HV, 2).unwrap();
        let db = sp.dim();
        let mut rho = CMat::zeros(2 * db, 2 * db);
        rho[(0, 0)] = C64::new(0.5, 0.0);
        rho[(db, db)] = C64::new(0.5, 0.0);
        let obs = ObservedStatistics::from_state(&rho, &build_povm(&m, sp).unwrap()).unwrap();
        let t = TailBounds { grade: 3, clicks: 0.1, error: Some(0.05) };
        compile(d, &obs, Some(&t)).unwrap().counts().into_iter().map(|(_, n)| n).collect()
    }

    #[test]
    fn active_single_mode_groups() {
        // Projection decompositions come out at 316, four short of 320.
        assert_eq!(counts(Scheme::Active, vec![vec![0.73, 0.41]]), vec![16, 12, 188, 72, 34, 316, 108, 16]);
    }

    #[test]
    fn degenerate_efficiency_adds_orthogonality() {
        let c = counts(Scheme::Active, vec![vec![1.0, 0.5]]);
        assert!(c[2] < 188);
    }
}
