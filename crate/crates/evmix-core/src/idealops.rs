//! Ideal-operator dictionaries and the algebra between their members.
//!
//! A dictionary fixes Alice's operators `A_i = |H><i|` and Bob's ordered list
//! `B_j`: the identity, the measurement POVM elements and perfect-efficiency
//! operators supported on single spatial occupation patterns with at most two
//! photons. Every `B_j` is stored as `c_j R_j`, with `R_j` real per pattern
//! block and `c_j` either `1` or `i`; only the `sigma_y`-like members are
//! imaginary.
//!
//! Relation tables record which pairs multiply to zero, which commute, the
//! Pauli and spin-1 product identities inside each ideal family, and how each
//! measurement operator restricted to a family's block expands in the family.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::detectors::{DetectorModel, Scheme};
use crate::error::{Error, Result};
use crate::fockspace::{FockOperator, FockSpace};
use crate::linalg::{kron, least_squares, max_abs, max_abs_real, to_complex, CMat, RMat, RVec, C64, I, ONE};
use crate::povm::{active_block, build_povm, povm_block, Outcome, PatternBlock};

/// Tolerance for the exact algebraic relations.
pub const RELATION_TOL: f64 = 1e-12;

/// `B = c R` with `c = 1` (real) or `c = i` (imaginary).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Real,
    Imaginary,
}

impl Phase {
    pub fn unit(self) -> C64 {
        match self {
            Phase::Real => ONE,
            Phase::Imaginary => I,
        }
    }
}

/// What a Bob operator is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BobKind {
    Identity,
    Measurement(Outcome),
    /// Member of the ideal family with the given index.
    Ideal(usize),
}

/// Shape of an ideal family's algebra.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    /// `{|Vac><Vac|}`.
    Vacuum,
    /// One photon in one spatial mode: `{I, H, D, sigma_y}`.
    Qubit,
    /// Two photons in one spatial mode: `{I, H, V, D, A, S_y}`.
    Spin1,
    /// One photon in each of two modes: identity and local qubit operators.
    QubitPair,
}

/// A set of ideal operators sharing one pattern block.
#[derive(Clone, Debug)]
pub struct IdealFamily {
    pub name: String,
    pub kind: FamilyKind,
    pub pattern: Vec<u8>,
    /// Bob indices of the members; the first is the block identity.
    pub members: Vec<usize>,
}

impl IdealFamily {
    pub fn grade(&self) -> usize {
        self.pattern.iter().map(|&p| p as usize).sum()
    }

    pub fn identity(&self) -> usize {
        self.members[0]
    }
}

/// One of Bob's dictionary operators.
#[derive(Clone, Debug)]
pub struct BobOp {
    pub name: String,
    pub kind: BobKind,
    pub phase: Phase,
}

impl BobOp {
    pub fn is_ideal(&self) -> bool {
        matches!(self.kind, BobKind::Ideal(_))
    }
}

/// Alice's operator `A_i = |H><i|`; only `A_i^dag A_k = |i><k|` ever matters.
#[derive(Clone, Debug)]
pub struct AliceOp {
    pub name: String,
    pub index: usize,
}

/// `sum bilinear B_j B_l = sum linear B_m` inside one family.
#[derive(Clone, Debug)]
pub struct ProductIdentity {
    pub name: String,
    pub family: usize,
    pub bilinear: Vec<(usize, usize, C64)>,
    pub linear: Vec<(usize, C64)>,
    pub residual: f64,
}

/// Expansion of an operator's block on a family pattern in the family's span.
#[derive(Clone, Debug)]
pub struct BlockDecomposition {
    pub op: usize,
    pub family: usize,
    pub coefficients: Vec<(usize, f64)>,
    pub residual: f64,
}

/// Relation metadata consumed by the EVM compiler.
#[derive(Clone, Debug, Default)]
pub struct RelationTables {
    /// Unordered pairs `j < l` with `B_j B_l = 0`.
    pub orthogonal: Vec<(usize, usize)>,
    /// Unordered non-orthogonal pairs `j < l` with `[B_j, B_l] = 0`.
    pub commuting: Vec<(usize, usize)>,
    pub identities: Vec<ProductIdentity>,
    /// Only blocks that lie in the family span are listed.
    pub decompositions: Vec<BlockDecomposition>,
}

/// Which operator sets to include.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DictionaryOptions {
    pub ideal: bool,
}

impl Default for DictionaryOptions {
    fn default() -> Self {
        DictionaryOptions { ideal: true }
    }
}

/// Alice and Bob operator lists with their relations.
#[derive(Clone, Debug)]
pub struct OperatorDictionary {
    model: DetectorModel,
    options: DictionaryOptions,
    pub alice: Vec<AliceOp>,
    pub bob: Vec<BobOp>,
    pub families: Vec<IdealFamily>,
    /// Pattern blocks over which relations are checked.
    patterns: Vec<PatternBlock>,
    /// `blocks[j][p]`: real part `R_j` on pattern `p`.
    blocks: Vec<Vec<RMat>>,
    pub relations: RelationTables,
}

fn pauli_sign(a: usize, b: usize, c: usize) -> f64 {
    // Levi-Civita on indices 0, 1, 2.
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// `a_V^dag a_H` on the `n`-photon block of one spatial mode.
fn hop_h_to_v(n: usize) -> RMat {
    let mut l = RMat::zeros(n + 1, n + 1);
    for u in 0..n {
        l[(u + 1, u)] = libm::sqrt(((n - u) * (u + 1)) as f64);
    }
    l
}

/// Perfect-detector active elements on a single-mode `n`-photon block.
fn perfect_block(n: usize) -> BTreeMap<Outcome, RMat> {
    let m = DetectorModel::uniform(Scheme::Active, 1, 1.0).expect("valid");
    active_block(&m, &PatternBlock::new(&[n as u8])).into_iter().collect()
}

fn qubit_members() -> Vec<(&'static str, RMat, Phase)> {
    let p = perfect_block(1);
    let l = hop_h_to_v(1);
    vec![
        ("I2", RMat::identity(2, 2), Phase::Real),
        ("H1", p[&Outcome::H].clone(), Phase::Real),
        ("D1", p[&Outcome::D].clone(), Phase::Real),
        ("sy", &l - l.transpose(), Phase::Imaginary),
    ]
}

fn spin1_members() -> Vec<(&'static str, RMat, Phase)> {
    let p = perfect_block(2);
    let l = hop_h_to_v(2);
    vec![
        ("I3", RMat::identity(3, 3), Phase::Real),
        ("H2", p[&Outcome::H].clone(), Phase::Real),
        ("V2", p[&Outcome::V].clone(), Phase::Real),
        ("D2", p[&Outcome::D].clone(), Phase::Real),
        ("A2", p[&Outcome::A].clone(), Phase::Real),
        ("Sy", (&l - l.transpose()) * 0.5, Phase::Imaginary),
    ]
}

fn pair_members() -> Vec<(String, RMat, Phase)> {
    let q = qubit_members();
    let id = RMat::identity(2, 2);
    let mut out = vec![("I2I2".to_string(), RMat::identity(4, 4), Phase::Real)];
    for (n, m, ph) in q.iter().skip(1) {
        out.push((format!("{n}I2"), kron(m, &id), *ph));
    }
    for (n, m, ph) in q.iter().skip(1) {
        out.push((format!("I2{n}"), kron(&id, m), *ph));
    }
    out
}

fn unit_pattern(spatial: usize, s: usize, n: u8) -> Vec<u8> {
    let mut p = vec![0u8; spatial];
    p[s] = n;
    p
}

impl OperatorDictionary {
    pub fn model(&self) -> &DetectorModel {
        &self.model
    }

    pub fn scheme(&self) -> Scheme {
        self.model.scheme()
    }

    pub fn options(&self) -> DictionaryOptions {
        self.options
    }

    pub fn alice_dim(&self) -> usize {
        self.alice.len()
    }

    pub fn bob_dim(&self) -> usize {
        self.bob.len()
    }

    /// Side of the EVM.
    pub fn evm_dim(&self) -> usize {
        self.alice.len() * self.bob.len()
    }

    /// Row/column index of `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> usize {
        i * self.bob.len() + j
    }

    /// Inverse of [`entry`](Self::entry).
    pub fn split(&self, e: usize) -> (usize, usize) {
        (e / self.bob.len(), e % self.bob.len())
    }

    pub fn bob_index(&self, name: &str) -> Option<usize> {
        self.bob.iter().position(|b| b.name == name)
    }

    /// Index of the measurement operator for `o`, if present.
    pub fn measurement_index(&self, o: Outcome) -> Option<usize> {
        self.bob.iter().position(|b| b.kind == BobKind::Measurement(o))
    }

    pub fn measurement_ops(&self) -> Vec<usize> {
        (0..self.bob.len()).filter(|&j| matches!(self.bob[j].kind, BobKind::Measurement(_))).collect()
    }

    pub fn ideal_ops(&self) -> Vec<usize> {
        (0..self.bob.len()).filter(|&j| self.bob[j].is_ideal()).collect()
    }

    pub fn patterns(&self) -> &[PatternBlock] {
        &self.patterns
    }

    /// `R_j` on relation pattern `p`.
    pub fn block(&self, j: usize, p: usize) -> &RMat {
        &self.blocks[j][p]
    }

    /// Index of a pattern among the relation patterns.
    pub fn pattern_index(&self, pattern: &[u8]) -> Option<usize> {
        self.patterns.iter().position(|b| b.pattern == pattern)
    }

    /// Largest photon number carried by any ideal operator.
    pub fn ideal_grade(&self) -> usize {
        self.families.iter().map(|f| f.grade()).max().unwrap_or(0)
    }

    /// `|i><k|` on Alice's qubit.
    pub fn alice_product(&self, i: usize, k: usize) -> RMat {
        let mut m = RMat::zeros(2, 2);
        m[(i, k)] = 1.0;
        m
    }

    /// Full-space complex matrix of `B_j` on `space`.
    pub fn bob_operator(&self, j: usize, space: &Arc<FockSpace>) -> Result<FockOperator> {
        let d = space.dim();
        match self.bob[j].kind {
            BobKind::Identity => Ok(FockOperator::identity(space.clone())),
            BobKind::Measurement(o) => Ok(build_povm(&self.model, space.clone())?.element(o)?.clone()),
            BobKind::Ideal(f) => {
                let fam = &self.families[f];
                let p = self.pattern_index(&fam.pattern).expect("family patterns are relation patterns");
                let idx = space.pattern_indices(&fam.pattern);
                if idx.is_empty() {
                    return Err(Error::CutoffTooSmall { requested: fam.grade(), cutoff: space.cutoff() });
                }
                let r = &self.blocks[j][p];
                let c = self.bob[j].phase.unit();
                let mut m = CMat::zeros(d, d);
                for a in 0..idx.len() {
                    for b in 0..idx.len() {
                        m[(idx[a], idx[b])] = c * r[(a, b)];
                    }
                }
                FockOperator::new(space.clone(), m)
            }
        }
    }

    /// Complex block `B_j = c_j R_j` on relation pattern `p`.
    pub fn complex_block(&self, j: usize, p: usize) -> CMat {
        let c = self.bob[j].phase.unit();
        self.blocks[j][p].map(|x| c * x)
    }

    /// Block of a real combination `sum w_j R_j` of real operators on pattern `p`.
    pub fn combination_block(&self, terms: &[(usize, f64)], p: usize) -> RMat {
        let n = self.patterns[p].dim();
        let mut m = RMat::zeros(n, n);
        for &(j, w) in terms {
            m += &self.blocks[j][p] * w;
        }
        m
    }

    /// Decomposition of `op` on `family`, when it exists.
    pub fn decomposition(&self, op: usize, family: usize) -> Option<&BlockDecomposition> {
        self.relations.decompositions.iter().find(|d| d.op == op && d.family == family)
    }

    /// Families whose block of a real combination `sum w_j B_j` is in span,
    /// with the expansion coefficients merged across the terms.
    pub fn decompose_combination(&self, terms: &[(usize, f64)]) -> Vec<(usize, Vec<(usize, f64)>)> {
        let mut out = Vec::new();
        'fam: for f in 0..self.families.len() {
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for &(j, w) in terms {
                match self.decomposition(j, f) {
                    Some(d) => {
                        for &(a, x) in &d.coefficients {
                            *acc.entry(a).or_insert(0.0) += w * x;
                        }
                    }
                    None => {
                        let p = self.pattern_index(&self.families[f].pattern).unwrap();
                        if max_abs_real(&self.blocks[j][p]) != 0.0 {
                            continue 'fam;
                        }
                    }
                }
            }
            out.push((f, acc.into_iter().filter(|(_, x)| *x != 0.0).collect()));
        }
        out
    }

    pub fn is_orthogonal(&self, j: usize, l: usize) -> bool {
        let key = if j <= l { (j, l) } else { (l, j) };
        self.relations.orthogonal.binary_search(&key).is_ok()
    }

    pub fn commute(&self, j: usize, l: usize) -> bool {
        if j == l {
            return true;
        }
        let key = if j < l { (j, l) } else { (l, j) };
        self.relations.commuting.binary_search(&key).is_ok() || self.relations.orthogonal.binary_search(&key).is_ok()
    }
}

/// Build the dictionary for a detector model.
pub fn build_dictionary(model: &DetectorModel, options: DictionaryOptions) -> Result<OperatorDictionary> {
    let scheme = model.scheme();
    let s = model.spatial_modes();
    if scheme == Scheme::Active && s > 2 {
        return Err(Error::Unsupported(format!("active dictionaries cover 1 or 2 spatial modes, not {s}")));
    }
    let alice = vec![AliceOp { name: "A_H".into(), index: 0 }, AliceOp { name: "A_V".into(), index: 1 }];
    let mut bob = vec![BobOp { name: "I".into(), kind: BobKind::Identity, phase: Phase::Real }];
    let meas: &[Outcome] = match scheme {
        Scheme::Active => &[Outcome::H, Outcome::V, Outcome::HV, Outcome::D, Outcome::A, Outcome::DA],
        Scheme::Passive => &[Outcome::H, Outcome::V, Outcome::HV, Outcome::D, Outcome::A, Outcome::DA, Outcome::CC],
    };
    for &o in meas {
        bob.push(BobOp { name: format!("M_{}", o.name()), kind: BobKind::Measurement(o), phase: Phase::Real });
    }

    // Ideal families with their blocks.
    let mut families: Vec<IdealFamily> = Vec::new();
    let mut ideal_blocks: Vec<RMat> = Vec::new();
    let mut add_family = |name: String,
                          kind: FamilyKind,
                          pattern: Vec<u8>,
                          members: Vec<(String, RMat, Phase)>,
                          bob: &mut Vec<BobOp>,
                          families: &mut Vec<IdealFamily>| {
        let f = families.len();
        let mut idx = Vec::new();
        for (n, m, ph) in members {
            idx.push(bob.len());
            bob.push(BobOp { name: n, kind: BobKind::Ideal(f), phase: ph });
            ideal_blocks.push(m);
        }
        families.push(IdealFamily { name, kind, pattern, members: idx });
    };
    if options.ideal {
        let suffix = |k: usize| if s == 1 { String::new() } else { format!(",{}", k + 1) };
        add_family(
            "S0".into(),
            FamilyKind::Vacuum,
            vec![0; s],
            vec![("Vac".into(), RMat::identity(1, 1), Phase::Real)],
            &mut bob,
            &mut families,
        );
        for k in 0..s {
            let members = qubit_members().into_iter().map(|(n, m, p)| (format!("{n}{}", suffix(k)), m, p)).collect();
            add_family(format!("S1{}", suffix(k)), FamilyKind::Qubit, unit_pattern(s, k, 1), members, &mut bob, &mut families);
        }
        let two_photon = scheme == Scheme::Active || s == 1;
        if two_photon {
            for k in 0..s {
                let members =
                    spin1_members().into_iter().map(|(n, m, p)| (format!("{n}{}", suffix(k)), m, p)).collect();
                add_family(
                    format!("S2{}", suffix(k)),
                    FamilyKind::Spin1,
                    unit_pattern(s, k, 2),
                    members,
                    &mut bob,
                    &mut families,
                );
            }
            if s == 2 {
                let members = pair_members().into_iter().map(|(n, m, p)| (format!("{n},1+2"), m, p)).collect();
                add_family("S2,1+2".into(), FamilyKind::QubitPair, vec![1, 1], members, &mut bob, &mut families);
            }
        }
    }

    // Relation patterns: every pattern up to two photons above the ideal grade.
    let ideal_grade = families.iter().map(|f| f.grade()).max().unwrap_or(0);
    let rel_cutoff = ideal_grade + 2;
    let mut patterns = Vec::new();
    for n in 0..=rel_cutoff {
        patterns.extend(PatternBlock::all_with_photons(n, s));
    }
    let n_bob = bob.len();
    let first_ideal = n_bob - ideal_blocks.len();
    let mut blocks: Vec<Vec<RMat>> = vec![Vec::with_capacity(patterns.len()); n_bob];
    for blk in &patterns {
        let d = blk.dim();
        let povm: BTreeMap<Outcome, RMat> = povm_block(model, blk).into_iter().collect();
        for (j, op) in bob.iter().enumerate() {
            let m = match op.kind {
                BobKind::Identity => RMat::identity(d, d),
                BobKind::Measurement(o) => povm[&o].clone(),
                BobKind::Ideal(f) => {
                    if families[f].pattern == blk.pattern {
                        ideal_blocks[j - first_ideal].clone()
                    } else {
                        RMat::zeros(d, d)
                    }
                }
            };
            blocks[j].push(m);
        }
    }

    let mut dict = OperatorDictionary {
        model: model.clone(),
        options,
        alice,
        bob,
        families,
        patterns,
        blocks,
        relations: RelationTables::default(),
    };
    dict.relations = relation_tables(&dict)?;
    Ok(dict)
}

/// Compute orthogonality, commutation, product identities and decompositions.
pub fn relation_tables(dict: &OperatorDictionary) -> Result<RelationTables> {
    let n = dict.bob.len();
    let np = dict.patterns.len();
    let mut orthogonal = Vec::new();
    let mut commuting = Vec::new();
    for j in 0..n {
        for l in (j + 1)..n {
            let mut zero = true;
            let mut comm = true;
            for p in 0..np {
                let a = &dict.blocks[j][p];
                let b = &dict.blocks[l][p];
                let ab = a * b;
                if max_abs_real(&ab) > RELATION_TOL {
                    zero = false;
                }
                let ba = b * a;
                if max_abs_real(&(ab - ba)) > RELATION_TOL {
                    comm = false;
                }
            }
            if zero {
                orthogonal.push((j, l));
            } else if comm {
                commuting.push((j, l));
            }
        }
    }

    let mut identities = Vec::new();
    for (f, fam) in dict.families.iter().enumerate() {
        for mut id in family_identities(fam, f) {
            id.residual = identity_residual(dict, &id);
            if id.residual > RELATION_TOL {
                return Err(Error::Numerical(format!("identity {} fails by {:e}", id.name, id.residual)));
            }
            identities.push(id);
        }
    }

    let mut decompositions = Vec::new();
    for (f, fam) in dict.families.iter().enumerate() {
        let p = dict.pattern_index(&fam.pattern).expect("family pattern");
        let real_members: Vec<usize> =
            fam.members.iter().copied().filter(|&m| dict.bob[m].phase == Phase::Real).collect();
        let d = dict.patterns[p].dim();
        let mut basis = RMat::zeros(d * d, real_members.len());
        for (c, &m) in real_members.iter().enumerate() {
            for (r, v) in dict.blocks[m][p].iter().enumerate() {
                basis[(r, c)] = *v;
            }
        }
        for j in 0..n {
            if dict.bob[j].is_ideal() {
                continue;
            }
            let target = &dict.blocks[j][p];
            let rhs = RVec::from_iterator(d * d, target.iter().copied());
            let (x, _) = least_squares(&basis, &rhs);
            let x: Vec<f64> = x.iter().map(|&v| if v.abs() < 1e-13 { 0.0 } else { v }).collect();
            let mut rec = RMat::zeros(d, d);
            for (c, &m) in real_members.iter().enumerate() {
                rec += &dict.blocks[m][p] * x[c];
            }
            let residual = max_abs_real(&(rec - target));
            if residual < RELATION_TOL {
                let coefficients = real_members.iter().zip(&x).filter(|(_, v)| **v != 0.0).map(|(&m, &v)| (m, v)).collect();
                decompositions.push(BlockDecomposition { op: j, family: f, coefficients, residual });
            }
        }
    }
    Ok(RelationTables { orthogonal, commuting, identities, decompositions })
}

type Lin = Vec<(usize, C64)>;

fn lin(terms: &[(usize, f64)]) -> Lin {
    terms.iter().map(|&(j, c)| (j, C64::new(c, 0.0))).collect()
}

fn scale_lin(l: &Lin, s: C64) -> Lin {
    l.iter().map(|&(j, c)| (j, c * s)).collect()
}

fn bilinear(a: &Lin, b: &Lin, s: C64) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for &(j, x) in a {
        for &(l, y) in b {
            out.push((j, l, x * y * s));
        }
    }
    out
}

/// Pauli triple `(sigma_x, sigma_y, sigma_z)` from identity, H, D and sigma_y.
fn pauli_triple(id: usize, h: usize, d: usize, sy: usize) -> [Lin; 3] {
    [lin(&[(d, 2.0), (id, -1.0)]), lin(&[(sy, 1.0)]), lin(&[(h, 2.0), (id, -1.0)])]
}

fn pauli_identities(name: &str, f: usize, id: usize, sig: &[Lin; 3]) -> Vec<ProductIdentity> {
    let axes = ["x", "y", "z"];
    let mut out = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            let mut linear: Lin = Vec::new();
            if a == b {
                linear.push((id, ONE));
            } else {
                let c = 3 - a - b;
                linear.extend(scale_lin(&sig[c], I * pauli_sign(a, b, c)));
            }
            out.push(ProductIdentity {
                name: format!("{name}: s{}s{}", axes[a], axes[b]),
                family: f,
                bilinear: bilinear(&sig[a], &sig[b], ONE),
                linear,
                residual: 0.0,
            });
        }
    }
    out
}

fn family_identities(fam: &IdealFamily, f: usize) -> Vec<ProductIdentity> {
    let m = &fam.members;
    match fam.kind {
        FamilyKind::Vacuum => Vec::new(),
        FamilyKind::Qubit => pauli_identities(&fam.name, f, m[0], &pauli_triple(m[0], m[1], m[2], m[3])),
        FamilyKind::QubitPair => {
            let mut out = pauli_identities(&format!("{} left", fam.name), f, m[0], &pauli_triple(m[0], m[1], m[2], m[3]));
            out.extend(pauli_identities(&format!("{} right", fam.name), f, m[0], &pauli_triple(m[0], m[4], m[5], m[6])));
            out
        }
        FamilyKind::Spin1 => {
            let (id, h, v, d, a, sy) = (m[0], m[1], m[2], m[3], m[4], m[5]);
            let s = [lin(&[(d, 1.0), (a, -1.0)]), lin(&[(sy, 1.0)]), lin(&[(h, 1.0), (v, -1.0)])];
            let axes = ["x", "y", "z"];
            let mut out = Vec::new();
            for x in 0..3 {
                for y in 0..3 {
                    if x == y {
                        continue;
                    }
                    let z = 3 - x - y;
                    let mut bl = bilinear(&s[x], &s[y], ONE);
                    bl.extend(bilinear(&s[y], &s[x], -ONE));
                    out.push(ProductIdentity {
                        name: format!("{}: [S{},S{}]", fam.name, axes[x], axes[y]),
                        family: f,
                        bilinear: bl,
                        linear: scale_lin(&s[z], I * pauli_sign(x, y, z)),
                        residual: 0.0,
                    });
                }
            }
            let squares = [
                lin(&[(d, 1.0), (a, 1.0)]),
                lin(&[(id, 2.0), (h, -1.0), (v, -1.0), (d, -1.0), (a, -1.0)]),
                lin(&[(h, 1.0), (v, 1.0)]),
            ];
            for (x, rhs) in squares.into_iter().enumerate() {
                out.push(ProductIdentity {
                    name: format!("{}: S{}^2", fam.name, axes[x]),
                    family: f,
                    bilinear: bilinear(&s[x], &s[x], ONE),
                    linear: rhs,
                    residual: 0.0,
                });
            }
            out
        }
    }
}

/// Largest entry of `sum bilinear - sum linear` on the family block.
pub fn identity_residual(dict: &OperatorDictionary, id: &ProductIdentity) -> f64 {
    let p = dict.pattern_index(&dict.families[id.family].pattern).unwrap();
    let d = dict.patterns[p].dim();
    let mut acc = CMat::zeros(d, d);
    for &(j, l, c) in &id.bilinear {
        acc += (dict.complex_block(j, p) * dict.complex_block(l, p)) * c;
    }
    for &(m, c) in &id.linear {
        acc -= dict.complex_block(m, p) * c;
    }
    max_abs(&acc)
}

/// A POVM element's grade block as a combination of ideal operators.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionDecomposition {
    pub label: Outcome,
    pub grade: usize,
    pub coefficients: Vec<(String, f64)>,
    pub residual: f64,
}

/// Expand the grade-`grade` part of measurement element `label` in ideal operators.
///
/// Every pattern of that grade must carry a family whose span contains the block.
pub fn decompose_projection(dict: &OperatorDictionary, label: Outcome, grade: usize) -> Result<ProjectionDecomposition> {
    let j = dict
        .measurement_index(label)
        .ok_or_else(|| Error::InvalidParameter(format!("outcome {} not in the dictionary", label.name())))?;
    decompose_grade(dict, j, grade).map(|(coefficients, residual)| ProjectionDecomposition {
        label,
        grade,
        coefficients: coefficients.into_iter().map(|(m, x)| (dict.bob[m].name.clone(), x)).collect(),
        residual,
    })
}

/// Grade-`grade` expansion of any non-ideal Bob operator.
pub fn decompose_grade(dict: &OperatorDictionary, j: usize, grade: usize) -> Result<(Vec<(usize, f64)>, f64)> {
    let s = dict.model.spatial_modes();
    let mut coefficients = Vec::new();
    let mut residual = 0.0f64;
    for blk in PatternBlock::all_with_photons(grade, s) {
        let fam = dict.families.iter().position(|f| f.pattern == blk.pattern);
        let p = dict.pattern_index(&blk.pattern);
        match (fam, p) {
            (Some(f), Some(_)) => match dict.decomposition(j, f) {
                Some(d) => {
                    coefficients.extend(d.coefficients.iter().copied());
                    residual = residual.max(d.residual);
                }
                None => {
                    return Err(Error::Numerical(format!(
                        "{} on pattern {:?} is outside the span of {}",
                        dict.bob[j].name, blk.pattern, dict.families[f].name
                    )))
                }
            },
            _ => {
                return Err(Error::Unsupported(format!(
                    "no ideal operators on pattern {:?} of grade {grade}",
                    blk.pattern
                )))
            }
        }
    }
    Ok((coefficients, residual))
}

/// `R_j^T R_l` on pattern `p`: the real factor of `B_j^dag B_l`.
pub fn real_product(dict: &OperatorDictionary, j: usize, l: usize, p: usize) -> RMat {
    dict.block(j, p).transpose() * dict.block(l, p)
}

/// `conj(c_j) c_l`, the phase of `B_j^dag B_l` relative to `R_j^T R_l`.
pub fn pair_phase(dict: &OperatorDictionary, j: usize, l: usize) -> C64 {
    dict.bob[j].phase.unit().conj() * dict.bob[l].phase.unit()
}

/// Complex matrix of a real matrix; re-exported for the EVM oracle.
pub fn complexify(m: &RMat) -> CMat {
    to_complex(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{grade_project, PolBasis};

    fn active1(e1: f64, e2: f64) -> OperatorDictionary {
        let m = DetectorModel::new(Scheme::Active, vec![vec![e1, e2]]).unwrap();
        build_dictionary(&m, DictionaryOptions::default()).unwrap()
    }

    #[test]
    fn active_one_mode_has_two_by_eighteen() {
        let d = active1(1.0, 0.5);
        assert_eq!(d.alice_dim(), 2);
        assert_eq!(d.bob_dim(), 18);
        assert_eq!(d.evm_dim(), 36);
        assert_eq!(d.bob[0].name, "I");
    }

    #[test]
    fn active_two_mode_counts() {
        let d = build_dictionary(&DetectorModel::table_i(0.5).unwrap(), DictionaryOptions::default()).unwrap();
        assert_eq!(d.measurement_ops().len(), 6);
        assert_eq!(d.ideal_ops().len(), 1 + 2 * 4 + 2 * 6 + 7);
        assert_eq!(d.bob_dim(), 35);
    }

    #[test]
    fn passive_four_mode_counts() {
        let d = build_dictionary(&DetectorModel::table_ii(0.5).unwrap(), DictionaryOptions::default()).unwrap();
        assert_eq!(d.bob_dim(), 25);
        assert_eq!(d.ideal_grade(), 1);
    }

    #[test]
    fn names_are_unique() {
        let d = build_dictionary(&DetectorModel::table_i(0.3).unwrap(), DictionaryOptions::default()).unwrap();
        for a in 0..d.bob_dim() {
            for b in (a + 1)..d.bob_dim() {
                assert_ne!(d.bob[a].name, d.bob[b].name);
            }
        }
    }

    #[test]
    fn only_sigma_y_like_members_are_imaginary() {
        let d = build_dictionary(&DetectorModel::table_i(0.3).unwrap(), DictionaryOptions::default()).unwrap();
        for b in &d.bob {
            let imag = b.name.starts_with("sy") || b.name.starts_with("Sy") || b.name.contains("sy");
            assert_eq!(b.phase == Phase::Imaginary, imag, "{}", b.name);
        }
    }

    #[test]
    fn m_h_grade_one_and_two_expansions() {
        let (e1, e2) = (0.7, 0.4);
        let d = active1(e1, e2);
        let g1 = decompose_projection(&d, Outcome::H, 1).unwrap();
        assert_eq!(g1.coefficients.len(), 1);
        assert_eq!(g1.coefficients[0].0, "H1");
        assert!((g1.coefficients[0].1 - e1).abs() < 1e-12);
        // Grade 2: c1 (I3 - H2 - V2) + c2 H2 with c1 = e1 (1 - e2), c2 = 1 - (1 - e1)^2.
        let g2 = decompose_projection(&d, Outcome::H, 2).unwrap();
        let get = |n: &str| g2.coefficients.iter().find(|(m, _)| m == n).map(|x| x.1).unwrap_or(0.0);
        let c1 = e1 * (1.0 - e2);
        let c2 = 1.0 - (1.0 - e1) * (1.0 - e1);
        assert!((get("I3") - c1).abs() < 1e-12);
        assert!((get("H2") - (c2 - c1)).abs() < 1e-12);
        assert!((get("V2") + c1).abs() < 1e-12);
    }

    #[test]
    fn no_click_is_vacuum_at_grade_zero() {
        let m = DetectorModel::new(Scheme::Active, vec![vec![0.3, 0.9]]).unwrap();
        let d = build_dictionary(&m, DictionaryOptions::default()).unwrap();
        // The empty outcome is not a dictionary member; check through the identity.
        let (c, _) = decompose_grade(&d, 0, 0).unwrap();
        assert_eq!(c, vec![(d.bob_index("Vac").unwrap(), 1.0)]);
    }

    #[test]
    fn pauli_and_spin_identities_hold() {
        let d = active1(0.9, 0.2);
        assert_eq!(d.relations.identities.len(), 18);
        for id in &d.relations.identities {
            assert!(id.residual < RELATION_TOL, "{} {}", id.name, id.residual);
        }
        let d2 = build_dictionary(&DetectorModel::table_i(0.5).unwrap(), DictionaryOptions::default()).unwrap();
        // Two qubit families, two spin-1 families, one pair family with 18.
        assert_eq!(d2.relations.identities.len(), 9 * 2 + 9 * 2 + 18);
    }

    #[test]
    fn sigma_x_sigma_y_is_i_sigma_z() {
        let d = active1(1.0, 1.0);
        let p = d.pattern_index(&[1]).unwrap();
        let blk = |n: &str| d.complex_block(d.bob_index(n).unwrap(), p);
        let id = blk("I2");
        let sx = blk("D1") * C64::new(2.0, 0.0) - &id;
        let sz = blk("H1") * C64::new(2.0, 0.0) - &id;
        let sy = blk("sy");
        assert!(max_abs(&(&sx * &sy - sz * I)) < 1e-12);
    }

    #[test]
    fn spin_commutator_with_sz_from_projectors() {
        let d = active1(1.0, 1.0);
        let p = d.pattern_index(&[2]).unwrap();
        let blk = |n: &str| d.complex_block(d.bob_index(n).unwrap(), p);
        let sx = blk("D2") - blk("A2");
        let sz = blk("H2") - blk("V2");
        let sy = blk("Sy");
        let comm = &sx * &sy - &sy * &sx;
        assert!(max_abs(&(comm - sz * I)) < 1e-12);
    }

    #[test]
    fn vacuum_and_one_photon_are_orthogonal() {
        let d = active1(0.5, 0.5);
        let (v, h) = (d.bob_index("Vac").unwrap(), d.bob_index("H1").unwrap());
        assert!(d.is_orthogonal(v, h));
    }

    #[test]
    fn ideal_operators_are_confined_to_their_grade() {
        let d = active1(0.8, 0.6);
        let space = FockSpace::shared(1, PolBasis::HV, 3).unwrap();
        for j in d.ideal_ops() {
            let op = d.bob_operator(j, &space).unwrap();
            let BobKind::Ideal(f) = d.bob[j].kind else { unreachable!() };
            let g = d.families[f].grade();
            let pr = grade_project(&op, g).unwrap();
            assert!(max_abs(&(pr.matrix() - op.matrix())) == 0.0, "{}", d.bob[j].name);
            assert_eq!(op.is_real(), d.bob[j].phase == Phase::Real);
        }
    }

    #[test]
    fn pair_family_identity_is_block_identity() {
        let d = build_dictionary(&DetectorModel::table_i(1.0).unwrap(), DictionaryOptions::default()).unwrap();
        let p = d.pattern_index(&[1, 1]).unwrap();
        let j = d.bob_index("I2I2,1+2").unwrap();
        assert_eq!(d.block(j, p), &RMat::identity(4, 4));
    }

    #[test]
    fn passive_one_mode_low_grades_in_span() {
        let m = DetectorModel::new(Scheme::Passive, vec![vec![0.9, 0.5, 0.7, 0.3]]).unwrap();
        let d = build_dictionary(&m, DictionaryOptions::default()).unwrap();
        for &o in &[Outcome::H, Outcome::V, Outcome::D, Outcome::A, Outcome::HV, Outcome::DA, Outcome::CC] {
            for g in 0..=1 {
                let r = decompose_projection(&d, o, g);
                assert!(r.is_ok(), "{} grade {g}: {:?}", o.name(), r.err());
            }
            // Grade-two passive blocks generally leave the five-dimensional real span.
            match decompose_projection(&d, o, 2) {
                Ok(r) => assert!(r.residual < RELATION_TOL),
                Err(e) => assert!(matches!(e, Error::Numerical(_))),
            }
        }
    }

    #[test]
    fn measurement_only_dictionary() {
        let m = DetectorModel::uniform(Scheme::Active, 1, 1.0).unwrap();
        let d = build_dictionary(&m, DictionaryOptions { ideal: false }).unwrap();
        assert_eq!(d.bob_dim(), 7);
        assert!(d.families.is_empty());
    }
}
