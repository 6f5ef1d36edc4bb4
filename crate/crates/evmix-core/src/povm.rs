//! Threshold-detector POVMs with mismatched efficiencies.
//!
//! Every element is block diagonal in the spatial occupation pattern, so the
//! builders work one pattern block at a time and the full-space elements are
//! assembled from the blocks. All elements are expressed in HV coordinates.
//!
//! Active scheme: per basis, detector `H/D` sees the first polarization and
//! `V/A` the second; the no-click probability of a detector is the product of
//! `(1 - eta)^n` over the photons reaching it from every spatial mode.
//!
//! Passive scheme: a 50/50 splitter sends each photon to the HV arm or, through
//! a half-wave plate, to the DA arm. Each input mode is expanded into output
//! modes, and click sets are classified into the eight outcomes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::detectors::{DetectorModel, Scheme, SchemeConfig};
use crate::error::{Error, Result};
use crate::fockspace::{compositions, single_mode_rotation, FockBasisState, FockOperator, FockSpace, PolBasis};
use crate::linalg::{factorial, kron, powi, sym_min_eigenvalue, to_complex, CMat, RMat};

/// Bob's measurement outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    H,
    V,
    HV,
    /// No click while measuring in the HV basis (active only).
    EmptyHV,
    D,
    A,
    DA,
    /// No click while measuring in the DA basis (active only).
    EmptyDA,
    /// No click (passive only).
    Empty,
    /// Clicks in both arms of the passive splitter.
    CC,
}

pub const ACTIVE_OUTCOMES: [Outcome; 8] = [
    Outcome::H,
    Outcome::V,
    Outcome::HV,
    Outcome::EmptyHV,
    Outcome::D,
    Outcome::A,
    Outcome::DA,
    Outcome::EmptyDA,
];

pub const PASSIVE_OUTCOMES: [Outcome; 8] = [
    Outcome::Empty,
    Outcome::H,
    Outcome::V,
    Outcome::D,
    Outcome::A,
    Outcome::HV,
    Outcome::DA,
    Outcome::CC,
];

impl Outcome {
    /// Label used in CSV files.
    pub fn name(self) -> &'static str {
        match self {
            Outcome::H => "H",
            Outcome::V => "V",
            Outcome::HV => "HV",
            Outcome::EmptyHV => "none_hv",
            Outcome::D => "D",
            Outcome::A => "A",
            Outcome::DA => "DA",
            Outcome::EmptyDA => "none_da",
            Outcome::Empty => "none",
            Outcome::CC => "CC",
        }
    }

    pub fn parse(s: &str) -> Result<Outcome> {
        let all = [ACTIVE_OUTCOMES.as_slice(), &[Outcome::Empty, Outcome::CC]].concat();
        all.into_iter()
            .find(|o| o.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown outcome '{s}'")))
    }

    /// Measurement basis the outcome belongs to, if any.
    pub fn basis(self) -> Option<PolBasis> {
        match self {
            Outcome::H | Outcome::V | Outcome::HV | Outcome::EmptyHV => Some(PolBasis::HV),
            Outcome::D | Outcome::A | Outcome::DA | Outcome::EmptyDA => Some(PolBasis::DA),
            Outcome::Empty | Outcome::CC => None,
        }
    }

    /// Outcome alphabet of a scheme.
    pub fn alphabet(scheme: Scheme) -> &'static [Outcome; 8] {
        match scheme {
            Scheme::Active => &ACTIVE_OUTCOMES,
            Scheme::Passive => &PASSIVE_OUTCOMES,
        }
    }

    pub fn valid_for(self, scheme: Scheme) -> bool {
        Outcome::alphabet(scheme).contains(&self)
    }
}

/// Basis vectors sharing one spatial occupation pattern, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternBlock {
    pub pattern: Vec<u8>,
    pub states: Vec<FockBasisState>,
}

impl PatternBlock {
    pub fn new(pattern: &[u8]) -> Self {
        let mut states: Vec<Vec<u8>> = vec![Vec::new()];
        for &n in pattern {
            let mut next = Vec::new();
            for prefix in &states {
                for a in (0..=n).rev() {
                    let mut o = prefix.clone();
                    o.push(a);
                    o.push(n - a);
                    next.push(o);
                }
            }
            states = next;
        }
        PatternBlock { pattern: pattern.to_vec(), states: states.into_iter().map(FockBasisState::new).collect() }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn photons(&self) -> usize {
        self.pattern.iter().map(|&p| p as usize).sum()
    }

    /// Every pattern with exactly `n` photons over `spatial` modes.
    pub fn all_with_photons(n: usize, spatial: usize) -> Vec<PatternBlock> {
        compositions(n, spatial).iter().map(|p| PatternBlock::new(p)).collect()
    }
}

/// Polarization rotation restricted to a pattern block.
pub fn block_rotation(block: &PatternBlock) -> RMat {
    let mut u = RMat::identity(1, 1);
    for &n in &block.pattern {
        u = kron(&u, &single_mode_rotation(n as usize));
    }
    u
}

/// Active-scheme elements on one pattern block, HV coordinates, in
/// [`ACTIVE_OUTCOMES`] order.
pub fn active_block(model: &DetectorModel, block: &PatternBlock) -> Vec<(Outcome, RMat)> {
    let d = block.dim();
    let (mut h, mut v, mut hv, mut e) = (RMat::zeros(d, d), RMat::zeros(d, d), RMat::zeros(d, d), RMat::zeros(d, d));
    for (i, st) in block.states.iter().enumerate() {
        let mut no1 = 1.0;
        let mut no2 = 1.0;
        for s in 0..block.pattern.len() {
            no1 *= powi(1.0 - model.eta(s, 0), st.get(s, 0));
            no2 *= powi(1.0 - model.eta(s, 1), st.get(s, 1));
        }
        h[(i, i)] = (1.0 - no1) * no2;
        v[(i, i)] = no1 * (1.0 - no2);
        hv[(i, i)] = (1.0 - no1) * (1.0 - no2);
        e[(i, i)] = no1 * no2;
    }
    let u = block_rotation(block);
    let rot = |m: &RMat| &u * m * &u;
    let (da_d, da_a, da_da, da_e) = (rot(&h), rot(&v), rot(&hv), rot(&e));
    vec![
        (Outcome::H, h),
        (Outcome::V, v),
        (Outcome::HV, hv),
        (Outcome::EmptyHV, e),
        (Outcome::D, da_d),
        (Outcome::A, da_a),
        (Outcome::DA, da_da),
        (Outcome::EmptyDA, da_e),
    ]
}

/// Output amplitudes of one spatial mode's `n` photons through the passive
/// splitter. Returns output occupations over detectors `(H, V, D, A)` and a
/// matrix with one row per output and one column per input `|n - t, t>`.
pub fn passive_amplitudes(n: usize) -> (Vec<[u8; 4]>, RMat) {
    let r = core::f64::consts::FRAC_1_SQRT_2;
    // Single-photon images of the H and V creation operators.
    let img_h = [r, 0.0, 0.5, 0.5];
    let img_v = [0.0, r, 0.5, -0.5];
    let mut columns: Vec<BTreeMap<[u8; 4], f64>> = Vec::with_capacity(n + 1);
    for t in 0..=n {
        let (k, m) = (n - t, t);
        let mut poly: BTreeMap<[u8; 4], f64> = BTreeMap::new();
        poly.insert([0; 4], 1.0 / libm::sqrt(factorial(k) * factorial(m)));
        for (img, times) in [(img_h, k), (img_v, m)] {
            for _ in 0..times {
                let mut next = BTreeMap::new();
                for (mono, c) in &poly {
                    for det in 0..4 {
                        if img[det] == 0.0 {
                            continue;
                        }
                        let mut mm = *mono;
                        mm[det] += 1;
                        *next.entry(mm).or_insert(0.0) += c * img[det];
                    }
                }
                poly = next;
            }
        }
        // Monomial coefficients become amplitudes after the sqrt(o!) factor.
        for (mono, c) in poly.iter_mut() {
            *c *= libm::sqrt(mono.iter().map(|&o| factorial(o as usize)).product::<f64>());
        }
        columns.push(poly);
    }
    let mut outs: Vec<[u8; 4]> = compositions(n, 4).into_iter().map(|o| [o[0], o[1], o[2], o[3]]).collect();
    outs.sort();
    let mut a = RMat::zeros(outs.len(), n + 1);
    for (t, col) in columns.iter().enumerate() {
        for (mono, c) in col {
            let row = outs.binary_search(mono).expect("output occupation enumerated");
            a[(row, t)] = *c;
        }
    }
    (outs, a)
}

/// Classify an exact set of clicking detectors (bit `d` set = detector `d`
/// clicked, order H, V, D, A) into a passive outcome.
pub fn classify_clicks(mask: u8) -> Outcome {
    let hv = mask & 0b0011;
    let da = mask & 0b1100;
    match (hv, da) {
        (0, 0) => Outcome::Empty,
        (0b01, 0) => Outcome::H,
        (0b10, 0) => Outcome::V,
        (0b11, 0) => Outcome::HV,
        (0, 0b0100) => Outcome::D,
        (0, 0b1000) => Outcome::A,
        (0, 0b1100) => Outcome::DA,
        _ => Outcome::CC,
    }
}

/// No-click operators per spatial mode: `N_Q` for each detector subset `Q`.
fn passive_no_click_single(model: &DetectorModel, s: usize, n: usize) -> Vec<RMat> {
    let (outs, a) = passive_amplitudes(n);
    (0u8..16)
        .map(|q| {
            let mut weights = RMat::zeros(outs.len(), outs.len());
            for (r, o) in outs.iter().enumerate() {
                let mut w = 1.0;
                for det in 0..4 {
                    if q & (1 << det) != 0 {
                        w *= powi(1.0 - model.eta(s, det), o[det] as usize);
                    }
                }
                weights[(r, r)] = w;
            }
            a.transpose() * weights * &a
        })
        .collect()
}

/// Exact-click-set operators on one pattern block, indexed by detector mask.
pub fn passive_click_sets(model: &DetectorModel, block: &PatternBlock) -> Vec<RMat> {
    let per_mode: Vec<Vec<RMat>> =
        block.pattern.iter().enumerate().map(|(s, &n)| passive_no_click_single(model, s, n as usize)).collect();
    let no_click: Vec<RMat> = (0u8..16)
        .map(|q| {
            let mut m = RMat::identity(1, 1);
            for pm in &per_mode {
                m = kron(&m, &pm[q as usize]);
            }
            m
        })
        .collect();
    // Exactly K clicks: sum over J subset of K of (-1)^|J| N_{J or not K}.
    (0u8..16)
        .map(|k| {
            let mut acc = RMat::zeros(block.dim(), block.dim());
            let mut j = k;
            loop {
                let sign = if j.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                acc += &no_click[((j | !k) & 0xF) as usize] * sign;
                if j == 0 {
                    break;
                }
                j = (j - 1) & k;
            }
            acc
        })
        .collect()
}

/// Passive-scheme elements on one pattern block in [`PASSIVE_OUTCOMES`] order.
/// The cross-click element is the complement of the other seven.
pub fn passive_block(model: &DetectorModel, block: &PatternBlock) -> Vec<(Outcome, RMat)> {
    let sets = passive_click_sets(model, block);
    let d = block.dim();
    let mut out: Vec<(Outcome, RMat)> = Vec::with_capacity(8);
    for &o in PASSIVE_OUTCOMES.iter().take(7) {
        let mut acc = RMat::zeros(d, d);
        for (mask, m) in sets.iter().enumerate() {
            if classify_clicks(mask as u8) == o {
                acc += m;
            }
        }
        out.push((o, acc));
    }
    let mut cc = RMat::identity(d, d);
    for (_, m) in &out {
        cc -= m;
    }
    out.push((Outcome::CC, cc));
    out
}

/// Cross-click element built directly from the click sets (reference path).
pub fn passive_cross_click_direct(model: &DetectorModel, block: &PatternBlock) -> RMat {
    let sets = passive_click_sets(model, block);
    let mut acc = RMat::zeros(block.dim(), block.dim());
    for (mask, m) in sets.iter().enumerate() {
        if classify_clicks(mask as u8) == Outcome::CC {
            acc += m;
        }
    }
    acc
}

/// Elements of either scheme on a pattern block.
pub fn povm_block(model: &DetectorModel, block: &PatternBlock) -> Vec<(Outcome, RMat)> {
    match model.scheme() {
        Scheme::Active => active_block(model, block),
        Scheme::Passive => passive_block(model, block),
    }
}

/// Full-space POVM of one scheme.
#[derive(Clone, Debug)]
pub struct PovmSet {
    pub config: SchemeConfig,
    pub model: DetectorModel,
    space: Arc<FockSpace>,
    elements: Vec<(Outcome, FockOperator)>,
}

impl PovmSet {
    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn elements(&self) -> &[(Outcome, FockOperator)] {
        &self.elements
    }

    pub fn get(&self, o: Outcome) -> Option<&FockOperator> {
        self.elements.iter().find(|(l, _)| *l == o).map(|(_, m)| m)
    }

    /// Element or an error naming the missing outcome.
    pub fn element(&self, o: Outcome) -> Result<&FockOperator> {
        self.get(o).ok_or_else(|| Error::InvalidParameter(format!("outcome {} not in this POVM", o.name())))
    }

    pub fn outcomes(&self) -> Vec<Outcome> {
        self.elements.iter().map(|(o, _)| *o).collect()
    }
}

fn check_space(model: &DetectorModel, space: &FockSpace) -> Result<()> {
    if space.mode_set().polarization_basis() != PolBasis::HV {
        return Err(Error::InvalidParameter("POVMs are assembled in HV coordinates".into()));
    }
    if space.mode_set().spatial_mode_count() != model.spatial_modes() {
        return Err(Error::DimensionMismatch(format!(
            "space has {} spatial modes, model {}",
            space.mode_set().spatial_mode_count(),
            model.spatial_modes()
        )));
    }
    Ok(())
}

fn assemble(model: &DetectorModel, space: Arc<FockSpace>) -> Result<PovmSet> {
    check_space(model, &space)?;
    let d = space.dim();
    let outcomes = Outcome::alphabet(model.scheme());
    let mut mats: Vec<RMat> = (0..8).map(|_| RMat::zeros(d, d)).collect();
    for pattern in space.patterns() {
        let block = PatternBlock::new(&pattern);
        let idx = space.pattern_indices(&pattern);
        for (k, (_, m)) in povm_block(model, &block).into_iter().enumerate() {
            for a in 0..idx.len() {
                for b in 0..idx.len() {
                    mats[k][(idx[a], idx[b])] = m[(a, b)];
                }
            }
        }
    }
    let mut elements = Vec::with_capacity(8);
    for (o, m) in outcomes.iter().zip(mats) {
        elements.push((*o, FockOperator::new(space.clone(), to_complex(&m))?));
    }
    Ok(PovmSet { config: model.config(), model: model.clone(), space, elements })
}

/// Active-scheme POVM `{M_H, M_V, M_HV, M_none_hv, M_D, M_A, M_DA, M_none_da}`.
pub fn build_active_povm(model: &DetectorModel, space: Arc<FockSpace>) -> Result<PovmSet> {
    if model.scheme() != Scheme::Active {
        return Err(Error::InvalidParameter("active POVM needs an active model".into()));
    }
    assemble(model, space)
}

/// Passive-scheme POVM `{M_none, M_H, M_V, M_D, M_A, M_HV, M_DA, M_CC}`.
pub fn build_passive_povm(model: &DetectorModel, space: Arc<FockSpace>) -> Result<PovmSet> {
    if model.scheme() != Scheme::Passive {
        return Err(Error::InvalidParameter("passive POVM needs a passive model".into()));
    }
    assemble(model, space)
}

/// POVM for whichever scheme `model` describes.
pub fn build_povm(model: &DetectorModel, space: Arc<FockSpace>) -> Result<PovmSet> {
    assemble(model, space)
}

/// One ordering check and its smallest eigenvalue.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationCheck {
    pub name: String,
    pub min_eigenvalue: f64,
}

/// Result of [`verify_povm_relations`].
#[derive(Clone, Debug, PartialEq)]
pub struct PovmReport {
    pub checks: Vec<RelationCheck>,
}

impl PovmReport {
    pub const TOLERANCE: f64 = -1e-10;

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.min_eigenvalue >= Self::TOLERANCE)
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().fold(f64::INFINITY, |m, c| m.min(c.min_eigenvalue))
    }
}

/// Check `M_i >= M_i M_j >= 0` within each active basis and `M_i >= M_i^2`
/// for every passive element.
pub fn verify_povm_relations(set: &PovmSet) -> PovmReport {
    let mut checks = Vec::new();
    let real = |o: Outcome| set.get(o).map(|m| m.real_matrix());
    match set.config.scheme {
        Scheme::Active => {
            for group in [&ACTIVE_OUTCOMES[..4], &ACTIVE_OUTCOMES[4..]] {
                for &i in group {
                    for &j in group {
                        let (mi, mj) = (real(i).unwrap(), real(j).unwrap());
                        let prod = &mi * &mj;
                        let sym = (&prod + prod.transpose()) * 0.5;
                        checks.push(RelationCheck {
                            name: format!("M_{0} - M_{0} M_{1}", i.name(), j.name()),
                            min_eigenvalue: sym_min_eigenvalue(&(&mi - &sym)),
                        });
                        checks.push(RelationCheck {
                            name: format!("M_{} M_{}", i.name(), j.name()),
                            min_eigenvalue: sym_min_eigenvalue(&sym),
                        });
                    }
                }
            }
        }
        Scheme::Passive => {
            for &i in PASSIVE_OUTCOMES.iter() {
                let mi = real(i).unwrap();
                let sq = &mi * &mi;
                checks.push(RelationCheck {
                    name: format!("M_{0} - M_{0}^2", i.name()),
                    min_eigenvalue: sym_min_eigenvalue(&(&mi - &sq)),
                });
                checks.push(RelationCheck {
                    name: format!("M_{0}^2", i.name()),
                    min_eigenvalue: sym_min_eigenvalue(&sq),
                });
            }
        }
    }
    PovmReport { checks }
}

/// Adjoint of a pure-loss channel of transmittance `eta` on every mode.
///
/// Uses the Kraus form `K_k = sum_n sqrt(C(n,k) eta^(n-k) (1-eta)^k) |n-k><n|`
/// mode by mode. Loss only removes photons, so the truncated result is exact.
pub fn loss_adjoint(op: &FockOperator, eta: f64) -> Result<FockOperator> {
    let space = op.space().clone();
    let d = space.dim();
    let modes = space.mode_set().mode_count();
    let mut m = op.matrix().clone();
    for mode in 0..modes {
        let mut next = CMat::zeros(d, d);
        for k in 0..=space.cutoff() {
            // K_k on this mode as a sparse list (row, col, weight).
            let mut kraus: Vec<(usize, usize, f64)> = Vec::new();
            for (col, st) in space.basis().iter().enumerate() {
                let n = st.occupations()[mode] as usize;
                if n < k {
                    continue;
                }
                let mut occ = st.occupations().to_vec();
                occ[mode] -= k as u8;
                let row = space.index_of(&occ).expect("lower occupation is in the space");
                let w = libm::sqrt(crate::linalg::binomial(n, k) * powi(eta, n - k) * powi(1.0 - eta, k));
                if w != 0.0 {
                    kraus.push((row, col, w));
                }
            }
            // next += K^T m K
            for &(r1, c1, w1) in &kraus {
                for &(r2, c2, w2) in &kraus {
                    let z = m[(r1, r2)];
                    if z.re != 0.0 || z.im != 0.0 {
                        next[(c1, c2)] += z * (w1 * w2);
                    }
                }
            }
        }
        m = next;
    }
    FockOperator::new(space, m)
}
