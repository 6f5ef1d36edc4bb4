//! Double-click, effective-error and cross-click witnesses and their minimum
//! expectation over `n`-photon real PPT states.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::detectors::{DetectorModel, Scheme};
use crate::error::{Error, Result};
use crate::evm::{AliceOutcome, TailBounds, ALICE_OUTCOMES};
use crate::fockspace::{compositions, FockSpace};
use crate::idealops::OperatorDictionary;
use crate::linalg::{kron, max_abs_real, sym_min_eigenvalue, to_complex, CMat, RMat};
use crate::povm::{build_povm, povm_block, Outcome, PatternBlock};
use crate::sdp::{Affine, ProblemBuilder, SdpOptions, SdpStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WitnessKind {
    DoubleClick,
    EffectiveError,
    CrossClick,
}

impl WitnessKind {
    pub fn name(self) -> &'static str {
        match self {
            WitnessKind::DoubleClick => "DC",
            WitnessKind::EffectiveError => "EE",
            WitnessKind::CrossClick => "CC",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DC" => Ok(WitnessKind::DoubleClick),
            "EE" => Ok(WitnessKind::EffectiveError),
            "CC" => Ok(WitnessKind::CrossClick),
            o => Err(Error::InvalidParameter(format!("unknown witness kind '{o}'"))),
        }
    }

    /// Kinds defined for a scheme.
    pub fn for_scheme(scheme: Scheme) -> &'static [WitnessKind] {
        match scheme {
            Scheme::Active => &[WitnessKind::DoubleClick, WitnessKind::EffectiveError],
            Scheme::Passive => &[WitnessKind::CrossClick],
        }
    }

    pub fn valid_for(self, scheme: Scheme) -> bool {
        Self::for_scheme(scheme).contains(&self)
    }

    /// True when the witness is `I (x) K` on Bob alone.
    pub fn is_local(self) -> bool {
        self != WitnessKind::EffectiveError
    }
}

/// Bob-side weights `(outcome, w)` of the witness paired with each Alice
/// outcome; the Alice factor is `1/4 P_x` for EE and `I` otherwise.
fn bob_terms(kind: WitnessKind, x: Option<AliceOutcome>) -> Vec<(Outcome, f64)> {
    match (kind, x) {
        (WitnessKind::DoubleClick, _) => alloc::vec![(Outcome::HV, 0.5), (Outcome::DA, 0.5)],
        (WitnessKind::CrossClick, _) => alloc::vec![(Outcome::CC, 1.0)],
        (WitnessKind::EffectiveError, Some(x)) => alloc::vec![(x.error_outcome(), 1.0), (x.double_click(), 0.5)],
        (WitnessKind::EffectiveError, None) => unreachable!(),
    }
}

fn combine(elements: &[(Outcome, RMat)], terms: &[(Outcome, f64)], d: usize) -> RMat {
    let mut acc = RMat::zeros(d, d);
    for &(o, w) in terms {
        if let Some((_, m)) = elements.iter().find(|(e, _)| *e == o) {
            acc += m * w;
        }
    }
    acc
}

/// Witness on `Alice (x) block`, Alice-major, real.
pub fn witness_block(kind: WitnessKind, model: &DetectorModel, block: &PatternBlock) -> Result<RMat> {
    if !kind.valid_for(model.scheme()) {
        return Err(Error::Unsupported(format!("{} witness for the {} scheme", kind.name(), model.scheme().name())));
    }
    let d = block.dim();
    let el = povm_block(model, block);
    if kind.is_local() {
        return Ok(kron(&RMat::identity(2, 2), &combine(&el, &bob_terms(kind, None), d)));
    }
    let mut acc = RMat::zeros(2 * d, 2 * d);
    for &x in &ALICE_OUTCOMES {
        acc += kron(&(x.projector() * 0.25), &combine(&el, &bob_terms(kind, Some(x)), d));
    }
    Ok(acc)
}

/// Bob-only operator `K` of a local witness on one block.
pub fn local_block(kind: WitnessKind, model: &DetectorModel, block: &PatternBlock) -> Result<RMat> {
    if !kind.is_local() || !kind.valid_for(model.scheme()) {
        return Err(Error::Unsupported(format!("{} is not a local witness of this scheme", kind.name())));
    }
    let el = povm_block(model, block);
    Ok(combine(&el, &bob_terms(kind, None), block.dim()))
}

/// Joint witness operator on `Alice (x) Fock space`.
#[derive(Clone, Debug)]
pub struct WitnessOperator {
    pub kind: WitnessKind,
    pub space: Arc<FockSpace>,
    /// Real matrix of size `2 * space.dim()`, Alice-major.
    pub matrix: RMat,
}

impl WitnessOperator {
    pub fn expectation(&self, rho: &CMat) -> Result<f64> {
        if rho.nrows() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch(format!("state {} vs witness {}", rho.nrows(), self.matrix.nrows())));
        }
        Ok(crate::linalg::trace_product(rho, &to_complex(&self.matrix)).re)
    }
}

/// All witnesses of the model's scheme on a full Fock space.
pub fn build_witnesses(model: &DetectorModel, space: Arc<FockSpace>) -> Result<Vec<WitnessOperator>> {
    if space.mode_set().spatial_mode_count() != model.spatial_modes() {
        return Err(Error::DimensionMismatch("space and model disagree on spatial modes".into()));
    }
    let povm = build_povm(model, space.clone())?;
    let db = space.dim();
    let bob = |terms: &[(Outcome, f64)]| {
        let mut acc = RMat::zeros(db, db);
        for &(o, w) in terms {
            acc += povm.element(o).map(|m| m.real_matrix() * w).unwrap_or_else(|_| RMat::zeros(db, db));
        }
        acc
    };
    WitnessKind::for_scheme(model.scheme())
        .iter()
        .map(|&kind| {
            let matrix = if kind.is_local() {
                kron(&RMat::identity(2, 2), &bob(&bob_terms(kind, None)))
            } else {
                let mut acc = RMat::zeros(2 * db, 2 * db);
                for &x in &ALICE_OUTCOMES {
                    acc += kron(&(x.projector() * 0.25), &bob(&bob_terms(kind, Some(x))));
                }
                acc
            };
            Ok(WitnessOperator { kind, space: space.clone(), matrix })
        })
        .collect()
}

/// How a bound value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundStatus {
    /// The witness vanishes on the whole grade.
    Exact,
    /// Smallest eigenvalue of a Bob-only operator.
    Spectral,
    Optimal,
    Inaccurate,
    Failed,
}

impl BoundStatus {
    pub fn name(self) -> &'static str {
        match self {
            BoundStatus::Exact => "exact",
            BoundStatus::Spectral => "spectral",
            BoundStatus::Optimal => "optimal",
            BoundStatus::Inaccurate => "inaccurate",
            BoundStatus::Failed => "failed",
        }
    }

    pub fn is_usable(self) -> bool {
        !matches!(self, BoundStatus::Failed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub status: BoundStatus,
    /// Distance moved when clamping into `[0, 1]`.
    pub clamped: f64,
}

impl BoundValue {
    fn clamp(value: f64, status: BoundStatus) -> Self {
        let c = value.clamp(0.0, 1.0);
        BoundValue { value: c, status, clamped: (c - value).abs() }
    }
}

/// `min Tr(rho F)` over real states on `Alice (x) block`, optionally PPT.
pub fn min_witness_sdp(f: &RMat, alice: usize, ppt: bool, opts: &SdpOptions) -> (f64, SdpStatus) {
    let m = f.nrows();
    let bob = m / alice;
    let mut idx = alloc::vec![alloc::vec![0usize; m]; m];
    let mut n = 0;
    for r in 0..m {
        for c in r..m {
            idx[r][c] = n;
            idx[c][r] = n;
            n += 1;
        }
    }
    let mut b = ProblemBuilder::new(n);
    let blk = b.add_block(m);
    for r in 0..m {
        for c in r..m {
            b.block_term(blk, idx[r][c], r, c, 1.0);
        }
    }
    if ppt {
        let g = b.add_block(m);
        // rho^Gamma[(i,j),(k,l)] = rho[(k,j),(i,l)]
        for r in 0..m {
            for c in r..m {
                let (i, j) = (r / bob, r % bob);
                let (k, l) = (c / bob, c % bob);
                b.block_term(g, idx[k * bob + j][i * bob + l], r, c, 1.0);
            }
        }
    }
    b.add_equality(Affine::new(-1.0, (0..m).map(|r| (idx[r][r], 1.0)).collect()));
    let mut obj = Vec::new();
    for r in 0..m {
        for c in r..m {
            let w = if r == c { f[(r, c)] } else { 2.0 * f[(r, c)] };
            if w != 0.0 {
                obj.push((idx[r][c], -w));
            }
        }
    }
    b.set_objective(obj);
    let s = b.solve(opts);
    (-s.objective, s.status)
}

/// Minimum of a witness over `n`-photon states of the model's mode set.
///
/// Every witness is block diagonal over spatial patterns, so pinching Bob
/// onto patterns keeps PPT and the value, and the minimum is taken per
/// pattern. Local witnesses reduce to the smallest eigenvalue of `K`.
pub fn min_witness_over_grade(kind: WitnessKind, n: usize, model: &DetectorModel, opts: &SdpOptions) -> Result<BoundValue> {
    if !kind.valid_for(model.scheme()) {
        return Err(Error::Unsupported(format!("{} witness for the {} scheme", kind.name(), model.scheme().name())));
    }
    let mut best = f64::INFINITY;
    let mut status = BoundStatus::Exact;
    for p in compositions(n, model.spatial_modes()) {
        let block = PatternBlock::new(&p);
        if kind.is_local() {
            let k = local_block(kind, model, &block)?;
            if max_abs_real(&k) == 0.0 {
                best = best.min(0.0);
                continue;
            }
            best = best.min(sym_min_eigenvalue(&k));
            status = worse(status, BoundStatus::Spectral);
        } else {
            let f = witness_block(kind, model, &block)?;
            if max_abs_real(&f) == 0.0 {
                best = best.min(0.0);
                continue;
            }
            let (v, st) = min_witness_sdp(&f, 2, true, opts);
            let st = match st {
                SdpStatus::Optimal => BoundStatus::Optimal,
                SdpStatus::Inaccurate => BoundStatus::Inaccurate,
                _ => BoundStatus::Failed,
            };
            status = worse(status, st);
            best = best.min(v);
        }
    }
    Ok(BoundValue::clamp(best, status))
}

fn worse(a: BoundStatus, b: BoundStatus) -> BoundStatus {
    let rank = |s: BoundStatus| match s {
        BoundStatus::Exact => 0,
        BoundStatus::Spectral => 1,
        BoundStatus::Optimal => 2,
        BoundStatus::Inaccurate => 3,
        BoundStatus::Failed => 4,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub n: usize,
    pub bound: BoundValue,
}

/// `d/e/c_{n,min}` for `n = 0..=n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonBoundTable {
    pub kind: WitnessKind,
    pub model_id: String,
    pub rows: Vec<BoundRow>,
}

impl PhotonBoundTable {
    pub fn build(kind: WitnessKind, model: &DetectorModel, model_id: &str, n_max: usize, opts: &SdpOptions) -> Result<Self> {
        let rows = (0..=n_max)
            .map(|n| Ok(BoundRow { n, bound: min_witness_over_grade(kind, n, model, opts)? }))
            .collect::<Result<_>>()?;
        Ok(PhotonBoundTable { kind, model_id: model_id.into(), rows })
    }

    pub fn value(&self, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n).map(|r| r.bound.value)
    }

    /// Smallest usable value at grades `>= n`; a guard in case monotonicity
    /// fails inside the computed range.
    pub fn tail_value(&self, n: usize) -> Result<f64> {
        let vals: Vec<&BoundRow> = self.rows.iter().filter(|r| r.n >= n).collect();
        if vals.is_empty() {
            return Err(Error::InvalidParameter(format!("{} table has no rows at n >= {n}", self.kind.name())));
        }
        if let Some(r) = vals.iter().find(|r| !r.bound.status.is_usable()) {
            return Err(Error::Numerical(format!("{} bound at n = {} failed", self.kind.name(), r.n)));
        }
        Ok(vals.iter().map(|r| r.bound.value).fold(f64::INFINITY, f64::min))
    }
}

/// First grade with a pattern outside every ideal family.
pub fn tail_grade(dict: &OperatorDictionary) -> usize {
    let spatial = dict.model().spatial_modes();
    let mut n = 0;
    loop {
        let all = compositions(n, spatial);
        let covered = all.iter().all(|p| dict.families.iter().any(|f| &f.pattern == p));
        if !covered {
            return n;
        }
        n += 1;
    }
}

/// Tail bounds for the compiler. Tables must reach at least the tail grade.
pub fn photon_tail_bounds(dict: &OperatorDictionary, clicks: &PhotonBoundTable, error: Option<&PhotonBoundTable>) -> Result<TailBounds> {
    let grade = tail_grade(dict);
    let want = match dict.scheme() {
        Scheme::Active => WitnessKind::DoubleClick,
        Scheme::Passive => WitnessKind::CrossClick,
    };
    if clicks.kind != want {
        return Err(Error::InvalidParameter(format!("expected a {} table", want.name())));
    }
    let error = match (dict.scheme(), error) {
        (Scheme::Active, Some(t)) if t.kind == WitnessKind::EffectiveError => Some(t.tail_value(grade)?),
        (Scheme::Active, Some(_)) => return Err(Error::InvalidParameter("expected an EE table".into())),
        _ => None,
    };
    Ok(TailBounds { grade, clicks: clicks.tail_value(grade)?, error })
}

/// Tables needed for a dictionary's tail rows, computed through `grade + extra`.
pub fn tail_tables(dict: &OperatorDictionary, extra: usize, opts: &SdpOptions) -> Result<TailBounds> {
    let g = tail_grade(dict);
    let model = dict.model();
    let table = |k| PhotonBoundTable::build(k, model, "", g + extra, opts);
    match dict.scheme() {
        Scheme::Active => {
            let dc = table(WitnessKind::DoubleClick)?;
            let ee = table(WitnessKind::EffectiveError)?;
            photon_tail_bounds(dict, &dc, Some(&ee))
        }
        Scheme::Passive => photon_tail_bounds(dict, &table(WitnessKind::CrossClick)?, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::PolBasis;
    use crate::linalg::{C64, ZERO};

    fn opts() -> SdpOptions {
        SdpOptions::default()
    }

    fn ket(space: &FockSpace, alice: usize, occ: &[u8]) -> CMat {
        let db = space.dim();
        let mut v = nalgebra::DVector::from_element(2 * db, ZERO);
        v[alice * db + space.index_of(occ).unwrap()] = C64::new(1.0, 0.0);
        &v * v.adjoint()
    }

    #[test]
    fn effective_error_of_correlated_single_photon() {
        let m = DetectorModel::uniform(Scheme::Active, 1, 1.0).unwrap();
        let sp = FockSpace::shared(1, PolBasis::HV, 2).unwrap();
        let w = build_witnesses(&m, sp.clone()).unwrap();
        let ee = w.iter().find(|w| w.kind == WitnessKind::EffectiveError).unwrap();
        let v = ee.expectation(&ket(&sp, 0, &[1, 0])).unwrap();
        assert!((v - 0.125).abs() < 1e-12, "{v}");
        // Maximally mixed Alice with |1_H>: H/V terms give 1/4 * 1/2, D/A give 1/8.
        let mut rho = ket(&sp, 0, &[1, 0]) * C64::new(0.5, 0.0);
        rho += ket(&sp, 1, &[1, 0]) * C64::new(0.5, 0.0);
        let v = ee.expectation(&rho).unwrap();
        assert!((v - (0.5 * 0.25 + 0.125)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn vacuum_has_no_clicks() {
        for m in [DetectorModel::uniform(Scheme::Active, 1, 0.6).unwrap(), DetectorModel::uniform(Scheme::Passive, 1, 0.6).unwrap()] {
            let sp = FockSpace::shared(1, PolBasis::HV, 2).unwrap();
            for w in build_witnesses(&m, sp.clone()).unwrap() {
                if w.kind.is_local() {
                    assert_eq!(w.expectation(&ket(&sp, 0, &[0, 0])).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn low_grades_vanish_exactly() {
        let a = DetectorModel::table_i(0.5).unwrap();
        let p = DetectorModel::table_ii(0.5).unwrap();
        for n in 0..2 {
            assert_eq!(min_witness_over_grade(WitnessKind::DoubleClick, n, &a, &opts()).unwrap().value, 0.0);
            assert_eq!(min_witness_over_grade(WitnessKind::CrossClick, n, &p, &opts()).unwrap().value, 0.0);
        }
        let e0 = min_witness_over_grade(WitnessKind::EffectiveError, 0, &a, &opts()).unwrap();
        assert_eq!((e0.value, e0.status), (0.0, BoundStatus::Exact));
    }

    #[test]
    fn spectral_and_sdp_agree_for_local_witness() {
        let m = DetectorModel::table_i(0.4).unwrap();
        let block = PatternBlock::new(&[2, 1]);
        let f = witness_block(WitnessKind::DoubleClick, &m, &block).unwrap();
        let (v, st) = min_witness_sdp(&f, 2, true, &opts());
        assert_eq!(st, SdpStatus::Optimal);
        let k = local_block(WitnessKind::DoubleClick, &m, &block).unwrap();
        assert!((v - sym_min_eigenvalue(&k)).abs() < 1e-6, "{v}");
    }

    #[test]
    fn dropping_ppt_never_raises_minimum() {
        let m = DetectorModel::uniform(Scheme::Active, 1, 0.7).unwrap();
        for n in 1..4 {
            let f = witness_block(WitnessKind::EffectiveError, &m, &PatternBlock::new(&[n])).unwrap();
            let (with, _) = min_witness_sdp(&f, 2, true, &opts());
            let (without, _) = min_witness_sdp(&f, 2, false, &opts());
            assert!(without <= with + 1e-7);
            // Without PPT the minimum is the smallest eigenvalue.
            assert!((without - sym_min_eigenvalue(&f)).abs() < 1e-6);
        }
    }

    #[test]
    fn tail_grade_follows_dictionary() {
        use crate::idealops::{build_dictionary, DictionaryOptions};
        let cases = [
            (DetectorModel::uniform(Scheme::Active, 1, 0.5).unwrap(), 3),
            (DetectorModel::table_i(0.5).unwrap(), 3),
            (DetectorModel::uniform(Scheme::Passive, 1, 0.5).unwrap(), 3),
            (DetectorModel::table_ii(0.5).unwrap(), 2),
        ];
        for (m, g) in cases.iter() {
            let g = *g;
            let d = build_dictionary(&m, DictionaryOptions::default()).unwrap();
            assert_eq!(tail_grade(&d), g);
        }
        let d = build_dictionary(&cases[0].0, DictionaryOptions { ideal: false }).unwrap();
        assert_eq!(tail_grade(&d), 0);
    }
}
