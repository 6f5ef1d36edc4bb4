//! Truncated multimode Fock space and dense Hermitian operators on it.
//!
//! Modes are ordered spatial-major, polarization-minor: mode `2s` is the
//! first polarization (H or D) of spatial mode `s` and `2s + 1` the second
//! (V or A). The basis is graded by total photon number and, inside a grade,
//! sorted lexicographically with larger leading occupations first, so one
//! spatial mode at cutoff 2 reads `|00>, |10>, |01>, |20>, |11>, |02>`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{factorial, binomial, CMat, RMat, C64, ZERO};

/// Entries below this magnitude are snapped to exact zero.
pub const SNAP: f64 = 1e-14;
/// Hermiticity tolerance for operator construction.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Polarization frame of a mode pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolBasis {
    /// Horizontal / vertical.
    HV,
    /// Diagonal / anti-diagonal.
    DA,
}

impl PolBasis {
    pub fn other(self) -> PolBasis {
        match self {
            PolBasis::HV => PolBasis::DA,
            PolBasis::DA => PolBasis::HV,
        }
    }

    /// Labels of the two polarization modes.
    pub fn labels(self) -> [&'static str; 2] {
        match self {
            PolBasis::HV => ["H", "V"],
            PolBasis::DA => ["D", "A"],
        }
    }
}

/// Ordered set of optical modes: `spatial` spatial modes times two polarizations.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModeSet {
    spatial: usize,
    basis: PolBasis,
}

impl ModeSet {
    pub fn new(spatial: usize, basis: PolBasis) -> Result<Self> {
        if spatial == 0 {
            return Err(Error::InvalidParameter("a mode set needs at least one spatial mode".into()));
        }
        Ok(ModeSet { spatial, basis })
    }

    pub fn spatial_mode_count(&self) -> usize {
        self.spatial
    }

    pub fn polarization_basis(&self) -> PolBasis {
        self.basis
    }

    /// Total number of modes, `2 * spatial`.
    pub fn mode_count(&self) -> usize {
        2 * self.spatial
    }

    /// Human-readable label of a mode, e.g. `H1` or `A2`.
    pub fn label(&self, mode: usize) -> String {
        format!("{}{}", self.basis.labels()[mode % 2], mode / 2 + 1)
    }

    pub fn with_basis(&self, basis: PolBasis) -> ModeSet {
        ModeSet { spatial: self.spatial, basis }
    }
}

/// One occupation-number basis vector.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FockBasisState {
    occupations: Vec<u8>,
}

impl FockBasisState {
    pub fn new(occupations: Vec<u8>) -> Self {
        FockBasisState { occupations }
    }

    pub fn occupations(&self) -> &[u8] {
        &self.occupations
    }

    pub fn total_photons(&self) -> usize {
        self.occupations.iter().map(|&n| n as usize).sum()
    }

    /// Photons per spatial mode (sum over the polarization pair).
    pub fn spatial_pattern(&self) -> Vec<u8> {
        self.occupations.chunks(2).map(|p| p[0] + p[1]).collect()
    }

    /// Occupation of polarization `pol` (0 or 1) in spatial mode `s`.
    pub fn get(&self, s: usize, pol: usize) -> usize {
        self.occupations[2 * s + pol] as usize
    }
}

/// All compositions of `n` into `parts` non-negative parts, leading part descending.
pub fn compositions(n: usize, parts: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; parts];
    fn rec(n: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos + 1 == cur.len() {
            cur[pos] = n as u8;
            out.push(cur.clone());
            return;
        }
        for v in (0..=n).rev() {
            cur[pos] = v as u8;
            rec(n - v, pos + 1, cur, out);
        }
    }
    if parts == 0 {
        if n == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(n, 0, &mut cur, &mut out);
    out
}

/// Truncated Fock space: every occupation vector with total at most `cutoff`.
#[derive(Clone, Debug)]
pub struct FockSpace {
    mode_set: ModeSet,
    cutoff: usize,
    basis: Vec<FockBasisState>,
    grade_offsets: Vec<usize>,
    index: BTreeMap<Vec<u8>, usize>,
}

impl PartialEq for FockSpace {
    fn eq(&self, other: &Self) -> bool {
        self.mode_set == other.mode_set && self.cutoff == other.cutoff
    }
}

/// Enumerate the graded basis for `mode_set` up to `cutoff` photons.
pub fn enumerate_basis(mode_set: &ModeSet, cutoff: usize) -> Result<FockSpace> {
    let m = mode_set.mode_count();
    if m == 0 {
        return Err(Error::InvalidParameter("zero modes".into()));
    }
    if cutoff > 60 {
        return Err(Error::InvalidParameter(format!("cutoff {cutoff} is unreasonably large")));
    }
    let mut basis = Vec::new();
    let mut grade_offsets = Vec::with_capacity(cutoff + 2);
    for n in 0..=cutoff {
        grade_offsets.push(basis.len());
        for occ in compositions(n, m) {
            basis.push(FockBasisState::new(occ));
        }
    }
    grade_offsets.push(basis.len());
    let index = basis.iter().enumerate().map(|(i, b)| (b.occupations.clone(), i)).collect();
    Ok(FockSpace { mode_set: mode_set.clone(), cutoff, basis, grade_offsets, index })
}

impl FockSpace {
    /// Convenience constructor returning a shared handle.
    pub fn shared(spatial: usize, basis: PolBasis, cutoff: usize) -> Result<Arc<FockSpace>> {
        Ok(Arc::new(enumerate_basis(&ModeSet::new(spatial, basis)?, cutoff)?))
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn mode_set(&self) -> &ModeSet {
        &self.mode_set
    }

    pub fn basis(&self) -> &[FockBasisState] {
        &self.basis
    }

    pub fn index_of(&self, occupations: &[u8]) -> Option<usize> {
        self.index.get(occupations).copied()
    }

    /// Index range of the total-photon-number-`n` grade.
    pub fn grade_range(&self, n: usize) -> Range<usize> {
        if n > self.cutoff {
            return 0..0;
        }
        self.grade_offsets[n]..self.grade_offsets[n + 1]
    }

    /// Total photon number of basis vector `i`.
    pub fn grade_of(&self, i: usize) -> usize {
        self.basis[i].total_photons()
    }

    /// The same shape viewed in the other polarization frame.
    pub fn with_basis(&self, basis: PolBasis) -> FockSpace {
        let mut s = self.clone();
        s.mode_set = self.mode_set.with_basis(basis);
        s
    }

    /// Indices of the basis vectors with a given spatial occupation pattern.
    pub fn pattern_indices(&self, pattern: &[u8]) -> Vec<usize> {
        let n: usize = pattern.iter().map(|&p| p as usize).sum();
        self.grade_range(n).filter(|&i| self.basis[i].spatial_pattern() == pattern).collect()
    }

    /// Every spatial occupation pattern present in the space, graded.
    pub fn patterns(&self) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for n in 0..=self.cutoff {
            out.extend(compositions(n, self.mode_set.spatial_mode_count()));
        }
        out
    }

    /// Human-readable ket label such as `|1,0;0,2>`.
    pub fn ket_label(&self, i: usize) -> String {
        let occ = &self.basis[i].occupations;
        let mut s = String::from("|");
        for (k, pair) in occ.chunks(2).enumerate() {
            if k > 0 {
                s.push(';');
            }
            s.push_str(&format!("{},{}", pair[0], pair[1]));
        }
        s.push('>');
        s
    }
}

/// Hermitian operator on a truncated Fock space.
#[derive(Clone, Debug)]
pub struct FockOperator {
    space: Arc<FockSpace>,
    matrix: CMat,
    block_diagonal: bool,
    real: bool,
}

fn snap(z: C64) -> C64 {
    let re = if z.re.abs() < SNAP { 0.0 } else { z.re };
    let im = if z.im.abs() < SNAP { 0.0 } else { z.im };
    C64::new(re, im)
}

impl FockOperator {
    /// Wrap a matrix, snapping dust to zero and enforcing Hermiticity.
    pub fn new(space: Arc<FockSpace>, matrix: CMat) -> Result<Self> {
        let d = space.dim();
        if matrix.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "matrix {:?} on a space of dimension {d}",
                matrix.shape()
            )));
        }
        let scale = matrix.iter().fold(1.0f64, |m, z| m.max(crate::linalg::cabs(*z)));
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max(crate::linalg::cabs(matrix[(i, j)] - matrix[(j, i)].conj()));
            }
        }
        if worst > HERMITIAN_TOL * scale {
            return Err(Error::Numerical(format!("operator is not Hermitian (defect {worst:e})")));
        }
        let mut m = CMat::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let z = snap((matrix[(i, j)] + matrix[(j, i)].conj()) * 0.5);
                let z = if i == j { C64::new(z.re, 0.0) } else { z };
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        Ok(Self::from_clean(space, m))
    }

    fn from_clean(space: Arc<FockSpace>, matrix: CMat) -> Self {
        let d = space.dim();
        let mut block_diagonal = true;
        let mut real = true;
        for i in 0..d {
            for j in 0..d {
                let z = matrix[(i, j)];
                if z.im != 0.0 {
                    real = false;
                }
                if z != ZERO && space.grade_of(i) != space.grade_of(j) {
                    block_diagonal = false;
                }
            }
        }
        FockOperator { space, matrix, block_diagonal, real }
    }

    /// Build from a real symmetric matrix.
    pub fn from_real(space: Arc<FockSpace>, matrix: &RMat) -> Result<Self> {
        Self::new(space, matrix.map(|x| C64::new(x, 0.0)))
    }

    pub fn identity(space: Arc<FockSpace>) -> Self {
        let d = space.dim();
        Self::from_clean(space, CMat::identity(d, d))
    }

    pub fn zero(space: Arc<FockSpace>) -> Self {
        let d = space.dim();
        Self::from_clean(space, CMat::zeros(d, d))
    }

    /// Diagonal operator whose entry on each basis vector is `f(state)`.
    pub fn diagonal<F: Fn(&FockBasisState) -> f64>(space: Arc<FockSpace>, f: F) -> Self {
        let d = space.dim();
        let mut m = CMat::zeros(d, d);
        for (i, b) in space.basis().iter().enumerate() {
            m[(i, i)] = snap(C64::new(f(b), 0.0));
        }
        Self::from_clean(space, m)
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    /// Real part of the matrix; exact when [`is_real`](Self::is_real) holds.
    pub fn real_matrix(&self) -> RMat {
        self.matrix.map(|z| z.re)
    }

    pub fn is_block_diagonal(&self) -> bool {
        self.block_diagonal
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    fn check_same(&self, other: &FockOperator) -> Result<()> {
        if *self.space != *other.space {
            return Err(Error::DimensionMismatch("operators live on different spaces".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &FockOperator) -> Result<FockOperator> {
        self.check_same(other)?;
        FockOperator::new(self.space.clone(), &self.matrix + &other.matrix)
    }

    pub fn sub(&self, other: &FockOperator) -> Result<FockOperator> {
        self.check_same(other)?;
        FockOperator::new(self.space.clone(), &self.matrix - &other.matrix)
    }

    pub fn scale(&self, s: f64) -> FockOperator {
        let m = self.matrix.map(|z| snap(z * s));
        Self::from_clean(self.space.clone(), m)
    }

    /// Linear combination `sum c_k op_k` of operators on one space.
    pub fn combination(space: Arc<FockSpace>, terms: &[(f64, &FockOperator)]) -> Result<FockOperator> {
        let d = space.dim();
        let mut m = CMat::zeros(d, d);
        for (c, op) in terms {
            if *op.space != *space {
                return Err(Error::DimensionMismatch("combination across spaces".into()));
            }
            m += op.matrix.map(|z| z * *c);
        }
        FockOperator::new(space, m)
    }

    /// Plain matrix product (not Hermitian in general).
    pub fn product(&self, other: &FockOperator) -> CMat {
        &self.matrix * &other.matrix
    }

    /// `Tr(rho A)`.
    pub fn expectation(&self, rho: &CMat) -> C64 {
        crate::linalg::trace_product(rho, &self.matrix)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.real {
            crate::linalg::sym_eigenvalues(&self.real_matrix())
        } else {
            crate::linalg::herm_eigenvalues(&self.matrix)
        }
    }

    /// Restriction to the given basis indices.
    pub fn submatrix(&self, idx: &[usize]) -> CMat {
        CMat::from_fn(idx.len(), idx.len(), |a, b| self.matrix[(idx[a], idx[b])])
    }
}

/// Amplitudes of a single spatial mode's `n`-photon DA states in HV coordinates.
///
/// Column `t` is the DA state `|n - t, t>`, row `u` the HV state `|n - u, u>`.
/// The matrix is real, orthogonal and its own inverse.
pub fn single_mode_rotation(n: usize) -> RMat {
    let mut r = RMat::zeros(n + 1, n + 1);
    let norm = libm::pow(2.0, n as f64 / 2.0);
    for t in 0..=n {
        let (d, a) = (n - t, t);
        for i in 0..=d {
            for j in 0..=a {
                // i of the D photons and j of the A photons land in H.
                let k = i + j;
                let sign = if (a - j) % 2 == 0 { 1.0 } else { -1.0 };
                let c = binomial(d, i) * binomial(a, j) * sign;
                let amp = c * libm::sqrt(factorial(k) * factorial(n - k) / (factorial(d) * factorial(a))) / norm;
                r[(n - k, t)] += amp;
            }
        }
    }
    r
}

/// Full-space polarization rotation `U`, mapping coordinates in one frame to the other.
pub fn rotation_matrix(space: &FockSpace) -> RMat {
    let d = space.dim();
    let s = space.mode_set().spatial_mode_count();
    let cache: Vec<RMat> = (0..=space.cutoff()).map(single_mode_rotation).collect();
    let mut u = RMat::zeros(d, d);
    for (col, state) in space.basis().iter().enumerate() {
        // Expand mode by mode; each spatial mode keeps its photon count.
        let mut partial: Vec<(Vec<u8>, f64)> = vec![(Vec::with_capacity(2 * s), 1.0)];
        for sm in 0..s {
            let (p, q) = (state.get(sm, 0), state.get(sm, 1));
            let n = p + q;
            let rot = &cache[n];
            let mut next = Vec::new();
            for (occ, amp) in &partial {
                for u_idx in 0..=n {
                    let c = rot[(u_idx, q)];
                    if c == 0.0 {
                        continue;
                    }
                    let mut o = occ.clone();
                    o.push((n - u_idx) as u8);
                    o.push(u_idx as u8);
                    next.push((o, amp * c));
                }
            }
            partial = next;
        }
        for (occ, amp) in partial {
            let row = space.index_of(&occ).expect("rotation preserves the grade");
            u[(row, col)] += amp;
        }
    }
    u
}

/// Re-express `op` in the other polarization frame.
///
/// `target` must be the frame opposite to the one `op`'s space is labelled with.
pub fn basis_rotate(op: &FockOperator, target: PolBasis) -> Result<FockOperator> {
    let current = op.space().mode_set().polarization_basis();
    if current == target {
        return Err(Error::InvalidParameter(format!("operator is already in the {target:?} frame")));
    }
    let u = crate::linalg::to_complex(&rotation_matrix(op.space()));
    let m = &u * op.matrix() * &u;
    FockOperator::new(Arc::new(op.space().with_basis(target)), m)
}

/// Keep only the total-photon-number-`n` block of `op`.
pub fn grade_project(op: &FockOperator, n: usize) -> Result<FockOperator> {
    let space = op.space();
    if n > space.cutoff() {
        return Err(Error::CutoffTooSmall { requested: n, cutoff: space.cutoff() });
    }
    let d = space.dim();
    let r = space.grade_range(n);
    let mut m = CMat::zeros(d, d);
    for i in r.clone() {
        for j in r.clone() {
            m[(i, j)] = op.matrix()[(i, j)];
        }
    }
    Ok(FockOperator::from_clean(space.clone(), m))
}

/// Projector onto the basis vectors with indices in `idx`.
pub fn projector(space: Arc<FockSpace>, idx: &[usize]) -> FockOperator {
    let d = space.dim();
    let mut m = CMat::zeros(d, d);
    for &i in idx {
        m[(i, i)] = C64::new(1.0, 0.0);
    }
    FockOperator::from_clean(space, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{binomial_usize, max_abs};

    fn space(s: usize, n: usize) -> Arc<FockSpace> {
        FockSpace::shared(s, PolBasis::HV, n).unwrap()
    }

    #[test]
    fn vacuum_only_space() {
        let sp = space(1, 0);
        assert_eq!(sp.dim(), 1);
        assert_eq!(sp.basis()[0].occupations(), &[0, 0]);
    }

    #[test]
    fn one_mode_cutoff_two_order() {
        let sp = space(1, 2);
        let got: Vec<Vec<u8>> = sp.basis().iter().map(|b| b.occupations().to_vec()).collect();
        let want: Vec<Vec<u8>> =
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]];
        assert_eq!(got, want);
    }

    #[test]
    fn dimension_matches_stars_and_bars() {
        for s in 1..=4 {
            for n in 0..=4 {
                let sp = space(s, n);
                assert_eq!(sp.dim(), binomial_usize(n + 2 * s, 2 * s));
            }
        }
        assert_eq!(space(2, 2).dim(), 15);
    }

    #[test]
    fn zero_spatial_modes_rejected() {
        assert!(ModeSet::new(0, PolBasis::HV).is_err());
    }

    #[test]
    fn rotation_is_an_involution() {
        for s in 1..=2 {
            let sp = space(s, 3);
            let u = rotation_matrix(&sp);
            let uu = &u * &u;
            let err = (uu - RMat::identity(sp.dim(), sp.dim())).abs().max();
            assert!(err < 1e-12, "U^2 differs from I by {err}");
        }
    }

    #[test]
    fn one_photon_d_projector() {
        let da = Arc::new(space(1, 2).with_basis(PolBasis::DA));
        let i = da.index_of(&[1, 0]).unwrap();
        let p = projector(da, &[i]);
        let hv = basis_rotate(&p, PolBasis::HV).unwrap();
        let sp = hv.space().clone();
        let (h, v) = (sp.index_of(&[1, 0]).unwrap(), sp.index_of(&[0, 1]).unwrap());
        for (a, b) in [(h, h), (h, v), (v, h), (v, v)] {
            assert!((hv.matrix()[(a, b)].re - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn two_photon_d_projector() {
        let da = Arc::new(space(1, 2).with_basis(PolBasis::DA));
        let i = da.index_of(&[2, 0]).unwrap();
        let hv = basis_rotate(&projector(da, &[i]), PolBasis::HV).unwrap();
        let sp = hv.space().clone();
        let (a, b) = (sp.index_of(&[2, 0]).unwrap(), sp.index_of(&[1, 1]).unwrap());
        assert!((hv.matrix()[(a, a)].re - 0.25).abs() < 1e-14);
        assert!((hv.matrix()[(b, b)].re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_rotates_to_identity() {
        let sp = Arc::new(space(2, 2).with_basis(PolBasis::DA));
        let id = FockOperator::identity(sp);
        let r = basis_rotate(&id, PolBasis::HV).unwrap();
        let d = r.dim();
        assert!(max_abs(&(r.matrix() - CMat::identity(d, d))) < 1e-12);
    }

    #[test]
    fn grade_projection_of_identity() {
        let sp = space(1, 3);
        let id = FockOperator::identity(sp.clone());
        let p0 = grade_project(&id, 0).unwrap();
        assert_eq!(p0.matrix()[(0, 0)].re, 1.0);
        assert_eq!(p0.matrix().iter().filter(|z| crate::linalg::cabs(**z) > 0.0).count(), 1);
        assert!(grade_project(&id, 4).is_err());
    }

    #[test]
    fn hermiticity_enforced() {
        let sp = space(1, 1);
        let mut m = CMat::zeros(3, 3);
        m[(0, 1)] = C64::new(1.0, 0.0);
        assert!(FockOperator::new(sp, m).is_err());
    }
}
