//! Detection schemes, efficiency tables and efficiency renormalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Which receiver topology Bob uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Polarization rotator picks the basis; two detectors `H/D` and `V/A`.
    Active,
    /// 50/50 beam splitter picks the basis; four detectors `H, V, D, A`.
    Passive,
}

impl Scheme {
    pub fn detector_count(self) -> usize {
        match self {
            Scheme::Active => 2,
            Scheme::Passive => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Active => "active",
            Scheme::Passive => "passive",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        match s.trim().to_ascii_lowercase().as_str() {
            "active" => Ok(Scheme::Active),
            "passive" => Ok(Scheme::Passive),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }

    /// Column labels of the efficiency table.
    pub fn detector_labels(self) -> &'static [&'static str] {
        match self {
            Scheme::Active => &["H/D", "V/A"],
            Scheme::Passive => &["H", "V", "D", "A"],
        }
    }
}

/// Scheme topology plus the number of spatial modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub spatial_modes: usize,
}

impl SchemeConfig {
    /// Probability of either measurement basis; fixed by the protocol.
    pub const BASIS_CHOICE_PROBABILITY: f64 = 0.5;

    pub fn new(scheme: Scheme, spatial_modes: usize) -> Result<Self> {
        if spatial_modes == 0 {
            return Err(Error::InvalidParameter("spatial_modes must be at least 1".into()));
        }
        Ok(SchemeConfig { scheme, spatial_modes })
    }
}

/// Efficiency of every detector for light in every spatial mode.
///
/// Rows are spatial modes, columns detectors in the order of
/// [`Scheme::detector_labels`].
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    scheme: Scheme,
    rows: Vec<Vec<f64>>,
}

impl DetectorModel {
    pub fn new(scheme: Scheme, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("efficiency table has no rows".into()));
        }
        let cols = scheme.detector_count();
        for (s, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} entries, {} scheme needs {cols}",
                    s + 1,
                    row.len(),
                    scheme.name()
                )));
            }
            for &e in row {
                if !(0.0..=1.0).contains(&e) || !e.is_finite() {
                    return Err(Error::InvalidParameter(format!("efficiency {e} outside [0, 1]")));
                }
            }
        }
        Ok(DetectorModel { scheme, rows })
    }

    /// The same efficiency for every detector and spatial mode.
    pub fn uniform(scheme: Scheme, spatial_modes: usize, eta: f64) -> Result<Self> {
        Self::new(scheme, vec![vec![eta; scheme.detector_count()]; spatial_modes])
    }

    /// Symmetric mismatch pattern: spatial mode `s` sees efficiency 1 at
    /// detector `s` and `eta` elsewhere (two modes active, four passive).
    pub fn symmetric(scheme: Scheme, eta: f64) -> Result<Self> {
        let n = scheme.detector_count();
        let rows = (0..n).map(|s| (0..n).map(|d| if d == s { 1.0 } else { eta }).collect()).collect();
        Self::new(scheme, rows)
    }

    /// Active two-mode model `[[1, eta], [eta, 1]]`.
    pub fn table_i(eta: f64) -> Result<Self> {
        Self::symmetric(Scheme::Active, eta)
    }

    /// Passive four-mode model with 1 on the diagonal and `eta` elsewhere.
    pub fn table_ii(eta: f64) -> Result<Self> {
        Self::symmetric(Scheme::Passive, eta)
    }

    /// Measured passive mismatch without a pinhole (absolute efficiencies).
    pub fn table_iii() -> Self {
        Self::new(
            Scheme::Passive,
            vec![
                vec![0.08, 0.0, 0.00106, 0.00106],
                vec![0.0, 0.0008, 0.0001, 0.0001],
                vec![0.002, 0.002, 0.16, 0.0],
                vec![0.002, 0.002, 0.0, 0.04],
            ],
        )
        .expect("static table is valid")
    }

    /// Measured passive mismatch with a pinhole (absolute efficiencies).
    pub fn table_iv() -> Self {
        Self::new(
            Scheme::Passive,
            vec![
                vec![0.0004, 0.0, 0.0002, 0.0002],
                vec![0.0, 0.0004, 0.00033, 0.00033],
                vec![0.0002, 0.0002, 0.0004, 0.0],
                vec![0.00033, 0.00033, 0.0, 0.0004],
            ],
        )
        .expect("static table is valid")
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn spatial_modes(&self) -> usize {
        self.rows.len()
    }

    pub fn config(&self) -> SchemeConfig {
        SchemeConfig { scheme: self.scheme, spatial_modes: self.rows.len() }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Efficiency of detector `d` for spatial mode `s`.
    pub fn eta(&self, s: usize, d: usize) -> f64 {
        self.rows[s][d]
    }

    pub fn max_efficiency(&self) -> f64 {
        self.rows.iter().flatten().fold(0.0f64, |m, &e| m.max(e))
    }

    pub fn min_efficiency(&self) -> f64 {
        self.rows.iter().flatten().fold(1.0f64, |m, &e| m.min(e))
    }

    /// True when every entry equals the first one.
    pub fn is_mismatch_free(&self) -> bool {
        let e0 = self.rows[0][0];
        self.rows.iter().flatten().all(|&e| e == e0)
    }

    /// Multiply every efficiency by `f`.
    pub fn scaled(&self, f: f64) -> Result<Self> {
        Self::new(self.scheme, self.rows.iter().map(|r| r.iter().map(|e| e * f).collect()).collect())
    }

    /// Keep only one spatial mode (used when the model is mismatch-free).
    pub fn single_mode(&self) -> Result<Self> {
        Self::new(self.scheme, vec![self.rows[0].clone()])
    }
}

/// A model rescaled so its largest efficiency is one, plus the common factor.
#[derive(Clone, Debug, PartialEq)]
pub struct RenormalizedModel {
    pub model: DetectorModel,
    pub common_transmittance: f64,
}

/// Factor out the largest efficiency as a common loss.
pub fn renormalize(model: &DetectorModel) -> Result<RenormalizedModel> {
    let eta0 = model.max_efficiency();
    if eta0 <= 0.0 {
        return Err(Error::InvalidParameter("all efficiencies are zero; nothing can be detected".into()));
    }
    let rows = model
        .rows()
        .iter()
        .map(|r| r.iter().map(|&e| if e == eta0 { 1.0 } else { (e / eta0).min(1.0) }).collect())
        .collect();
    Ok(RenormalizedModel { model: DetectorModel::new(model.scheme(), rows)?, common_transmittance: eta0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_i_half() {
        let m = DetectorModel::table_i(0.5).unwrap();
        assert_eq!(m.rows(), &[vec![1.0, 0.5], vec![0.5, 1.0]]);
    }

    #[test]
    fn table_iv_first_row() {
        assert_eq!(DetectorModel::table_iv().rows()[0], vec![0.0004, 0.0, 0.0002, 0.0002]);
    }

    #[test]
    fn renormalize_scalar_division() {
        let m = DetectorModel::new(Scheme::Active, vec![vec![0.8, 0.4], vec![0.4, 0.8]]).unwrap();
        let r = renormalize(&m).unwrap();
        assert_eq!(r.common_transmittance, 0.8);
        assert_eq!(r.model.rows(), &[vec![1.0, 0.5], vec![0.5, 1.0]]);
    }

    #[test]
    fn renormalize_table_iv() {
        let r = renormalize(&DetectorModel::table_iv()).unwrap();
        assert_eq!(r.common_transmittance, 0.0004);
        let row = &r.model.rows()[0];
        let want = [1.0, 0.0, 0.5, 0.5];
        for (a, b) in row.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn renormalize_is_idempotent() {
        let r = renormalize(&DetectorModel::table_iii()).unwrap();
        let rr = renormalize(&r.model).unwrap();
        assert_eq!(rr.common_transmittance, 1.0);
        assert_eq!(rr.model, r.model);
    }

    #[test]
    fn normalized_model_unchanged() {
        let m = DetectorModel::uniform(Scheme::Passive, 1, 1.0).unwrap();
        let r = renormalize(&m).unwrap();
        assert_eq!(r.model, m);
        assert_eq!(r.common_transmittance, 1.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(DetectorModel::new(Scheme::Active, vec![vec![1.2, 0.5]]).is_err());
        assert!(DetectorModel::new(Scheme::Passive, vec![vec![1.0, 0.5]]).is_err());
        assert!(renormalize(&DetectorModel::uniform(Scheme::Active, 1, 0.0).unwrap()).is_err());
        assert!(Scheme::parse("hybrid").is_err());
    }
}
