//! Independent checks of the photon-number bounds.
//!
//! The two-photon single-mode block is 3-dimensional, so Alice (x) block is
//! 2 (x) 3 where PPT and separable coincide. A real witness then has the
//! same minimum over real PPT states as over complex product states, which a
//! brute-force search over Alice's Bloch sphere finds.

use evmix_core::detectors::{DetectorModel, Scheme};
use evmix_core::linalg::{herm_min_eigenvalue, CMat, RMat, C64};
use evmix_core::photon_bounds::{min_witness_over_grade, WitnessKind};
use evmix_core::sdp::SdpOptions;
use proptest::prelude::*;

/// Fock states |2,0>, |1,1>, |0,2> of the D/A modes written in H/V.
fn rotation() -> RMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    RMat::from_row_slice(3, 3, &[0.5, s, 0.5, s, 0.0, -s, 0.5, -s, 0.5])
}

/// Click probabilities of the two detectors of one basis on |k, 2-k>,
/// returned as diagonal operators (first only, second only, both, none).
fn basis_elements(eta_a: f64, eta_b: f64) -> [RMat; 4] {
    let mut out = [RMat::zeros(3, 3), RMat::zeros(3, 3), RMat::zeros(3, 3), RMat::zeros(3, 3)];
    for i in 0..3 {
        let (ka, kb) = (2 - i as i32, i as i32);
        let silent_a = (1.0 - eta_a).powi(ka);
        let silent_b = (1.0 - eta_b).powi(kb);
        out[0][(i, i)] = (1.0 - silent_a) * silent_b;
        out[1][(i, i)] = silent_a * (1.0 - silent_b);
        out[2][(i, i)] = (1.0 - silent_a) * (1.0 - silent_b);
        out[3][(i, i)] = silent_a * silent_b;
    }
    out
}

/// Hand-built active POVM for efficiencies (H/D, V/A):
/// `[H, V, HV, -, D, A, DA, -]` on the two-photon block in H/V coordinates.
fn active_elements(eta_h: f64, eta_v: f64) -> Vec<RMat> {
    let r = rotation();
    let hv = basis_elements(eta_h, eta_v);
    let da = basis_elements(eta_h, eta_v).map(|m| r.transpose() * m * &r);
    hv.into_iter().chain(da).collect()
}

fn alice_projectors() -> [RMat; 4] {
    [
        RMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        RMat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        RMat::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
        RMat::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]),
    ]
}

/// Effective-error witness as a function of Alice's pure state: returns
/// the Bob operator `<a| F |a>`.
fn ee_conditional(m: &[RMat], a: [C64; 2]) -> CMat {
    // error outcome and double click per Alice outcome H, V, D, A
    let bob = [(&m[1], &m[2]), (&m[0], &m[2]), (&m[5], &m[6]), (&m[4], &m[6])];
    let mut acc = CMat::zeros(3, 3);
    for (p, (err, dc)) in alice_projectors().iter().zip(bob) {
        let mut w = C64::new(0.0, 0.0);
        for i in 0..2 {
            for k in 0..2 {
                w += a[i].conj() * a[k] * p[(i, k)];
            }
        }
        let b = (err + dc * 0.5) * 0.25;
        acc += b.map(|x| C64::new(x, 0.0)) * w;
    }
    acc
}

fn product_minimum(m: &[RMat]) -> f64 {
    let eval = |t: f64, f: f64| {
        let a = [C64::new(t.cos(), 0.0), C64::new(t.sin() * f.cos(), t.sin() * f.sin())];
        herm_min_eigenvalue(&ee_conditional(m, a))
    };
    let (nt, nf) = (120, 120);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=nt {
        for j in 0..nf {
            let (t, f) = (std::f64::consts::FRAC_PI_2 * i as f64 / nt as f64, std::f64::consts::TAU * j as f64 / nf as f64);
            let v = eval(t, f);
            if v < best.0 {
                best = (v, t, f);
            }
        }
    }
    // Shrink a local grid around the best point.
    let (mut ht, mut hf) = (std::f64::consts::FRAC_PI_2 / nt as f64, std::f64::consts::TAU / nf as f64);
    for _ in 0..40 {
        let (_, t0, f0) = best;
        for dt in -4..=4 {
            for df in -4..=4 {
                let (t, f) = (t0 + ht * dt as f64 / 4.0, f0 + hf * df as f64 / 4.0);
                let v = eval(t, f);
                if v < best.0 {
                    best = (v, t, f);
                }
            }
        }
        ht *= 0.6;
        hf *= 0.6;
    }
    best.0
}

#[test]
fn double_click_two_photons_vanishes() {
    // Two rank-one projectors in three dimensions share a null vector.
    for (a, b) in [(1.0, 1.0), (1.0, 0.5), (0.7, 0.2)] {
        let m = active_elements(a, b);
        let k = (&m[2] + &m[6]) * 0.5;
        let oracle = evmix_core::linalg::sym_min_eigenvalue(&k);
        let model = DetectorModel::new(Scheme::Active, vec![vec![a, b]]).unwrap();
        let ours = min_witness_over_grade(WitnessKind::DoubleClick, 2, &model, &SdpOptions::default()).unwrap();
        assert!((ours.value - oracle.max(0.0)).abs() < 1e-9, "{a} {b}: {} vs {oracle}", ours.value);
    }
}

#[test]
fn cross_click_closed_form_at_unit_efficiency() {
    // All n photons leave the splitter through one arm with probability 2^(1-n).
    for spatial in [1usize, 2] {
        let model = DetectorModel::uniform(Scheme::Passive, spatial, 1.0).unwrap();
        for n in 0..=6usize {
            let want = if n == 0 { 0.0 } else { 1.0 - 2f64.powi(1 - n as i32) };
            let got = min_witness_over_grade(WitnessKind::CrossClick, n, &model, &SdpOptions::default()).unwrap();
            assert!((got.value - want).abs() < 1e-10, "n={n} spatial={spatial}: {} vs {want}", got.value);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn effective_error_two_photons_matches_product_search(a in 0.1f64..=1.0, b in 0.1f64..=1.0) {
        let oracle = product_minimum(&active_elements(a, b)).max(0.0);
        let model = DetectorModel::new(Scheme::Active, vec![vec![a, b]]).unwrap();
        let ours = min_witness_over_grade(WitnessKind::EffectiveError, 2, &model, &SdpOptions::default()).unwrap();
        prop_assert!((ours.value - oracle).abs() < 1e-6, "eta=({a}, {b}): sdp {} vs search {oracle}", ours.value);
    }
}

#[test]
fn effective_error_two_photons_at_unit_efficiency() {
    let oracle = product_minimum(&active_elements(1.0, 1.0));
    assert!((oracle - 0.125).abs() < 1e-9, "{oracle}");
    let model = DetectorModel::uniform(Scheme::Active, 1, 1.0).unwrap();
    let ours = min_witness_over_grade(WitnessKind::EffectiveError, 2, &model, &SdpOptions::default()).unwrap();
    assert!((ours.value - 0.125).abs() < 1e-6, "{}", ours.value);
}
