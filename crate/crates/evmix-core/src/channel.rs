//! Exact statistics of the toy channel and the squashing remap.
//!
//! The source emits `(|H>|H> + |V>|V>)/sqrt2` in the qubit picture. With
//! probability `p` Eve replaces Bob's photon by the randomly polarized
//! `n`-photon state, sent into one spatial mode chosen uniformly. Otherwise the
//! photon is lost with probability `r`, or else depolarized with probability
//! `omega` and placed in a uniformly random spatial mode.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::detectors::{DetectorModel, Scheme};
use crate::error::{Error, Result};
use crate::evm::{AliceOutcome, ObservedStatistics, ALICE_OUTCOMES};
use crate::fockspace::FockSpace;
use crate::linalg::{binomial, kron, to_complex, CMat, RMat};
use crate::povm::{classify_clicks, povm_block, Outcome, PatternBlock};

/// Number of photons Eve resends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resend {
    Photons(usize),
    Infinite,
}

impl Resend {
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if matches!(t, "inf" | "infinity" | "Infinity" | "∞") {
            return Ok(Resend::Infinite);
        }
        match t.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Resend::Photons(n)),
            _ => Err(Error::InvalidParameter(format!("n_resend must be a positive integer or 'inf', got '{t}'"))),
        }
    }
}

impl core::fmt::Display for Resend {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Resend::Photons(n) => write!(f, "{n}"),
            Resend::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub omega: f64,
    pub loss: f64,
    pub p_multi: f64,
    pub n_resend: Resend,
}

impl ChannelParams {
    pub fn new(omega: f64, loss: f64, p_multi: f64, n_resend: Resend) -> Result<Self> {
        let p = ChannelParams { omega, loss, p_multi, n_resend };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("omega", self.omega), ("loss", self.loss), ("p_multi", self.p_multi)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.n_resend == Resend::Photons(0) {
            return Err(Error::InvalidParameter("n_resend must be at least 1".into()));
        }
        Ok(())
    }
}

/// `(1/2pi) int cos^(2a) sin^(2b)` = `(2a-1)!! (2b-1)!! / (2a+2b)!!`.
fn wallis(a: usize, b: usize) -> f64 {
    let mut num = 1.0;
    for k in 0..a {
        num *= (2 * k + 1) as f64;
    }
    for k in 0..b {
        num *= (2 * k + 1) as f64;
    }
    let mut den = 1.0;
    for k in 1..=(a + b) {
        den *= (2 * k) as f64;
    }
    num / den
}

/// Randomly polarized `n`-photon state on one spatial mode, in the block
/// order `|n,0>, |n-1,1>, ..., |0,n>`.
pub fn resend_density(n: usize) -> Result<RMat> {
    if n == 0 {
        return Err(Error::InvalidParameter("resend state needs n >= 1".into()));
    }
    Ok(RMat::from_fn(n + 1, n + 1, |i, j| {
        let (k, kp) = (n - i, n - j);
        if (k + kp) % 2 == 1 {
            return 0.0;
        }
        let a = (k + kp) / 2;
        libm::sqrt(binomial(n, k) * binomial(n, kp)) * wallis(a, n - a)
    }))
}

/// Bipartite qubit state after depolarizing Bob's half of the source state,
/// Alice-major with Bob in `{H, V}`.
pub fn depolarized_pair(omega: f64) -> RMat {
    let mut phi = RMat::zeros(4, 4);
    for &(r, c) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
        phi[(r, c)] = 0.5;
    }
    phi * (1.0 - omega) + RMat::identity(4, 4) * (omega / 4.0)
}

fn unit_pattern(spatial: usize, s: usize, n: usize) -> Vec<u8> {
    let mut p = vec![0u8; spatial];
    p[s] = n as u8;
    p
}

/// Joint outcome probabilities for Alice's `1/2 P_x` and a Bob block state.
fn add_joint(out: &mut [[f64; 8]; 4], alpha: &[Outcome; 8], weight: f64, joint: &RMat, elements: &[(Outcome, RMat)]) {
    for (xi, x) in ALICE_OUTCOMES.iter().enumerate() {
        let ax = x.projector() * 0.5;
        for (o, m) in elements {
            let yi = alpha.iter().position(|a| a == o).expect("outcome in alphabet");
            let op = kron(&ax, m);
            out[xi][yi] += weight * joint.component_mul(&op).sum();
        }
    }
}

/// Exact statistics of the toy channel.
pub fn simulate_statistics(params: &ChannelParams, model: &DetectorModel) -> Result<ObservedStatistics> {
    params.validate()?;
    let scheme = model.scheme();
    let alpha = Outcome::alphabet(scheme);
    let spatial = model.spatial_modes();
    let w_mode = 1.0 / spatial as f64;
    let mut acc = [[0.0f64; 8]; 4];
    let rho_a = RMat::identity(2, 2) * 0.5;

    // Intercept-resend branch: Alice uncorrelated.
    if params.p_multi > 0.0 {
        for s in 0..spatial {
            match params.n_resend {
                Resend::Photons(n) => {
                    let block = PatternBlock::new(&unit_pattern(spatial, s, n));
                    let joint = kron(&rho_a, &resend_density(n)?);
                    add_joint(&mut acc, alpha, params.p_multi * w_mode, &joint, &povm_block(model, &block));
                }
                Resend::Infinite => {
                    for (yi, o) in saturated_outcomes(model, s) {
                        for row in acc.iter_mut() {
                            row[alpha.iter().position(|a| *a == o).unwrap()] += params.p_multi * w_mode * 0.25 * yi;
                        }
                    }
                }
            }
        }
    }
    let rest = 1.0 - params.p_multi;
    // Lost photon.
    if rest * params.loss > 0.0 {
        let block = PatternBlock::new(&vec![0u8; spatial]);
        let joint = kron(&rho_a, &RMat::identity(1, 1));
        add_joint(&mut acc, alpha, rest * params.loss, &joint, &povm_block(model, &block));
    }
    // Depolarized single photon.
    if rest * (1.0 - params.loss) > 0.0 {
        let pair = depolarized_pair(params.omega);
        for s in 0..spatial {
            let block = PatternBlock::new(&unit_pattern(spatial, s, 1));
            add_joint(&mut acc, alpha, rest * (1.0 - params.loss) * w_mode, &pair, &povm_block(model, &block));
        }
    }
    let mut obs = ObservedStatistics::new(scheme);
    for (xi, &x) in ALICE_OUTCOMES.iter().enumerate() {
        for (yi, &y) in alpha.iter().enumerate() {
            obs.set(x, y, acc[xi][yi])?;
        }
    }
    Ok(obs)
}

/// Click pattern when every polarization of spatial mode `s` carries
/// unboundedly many photons: each detector with positive efficiency fires.
/// Returns `(probability, outcome)` pairs per measurement basis.
fn saturated_outcomes(model: &DetectorModel, s: usize) -> Vec<(f64, Outcome)> {
    let on = |d: usize| model.eta(s, d) > 0.0;
    match model.scheme() {
        Scheme::Active => {
            let pick = |a: bool, b: bool, one: Outcome, two: Outcome, both: Outcome, none: Outcome| match (a, b) {
                (true, true) => both,
                (true, false) => one,
                (false, true) => two,
                (false, false) => none,
            };
            vec![
                (1.0, pick(on(0), on(1), Outcome::H, Outcome::V, Outcome::HV, Outcome::EmptyHV)),
                (1.0, pick(on(0), on(1), Outcome::D, Outcome::A, Outcome::DA, Outcome::EmptyDA)),
            ]
        }
        Scheme::Passive => {
            let mask = (0..4).filter(|&d| on(d)).fold(0u8, |m, d| m | (1 << d));
            vec![(1.0, classify_clicks(mask))]
        }
    }
}

/// Full joint state on `Alice (x) space` for a finite resend number.
pub fn channel_state(params: &ChannelParams, model: &DetectorModel, space: &Arc<FockSpace>) -> Result<CMat> {
    params.validate()?;
    let spatial = model.spatial_modes();
    if space.mode_set().spatial_mode_count() != spatial {
        return Err(Error::DimensionMismatch("space and model disagree on spatial modes".into()));
    }
    let n = match params.n_resend {
        Resend::Photons(n) => n,
        Resend::Infinite => return Err(Error::Unsupported("the saturated resend state has no finite matrix".into())),
    };
    if params.p_multi > 0.0 && n > space.cutoff() {
        return Err(Error::CutoffTooSmall { requested: n, cutoff: space.cutoff() });
    }
    let db = space.dim();
    let mut rho = RMat::zeros(2 * db, 2 * db);
    let w_mode = 1.0 / spatial as f64;
    let embed = |rho: &mut RMat, alice: &RMat, pattern: &[u8], bob: &RMat, w: f64| {
        let idx = space.pattern_indices(pattern);
        for i in 0..2 {
            for k in 0..2 {
                if alice[(i, k)] == 0.0 {
                    continue;
                }
                for (a, &ra) in idx.iter().enumerate() {
                    for (b, &rb) in idx.iter().enumerate() {
                        rho[(i * db + ra, k * db + rb)] += w * alice[(i, k)] * bob[(a, b)];
                    }
                }
            }
        }
    };
    let rho_a = RMat::identity(2, 2) * 0.5;
    if params.p_multi > 0.0 {
        let rn = resend_density(n)?;
        for s in 0..spatial {
            embed(&mut rho, &rho_a, &unit_pattern(spatial, s, n), &rn, params.p_multi * w_mode);
        }
    }
    let rest = 1.0 - params.p_multi;
    embed(&mut rho, &rho_a, &vec![0u8; spatial], &RMat::identity(1, 1), rest * params.loss);
    let pair = depolarized_pair(params.omega);
    for s in 0..spatial {
        let pat = unit_pattern(spatial, s, 1);
        for i in 0..2 {
            for k in 0..2 {
                let sub = RMat::from_fn(2, 2, |a, b| pair[(i * 2 + a, k * 2 + b)]);
                let mut one = RMat::zeros(2, 2);
                one[(i, k)] = 1.0;
                embed(&mut rho, &one, &pat, &sub, rest * (1.0 - params.loss) * w_mode);
            }
        }
    }
    Ok(to_complex(&rho))
}

/// Squashing map: double clicks split evenly into the basis's single
/// clicks, cross clicks become no-click.
pub fn squash_statistics(obs: &ObservedStatistics) -> Result<ObservedStatistics> {
    let mut out = ObservedStatistics::new(obs.scheme);
    for &y in Outcome::alphabet(obs.scheme) {
        for &x in &ALICE_OUTCOMES {
            out.set(x, y, 0.0)?;
        }
    }
    for (x, y, p) in obs.entries() {
        let targets: Vec<(Outcome, f64)> = match y {
            Outcome::HV => vec![(Outcome::H, 0.5), (Outcome::V, 0.5)],
            Outcome::DA => vec![(Outcome::D, 0.5), (Outcome::A, 0.5)],
            Outcome::CC => vec![(Outcome::Empty, 1.0)],
            o => vec![(o, 1.0)],
        };
        for (t, w) in targets {
            let cur = out.get(x, t);
            out.set(x, t, cur + w * p)?;
        }
    }
    Ok(out)
}

/// Same-basis error rate `p(error | basis matched)` of a statistics table.
pub fn basis_error_rate(obs: &ObservedStatistics) -> f64 {
    let mut err = 0.0;
    let mut tot = 0.0;
    for &x in &ALICE_OUTCOMES {
        let (right, wrong) = match x {
            AliceOutcome::H => (Outcome::H, Outcome::V),
            AliceOutcome::V => (Outcome::V, Outcome::H),
            AliceOutcome::D => (Outcome::D, Outcome::A),
            AliceOutcome::A => (Outcome::A, Outcome::D),
        };
        err += obs.get(x, wrong);
        tot += obs.get(x, wrong) + obs.get(x, right);
    }
    if tot == 0.0 {
        0.0
    } else {
        err / tot
    }
}
