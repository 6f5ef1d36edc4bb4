//! Acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Criteria that cannot be met are reported as FAIL with the measured
//! numbers; the process only exits non-zero when a criterion that is known
//! to hold regresses.

use std::sync::Arc;
use std::time::Instant;

use evmix::config::ExperimentSpec;
use evmix::experiment::{eta_min_point, run_experiment, RunOptions, REVALIDATION_STEP};
use evmix_core::channel::{simulate_statistics, ChannelParams, Resend};
use evmix_core::detectors::{DetectorModel, Scheme};
use evmix_core::evm::{compile, joint_product, ObservedStatistics, TailBounds, PROVENANCES};
use evmix_core::fockspace::{FockSpace, PolBasis};
use evmix_core::idealops::{build_dictionary, DictionaryOptions, OperatorDictionary};
use evmix_core::linalg::{ckron, herm_min_eigenvalue, max_abs, CMat, C64};
use evmix_core::photon_bounds::{min_witness_over_grade, WitnessKind};
use evmix_core::povm::{build_povm, loss_adjoint, verify_povm_relations, PovmSet, ACTIVE_OUTCOMES, PASSIVE_OUTCOMES};
use evmix_core::sdp::SdpOptions;
use evmix_core::verifier::{
    pipeline_dictionary, pipeline_tails, verify_with, EtaMin, EtaScan, InteriorPoint, PipelineOptions, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Criteria expected to pass; a FAIL on any of them is a regression.
const EXPECTED_GREEN: [u8; 5] = [2, 3, 7, 8, 9];

fn main() {
    let criteria: [(u8, &str, fn() -> Outcome); 9] = [
        (1, "constraint ledger", constraint_ledger),
        (2, "POVM property suite", povm_suite),
        (3, "renormalization equivalence", renormalization),
        (4, "photon-bound behavior", photon_bounds),
        (5, "omega < 1/2 threshold", half_threshold),
        (6, "squashing coincidence and advantage", squash_comparison),
        (7, "ideal-operator benefit", ideal_benefit),
        (8, "soundness suite", soundness),
        (9, "threshold-curve substitutes", curve_substitutes),
    ];
    let mut regressions = Vec::new();
    for (id, name, run) in criteria {
        let t0 = Instant::now();
        let o = run();
        let secs = t0.elapsed().as_secs_f64();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} [{tag}] {name} ({secs:.1} s): {}", o.detail);
        if !o.pass && EXPECTED_GREEN.contains(&id) {
            regressions.push(id);
        }
    }
    if !regressions.is_empty() {
        eprintln!("regressed criteria: {regressions:?}");
        std::process::exit(1);
    }
}

fn opts() -> PipelineOptions {
    PipelineOptions::default()
}

fn vacuum_stats(model: &DetectorModel) -> ObservedStatistics {
    let sp = FockSpace::shared(model.spatial_modes(), PolBasis::HV, 1).unwrap();
    let db = sp.dim();
    let mut rho = CMat::zeros(2 * db, 2 * db);
    rho[(0, 0)] = C64::new(0.5, 0.0);
    rho[(db, db)] = C64::new(0.5, 0.0);
    ObservedStatistics::from_state(&rho, &build_povm(model, sp).unwrap()).unwrap()
}

fn constraint_ledger() -> Outcome {
    const WANT: [usize; 8] = [16, 12, 188, 72, 34, 320, 108, 16];
    let t0 = Instant::now();
    let model = DetectorModel::new(Scheme::Active, vec![vec![0.73, 0.41]]).unwrap();
    let dict = Arc::new(build_dictionary(&model, DictionaryOptions::default()).unwrap());
    let tails = TailBounds { grade: 3, clicks: 0.1, error: Some(0.05) };
    let problem = compile(dict.clone(), &vacuum_stats(&model), Some(&tails)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let got: Vec<usize> = problem.counts().into_iter().map(|(_, n)| n).collect();
    let diff: Vec<String> = PROVENANCES
        .iter()
        .zip(got.iter().zip(WANT))
        .filter(|(_, (g, w))| **g != *w)
        .map(|(p, (g, w))| format!("{} {g} vs {w}", p.tag()))
        .collect();
    let pass = got == WANT && problem.dim() == 36 && secs < 1.0;
    let note = if diff.is_empty() { String::new() } else { format!("; mismatch: {}", diff.join(", ")) };
    outcome(pass, format!("EVM {0}x{0}, groups {got:?} in {secs:.3} s{note}", problem.dim()))
}

fn random_model(rng: &mut ChaCha8Rng) -> DetectorModel {
    let scheme = if rng.gen_bool(0.5) { Scheme::Active } else { Scheme::Passive };
    let spatial = [1, 2, 4][rng.gen_range(0..3)];
    let rows = (0..spatial).map(|_| (0..scheme.detector_count()).map(|_| rng.gen::<f64>()).collect()).collect();
    DetectorModel::new(scheme, rows).unwrap()
}

fn povm_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_complete: f64 = 0.0;
    let mut worst_psd: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut non_block = 0;
    for _ in 0..50 {
        let model = random_model(&mut rng);
        let space = FockSpace::shared(model.spatial_modes(), PolBasis::HV, 3).unwrap();
        let povm = build_povm(&model, space.clone()).unwrap();
        let d = space.dim();
        let groups: Vec<&[_]> = match model.scheme() {
            Scheme::Active => vec![&ACTIVE_OUTCOMES[..4], &ACTIVE_OUTCOMES[4..]],
            Scheme::Passive => vec![&PASSIVE_OUTCOMES[..]],
        };
        for g in groups {
            let mut sum = CMat::zeros(d, d);
            for &o in g {
                sum += povm.element(o).unwrap().matrix();
            }
            worst_complete = worst_complete.max(max_abs(&(sum - CMat::identity(d, d))));
        }
        for (_, m) in povm.elements() {
            worst_psd = worst_psd.min(herm_min_eigenvalue(m.matrix()));
            non_block += !m.is_block_diagonal() as usize;
        }
        worst_rel = worst_rel.min(verify_povm_relations(&povm).worst());
    }
    let pass = worst_complete < 1e-10 && worst_psd > -1e-10 && worst_rel > -1e-10 && non_block == 0;
    outcome(
        pass,
        format!(
            "50 models: completeness {worst_complete:.1e}, min eigenvalue {worst_psd:.1e}, worst ordering {worst_rel:.1e}, non-block-diagonal {non_block}"
        ),
    )
}

fn renormalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let model = random_model(&mut rng);
        let eta0 = rng.gen_range(0.05..1.0);
        let space = FockSpace::shared(model.spatial_modes(), PolBasis::HV, 3).unwrap();
        let scaled = build_povm(&model.scaled(eta0).unwrap(), space.clone()).unwrap();
        for (o, m) in build_povm(&model, space).unwrap().elements() {
            let pulled = loss_adjoint(m, eta0).unwrap();
            worst = worst.max(max_abs(&(pulled.matrix() - scaled.element(*o).unwrap().matrix())));
        }
    }
    outcome(worst < 1e-10, format!("20 draws, largest entry difference {worst:.1e}"))
}

fn photon_bounds() -> Outcome {
    const N: usize = 6;
    const PLATEAU_N: usize = 10;
    let sdp = SdpOptions::default();
    let etas = [0.2, 0.5, 1.0];
    let mut tables: Vec<(WitnessKind, Vec<Vec<f64>>)> = Vec::new();
    for kind in [WitnessKind::DoubleClick, WitnessKind::EffectiveError, WitnessKind::CrossClick] {
        let rows = etas
            .iter()
            .map(|&eta| {
                let (model, n_max) = match kind {
                    WitnessKind::CrossClick => (DetectorModel::table_ii(eta).unwrap(), PLATEAU_N),
                    _ => (DetectorModel::table_i(eta).unwrap(), N),
                };
                (0..=n_max).map(|n| min_witness_over_grade(kind, n, &model, &sdp).unwrap().value).collect()
            })
            .collect();
        tables.push((kind, rows));
    }
    let mut problems = Vec::new();
    for (kind, rows) in &tables {
        for (eta, row) in etas.iter().zip(rows) {
            if row[..=N].windows(2).any(|w| w[1] < w[0] - 1e-7) {
                problems.push(format!("{} not monotone at eta={eta}", kind.name()));
            }
        }
        for n in 2..=N {
            if rows.windows(2).any(|w| w[0][n] > w[1][n] + 1e-7) {
                problems.push(format!("{} grows as eta drops at n={n}", kind.name()));
            }
        }
    }
    let get = |k: WitnessKind| &tables.iter().find(|t| t.0 == k).unwrap().1;
    let (dc, ee, cc) = (get(WitnessKind::DoubleClick), get(WitnessKind::EffectiveError), get(WitnessKind::CrossClick));
    let zeros_exact = (0..3).all(|e| dc[e][0] == 0.0 && dc[e][1] == 0.0 && ee[e][0] == 0.0 && cc[e][0] == 0.0 && cc[e][1] == 0.0);
    if !zeros_exact {
        problems.push("low-grade values not exactly zero".into());
    }
    let plateau: Vec<String> = etas
        .iter()
        .zip(cc)
        .map(|(eta, row)| match row.iter().position(|&c| c > 0.99) {
            Some(n) => format!("eta={eta}: c_{n}={:.4}", row[n]),
            None => format!("eta={eta}: c_{PLATEAU_N}={:.4} still below 0.99", row[PLATEAU_N]),
        })
        .collect();
    let plateau_ok = cc.iter().all(|row| row.iter().any(|&c| c > 0.99));
    let pass = problems.is_empty() && plateau_ok;
    let checks = if problems.is_empty() {
        "monotone in n, exact zeros, ordered in eta".to_string()
    } else {
        problems.join("; ")
    };
    outcome(
        pass,
        format!(
            "{checks}; d_6={:.4}/{:.4}/{:.4}, e_6={:.4}/{:.4}/{:.4} (eta 0.2/0.5/1); plateau {}",
            dc[0][N],
            dc[1][N],
            dc[2][N],
            ee[0][N],
            ee[1][N],
            ee[2][N],
            plateau.join(", ")
        ),
    )
}

fn verdict(model: &DetectorModel, omega: f64, loss: f64) -> (Verdict, f64) {
    let o = opts();
    let dict = Arc::new(pipeline_dictionary(model, &o).unwrap());
    let tails = pipeline_tails(&dict, &o).unwrap();
    let obs = simulate_statistics(&ChannelParams::new(omega, loss, 0.0, Resend::Infinite).unwrap(), model).unwrap();
    let v = verify_with(dict, &obs, tails.as_ref(), &InteriorPoint, &o).unwrap();
    (v.verdict, v.margin)
}

fn half_threshold() -> Outcome {
    let mut summary = Vec::new();
    let mut all = true;
    let families: [(&str, fn(f64) -> DetectorModel); 4] = [
        ("active one-mode", |e| DetectorModel::new(Scheme::Active, vec![vec![1.0, e]]).unwrap()),
        ("passive one-mode", |e| DetectorModel::new(Scheme::Passive, vec![vec![1.0, e, 1.0, e]]).unwrap()),
        ("active two-mode", |e| DetectorModel::table_i(e).unwrap()),
        ("passive four-mode", |e| DetectorModel::table_ii(e).unwrap()),
    ];
    for (name, family) in families {
        let mut ok = 0;
        let mut misses = Vec::new();
        for eta in [1.0, 0.5] {
            for r in [0.0, 0.95] {
                let m = family(eta);
                let below = verdict(&m, 0.49, r);
                let above = verdict(&m, 0.51, r);
                if below.0 == Verdict::Entangled && above.0 == Verdict::NotVerified {
                    ok += 1;
                } else {
                    misses.push(format!("eta={eta},r={r}: {}/{}", below.0.name(), above.0.name()));
                }
            }
        }
        all &= ok == 4;
        let miss = if misses.is_empty() { String::new() } else { format!(" [{}]", misses.join("; ")) };
        summary.push(format!("{name} {ok}/4{miss}"));
    }
    outcome(all, summary.join(", "))
}

struct GridCell {
    ours: bool,
    squashed: bool,
    povm_only: bool,
}

fn grid(scheme: &str) -> Vec<GridCell> {
    let text = format!(
        "kind = \"squash-compare\"\nomega = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45]\n\
         p = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45]\nn_resend = \"2\"\ncompare_povm_only = true\n\
         [model]\nscheme = \"{scheme}\"\nspatial_modes = 1\neta = 1.0\n"
    );
    let spec = ExperimentSpec::parse(&text, None).unwrap();
    let run = RunOptions { pipeline: opts(), backend: &InteriorPoint };
    let out = run_experiment(&spec, &run).unwrap();
    let body: String = out.csv.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let hdr = rd.headers().unwrap().clone();
    let col = |name: &str| hdr.iter().position(|h| h == name).unwrap();
    let (o, s, q) = (col("ours"), col("squashed"), col("povm_only"));
    rd.records()
        .map(|r| {
            let r = r.unwrap();
            let yes = |i: usize| &r[i] == "ENTANGLED";
            GridCell { ours: yes(o), squashed: yes(s), povm_only: yes(q) }
        })
        .collect()
}

thread_local! {
    static GRIDS: std::cell::RefCell<Option<(Vec<GridCell>, Vec<GridCell>)>> = const { std::cell::RefCell::new(None) };
}

fn with_grids<T>(f: impl FnOnce(&[GridCell], &[GridCell]) -> T) -> T {
    GRIDS.with(|g| {
        let mut g = g.borrow_mut();
        let (a, p) = g.get_or_insert_with(|| (grid("active"), grid("passive")));
        f(a, p)
    })
}

fn squash_comparison() -> Outcome {
    with_grids(|active, passive| {
        let count = |g: &[GridCell], f: fn(&GridCell) -> bool| g.iter().filter(|c| f(c)).count();
        let disagree = active.iter().filter(|c| c.ours != c.squashed).count();
        let only_ours = count(passive, |c| c.ours && !c.squashed);
        let only_squash = count(passive, |c| c.squashed && !c.ours);
        let pass = disagree == 0 && only_squash == 0 && only_ours >= 1;
        outcome(
            pass,
            format!(
                "active: {} ours vs {} squashed, {disagree} disagreements; passive: {} ours vs {} squashed, {only_ours} only ours, {only_squash} only squashed",
                count(active, |c| c.ours),
                count(active, |c| c.squashed),
                count(passive, |c| c.ours),
                count(passive, |c| c.squashed)
            ),
        )
    })
}

fn ideal_benefit() -> Outcome {
    with_grids(|active, passive| {
        let mut parts = Vec::new();
        let mut pass = true;
        for (name, g) in [("active", active), ("passive", passive)] {
            let lost = g.iter().filter(|c| c.povm_only && !c.ours).count();
            let gained = g.iter().filter(|c| c.ours && !c.povm_only).count();
            pass &= lost == 0;
            parts.push((name, gained, lost, g.iter().filter(|c| c.ours).count(), g.iter().filter(|c| c.povm_only).count()));
        }
        pass &= parts.iter().any(|p| p.1 >= 1);
        let text: Vec<String> =
            parts.iter().map(|(n, g, l, a, b)| format!("{n}: {a} with ideal operators vs {b} without, +{g}/-{l}")).collect();
        outcome(pass, text.join("; "))
    })
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> CMat {
    let g = CMat::from_fn(d, d, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    m / C64::new(tr, 0.0)
}

fn random_bob(rng: &mut ChaCha8Rng, space: &FockSpace) -> CMat {
    let d = space.dim();
    let mut rho = CMat::zeros(d, d);
    let mut weights: Vec<f64> = (0..=space.cutoff()).map(|_| rng.gen::<f64>().powi(2)).collect();
    if rng.gen_bool(0.3) {
        let g = rng.gen_range(0..weights.len());
        weights.iter_mut().enumerate().for_each(|(i, w)| if i != g { *w *= 0.01 });
    }
    let total: f64 = weights.iter().sum();
    for (n, w) in weights.iter().enumerate() {
        let r = space.grade_range(n);
        let block = random_psd(rng, r.len()) * C64::new(w / total, 0.0);
        rho.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&block);
    }
    rho
}

/// Separable state with Alice's marginal forced to `I/2` by a local filter.
fn random_separable(rng: &mut ChaCha8Rng, space: &FockSpace) -> CMat {
    let db = space.dim();
    let terms = rng.gen_range(1..=3);
    let probs: Vec<f64> = (0..terms).map(|_| rng.gen::<f64>() + 0.05).collect();
    let total: f64 = probs.iter().sum();
    let mut rho = CMat::zeros(2 * db, 2 * db);
    for p in probs {
        let alice = random_psd(rng, 2);
        rho += joint_product(&alice, &random_bob(rng, space)) * C64::new(p / total, 0.0);
    }
    let mut rho_a = CMat::zeros(2, 2);
    for i in 0..2 {
        for k in 0..2 {
            rho_a[(i, k)] = (0..db).map(|b| rho[(i * db + b, k * db + b)]).sum();
        }
    }
    let eig = (rho_a * C64::new(2.0, 0.0)).symmetric_eigen();
    let inv_sqrt = eig.eigenvalues.map(|l| C64::new(1.0 / l.sqrt(), 0.0));
    let f = &eig.eigenvectors * CMat::from_diagonal(&inv_sqrt) * eig.eigenvectors.adjoint();
    let lift = ckron(&f, &CMat::identity(db, db));
    &lift * rho * lift.adjoint()
}

fn soundness() -> Outcome {
    struct Case {
        povm: PovmSet,
        space: Arc<FockSpace>,
        dict: Arc<OperatorDictionary>,
        tails: Option<TailBounds>,
    }
    let o = opts();
    let models = [
        DetectorModel::new(Scheme::Active, vec![vec![1.0, 0.5]]).unwrap(),
        DetectorModel::uniform(Scheme::Active, 1, 1.0).unwrap(),
        DetectorModel::table_i(0.5).unwrap(),
        DetectorModel::new(Scheme::Passive, vec![vec![1.0, 0.5, 1.0, 0.5]]).unwrap(),
        DetectorModel::uniform(Scheme::Passive, 1, 1.0).unwrap(),
    ];
    let cases: Vec<Case> = models
        .into_iter()
        .map(|m| {
            let space = FockSpace::shared(m.spatial_modes(), PolBasis::HV, 3).unwrap();
            let povm = build_povm(&m, space.clone()).unwrap();
            let dict = Arc::new(pipeline_dictionary(&m, &o).unwrap());
            let tails = pipeline_tails(&dict, &o).unwrap();
            Case { povm, space, dict, tails }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut entangled = 0;
    let mut inconclusive = 0;
    let mut closest = f64::INFINITY;
    for k in 0..200 {
        let c = &cases[k % cases.len()];
        let rho = random_separable(&mut rng, &c.space);
        let obs = ObservedStatistics::from_state(&rho, &c.povm).unwrap();
        let v = verify_with(c.dict.clone(), &obs, c.tails.as_ref(), &InteriorPoint, &o).unwrap();
        entangled += (v.verdict == Verdict::Entangled) as usize;
        inconclusive += (v.verdict == Verdict::Inconclusive) as usize;
        closest = closest.min(v.margin);
    }
    outcome(
        entangled == 0,
        format!("200 separable states: {entangled} ENTANGLED, {inconclusive} INCONCLUSIVE, smallest margin {closest:.2e}"),
    )
}

fn curve_substitutes() -> Outcome {
    // Monotonicity: the margin never decreases as noise grows.
    let mut mono = true;
    let mut flips = Vec::new();
    for model in [
        DetectorModel::new(Scheme::Active, vec![vec![1.0, 0.5]]).unwrap(),
        DetectorModel::new(Scheme::Passive, vec![vec![1.0, 0.5, 1.0, 0.5]]).unwrap(),
    ] {
        let o = opts();
        let dict = Arc::new(pipeline_dictionary(&model, &o).unwrap());
        let tails = pipeline_tails(&dict, &o).unwrap();
        let mut last = f64::NEG_INFINITY;
        let mut flip = None;
        for k in 0..=12 {
            let w = 0.05 * k as f64;
            let obs = simulate_statistics(&ChannelParams::new(w, 0.3, 0.02, Resend::Infinite).unwrap(), &model).unwrap();
            let v = verify_with(dict.clone(), &obs, tails.as_ref(), &InteriorPoint, &o).unwrap();
            mono &= v.margin >= last - 1e-6;
            last = v.margin;
            if v.verdict != Verdict::Entangled && flip.is_none() {
                flip = Some(w);
            }
        }
        flips.push(format!("{} first unverified at omega={:?}", model.scheme().name(), flip));
    }
    // Containment: ideal operators never lose a verified point.
    let contained = with_grids(|a, p| a.iter().chain(p).all(|c| !c.povm_only || c.ours));
    // Bracketing: eta_min re-checked on both sides.
    let run = RunOptions { pipeline: opts(), backend: &InteriorPoint };
    let params = ChannelParams::new(0.05, 0.0, 0.01, Resend::Infinite).unwrap();
    let row = eta_min_point(|e| Ok(DetectorModel::table_i(e)?), &params, &EtaScan::default(), &run);
    let (bracket, eta_text) = match (&row.result, row.revalidated) {
        (Ok(EtaMin::Value { eta, .. }), Some(ok)) => (ok, format!("eta_min={eta:.4} re-checked at +-{REVALIDATION_STEP}: {ok}")),
        (r, _) => (false, format!("eta_min search gave {r:?}")),
    };
    outcome(
        mono && contained && bracket,
        format!("margin monotone in omega: {mono} ({}); containment: {contained}; {eta_text}", flips.join(", ")),
    )
}
