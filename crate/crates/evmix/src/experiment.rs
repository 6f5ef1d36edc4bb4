//! Batch experiments: bounds tables, efficiency curves and verdict grids.
//!
//! Grid points run in parallel on the current rayon pool and are merged in
//! grid order, so output files are identical across thread counts.

use std::sync::Arc;

use evmix_core::channel::{simulate_statistics, squash_statistics, ChannelParams};
use evmix_core::detectors::{DetectorModel, Scheme};
use evmix_core::evm::{ObservedStatistics, TailBounds};
use evmix_core::idealops::{DictionaryOptions, OperatorDictionary};
use evmix_core::photon_bounds::{PhotonBoundTable, WitnessKind};
use evmix_core::verifier::{
    find_eta_min, pipeline_dictionary, pipeline_tails, verify_squashed, verify_with, EtaMin, EtaScan,
    FeasibilityVerdict, PipelineOptions, SolverBackend, Verdict,
};
use rayon::prelude::*;

use crate::config::{ExperimentKind, ExperimentSpec, ModelConfig};
use crate::error::AppError;
use crate::io::{model_string, write_bounds, Metadata};

/// Offset used to re-check every emitted `eta_min`.
pub const REVALIDATION_STEP: f64 = 2e-3;

pub struct RunOptions<'a> {
    pub pipeline: PipelineOptions,
    pub backend: &'a dyn SolverBackend,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub csv: String,
    pub inconclusive: usize,
}

/// Dictionary and tail bounds for one model, reused across grid points.
pub struct Prepared {
    pub dict: Arc<OperatorDictionary>,
    pub tails: Option<TailBounds>,
}

impl Prepared {
    pub fn new(model: &DetectorModel, opts: &PipelineOptions) -> Result<Self, AppError> {
        let dict = Arc::new(pipeline_dictionary(model, opts)?);
        let tails = pipeline_tails(&dict, opts)?;
        Ok(Prepared { dict, tails })
    }

    pub fn verify(&self, obs: &ObservedStatistics, run: &RunOptions<'_>) -> Result<FeasibilityVerdict, AppError> {
        Ok(verify_with(self.dict.clone(), obs, self.tails.as_ref(), run.backend, &run.pipeline)?)
    }
}

/// Simulate and verify one channel point.
pub fn verdict_at(model: &DetectorModel, params: &ChannelParams, run: &RunOptions<'_>) -> Result<FeasibilityVerdict, AppError> {
    let obs = simulate_statistics(params, model)?;
    Prepared::new(model, &run.pipeline)?.verify(&obs, run)
}

pub fn run_experiment(spec: &ExperimentSpec, run: &RunOptions<'_>) -> Result<ExperimentOutput, AppError> {
    let cfg = spec.model_config()?;
    let mut run_opts = RunOptions { pipeline: run.pipeline.clone(), backend: run.backend };
    run_opts.pipeline.dictionary = DictionaryOptions { ideal: spec.ideal_operators };
    run_opts.pipeline.tails = spec.tails;
    let meta = Metadata::new()
        .with("kind", spec.kind.name())
        .with("model", cfg.label())
        .with("scheme", &cfg.scheme)
        .with("spatial_modes", cfg.spatial_modes)
        .with("omega", grid(&spec.omega))
        .with("p", grid(&spec.p))
        .with("r", grid(&spec.r))
        .with("eta", grid(&spec.eta))
        .with("n_resend", &spec.n_resend)
        .with("ideal_operators", spec.ideal_operators)
        .with("tails", spec.tails)
        .with("backend", run.backend.name());
    match spec.kind {
        ExperimentKind::BoundsTable => bounds_table(spec, &cfg, &run_opts, meta),
        ExperimentKind::EtaMinCurve => eta_min_curve(spec, &cfg, &run_opts, meta),
        ExperimentKind::TradeoffCurve => tradeoff_curve(spec, &cfg, &run_opts, meta),
        ExperimentKind::SquashCompare => squash_compare(spec, &cfg, &run_opts, meta),
        ExperimentKind::VerifySingle => verify_single(spec, &cfg, &run_opts, meta),
    }
}

fn grid(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" "))
}

fn finish(meta: Metadata, header: &[&str], rows: Vec<Vec<String>>, inconclusive: usize) -> Result<ExperimentOutput, AppError> {
    let mut buf = Vec::new();
    meta.write(&mut buf)?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(ExperimentOutput { csv: String::from_utf8(buf).expect("csv is utf-8"), inconclusive })
}

fn bounds_table(spec: &ExperimentSpec, cfg: &ModelConfig, run: &RunOptions<'_>, meta: Metadata) -> Result<ExperimentOutput, AppError> {
    let scheme = cfg.scheme()?;
    let jobs: Vec<(f64, WitnessKind)> =
        spec.eta.iter().flat_map(|&e| WitnessKind::for_scheme(scheme).iter().map(move |&k| (e, k))).collect();
    let tables: Vec<PhotonBoundTable> = jobs
        .par_iter()
        .map(|&(eta, kind)| {
            let model = cfg.model_at(eta)?;
            Ok(PhotonBoundTable::build(kind, &model, &format!("eta={eta}"), spec.n_max, &run.pipeline.verify.sdp)?)
        })
        .collect::<Result<_, AppError>>()?;
    let mut buf = Vec::new();
    write_bounds(&tables, &meta.with("n_max", spec.n_max), &mut buf)?;
    let failed = tables.iter().flat_map(|t| &t.rows).filter(|r| r.bound.status.name() == "failed").count();
    Ok(ExperimentOutput { csv: String::from_utf8(buf).expect("csv is utf-8"), inconclusive: failed })
}

/// One bisection result plus its re-validation.
#[derive(Clone, Debug)]
pub struct CurveRow {
    pub result: Result<EtaMin, String>,
    pub margin: Option<f64>,
    pub revalidated: Option<bool>,
}

/// `eta_min` of a one-parameter family at fixed channel parameters.
pub fn eta_min_point<F>(family: F, params: &ChannelParams, scan: &EtaScan, run: &RunOptions<'_>) -> CurveRow
where
    F: Fn(f64) -> Result<DetectorModel, AppError>,
{
    let eval = |eta: f64| -> Result<FeasibilityVerdict, AppError> { verdict_at(&family(eta)?, params, run) };
    let res = find_eta_min(scan, |eta| {
        let v = eval(eta).map_err(|e| evmix_core::Error::Numerical(e.to_string()))?;
        match v.verdict {
            Verdict::Inconclusive => {
                Err(evmix_core::Error::Numerical(format!("INCONCLUSIVE at eta={eta}: {}", v.message)))
            }
            verdict => Ok(verdict == Verdict::Entangled),
        }
    });
    match res {
        Err(e) => CurveRow { result: Err(e.to_string()), margin: None, revalidated: None },
        Ok(r) => {
            let (margin, revalidated) = match r {
                EtaMin::Value { eta, .. } => {
                    let margin = eval(eta).ok().map(|v| v.margin);
                    let above = (eta + REVALIDATION_STEP).min(scan.hi);
                    let below = eta - REVALIDATION_STEP;
                    let ok_above = eval(above).map(|v| v.verdict == Verdict::Entangled).unwrap_or(false);
                    let ok_below = below < scan.lo
                        || eval(below).map(|v| v.verdict != Verdict::Entangled).unwrap_or(false);
                    (margin, Some(ok_above && ok_below))
                }
                EtaMin::Below(lo) => (eval(lo).ok().map(|v| v.margin), None),
                EtaMin::NotVerifiable => (None, None),
            };
            CurveRow { result: Ok(r), margin, revalidated }
        }
    }
}

fn curve_cells(row: &CurveRow) -> (Vec<String>, bool) {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into());
    let fe = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "nan".into());
    match &row.result {
        Ok(EtaMin::Value { eta, lower, upper }) => (
            vec![
                f(Some(*eta)),
                f(Some(*lower)),
                f(Some(*upper)),
                fe(row.margin),
                row.revalidated.map(|b| b.to_string()).unwrap_or_else(|| "n/a".into()),
                "ok".into(),
            ],
            false,
        ),
        Ok(EtaMin::Below(lo)) => {
            (vec![f(Some(*lo)), "nan".into(), f(Some(*lo)), fe(row.margin), "n/a".into(), "below-range".into()], false)
        }
        Ok(EtaMin::NotVerifiable) => {
            (vec!["nan".into(), "nan".into(), "nan".into(), "nan".into(), "n/a".into(), "not-verifiable".into()], false)
        }
        Err(e) => {
            let inconclusive = e.contains("INCONCLUSIVE");
            let status = if inconclusive { "inconclusive" } else { "error" };
            (vec!["nan".into(), "nan".into(), "nan".into(), "nan".into(), "n/a".into(), format!("{status}: {e}")], true)
        }
    }
}

const CURVE_TAIL: [&str; 6] = ["eta_min", "lower", "upper", "margin", "revalidated", "status"];

fn eta_min_curve(spec: &ExperimentSpec, cfg: &ModelConfig, run: &RunOptions<'_>, meta: Metadata) -> Result<ExperimentOutput, AppError> {
    let resend = spec.resend()?;
    let scan = EtaScan { lo: spec.eta_range[0], hi: spec.eta_range[1], tol: spec.eta_tol, ..EtaScan::default() };
    let mut points = Vec::new();
    for &r in &spec.r {
        for &p in &spec.p {
            for &w in &spec.omega {
                points.push((r, p, w));
            }
        }
    }
    let rows: Vec<(Vec<String>, bool)> = points
        .par_iter()
        .map(|&(r, p, w)| {
            let params = ChannelParams::new(w, r, p, resend)?;
            let row = eta_min_point(|eta| cfg.model_at(eta), &params, &scan, run);
            let (cells, bad) = curve_cells(&row);
            let mut out = vec![format!("{r}"), format!("{p}"), format!("{w}")];
            out.extend(cells);
            Ok((out, bad))
        })
        .collect::<Result<_, AppError>>()?;
    let bad = rows.iter().filter(|r| r.1).count();
    let mut header = vec!["r", "p", "omega"];
    header.extend(CURVE_TAIL);
    finish(meta.with("eta_range", grid(&spec.eta_range)).with("eta_tol", spec.eta_tol), &header, rows.into_iter().map(|r| r.0).collect(), bad)
}

fn tradeoff_curve(spec: &ExperimentSpec, cfg: &ModelConfig, run: &RunOptions<'_>, meta: Metadata) -> Result<ExperimentOutput, AppError> {
    if cfg.scheme()? != Scheme::Passive || cfg.spatial_modes != 1 {
        return Err(AppError::Config("tradeoff-curve is defined for the passive scheme with one spatial mode".into()));
    }
    let [eta_h, eta_d] = spec.fixed.expect("validated");
    let resend = spec.resend()?;
    let scan = EtaScan { lo: spec.eta_range[0], hi: spec.eta_range[1], tol: spec.eta_tol, ..EtaScan::default() };
    let mut points = Vec::new();
    for &r in &spec.r {
        for &p in &spec.p {
            for &w in &spec.omega {
                for &ev in &spec.eta {
                    points.push((r, p, w, ev));
                }
            }
        }
    }
    let rows: Vec<(Vec<String>, bool)> = points
        .par_iter()
        .map(|&(r, p, w, ev)| {
            let params = ChannelParams::new(w, r, p, resend)?;
            let family = |ea: f64| Ok(DetectorModel::new(Scheme::Passive, vec![vec![eta_h, ev, eta_d, ea]])?);
            let row = eta_min_point(family, &params, &scan, run);
            let (cells, bad) = curve_cells(&row);
            let mut out = vec![format!("{r}"), format!("{p}"), format!("{w}"), format!("{ev}")];
            out.extend(cells);
            Ok((out, bad))
        })
        .collect::<Result<_, AppError>>()?;
    let bad = rows.iter().filter(|r| r.1).count();
    let mut header = vec!["r", "p", "omega", "eta_v"];
    header.extend(CURVE_TAIL);
    let meta = meta.with("fixed_eta_h", eta_h).with("fixed_eta_d", eta_d).with("eta_range", grid(&spec.eta_range));
    finish(meta, &header, rows.into_iter().map(|r| r.0).collect(), bad)
}

fn verdict_cells(v: &FeasibilityVerdict) -> [String; 2] {
    [v.verdict.name().to_string(), format!("{:.6e}", v.margin)]
}

fn squash_compare(spec: &ExperimentSpec, cfg: &ModelConfig, run: &RunOptions<'_>, meta: Metadata) -> Result<ExperimentOutput, AppError> {
    let model = match (&cfg.eta, &cfg.efficiencies) {
        (None, None) => cfg.model_at(1.0)?,
        _ => cfg.model()?,
    };
    if !model.is_mismatch_free() {
        return Err(AppError::Config("the squashing baseline needs a mismatch-free model".into()));
    }
    let resend = spec.resend()?;
    let full = Prepared::new(&model, &run.pipeline)?;
    let povm_only = if spec.compare_povm_only {
        let mut o = run.pipeline.clone();
        o.dictionary = DictionaryOptions { ideal: false };
        Some((Prepared::new(&model, &o)?, o))
    } else {
        None
    };
    let loss = spec.r.first().copied().unwrap_or(0.0);
    let mut points = Vec::new();
    for &p in &spec.p {
        for &w in &spec.omega {
            points.push((p, w));
        }
    }
    let rows: Vec<(Vec<String>, usize)> = points
        .par_iter()
        .map(|&(p, w)| {
            let obs = simulate_statistics(&ChannelParams::new(w, loss, p, resend)?, &model)?;
            let ours = full.verify(&obs, run)?;
            let sq = verify_squashed(&squash_statistics(&obs)?, run.backend, &run.pipeline.verify)?;
            let mut cells = vec![format!("{w}"), format!("{p}")];
            cells.extend(verdict_cells(&ours));
            cells.extend(verdict_cells(&sq));
            let mut bad = [&ours, &sq].iter().filter(|v| v.verdict == Verdict::Inconclusive).count();
            if let Some((prep, o)) = &povm_only {
                let v = verify_with(prep.dict.clone(), &obs, prep.tails.as_ref(), run.backend, o)?;
                bad += (v.verdict == Verdict::Inconclusive) as usize;
                cells.extend(verdict_cells(&v));
            }
            Ok((cells, bad))
        })
        .collect::<Result<_, AppError>>()?;
    let bad = rows.iter().map(|r| r.1).sum();
    let mut header = vec!["omega", "p", "ours", "ours_margin", "squashed", "squashed_margin"];
    if povm_only.is_some() {
        header.extend(["povm_only", "povm_only_margin"]);
    }
    finish(meta.with("model_matrix", model_string(&model)).with("loss", loss), &header, rows.into_iter().map(|r| r.0).collect(), bad)
}

fn verify_single(spec: &ExperimentSpec, cfg: &ModelConfig, run: &RunOptions<'_>, meta: Metadata) -> Result<ExperimentOutput, AppError> {
    let model = cfg.model()?;
    let resend = spec.resend()?;
    let prep = Prepared::new(&model, &run.pipeline)?;
    let mut points = Vec::new();
    for &r in &spec.r {
        for &p in &spec.p {
            for &w in &spec.omega {
                points.push((r, p, w));
            }
        }
    }
    let rows: Vec<(Vec<String>, bool)> = points
        .par_iter()
        .map(|&(r, p, w)| {
            let obs = simulate_statistics(&ChannelParams::new(w, r, p, resend)?, &model)?;
            let v = prep.verify(&obs, run)?;
            let cert = v.certificate_bound.map(|c| format!("{c:.6e}")).unwrap_or_else(|| "nan".into());
            let cells = vec![
                format!("{r}"),
                format!("{p}"),
                format!("{w}"),
                v.verdict.name().to_string(),
                format!("{:.6e}", v.margin),
                cert,
                format!("{:?}", v.status),
            ];
            Ok((cells, v.verdict == Verdict::Inconclusive))
        })
        .collect::<Result<_, AppError>>()?;
    let bad = rows.iter().filter(|r| r.1).count();
    let header = ["r", "p", "omega", "verdict", "margin", "certificate_bound", "status"];
    finish(meta.with("model_matrix", model_string(&model)), &header, rows.into_iter().map(|r| r.0).collect(), bad)
}
