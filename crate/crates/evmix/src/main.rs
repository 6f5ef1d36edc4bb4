use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use evmix::config::{read_model_config, ExperimentSpec};
use evmix::error::{AppError, EXIT_INCONCLUSIVE};
use evmix::experiment::{run_experiment, RunOptions};
use evmix::io::{emit_plot_data, model_string, read_statistics, write_bounds, write_statistics, Metadata};
use evmix::core::channel::{simulate_statistics, squash_statistics, ChannelParams, Resend};
use evmix::core::detectors::{DetectorModel, Scheme};
use evmix::core::evm::compile;
use evmix::core::fockspace::{FockSpace, PolBasis};
use evmix::core::idealops::DictionaryOptions;
use evmix::core::photon_bounds::{PhotonBoundTable, WitnessKind};
use evmix::core::povm::build_povm;
use evmix::core::verifier::{pipeline_dictionary, pipeline_tails, verify, verify_squashed, PipelineOptions, Verdict};

#[derive(Parser)]
#[command(name = "evmix", version, about = "Entanglement verification with mismatched threshold detectors")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Detector-model TOML file.
    #[arg(long, global = true)]
    model_file: Option<PathBuf>,
    /// Scheme of the default model when no model file is given.
    #[arg(long, global = true, default_value = "active")]
    scheme: String,
    /// Fock-space photon cutoff for operator dumps.
    #[arg(long, global = true, default_value_t = 3)]
    cutoff: usize,
    /// SDP optimality and feasibility tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Worker threads for grids (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// SDP backend.
    #[arg(long, global = true, env = "EVMIX_BACKEND")]
    backend: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact toy-channel statistics as CSV.
    Simulate {
        #[arg(long)]
        omega: f64,
        #[arg(long, default_value_t = 0.0)]
        loss: f64,
        #[arg(long, default_value_t = 0.0)]
        p_multi: f64,
        /// Resent photon number or "inf".
        #[arg(long, default_value = "inf")]
        n_resend: String,
        /// Apply the squashing map to the output.
        #[arg(long)]
        squash: bool,
    },
    /// Photon-number bound tables.
    Bounds {
        #[arg(long, default_value_t = 6)]
        n_max: usize,
        /// Witness kind (DC, EE, CC); all kinds of the scheme when absent.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Verdict for a statistics file.
    Verify {
        /// Statistics CSV (x, y, probability).
        stats: PathBuf,
        /// Use measurement operators only.
        #[arg(long)]
        no_ideal: bool,
        /// Skip photon-number tail rows.
        #[arg(long)]
        no_tails: bool,
        /// Keep efficiencies as given instead of renormalizing.
        #[arg(long)]
        no_renormalize: bool,
        /// Treat the file as squashed statistics and run the qutrit test.
        #[arg(long)]
        squashed: bool,
        /// Write the returned cone matrices here.
        #[arg(long)]
        witness: Option<PathBuf>,
        /// Write the compiled constraint listing here.
        #[arg(long)]
        dump_problem: Option<PathBuf>,
    },
    /// Run an experiment TOML file.
    Scan {
        spec: PathBuf,
        /// Emit gnuplot columns instead of CSV.
        #[arg(long)]
        plot: bool,
    },
    /// Our verdict against the squashing baseline on an (omega, p) grid.
    SquashCompare {
        #[arg(long, value_delimiter = ',', default_values_t = default_grid())]
        omega: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = default_grid())]
        p: Vec<f64>,
        #[arg(long, default_value = "2")]
        n_resend: String,
        /// Also run the measurement-operators-only dictionary.
        #[arg(long)]
        povm_only: bool,
    },
    /// POVM elements as plain-text matrices.
    PovmDump,
    /// Gnuplot columns from a CSV produced by this tool.
    PlotData { csv: PathBuf },
}

fn default_grid() -> Vec<f64> {
    (0..10).map(|k| k as f64 * 0.05).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("evmix: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn model(g: &Global) -> Result<DetectorModel, AppError> {
    match &g.model_file {
        Some(p) => read_model_config(p)?.model(),
        None => Ok(DetectorModel::uniform(Scheme::parse(&g.scheme)?, 1, 1.0)?),
    }
}

fn pipeline(g: &Global) -> PipelineOptions {
    let mut o = PipelineOptions::default();
    if let Some(t) = g.tolerance {
        o.verify.sdp.gap_tol = t;
        o.verify.sdp.feas_tol = t;
    }
    o
}

fn output(g: &Global) -> Result<Box<dyn Write>, AppError> {
    Ok(match &g.out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<i32, AppError> {
    let g = &cli.global;
    let backend = evmix::backend(g.backend.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads)
        .build()
        .map_err(|e| AppError::Config(e.to_string()))?;
    match &cli.command {
        Command::Simulate { omega, loss, p_multi, n_resend, squash } => {
            let m = model(g)?;
            let params = ChannelParams::new(*omega, *loss, *p_multi, Resend::parse(n_resend)?)?;
            let mut obs = simulate_statistics(&params, &m)?;
            if *squash {
                obs = squash_statistics(&obs)?;
            }
            let meta = Metadata::new()
                .with("model", model_string(&m))
                .with("omega", omega)
                .with("loss", loss)
                .with("p_multi", p_multi)
                .with("n_resend", n_resend)
                .with("squashed", squash);
            write_statistics(&obs, &meta, output(g)?)?;
            Ok(0)
        }
        Command::Bounds { n_max, kind } => {
            let m = model(g)?;
            let kinds: Vec<WitnessKind> = match kind {
                Some(k) => vec![WitnessKind::parse(k)?],
                None => WitnessKind::for_scheme(m.scheme()).to_vec(),
            };
            let opts = pipeline(g).verify.sdp;
            let id = model_string(&m);
            let tables = pool.install(|| {
                use rayon::prelude::*;
                kinds.par_iter().map(|&k| PhotonBoundTable::build(k, &m, &id, *n_max, &opts)).collect::<Result<Vec<_>, _>>()
            })?;
            write_bounds(&tables, &Metadata::new().with("model", &id).with("n_max", n_max), output(g)?)?;
            Ok(0)
        }
        Command::Verify { stats, no_ideal, no_tails, no_renormalize, squashed, witness, dump_problem } => {
            let m = model(g)?;
            let obs = read_statistics(File::open(stats)?, Some(m.scheme()))?;
            let mut opts = pipeline(g);
            opts.dictionary = DictionaryOptions { ideal: !no_ideal };
            opts.tails = !no_tails;
            opts.renormalize = !no_renormalize;
            let t0 = Instant::now();
            let v = if *squashed {
                verify_squashed(&obs, backend, &opts.verify)?
            } else {
                let dict = std::sync::Arc::new(pipeline_dictionary(&m, &opts)?);
                let tails = pipeline_tails(&dict, &opts)?;
                let problem = compile(dict, &obs, tails.as_ref())?;
                if let Some(p) = dump_problem {
                    std::fs::write(p, problem.dump())?;
                }
                verify(&problem, backend, &opts.verify)
            };
            let elapsed = t0.elapsed().as_secs_f64();
            let mut w = output(g)?;
            writeln!(w, "verdict: {}", v.verdict.name())?;
            writeln!(w, "margin: {:.6e}", v.margin)?;
            match v.certificate_bound {
                Some(c) => writeln!(w, "certificate_bound: {c:.6e}")?,
                None => writeln!(w, "certificate_bound: none")?,
            }
            writeln!(w, "min_cone_eigenvalue: {:.3e}", v.min_cone_eigenvalue)?;
            writeln!(w, "max_violation: {:.3e}", v.max_violation)?;
            writeln!(w, "solver: {} {:?} after {} iterations ({})", v.backend, v.status, v.iterations, v.message)?;
            writeln!(w, "dropped_rows: {}", v.dropped_rows)?;
            writeln!(w, "seconds: {elapsed:.3}")?;
            if let Some(p) = witness {
                write_witness(p, &v.witness)?;
            }
            Ok(if v.verdict == Verdict::Inconclusive { EXIT_INCONCLUSIVE } else { 0 })
        }
        Command::Scan { spec, plot } => {
            let spec = ExperimentSpec::load(spec)?;
            let run = RunOptions { pipeline: pipeline(g), backend };
            let out = pool.install(|| run_experiment(&spec, &run))?;
            let text = if *plot { emit_plot_data(&out.csv)? } else { out.csv };
            match (&g.out, &spec.output) {
                (None, Some(p)) => std::fs::write(p, text)?,
                _ => output(g)?.write_all(text.as_bytes())?,
            }
            Ok(if out.inconclusive > 0 { EXIT_INCONCLUSIVE } else { 0 })
        }
        Command::SquashCompare { omega, p, n_resend, povm_only } => {
            let text = format!(
                "kind = \"squash-compare\"\nomega = {omega:?}\np = {p:?}\nn_resend = \"{n_resend}\"\ncompare_povm_only = {povm_only}\n"
            );
            let mut spec = ExperimentSpec::parse(&format!("{text}model_file = \"unused\"\n"), None)
                .or_else(|_| ExperimentSpec::parse(&format!("{text}[model]\nscheme = \"{}\"\nspatial_modes = 1\neta = 1.0\n", g.scheme), None))?;
            if let Some(f) = &g.model_file {
                spec.model = None;
                spec.model_file = Some(f.clone());
            }
            let run = RunOptions { pipeline: pipeline(g), backend };
            let out = pool.install(|| run_experiment(&spec, &run))?;
            output(g)?.write_all(out.csv.as_bytes())?;
            Ok(if out.inconclusive > 0 { EXIT_INCONCLUSIVE } else { 0 })
        }
        Command::PovmDump => {
            let m = model(g)?;
            let space = FockSpace::shared(m.spatial_modes(), PolBasis::HV, g.cutoff)?;
            let povm = build_povm(&m, space.clone())?;
            let mut w = output(g)?;
            writeln!(w, "# model={}", model_string(&m))?;
            writeln!(w, "# cutoff={} dim={}", g.cutoff, space.dim())?;
            writeln!(w, "# basis: {}", (0..space.dim()).map(|i| space.ket_label(i)).collect::<Vec<_>>().join(" "))?;
            for (o, op) in povm.elements() {
                writeln!(w, "element {}", o.name())?;
                let mat = op.real_matrix();
                for r in 0..mat.nrows() {
                    let row: Vec<String> = (0..mat.ncols()).map(|c| format!("{:.12}", mat[(r, c)])).collect();
                    writeln!(w, "{}", row.join(" "))?;
                }
            }
            Ok(0)
        }
        Command::PlotData { csv } => {
            let text = std::fs::read_to_string(csv)?;
            output(g)?.write_all(emit_plot_data(&text)?.as_bytes())?;
            Ok(0)
        }
    }
}

fn write_witness(path: &Path, mats: &[evmix::core::linalg::RMat]) -> Result<(), AppError> {
    let mut f = File::create(path)?;
    for (k, m) in mats.iter().enumerate() {
        writeln!(f, "cone {k} {}x{}", m.nrows(), m.ncols())?;
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.12e}", m[(r, c)])).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
    }
    Ok(())
}
