use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use uiobs::fullsolver::{analyze, AnalysisResult, ResultDoc};
use uiobs::liegeom::{Ctx, Limits};
use uiobs::simcheck::{
    indistinguishability_check, simulate, verify_ui_reconstruction, Signals, Transform, DEFAULT_HORIZON,
    DEFAULT_STEP,
};
use uiobs::symcore::{parse, Expr, OracleConfig};
use uiobs::sysmodel::SystemModel;
use uiobs::uirecon::{reconstruct, Mode};
use uiobs::Error;

/// Observability and unknown-input reconstruction for nonlinear systems.
#[derive(Parser)]
#[command(name = "uiobs", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Observability analysis of a model file.
    Analyze {
        model: PathBuf,
        #[command(flatten)]
        opts: OracleOpts,
        #[command(flatten)]
        out: OutOpts,
        /// Also compute the generators of the symmetry distribution.
        #[arg(long)]
        symmetries: bool,
        /// Print the solver trace.
        #[arg(long)]
        trace: bool,
    },
    /// Closed-form unknown-input formulas, or the reconstructable combinations.
    Reconstruct {
        model: PathBuf,
        #[command(flatten)]
        opts: OracleOpts,
        #[command(flatten)]
        out: OutOpts,
        /// Check the formulas at this many random points.
        #[arg(long, default_value_t = 10)]
        verify: usize,
    },
    /// RK4 simulation with a CSV trajectory dump.
    Simulate {
        model: PathBuf,
        #[command(flatten)]
        opts: OracleOpts,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        /// `name=expr` in `t`; inputs left out get `1 + sin((k+1) t)/2`.
        #[arg(long = "input", value_name = "NAME=EXPR")]
        inputs: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Run the indistinguishability check on the i-th symmetry generator.
        #[arg(long, value_name = "I")]
        check_symmetry: Option<usize>,
        /// Take the generators from a result document instead of analysing.
        #[arg(long)]
        symmetry_file: Option<PathBuf>,
        /// Flow parameter for the symmetry check.
        #[arg(long, default_value_t = 0.3)]
        eps: f64,
        /// Output deviation below which the check passes.
        #[arg(long, default_value_t = 1e-6)]
        check_tol: f64,
    },
}

#[derive(Args)]
struct OracleOpts {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Zero tolerance of the oracle.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    sv_tol: Option<f64>,
    /// Cap on solver passes; 0 means 10 times the state dimension.
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    term_budget: Option<usize>,
}

#[derive(Args)]
struct OutOpts {
    /// Write the human-readable report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the machine-readable result document here.
    #[arg(long)]
    json: Option<PathBuf>,
}

impl OracleOpts {
    fn ctx(&self) -> Result<Ctx, Error> {
        let d = OracleConfig::default();
        let cfg = OracleConfig {
            seed: self.seed.unwrap_or(d.seed),
            samples: self.samples.unwrap_or(d.samples),
            zero_tol: self.tol.unwrap_or(d.zero_tol),
            sv_tol: self.sv_tol.unwrap_or(d.sv_tol),
            ..d
        };
        cfg.validate()?;
        let l = Limits::default();
        let limits = Limits {
            max_iter: self.max_iter.unwrap_or(l.max_iter),
            term_budget: self.term_budget.unwrap_or(l.term_budget),
            ..l
        };
        Ok(Ctx::new(cfg, limits))
    }
}

enum Failure {
    Core(Error),
    Io(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn load(path: &Path) -> Result<SystemModel, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Core(Error::Model(format!("{}: {e}", path.display()))))?;
    Ok(SystemModel::from_json(&text)?)
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(out: &OutOpts, report: &str, json: Option<String>) -> Result<(), Failure> {
    match &out.report {
        Some(p) => write_out(p, report)?,
        None => print!("{report}"),
    }
    if let (Some(p), Some(j)) = (&out.json, json) {
        write_out(p, &j)?;
    }
    Ok(())
}

fn cmd_analyze(model: &Path, opts: &OracleOpts, out: &OutOpts, symmetries: bool, trace: bool) -> Result<(), Failure> {
    let ctx = opts.ctx()?;
    let m = load(model)?;
    let t0 = Instant::now();
    let res = analyze(&m, &ctx)?;
    let elapsed = t0.elapsed();
    let doc = res.to_doc(&ctx, symmetries)?;
    let mut report = format!("model: {}\n", model.display());
    report.push_str(&res.report(&ctx, symmetries)?);
    report.push_str(&trace_summary(&res, trace));
    report.push_str(&format!("oracle: seed {}, {} samples\n", doc.seed, doc.samples));
    report.push_str(&format!("time: {:.3} s\n", elapsed.as_secs_f64()));
    emit(out, &report, Some(doc.to_json()))
}

fn trace_summary(res: &AnalysisResult, full: bool) -> String {
    if full {
        let mut s = "trace:\n".to_string();
        for e in &res.trace {
            s.push_str(&format!("  {}\n", serde_json::to_string(e).unwrap_or_default()));
        }
        s
    } else {
        format!("trace: {} events (--trace to list)\n", res.trace.len())
    }
}

fn cmd_reconstruct(model: &Path, opts: &OracleOpts, out: &OutOpts, verify: usize) -> Result<(), Failure> {
    let ctx = opts.ctx()?;
    let m = load(model)?;
    let res = analyze(&m, &ctx)?;
    let Some(rec) = reconstruct(&res, &ctx)? else {
        return emit(out, "nothing to reconstruct: the model has no unknown inputs\n", None);
    };
    let mut report = format!("model: {}\nverdict: {}\nmode: {:?}\n", model.display(), res.verdict, rec.mode);
    report.push_str(&rec.report());
    let mut doc = serde_json::json!({
        "verdict": res.verdict.to_string(),
        "mode": rec.mode,
        "system": rec.model.uie_label(),
        "unknown_inputs": rec.model.unknown.iter().map(|u| u.name.clone()).collect::<Vec<_>>(),
        "h_tilde": rec.h_tilde.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "rates": rec.rates.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "expressions": rec.expressions.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "combination_basis": rec.combination_basis.iter().map(|r| r.iter().map(ToString::to_string).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "offsets": rec.offsets.iter().map(ToString::to_string).collect::<Vec<_>>(),
    });
    if rec.mode == Mode::Full && verify > 0 {
        let r = verify_ui_reconstruction(&rec, verify, ctx.oracle.config().seed, &ctx)?;
        report.push_str(&format!("max residual at {verify} random points: {r:.3e}\n"));
        doc["max_residual"] = serde_json::json!(r);
    }
    emit(out, &report, Some(serde_json::to_string_pretty(&doc).expect("json value")))
}

fn signals(model: &SystemModel, specs: &[String]) -> Result<Signals, Failure> {
    let mut sig = Signals::smooth_defaults(model);
    for s in specs {
        let (name, src) = s
            .split_once('=')
            .ok_or_else(|| Failure::Core(Error::Model(format!("input `{s}` is not of the form NAME=EXPR"))))?;
        let e = parse(src).map_err(|source| Error::Parse { context: format!("input {name}"), source })?;
        let name = name.trim();
        if let Some(k) = model.known.iter().position(|k| k.name == name) {
            sig.known[k] = e;
        } else if let Some(k) = model.unknown.iter().position(|u| u.name == name) {
            sig.unknown[k] = e;
        } else {
            return Err(Failure::Core(Error::Model(format!("`{name}` is not an input of the model"))));
        }
    }
    Ok(sig)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    model: &Path,
    opts: &OracleOpts,
    x0: &[f64],
    inputs: &[String],
    horizon: f64,
    step: f64,
    csv: Option<&Path>,
    check: Option<usize>,
    symmetry_file: Option<&Path>,
    eps: f64,
    check_tol: f64,
) -> Result<(), Failure> {
    let ctx = opts.ctx()?;
    let mut m = load(model)?;
    let mut generators: Vec<Vec<Expr>> = Vec::new();
    if let Some(i) = check {
        let res = analyze(&m, &ctx)?;
        m = res.final_model.clone();
        generators = match symmetry_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
                let doc: ResultDoc = serde_json::from_str(&text)
                    .map_err(|e| Failure::Core(Error::Model(format!("{}: {e}", p.display()))))?;
                if doc.state != m.state_names() {
                    return Err(Failure::Core(Error::Model(format!(
                        "result document is over [{}], the analysed model over [{}]",
                        doc.state.join(", "),
                        m.state_names().join(", ")
                    ))));
                }
                doc.symmetries
                    .iter()
                    .map(|v| {
                        v.iter()
                            .map(|s| parse(s).map_err(|source| Error::Parse { context: "symmetry".into(), source }))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<_, _>>()?
            }
            None => res.symmetries(&ctx)?.generators,
        };
        if i >= generators.len() {
            return Err(Failure::Core(Error::Model(format!("there are {} symmetry generators, no index {i}", generators.len()))));
        }
    }
    let sig = signals(&m, inputs)?;
    let tr = simulate(&m, x0, &sig, horizon, step)?;
    let text = tr.to_csv(&m.state_names());
    match csv {
        Some(p) => write_out(p, &text)?,
        None if check.is_none() => print!("{text}"),
        None => {}
    }
    if let Some(i) = check {
        let g = &generators[i];
        let t = Transform::Generator { field: g.clone(), eps };
        let c = indistinguishability_check(&m, x0, &t, &sig, horizon, step, check_tol, &ctx)?;
        let parts: Vec<String> = g.iter().map(ToString::to_string).collect();
        println!("symmetry {i}: [{}]", parts.join(", "));
        if c.inferred {
            println!("unknown-input factors inferred from the generator: {:?}", c.unknown_scale);
        }
        println!(
            "{}: max output deviation {:.3e} (tol {check_tol:e})",
            if c.indistinguishable { "PASS" } else { "FAIL" },
            c.max_deviation
        );
        if !c.indistinguishable {
            return Err(Failure::Check(format!("symmetry {i} does not preserve the outputs")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Analyze { model, opts, out, symmetries, trace } => cmd_analyze(model, opts, out, *symmetries, *trace),
        Cmd::Reconstruct { model, opts, out, verify } => cmd_reconstruct(model, opts, out, *verify),
        Cmd::Simulate {
            model,
            opts,
            x0,
            inputs,
            horizon,
            step,
            csv,
            check_symmetry,
            symmetry_file,
            eps,
            check_tol,
        } => cmd_simulate(
            model,
            opts,
            x0,
            inputs,
            *horizon,
            *step,
            csv.as_deref(),
            *check_symmetry,
            symmetry_file.as_deref(),
            *eps,
            *check_tol,
        ),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
    }
}
