//! The `aubin` command line, as a library so it can be driven in-process.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use aubin_core::probe::{sample_aubin_modulus, ProbeOptions};
use aubin_core::verify::{analyze, fmt_vec, LorentzRoute, Mode, Verdict, VerifyOptions};
use aubin_core::{fixtures, Execution, ProblemSpec, Tolerances};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CRITERION_FAILED: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aubin", version, about = "Check the Aubin property of solution maps of parameterized variational systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the directional criterion and print the report.
    Verify {
        /// Problem file (JSON), or `builtin:<name>`.
        file: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Iv)]
        mode: ModeArg,
        /// Also run the classical (non-directional) coderivative criterion.
        #[arg(long)]
        compare_mordukhovich: bool,
        #[arg(long, value_enum, default_value_t = RouteArg::Projection)]
        lorentz_route: RouteArg,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print DS(p̄,x̄)(q); refused unless the criterion verifies the Aubin property.
    Derivative {
        file: String,
        /// Parameter direction (one value per parameter).
        #[arg(long, num_args = 1.., allow_negative_numbers = true, required = true)]
        q: Vec<f64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the Aubin modulus by solving the generalized equation on samples.
    Probe {
        file: String,
        #[arg(long, default_value_t = 0.05)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0.25)]
        neighborhood: f64,
        #[arg(long, default_value_t = 5)]
        resolution: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// List the built-in problems and write their files.
    Examples {
        /// Directory the problem files are written to.
        #[arg(long, default_value = ".")]
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub activity_tol: Option<f64>,
    #[arg(long)]
    pub rank_tol: Option<f64>,
    #[arg(long)]
    pub residual_tol: Option<f64>,
    #[arg(long)]
    pub lp_tol: Option<f64>,
}

impl CommonArgs {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn tolerances(&self) -> Result<Tolerances, String> {
        let mut t = Tolerances::default();
        for (slot, value, name) in [
            (&mut t.activity, self.activity_tol, "--activity-tol"),
            (&mut t.rank, self.rank_tol, "--rank-tol"),
            (&mut t.residual, self.residual_tol, "--residual-tol"),
            (&mut t.lp, self.lp_tol, "--lp-tol"),
        ] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(format!("{name} must be a positive number"));
                }
                *slot = v;
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Iv,
    Iii,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Projection,
    Polyhedral,
}

/// Exit code of a verdict.
pub fn exit_code(verdict: &Verdict) -> i32 {
    match verdict {
        Verdict::AubinVerified => EXIT_OK,
        Verdict::CriterionFailed { .. } => EXIT_CRITERION_FAILED,
        Verdict::Inconclusive { .. } => EXIT_INCONCLUSIVE,
    }
}

fn load(file: &str) -> Result<ProblemSpec, String> {
    if let Some(name) = file.strip_prefix("builtin:") {
        return fixtures::builtin(name).ok_or_else(|| {
            format!("unknown built-in problem `{name}` (known: {})", fixtures::BUILTIN_NAMES.join(", "))
        });
    }
    let text = fs::read_to_string(file).map_err(|e| format!("cannot read {file}: {e}"))?;
    ProblemSpec::from_json(&text).map_err(|e| format!("{file}: {e}"))
}

/// Runs the command line; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_ERROR
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, String> {
    let io = |e: std::io::Error| e.to_string();
    match command {
        Command::Verify {
            file,
            mode,
            compare_mordukhovich,
            lorentz_route,
            common,
        } => {
            let spec = load(&file)?;
            let opts = VerifyOptions {
                mode: match mode {
                    ModeArg::Iv => Mode::Iv,
                    ModeArg::Iii => Mode::Iii,
                },
                compare_mordukhovich,
                lorentz_route: match lorentz_route {
                    RouteArg::Projection => LorentzRoute::Projection,
                    RouteArg::Polyhedral => LorentzRoute::Polyhedral,
                },
                tol: common.tolerances()?,
                execution: common.execution(),
                seed: common.seed,
                ..VerifyOptions::default()
            };
            let report = analyze(&spec, &opts).map_err(|e| e.to_string())?.report;
            match common.format {
                Format::Json => writeln!(out, "{}", report.to_json()).map_err(io)?,
                Format::Text => write!(out, "{}", report.to_text()).map_err(io)?,
            }
            Ok(exit_code(&report.verdict))
        }
        Command::Derivative { file, q, common } => {
            let spec = load(&file)?;
            let opts = VerifyOptions {
                compare_mordukhovich: false,
                tol: common.tolerances()?,
                execution: common.execution(),
                seed: common.seed,
                ..VerifyOptions::default()
            };
            let analysis = analyze(&spec, &opts).map_err(|e| e.to_string())?;
            if analysis.report.verdict != Verdict::AubinVerified {
                let why = match &analysis.report.verdict {
                    Verdict::Inconclusive { reason } => format!("criterion inconclusive ({reason})"),
                    _ => "the criterion failed".to_string(),
                };
                writeln!(out, "refusing to evaluate DS: {why}").map_err(io)?;
                return Ok(exit_code(&analysis.report.verdict));
            }
            let elements = analysis.derivative(&q).map_err(|e| e.to_string())?;
            match common.format {
                Format::Json => {
                    let text = aubin_core::json::to_string_pretty(&serde_json::json!({ "q": q, "DS": elements }))
                        .map_err(|e| e.to_string())?;
                    writeln!(out, "{text}").map_err(io)?;
                }
                Format::Text => {
                    writeln!(out, "DS at q = {}: {} element(s)", fmt_vec(&q), elements.len()).map_err(io)?;
                    for e in &elements {
                        let extra = if e.directions.is_empty() {
                            String::new()
                        } else {
                            format!("  + span of {} direction(s)", e.directions.len())
                        };
                        writeln!(out, "  face {:?}: u = {}  xi = {}{extra}", e.face, fmt_vec(&e.u), fmt_vec(&e.xi))
                            .map_err(io)?;
                    }
                }
            }
            Ok(EXIT_OK)
        }
        Command::Probe {
            file,
            radius,
            samples,
            neighborhood,
            resolution,
            common,
        } => {
            let spec = load(&file)?;
            let opts = ProbeOptions {
                radius,
                samples,
                neighborhood,
                resolution,
                seed: common.seed,
                execution: common.execution(),
            };
            let report = sample_aubin_modulus(&spec, &opts).map_err(|e| e.to_string())?;
            match common.format {
                Format::Json => writeln!(out, "{}", report.to_json()).map_err(io)?,
                Format::Text => {
                    match report.kappa_hat {
                        Some(k) => writeln!(out, "estimated modulus: {k:.6}").map_err(io)?,
                        None => writeln!(out, "estimated modulus: none (no usable pairs)").map_err(io)?,
                    }
                    writeln!(out, "pairs: {}  anomalies: {}", report.pairs.len(), report.anomalies.len()).map_err(io)?;
                    for a in &report.anomalies {
                        writeln!(out, "  pair {} at p = {}: {}", a.pair, fmt_vec(&a.p), a.reason).map_err(io)?;
                    }
                    writeln!(out, "(advisory only; sampling cannot certify the Aubin property)").map_err(io)?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Examples { dir } => {
            write_examples(&dir, out)?;
            Ok(EXIT_OK)
        }
    }
}

fn write_examples(dir: &Path, out: &mut dyn Write) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    for name in fixtures::BUILTIN_NAMES {
        let spec = fixtures::builtin(name).expect("listed fixture exists");
        let path = dir.join(format!("{name}.json"));
        fs::write(&path, spec.to_json() + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        writeln!(out, "{name}\t{}", path.display()).map_err(|e| e.to_string())?;
    }
    Ok(())
}
