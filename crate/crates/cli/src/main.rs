//! `dimgroup`: build, verify, decide and telescope dimension group realizations.

mod file;

use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dimgroup_core::ecrs_builder::{ecrs_pipeline, EcrsError, EcrsProblem};
use dimgroup_core::ecs_builder::{ecs_pipeline, ExtensionData};
use dimgroup_core::ers_builder::{ers_pipeline, ErsStageData};
use dimgroup_core::io::{format_rational, parse_rational};
use dimgroup_core::realization::{Flags, RealizationSeq};
use dimgroup_core::supernatural::{decide_ecrs, Cardinal, SupernaturalNumber};
use dimgroup_core::verify::verify_realization;
use num_rational::BigRational;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use file::{Provenance, RealizationFile};

#[derive(Parser)]
#[command(name = "dimgroup", version, about = "Exact matrix realizations of simple dimension groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a construction pipeline and write a realization file.
    Build {
        pipeline: Pipeline,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Convergence tolerance for the ECS prefix, as `N/D`.
        #[arg(long, default_value = "1/100")]
        epsilon: String,
        /// Number of ERS input stages to use; defaults to all of them.
        #[arg(long)]
        horizon: Option<usize>,
        /// Reject an ERS build whose recovered trace row is not within a proven bound.
        #[arg(long)]
        strict_bounds: bool,
    },
    /// Re-derive every claimed flag of a realization file and print a JSON report.
    Verify {
        #[arg(short, long)]
        input: PathBuf,
    },
    /// Decide whether an ECRS realization exists.
    Decide {
        /// Rank of the group, a number or `inf`.
        #[arg(long)]
        rank: Cardinal,
        /// JSON supernatural number `{"finite": {...}, "infinite": [...]}`.
        #[arg(long)]
        group: PathBuf,
        /// Index of the trace subgroup, a number or `inf`.
        #[arg(long)]
        lambda: Cardinal,
    },
    /// Compose stages between cut points and re-verify the flags.
    Telescope {
        #[arg(short, long)]
        input: PathBuf,
        /// Strictly increasing level indices, starting from 0 for the first level.
        #[arg(long, value_delimiter = ',', required = true)]
        cuts: Vec<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Pipeline {
    Ecs,
    Ers,
    Ecrs,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    /// Input does not match the expected schema.
    #[error("{0}")]
    Schema(String),
    /// A pipeline could not produce a realization.
    #[error("{message}")]
    Construction { kind: String, message: String, details: Value },
    /// A realization does not have the properties it claims.
    #[error("{0}")]
    Verification(String),
    /// Reading or writing a file failed.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Construction { .. } => 3,
            CliError::Verification(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    fn to_json(&self) -> Value {
        let (kind, details) = match self {
            CliError::Schema(_) => ("Schema".to_string(), Value::Null),
            CliError::Construction { kind, details, .. } => (kind.clone(), details.clone()),
            CliError::Verification(_) => ("VerificationFailed".to_string(), Value::Null),
            CliError::Io(_) => ("Io".to_string(), Value::Null),
        };
        json!({"error": {"kind": kind, "message": self.to_string(), "exit_code": self.exit_code(), "details": details}})
    }
}

/// The variant name of an error enum, taken from its `Debug` form.
fn variant_name<E: Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or_default().to_string()
}

fn construction<E: Debug + std::fmt::Display>(e: E) -> CliError {
    CliError::Construction { kind: variant_name(&e), message: e.to_string(), details: Value::Null }
}

fn ecrs_error(e: EcrsError) -> CliError {
    let details = match &e {
        EcrsError::LambdaTooSmall { lambda, rank, reason } => json!({
            "lambda": lambda,
            "rank": rank,
            "reason": reason,
            "requirement": "rank G must not exceed the index of the trace subgroup",
        }),
        _ => Value::Null,
    };
    CliError::Construction { kind: variant_name(&e), message: e.to_string(), details }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn read_realization(path: &Path) -> Result<RealizationSeq, CliError> {
    let file: RealizationFile = read_json(path)?;
    file.to_seq().map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn build(
    pipeline: Pipeline,
    input: &Path,
    epsilon: &str,
    horizon: Option<usize>,
    strict_bounds: bool,
) -> Result<(RealizationSeq, Provenance), CliError> {
    let (seq, pipeline, parameters) = match pipeline {
        Pipeline::Ecs => {
            let data: ExtensionData = read_json(input)?;
            let eps: BigRational = parse_rational(epsilon).map_err(CliError::Schema)?;
            let seq = ecs_pipeline(&data, &eps).map_err(construction)?;
            (seq, "ecs", json!({"k": data.k, "epsilon": format_rational(&eps)}))
        }
        Pipeline::Ers => {
            let data: ErsStageData = read_json(input)?;
            let horizon = horizon.unwrap_or(data.stages.len());
            let out = ers_pipeline(&data, horizon).map_err(construction)?;
            let bounded = out.w_sequence.tail_bound.is_some() && out.trace_error <= out.trace_bound;
            if strict_bounds && !bounded {
                return Err(CliError::Construction {
                    kind: "BoundNotMet".into(),
                    message: "recovered trace row is not within a proven bound".into(),
                    details: json!({"trace_error": format_rational(&out.trace_error)}),
                });
            }
            let params = json!({
                "k": data.k,
                "horizon": horizon,
                "trace_error": format_rational(&out.trace_error),
                "trace_bound": format_rational(&out.trace_bound),
                "recovered_rho": out.recovered_rho.iter().map(format_rational).collect::<Vec<_>>(),
            });
            (out.seq, "ers", params)
        }
        Pipeline::Ecrs => {
            let prob: EcrsProblem = read_json(input)?;
            let out = ecrs_pipeline(&prob).map_err(ecrs_error)?;
            let params = json!({
                "k": prob.k,
                "lambda": prob.lambda,
                "case": out.case,
                "size": out.size,
                "cuts": out.cuts,
            });
            (out.seq, "ecrs", params)
        }
    };
    Ok((seq, Provenance { pipeline: pipeline.into(), parameters }))
}

fn flag_names(f: &Flags) -> Vec<&'static str> {
    [("ecs", f.ecs), ("ers", f.ers), ("ecrs", f.ecrs), ("primitive", f.primitive)]
        .into_iter()
        .filter_map(|(n, on)| on.then_some(n))
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Build { pipeline, input, output, epsilon, horizon, strict_bounds } => {
            let (seq, provenance) = build(pipeline, &input, &epsilon, horizon, strict_bounds)?;
            let report = verify_realization(&seq);
            if !report.ok() {
                return Err(CliError::Verification(format!("built realization fails its own checks: {:?}", report.failures)));
            }
            log::info!("built {} stages with flags {:?}", seq.stages.len(), flag_names(&seq.flags));
            write_json(&output, &RealizationFile::from_seq(&seq, Some(provenance)))
        }
        Command::Verify { input } => {
            let seq = read_realization(&input)?;
            let report = verify_realization(&seq);
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
            if report.ok() {
                Ok(())
            } else {
                let named: Vec<String> = report
                    .failures
                    .iter()
                    .map(|f| match f.stage {
                        Some(s) => format!("stage {s}: {}", f.check),
                        None => f.check.clone(),
                    })
                    .collect();
                Err(CliError::Verification(format!("claimed flags do not hold ({})", named.join("; "))))
            }
        }
        Command::Decide { rank, group, lambda } => {
            let u: SupernaturalNumber = read_json(&group)?;
            let decision = decide_ecrs(rank, &u, lambda);
            let out = json!({"rank": rank.to_string(), "lambda": lambda.to_string(), "group": u, "decision": decision});
            println!("{}", serde_json::to_string_pretty(&out).expect("serializable decision"));
            Ok(())
        }
        Command::Telescope { input, cuts, output } => {
            let seq = read_realization(&input)?;
            let mut tele = seq.telescope(&cuts).ok_or_else(|| {
                CliError::Schema(format!("bad cut points {cuts:?} for {} stages", seq.stages.len()))
            })?;
            let verified = verify_realization(&tele).verified;
            let kept = Flags {
                ecs: tele.flags.ecs && verified.ecs,
                ers: tele.flags.ers && verified.ers,
                ecrs: tele.flags.ecrs && verified.ecrs,
                primitive: tele.flags.primitive && verified.primitive,
            };
            let lost: Vec<&str> = flag_names(&tele.flags).into_iter().filter(|n| !flag_names(&kept).contains(n)).collect();
            if !lost.is_empty() {
                log::warn!("telescoping lost flags {lost:?}");
            }
            tele.flags = kept;
            let provenance = Provenance { pipeline: "telescope".into(), parameters: json!({"cuts": cuts}) };
            write_json(&output, &RealizationFile::from_seq(&tele, Some(provenance)))?;
            let summary = json!({"stages": tele.stages.len(), "flags": kept, "lost_flags": lost});
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DIMGROUP_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
