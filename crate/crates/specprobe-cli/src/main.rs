//! Batch experiment runner: selects a processor profile and a variant,
//! runs one of the measurement procedures, and writes a CSV or JSON-lines
//! report.
//!
//! Exit codes: 0 on success, 2 on configuration errors (unknown variant or
//! profile, malformed profile file), 3 when every requested variant is
//! untestable on the chosen profile.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use specprobe::harness::report::Report;
use specprobe::harness::{self, DEFAULT_SEED};
use specprobe::mem::Level;
use specprobe::profile::{Exploitability, ProcessorProfile};
use specprobe::variants::{builtin_profiles, lint_profile, load_profile, VariantRegistry};

#[derive(Parser)]
#[command(
    name = "specprobe",
    about = "Deterministic measurement harness for transient-execution fault handling",
    version
)]
struct Cli {
    /// Processor profile: a built-in name (intel-client, amd-epyc) or a
    /// path to a profile file.
    #[arg(long, global = true, default_value = "intel-client")]
    profile: String,
    /// Seed for the deterministic RNG; reports are byte-identical for the
    /// same seed.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    L1,
    L2,
    Llc,
    Mem,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Level {
        match l {
            LevelArg::L1 => Level::L1,
            LevelArg::L2 => Level::L2,
            LevelArg::Llc => Level::Llc,
            LevelArg::Mem => Level::Mem,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TlbArg {
    Present,
    Flushed,
}

#[derive(Subcommand)]
enum Command {
    /// List the variant catalog.
    ListVariants,
    /// List the built-in profiles.
    ListProfiles,
    /// Validate a profile file (schema and self-consistency lint).
    ValidateProfile { path: PathBuf },
    /// Exploitability matrix over the catalog (or one variant).
    Exploitability {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Speculation window behind the FP windowing gadget; optionally sweep
    /// the serialization-barrier position.
    Window {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        sweep_cpuid: bool,
    },
    /// Relative phase-one latency (differential, under a suppressing
    /// primitive).
    P1 {
        #[arg(long)]
        variant: String,
        #[arg(long, value_enum)]
        data_level: LevelArg,
        #[arg(long, value_enum, default_value_t = TlbArg::Present)]
        tlb: TlbArg,
    },
    /// Run the bare primitive repeatedly and report prefetch residue.
    Prefetch {
        #[arg(long)]
        variant: String,
        #[arg(long, value_enum)]
        level: LevelArg,
        #[arg(long)]
        rounds: u32,
    },
    /// Pinned-retirement squash threshold.
    Squash,
    /// Wrong-path window behind a mispredicted branch, with and without a
    /// slow windowing gadget.
    Mispredict,
    /// Two chained primitives with a tunable delay between them.
    DualPrimitive {
        #[arg(long)]
        same_address: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn resolve_profile(name: &str, registry: &VariantRegistry) -> Result<ProcessorProfile, AnyError> {
    let builtins = builtin_profiles();
    match name {
        "intel-client" => Ok(builtins.intel_client),
        "amd-epyc" => Ok(builtins.amd_epyc),
        other => {
            let path = PathBuf::from(other);
            if path.exists() {
                Ok(load_profile(&path, registry)?)
            } else {
                Err(format!(
                    "unknown profile `{other}` (built-ins: intel-client, amd-epyc; or pass a file path)"
                )
                .into())
            }
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, AnyError> {
    let registry = VariantRegistry::builtin();
    let mut all_na = false;

    let report = match &cli.command {
        Command::ListVariants => {
            let mut r = Report::new(vec!["id", "name", "template", "check", "features"]);
            for v in registry.iter() {
                r.push_row(vec![
                    json!(v.id()),
                    json!(v.name()),
                    json!(format!("{:?}", v.template())),
                    json!(format!("{:?}", v.check())),
                    json!(v
                        .required_features()
                        .iter()
                        .map(|f| format!("{f:?}"))
                        .collect::<Vec<_>>()
                        .join("+")),
                ]);
            }
            r
        }
        Command::ListProfiles => {
            let builtins = builtin_profiles();
            let mut r = Report::new(vec!["name", "rob_size", "l1", "l2", "llc", "mem"]);
            for p in [&builtins.intel_client, &builtins.amd_epyc] {
                r.push_row(vec![
                    json!(p.name),
                    json!(p.rob_size),
                    json!(p.latency.l1),
                    json!(p.latency.l2),
                    json!(p.latency.llc),
                    json!(p.latency.mem),
                ]);
            }
            r
        }
        Command::ValidateProfile { path } => {
            let profile = load_profile(path, &registry)?;
            lint_profile(&profile, &registry)?;
            let mut r = Report::new(vec!["profile", "status"]);
            r.push_row(vec![json!(profile.name), json!("ok")]);
            r
        }
        Command::Exploitability { variant } => {
            let profile = resolve_profile(&cli.profile, &registry)?;
            let selected: Vec<_> = match variant {
                Some(id) => vec![registry
                    .get(id)
                    .ok_or_else(|| unknown_variant(&registry, id))?
                    .clone()],
                None => registry.iter().cloned().collect(),
            };
            let mut r = Report::new(vec!["variant", "name", "outcome"]);
            let mut na_count = 0;
            for v in &selected {
                let outcome = harness::exploitability(v.as_ref(), &profile);
                if outcome == Exploitability::NA {
                    na_count += 1;
                }
                r.push_row(vec![
                    json!(v.id()),
                    json!(v.name()),
                    json!(outcome.to_string()),
                ]);
            }
            all_na = na_count == selected.len();
            r
        }
        Command::Window {
            variant,
            sweep_cpuid,
        } => {
            let profile = resolve_profile(&cli.profile, &registry)?;
            ensure_variant(&registry, variant)?;
            if *sweep_cpuid {
                let points = harness::sweep_p2(variant, &registry, &profile, cli.seed, cli.jobs)?;
                let mut r = Report::new(vec!["effective_size", "cpuid_pos", "window"]);
                for p in points {
                    r.push_row(vec![
                        json!(p.effective_size),
                        json!(p.cpuid_pos),
                        json!(p.window),
                    ]);
                }
                r
            } else {
                let template = harness::fp_window_template(variant, 0);
                match harness::measure_speculation_window(&template, &registry, &profile, cli.seed)
                {
                    Ok(m) => {
                        let mut r = Report::new(vec!["variant", "window", "no_speculation"]);
                        r.push_row(vec![
                            json!(variant),
                            json!(m.window),
                            json!(m.no_speculation),
                        ]);
                        r
                    }
                    Err(e @ harness::HarnessError::UnsupportedVariant(_)) => {
                        eprintln!("note: {e}");
                        all_na = true;
                        let mut r = Report::new(vec!["variant", "window", "no_speculation"]);
                        r.push_row(vec![json!(variant), json!("NA"), json!("NA")]);
                        r
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Command::P1 {
            variant,
            data_level,
            tlb,
        } => {
            let profile = resolve_profile(&cli.profile, &registry)?;
            ensure_variant(&registry, variant)?;
            let tlb_present = matches!(tlb, TlbArg::Present);
            match harness::measure_relative_p1(
                variant,
                (*data_level).into(),
                tlb_present,
                &registry,
                &profile,
                cli.seed,
            ) {
                Ok(m) => {
                    let mut r = Report::new(vec![
                        "variant",
                        "data_level",
                        "tlb",
                        "relative_p1",
                        "t_p1",
                        "t_data",
                        "t_spec2",
                        "t_spec2_prime",
                        "chase_depth",
                    ]);
                    r.push_row(vec![
                        json!(variant),
                        json!(format!("{:?}", Level::from(*data_level)).to_lowercase()),
                        json!(if tlb_present { "present" } else { "flushed" }),
                        json!(m.relative_p1),
                        json!(m.times.t_p1),
                        json!(m.times.t_data),
                        json!(m.times.t_spec2),
                        json!(m.times.t_spec2_prime),
                        json!(m.chase_depth),
                    ]);
                    r
                }
                Err(
                    e @ (harness::HarnessError::TerminalFault(_)
                    | harness::HarnessError::UnsupportedVariant(_)
                    | harness::HarnessError::NoSpeculation(_)
                    | harness::HarnessError::BudgetClipped),
                ) => {
                    eprintln!("note: {e}");
                    all_na = true;
                    let mut r = Report::new(vec!["variant", "data_level", "tlb", "relative_p1"]);
                    r.push_row(vec![
                        json!(variant),
                        json!(format!("{:?}", Level::from(*data_level)).to_lowercase()),
                        json!(if tlb_present { "present" } else { "flushed" }),
                        json!("NA"),
                    ]);
                    r
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Prefetch {
            variant,
            level,
            rounds,
        } => {
            let profile = resolve_profile(&cli.profile, &registry)?;
            ensure_variant(&registry, variant)?;
            let report = match harness::prefetch_experiment(
                variant,
                (*level).into(),
                *rounds,
                &registry,
                &profile,
                cli.seed,
            ) {
                Ok(report) => report,
                Err(e @ harness::HarnessError::UnsupportedVariant(_)) => {
                    eprintln!("note: {e}");
                    return Ok(ExitCode::from(3));
                }
                Err(e) => return Err(e.into()),
            };
            let mut r = Report::new(vec![
                "variant",
                "initial_level",
                "rounds",
                "reload_latency",
                "count",
                "correct",
                "zero",
                "none",
                "final_level",
            ]);
            for (lat, count) in &report.histogram {
                r.push_row(vec![
                    json!(variant),
                    json!(format!("{:?}", Level::from(*level)).to_lowercase()),
                    json!(rounds),
                    json!(lat),
                    json!(count),
                    json!(report.correct),
                    json!(report.zero),
                    json!(report.none),
                    json!(format!("{:?}", report.final_level).to_lowercase()),
                ]);
            }
            r
        }
        Command::Squash => {
            let profile = resolve_profile(&cli.profile, &registry)?;
            let m = harness::squash_threshold(&registry, &profile, cli.seed)?;
            let mut r = Report::new(vec!["threshold", "rob_size"]);
            r.push_row(vec![json!(m.window), json!(profile.rob_size)]);
            r
        }
        Command::Mispredict => {
            let profile = resolve_profile(&cli.profile, &registry)?;
            let without = harness::misprediction_window(false, &profile, cli.seed)?;
            let with = harness::misprediction_window(true, &profile, cli.seed)?;
            let mut r = Report::new(vec!["windowing", "window", "resolution_bound"]);
            r.push_row(vec![
                json!("none"),
                json!(without.window),
                json!(without.resolution_bound),
            ]);
            r.push_row(vec![
                json!("slow-load"),
                json!(with.window),
                json!(with.resolution_bound),
            ]);
            r
        }
        Command::DualPrimitive { same_address } => {
            let profile = resolve_profile(&cli.profile, &registry)?;
            let rows = harness::dual_primitive_test(*same_address, &registry, &profile, cli.seed)?;
            let mut r = Report::new(vec!["inserted_count", "outcome"]);
            for (count, outcome) in rows {
                r.push_row(vec![json!(count), json!(outcome.to_string())]);
            }
            r
        }
    };

    let rendered = match cli.format {
        Format::Csv => report.to_csv(),
        Format::Jsonl => report.to_jsonl(),
    };
    match &cli.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }

    Ok(if all_na {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

fn ensure_variant(registry: &VariantRegistry, id: &str) -> Result<(), AnyError> {
    if registry.get(id).is_none() {
        return Err(unknown_variant(registry, id));
    }
    Ok(())
}

fn unknown_variant(registry: &VariantRegistry, id: &str) -> AnyError {
    match registry.suggest(id) {
        Some(s) => format!("unknown variant `{id}` (did you mean `{s}`?)").into(),
        None => format!("unknown variant `{id}`").into(),
    }
}
