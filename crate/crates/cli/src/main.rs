use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fibersphere::config::{LoadedConfig, Scenario};
use fibersphere::error::Error;
use fibersphere::io::{self, Provenance};
use fibersphere::{fitting, pipeline, presets};

#[derive(Parser)]
#[command(
    name = "fibersphere",
    version,
    about = "Photon-counting model of a fiber-coupled microsphere resonator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a photon-counting sweep and write sweep.csv + sweep.json.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Extract transmittance, phase and purity spectra from a sweep record.
    Analyze {
        /// Sweep CSV written by `simulate`.
        record: PathBuf,
        /// Sidecar JSON (defaults to the record path with a .json extension).
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit the coupled-mode model to spectrum CSVs and write fit.json.
    Fit {
        /// Transmittance spectrum CSV.
        transmittance: PathBuf,
        /// Optional phase spectrum CSV; enables the joint fit.
        #[arg(long)]
        phase: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write plot data for the two-regime spectra (fig2) or the gap scan (fig3).
    Figure {
        kind: FigureKind,
        /// Overcoupled configuration for fig2 (defaults to the shipped preset).
        #[arg(long)]
        config_over: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// List or print the shipped configurations.
    Presets {
        /// Print this preset instead of listing names.
        name: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureKind {
    Fig2,
    Fig3,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

struct Loaded {
    scenario: Scenario,
    prov: Provenance,
}

impl RunArgs {
    fn load(&self, default_preset: &str) -> Result<Loaded, Error> {
        let loaded = load_config(
            self.config.as_deref(),
            self.preset.as_deref(),
            default_preset,
        )?;
        resolve(loaded, self.seed)
    }
}

fn load_config(
    path: Option<&Path>,
    preset: Option<&str>,
    default_preset: &str,
) -> Result<LoadedConfig, Error> {
    match (path, preset) {
        (Some(p), _) => LoadedConfig::load(p),
        (None, Some(name)) => presets::load(name),
        (None, None) => presets::load(default_preset),
    }
}

fn resolve(mut loaded: LoadedConfig, seed: Option<u64>) -> Result<Loaded, Error> {
    if let Some(seed) = seed {
        loaded.config.seed = seed;
    }
    let scenario = loaded.config.resolve()?;
    let prov = Provenance::new(loaded.sha256, scenario.seed);
    Ok(Loaded { scenario, prov })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    let path = dir.join(name);
    io::write_atomic(&path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Outcome of a command that finished without an error but may still carry
/// a numerical warning.
enum Outcome {
    Done,
    NotConverged(String),
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Simulate { run } => {
            let l = run.load("undercoupled")?;
            let record = pipeline::simulate(&l.scenario)?;
            write(&run.out, "sweep.csv", &io::sweep_csv(&record, &l.prov)?)?;
            write(
                &run.out,
                "sweep.json",
                &io::sweep_sidecar(&record, &l.prov)?,
            )?;
            Ok(Outcome::Done)
        }
        Command::Analyze {
            record,
            sidecar,
            run,
        } => {
            let l = run.load("undercoupled")?;
            let rec = io::read_sweep(&record, sidecar.as_deref())?;
            let a = pipeline::analyze(&rec, &l.scenario)?;
            write(
                &run.out,
                "transmittance.csv",
                &io::spectrum_csv(&a.transmittance, &l.prov)?,
            )?;
            write(&run.out, "phase.csv", &io::spectrum_csv(&a.phase, &l.prov)?)?;
            if let Some(p) = &a.purity {
                write(&run.out, "purity.csv", &io::purity_csv(p, &l.prov)?)?;
                let rhos: Vec<_> = p
                    .points
                    .iter()
                    .map(|x| serde_json::json!({"detuning_hz": x.detuning_hz, "density_matrix": x.rho}))
                    .collect();
                write(
                    &run.out,
                    "density_matrices.json",
                    &io::json_with_provenance("points", &rhos, &l.prov)?,
                )?;
            }
            write(
                &run.out,
                "summary.json",
                &io::json_with_provenance("summary", &a.summary, &l.prov)?,
            )?;
            if a.summary.not_converged_points > 0 {
                eprintln!(
                    "warning: {} tomography points hit the generation cap",
                    a.summary.not_converged_points
                );
            }
            Ok(Outcome::Done)
        }
        Command::Fit {
            transmittance,
            phase,
            run,
        } => {
            let l = run.load("undercoupled")?;
            let t_rows = io::parse_spectrum_csv(&std::fs::read_to_string(&transmittance)?)?;
            let t = io::usable_points(&t_rows);
            let s = &l.scenario;
            let fit = match phase {
                Some(p) => {
                    let ph =
                        io::usable_points(&io::parse_spectrum_csv(&std::fs::read_to_string(p)?)?);
                    fitting::fit_joint(&t, &ph, &s.params, None, &s.fit)?
                }
                None => fitting::fit_transmittance(&t, &s.params, None, &s.fit)?,
            };
            write(
                &run.out,
                "fit.json",
                &io::json_with_provenance("fit", &fit, &l.prov)?,
            )?;
            if fit.degenerate {
                eprintln!("warning: transmittance alone cannot tell under- from overcoupling; pass --phase");
            }
            if fit.converged {
                Ok(Outcome::Done)
            } else {
                Ok(Outcome::NotConverged("fit did not converge".into()))
            }
        }
        Command::Figure {
            kind,
            config_over,
            run,
        } => match kind {
            FigureKind::Fig2 => {
                let under = run.load("undercoupled")?;
                let over = resolve(
                    load_config(config_over.as_deref(), None, "overcoupled")?,
                    run.seed,
                )?;
                let f = pipeline::fig2(&under.scenario, &over.scenario)?;
                let prov = Provenance::new(
                    fibersphere::config::sha256_hex(
                        format!("{}{}", under.prov.config_sha256, over.prov.config_sha256)
                            .as_bytes(),
                    ),
                    under.prov.seed,
                );
                for p in &f.panels {
                    write(
                        &run.out,
                        &format!("{}.csv", p.name),
                        &io::panel_csv(&p.rows, &prov)?,
                    )?;
                }
                let summary = serde_json::json!({
                    "undercoupled": f.undercoupled,
                    "overcoupled": f.overcoupled,
                    "config_sha256": [under.prov.config_sha256, over.prov.config_sha256],
                });
                write(
                    &run.out,
                    "fig2_summary.json",
                    &io::json_with_provenance("summary", &summary, &prov)?,
                )?;
                Ok(Outcome::Done)
            }
            FigureKind::Fig3 => {
                let l = run.load("gap_scan")?;
                let f = pipeline::fig3(&l.scenario)?;
                write(&run.out, "fig3.csv", &io::scan_csv(&f.rows, &l.prov)?)?;
                let fit = serde_json::json!({"fit": f.fit, "note": f.fit_note});
                write(
                    &run.out,
                    "fig3_fit.json",
                    &io::json_with_provenance("gap_fit", &fit, &l.prov)?,
                )?;
                Ok(Outcome::Done)
            }
        },
        Command::Presets { name } => {
            match name {
                Some(n) => {
                    let text = presets::text(&n)
                        .ok_or_else(|| Error::Config(format!("unknown preset `{n}`")))?;
                    print!("{text}");
                }
                None => {
                    for (n, _) in presets::ALL {
                        println!("{n}");
                    }
                }
            }
            Ok(Outcome::Done)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else if e.is_io() {
        4
    } else {
        3
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
