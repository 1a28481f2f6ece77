use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dwdob::harness::{
    compare_controllers, misalignment_sweep, run_scenario, Preset, Scenario, SweepSpec,
};
use dwdob::observers::ControllerKind;
use dwdob::Result;

#[derive(Parser)]
#[command(
    name = "dwdob",
    version,
    about = "Peg-in-hole wrench observer experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML). Overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// RNG seed; replaces the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "nominal")]
    preset: Preset,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace and summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Controller used with --preset (PD_l, PD_h, CWDOB, DWDOB).
        #[arg(long, default_value = "DWDOB")]
        controller: ControllerKind,
    },
    /// Run all four controllers on the same setup and rank them.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a scenario over evenly spaced initial tilts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "DWDOB")]
        controller: ControllerKind,
        #[arg(long, default_value_t = 15)]
        trials: usize,
        /// Largest tilt magnitude, rad.
        #[arg(long, default_value_t = 0.02)]
        bound: f64,
    },
    /// Check a scenario file, or print the resolved scenario with --print.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "DWDOB")]
        controller: ControllerKind,
        #[arg(long)]
        print: bool,
    },
}

fn scenario(common: &Common, controller: ControllerKind) -> Result<Scenario> {
    let mut s = match &common.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::preset(common.preset, controller),
    };
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn with_controller(base: &Scenario, kind: ControllerKind) -> Scenario {
    let mut s = base.clone();
    s.controller = kind;
    s.gain_set = kind.gain_set();
    let suffix = base
        .name
        .split_once('-')
        .map_or(base.name.as_str(), |(_, rest)| rest);
    s.name = format!("{}-{suffix}", kind.label());
    s
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { common, controller } => {
            let s = scenario(&common, controller)?;
            prepare(&common.out)?;
            let (trace, summary) = run_scenario(&s)?;
            trace.save_csv(&common.out.join(format!("{}.csv", s.name)))?;
            summary.save(&common.out.join(format!("{}.summary.json", s.name)))?;
            println!(
                "{}: depth {:.3} mm, peak force {:.2} N, peak moment {:.3} N*m, max rho {:.3e} J, stop {}",
                s.name,
                summary.final_depth * 1e3,
                summary.max_force,
                summary.max_moment,
                summary.max_rho,
                summary.stop_reason.as_str()
            );
            Ok(if summary.stop_reason.is_stop() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Compare { common } => {
            let base = scenario(&common, ControllerKind::Dwdob)?;
            let scenarios: Vec<Scenario> = ControllerKind::ALL
                .into_iter()
                .map(|k| with_controller(&base, k))
                .collect();
            prepare(&common.out)?;
            let cmp = compare_controllers(&scenarios)?;
            let file = std::fs::File::create(common.out.join("comparison.csv"))?;
            cmp.write_csv(std::io::BufWriter::new(file))?;
            std::fs::write(common.out.join("comparison.json"), cmp.to_json()? + "\n")?;
            for s in cmp.summaries() {
                println!(
                    "{:<20} depth {:7.3} mm  peak force {:7.2} N  stop {}",
                    s.name,
                    s.final_depth * 1e3,
                    s.max_force,
                    s.stop_reason.as_str()
                );
            }
            println!("depth ranking: {}", cmp.depth_ranking.join(" > "));
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            common,
            controller,
            trials,
            bound,
        } => {
            let base = scenario(&common, controller)?;
            prepare(&common.out)?;
            let report = misalignment_sweep(&SweepSpec::uniform(base, bound, trials))?;
            std::fs::write(common.out.join("sweep.json"), report.to_json()? + "\n")?;
            for t in &report.trials {
                println!(
                    "trial {:2} tilt {:+.4} rad  depth {:7.3} mm  stop {:6}  {}",
                    t.index,
                    t.tilt,
                    t.final_depth * 1e3,
                    t.stop_reason.as_str(),
                    if t.success { "ok" } else { "FAIL" }
                );
            }
            println!("{}/{} successful", report.successes, report.trials.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate {
            common,
            controller,
            print,
        } => {
            let s = scenario(&common, controller)?;
            if print {
                print!("{}", s.to_toml()?);
            } else {
                println!("{}: ok", s.name);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
