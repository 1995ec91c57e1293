//! `dacrm`: simulate operating characteristics, calibrate event-time laws and
//! replay conducted trials.
//!
//! Replications run on the rayon pool; set RAYON_NUM_THREADS to size it.
//! Results do not depend on the thread count.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dacrm_core::calibration::{calibrate, ToxTimeFamily, ToxTimeLaw};
use dacrm_core::comparators::TiteWeighting;
use dacrm_core::replay::{format_report, replay, ReplayFile};
use dacrm_core::sim::{
    load_scenario_file, operating_characteristics, simulate_many, write_csv, write_text_report, DesignResult,
    DesignSettings,
};
use dacrm_core::DesignKind;

#[derive(Parser)]
#[command(name = "dacrm", version, about = "Data-augmentation CRM for late-onset toxicities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trials under a scenario file and report operating characteristics.
    Simulate(SimulateArgs),
    /// Fit a time-to-toxicity law to a toxicity probability and late-onset fraction.
    Calibrate(CalibrateArgs),
    /// Replay a conducted trial and print the decision at each cohort.
    Replay(ReplayArgs),
}

/// Overrides for the `[design]` section of an input file.
#[derive(Args)]
struct ModelOverrides {
    /// Number of hazard intervals K.
    #[arg(long)]
    k_partitions: Option<usize>,
    /// Prior variance of the CRM parameter.
    #[arg(long)]
    prior_variance: Option<f64>,
    /// Gamma prior variance constant C.
    #[arg(long)]
    c_constant: Option<f64>,
    #[arg(long, value_parser = ["linear", "adaptive"])]
    tite_weighting: Option<String>,
}

impl ModelOverrides {
    fn apply(&self, settings: &mut DesignSettings) -> Result<()> {
        if let Some(k) = self.k_partitions {
            settings.k_partitions = k;
        }
        if let Some(v) = self.prior_variance {
            settings.prior_variance = v;
        }
        if let Some(c) = self.c_constant {
            settings.c_constant = c;
        }
        if let Some(w) = &self.tite_weighting {
            settings.tite_weighting = w.parse::<TiteWeighting>()?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated designs: dacrm, obs, tite, tite-adaptive, comp.
    #[arg(long, value_delimiter = ',', default_value = "dacrm,obs,tite,comp")]
    designs: Vec<String>,
    /// Simulated trials per design.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Directory for `<scenario>.csv` and `<scenario>.txt`.
    #[arg(long, default_value = ".")]
    output: PathBuf,
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    family: ToxTimeFamily,
    /// Toxicity probability within the assessment window.
    #[arg(long)]
    p: f64,
    /// Assessment window length.
    #[arg(long = "T", visible_alias = "horizon")]
    horizon: f64,
    /// Fraction of toxicities in the second half of the window.
    #[arg(long, default_value_t = 0.7)]
    late: f64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trial file (TOML) with the design and one entry per patient.
    file: PathBuf,
    /// dacrm, obs, tite or tite-adaptive.
    #[arg(long, default_value = "dacrm")]
    design: DesignKind,
    /// Overrides the chain seed in the file.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelOverrides,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let (scenario, mut settings) = load_scenario_file(&args.scenario)?;
    args.model.apply(&mut settings)?;
    let kinds = args
        .designs
        .iter()
        .map(|d| d.parse::<DesignKind>())
        .collect::<dacrm_core::Result<Vec<_>>>()?;
    if kinds.is_empty() {
        bail!("no designs given");
    }
    let mut results = Vec::new();
    for kind in kinds {
        let design = settings.config(kind, scenario.horizon)?;
        let start = Instant::now();
        let outcomes = simulate_many(&scenario, &design, args.reps as usize, args.seed)?;
        let oc = operating_characteristics(&outcomes, &scenario.true_probs, design.crm.target)?;
        eprintln!(
            "{}: {} trials in {:.1}s",
            design.kind.label(),
            args.reps,
            start.elapsed().as_secs_f64()
        );
        results.push(DesignResult::new(&scenario, design.kind.label(), oc));
    }

    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let csv_path = args.output.join(format!("{}.csv", scenario.name));
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_csv(&results, file)?;
    let report = write_text_report(&results);
    let txt_path = args.output.join(format!("{}.txt", scenario.name));
    fs::write(&txt_path, &report).with_context(|| format!("writing {}", txt_path.display()))?;
    print!("{report}");
    eprintln!("wrote {} and {}", csv_path.display(), txt_path.display());
    Ok(())
}

fn calibrate_cmd(args: &CalibrateArgs) -> Result<()> {
    if args.family == ToxTimeFamily::Uniform {
        println!(
            "uniform: no parameters to fit; a toxicity occurs with probability {} at a time uniform on (0, {}]",
            args.p, args.horizon
        );
        return Ok(());
    }
    match calibrate(args.family, args.p, args.horizon, args.late)? {
        ToxTimeLaw::Weibull { shape, scale } | ToxTimeLaw::LogLogistic { shape, scale } => {
            println!("family = {}", args.family);
            println!("shape = {shape:.6}");
            println!("scale = {scale:.6}");
        }
        ToxTimeLaw::Uniform { .. } => unreachable!("uniform handled above"),
    }
    Ok(())
}

fn replay_cmd(args: &ReplayArgs) -> Result<()> {
    let mut file = ReplayFile::load(&args.file)?;
    args.model.apply(&mut file.design)?;
    if let Some(seed) = args.seed {
        file.design.mcmc.seed = seed;
    }
    let report = replay(&file, args.design)?;
    print!("{}", format_report(&file, &report));
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Replay(a) => replay_cmd(a),
    }
}
