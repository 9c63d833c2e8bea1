use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dfrc::array::generate_scene;
use dfrc::harness::{run_experiment, run_pipeline, trial_rng, ExperimentConfig, ExperimentId};
use dfrc::Scene;

#[derive(Parser)]
#[command(name = "dfrc", version, about = "Hybrid-array radar-communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write its CSV files.
    Figure {
        /// fig4 .. fig13
        #[arg(long)]
        id: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// TOML file overriding the figure defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run target search, DL design and one tracking PRI and print a report.
    Pipeline {
        /// TOML file, or `default`.
        #[arg(long, default_value = "default")]
        config: String,
    },
    /// Generate or inspect scene files.
    Scene {
        #[command(subcommand)]
        action: SceneAction,
    },
}

#[derive(Subcommand)]
enum SceneAction {
    /// Draw a random scene and save it as TOML.
    Gen {
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        l: usize,
        #[arg(long, default_value_t = 180)]
        slices: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a scene file.
    Show { file: PathBuf },
}

fn figure(id: &str, trials: Option<usize>, seed: Option<u64>, out: PathBuf, config: Option<PathBuf>) -> dfrc::Result<()> {
    let id: ExperimentId = id.parse()?;
    if id == ExperimentId::Pipeline {
        return Err(dfrc::Error::InvalidConfig("`pipeline` is a separate subcommand".into()));
    }
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::for_experiment(id),
    };
    cfg.experiment_id = id;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let output = run_experiment(&cfg)?;
    for p in output.write_to(&out)? {
        println!("wrote {}", p.display());
    }
    for (k, v) in &output.summary {
        println!("{k} = {v:.4}");
    }
    Ok(())
}

fn pipeline(config: &str) -> dfrc::Result<()> {
    let cfg = if config == "default" {
        ExperimentConfig::default()
    } else {
        ExperimentConfig::load(config.as_ref())?
    };
    print!("{}", run_pipeline(&cfg)?);
    Ok(())
}

fn scene(action: SceneAction) -> dfrc::Result<()> {
    match action {
        SceneAction::Gen { k, l, slices, seed, out } => {
            let scene = generate_scene(k, l, slices, &mut trial_rng(seed, 0, 0))?;
            match out {
                Some(p) => scene.save(&p)?,
                None => print!("{}", scene.to_toml_string()?),
            }
        }
        SceneAction::Show { file } => {
            let s = Scene::load(&file)?;
            println!("K = {}, L = {}", s.k(), s.l());
            for (i, (a, g)) in s.target_angles_deg.iter().zip(&s.target_gains).enumerate() {
                let role = if i < s.l() { "comm" } else { "radar" };
                println!("  target {i:>2} {role:<5} {a:>8.2} deg  gain {:.4}{:+.4}j", g.re, g.im);
            }
            for (i, (a, g)) in s.ue_aoas_deg.iter().zip(&s.comm_gains).enumerate() {
                println!("  path   {i:>2} UE AoA {a:>8.2} deg  gain {:.4}{:+.4}j", g.re, g.im);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Figure { id, trials, seed, out, config } => figure(&id, trials, seed, out, config),
        Command::Pipeline { config } => pipeline(&config),
        Command::Scene { action } => scene(action),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
