use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gnm_lab::data::synth_dataset;
use gnm_lab::harness::{
    compare_runs, landscape_for, load_checkpoint, parse_config, restore_into, train, write_landscape_csv, RunConfig,
    RunReport, RunStatus, CHECKPOINT_FILE, REPORT_FILE,
};
use gnm_lab::landscape::flatness_score;
use gnm_lab::models::ModelState;
use gnm_lab::optim::OptimizerKind;

#[derive(Parser)]
#[command(name = "gnm-lab", version, about = "Train and compare SGD, SAM and GNM on synthetic long-tailed data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-stage training experiment described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        optimizer: Option<OptimizerKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the report and checkpoint [default: out].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the trained model's loss landscape as CSV.
        #[arg(long)]
        landscape: Option<PathBuf>,
        /// Export the generated training set as text.
        #[arg(long)]
        dump_data: Option<PathBuf>,
    },
    /// Print a side-by-side table of run reports; the first is the baseline.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Evaluate a loss landscape around a saved checkpoint.
    Landscape {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

type CliResult<T> = std::result::Result<T, String>;

fn read(path: &PathBuf) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn load_config(path: &PathBuf) -> CliResult<RunConfig> {
    parse_config(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config,
            optimizer,
            seed,
            out,
            landscape,
            dump_data,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(kind) = optimizer {
                cfg.optim.kind = kind;
            }
            if let Some(seed) = seed {
                cfg = cfg.with_seed(seed);
            }
            cfg.out_dir = out.or(cfg.out_dir).or_else(|| Some(PathBuf::from("out")));
            cfg.landscape_csv = landscape;
            cfg.dump_data = dump_data;
            let run = train(&cfg).map_err(|e| e.to_string())?;
            let s = &run.report.summary;
            if let RunStatus::Aborted { reason } = &s.status {
                return Err(format!("training aborted: {reason}"));
            }
            let dir = cfg.out_dir.as_ref().expect("set above");
            if let Some(acc) = &s.final_accuracy {
                println!(
                    "{} seed {}: overall {:.4} tail {} after {} epochs; wrote {} and {}",
                    cfg.optim.kind,
                    cfg.seed,
                    acc.overall,
                    acc.tail.map_or("-".to_string(), |t| format!("{t:.4}")),
                    s.epochs,
                    dir.join(REPORT_FILE).display(),
                    dir.join(CHECKPOINT_FILE).display()
                );
            }
            if let Some(l) = &s.landscape {
                println!("landscape center {:.6} flatness {:?}", l.center, l.flatness);
            }
            Ok(())
        }
        Command::Compare { reports } => {
            let loaded = reports
                .iter()
                .map(|p| {
                    let r = RunReport::from_jsonl(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?;
                    Ok((p.display().to_string(), r))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let table = compare_runs(&loaded).map_err(|e| e.to_string())?;
            print!("{table}");
            Ok(())
        }
        Command::Landscape { checkpoint, config, out } => {
            let cfg = load_config(&config)?;
            let file = File::open(&checkpoint).map_err(|e| format!("cannot open {}: {e}", checkpoint.display()))?;
            let (params, seed) = load_checkpoint(file).map_err(|e| e.to_string())?;
            let cfg = if seed == cfg.seed { cfg } else { cfg.with_seed(seed) };
            let mut spec = cfg.data.clone();
            spec.seed = cfg.seed;
            let dataset = synth_dataset(&spec).map_err(|e| e.to_string())?;
            let mut model = ModelState::init(cfg.model_config(), cfg.seed).map_err(|e| e.to_string())?;
            restore_into(&mut model.trainable, &params).map_err(|e| e.to_string())?;
            let grid = landscape_for(&cfg, &dataset, &model).map_err(|e| e.to_string())?;
            write_landscape_csv(&grid, &out).map_err(|e| e.to_string())?;
            match flatness_score(&grid) {
                Ok(f) => println!("{}x{} grid, center {:.6}, flatness {f:.6}", grid.resolution, grid.resolution, grid.center),
                Err(e) => println!("{}x{} grid, center {:.6}; {e}", grid.resolution, grid.resolution, grid.center),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(reason) => {
            eprintln!("error: {}", reason.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
