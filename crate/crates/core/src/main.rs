//! Command-line front end over the pipeline: dataset generation, training,
//! design, evaluation, and the SA baseline.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use msdesign::autodiff::Tape;
use msdesign::config::TrainConfig;
use msdesign::dataset::{Dataset, DesignRecord};
use msdesign::annealing::SaConfig;
use msdesign::oracle::SpectralResponse;
use msdesign::pipeline;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "msdesign", about = "Surrogate-assisted GAN inverse design of ternary patterns")]
struct Cli {
    /// JSON config file; unset fields fall back to defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data generation and evaluation
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an oracle-labeled dataset
    GenData {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the forward surrogate and write its checkpoint
    TrainSurrogate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the GAN against a frozen surrogate checkpoint
    TrainXgan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Design one pattern for a target response
    Design(DesignArgs),
    /// Score a designs file against a targets file
    Evaluate {
        #[arg(long)]
        designs: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// "oracle" or a path to a surrogate checkpoint
        #[arg(long, default_value = "oracle")]
        mode: String,
        /// Write the metrics report JSON here (stdout otherwise)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-design MAE CSV path
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Simulated-annealing baseline over a targets file
    BaselineSa {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-target trace CSVs
        #[arg(long)]
        traces: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DesignArgs {
    /// Single-record dataset file holding the target, or an index into the
    /// held-out split of --data
    #[arg(long)]
    target: String,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generator checkpoint
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    attempts: Option<usize>,
    /// Write the designed pattern as a single-record dataset here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let mut cfg = match &cli.config {
        Some(path) => match TrainConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.data_seed = seed;
        cfg.surrogate_seed = seed.wrapping_add(1);
        cfg.gan_seed = seed.wrapping_add(2);
        cfg.sa_seed = seed.wrapping_add(3);
    }
    match run(cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command, cfg: &TrainConfig) -> Result<()> {
    match cmd {
        Command::GenData { samples, out } => {
            let n = samples.unwrap_or(cfg.samples);
            let ds = pipeline::gen_data(n, cfg.data_seed, &out)?;
            println!("wrote {} records to {}", ds.len(), out.display());
        }
        Command::TrainSurrogate { data, out } => {
            let ds = Dataset::load(&data)?;
            let report = pipeline::run_train_surrogate(&ds, cfg, &out)?;
            println!(
                "surrogate: test MAE_ave {:.4} ACC_ave {:.4} R2 {:.4}; checkpoint {}",
                report.final_mae_ave,
                report.final_acc_ave,
                report.final_r2,
                out.display()
            );
        }
        Command::TrainXgan { data, surrogate, out } => {
            if !surrogate.exists() {
                anyhow::bail!(
                    "surrogate checkpoint {} not found; pass a trained model via --surrogate",
                    surrogate.display()
                );
            }
            let ds = Dataset::load(&data)?;
            let report = pipeline::run_train_xgan(&ds, &surrogate, cfg, &out)?;
            let last = report.steps.last().context("no training steps")?;
            println!(
                "xgan: {} steps, final L_G {:.4} L_D {:.4}; generator {}",
                report.steps.len(),
                last.l_g,
                last.l_d,
                out.display()
            );
        }
        Command::Design(args) => run_design(args, cfg)?,
        Command::Evaluate { designs, targets, mode, out, csv } => {
            let designs_ds = Dataset::load(&designs)?;
            let targets_ds = Dataset::load(&targets)?;
            let patterns: Vec<_> = designs_ds.records.iter().map(|r| r.pattern.clone()).collect();
            let responses: Vec<_> = targets_ds.records.iter().map(|r| r.response.clone()).collect();
            let (report, maes) = if mode == "oracle" {
                pipeline::evaluate_oracle(&patterns, &responses)?
            } else {
                let mut tape: Tape<f32> = Tape::new();
                let model = pipeline::load_surrogate(&mut tape, Path::new(&mode))?;
                pipeline::evaluate_surrogate(&model, &mut tape, &patterns, &responses)?
            };
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, &json).context("writing report")?,
                None => println!("{json}"),
            }
            if let Some(p) = csv {
                let mut text = String::from("design,mae\n");
                for (i, m) in maes.iter().enumerate() {
                    text.push_str(&format!("{i},{m}\n"));
                }
                std::fs::write(&p, text).context("writing per-design csv")?;
            }
        }
        Command::BaselineSa { targets, surrogate, out, traces } => {
            if !surrogate.exists() {
                anyhow::bail!(
                    "surrogate checkpoint {} not found; pass a trained model via --surrogate",
                    surrogate.display()
                );
            }
            let targets_ds = Dataset::load(&targets)?;
            let responses: Vec<SpectralResponse> =
                targets_ds.records.iter().map(|r| r.response.clone()).collect();
            let mut tape: Tape<f32> = Tape::new();
            let model = pipeline::load_surrogate(&mut tape, &surrogate)?;
            let sa = SaConfig {
                t0: cfg.sa_t0,
                alpha: cfg.sa_alpha,
                moves_per_temp: cfg.sa_moves_per_temp,
                t_min: cfg.sa_t_min,
                max_moves: cfg.sa_max_moves,
                seed: cfg.sa_seed,
            };
            let started = std::time::Instant::now();
            let results = pipeline::sa_batch(&model, &mut tape, &responses, &sa);
            let per_design = started.elapsed().as_secs_f64() / responses.len() as f64;
            let records: Vec<DesignRecord> = results
                .iter()
                .map(|(p, _)| DesignRecord {
                    pattern: p.clone(),
                    response: msdesign::oracle::simulate(p),
                })
                .collect();
            Dataset::new(records).save(&out)?;
            if let Some(dir) = traces {
                std::fs::create_dir_all(&dir).context("creating trace directory")?;
                for (i, (_, trace)) in results.iter().enumerate() {
                    std::fs::write(dir.join(format!("target{i}.csv")), trace.to_csv())?;
                }
            }
            println!(
                "sa: {} designs to {}; {:.3} s per design",
                results.len(),
                out.display(),
                per_design
            );
        }
    }
    Ok(())
}

fn run_design(args: DesignArgs, cfg: &TrainConfig) -> Result<()> {
    let target: SpectralResponse = if let Ok(index) = args.target.parse::<usize>() {
        let data = args
            .data
            .context("an index target needs --data pointing at the dataset")?;
        let ds = Dataset::load(&data)?;
        let (_, test) = ds.split(cfg.split);
        anyhow::ensure!(index < test.len(), "index {index} outside the held-out split");
        test[index].response.clone()
    } else {
        let ds = Dataset::load(Path::new(&args.target))?;
        anyhow::ensure!(!ds.is_empty(), "empty target file");
        ds.records[0].response.clone()
    };
    let mut tape: Tape<f32> = Tape::new();
    let gen = pipeline::load_generator(&mut tape, &args.model)?;
    let tau = args.tau.unwrap_or(cfg.tau);
    let attempts = args.attempts.unwrap_or(cfg.max_attempts);
    let out = pipeline::design_batch(
        &gen,
        &mut tape,
        std::slice::from_ref(&target),
        tau,
        attempts,
        cfg.gan_seed,
    );
    let (pattern, mae) = &out[0];
    println!("{}", pattern.to_text());
    println!("achieved MAE {mae:.4}");
    if let Some(path) = args.out {
        let rec = DesignRecord {
            pattern: pattern.clone(),
            response: msdesign::oracle::simulate(pattern),
        };
        Dataset::new(vec![rec]).save(&path)?;
    }
    Ok(())
}
