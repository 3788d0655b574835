//! `hmimo`: channel estimation experiments for holographic MIMO arrays.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hmimo_core::score;
use hmimo_harness::commands::{self, EvalInputs, NoiseSource};
use hmimo_harness::{ExperimentConfig, Runner};

#[derive(Debug, Parser)]
#[command(name = "hmimo", version, about = "Score-based channel estimation experiments")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured spatial correlation matrix.
    GenCorrelation,

    /// Write training (pilots only) and test (pilots and truth) datasets.
    GenDataset {
        #[arg(long)]
        snr: Option<f64>,
        /// Hybrid under-sampling ratio; fully digital when omitted.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        train_size: Option<usize>,
        #[arg(long)]
        test_size: Option<usize>,
    },

    /// Train a score model on a fully-digital pilot file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training noise level: `meta`, `pca` or a real-domain std.
        #[arg(long, default_value = "meta")]
        noise: NoiseSource,
        #[arg(long)]
        epochs: Option<usize>,
    },

    /// Estimate the noise level of every pilot in a file.
    EstimateNoise {
        #[arg(long)]
        data: PathBuf,
    },

    /// Run estimators over a test file and write a CSV report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Score model; repeat to form a bank for hybrid data.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Training pilots for the sample-covariance baseline.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Correlation file for the oracle; rebuilt from the config when omitted.
        #[arg(long)]
        correlation: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "ls,oracle-mmse,score-true,score-pca")]
        methods: Vec<String>,
    },

    /// Stream pilots through online adaptation of a trained model.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        window: usize,
    },

    /// Reproduce a figure or table as CSV.
    Reproduce {
        target: Target,
        /// Cache trained models here and reuse them across runs.
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Target {
    Fig4a,
    Fig4b,
    Fig4c,
    Fig5,
    Fig6,
    Table2,
}

impl Target {
    fn name(self) -> &'static str {
        match self {
            Self::Fig4a => "fig4a",
            Self::Fig4b => "fig4b",
            Self::Fig4c => "fig4c",
            Self::Fig5 => "fig5",
            Self::Fig6 => "fig6",
            Self::Table2 => "table2",
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = &cli.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    match cli.command {
        Command::GenCorrelation => {
            let p = commands::gen_correlation(&cfg, out)?;
            println!("{}", p.display());
        }
        Command::GenDataset {
            snr,
            ratio,
            train_size,
            test_size,
        } => {
            if let Some(s) = snr {
                cfg.data.snr_db = s;
            }
            if ratio.is_some() {
                cfg.data.under_sampling_ratio = ratio;
            }
            if let Some(m) = train_size {
                cfg.data.train_size = m;
            }
            if let Some(l) = test_size {
                cfg.data.test_size = l;
            }
            cfg.validate()?;
            let (train, test) = commands::gen_dataset(&cfg, out)?;
            println!("{}\n{}", train.display(), test.display());
        }
        Command::Train { data, noise, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let p = commands::train(&cfg, &data, noise, out, cli.verbose)?;
            println!("{}", p.display());
        }
        Command::EstimateNoise { data } => {
            let report = commands::estimate_noise(&cfg, &data)?;
            let pca: Vec<f64> = report.filter("pca").map(|r| r.sigma_hat).collect();
            if let Some(first) = report.rows.first() {
                let acc = hmimo_core::noise_pca::accuracy(&pca, first.sigma_true);
                println!(
                    "{} pilots: mean sigma_hat {:.6} (true {:.6}), error {:.2}%",
                    pca.len(),
                    pca.iter().sum::<f64>() / pca.len() as f64,
                    first.sigma_true,
                    100.0 * acc.percent_error
                );
            }
            let p = out.join("noise.csv");
            commands::write_report(&report, &p)?;
            println!("{}", p.display());
        }
        Command::Eval {
            data,
            models,
            train,
            correlation,
            methods,
        } => {
            let inputs = EvalInputs {
                models: &models,
                train: train.as_deref(),
                correlation: correlation.as_deref(),
                methods: &methods,
            };
            let report = commands::eval(&cfg, &data, &inputs)?;
            for r in &report.rows {
                println!("{:<14} {:>8.3} dB", r.method, r.nmse_db);
            }
            let p = out.join("eval.csv");
            commands::write_report(&report, &p)?;
            println!("{}", p.display());
        }
        Command::Adapt { model, data, window } => {
            let (adapted, report) = commands::adapt(&cfg, &model, &data, window)?;
            let mp = out.join("adapted.hmsm");
            score::io::save(&adapted, &mp)?;
            println!("{}", mp.display());
            if !report.rows.is_empty() {
                let p = out.join("adapt.csv");
                commands::write_report(&report, &p)?;
                println!("{}", p.display());
            }
        }
        Command::Reproduce { target, models } => {
            let mut runner = Runner::new(cfg)?.verbose(cli.verbose);
            if let Some(dir) = models {
                runner = runner.with_model_dir(dir);
            }
            let p = out.join(format!("{}.csv", target.name()));
            match target {
                Target::Table2 => commands::write_noise_table(&runner.table2()?, &p)?,
                Target::Fig4a => commands::write_report(&runner.fig4a()?, &p)?,
                Target::Fig4b => commands::write_report(&runner.fig4b()?, &p)?,
                Target::Fig4c => commands::write_report(&runner.fig4c()?, &p)?,
                Target::Fig5 => commands::write_report(&runner.fig5()?, &p)?,
                Target::Fig6 => commands::write_report(&runner.fig6()?, &p)?,
            }
            println!("{}", p.display());
        }
    }
    Ok(())
}
