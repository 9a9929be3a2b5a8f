use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use gr_bench::config::{ExperimentConfig, SeedOverrides};
use gr_bench::idx::write_idx_dataset;
use gr_bench::pipeline::{self, MODEL_FILE};
use gr_bench::report::{self, RunResults};
use gr_bench::trend::{trend, trend_csv};
use gr_core::guidance::{format_hms, timed_scoring, write_scores_csv, Metric};
use gr_core::retrainer::run_experiment;
use gr_core::{load_model, save_model, Model, RetrainKind};

#[derive(Parser)]
#[command(name = "gr", version, about = "Metric-guided adversarial retraining experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_shuffle: Option<u64>,
    #[arg(long)]
    seed_attack: Option<u64>,
    #[arg(long)]
    seed_random: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let seeds = SeedOverrides {
            init: self.seed_init,
            shuffle: self.seed_shuffle,
            attack: self.seed_attack,
            random: self.seed_random,
        };
        let cfg = ExperimentConfig::from_file(&self.config, &seeds)
            .with_context(|| format!("reading {}", self.config.display()))?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out)?;
        Ok((cfg, out))
    }
}

#[derive(Args)]
struct ModelArg {
    /// Original model file; trained from the config when absent.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model and save it.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Build the adversarial sets and write them as IDX files.
    Attack {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Score Train* with one guidance metric.
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        metric: Metric,
    },
    /// Run the 20-point sweep of one configuration and metric.
    Retrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        kind: RetrainKind,
        #[arg(long)]
        metric: Metric,
    },
    /// Run the full pipeline.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Re-derive and check the tables of a finished run; with `--trend`,
    /// compare C2 sweeps across several runs.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Run directories to compare; the trend table goes to `--out`.
        #[arg(long, num_args = 1..)]
        trend: Vec<PathBuf>,
    },
}

fn original(cfg: &ExperimentConfig, arg: &ModelArg, train: &gr_core::Dataset<f32>) -> anyhow::Result<Model> {
    Ok(match &arg.model {
        Some(path) => load_model(path).with_context(|| format!("loading {}", path.display()))?,
        None => pipeline::train_original(cfg, train)?,
    })
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GR_THREADS") {
        let n: usize = v.parse().with_context(|| format!("GR_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    configure_threads()?;
    match Cli::parse().command {
        Command::Train { common } => {
            let (cfg, out) = common.load()?;
            let (train, test) = pipeline::load_data(&cfg)?;
            let model = pipeline::train_original(&cfg, &train)?;
            save_model(&model, out.join(MODEL_FILE))?;
            println!("test accuracy {:.4}", model.accuracy(&test)?);
            println!("wrote {}", out.join(MODEL_FILE).display());
        }
        Command::Attack { common, model } => {
            let (cfg, out) = common.load()?;
            let (train, test) = pipeline::load_data(&cfg)?;
            let m = original(&cfg, &model, &train)?;
            let sets = pipeline::augment(&cfg, &m, &train, &test)?;
            println!(
                "accuracy test {:.4}, adv-test {:.4}, test* {:.4}",
                m.accuracy(&sets.test)?,
                m.accuracy(&sets.adv_test)?,
                m.accuracy(&sets.test_star)?
            );
            write_idx_dataset(&sets.adv_train, out.join("adv-train-images.idx"), out.join("adv-train-labels.idx"))?;
            write_idx_dataset(&sets.adv_test, out.join("adv-test-images.idx"), out.join("adv-test-labels.idx"))?;
            let mut prov = String::from("train_star_id,source_id\n");
            for (id, src) in sets.provenance() {
                prov.push_str(&format!("{id},{src}\n"));
            }
            write(&out, "provenance.csv", prov)?;
        }
        Command::Score { common, model, metric } => {
            let (cfg, out) = common.load()?;
            let (train, test) = pipeline::load_data(&cfg)?;
            let m = original(&cfg, &model, &train)?;
            let sets = pipeline::augment(&cfg, &m, &train, &test)?;
            let ts = timed_scoring(metric, &m, &sets.train_star, &cfg.guidance)?;
            let mut buf = Vec::new();
            write_scores_csv(&ts.scores, &mut buf)?;
            write(&out, &pipeline::scores_file_name(metric), buf)?;
            println!("{metric} took {}", format_hms(ts.elapsed));
        }
        Command::Retrain {
            common,
            model,
            kind,
            metric,
        } => {
            let (cfg, out) = common.load()?;
            let (train, test) = pipeline::load_data(&cfg)?;
            let m = original(&cfg, &model, &train)?;
            let sets = pipeline::augment(&cfg, &m, &train, &test)?;
            let ts = timed_scoring(metric, &m, &sets.train_star, &cfg.guidance)?;
            let record = run_experiment(kind, &m, &sets, &ts.scores, ts.elapsed, &pipeline::retrain_params(&cfg))?;
            println!(
                "{kind} {metric}: best {:.4} with {}",
                record.summary.best_accuracy,
                record.summary.utilization_fraction()
            );
            save_model(&record.best_model, out.join(pipeline::best_model_file_name(&record)))?;
            let run = RunResults {
                dataset: cfg.name.clone(),
                original_accuracy: m.accuracy(&sets.test_star)?,
                sweeps: vec![record.summary],
            };
            for (name, body) in report::derived_tables(&run)? {
                write(&out, &name, body)?;
            }
        }
        Command::Run { common } => {
            let (cfg, out) = common.load()?;
            let bundle = pipeline::run_pipeline(&cfg, &out)?;
            print!("{}", report::summary_csv(&bundle.results)?);
            for (m, d) in &bundle.metric_times {
                println!("{m} scoring took {}", format_hms(*d));
            }
            println!("wrote {} files to {}", bundle.artifacts.len() + 1, out.display());
        }
        Command::Report { out, trend: dirs } => {
            if dirs.is_empty() {
                let run = report::consistency_check(&out)?;
                print!("{}", report::summary_csv(&run)?);
                println!("{} is consistent", out.display());
            } else {
                if dirs.len() < 2 {
                    bail!("a trend needs at least two runs");
                }
                let runs = dirs
                    .iter()
                    .map(|d| {
                        let text = fs::read_to_string(d.join(report::POINTS_FILE))
                            .with_context(|| format!("reading {}", d.display()))?;
                        Ok((d.display().to_string(), report::parse_points(&text)?))
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?;
                let t = trend(&runs, RetrainKind::C2)?;
                fs::create_dir_all(&out)?;
                write(&out, "trend.csv", trend_csv(&t)?)?;
                for (m, mean) in &t.means {
                    println!("{m}: mean size at 95% {mean:.1}");
                }
                println!(
                    "best surprise metric {} {} Random",
                    t.best_sa,
                    if t.holds { "needs no more inputs than" } else { "needs more inputs than" }
                );
            }
        }
    }
    Ok(())
}
