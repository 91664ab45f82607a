use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kspace::baselines::{emrt_select, fixed_mask_eval, greedy_sequence, sequence_eval, vds_policy_eval};
use kspace::classifier::{train_classifier, train_image_classifier, KspaceNet, RewardModel, TrainConfig};
use kspace::data::{build_dataset, read_dataset, write_dataset, Dataset, SplitName};
use kspace::env::{ActionMode, EnvSampling};
use kspace::harness::{
    ablation_flags, git_blob_hash, metric_rows, run_experiment, with_threads, write_masks, ExperimentConfig, MetricsTable,
    RunMode, RunOptions, DATASET_FILE, METRICS_FILE,
};
use kspace::ppo::{evaluate_policy, train_policy_with, Policy, RateEvaluation, TRAIN_LOG_HEADER};

#[derive(Parser)]
#[command(name = "kspace", version, about = "Adaptive k-space sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    env_sampling: Option<Sampling>,
    /// Comma-separated sampling rates, e.g. 0.05,0.08,0.10,0.125.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    /// Single-threaded, byte-reproducible execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strict,
    Penalty,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampling {
    Balanced,
    Naive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Vds,
    Greedy,
    Emrt,
    Image,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `<out>/dataset.kspc`.
    GenData(Common),
    /// Train the kspace-net (or, with `--image`, the image-domain reference).
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: bool,
    },
    /// Train a sampling policy against `<out>/classifier.knet`.
    TrainPolicy(Common),
    /// Evaluate `<out>/policy.kpol` on the test split.
    Evaluate(Common),
    /// Evaluate one baseline on the test split.
    Baseline {
        #[arg(value_enum)]
        method: Baseline,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize the metrics CSVs in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline from a config.
    Run {
        #[command(flatten)]
        common: Common,
        /// Reuse checkpoints of a previous run with the same config.
        #[arg(long, conflicts_with = "overwrite")]
        resume: bool,
        /// Delete a previous run in the output directory.
        #[arg(long)]
        overwrite: bool,
        #[arg(long)]
        quiet: bool,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(m) = self.mode {
            config.ppo.env.mode = match m {
                Mode::Strict => ActionMode::Strict,
                Mode::Penalty => ActionMode::Penalty,
            };
        }
        if let Some(s) = self.env_sampling {
            config.ppo.env.sampling = match s {
                Sampling::Balanced => EnvSampling::Balanced,
                Sampling::Naive => EnvSampling::Naive,
            };
        }
        if let Some(r) = &self.rates {
            config.rates = r.clone();
        }
        config.deterministic |= self.deterministic;
        config.validate()?;
        Ok(config)
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(DATASET_FILE);
    read_dataset(&path).with_context(|| format!("reading {} (run gen-data first)", path.display()))
}

fn load_classifier(dir: &Path, name: &str) -> Result<KspaceNet<f32>> {
    let path = dir.join(name);
    KspaceNet::load(&path).with_context(|| format!("reading {} (run train-classifier first)", path.display()))
}

fn write_table(dir: &Path, method: &str, table: &MetricsTable) -> Result<()> {
    let path = dir.join(format!("metrics_{method}.csv"));
    table.write_csv(&path)?;
    print!("{}", table.render_summary());
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn table_for(
    method: &str,
    seed: u64,
    dataset: &Dataset,
    val: &[RateEvaluation],
    test: &[RateEvaluation],
    config: &ExperimentConfig,
) -> Result<MetricsTable> {
    let labels = |s| dataset.split_records(s).iter().map(|r| r.label).collect::<Vec<u8>>();
    let (vl, tl) = (labels(SplitName::Val), labels(SplitName::Test));
    let mut table = MetricsTable::default();
    for row in metric_rows(method, seed, (val, &vl), (test, &tl), config.target_sensitivity)? {
        table.push(row)?;
    }
    let dir = config.out_dir.join("masks");
    fs::create_dir_all(&dir)?;
    let test_records = dataset.split_records(SplitName::Test);
    for ev in test {
        write_masks(&dir.join(format!("{method}_{}_test.tsv", ev.rate)), &test_records, ev)?;
    }
    Ok(table)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let mut config = c.config()?;
            config.dataset.seed = c.seed;
            fs::create_dir_all(&config.out_dir)?;
            let ds = with_threads(config.deterministic, || build_dataset(&config.dataset))??;
            let path = config.out_dir.join(DATASET_FILE);
            write_dataset(&path, &ds)?;
            println!("{}  {}", git_blob_hash(&fs::read(&path)?), path.display());
        }
        Command::TrainClassifier { common: c, image } => {
            let config = c.config()?;
            let ds = load_dataset(&config.out_dir)?;
            let train = TrainConfig {
                seed: c.seed,
                ..config.classifier.train.clone()
            };
            let prior = config.vds_prior()?;
            let (model, report) = with_threads(config.deterministic, || {
                if image {
                    train_image_classifier(&ds, &config.classifier.net, &train)
                } else {
                    train_classifier(&ds, &prior, &config.classifier.net, &train)
                }
            })??;
            let name = if image { "image.knet" } else { "classifier.knet" };
            let path = config.out_dir.join(name);
            model.save(&path)?;
            fs::write(path.with_extension("report.json"), serde_json::to_string_pretty(&report)?)?;
            for (rate, auc) in &report.val_auroc {
                println!("val auroc @ {rate}: {auc:.4}");
            }
            println!("checksum {}", model.checksum());
        }
        Command::TrainPolicy(c) => {
            let config = c.config()?;
            let ds = load_dataset(&config.out_dir)?;
            let model = load_classifier(&config.out_dir, "classifier.knet")?;
            let mut ppo = config.ppo.clone();
            ppo.seed = c.seed;
            let mut log = format!("{TRAIN_LOG_HEADER}\n");
            let (policy, _) = with_threads(config.deterministic, || {
                train_policy_with(ds.split_records(SplitName::Train), &model, &ppo, |line, _| {
                    eprintln!("{line}");
                    log.push_str(&format!("{line}\n"));
                    Ok(())
                })
            })??;
            policy.save(&config.out_dir.join("policy.kpol"))?;
            fs::write(config.out_dir.join("policy.log"), log)?;
        }
        Command::Evaluate(c) => {
            let config = c.config()?;
            let ds = load_dataset(&config.out_dir)?;
            let model = load_classifier(&config.out_dir, "classifier.knet")?;
            let policy = Policy::<f32>::load(&config.out_dir.join("policy.kpol"))?;
            let (val, test) = with_threads(config.deterministic, || -> Result<_> {
                Ok((
                    evaluate_policy(&policy, &model, &ds.split_records(SplitName::Val), &config.rates)?,
                    evaluate_policy(&policy, &model, &ds.split_records(SplitName::Test), &config.rates)?,
                ))
            })??;
            write_table(&config.out_dir, "adaptive", &table_for("adaptive", c.seed, &ds, &val, &test, &config)?)?;
        }
        Command::Baseline { method, common: c } => {
            let config = c.config()?;
            let ds = load_dataset(&config.out_dir)?;
            let prior = config.vds_prior()?;
            let val_r = ds.split_records(SplitName::Val);
            let test_r = ds.split_records(SplitName::Test);
            let subset = ds.balanced_subset(SplitName::Val, config.baselines.subset_per_class);
            let (name, val, test) = with_threads(config.deterministic, || -> Result<_> {
                Ok(match method {
                    Baseline::Vds => {
                        let model = load_classifier(&config.out_dir, "classifier.knet")?;
                        (
                            "vds",
                            vds_policy_eval(&model, &prior, &val_r, &config.rates, c.seed)?,
                            vds_policy_eval(&model, &prior, &test_r, &config.rates, c.seed)?,
                        )
                    }
                    Baseline::Greedy => {
                        let model = load_classifier(&config.out_dir, "classifier.knet")?;
                        let seq = greedy_sequence(&model, &subset, ds.d_c, config.baselines.greedy_steps)?;
                        fs::write(config.out_dir.join("greedy.seq"), seq.to_string())?;
                        (
                            "greedy",
                            sequence_eval(&model, &val_r, &seq, &config.rates)?,
                            sequence_eval(&model, &test_r, &seq, &config.rates)?,
                        )
                    }
                    Baseline::Emrt => {
                        let model = load_classifier(&config.out_dir, "classifier.knet")?;
                        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
                        let (mut val, mut test, mut log) = (Vec::new(), Vec::new(), String::new());
                        for &rate in &config.rates {
                            let res = emrt_select(&model, &prior, rate, config.baselines.emrt_k, &subset, &mut rng)?;
                            for (m, s) in &res.candidates {
                                log.push_str(&format!("{rate}\t{m}\t{s:?}\n"));
                            }
                            log.push_str(&format!("{rate}\tselected\t{}\t{:?}\n", res.mask, res.score));
                            val.push(fixed_mask_eval(&model, &val_r, &res.mask, rate)?);
                            test.push(fixed_mask_eval(&model, &test_r, &res.mask, rate)?);
                        }
                        fs::write(config.out_dir.join("emrt.txt"), log)?;
                        ("emrt", val, test)
                    }
                    Baseline::Image => {
                        let model = load_classifier(&config.out_dir, "image.knet")?;
                        let full = kspace::masking::ColumnMask::full(ds.d_c);
                        (
                            "image",
                            vec![fixed_mask_eval(&model, &val_r, &full, 1.0)?],
                            vec![fixed_mask_eval(&model, &test_r, &full, 1.0)?],
                        )
                    }
                })
            })??;
            write_table(&config.out_dir, name, &table_for(name, c.seed, &ds, &val, &test, &config)?)?;
        }
        Command::Report { out } => {
            let table = collect_tables(&out)?;
            print!("{}", table.render_summary());
            let lowest = table.rows.iter().map(|r| r.rate).fold(f64::INFINITY, f64::min);
            for flag in ablation_flags(&table, lowest, 0.01) {
                println!("{flag}");
            }
        }
        Command::Run {
            common: c,
            resume,
            overwrite,
            quiet,
        } => {
            let config = c.config()?;
            let mode = match (resume, overwrite) {
                (true, _) => RunMode::Resume,
                (_, true) => RunMode::Overwrite,
                _ => RunMode::Fresh,
            };
            let report = run_experiment(&config, RunOptions { mode, quiet })?;
            println!("{}", report.dir.display());
        }
    }
    Ok(())
}

/// `metrics.csv` when present, else every `metrics_*.csv` in name order.
fn collect_tables(dir: &Path) -> Result<MetricsTable> {
    let main = dir.join(METRICS_FILE);
    if main.exists() {
        return Ok(MetricsTable::read_csv(&main)?);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".csv"))
        })
        .collect();
    if paths.is_empty() {
        bail!("no metrics CSV in {}", dir.display());
    }
    paths.sort();
    let mut table = MetricsTable::default();
    for p in paths {
        for row in MetricsTable::read_csv(&p)?.rows {
            table.push(row)?;
        }
    }
    Ok(table)
}

fn main() -> Result<()> {
    run(Cli::parse())
}
