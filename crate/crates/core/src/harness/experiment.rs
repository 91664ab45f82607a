use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::table::{MetricRow, MetricsTable};
use super::{mask_heatmap, HarnessError};
use crate::baselines::{emrt_select, fixed_mask_eval, greedy_sequence, sequence_eval, vds_policy_eval, MaskSequence};
use crate::classifier::{train_classifier, train_image_classifier, KspaceNet, NetConfig, RewardModel, TrainConfig, TrainReport};
use crate::data::{build_dataset, read_dataset, write_dataset, Dataset, DatasetConfig, Record, SplitName};
use crate::env::{ActionMode, EnvSampling};
use crate::masking::{make_vds_prior, ColumnMask, VdsPrior};
use crate::ppo::{evaluate_policy, train_policy_with, Policy, PpoConfig, RateEvaluation, TRAIN_LOG_HEADER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub decay_power: f64,
    pub floor_epsilon: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            decay_power: 3.0,
            floor_epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSection {
    pub net: NetConfig,
    pub train: TrainConfig,
}

/// One trained policy per variant and seed. The tag is the method name in
/// the metrics table and must be `adaptive` or start with `adaptive_`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyVariant {
    pub tag: String,
    pub mode: ActionMode,
    pub sampling: EnvSampling,
}

impl Default for PolicyVariant {
    fn default() -> Self {
        Self {
            tag: "adaptive".into(),
            mode: ActionMode::Strict,
            sampling: EnvSampling::Balanced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub vds: bool,
    pub greedy: bool,
    pub emrt: bool,
    pub image: bool,
    /// Records per class in the balanced validation subset used for scoring.
    pub subset_per_class: usize,
    pub emrt_k: usize,
    /// Length of the greedy sequence; all columns when absent.
    pub greedy_steps: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            vds: true,
            greedy: true,
            emrt: true,
            image: true,
            subset_per_class: 100,
            emrt_k: 100,
            greedy_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub rates: Vec<f64>,
    pub target_sensitivity: f64,
    /// Single worker thread, for byte-identical reruns.
    pub deterministic: bool,
    pub dataset: DatasetConfig,
    pub prior: PriorConfig,
    pub classifier: ClassifierSection,
    pub ppo: PpoConfig,
    pub policies: Vec<PolicyVariant>,
    pub baselines: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            seeds: vec![0, 1],
            rates: vec![0.05, 0.08, 0.10, 0.125],
            target_sensitivity: 0.90,
            deterministic: false,
            dataset: DatasetConfig::default(),
            prior: PriorConfig::default(),
            classifier: ClassifierSection::default(),
            ppo: PpoConfig::default(),
            policies: vec![PolicyVariant::default()],
            baselines: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.rates.is_empty() || self.rates.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return bad(format!("rates must lie in (0, 1], got {:?}", self.rates));
        }
        if self.rates.windows(2).any(|w| w[0] >= w[1]) {
            return bad("rates must be strictly ascending".into());
        }
        if !(self.target_sensitivity > 0.0 && self.target_sensitivity <= 1.0) {
            return bad(format!("target_sensitivity must lie in (0, 1], got {}", self.target_sensitivity));
        }
        let mut tags: Vec<&str> = self.policies.iter().map(|p| p.tag.as_str()).collect();
        if tags.iter().any(|t| *t != "adaptive" && !t.starts_with("adaptive_")) {
            return bad(format!("policy tags must be `adaptive` or `adaptive_*`, got {tags:?}"));
        }
        tags.sort_unstable();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate policy tag".into());
        }
        if self.baselines.emrt_k == 0 || self.baselines.subset_per_class == 0 {
            return bad("emrt_k and subset_per_class must be positive".into());
        }
        self.dataset.validate()?;
        self.ppo.validate()?;
        if self.ppo.policy.d_c != self.dataset.d_c {
            return bad(format!("policy d_c {} differs from dataset d_c {}", self.ppo.policy.d_c, self.dataset.d_c));
        }
        Ok(())
    }

    pub fn vds_prior(&self) -> Result<VdsPrior, HarnessError> {
        Ok(make_vds_prior(self.dataset.d_c, self.prior.decay_power, self.prior.floor_epsilon)?)
    }
}

/// What to do when the output directory already holds a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunMode {
    /// Refuse to touch an existing run.
    #[default]
    Fresh,
    /// Reuse checkpoints of a run with the identical config.
    Resume,
    /// Delete the previous run first.
    Overwrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub mode: RunMode,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub table: MetricsTable,
    pub classifier_reports: Vec<(u64, TrainReport)>,
    pub image_reports: Vec<(u64, TrainReport)>,
    pub flags: Vec<String>,
}

pub const CONFIG_FILE: &str = "config.toml";
pub const LOCK_FILE: &str = ".lock";
pub const DATASET_FILE: &str = "dataset.kspc";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const REPORT_FILE: &str = "report.txt";

/// Worker count: 1 in deterministic mode, else `KSPACE_THREADS` if set,
/// else all cores (0).
pub fn worker_threads(deterministic: bool) -> usize {
    if deterministic {
        return 1;
    }
    std::env::var("KSPACE_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

/// Runs `f` inside a pool sized by [`worker_threads`].
pub fn with_threads<R: Send>(deterministic: bool, f: impl FnOnce() -> R + Send) -> Result<R, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads(deterministic))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Content hash of a file in git's object format: SHA-256 over
/// `"blob <len>\0"` followed by the bytes.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id())?;
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(HarnessError::Locked(dir.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn prepare_dir(config: &ExperimentConfig, mode: RunMode) -> Result<Lock, HarnessError> {
    let dir = &config.out_dir;
    fs::create_dir_all(dir)?;
    let lock = Lock::acquire(dir)?;
    let snapshot = dir.join(CONFIG_FILE);
    let occupied = fs::read_dir(dir)?.filter_map(Result::ok).any(|e| e.file_name() != LOCK_FILE);
    if occupied {
        match mode {
            RunMode::Fresh => return Err(HarnessError::PartialRun(dir.clone())),
            RunMode::Resume => {
                let previous = fs::read_to_string(&snapshot).map_err(|_| HarnessError::PartialRun(dir.clone()))?;
                if previous != config.to_toml() {
                    return Err(HarnessError::ConfigMismatch(dir.clone()));
                }
            }
            RunMode::Overwrite => {
                for entry in fs::read_dir(dir)? {
                    let entry = entry?;
                    if entry.file_name() == LOCK_FILE {
                        continue;
                    }
                    if entry.file_type()?.is_dir() {
                        fs::remove_dir_all(entry.path())?;
                    } else {
                        fs::remove_file(entry.path())?;
                    }
                }
            }
        }
    }
    fs::write(&snapshot, config.to_toml())?;
    let seeds: String = config.seeds.iter().map(|s| format!("{s}\n")).collect();
    fs::write(dir.join("seeds.txt"), seeds)?;
    Ok(lock)
}

fn load_or_build_dataset(config: &ExperimentConfig, log: &Logger) -> Result<Dataset, HarnessError> {
    let path = config.out_dir.join(DATASET_FILE);
    let ds = if path.exists() {
        read_dataset(&path)?
    } else {
        log.say("building dataset");
        let ds = build_dataset(&config.dataset)?;
        write_dataset(&path, &ds)?;
        ds
    };
    let hash = git_blob_hash(&fs::read(&path)?);
    fs::write(config.out_dir.join("dataset.hash"), format!("{hash}\n"))?;
    Ok(ds)
}

struct Logger {
    quiet: bool,
}

impl Logger {
    fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn load_or_train_classifier(
    path: &Path,
    log: &Logger,
    train: impl FnOnce() -> Result<(KspaceNet<f32>, TrainReport), HarnessError>,
) -> Result<(KspaceNet<f32>, TrainReport), HarnessError> {
    let report_path = path.with_extension("report.json");
    if path.exists() && report_path.exists() {
        let report = serde_json::from_str(&fs::read_to_string(&report_path)?).map_err(|e| HarnessError::Config(e.to_string()))?;
        return Ok((KspaceNet::load(path)?, report));
    }
    log.say(&format!("training {}", path.display()));
    let (model, report) = train()?;
    model.save(path)?;
    fs::write(&report_path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok((model, report))
}

/// Metric rows of one method, pairing validation (threshold) and test
/// evaluations rate by rate.
pub fn metric_rows(
    method: &str,
    seed: u64,
    (val, val_labels): (&[RateEvaluation], &[u8]),
    (test, test_labels): (&[RateEvaluation], &[u8]),
    target_sensitivity: f64,
) -> Result<Vec<MetricRow>, HarnessError> {
    if val.len() != test.len() || val.iter().zip(test).any(|(v, t)| v.rate != t.rate) {
        return Err(HarnessError::InvalidInput("validation and test rates differ".into()));
    }
    val.iter()
        .zip(test)
        .map(|(v, t)| {
            MetricRow::compute(
                method,
                t.rate,
                seed,
                (&t.scores, test_labels),
                (&v.scores, val_labels),
                target_sensitivity,
            )
        })
        .collect()
}

/// Writes `record_id, label, score, mask` per record.
pub fn write_masks(path: &Path, records: &[&Record], ev: &RateEvaluation) -> Result<(), HarnessError> {
    let mut out = String::from("record_id\tlabel\tscore\tmask\n");
    for ((r, m), s) in records.iter().zip(&ev.masks).zip(&ev.scores) {
        writeln!(out, "{}\t{}\t{:.9}\t{}", r.id, r.label, s, m).expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Validation and test evaluations of one method, rate by rate.
struct MethodResult {
    method: String,
    val: Vec<RateEvaluation>,
    test: Vec<RateEvaluation>,
}

fn rate_key(rate: f64) -> String {
    format!("{rate}")
}

fn emrt_for_seed<M: RewardModel + ?Sized>(
    model: &M,
    prior: &VdsPrior,
    config: &ExperimentConfig,
    subset: &[&Record],
    seed: u64,
    seed_dir: &Path,
) -> Result<Vec<ColumnMask>, HarnessError> {
    let mut masks = Vec::new();
    for (i, &rate) in config.rates.iter().enumerate() {
        let path = seed_dir.join(format!("emrt_{}.txt", rate_key(rate)));
        if let Some(mask) = read_emrt_selection(&path)? {
            masks.push(mask);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(0xE3A7 + i as u64));
        let res = emrt_select(model, prior, rate, config.baselines.emrt_k, subset, &mut rng)?;
        let mut out = String::new();
        for (k, (m, s)) in res.candidates.iter().enumerate() {
            writeln!(out, "{k}\t{m}\t{s:?}").expect("string write");
        }
        writeln!(out, "selected\t{}\t{:?}", res.mask, res.score).expect("string write");
        fs::write(&path, out)?;
        masks.push(res.mask);
    }
    Ok(masks)
}

fn read_emrt_selection(path: &Path) -> Result<Option<ColumnMask>, HarnessError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path)?;
    let line = text
        .lines()
        .find(|l| l.starts_with("selected\t"))
        .ok_or_else(|| HarnessError::InvalidInput(format!("{} has no selection", path.display())))?;
    let field = line.split('\t').nth(1).unwrap_or_default();
    Ok(Some(field.parse()?))
}

/// Compares each ablation variant with the main policy at the lowest rate.
/// A gap below `min_gap` is flagged; a variant ahead by more than `min_gap`
/// is flagged as a reversal.
pub fn ablation_flags(table: &MetricsTable, rate: f64, min_gap: f64) -> Vec<String> {
    let mut flags = Vec::new();
    let Some(main) = table.mean_auroc("adaptive", rate) else {
        return flags;
    };
    let variants: Vec<&str> = table
        .rows
        .iter()
        .map(|r| r.method.as_str())
        .filter(|m| m.starts_with("adaptive_"))
        .unique()
        .collect();
    for v in variants {
        let Some(other) = table.mean_auroc(v, rate) else { continue };
        let gap = main - other;
        if gap < -min_gap {
            flags.push(format!("REVERSED: {v} beats adaptive by {:.4} AUROC at rate {rate}", -gap));
        } else if gap < min_gap {
            flags.push(format!("SMALL GAP: adaptive − {v} = {gap:.4} AUROC at rate {rate} (< {min_gap})"));
        }
    }
    flags
}

/// Runs the full pipeline described by `config` and returns the metrics.
pub fn run_experiment(config: &ExperimentConfig, options: RunOptions) -> Result<RunReport, HarnessError> {
    config.validate()?;
    with_threads(config.deterministic, || run_inner(config, options))?
}

/// Loads a TOML config and runs it; returns the run directory.
pub fn run_experiment_path(path: &Path, options: RunOptions) -> Result<PathBuf, HarnessError> {
    let config = ExperimentConfig::load(path)?;
    Ok(run_experiment(&config, options)?.dir)
}

fn run_inner(config: &ExperimentConfig, options: RunOptions) -> Result<RunReport, HarnessError> {
    let log = Logger { quiet: options.quiet };
    let _lock = prepare_dir(config, options.mode)?;
    let dir = &config.out_dir;
    let dataset = load_or_build_dataset(config, &log)?;
    let prior = config.vds_prior()?;
    let val = dataset.split_records(SplitName::Val);
    let test = dataset.split_records(SplitName::Test);
    let train = dataset.split_records(SplitName::Train);
    let subset = dataset.balanced_subset(SplitName::Val, config.baselines.subset_per_class);
    let val_labels: Vec<u8> = val.iter().map(|r| r.label).collect();
    let test_labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    let d_c = dataset.d_c;

    let mut table = MetricsTable::default();
    let mut heat = String::from("method,rate,seed");
    for j in 0..d_c {
        write!(heat, ",c{j}").expect("string write");
    }
    heat.push('\n');
    let mut classifier_reports = Vec::new();
    let mut image_reports = Vec::new();

    for &seed in &config.seeds {
        let seed_dir = dir.join(format!("seed_{seed}"));
        fs::create_dir_all(seed_dir.join("masks"))?;
        let train_cfg = TrainConfig {
            seed,
            ..config.classifier.train.clone()
        };
        let (model, report) = load_or_train_classifier(&seed_dir.join("classifier.knet"), &log, || {
            Ok(train_classifier(&dataset, &prior, &config.classifier.net, &train_cfg)?)
        })?;
        let checksum = model.checksum();
        fs::write(seed_dir.join("classifier.sha256"), format!("{checksum}\n"))?;
        classifier_reports.push((seed, report));

        let mut results: Vec<MethodResult> = Vec::new();
        for variant in &config.policies {
            let path = seed_dir.join(format!("policy_{}.kpol", variant.tag));
            let policy = if path.exists() {
                Policy::<f32>::load(&path)?
            } else {
                log.say(&format!("training {}", path.display()));
                let mut ppo = config.ppo.clone();
                ppo.seed = seed;
                ppo.env.mode = variant.mode;
                ppo.env.sampling = variant.sampling;
                let mut lines = String::from(TRAIN_LOG_HEADER);
                lines.push('\n');
                let (policy, _) = train_policy_with(train.clone(), &model, &ppo, |l, _| {
                    writeln!(lines, "{l}").expect("string write");
                    Ok(())
                })?;
                fs::write(seed_dir.join(format!("policy_{}.log", variant.tag)), lines)?;
                policy.save(&path)?;
                policy
            };
            results.push(MethodResult {
                method: variant.tag.clone(),
                val: evaluate_policy(&policy, &model, &val, &config.rates)?,
                test: evaluate_policy(&policy, &model, &test, &config.rates)?,
            });
        }

        if config.baselines.vds {
            let vds_seed = seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(7);
            results.push(MethodResult {
                method: "vds".into(),
                val: vds_policy_eval(&model, &prior, &val, &config.rates, vds_seed)?,
                test: vds_policy_eval(&model, &prior, &test, &config.rates, vds_seed)?,
            });
        }
        if config.baselines.greedy {
            let path = seed_dir.join("greedy.seq");
            let seq = if path.exists() {
                MaskSequence::parse(&fs::read_to_string(&path)?, "greedy", d_c)?
            } else {
                log.say("greedy sequence");
                let seq = greedy_sequence(&model, &subset, d_c, config.baselines.greedy_steps)?;
                fs::write(&path, seq.to_string())?;
                seq
            };
            results.push(MethodResult {
                method: "greedy".into(),
                val: sequence_eval(&model, &val, &seq, &config.rates)?,
                test: sequence_eval(&model, &test, &seq, &config.rates)?,
            });
        }
        if config.baselines.emrt {
            log.say("emrt selection");
            let masks = emrt_for_seed(&model, &prior, config, &subset, seed, &seed_dir)?;
            let mut val_ev = Vec::new();
            let mut test_ev = Vec::new();
            for (m, &rate) in masks.iter().zip(&config.rates) {
                val_ev.push(fixed_mask_eval(&model, &val, m, rate)?);
                test_ev.push(fixed_mask_eval(&model, &test, m, rate)?);
            }
            results.push(MethodResult {
                method: "emrt".into(),
                val: val_ev,
                test: test_ev,
            });
        }
        if model.checksum() != checksum {
            return Err(HarnessError::ClassifierMutated);
        }
        if config.baselines.image {
            let (image, report) = load_or_train_classifier(&seed_dir.join("image.knet"), &log, || {
                Ok(train_image_classifier(&dataset, &config.classifier.net, &train_cfg)?)
            })?;
            image_reports.push((seed, report));
            let full = ColumnMask::full(d_c);
            results.push(MethodResult {
                method: "image".into(),
                val: vec![fixed_mask_eval(&image, &val, &full, 1.0)?],
                test: vec![fixed_mask_eval(&image, &test, &full, 1.0)?],
            });
        }

        for res in &results {
            for row in metric_rows(&res.method, seed, (&res.val, &val_labels), (&res.test, &test_labels), config.target_sensitivity)? {
                table.push(row)?;
            }
            for (v, t) in res.val.iter().zip(&res.test) {
                let key = rate_key(t.rate);
                write_masks(&seed_dir.join("masks").join(format!("{}_{key}_val.tsv", res.method)), &val, v)?;
                write_masks(&seed_dir.join("masks").join(format!("{}_{key}_test.tsv", res.method)), &test, t)?;
                if res.method != "image" {
                    write!(heat, "{},{},{}", res.method, t.rate, seed).expect("string write");
                    for h in mask_heatmap(&t.masks)? {
                        write!(heat, ",{h:.6}").expect("string write");
                    }
                    heat.push('\n');
                }
            }
        }
    }

    table.write_csv(&dir.join(METRICS_FILE))?;
    table.write_summary_csv(&dir.join(SUMMARY_FILE))?;
    fs::write(dir.join(HEATMAP_FILE), heat)?;
    let flags = ablation_flags(&table, config.rates[0], 0.01);
    let mut report = table.render_summary();
    for f in &flags {
        writeln!(report, "{f}").expect("string write");
    }
    fs::write(dir.join(REPORT_FILE), &report)?;
    log.say(&report);
    Ok(RunReport {
        dir: dir.clone(),
        table,
        classifier_reports,
        image_reports,
        flags,
    })
}
