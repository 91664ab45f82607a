//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p kspace-core --test acceptance` runs all eight; pass
//! criterion numbers (`-- 1 4 8`) to run a subset. Criteria 5 to 7 share one
//! five-seed experiment whose artifacts live under the cargo target dir and
//! are resumed on later runs; set `KSPACE_ACCEPTANCE_FRESH=1` to retrain.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use kspace::baselines::{brute_force_best_mask, emrt_select, greedy_sequence};
use kspace::classifier::{score_mask, ConstantModel};
use kspace::data::{Record, SplitName};
use kspace::env::{audit_episode_log, ActionMode, Env, EnvConfig, EnvSampling, LogLine, RewardMode};
use kspace::harness::{auroc, run_experiment, ExperimentConfig, HarnessError, RunMode, RunOptions, RunReport, METRICS_FILE};
use kspace::masking::{apply_mask, budget, make_vds_prior, ColumnMask};
use kspace::numerics::{conv2d, fft2, ifft2, ComplexTensor, Tensor};
use kspace::ppo::{rollout_batch, Policy, PolicyConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::ColumnStub;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300)
}

fn direct_dft(x: &ComplexTensor<f64>, inverse: bool) -> ComplexTensor<f64> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let sign = if inverse { 1.0 } else { -1.0 };
    let norm = if inverse { 1.0 / (h * w) as f64 } else { 1.0 };
    let mut out = x.clone();
    for p in 0..x.len() / (h * w) {
        let off = p * h * w;
        for k in 0..h {
            for l in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for m in 0..h {
                    for n in 0..w {
                        let th = sign * 2.0 * std::f64::consts::PI * ((k * m) as f64 / h as f64 + (l * n) as f64 / w as f64);
                        let (a, b) = (x.re.data()[off + m * w + n], x.im.data()[off + m * w + n]);
                        re += a * th.cos() - b * th.sin();
                        im += a * th.sin() + b * th.cos();
                    }
                }
                out.re.data_mut()[off + k * w + l] = re * norm;
                out.im.data_mut()[off + k * w + l] = im * norm;
            }
        }
    }
    out
}

fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (xs, ks) = (x.shape(), k.shape());
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, kk) = (ks[0], ks[2]);
    let ho = (h + 2 * pad - kk) / stride + 1;
    let wo = (w + 2 * pad - kk) / stride + 1;
    let mut out = Vec::with_capacity(n * o * ho * wo);
    for b in 0..n {
        for oc in 0..o {
            for y in 0..ho {
                for z in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for i in 0..kk {
                            for j in 0..kk {
                                let (r, q) = ((y * stride + i) as isize - pad as isize, (z * stride + j) as isize - pad as isize);
                                if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < w {
                                    acc += x.data()[((b * c + ic) * h + r as usize) * w + q as usize] * k.data()[((oc * c + ic) * kk + i) * kk + j];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn numerics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_fft: f64 = 0.0;
    for shape in [[1, 8, 8], [2, 16, 32], [1, 5, 7], [1, 32, 32], [3, 4, 12]] {
        let x = ComplexTensor::new(common::grad::rand_tensor(&shape, &mut rng), common::grad::rand_tensor(&shape, &mut rng)).unwrap();
        for (got, want) in [(fft2(&x).unwrap(), direct_dft(&x, false)), (ifft2(&x).unwrap(), direct_dft(&x, true))] {
            let g: Vec<f64> = got.re.data().iter().chain(got.im.data()).copied().collect();
            let w: Vec<f64> = want.re.data().iter().chain(want.im.data()).copied().collect();
            worst_fft = worst_fft.max(rel_err(&g, &w));
        }
    }
    ensure(worst_fft <= 1e-9, || format!("fft vs direct DFT relative error {worst_fft:e}"))?;

    let mut worst_conv: f64 = 0.0;
    for (xs, ks, stride, pad) in [([2, 3, 9, 9], [4, 3, 3, 3], 1, 1), ([1, 2, 8, 8], [3, 2, 3, 3], 2, 1), ([1, 1, 7, 6], [2, 1, 5, 5], 1, 0), ([2, 2, 6, 6], [1, 2, 1, 1], 1, 0)] {
        let x = common::grad::rand_tensor(&xs, &mut rng);
        let k = common::grad::rand_tensor(&ks, &mut rng);
        worst_conv = worst_conv.max(rel_err(conv2d(&x, &k, stride, pad).unwrap().data(), &naive_conv(&x, &k, stride, pad)));
    }
    ensure(worst_conv <= 1e-9, || format!("conv vs naive loops relative error {worst_conv:e}"))?;

    let cases = common::grad::all_cases();
    let mut worst_grad = (0.0, String::new());
    for c in &cases {
        let (e, tensor) = common::grad::max_rel_error(&c.params, &*c.loss);
        if e >= worst_grad.0 {
            worst_grad = (e, format!("{} / {tensor}", c.name));
        }
    }
    ensure(worst_grad.0 <= 1e-3, || format!("gradient {} relative error {:e}", worst_grad.1, worst_grad.0))?;

    let mut worst_auc: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..200);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.3) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let levels = rng.gen_range(2..20) as f64;
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * levels).floor() / levels).collect();
        worst_auc = worst_auc.max((auroc(&scores, &labels).unwrap() - pairwise_auroc(&scores, &labels)).abs());
    }
    ensure(worst_auc <= 1e-12, || format!("AUROC vs pairwise oracle {worst_auc:e}"))?;

    Ok(format!(
        "fft {worst_fft:.1e}, conv {worst_conv:.1e}, {} gradient cases max {:.1e}, AUROC {worst_auc:.1e}",
        cases.len(),
        worst_grad.0
    ))
}

fn masking_and_env_invariants() -> Outcome {
    for d_c in [16, 32, 64, 320] {
        for rate in [0.025, 0.04, 0.05, 0.08, 0.10, 0.125, 0.25, 1.0 / 3.0, 0.5, 1.0] {
            let want = (rate * d_c as f64 + 0.5).floor() as usize;
            ensure(budget(rate, d_c) == want, || format!("budget({rate}, {d_c}) = {} ≠ {want}", budget(rate, d_c)))?;
        }
    }

    let ds = common::small_dataset(60, 0, 0, 32, 0.5, 11);
    let train = ds.split_records(SplitName::Train);
    let stub = ColumnStub::random(32, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for rate in [0.05, 0.08, 0.10, 0.125, 0.25] {
        let env = Env::new(train.clone(), &stub, EnvConfig { rate, ..EnvConfig::default() }).map_err(|e| e.to_string())?;
        let t_max = (rate * 32.0 + 0.5).floor() as usize;
        ensure(env.budget() == t_max, || format!("env budget {} at rate {rate}", env.budget()))?;
        for _ in 0..50 {
            let mut s = env.reset(&mut rng);
            let record: &Record = train.iter().find(|r| r.id == s.record_id()).unwrap();
            let mut steps = 0;
            while !s.done() {
                let legal = s.legal();
                let n_legal = legal.iter().filter(|&&b| b).count();
                ensure(n_legal == 32 - s.t(), || format!("{n_legal} legal actions at t={}", s.t()))?;
                let a = *(0..32).filter(|&j| legal[j]).collect::<Vec<_>>().choose(&mut rng).unwrap();
                env.step(&mut s, a).map_err(|e| e.to_string())?;
                steps += 1;
                let obs = s.observed();
                let masked = apply_mask(&record.kspace, s.mask()).unwrap();
                let same = obs.re.data().iter().zip(masked.re.data()).chain(obs.im.data().iter().zip(masked.im.data())).all(|(a, b)| a.to_bits() == b.to_bits());
                ensure(same, || "observation differs from the masked k-space".into())?;
                // rebuild the observation column by column from the raw record
                let (d_r, d_c) = (record.kspace.shape()[0], record.kspace.shape()[1]);
                for r in 0..d_r {
                    for c in 0..d_c {
                        let i = r * d_c + c;
                        let expect = if s.mask().contains(c) { (record.kspace.re.data()[i], record.kspace.im.data()[i]) } else { (0.0, 0.0) };
                        ensure((obs.re.data()[i], obs.im.data()[i]) == expect, || format!("observation entry ({r}, {c}) leaks or drops data"))?;
                    }
                }
            }
            ensure(steps == t_max, || format!("episode ran {steps} steps, budget {t_max}"))?;
        }
    }

    let env = Env::new(train.clone(), &stub, EnvConfig::default()).map_err(|e| e.to_string())?;
    let policy = Policy::<f32>::init(PolicyConfig::default(), 0).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut episodes = 0usize;
    let mut prng = ChaCha8Rng::seed_from_u64(13);
    while episodes < 10_000 {
        let batch = rollout_batch(&env, &policy, 128, &mut prng).map_err(|e| e.to_string())?;
        for i in 0..batch.len() {
            lines.push(LogLine {
                episode: (episodes + batch.episode[i]) as u64,
                t: i % env.budget(),
                action: batch.actions[i],
                reward: batch.rewards[i],
                done: batch.dones[i],
            });
        }
        episodes += batch.n_episodes();
    }
    audit_episode_log(&lines, env.budget())?;
    Ok(format!("{episodes} policy episodes, 0 repeats; budget, legal-count and observation checks over 5 rates"))
}

fn balanced_sampling() -> Outcome {
    let ds = common::small_dataset(1000, 0, 0, 16, 0.10, 21);
    let train = ds.split_records(SplitName::Train);
    let positivity = train.iter().filter(|r| r.label == 1).count() as f64 / train.len() as f64;
    ensure((positivity - 0.10).abs() < 1e-9, || format!("dataset positivity {positivity}"))?;
    let model = ConstantModel { logits: [0.0, 0.0] };
    let mut out = Vec::new();
    for (sampling, target) in [(EnvSampling::Balanced, 0.5), (EnvSampling::Naive, 0.1)] {
        let config = EnvConfig {
            rate: 0.125,
            mode: ActionMode::Strict,
            sampling,
            reward: RewardMode::Absolute,
        };
        let env = Env::new(train.clone(), &model, config).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 100_000;
        let pos = (0..n)
            .filter(|_| {
                let id = env.reset(&mut rng).record_id();
                train.iter().find(|r| r.id == id).unwrap().label == 1
            })
            .count();
        let f = pos as f64 / n as f64;
        ensure((f - target).abs() <= 0.01, || format!("{sampling:?} positive reset frequency {f:.4}, want {target} ± 0.01"))?;
        out.push(format!("{sampling:?} {f:.4}"));
    }
    Ok(out.join(", "))
}

fn greedy_emrt_oracles() -> Outcome {
    let ds = common::small_dataset(40, 0, 0, 16, 0.3, 31);
    let subset = ds.split_records(SplitName::Train);
    let prior = make_vds_prior(16, 3.0, 0.01).unwrap();
    let mut audited = 0;
    for seed in 0..10 {
        let stub = ColumnStub::random(16, 100 + seed);
        let seq = greedy_sequence(&stub, &subset, 16, Some(1)).map_err(|e| e.to_string())?;
        let (best, score, count) = brute_force_best_mask(&stub, &subset, 1.0 / 16.0, 16).map_err(|e| e.to_string())?;
        ensure(count == 16, || format!("brute force evaluated {count} masks"))?;
        ensure(best.columns() == seq.columns && score == seq.scores[0], || {
            format!("stub {seed}: greedy picked {:?} ({}), exhaustive {:?} ({score})", seq.columns, seq.scores[0], best.columns())
        })?;

        for rate in [0.125, 0.25] {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let res = emrt_select(&stub, &prior, rate, 25, &subset, &mut rng).map_err(|e| e.to_string())?;
            let mut log = String::new();
            for (k, (m, s)) in res.candidates.iter().enumerate() {
                log.push_str(&format!("{k}\t{m}\t{s:?}\n"));
            }
            log.push_str(&format!("selected\t{}\t{:?}\n", res.mask, res.score));

            let mut logged: Vec<(ColumnMask, f64)> = Vec::new();
            let mut selected = None;
            for line in log.lines() {
                let f: Vec<&str> = line.split('\t').collect();
                let entry = (f[1].parse::<ColumnMask>().map_err(|e| e.to_string())?, f[2].parse::<f64>().map_err(|e| e.to_string())?);
                if f[0] == "selected" {
                    selected = Some(entry);
                } else {
                    logged.push(entry);
                }
            }
            let (sel_mask, sel_score) = selected.ok_or("log has no selection")?;
            ensure(logged.len() == 25, || format!("{} logged candidates", logged.len()))?;
            let max = logged.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let first = logged.iter().find(|c| c.1 == max).unwrap();
            ensure(sel_score == max && sel_mask == first.0, || format!("stub {seed}: selection {sel_score} is not the logged maximum {max}"))?;
            for (m, s) in &logged {
                let rescored = score_mask(&stub, &subset, m).map_err(|e| e.to_string())?;
                ensure(rescored == *s, || format!("logged score {s} but candidate rescored {rescored}"))?;
            }
            audited += 1;
        }
    }
    Ok(format!("10 stubs: greedy step 1 = exhaustive best; {audited} EMRT logs audited"))
}

fn acceptance_run() -> &'static Result<RunReport, String> {
    static RUN: OnceLock<Result<RunReport, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut config = ExperimentConfig::load(&workspace().join("configs/acceptance.toml")).map_err(|e| e.to_string())?;
        config.out_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-run");
        let fresh = std::env::var("KSPACE_ACCEPTANCE_FRESH").is_ok_and(|v| v == "1");
        let mode = if fresh { RunMode::Overwrite } else { RunMode::Resume };
        eprintln!("acceptance experiment in {} ({:?})", config.out_dir.display(), mode);
        let run = |mode| run_experiment(&config, RunOptions { mode, quiet: false });
        match run(mode) {
            Err(HarnessError::ConfigMismatch(_)) => run(RunMode::Overwrite),
            other => other,
        }
        .map_err(|e| e.to_string())
    })
}

fn learnability_gate() -> Outcome {
    let run = acceptance_run().as_ref().map_err(|e| e.clone())?;
    let mut out = Vec::new();
    ensure(run.classifier_reports.len() == 5, || format!("{} classifier seeds", run.classifier_reports.len()))?;
    for (seed, report) in &run.classifier_reports {
        ensure(report.epoch_loss.len() <= 20, || format!("seed {seed} trained {} epochs", report.epoch_loss.len()))?;
        let full = report.val_auroc.iter().find(|(r, _)| *r == 1.0).map(|(_, a)| *a).ok_or("no α=1.0 validation AUROC")?;
        ensure(full >= 0.95, || format!("seed {seed}: validation AUROC {full:.4} at α=1.0"))?;
        out.push(format!("{full:.3}"));
    }
    Ok(format!("validation AUROC at α=1.0 per seed: {}", out.join(" ")))
}

fn adaptivity() -> Outcome {
    let run = acceptance_run().as_ref().map_err(|e| e.clone())?;
    let t = &run.table;
    let mean = |m: &str, r: f64| -> Result<f64, String> {
        let rows = t.select(m, r);
        ensure(rows.len() == 5, || format!("{m} at {r}: {} seeds", rows.len()))?;
        Ok(rows.iter().map(|r| r.auroc).sum::<f64>() / 5.0)
    };
    let (asmr5, vds5) = (mean("adaptive", 0.05)?, mean("vds", 0.05)?);
    let (asmr125, image) = (mean("adaptive", 0.125)?, mean("image", 1.0)?);
    let detail = format!("5%: adaptive {asmr5:.4} vs vds {vds5:.4} (gap {:.4}); 12.5%: adaptive {asmr125:.4} vs image {image:.4}", asmr5 - vds5);
    ensure(asmr5 - vds5 >= 0.03, || format!("gap below 0.03: {detail}"))?;
    ensure((asmr125 - image).abs() <= 0.02, || format!("not within 0.02 of the image classifier: {detail}"))?;
    Ok(detail)
}

fn ablation_direction() -> Outcome {
    let run = acceptance_run().as_ref().map_err(|e| e.clone())?;
    let main = run.table.mean_auroc("adaptive", 0.05).ok_or("no adaptive rows")?;
    let report = fs::read_to_string(run.dir.join(kspace::harness::REPORT_FILE)).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for variant in ["adaptive_penalty", "adaptive_naive"] {
        let other = run.table.mean_auroc(variant, 0.05).ok_or_else(|| format!("no {variant} rows"))?;
        let gap = main - other;
        ensure(gap >= -0.01, || format!("{variant} beats adaptive by {:.4} at 5%", -gap))?;
        if gap < 0.01 {
            let flagged = run.flags.iter().any(|f| f.contains(variant)) && report.lines().any(|l| l.contains(variant) && l.contains("GAP"));
            ensure(flagged, || format!("{variant}: gap {gap:.4} < 0.01 but the run report does not flag it"))?;
            out.push(format!("{variant} gap {gap:.4} (flagged)"));
        } else {
            out.push(format!("{variant} gap {gap:.4}"));
        }
    }
    Ok(out.join("; "))
}

fn reproducibility() -> Outcome {
    let base = ExperimentConfig::load(&workspace().join("configs/smoke.toml")).map_err(|e| e.to_string())?;
    ensure(base.deterministic, || "smoke config must be deterministic".into())?;
    let mut csvs = Vec::new();
    for name in ["smoke-a", "smoke-b"] {
        let mut config = base.clone();
        config.out_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
        run_experiment(&config, RunOptions { mode: RunMode::Overwrite, quiet: true }).map_err(|e| e.to_string())?;
        csvs.push(fs::read(config.out_dir.join(METRICS_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(csvs[0] == csvs[1], || "metrics CSVs differ between identical deterministic runs".into())?;
    Ok(format!("two fresh runs, metrics CSV identical ({} bytes)", csvs[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("numerics oracle suite", numerics_oracles),
        ("masking/environment invariants", masking_and_env_invariants),
        ("balanced environment sampling", balanced_sampling),
        ("greedy/EMRT oracle equivalence", greedy_emrt_oracles),
        ("learnability gate", learnability_gate),
        ("adaptive beats VDS", adaptivity),
        ("ablation direction", ablation_direction),
        ("deterministic reruns", reproducibility),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n}. {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n}. {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
