use kspace::classifier::{log_softmax2, ConstantModel};
use kspace::data::{Record, SplitName};
use kspace::env::*;
use kspace::masking::apply_mask;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

const STUB: ConstantModel = ConstantModel { logits: [0.3, -1.2] };

fn config(mode: ActionMode, sampling: EnvSampling, reward: RewardMode) -> EnvConfig {
    EnvConfig {
        rate: 0.125,
        mode,
        sampling,
        reward,
    }
}

fn bits(t: &kspace::numerics::ComplexTensor<f32>) -> Vec<u32> {
    t.re.data().iter().chain(t.im.data()).map(|v| v.to_bits()).collect()
}

#[test]
fn reset_frequencies_follow_sampling_mode() {
    let ds = common::small_dataset(1000, 0, 0, 16, 0.10, 1);
    let train = ds.split_records(SplitName::Train);
    for (sampling, target) in [(EnvSampling::Balanced, 0.5), (EnvSampling::Naive, 0.1)] {
        let env = Env::new(train.clone(), &STUB, config(ActionMode::Strict, sampling, RewardMode::Absolute)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let pos = (0..n)
            .filter(|_| {
                let s = env.reset(&mut rng);
                train.iter().find(|r| r.id == s.record_id()).unwrap().label == 1
            })
            .count();
        let f = pos as f64 / n as f64;
        assert!((f - target).abs() <= 0.01, "{sampling:?}: positive fraction {f}");
    }
}

#[test]
fn budget_legal_count_and_observation_honesty() {
    let ds = common::small_dataset(40, 0, 0, 32, 0.5, 3);
    let train = ds.split_records(SplitName::Train);
    let env = Env::new(train.clone(), &STUB, config(ActionMode::Strict, EnvSampling::Balanced, RewardMode::Absolute)).unwrap();
    assert_eq!(env.budget(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let mut s = env.reset(&mut rng);
        let record: &Record = train.iter().find(|r| r.id == s.record_id()).unwrap();
        assert!(s.observed().re.data().iter().all(|&v| v == 0.0));
        while !s.done() {
            let legal = s.legal();
            assert_eq!(legal.iter().filter(|&&b| b).count(), 32 - s.t());
            let choices: Vec<usize> = (0..32).filter(|&j| legal[j]).collect();
            let a = *choices.choose(&mut rng).unwrap();
            let r = env.step(&mut s, a).unwrap();
            assert!(r.reward <= 0.0 && !r.invalid);
            assert_eq!(r.reward, log_softmax2(STUB.logits, record.label));
            assert_eq!(s.mask().popcount(), s.t());
            assert_eq!(bits(s.observed()), bits(&apply_mask(&record.kspace, s.mask()).unwrap()));
            assert_eq!(r.done, s.t() == 4);
        }
        assert_eq!(s.selected().len(), 4);
        assert!(matches!(env.step(&mut s, 0), Err(EnvError::EpisodeDone)));
    }
}

#[test]
fn strict_rejects_and_penalty_charges_repeats() {
    let ds = common::small_dataset(10, 0, 0, 32, 0.5, 5);
    let train = ds.split_records(SplitName::Train);
    let strict = Env::new(train.clone(), &STUB, config(ActionMode::Strict, EnvSampling::Naive, RewardMode::Absolute)).unwrap();
    let mut s = strict.reset_to(0);
    strict.step(&mut s, 7).unwrap();
    assert!(matches!(strict.step(&mut s, 7), Err(EnvError::IllegalAction(7))));
    assert!(matches!(strict.step(&mut s, 32), Err(EnvError::OutOfRange { .. })));

    let penalty = Env::new(train, &STUB, config(ActionMode::Penalty, EnvSampling::Naive, RewardMode::Absolute)).unwrap();
    let mut s = penalty.reset_to(0);
    penalty.step(&mut s, 7).unwrap();
    let before = (bits(s.observed()), s.mask().clone());
    let r = penalty.step(&mut s, 7).unwrap();
    assert_eq!(r.reward, -1.0);
    assert!(r.invalid);
    assert_eq!((bits(s.observed()), s.mask().clone()), before);
    assert_eq!(s.t(), 2);
    penalty.step(&mut s, 7).unwrap();
    let last = penalty.step(&mut s, 8).unwrap();
    assert!(last.done && !last.invalid);
    assert_eq!(s.mask().popcount(), 2);
}

#[test]
fn reward_modes() {
    let ds = common::small_dataset(10, 0, 0, 32, 0.5, 6);
    let train = ds.split_records(SplitName::Train);
    let stub = common::ColumnStub::random(32, 2);
    let actions = [16, 3, 20, 9];
    let run = |reward| {
        let env = Env::new(train.clone(), &stub, config(ActionMode::Strict, EnvSampling::Naive, reward)).unwrap();
        let mut s = env.reset_to(1);
        actions.iter().map(|&a| env.step(&mut s, a).unwrap().reward).collect::<Vec<f64>>()
    };
    let abs = run(RewardMode::Absolute);
    let inc = run(RewardMode::Incremental);
    let term = run(RewardMode::Terminal);
    let zero = stub.logit(&kspace::numerics::ComplexTensor::zeros(&[32, 32]));
    let ll0 = log_softmax2([0.0, zero], train[1].label);
    assert!((inc.iter().sum::<f64>() - (abs[3] - ll0)).abs() < 1e-12);
    for t in 1..4 {
        assert!((inc[t] - (abs[t] - abs[t - 1])).abs() < 1e-12);
    }
    assert_eq!(term[..3], [0.0; 3]);
    assert_eq!(term[3], abs[3]);
}

#[test]
fn constructor_errors() {
    let ds = common::small_dataset(10, 0, 0, 32, 0.5, 7);
    let negatives: Vec<&Record> = ds.records.iter().filter(|r| r.label == 0).collect();
    let c = config(ActionMode::Strict, EnvSampling::Balanced, RewardMode::Absolute);
    assert!(matches!(Env::new(negatives.clone(), &STUB, c), Err(EnvError::SingleClass)));
    assert!(Env::new(negatives.clone(), &STUB, EnvConfig { sampling: EnvSampling::Naive, ..c }).is_ok());
    assert!(matches!(Env::new(Vec::new(), &STUB, c), Err(EnvError::EmptySplit)));
    assert!(Env::new(negatives.clone(), &STUB, EnvConfig { rate: 0.01, sampling: EnvSampling::Naive, ..c }).is_err());
    assert!(Env::new(negatives, &STUB, EnvConfig { rate: 1.5, ..c }).is_err());
}

#[test]
fn episode_log_audit_over_ten_thousand_episodes() {
    let ds = common::small_dataset(40, 0, 0, 32, 0.5, 8);
    let env = Env::new(
        ds.split_records(SplitName::Train),
        &STUB,
        config(ActionMode::Strict, EnvSampling::Balanced, RewardMode::Absolute),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut lines = Vec::new();
    for episode in 0..10_000u64 {
        let mut s = env.reset(&mut rng);
        while !s.done() {
            let legal = s.legal();
            let a = loop {
                let j = rng.gen_range(0..32);
                if legal[j] {
                    break j;
                }
            };
            let t = s.t();
            let r = env.step(&mut s, a).unwrap();
            lines.push(LogLine {
                episode,
                t,
                action: a,
                reward: r.reward,
                done: r.done,
            });
        }
    }
    let mut buf = Vec::new();
    write_episode_log(&mut buf, &lines).unwrap();
    let parsed = parse_episode_log(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(parsed, lines);
    audit_episode_log(&parsed, 4).unwrap();

    let mut repeated = parsed[..4].to_vec();
    repeated[2].action = repeated[1].action;
    assert!(audit_episode_log(&repeated, 4).unwrap_err().contains("repeats"));
    assert!(audit_episode_log(&parsed[..3], 4).unwrap_err().contains("never finished"));
    assert!(parse_episode_log("0\t0\t1\t-0.5").is_err());
}
