use std::path::Path;

use towerlab::policy::Checkpoint;
use towerlab::tasks::TaskKind;
use towerlab::train::{
    checkpoint_path, list_checkpoints, train, AdamConfig, Method, Schedule, TrainConfig, TrainOptions, LOG_FILE,
};

fn cfg(method: Method, schedule: Schedule, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        schedule,
        group_size: 4,
        prompts_per_batch: 2,
        sft_batch_size: 8,
        checkpoint_interval: 5,
        seed,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn opts(workers: usize) -> TrainOptions {
    TrainOptions {
        resume: false,
        workers: Some(workers),
        progress_every: None,
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn sft_running_loss_drops_by_step_500() {
    let dir = tempfile::tempdir().unwrap();
    let c = TrainConfig {
        checkpoint_interval: 500,
        sft_batch_size: 64,
        ..cfg(Method::Sft, Schedule::single(TaskKind::BinaryStabilityTop, 500), 3)
    };
    let log = train(&c, dir.path(), opts(1)).unwrap();
    assert_eq!(log.records.len(), 500);
    let first = log.records[0].running_avg25;
    let last = log.records[499].running_avg25;
    assert!(last < first, "running loss {first} -> {last}");
}

#[test]
fn single_worker_runs_are_bit_identical_and_worker_count_does_not_matter() {
    for method in [Method::Grpo, Method::Gspo, Method::Sft] {
        let c = cfg(method, Schedule::single(TaskKind::XOnlySide, 12), 9);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let k = tempfile::tempdir().unwrap();
        train(&c, a.path(), opts(1)).unwrap();
        train(&c, b.path(), opts(1)).unwrap();
        train(&c, k.path(), opts(3)).unwrap();
        let log = read(&a.path().join(LOG_FILE));
        assert_eq!(log, read(&b.path().join(LOG_FILE)), "{method}");
        assert_eq!(log, read(&k.path().join(LOG_FILE)), "{method}");
        let ck = read(&checkpoint_path(a.path(), 12));
        assert_eq!(ck, read(&checkpoint_path(b.path(), 12)));
        assert_eq!(ck, read(&checkpoint_path(k.path(), 12)));
    }
}

#[test]
fn resume_reproduces_the_uninterrupted_trajectory() {
    let c = cfg(
        Method::Grpo,
        Schedule::parse_blocked("xonly-top:8,binary-top:7").unwrap(),
        4,
    );
    let full = tempfile::tempdir().unwrap();
    train(&c, full.path(), opts(1)).unwrap();

    let cut = tempfile::tempdir().unwrap();
    train(&c, cut.path(), opts(1)).unwrap();
    // simulate a crash after step 10: later checkpoints never got written
    for (step, path) in list_checkpoints(cut.path()).unwrap() {
        if step > 10 {
            std::fs::remove_file(path).unwrap();
        }
    }
    let resumed = train(
        &c,
        cut.path(),
        TrainOptions {
            resume: true,
            ..opts(1)
        },
    )
    .unwrap();
    assert_eq!(resumed.records.len(), 15);
    assert_eq!(read(&full.path().join(LOG_FILE)), read(&cut.path().join(LOG_FILE)));
    for s in [10, 15] {
        assert_eq!(read(&checkpoint_path(full.path(), s)), read(&checkpoint_path(cut.path(), s)));
    }
    let tasks: Vec<TaskKind> = resumed.records.iter().map(|r| r.task).collect();
    assert!(tasks[..8].iter().all(|&t| t == TaskKind::XOnlyTop));
    assert!(tasks[8..].iter().all(|&t| t == TaskKind::BinaryStabilityTop));
}

#[test]
fn resuming_a_finished_run_changes_nothing() {
    let c = cfg(Method::Sft, Schedule::single(TaskKind::XYSide, 5), 2);
    let dir = tempfile::tempdir().unwrap();
    train(&c, dir.path(), opts(1)).unwrap();
    let before = read(&checkpoint_path(dir.path(), 5));
    let log = read(&dir.path().join(LOG_FILE));
    let again = train(
        &c,
        dir.path(),
        TrainOptions {
            resume: true,
            ..opts(1)
        },
    )
    .unwrap();
    assert_eq!(again.records.len(), 5);
    assert_eq!(before, read(&checkpoint_path(dir.path(), 5)));
    assert_eq!(log, read(&dir.path().join(LOG_FILE)));
}

#[test]
fn resume_refuses_a_different_config() {
    let c = cfg(Method::Grpo, Schedule::single(TaskKind::XOnlyTop, 3), 2);
    let dir = tempfile::tempdir().unwrap();
    train(&c, dir.path(), opts(1)).unwrap();
    let other = TrainConfig { seed: 3, ..c.clone() };
    let resume = TrainOptions {
        resume: true,
        ..opts(1)
    };
    assert!(train(&other, dir.path(), resume).is_err());
    // a fresh start must not overwrite an existing run either
    assert!(train(&c, dir.path(), opts(1)).is_err());
}

#[test]
fn interleaved_schedule_uses_every_task() {
    let s = Schedule::parse_interleaved("xonly-top:1,xy-side:1,binary-top:1,xonly-side:1", 60).unwrap();
    let c = cfg(Method::Sft, s, 5);
    let dir = tempfile::tempdir().unwrap();
    let log = train(&c, dir.path(), opts(1)).unwrap();
    for t in TaskKind::ALL {
        assert!(log.records.iter().any(|r| r.task == t), "{t} never drawn");
    }
    assert_eq!(c.trained_on_label(), "xonly-top+xy-side+binary-top+xonly-side");
}

#[test]
fn init_checkpoint_is_the_starting_point() {
    let base = tempfile::tempdir().unwrap();
    let c = cfg(Method::Sft, Schedule::single(TaskKind::XOnlyTop, 5), 2);
    train(&c, base.path(), opts(1)).unwrap();
    let init = checkpoint_path(base.path(), 5);
    let d = tempfile::tempdir().unwrap();
    let c2 = TrainConfig {
        init_checkpoint: Some(init.clone()),
        ..cfg(Method::Grpo, Schedule::single(TaskKind::XOnlyTop, 2), 3)
    };
    train(&c2, d.path(), opts(1)).unwrap();
    let a = Checkpoint::load(&init, None).unwrap().params;
    let b = Checkpoint::load(&checkpoint_path(d.path(), 0), None).unwrap().params;
    assert_eq!(a.values, b.values);
}

/// The first epoch starts at ratio one even when sampling is tempered, so
/// the clip width cannot matter.
#[test]
fn tempered_sampling_starts_at_ratio_one() {
    let run = |clip_eta: f64| {
        let c = TrainConfig {
            temperature: 1.7,
            clip_eta,
            ..cfg(Method::Grpo, Schedule::single(TaskKind::XOnlyTop, 1), 6)
        };
        let dir = tempfile::tempdir().unwrap();
        train(&c, dir.path(), opts(1)).unwrap();
        Checkpoint::load(&checkpoint_path(dir.path(), 1), None).unwrap().params.values
    };
    let (wide, tight) = (run(0.2), run(1e-9));
    assert_eq!(wide, tight);
}

#[test]
fn divergence_aborts_with_a_diagnostic() {
    let c = TrainConfig {
        adam: AdamConfig {
            lr: 1e300,
            ..AdamConfig::default()
        },
        ..cfg(Method::Sft, Schedule::single(TaskKind::XOnlyTop, 20), 1)
    };
    let dir = tempfile::tempdir().unwrap();
    let err = train(&c, dir.path(), opts(1)).unwrap_err();
    assert!(matches!(err, towerlab::Error::NonFinite(_)), "{err}");
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("diagnostic.json")).unwrap()).unwrap();
    assert!(diag["step"].as_u64().unwrap() >= 1);
}
