use std::fs;

use cwgrpo::config::TrainConfig;
use cwgrpo::trainer::{read_metrics, resume, train, Trainer};
use cwgrpo::{Checkpoint, Error, Method};

fn small() -> TrainConfig {
    TrainConfig {
        steps: 12,
        prompts_per_step: 4,
        checkpoint_every: 4,
        eval_prompts: 32,
        learning_rate: 0.05,
        ..TrainConfig::default()
    }
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(&small(), dir.path()).unwrap();
    for f in ["config.txt", "metrics.jsonl", "final.ckpt", "eval.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    for s in [4, 8, 12] {
        assert!(dir.path().join(format!("checkpoints/step_{s:06}.ckpt")).is_file());
    }
    let records = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(records, run.records);
    assert_eq!(records.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=12).collect::<Vec<_>>());
    assert!(records.iter().all(|r| r.is_finite()));

    let echo = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    let reparsed = TrainConfig::parse_str(&echo, &dir.path().join("config.txt")).unwrap();
    assert_eq!(reparsed, small().resolved());
}

#[test]
fn different_seeds_diverge() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(&small(), &dir.path().join("a")).unwrap();
    let b = train(&TrainConfig { seed: 1, ..small() }, &dir.path().join("b")).unwrap();
    assert_ne!(a.records, b.records);
}

#[test]
fn resume_from_intermediate_checkpoint_matches() {
    let dir = tempfile::tempdir().unwrap();
    let full = train(&small(), &dir.path().join("full")).unwrap();
    let ckpt = Checkpoint::load(&dir.path().join("full/checkpoints/step_000008.ckpt")).unwrap();
    let tail = resume(&small(), ckpt, &dir.path().join("tail")).unwrap();
    assert_eq!(tail.records, full.records[8..]);
    assert_eq!(
        fs::read(dir.path().join("tail/final.ckpt")).unwrap(),
        fs::read(dir.path().join("full/final.ckpt")).unwrap()
    );
}

#[test]
fn infinite_floor_makes_cw_identical_to_grpo() {
    let dir = tempfile::tempdir().unwrap();
    let grpo = TrainConfig {
        method: Method::Grpo,
        sigma_floor: f64::INFINITY,
        ..small()
    };
    let cw = TrainConfig {
        method: Method::CwGrpo,
        ..grpo.clone()
    };
    let a = train(&grpo, &dir.path().join("grpo")).unwrap();
    let b = train(&cw, &dir.path().join("cw")).unwrap();
    assert_eq!(
        fs::read(dir.path().join("grpo/metrics.jsonl")).unwrap(),
        fs::read(dir.path().join("cw/metrics.jsonl")).unwrap()
    );
    assert_eq!(a.eval, b.eval);
}

#[test]
fn cw_weights_show_up_in_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(&small(), dir.path()).unwrap();
    assert!(run.records.iter().any(|r| r.min_norm_weight < 1.0 && r.max_norm_weight > 1.0));
    let grpo = train(
        &TrainConfig {
            method: Method::Grpo,
            ..small()
        },
        &dir.path().join("g"),
    )
    .unwrap();
    assert!(grpo.records.iter().all(|r| r.min_norm_weight == 1.0 && r.max_norm_weight == 1.0));
}

#[test]
fn multi_epoch_and_clip_cov_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        inner_epochs: 3,
        ratio_clip: Some(0.2),
        method: Method::ClipCov(2.0),
        ..small()
    };
    let run = train(&cfg, dir.path()).unwrap();
    assert!(run.records.iter().all(|r| r.is_finite()));
}

#[test]
fn divergence_aborts_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { steps: 3, ..small() };
    let mut ckpt = Trainer::new(&cfg).unwrap().checkpoint();
    ckpt.params.weights[0] = f64::INFINITY;
    match resume(&cfg, ckpt, dir.path()) {
        Err(Error::NonFinite { step, dump, .. }) => {
            assert_eq!(step, 1);
            let on_disk = fs::read_to_string(dir.path().join("nonfinite_dump.json")).unwrap();
            assert_eq!(on_disk, dump);
            assert!(on_disk.contains("\"advantages\""));
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn trainer_steps_are_counted_and_checkpointed() {
    let mut t = Trainer::new(&small()).unwrap();
    t.step().unwrap();
    t.step().unwrap();
    assert_eq!(t.steps_done(), 2);
    let ck = t.checkpoint();
    assert_eq!(ck.step, 2);
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back, ck);
}
