use std::path::Path;

use peginsert::checkpoint as ck;
use peginsert::config::ExperimentConfig;
use peginsert::metrics::{read_lines, read_rows, EpisodeRow, EPISODE_SCHEMA};
use peginsert::train::{load_policy, Trainer, EPISODES_FILE, EVAL_FILE};
use peginsert::HarnessError;
use peginsert_core::nn::Params;

fn small(steps: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![5];
    cfg.train.total_steps = steps;
    cfg.train.eval_every = 100;
    cfg.eval.episodes = 2;
    cfg.env.episode.max_steps = 40;
    cfg.sac.warmup = 50;
    cfg.sac.batch_size = 16;
    cfg.sac.capacity = 1_000;
    cfg
}

fn logs(dir: &Path) -> (Vec<String>, Vec<String>) {
    (read_lines(&dir.join(EPISODES_FILE)).unwrap(), read_lines(&dir.join(EVAL_FILE)).unwrap())
}

#[test]
fn zero_steps_writes_initial_checkpoint_and_empty_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let s = Trainer::new(small(0), dir.path()).unwrap().run().unwrap();
    assert_eq!(s.steps, 0);
    assert!(s.evals.is_empty());
    let (ep, ev) = logs(dir.path());
    // Schema line and header only.
    assert_eq!((ep.len(), ev.len()), (2, 2));
    let cp = ck::resolve(dir.path()).unwrap();
    for f in [ck::MODEL_FILE, ck::STATE_FILE, ck::REPLAY_FILE, ck::WORKERS_FILE, ck::CONFIG_FILE] {
        assert!(cp.join(f).exists(), "{f} missing");
    }
    let (policy, cfg) = load_policy(&cp).unwrap();
    assert!(policy.is_finite());
    assert_eq!(cfg.train.total_steps, 0);
}

#[test]
fn same_seed_same_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Trainer::new(small(300), a.path()).unwrap().run().unwrap();
    Trainer::new(small(300), b.path()).unwrap().run().unwrap();
    assert_eq!(logs(a.path()), logs(b.path()));
    let rows: Vec<EpisodeRow> = read_rows(&a.path().join(EPISODES_FILE), EPISODE_SCHEMA).unwrap();
    assert!(!rows.is_empty());
}

#[test]
fn resume_continues_exactly() {
    let full = tempfile::tempdir().unwrap();
    let cut = tempfile::tempdir().unwrap();
    Trainer::new(small(300), full.path()).unwrap().run().unwrap();
    Trainer::new(small(300), cut.path()).unwrap().run_until(170).unwrap();
    let mut t = Trainer::resume(cut.path(), None, None).unwrap();
    assert_eq!(t.step(), 170);
    t.run().unwrap();
    assert_eq!(logs(full.path()), logs(cut.path()));
}

#[test]
fn only_latest_checkpoint_keeps_replay() {
    let dir = tempfile::tempdir().unwrap();
    Trainer::new(small(300), dir.path()).unwrap().run().unwrap();
    let latest = ck::resolve(dir.path()).unwrap();
    let first = ck::step_dir(dir.path(), 0);
    assert!(latest.join(ck::REPLAY_FILE).exists());
    assert!(!first.join(ck::REPLAY_FILE).exists());
    match Trainer::resume(&first, None, None) {
        Err(HarnessError::Config(m)) => assert!(m.contains("replay")),
        other => panic!("expected a config error, got {:?}", other.map(|t| t.step())),
    }
}

#[test]
fn parallel_workers_are_deterministic() {
    let mut cfg = small(200);
    cfg.train.workers = 2;
    cfg.train.sync_every = 10;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = Trainer::new(cfg.clone(), a.path()).unwrap().run().unwrap();
    Trainer::new(cfg, b.path()).unwrap().run().unwrap();
    assert_eq!(s.steps, 200);
    assert_eq!(logs(a.path()), logs(b.path()));
}

#[test]
fn non_finite_loss_halts_with_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(300);
    let mut agent = Trainer::new(cfg.clone(), &dir.path().join("scratch")).unwrap().agent;
    for t in agent.q1.params_mut() {
        t.fill(f32::NAN);
    }
    let out = dir.path().join("run");
    let err = Trainer::with_agent(cfg, &out, agent).unwrap().run().unwrap_err();
    assert!(err.to_string().contains("non-finite"), "{err}");
    assert_eq!(err.exit_code(), 2);
    // The step-0 checkpoint is intact and loadable.
    let cp = ck::resolve(&out).unwrap();
    assert_eq!(cp, ck::step_dir(&out, 0));
    assert!(load_policy(&cp).unwrap().0.is_finite());
}
