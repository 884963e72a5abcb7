use std::cell::RefCell;
use std::collections::BTreeMap;

use fusionscreen::data::{featurize, generate_dataset, GenParams, Sample};
use fusionscreen::hpo::{
    presets, random_search, run_hpo, run_hpo_logged, Config, FusionTrainable, HpoError, HpoEvent, Pb2Config, Proposal, QuadraticTrainable, Step, Trainable,
};
use fusionscreen::models::{presets as model_presets, FusionMode, TrainMode};

/// Wraps a trainable and remembers every checkpoint each trial handed in
/// and got back, keyed by `(trial, epoch)`.
struct Recording<R> {
    inner: R,
    inputs: RefCell<BTreeMap<(usize, usize), Vec<u8>>>,
    outputs: RefCell<BTreeMap<(usize, usize), Vec<u8>>>,
    epochs: RefCell<BTreeMap<usize, usize>>,
    fail: Option<(usize, usize)>,
}

impl<R> Recording<R> {
    fn new(inner: R) -> Self {
        Self { inner, inputs: Default::default(), outputs: Default::default(), epochs: Default::default(), fail: None }
    }
}

impl<R: Trainable> Trainable for Recording<R> {
    fn init(&self, trial_id: usize, config: &Config, seed: u64) -> Result<Vec<u8>, HpoError> {
        self.inner.init(trial_id, config, seed)
    }

    fn train(&self, trial_id: usize, checkpoint: &[u8], config: &Config, epochs: usize, seed: u64) -> Result<Step, HpoError> {
        // the quadratic checkpoint stores its own epoch in bytes 8..16
        let start = u64::from_le_bytes(checkpoint[8..16].try_into().unwrap()) as usize;
        if self.fail == Some((trial_id, start)) {
            return Err(HpoError::Trial { trial: trial_id, reason: "injected crash".into() });
        }
        self.inputs.borrow_mut().insert((trial_id, start), checkpoint.to_vec());
        let step = self.inner.train(trial_id, checkpoint, config, epochs, seed)?;
        self.outputs.borrow_mut().insert((trial_id, start + epochs), step.checkpoint.clone());
        *self.epochs.borrow_mut().entry(trial_id).or_default() += epochs;
        Ok(step)
    }
}

fn quadratic_cfg(population: usize) -> Pb2Config {
    Pb2Config { population, t_ready: 5, ..Pb2Config::default() }
}

#[test]
fn deterministic_for_fixed_seed() {
    let space = presets::quadratic();
    let q = QuadraticTrainable::default();
    let a = run_hpo(&space, &quadratic_cfg(6), 30, &q, 11).unwrap();
    let b = run_hpo(&space, &quadratic_cfg(6), 30, &q, 11).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best_score, b.best_score);
    let c = run_hpo(&space, &quadratic_cfg(6), 30, &q, 12).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn population_of_one_rejected() {
    let r = run_hpo(&presets::quadratic(), &quadratic_cfg(1), 10, &QuadraticTrainable::default(), 0);
    assert!(matches!(r, Err(HpoError::Population(1))));
}

#[test]
fn exploit_clones_donor_checkpoint_bitwise() {
    let rec = Recording::new(QuadraticTrainable::default());
    let res = run_hpo(&presets::quadratic(), &quadratic_cfg(8), 50, &rec, 3).unwrap();
    let outputs = rec.outputs.borrow();
    let inputs = rec.inputs.borrow();
    let mut exploits = 0;
    for e in &res.history {
        if let HpoEvent::Exploit { trial, epoch, donor, .. } = e {
            exploits += 1;
            assert_eq!(inputs[&(*trial, *epoch)], outputs[&(*donor, *epoch)], "trial {trial} at {epoch}");
        }
    }
    assert!(exploits > 0);
}

#[test]
fn half_the_population_continues_each_interval() {
    for n in [4, 5, 8] {
        let res = run_hpo(&presets::quadratic(), &quadratic_cfg(n), 40, &QuadraticTrainable::default(), 5).unwrap();
        let mut per_epoch: BTreeMap<usize, usize> = BTreeMap::new();
        for e in &res.history {
            if let HpoEvent::Exploit { epoch, .. } = e {
                *per_epoch.entry(*epoch).or_default() += 1;
            }
        }
        // perturbation after every interval but the last
        assert_eq!(per_epoch.keys().copied().collect::<Vec<_>>(), vec![5, 10, 15, 20, 25, 30, 35]);
        assert!(per_epoch.values().all(|&k| k == n - n / 2), "n={n}: {per_epoch:?}");
    }
}

#[test]
fn no_mutation_no_explore_gives_exact_clones() {
    let cfg = Pb2Config { mutation_probability: 0.0, explore: false, ..quadratic_cfg(6) };
    let res = run_hpo(&presets::fusion(), &cfg, 20, &ConfigEcho, 8).unwrap();
    let starts: Vec<Config> = res.history.iter().filter_map(|e| if let HpoEvent::Start { config, .. } = e { Some(config.clone()) } else { None }).collect();
    for e in &res.history {
        if let HpoEvent::Exploit { new_config, proposal, .. } = e {
            assert_eq!(*proposal, Proposal::Clone);
            assert!(starts.contains(new_config));
        }
    }
}

/// Scores a config by a fixed hash of its text; checkpoint is the epoch.
struct ConfigEcho;

impl Trainable for ConfigEcho {
    fn init(&self, _: usize, _: &Config, _: u64) -> Result<Vec<u8>, HpoError> {
        Ok(0u64.to_le_bytes().to_vec())
    }

    fn train(&self, _: usize, ck: &[u8], config: &Config, epochs: usize, _: u64) -> Result<Step, HpoError> {
        let e = u64::from_le_bytes(ck.try_into().unwrap()) + epochs as u64;
        let text = serde_json::to_string(config).unwrap();
        let s = text.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64)) % 1000;
        Ok(Step { checkpoint: e.to_le_bytes().to_vec(), scores: vec![s as f64; epochs] })
    }
}

#[test]
fn proposals_within_bounds_and_lineage_traces_to_start() {
    let space = presets::desk_fusion();
    let res = run_hpo(&space, &Pb2Config { population: 6, t_ready: 2, ..Pb2Config::default() }, 20, &ConfigEcho, 2).unwrap();
    for t in &res.population {
        for d in &space.dimensions {
            if let fusionscreen::hpo::DimKind::Continuous { lo, hi, .. } = d.kind {
                let v = t.config[&d.name].as_f64().unwrap();
                assert!(v >= lo && v <= hi, "{} = {v}", d.name);
            }
        }
        // walking donors backwards always ends at an initial sample
        let mut id = t.trial_id;
        let mut at = t.epoch;
        while let Some(ev) = res.population[id].lineage.iter().rev().find(|l| l.epoch <= at && l.epoch > 0) {
            assert!(ev.donor < res.population.len());
            id = ev.donor;
            at = ev.epoch - 1;
        }
    }
}

#[test]
fn crashed_trial_is_replaced() {
    let mut rec = Recording::new(QuadraticTrainable::default());
    rec.fail = Some((2, 10));
    let res = run_hpo(&presets::quadratic(), &quadratic_cfg(4), 30, &rec, 1).unwrap();
    assert!(res.history.iter().any(|e| matches!(e, HpoEvent::Failed { trial: 2, epoch: 10, .. })));
    assert!(res.history.iter().any(|e| matches!(e, HpoEvent::Exploit { trial: 2, epoch: 15, .. })));
    assert!(res.population[2].failed.is_none());
    assert_eq!(res.population[2].epoch, 30);
}

#[test]
fn best_is_minimum_ever_observed() {
    let res = run_hpo(&presets::quadratic(), &quadratic_cfg(4), 30, &QuadraticTrainable::default(), 9).unwrap();
    let min = res
        .history
        .iter()
        .filter_map(|e| if let HpoEvent::Interval { interval_score, .. } = e { Some(*interval_score) } else { None })
        .fold(f64::INFINITY, f64::min);
    assert_eq!(res.best_score, min);
    assert_eq!(res.best.best_score(), Some(min));
}

#[test]
fn proposals_concentrate_toward_optimum() {
    let q = QuadraticTrainable::default();
    let mut early = Vec::new();
    let mut late = Vec::new();
    for seed in 0..10 {
        let res = run_hpo(&presets::quadratic(), &Pb2Config { population: 8, t_ready: 5, ..Pb2Config::default() }, 55, &q, seed).unwrap();
        for e in &res.history {
            if let HpoEvent::Exploit { epoch, new_config, .. } = e {
                let gap = (new_config["lr"].as_f64().unwrap() - q.optimum(*epoch)).abs();
                if *epoch <= 25 {
                    early.push(gap)
                } else {
                    late.push(gap)
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&late) < 0.6 * mean(&early), "early {} late {}", mean(&early), mean(&late));
}

#[test]
fn random_search_spends_equal_budget() {
    let rec_pb2 = Recording::new(QuadraticTrainable::default());
    run_hpo(&presets::quadratic(), &quadratic_cfg(6), 40, &rec_pb2, 4).unwrap();
    let rec_rs = Recording::new(QuadraticTrainable::default());
    let rs = random_search(&presets::quadratic(), 6, 40, &rec_rs, 4).unwrap();
    let total = |r: &Recording<QuadraticTrainable>| r.epochs.borrow().values().sum::<usize>();
    assert_eq!(total(&rec_pb2), 240);
    assert_eq!(total(&rec_rs), 240);
    assert_eq!(rs.total_epochs, 240);
}

#[test]
fn log_is_append_only_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hpo.jsonl");
    let a = run_hpo_logged(&presets::quadratic(), &quadratic_cfg(4), 10, &QuadraticTrainable::default(), 0, &path).unwrap();
    let first = std::fs::read_to_string(&path).unwrap();
    assert_eq!(first.lines().count(), a.history.len());
    let b = run_hpo_logged(&presets::quadratic(), &quadratic_cfg(4), 10, &QuadraticTrainable::default(), 1, &path).unwrap();
    let both = std::fs::read_to_string(&path).unwrap();
    assert!(both.starts_with(&first));
    let parsed: Vec<HpoEvent> = both.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed.len(), a.history.len() + b.history.len());
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let cfg = model_presets::desk(FusionMode::Coherent, 0);
    generate_dataset(n, seed, &GenParams::default()).unwrap().iter().map(|c| featurize(c, &cfg.features).unwrap()).collect()
}

#[test]
fn tunes_coherent_fusion_model() {
    let train = samples(48, 1);
    let val = samples(16, 2);
    let t = FusionTrainable { base: model_presets::desk(FusionMode::Coherent, 0), mode: TrainMode::Coherent, heads: None, train: &train, val: &val };
    let cfg = Pb2Config { population: 3, t_ready: 1, ..Pb2Config::default() };
    let res = run_hpo(&presets::desk_fusion(), &cfg, 3, &t, 6).unwrap();
    assert_eq!(res.total_epochs, 9);
    assert!(res.best_score.is_finite());
    let again = run_hpo(&presets::desk_fusion(), &cfg, 3, &t, 6).unwrap();
    assert_eq!(res.history, again.history);
}
