use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gp::{GpBandit, Observation};
use super::space::{sample_initial_population, Config, DimKind, HyperParamSpace, ParamValue};
use super::HpoError;
use crate::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pb2Config {
    pub population: usize,
    /// Fraction λ of the population in each of the top and bottom sets.
    pub quantile: f64,
    /// Epochs between exploit/explore steps.
    pub t_ready: usize,
    /// Chance that a categorical or boolean value is resampled on explore.
    pub mutation_probability: f64,
    /// When false, perturbed trials take the donor's continuous values as is.
    pub explore: bool,
    /// Width of the upper confidence bound.
    pub kappa: f64,
    /// Most recent observations the bandit keeps.
    pub window: usize,
    /// Relative perturbation used before the bandit has data.
    pub fallback_range: f64,
}

impl Default for Pb2Config {
    fn default() -> Self {
        Self { population: 8, quantile: 0.5, t_ready: 5, mutation_probability: 0.1, explore: true, kappa: 1.0, window: 64, fallback_range: 0.2 }
    }
}

impl Pb2Config {
    pub fn validate(&self) -> Result<(), HpoError> {
        if self.population < 2 {
            return Err(HpoError::Population(self.population));
        }
        if !(self.quantile > 0.0 && self.quantile <= 0.5) {
            return Err(HpoError::Config(format!("quantile {} outside (0, 0.5]", self.quantile)));
        }
        if self.t_ready == 0 {
            return Err(HpoError::Config("t_ready must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_probability) {
            return Err(HpoError::Config("mutation probability outside [0, 1]".into()));
        }
        if !(self.kappa >= 0.0 && self.fallback_range >= 0.0) {
            return Err(HpoError::Config("kappa and fallback range must be non-negative".into()));
        }
        Ok(())
    }
}

/// How a perturbed trial's continuous values were chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    Bandit,
    Fallback,
    Clone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineageEvent {
    pub epoch: usize,
    pub donor: usize,
    pub old_config: Config,
    pub new_config: Config,
    pub proposal: Proposal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub trial_id: usize,
    pub config: Config,
    pub epoch: usize,
    #[serde(skip)]
    pub checkpoint: Vec<u8>,
    /// `(epoch, score)` for every trained epoch, 1-based.
    pub score_history: Vec<(usize, f64)>,
    /// Best score of the latest interval; after an exploit, the donor's.
    pub interval_score: Option<f64>,
    pub lineage: Vec<LineageEvent>,
    pub failed: Option<String>,
}

impl TrialState {
    fn new(trial_id: usize, config: Config, checkpoint: Vec<u8>) -> Self {
        Self { trial_id, config, epoch: 0, checkpoint, score_history: Vec::new(), interval_score: None, lineage: Vec::new(), failed: None }
    }

    pub fn best_score(&self) -> Option<f64> {
        self.score_history.iter().map(|&(_, s)| s).reduce(f64::min)
    }
}

/// Output of one training interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub checkpoint: Vec<u8>,
    /// Validation score after each epoch; lower is better.
    pub scores: Vec<f64>,
}

/// Something the tuner can train: checkpoints are opaque bytes, so cloning
/// a trial is a byte copy.
pub trait Trainable {
    fn init(&self, trial_id: usize, config: &Config, seed: u64) -> Result<Vec<u8>, HpoError>;

    /// Trains `epochs` epochs starting from `checkpoint` under `config`.
    fn train(&self, trial_id: usize, checkpoint: &[u8], config: &Config, epochs: usize, seed: u64) -> Result<Step, HpoError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HpoEvent {
    Start { trial: usize, config: Config },
    Interval { trial: usize, epoch: usize, scores: Vec<f64>, interval_score: f64, checkpoint_sha256: String },
    Failed { trial: usize, epoch: usize, reason: String },
    Exploit { trial: usize, epoch: usize, donor: usize, checkpoint_sha256: String, old_config: Config, new_config: Config, proposal: Proposal },
    Best { trial: usize, epoch: usize, score: f64 },
}

#[derive(Clone, Debug)]
pub struct HpoResult {
    /// Snapshot of the trial at the end of the interval holding the lowest
    /// score seen.
    pub best: TrialState,
    pub best_score: f64,
    pub best_epoch: usize,
    pub population: Vec<TrialState>,
    pub history: Vec<HpoEvent>,
    pub total_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    /// Trial ids of the top set, best first.
    pub above: Vec<usize>,
    /// Trial ids of the bottom set, best first.
    pub below: Vec<usize>,
}

/// Ranks trials by interval score, ties by trial id. The top set holds
/// `⌊nλ⌋` trials and the bottom `⌈nλ⌉`, so with `λ = 0.5` exactly `⌊n/2⌋`
/// trials continue unchanged.
pub fn ready_and_rank(trials: &[TrialState], quantile: f64) -> Result<Ranking, HpoError> {
    if trials.len() < 2 {
        return Err(HpoError::Population(trials.len()));
    }
    if !(quantile > 0.0 && quantile <= 0.5) {
        return Err(HpoError::Config(format!("quantile {quantile} outside (0, 0.5]")));
    }
    if trials.iter().any(|t| t.epoch != trials[0].epoch) {
        return Err(HpoError::UnequalEpochs(trials.iter().map(|t| (t.trial_id, t.epoch)).collect()));
    }
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(trials.len());
    for t in trials {
        let s = t.interval_score.filter(|s| !s.is_nan()).ok_or(HpoError::NotReady(t.trial_id))?;
        order.push((s, t.trial_id));
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = trials.len();
    let x = n as f64 * quantile;
    let n_above = (x.floor() as usize).max(1);
    let n_below = (x.ceil() as usize).min(n - n_above);
    Ok(Ranking { above: order[..n_above].iter().map(|o| o.1).collect(), below: order[n - n_below..].iter().map(|o| o.1).collect() })
}

fn perturb(value: f64, lo: f64, hi: f64, range: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random_range(-1.0..=1.0);
    let v = if value == 0.0 { u * range * (hi - lo) } else { value * (1.0 + u * range) };
    v.clamp(lo, hi)
}

/// Replaces `target` with a copy of a uniformly chosen member of `above`
/// (checkpoint bytes and config), then explores: categorical and boolean
/// values resample with the mutation probability, continuous values come
/// from the bandit's upper confidence bound at time `t_now`, or a relative
/// perturbation while it has fewer than two observations. Structural
/// dimensions are never changed.
pub fn exploit_explore(
    target: &TrialState,
    above: &[&TrialState],
    space: &HyperParamSpace,
    cfg: &Pb2Config,
    bandit: &GpBandit,
    t_now: f64,
    rng: &mut impl Rng,
) -> Result<TrialState, HpoError> {
    if above.is_empty() {
        return Err(HpoError::Config("no donor trials".into()));
    }
    let donor = above[rng.random_range(0..above.len())];
    let mut config = donor.config.clone();
    for d in space.dimensions.iter().filter(|d| !d.structural && !d.is_continuous()) {
        if rng.random_bool(cfg.mutation_probability) {
            config.insert(d.name.clone(), d.sample(rng));
        }
    }
    let continuous = space.continuous();
    let proposal = if !cfg.explore || continuous.is_empty() {
        Proposal::Clone
    } else if let Some(u) = bandit.propose(&space.embed(&donor.config), t_now, rng) {
        for (d, u) in continuous.iter().zip(u) {
            config.insert(d.name.clone(), ParamValue::Float(d.clip(d.denormalize(u))));
        }
        Proposal::Bandit
    } else {
        for d in &continuous {
            let DimKind::Continuous { lo, hi, .. } = d.kind else { unreachable!() };
            let v = donor.config.get(&d.name).and_then(ParamValue::as_f64).unwrap_or(lo);
            config.insert(d.name.clone(), ParamValue::Float(perturb(v, lo, hi, cfg.fallback_range, rng)));
        }
        Proposal::Fallback
    };
    let mut next = target.clone();
    next.lineage.push(LineageEvent { epoch: donor.epoch, donor: donor.trial_id, old_config: target.config.clone(), new_config: config.clone(), proposal });
    next.config = config;
    next.checkpoint = donor.checkpoint.clone();
    next.epoch = donor.epoch;
    next.interval_score = donor.interval_score;
    next.failed = None;
    Ok(next)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

type Sink<'a> = dyn FnMut(&HpoEvent) -> Result<(), HpoError> + 'a;

struct Recorder<'a, 'b> {
    history: Vec<HpoEvent>,
    sink: &'a mut Sink<'b>,
}

impl Recorder<'_, '_> {
    fn push(&mut self, e: HpoEvent) -> Result<(), HpoError> {
        (self.sink)(&e)?;
        self.history.push(e);
        Ok(())
    }
}

struct Best {
    state: TrialState,
    score: f64,
    epoch: usize,
}

/// Trains one interval and records it; returns false if the trial crashed.
fn advance<R: Trainable + ?Sized>(
    trial: &mut TrialState,
    trainable: &R,
    epochs: usize,
    seed: u64,
    rec: &mut Recorder,
    best: &mut Option<Best>,
) -> Result<bool, HpoError> {
    let result = trainable.train(trial.trial_id, &trial.checkpoint, &trial.config, epochs, seed).and_then(|s| {
        if s.scores.len() != epochs || s.scores.iter().any(|v| v.is_nan()) {
            Err(HpoError::Trial { trial: trial.trial_id, reason: format!("expected {epochs} finite scores, got {:?}", s.scores) })
        } else {
            Ok(s)
        }
    });
    let step = match result {
        Ok(s) => s,
        Err(e) => {
            log::warn!("trial {} failed at epoch {}: {e}", trial.trial_id, trial.epoch);
            trial.failed = Some(e.to_string());
            rec.push(HpoEvent::Failed { trial: trial.trial_id, epoch: trial.epoch, reason: e.to_string() })?;
            return Ok(false);
        }
    };
    let start = trial.epoch;
    for (i, &s) in step.scores.iter().enumerate() {
        trial.score_history.push((start + i + 1, s));
    }
    trial.checkpoint = step.checkpoint;
    trial.epoch += epochs;
    let (arg, score) = step.scores.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
    trial.interval_score = Some(score);
    rec.push(HpoEvent::Interval {
        trial: trial.trial_id,
        epoch: trial.epoch,
        scores: step.scores,
        interval_score: score,
        checkpoint_sha256: sha256_hex(&trial.checkpoint),
    })?;
    if best.as_ref().is_none_or(|b| score < b.score) {
        let epoch = start + arg + 1;
        rec.push(HpoEvent::Best { trial: trial.trial_id, epoch, score })?;
        *best = Some(Best { state: trial.clone(), score, epoch });
    }
    Ok(true)
}

fn check_budget(budget_epochs: usize) -> Result<(), HpoError> {
    if budget_epochs == 0 {
        return Err(HpoError::Config("epoch budget must be at least 1".into()));
    }
    Ok(())
}

fn init_population<R: Trainable + ?Sized>(
    space: &HyperParamSpace,
    n: usize,
    trainable: &R,
    seed: u64,
    rec: &mut Recorder,
) -> Result<Vec<TrialState>, HpoError> {
    let configs = sample_initial_population(space, n, seed)?;
    let mut trials = Vec::with_capacity(n);
    for (i, config) in configs.into_iter().enumerate() {
        rec.push(HpoEvent::Start { trial: i, config: config.clone() })?;
        let ck = trainable.init(i, &config, mix_seed(seed, i as u64 + 1))?;
        trials.push(TrialState::new(i, config, ck));
    }
    Ok(trials)
}

fn finish(trials: Vec<TrialState>, best: Option<Best>, rec: Recorder, total_epochs: usize, epoch: usize) -> Result<HpoResult, HpoError> {
    let best = best.ok_or(HpoError::AllFailed(epoch))?;
    Ok(HpoResult { best: best.state, best_score: best.score, best_epoch: best.epoch, population: trials, history: rec.history, total_epochs })
}

fn run<R: Trainable + ?Sized>(
    space: &HyperParamSpace,
    cfg: &Pb2Config,
    budget_epochs: usize,
    trainable: &R,
    seed: u64,
    sink: &mut Sink,
) -> Result<HpoResult, HpoError> {
    cfg.validate()?;
    check_budget(budget_epochs)?;
    let mut rec = Recorder { history: Vec::new(), sink };
    let mut trials = init_population(space, cfg.population, trainable, seed, &mut rec)?;
    let mut bandit = GpBandit::new(cfg.window, cfg.kappa);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB0B));
    let mut best = None;
    let mut total = 0;
    let mut generation = 0u64;
    let mut epoch = 0;
    while epoch < budget_epochs {
        let epochs = cfg.t_ready.min(budget_epochs - epoch);
        for t in trials.iter_mut() {
            let baseline = t.interval_score;
            let x = space.embed(&t.config);
            let ok = advance(t, trainable, epochs, mix_seed(mix_seed(seed, generation + 1), t.trial_id as u64), &mut rec, &mut best)?;
            total += epochs;
            if let (true, Some(b), Some(s)) = (ok, baseline, t.interval_score) {
                bandit.observe(Observation { x, t: generation as f64, y: b - s });
            }
        }
        epoch += epochs;
        generation += 1;
        let live: Vec<TrialState> = trials.iter().filter(|t| t.failed.is_none()).cloned().collect();
        if live.is_empty() {
            return Err(HpoError::AllFailed(epoch));
        }
        if epoch >= budget_epochs {
            break;
        }
        let mut failed: Vec<usize> = trials.iter().filter(|t| t.failed.is_some()).map(|t| t.trial_id).collect();
        let (above, mut below) = if live.len() >= 2 {
            let r = ready_and_rank(&live, cfg.quantile)?;
            (r.above, r.below)
        } else {
            (vec![live[0].trial_id], Vec::new())
        };
        below.append(&mut failed);
        let donors: Vec<TrialState> = above.iter().map(|&id| trials[id].clone()).collect();
        let donor_refs: Vec<&TrialState> = donors.iter().collect();
        // pending proposals enter as pseudo-observations at the posterior
        // mean, so one interval's proposals spread out
        let mut pending = bandit.clone();
        for id in below {
            let next = exploit_explore(&trials[id], &donor_refs, space, cfg, &pending, generation as f64, &mut rng)?;
            let x = space.embed(&next.config);
            if let Some((mu, _)) = pending.predict(&x, generation as f64) {
                pending.observe(Observation { x, t: generation as f64, y: mu });
            }
            let ev = next.lineage.last().expect("just pushed");
            rec.push(HpoEvent::Exploit {
                trial: id,
                epoch: ev.epoch,
                donor: ev.donor,
                checkpoint_sha256: sha256_hex(&next.checkpoint),
                old_config: ev.old_config.clone(),
                new_config: ev.new_config.clone(),
                proposal: ev.proposal,
            })?;
            trials[id] = next;
        }
    }
    finish(trials, best, rec, total, epoch)
}

/// Population-based training with bandit exploration. Deterministic in
/// `seed`; returns the best trial snapshot ever observed and the full event
/// history.
pub fn run_hpo<R: Trainable + ?Sized>(space: &HyperParamSpace, cfg: &Pb2Config, budget_epochs: usize, trainable: &R, seed: u64) -> Result<HpoResult, HpoError> {
    run(space, cfg, budget_epochs, trainable, seed, &mut |_| Ok(()))
}

/// [`run_hpo`] that also appends every event as a JSON line to `log`.
pub fn run_hpo_logged<R: Trainable + ?Sized>(
    space: &HyperParamSpace,
    cfg: &Pb2Config,
    budget_epochs: usize,
    trainable: &R,
    seed: u64,
    log: &Path,
) -> Result<HpoResult, HpoError> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(log)?;
    run(space, cfg, budget_epochs, trainable, seed, &mut |e| {
        writeln!(file, "{}", serde_json::to_string(e)?)?;
        file.flush()?;
        Ok(())
    })
}

/// Baseline at equal compute: `population` independent random
/// configurations, each trained for the whole budget.
pub fn random_search<R: Trainable + ?Sized>(
    space: &HyperParamSpace,
    population: usize,
    budget_epochs: usize,
    trainable: &R,
    seed: u64,
) -> Result<HpoResult, HpoError> {
    check_budget(budget_epochs)?;
    let mut sink = |_: &HpoEvent| Ok(());
    let mut rec = Recorder { history: Vec::new(), sink: &mut sink };
    let mut trials = init_population(space, population, trainable, seed, &mut rec)?;
    let mut best = None;
    let mut total = 0;
    for t in trials.iter_mut() {
        advance(t, trainable, budget_epochs, mix_seed(mix_seed(seed, 1), t.trial_id as u64), &mut rec, &mut best)?;
        total += budget_epochs;
    }
    finish(trials, best, rec, total, budget_epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::presets;

    fn trial(id: usize, score: f64, epoch: usize) -> TrialState {
        let mut c = Config::new();
        c.insert("lr".into(), ParamValue::Float(0.1 * id as f64));
        TrialState { interval_score: Some(score), epoch, ..TrialState::new(id, c, vec![id as u8; 4]) }
    }

    #[test]
    fn ranks_four_trials() {
        let ts: Vec<_> = (1..=4).map(|i| trial(i, i as f64, 5)).collect();
        let r = ready_and_rank(&ts, 0.5).unwrap();
        assert_eq!(r.above, vec![1, 2]);
        assert_eq!(r.below, vec![3, 4]);
    }

    #[test]
    fn ties_break_by_id() {
        let ts = vec![trial(2, 1.0, 5), trial(0, 1.0, 5), trial(1, 1.0, 5), trial(3, 1.0, 5)];
        let r = ready_and_rank(&ts, 0.25).unwrap();
        assert_eq!(r.above, vec![0]);
        assert_eq!(r.below, vec![3]);
    }

    #[test]
    fn odd_population_continues_floor_half() {
        let ts: Vec<_> = (0..5).map(|i| trial(i, i as f64, 5)).collect();
        let r = ready_and_rank(&ts, 0.5).unwrap();
        assert_eq!(r.above, vec![0, 1]);
        assert_eq!(r.below, vec![2, 3, 4]);
    }

    #[test]
    fn unequal_epochs_rejected() {
        let ts = vec![trial(0, 1.0, 5), trial(1, 2.0, 10)];
        assert!(matches!(ready_and_rank(&ts, 0.5), Err(HpoError::UnequalEpochs(_))));
    }

    #[test]
    fn exploit_copies_bytes_and_stays_in_bounds() {
        let space = presets::quadratic();
        let cfg = Pb2Config::default();
        let donor = trial(7, 0.1, 5);
        let target = trial(3, 0.9, 5);
        let gp = GpBandit::new(8, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let next = exploit_explore(&target, &[&donor], &space, &cfg, &gp, 1.0, &mut rng).unwrap();
            assert_eq!(next.checkpoint, donor.checkpoint);
            assert_eq!(next.trial_id, 3);
            let lr = next.config["lr"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&lr));
            assert!((lr - 0.7).abs() <= 0.7 * 0.2 + 1e-12, "{lr}");
            assert_eq!(next.lineage.last().unwrap().proposal, Proposal::Fallback);
        }
    }

    #[test]
    fn config_validation() {
        let ok = Pb2Config::default();
        assert!(Pb2Config { population: 1, ..ok.clone() }.validate().is_err());
        assert!(Pb2Config { quantile: 0.6, ..ok.clone() }.validate().is_err());
        assert!(Pb2Config { quantile: 0.0, ..ok.clone() }.validate().is_err());
        assert!(Pb2Config { t_ready: 0, ..ok }.validate().is_err());
    }
}
