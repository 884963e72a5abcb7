//! One pass/fail line per acceptance criterion. Runs as a plain binary so
//! the lines print in order. Failures are reported, and become fatal with
//! `ACCEPTANCE_STRICT=1`; `ACCEPTANCE_ONLY=N` runs a single criterion.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use common::{brute_pearson, brute_rank, nested_loop_best, random_records};
use fusionscreen::autodiff::ParamGroup;
use fusionscreen::data::{featurize, generate_dataset, planted_affinity, quintile_split, quintile_split_complexes, GenParams, Sample};
use fusionscreen::eval::{aggregate_best_pose, confusion, pr_curve, regression_metrics, Direction};
use fusionscreen::hpo::{presets as hpo_presets, random_search, run_hpo, Config, HpoError, HpoEvent, Pb2Config, QuadraticTrainable, Step, Trainable};
use fusionscreen::models::{late_fusion_predict, presets, train, Activation, FusionMode, FusionModel, Output, TrainMode, Trainer};
use fusionscreen::screen::{
    collect_outputs, generate_library, job_dir, parse_record, run_campaign, scaling_experiment, CampaignConfig, FaultPlan, JobStatus, JobTemplate,
    SyntheticCostScorer, ThroughputReport, JOB_MANIFEST,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn samples(data: &[fusionscreen::data::SyntheticComplex], mode: FusionMode) -> Vec<Sample> {
    let f = presets::desk(mode, 0).features;
    data.iter().map(|c| featurize(c, &f).unwrap()).collect()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let acts = [Activation::LeakyRelu, Activation::Selu, Activation::Relu];
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut offenders = Vec::new();
    for seed in 0..20u64 {
        let data = samples(&generate_dataset(1, 1000 + seed, &GenParams::default()).unwrap(), FusionMode::Coherent);
        let refs: Vec<&Sample> = data.iter().collect();
        for (name, mode, output) in [
            ("voxel", FusionMode::Late, Output::Voxel),
            ("graph", FusionMode::Late, Output::Graph),
            ("mid", FusionMode::Mid, Output::Fused),
            ("coherent", FusionMode::Coherent, Output::Fused),
        ] {
            let mut cfg = presets::toy(mode, seed);
            cfg.fusion.activation = acts[seed as usize % 3];
            cfg.fusion.n_fusion_layers = 2 + seed as usize % 2;
            cfg.fusion.model_specific_layers = seed % 2 == 1;
            cfg.fusion.residual_fusion = seed % 4 >= 2;
            cfg.fusion.batch_norm = seed % 5 == 0;
            cfg.voxel.batch_norm = seed % 5 == 1;
            cfg.voxel.residual_1 = seed % 3 == 0;
            let m = FusionModel::<f64>::new(cfg).unwrap();
            let err = m.gradient_check(&refs, output, 1e-5).unwrap();
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(err);
            if err >= 1e-4 {
                offenders.push((seed, name, err, m, refs.iter().map(|s| (*s).clone()).collect::<Vec<Sample>>(), output));
            }
        }
    }
    let t = start.elapsed();
    let max = worst.values().cloned().fold(0.0, f64::max);
    let worst: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    let mut detail = format!("max relative error [{}] (< 1e-4), {:.1} s (< 120 s)", worst.join(", "), t.as_secs_f64());
    // a failure that vanishes at a smaller step sits on a ReLU or max-pool kink
    for (seed, name, err, m, data, output) in &offenders {
        let refs: Vec<&Sample> = data.iter().collect();
        let fine = m.gradient_check(&refs, *output, 1e-7).unwrap();
        detail += &format!("; seed {seed} {name}: {err:.1e} at 1e-5, {fine:.1e} at 1e-7");
    }
    outcome(max < 1e-4 && t < Duration::from_secs(120), detail)
}

fn fusion_semantics() -> Outcome {
    let mut late_ok = 0;
    let mut frozen = 0;
    let mut moved = 0;
    for seed in 0..10u64 {
        let data = samples(&generate_dataset(24, 2000 + seed, &GenParams::default()).unwrap(), FusionMode::Mid);
        let mut cfg = presets::desk(FusionMode::Mid, seed);
        cfg.voxel.train.epochs = 1;
        cfg.graph.train.epochs = 1;
        cfg.fusion.train.epochs = 2;
        let mut base = FusionModel::<f64>::new(cfg).unwrap();
        train(&mut base, TrainMode::Voxel, &data, &[], seed).unwrap();
        train(&mut base, TrainMode::Graph, &data, &[], seed).unwrap();

        let late: Vec<f64> = base.late_fusion_predict(&data, 7).into_iter().map(Result::unwrap).collect();
        let v: Vec<f64> = base.predict_output(&data, Output::Voxel, 7).into_iter().map(Result::unwrap).collect();
        let g: Vec<f64> = base.predict_output(&data, Output::Graph, 7).into_iter().map(Result::unwrap).collect();
        if late.iter().zip(v.iter().zip(&g)).all(|(l, (a, b))| *l == (a + b) / 2.0 && *l == late_fusion_predict(*a, *b)) {
            late_ok += 1;
        }

        let heads = |m: &FusionModel<f64>| [m.store().group_values(ParamGroup::Voxel), m.store().group_values(ParamGroup::Graph)].concat();
        let before = heads(&base);
        let mut mid = base.clone();
        train(&mut mid, TrainMode::Mid, &data, &[], seed).unwrap();
        if heads(&mid).iter().zip(&before).all(|(a, b)| a.to_bits() == b.to_bits()) {
            frozen += 1;
        }
        let mut coh = base.clone();
        coh.config_mut().fusion.mode = FusionMode::Coherent;
        train(&mut coh, TrainMode::Coherent, &data, &[], seed).unwrap();
        let l2: f64 = heads(&coh).iter().zip(&before).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if l2 > 0.0 {
            moved += 1;
        }
    }
    outcome(
        late_ok == 10 && frozen == 10 && moved == 10,
        format!("late = mean exactly {late_ok}/10, mid heads bitwise frozen {frozen}/10, coherent heads moved {moved}/10"),
    )
}

fn learning_signal() -> Outcome {
    let start = Instant::now();
    let params = GenParams::default();
    let mut passed = 0;
    let mut r2s = Vec::new();
    for seed in 0..10u64 {
        let data = generate_dataset(2000, 3000 + seed, &params).unwrap();
        let split = quintile_split_complexes(&data, 0.10, seed).unwrap();
        let all = samples(&data, FusionMode::Coherent);
        let tr: Vec<Sample> = split.train.iter().map(|&i| all[i].clone()).collect();
        let va: Vec<Sample> = split.validation.iter().map(|&i| all[i].clone()).collect();
        let planted: Vec<f64> = split.validation.iter().map(|&i| planted_affinity(&data[i].atoms, &params.label).unwrap()).collect();

        let mut cfg = presets::desk(FusionMode::Coherent, seed);
        cfg.fusion.train.epochs = 3;
        let untrained = FusionModel::<f64>::new(cfg).unwrap();
        let mut t = Trainer::new(untrained.clone(), TrainMode::Coherent, seed).unwrap();
        let before = t.evaluate(&va).unwrap().unwrap();
        t.run(&tr, &va).unwrap();
        let (model, _) = t.finish(true);
        let pred: Vec<f64> = model.predict_batch(&va, 64).into_iter().map(Result::unwrap).collect();
        let labels: Vec<f64> = va.iter().map(|s| s.label).collect();
        let mse = regression_metrics(&pred, &labels).unwrap().rmse.powi(2);
        let r2 = regression_metrics(&pred, &planted).unwrap().r2.value().unwrap_or(f64::NEG_INFINITY);
        r2s.push(r2);
        if r2 > 0.3 && mse < before {
            passed += 1;
        }
    }
    let t = start.elapsed();
    let min = r2s.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        passed >= 9 && t < Duration::from_secs(600),
        format!("{passed}/10 seeds with R^2 > 0.3 and MSE below untrained (min R^2 {min:.3}), 3 epochs, {:.0} s (< 600 s)", t.as_secs_f64()),
    )
}

fn split_fidelity() -> Outcome {
    let mut worst_dev = 0.0f64;
    let mut sizes = BTreeSet::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<String> = (0..17_362).map(|i| format!("c{i}")).collect();
        let items: Vec<(&str, f64)> = ids.iter().map(|s| (s.as_str(), rng.random_range(0.0..14.0))).collect();
        let s = quintile_split(&items, 0.10, seed).unwrap();
        sizes.insert(s.validation.len());
        for q in 0..5 {
            let n_q = s.bucket.iter().filter(|&&b| b == q).count() as f64;
            let v_q = s.validation.iter().filter(|&&i| s.bucket[i] == q).count() as f64;
            worst_dev = worst_dev.max((v_q - 0.10 * n_q).abs());
        }
    }
    let (lo, hi) = (*sizes.first().unwrap(), *sizes.last().unwrap());
    outcome(
        (1731..=1737).contains(&lo) && (1731..=1737).contains(&hi) && worst_dev <= 1.0,
        format!("validation size {lo}..={hi} (1731..=1737), worst per-quintile deviation {worst_dev:.2} (<= 1), 10 seeds"),
    )
}

/// Remembers every checkpoint handed in and returned, keyed by
/// `(trial, epoch)`.
struct Recording {
    inner: QuadraticTrainable,
    inputs: std::cell::RefCell<BTreeMap<(usize, usize), Vec<u8>>>,
    outputs: std::cell::RefCell<BTreeMap<(usize, usize), Vec<u8>>>,
}

impl Trainable for Recording {
    fn init(&self, trial_id: usize, config: &Config, seed: u64) -> Result<Vec<u8>, HpoError> {
        self.inner.init(trial_id, config, seed)
    }

    fn train(&self, trial_id: usize, checkpoint: &[u8], config: &Config, epochs: usize, seed: u64) -> Result<Step, HpoError> {
        let start = u64::from_le_bytes(checkpoint[8..16].try_into().unwrap()) as usize;
        self.inputs.borrow_mut().insert((trial_id, start), checkpoint.to_vec());
        let step = self.inner.train(trial_id, checkpoint, config, epochs, seed)?;
        self.outputs.borrow_mut().insert((trial_id, start + epochs), step.checkpoint.clone());
        Ok(step)
    }
}

fn pb2_efficacy() -> Outcome {
    let space = hpo_presets::quadratic();
    let cfg = Pb2Config { population: 8, t_ready: 5, ..Pb2Config::default() };
    let (mut pb2, mut rnd) = (Vec::new(), Vec::new());
    let mut exploits = 0;
    let mut clones_ok = true;
    let mut budgets_equal = true;
    for seed in 0..10u64 {
        let rec = Recording { inner: QuadraticTrainable::default(), inputs: Default::default(), outputs: Default::default() };
        let a = run_hpo(&space, &cfg, 50, &rec, seed).unwrap();
        let b = random_search(&space, 8, 50, &QuadraticTrainable::default(), seed).unwrap();
        budgets_equal &= a.total_epochs == b.total_epochs;
        pb2.push(a.best_score);
        rnd.push(b.best_score);
        let (ins, outs) = (rec.inputs.borrow(), rec.outputs.borrow());
        for e in &a.history {
            if let HpoEvent::Exploit { trial, epoch, donor, .. } = e {
                exploits += 1;
                clones_ok &= ins.get(&(*trial, *epoch)) == outs.get(&(*donor, *epoch));
            }
        }
    }
    let (mp, mr) = (median(&mut pb2), median(&mut rnd));
    outcome(
        mp <= mr && clones_ok && exploits > 0 && budgets_equal,
        format!("median best PB2 {mp:.5} vs random {mr:.5} (<=), equal budgets {budgets_equal}, {exploits} exploits all bitwise clones {clones_ok}"),
    )
}

fn screening_exactly_once() -> Outcome {
    let start = Instant::now();
    let mut failures = 0;
    let mut corrupt = 0;
    let mut problems = Vec::new();
    for seed in 0..20u64 {
        let lib = generate_library(10_000, &["t"], 10, seed).unwrap();
        let lines: Vec<String> = lib.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let cfg = CampaignConfig {
            jobs: 10,
            parallelism: 2,
            retries: 3,
            layout: JobTemplate { ranks: 4, batch_size: 56, loaders: 2, ..JobTemplate::default() },
            ..CampaignConfig::default()
        };
        let faults = FaultPlan { record_corruption_rate: 0.001, job_failure_rate: 0.05, rank_failure_rate: 0.0, seed };
        let scorer = SyntheticCostScorer::per_pose(Duration::ZERO);
        let (report, _) = run_campaign(&lines, &cfg, &scorer, &faults, dir.path()).unwrap();
        failures += report.jobs.iter().map(|j| j.failures.len()).sum::<usize>();

        let (records, errors) = collect_outputs(dir.path()).unwrap();
        corrupt += errors.len();
        let logged: BTreeSet<usize> = errors.iter().map(|e| e.index).collect();
        let expected: BTreeSet<(String, String, u32)> =
            lines.iter().enumerate().filter(|(i, _)| !logged.contains(i)).map(|(_, l)| parse_record(l).unwrap().key()).collect();
        let got: Vec<(String, String, u32)> = records.iter().map(|r| (r.compound_id.clone(), r.target_id.clone(), r.pose_id)).collect();
        let unique: BTreeSet<_> = got.iter().cloned().collect();
        if unique.len() != got.len() {
            problems.push(format!("seed {seed}: {} duplicates", got.len() - unique.len()));
        }
        if unique != expected {
            problems.push(format!("seed {seed}: output ids differ from input minus corrupt"));
        }
        for j in &report.jobs {
            let present = job_dir(dir.path(), j.job_id).join(JOB_MANIFEST).exists();
            if present != (j.status == JobStatus::Completed) {
                problems.push(format!("seed {seed}: job {} status {:?} but output present {present}", j.job_id, j.status));
            }
        }
        let stray = std::fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".job-")).count();
        if stray > 0 {
            problems.push(format!("seed {seed}: {stray} partial job directories"));
        }
    }
    outcome(
        problems.is_empty() && failures > 0,
        format!(
            "20 campaigns x 100000 poses: {failures} failed attempts retried, {corrupt} corrupt records logged, problems {:?}, {:.0} s",
            problems,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn strong_scaling() -> Outcome {
    let lib = generate_library(400, &["t"], 5, 7).unwrap();
    let lines: Vec<String> = lib.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    let scorer = SyntheticCostScorer::per_pose(Duration::from_millis(1));
    let rows = scaling_experiment(&lines, &[1, 4], &[12, 56], 2, 3, &scorer).unwrap();
    let t = |w: usize, b: usize| rows.iter().find(|r| r.workers == w && r.batch_size == b).unwrap().mean_seconds;
    let ratio = t(4, 56) / t(1, 56);
    let batch_gap = (t(4, 12) - t(4, 56)).abs() / t(4, 56);
    let batch_gap_1 = (t(1, 12) - t(1, 56)).abs() / t(1, 56);
    outcome(
        ratio <= 0.35 && batch_gap <= 0.15 && batch_gap_1 <= 0.15,
        format!(
            "2000 poses at 1 ms: 4 groups / 1 group = {ratio:.3} (<= 0.35); batch 12 vs 56 differ {:.1}% at 4 groups, {:.1}% at 1 (<= 15%)",
            100.0 * batch_gap,
            100.0 * batch_gap_1
        ),
    )
}

fn throughput_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exact = true;
    for _ in 0..1000 {
        let pps: f64 = rng.random_range(0.0..1e5);
        let mppc: f64 = rng.random_range(1.0..10.0);
        let r = ThroughputReport::from_rate(pps, mppc);
        exact &= r.poses_per_hour == 3600.0 * pps && r.compounds_per_hour == r.poses_per_hour / mppc;
    }
    // a measured campaign obeys the same identities
    let lib = generate_library(50, &["a", "b"], 4, 1).unwrap();
    let lines: Vec<String> = lib.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let cfg = CampaignConfig {
        jobs: 2,
        layout: JobTemplate { ranks: 2, loaders: 1, ..JobTemplate::default() },
        mean_poses_per_compound: 4.0,
        ..CampaignConfig::default()
    };
    let (_, timings) = run_campaign(&lines, &cfg, &SyntheticCostScorer::per_pose(Duration::from_micros(50)), &FaultPlan::none(), dir.path()).unwrap();
    for r in [&timings.per_job, &timings.campaign] {
        exact &= r.poses_per_hour == 3600.0 * r.poses_per_second && r.compounds_per_hour == r.poses_per_hour / r.mean_poses_per_compound;
    }
    let table = ThroughputReport::from_rate(108.0, 10.0);
    let printed = 338_800.0;
    let documented = table.poses_per_hour == 388_800.0 && table.poses_per_hour != printed;
    outcome(
        exact && documented,
        format!(
            "identities exact on 1000 random rates and a measured campaign; 108 poses/s gives {} poses/h, not the transposed {printed}",
            table.poses_per_hour
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(4..80);
        let actual: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..10.0f64) * 4.0).round() / 4.0).collect();
        let pred: Vec<f64> = actual.iter().map(|x| x + rng.random_range(-2.0..2.0)).collect();
        let r = regression_metrics(&pred, &actual).unwrap();
        let mse = pred.iter().zip(&actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / n as f64;
        worst = worst.max((r.rmse - mse.sqrt()).abs());
        worst = worst.max((r.pearson_r.value().unwrap() - brute_pearson(&pred, &actual)).abs());
        worst = worst.max((r.spearman_r.value().unwrap() - brute_pearson(&brute_rank(&pred), &brute_rank(&actual))).abs());

        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let curve = pr_curve(&scores, &labels).unwrap();
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut best_f1 = 0.0f64;
        for &t in &scores {
            let tp = (0..n).filter(|&i| scores[i] >= t && labels[i]).count() as f64;
            let fp = (0..n).filter(|&i| scores[i] >= t && !labels[i]).count() as f64;
            let (p, rc) = (tp / (tp + fp), tp / pos);
            if p + rc > 0.0 {
                best_f1 = best_f1.max(2.0 * p * rc / (p + rc));
            }
        }
        worst = worst.max((curve.f1_best - best_f1).abs());
        let called: Vec<bool> = scores.iter().map(|&s| s >= 6.0).collect();
        let c = confusion::<f64>(&called, &labels).unwrap();
        let nf = n as f64;
        let po = (0..n).filter(|&i| called[i] == labels[i]).count() as f64 / nf;
        let pc = called.iter().filter(|&&x| x).count() as f64 / nf;
        let pe = pc * (pos / nf) + (1.0 - pc) * (1.0 - pos / nf);
        if let Some(k) = c.kappa.value() {
            worst = worst.max((k - (po - pe) / (1.0 - pe)).abs());
        }
    }
    let mut kmax = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let actual: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.3)).collect();
        let called: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.3)).collect();
        kmax = kmax.max(confusion::<f64>(&called, &actual).unwrap().kappa.value().unwrap().abs());
    }
    outcome(
        worst <= 1e-12 && kmax < 0.05,
        format!("worst gap to brute force {worst:.2e} (<= 1e-12) over 100 instances; marginal-random |kappa| max {kmax:.4} (< 0.05) at n = 10000, 10 seeds"),
    )
}

fn best_pose_aggregation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut matched = 0;
    for _ in 0..200 {
        let recs = random_records(&mut rng);
        if [Direction::HigherIsStronger, Direction::LowerIsStronger].iter().all(|&d| aggregate_best_pose(&recs, d).unwrap() == nested_loop_best(&recs, d)) {
            matched += 1;
        }
    }
    outcome(matched == 200, format!("{matched}/200 random instances equal the nested-loop oracle in both directions"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("fusion semantics", fusion_semantics),
        ("learning signal", learning_signal),
        ("split fidelity", split_fidelity),
        ("PB2 efficacy", pb2_efficacy),
        ("screening exactly-once", screening_exactly_once),
        ("strong scaling", strong_scaling),
        ("throughput identities", throughput_identities),
        ("metric oracles", metric_oracles),
        ("best-pose aggregation", best_pose_aggregation),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!("{} {:>2} {name}: {} [{:.1} s]", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria FAILED (set ACCEPTANCE_STRICT=1 to make this fatal)");
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
