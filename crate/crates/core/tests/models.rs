use fusionscreen::autodiff::{DenseArray, ParamGroup};
use fusionscreen::data::{featurize, generate_dataset, ComplexGraph, Edge, GenParams, Sample};
use fusionscreen::models::{presets, train, FusionMode, FusionModel, ModelError, Output, TrainMode, Trainer};

fn samples(n: usize, seed: u64, mode: FusionMode) -> Vec<Sample> {
    let cfg = presets::desk(mode, 0);
    generate_dataset(n, seed, &GenParams::default()).unwrap().iter().map(|c| featurize(c, &cfg.features).unwrap()).collect()
}

fn small_stage(cfg: &mut fusionscreen::models::ModelConfig, epochs: usize) {
    cfg.voxel.train.epochs = epochs;
    cfg.graph.train.epochs = epochs;
    cfg.fusion.train.epochs = epochs;
}

fn trained_heads(mode: FusionMode, seed: u64, data: &[Sample]) -> FusionModel<f64> {
    let mut cfg = presets::desk(mode, seed);
    small_stage(&mut cfg, 1);
    let mut m = FusionModel::new(cfg).unwrap();
    train(&mut m, TrainMode::Voxel, data, &[], seed).unwrap();
    train(&mut m, TrainMode::Graph, data, &[], seed).unwrap();
    m
}

#[test]
fn final_presets_construct() {
    for fusion in [presets::mid_fusion_final(), presets::coherent_fusion_final()] {
        let m = FusionModel::<f64>::new(presets::final_model(fusion)).unwrap();
        assert!(m.store().trainable_count() > 0);
    }
    let (g, _) = presets::graph_head_final();
    assert_eq!(g.dense_widths(), vec![85, 42, 1]);
    assert_eq!(presets::voxel_head_final().latent_width(), 64);
}

#[test]
fn zero_weights_predict_output_bias() {
    let data = samples(3, 1, FusionMode::Coherent);
    let mut m = FusionModel::<f64>::new(presets::desk(FusionMode::Coherent, 4)).unwrap();
    let ids: Vec<_> = m.store().iter().filter(|(_, p)| p.trainable).map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let fill = if name == "fusion.out.b" { 5.5 } else { 0.0 };
        let shape = m.store().value(id).shape().to_vec();
        *m.store_mut().value_mut(id) = DenseArray::filled(&shape, fill);
    }
    for p in m.predict_batch(&data, 2) {
        assert_eq!(p.unwrap(), 5.5);
    }
}

#[test]
fn late_is_exact_mean_of_heads() {
    let data = samples(6, 2, FusionMode::Late);
    let m = FusionModel::<f64>::new(presets::desk(FusionMode::Late, 9)).unwrap();
    let v = m.predict_output(&data, Output::Voxel, 4);
    let g = m.predict_output(&data, Output::Graph, 4);
    let late = m.predict_batch(&data, 4);
    for ((v, g), l) in v.into_iter().zip(g).zip(late) {
        assert_eq!(l.unwrap(), (v.unwrap() + g.unwrap()) / 2.0);
    }
}

#[test]
fn late_training_rejected() {
    let m = FusionModel::<f64>::new(presets::desk(FusionMode::Late, 0)).unwrap();
    assert!(matches!(Trainer::new(m.clone(), TrainMode::Mid, 0), Err(ModelError::LateTraining)));
    assert!(matches!("late".parse::<TrainMode>(), Err(ModelError::LateTraining)));
    assert_eq!("3d".parse::<TrainMode>().unwrap(), TrainMode::Voxel);
    assert_eq!("SG".parse::<TrainMode>().unwrap(), TrainMode::Graph);
}

#[test]
fn mid_needs_trained_heads() {
    let m = FusionModel::<f64>::new(presets::desk(FusionMode::Mid, 0)).unwrap();
    assert!(matches!(Trainer::new(m, TrainMode::Mid, 0), Err(ModelError::MissingHeads(_))));
}

#[test]
fn mid_freezes_heads_coherent_moves_them() {
    let data = samples(24, 3, FusionMode::Mid);
    let base = trained_heads(FusionMode::Mid, 5, &data);
    let heads = |m: &FusionModel<f64>| (m.store().group_values(ParamGroup::Voxel), m.store().group_values(ParamGroup::Graph));
    let before = heads(&base);
    let fusion_before = base.store().group_values(ParamGroup::Fusion);

    let mut mid = base.clone();
    train(&mut mid, TrainMode::Mid, &data, &[], 1).unwrap();
    let after = heads(&mid);
    assert!(before.0.iter().zip(&after.0).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(before.1.iter().zip(&after.1).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_ne!(mid.store().group_values(ParamGroup::Fusion), fusion_before);

    let mut coh = base.clone();
    coh.config_mut().fusion.mode = FusionMode::Coherent;
    train(&mut coh, TrainMode::Coherent, &data, &[], 1).unwrap();
    let moved = heads(&coh);
    let l2: f64 = before.0.iter().zip(&moved.0).chain(before.1.iter().zip(&moved.1)).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(l2 > 0.0);
}

#[test]
fn prediction_does_not_depend_on_batching() {
    let data = samples(9, 4, FusionMode::Coherent);
    let m = FusionModel::<f64>::new(presets::desk(FusionMode::Coherent, 2)).unwrap();
    let one: Vec<f64> = m.predict_batch(&data, 1).into_iter().map(Result::unwrap).collect();
    for bs in [2, 4, 9] {
        let other: Vec<f64> = m.predict_batch(&data, bs).into_iter().map(Result::unwrap).collect();
        for (a, b) in one.iter().zip(&other) {
            assert!((a - b).abs() < 1e-10, "batch {bs}: {a} vs {b}");
        }
    }
}

#[test]
fn corrupt_item_fails_alone() {
    let mut data = samples(5, 5, FusionMode::Coherent);
    let m = FusionModel::<f64>::new(presets::desk(FusionMode::Coherent, 2)).unwrap();
    let clean: Vec<f64> = m.predict_batch(&data, 5).into_iter().map(Result::unwrap).collect();
    data[2].grid.occupancy.data_mut()[0] = f64::NAN;
    data[4].graph.covalent_edges.push(Edge { a: 0, b: 10_000, dist: 1.0 });
    let out = m.predict_batch(&data, 5);
    for (i, r) in out.iter().enumerate() {
        match i {
            2 | 4 => assert!(matches!(r, Err(ModelError::Item { .. }))),
            _ => assert!((r.as_ref().unwrap() - clean[i]).abs() < 1e-10),
        }
    }
}

fn permuted(g: &ComplexGraph, perm: &[usize]) -> ComplexGraph {
    // perm[old] = new
    let n = g.n_nodes();
    let w = g.feature_width();
    let mut feats = vec![0.0; n * w];
    let mut roles = g.roles.clone();
    for old in 0..n {
        feats[perm[old] * w..(perm[old] + 1) * w].copy_from_slice(&g.node_features.data()[old * w..(old + 1) * w]);
        roles[perm[old]] = g.roles[old];
    }
    let remap = |es: &[Edge]| {
        es.iter()
            .map(|e| {
                let (a, b) = (perm[e.a], perm[e.b]);
                Edge { a: a.min(b), b: a.max(b), dist: e.dist }
            })
            .rev()
            .collect()
    };
    ComplexGraph {
        node_features: DenseArray::new(vec![n, w], feats).unwrap(),
        roles,
        covalent_edges: remap(&g.covalent_edges),
        noncovalent_edges: remap(&g.noncovalent_edges),
    }
}

#[test]
fn graph_head_is_permutation_invariant() {
    let data = samples(3, 6, FusionMode::Coherent);
    let m = FusionModel::<f64>::new(presets::desk(FusionMode::Coherent, 8)).unwrap();
    for s in &data {
        let n = s.graph.n_nodes();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        if (0..n).map(|i| perm[i]).collect::<std::collections::BTreeSet<_>>().len() != n {
            continue;
        }
        let mut p = s.clone();
        p.graph = permuted(&s.graph, &perm);
        let a = m.predict_output(std::slice::from_ref(s), Output::Graph, 1).remove(0).unwrap();
        let b = m.predict_output(std::slice::from_ref(&p), Output::Graph, 1).remove(0).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn save_load_round_trip() {
    let data = samples(4, 7, FusionMode::Mid);
    let m = trained_heads(FusionMode::Mid, 3, &data);
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = FusionModel::<f64>::load(dir.path()).unwrap();
    assert_eq!(back.trained(), m.trained());
    assert_eq!(back.store(), m.store());
    let a: Vec<f64> = m.predict_batch(&data, 4).into_iter().map(Result::unwrap).collect();
    let b: Vec<f64> = back.predict_batch(&data, 4).into_iter().map(Result::unwrap).collect();
    assert_eq!(a, b);
}

#[test]
fn heads_load_into_fusion_model() {
    let data = samples(8, 8, FusionMode::Mid);
    let donor = trained_heads(FusionMode::Late, 3, &data);
    let mut m = FusionModel::<f64>::new(presets::desk(FusionMode::Mid, 11)).unwrap();
    m.load_heads_from(&donor).unwrap();
    assert_eq!(m.store().group_values(ParamGroup::Voxel), donor.store().group_values(ParamGroup::Voxel));
    assert!(m.trained().voxel && m.trained().graph);
    Trainer::new(m, TrainMode::Mid, 0).unwrap();

    let mut wide = presets::desk(FusionMode::Mid, 11);
    wide.voxel.dense_nodes = 20;
    let mut other = FusionModel::<f64>::new(wide).unwrap();
    assert!(matches!(other.load_heads_from(&donor), Err(ModelError::LatentMismatch { .. })));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = samples(20, 9, FusionMode::Coherent);
    let (tr, va) = data.split_at(16);
    let m = FusionModel::<f64>::new(presets::desk(FusionMode::Coherent, 1)).unwrap();
    let mut full = Trainer::new(m.clone(), TrainMode::Coherent, 42).unwrap();
    for _ in 0..3 {
        full.run_epoch(tr, va).unwrap();
    }
    let mut first = Trainer::new(m.clone(), TrainMode::Coherent, 42).unwrap();
    first.run_epoch(tr, va).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let mut resumed = Trainer::new(m, TrainMode::Coherent, 0).unwrap();
    resumed.restore(&fusionscreen::autodiff::checkpoint::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    for _ in 0..2 {
        resumed.run_epoch(tr, va).unwrap();
    }
    assert_eq!(full.model().store(), resumed.model().store());
}

#[test]
fn training_reduces_validation_error() {
    let data = samples(120, 10, FusionMode::Coherent);
    let (tr, va) = data.split_at(100);
    let mut cfg = presets::desk(FusionMode::Coherent, 3);
    cfg.fusion.train.epochs = 4;
    let mut m = FusionModel::<f64>::new(cfg).unwrap();
    let report = train(&mut m, TrainMode::Coherent, tr, va, 0).unwrap();
    assert_eq!(report.history.len(), 4);
    assert!(report.best_val_mse.unwrap() < report.initial_val_mse.unwrap());
}

#[test]
fn toy_models_pass_gradient_check() {
    let data = samples(2, 11, FusionMode::Coherent);
    let refs: Vec<&Sample> = data.iter().collect();
    let m = FusionModel::<f64>::new(presets::toy(FusionMode::Coherent, 0)).unwrap();
    for out in [Output::Voxel, Output::Graph, Output::Fused] {
        let err = m.gradient_check(&refs, out, 1e-5).unwrap();
        assert!(err < 1e-4, "{out:?}: {err}");
    }
}
