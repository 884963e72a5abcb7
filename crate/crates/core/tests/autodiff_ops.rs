use fusionscreen::autodiff::{gradient_check, AutodiffError, DenseArray, Graph, Mode, NodeId, Op, ParamGroup, ParamId, ParamStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = Box<dyn Fn(&ParamStore<f64>) -> Result<(Graph<f64>, NodeId), AutodiffError>>;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> DenseArray<f64> {
    let n = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Loss = mean squared distance of `out` from a fixed random target.
fn to_loss(g: &mut Graph<f64>, out: NodeId, seed: u64) -> Result<NodeId, AutodiffError> {
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let t = g.input(rand_array(&mut rng, &shape, 1.0));
    g.mse(out, t)
}

fn check(store: &ParamStore<f64>, build: Build) -> f64 {
    let ids = store.trainable_ids();
    gradient_check(store, &ids, build, 1e-5).unwrap()
}

#[test]
fn three_layer_dense_net_matches_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dims = [6, 8, 5, 1];
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let wi = store.add("w", ParamGroup::Other, rand_array(&mut rng, &[w[0], w[1]], 0.8));
            let bi = store.add("b", ParamGroup::Other, rand_array(&mut rng, &[w[1]], 0.3));
            layers.push((wi, bi));
        }
        let x = rand_array(&mut rng, &[4, 6], 1.0);
        let err = check(
            &store,
            Box::new(move |s| {
                let mut g = Graph::new();
                let mut h = g.input(x.clone());
                for (i, &(w, b)) in layers.iter().enumerate() {
                    let (wn, bn) = (g.param(s, w), g.param(s, b));
                    h = g.dense(h, wn, bn)?;
                    if i + 1 < layers.len() {
                        h = g.unary(Op::Tanh, h)?;
                    }
                }
                let l = to_loss(&mut g, h, seed)?;
                Ok((g, l))
            }),
        );
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn smooth_activations_match_finite_differences() {
    for op in [Op::Selu, Op::Sigmoid, Op::Tanh, Op::LeakyRelu, Op::Relu] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        // keep values away from the kink at zero so differences are one-sided-safe
        let vals: Vec<f64> = (0..12)
            .map(|_| {
                let v: f64 = rng.random_range(0.05..1.5);
                if rng.random::<bool>() {
                    v
                } else {
                    -v
                }
            })
            .collect();
        store.add("x", ParamGroup::Other, DenseArray::new(vec![12], vals).unwrap());
        let op2 = op.clone();
        let err = check(
            &store,
            Box::new(move |s| {
                let mut g = Graph::new();
                let x = g.param(s, ParamId(0));
                let y = g.unary(op2.clone(), x)?;
                let l = to_loss(&mut g, y, 3)?;
                Ok((g, l))
            }),
        );
        assert!(err < 1e-6, "{op:?}: {err}");
    }
}

#[test]
fn conv_pool_reshape_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let x = store.add("x", ParamGroup::Other, rand_array(&mut rng, &[2, 2, 4, 4, 4], 1.0));
    let w = store.add("w", ParamGroup::Other, rand_array(&mut rng, &[3, 2, 3, 3, 3], 0.4));
    let b = store.add("b", ParamGroup::Other, rand_array(&mut rng, &[3], 0.2));
    let err = check(
        &store,
        Box::new(move |s| {
            let mut g = Graph::new();
            let (xn, wn, bn) = (g.param(s, x), g.param(s, w), g.param(s, b));
            let c = g.apply(Op::Conv3d, &[xn, wn, bn])?;
            let p = g.apply(Op::MaxPool3d { window: 2 }, &[c])?;
            let r = g.apply(Op::Reshape { shape: vec![2, 24] }, &[p])?;
            let l = to_loss(&mut g, r, 9)?;
            Ok((g, l))
        }),
    );
    assert!(err < 1e-4, "{err}");

    let mut store = ParamStore::new();
    let x = store.add("x", ParamGroup::Other, rand_array(&mut rng, &[1, 1, 3, 3, 3], 1.0));
    let w = store.add("w", ParamGroup::Other, rand_array(&mut rng, &[2, 1, 5, 5, 5], 0.4));
    let b = store.add("b", ParamGroup::Other, rand_array(&mut rng, &[2], 0.2));
    let err = check(
        &store,
        Box::new(move |s| {
            let mut g = Graph::new();
            let (xn, wn, bn) = (g.param(s, x), g.param(s, w), g.param(s, b));
            let c = g.apply(Op::Conv3d, &[xn, wn, bn])?;
            let l = to_loss(&mut g, c, 2)?;
            Ok((g, l))
        }),
    );
    assert!(err < 1e-4, "kernel larger than extent: {err}");
}

#[test]
fn batch_norm_both_modes_match_finite_differences() {
    for mode in [Mode::Train, Mode::Eval] {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Other, rand_array(&mut rng, &[5, 3, 2], 1.0));
        let gamma = store.add("gamma", ParamGroup::Other, rand_array(&mut rng, &[3], 1.0));
        let beta = store.add("beta", ParamGroup::Other, rand_array(&mut rng, &[3], 1.0));
        let mean = store.add_buffer("mean", ParamGroup::Other, rand_array(&mut rng, &[3], 0.5));
        let var = store.add_buffer("var", ParamGroup::Other, DenseArray::new(vec![3], vec![0.5, 1.2, 2.0]).unwrap());
        let err = check(
            &store,
            Box::new(move |s| {
                let mut g = Graph::new();
                let mut ins = vec![g.param(s, x), g.param(s, gamma), g.param(s, beta)];
                if mode == Mode::Eval {
                    ins.push(g.param(s, mean));
                    ins.push(g.param(s, var));
                }
                let y = g.apply(Op::BatchNorm { mode, eps: 1e-5 }, &ins)?;
                let l = to_loss(&mut g, y, 4)?;
                Ok((g, l))
            }),
        );
        assert!(err < 1e-4, "{mode:?}: {err}");
    }
}

#[test]
fn eval_batch_norm_uses_running_statistics_only() {
    let mut g = Graph::<f64>::new();
    let x = g.input(DenseArray::new(vec![2, 1], vec![10.0, 30.0]).unwrap());
    let gamma = g.input(DenseArray::scalar(1.0));
    let beta = g.input(DenseArray::scalar(0.0));
    let mean = g.input(DenseArray::scalar(10.0));
    let var = g.input(DenseArray::scalar(4.0 - 1e-5));
    let y = g.apply(Op::BatchNorm { mode: Mode::Eval, eps: 1e-5 }, &[x, gamma, beta, mean, var]).unwrap();
    let out = g.value(y).data();
    assert!(out[0].abs() < 1e-12 && (out[1] - 10.0).abs() < 1e-9, "{out:?}");
}

#[test]
fn graph_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let h = store.add("h", ParamGroup::Other, rand_array(&mut rng, &[4, 3], 1.0));
    let e = store.add("e", ParamGroup::Other, rand_array(&mut rng, &[5, 2], 1.0));
    let src: Vec<usize> = vec![0, 1, 3, 3, 2];
    let dst: Vec<usize> = vec![1, 0, 2, 1, 3];
    let err = check(
        &store,
        Box::new(move |s| {
            let mut g = Graph::new();
            let (hn, en) = (g.param(s, h), g.param(s, e));
            let gathered = g.apply(Op::GatherRows { index: src.clone().into() }, &[hn])?;
            let cat = g.apply(Op::Concat, &[gathered, en])?;
            let sq = g.mul(cat, cat)?;
            let summed = g.apply(Op::ScatterSum { index: dst.clone().into(), rows: 4 }, &[sq])?;
            let hh = g.apply(Op::Concat, &[hn, hn])?;
            let cut = g.apply(Op::Reshape { shape: vec![4, 6] }, &[hh])?;
            let mixed = g.apply(Op::Concat, &[summed, cut])?;
            let avg = g.apply(Op::Mean, &[mixed, mixed])?;
            let d = g.sub(avg, mixed)?;
            let total = g.add(avg, d)?;
            let l = to_loss(&mut g, total, 6)?;
            Ok((g, l))
        }),
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn backward_of_sum_is_sum_of_backwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let w = store.add("w", ParamGroup::Other, rand_array(&mut rng, &[3, 2], 1.0));
    let x = rand_array(&mut rng, &[4, 3], 1.0);
    let mut g = Graph::new();
    let xn = g.input(x);
    let wn = g.param(&store, w);
    let y = g.apply(Op::MatMul, &[xn, wn]).unwrap();
    let a = g.unary(Op::Tanh, y).unwrap();
    let l1 = to_loss(&mut g, a, 1).unwrap();
    let l2 = to_loss(&mut g, y, 2).unwrap();
    let sum = g.add(l1, l2).unwrap();
    let gs = g.backward(sum, &[w], &store).unwrap();
    let g1 = g.backward(l1, &[w], &store).unwrap();
    let g2 = g.backward(l2, &[w], &store).unwrap();
    for ((a, b), c) in gs.get(w).unwrap().data().iter().zip(g1.get(w).unwrap().data()).zip(g2.get(w).unwrap().data()) {
        assert!((a - (b + c)).abs() < 1e-14);
    }
}

#[test]
fn repeated_forward_is_bit_identical() {
    let build = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.input(rand_array(&mut rng, &[8, 5], 1.0));
        let w = g.input(rand_array(&mut rng, &[5, 3], 1.0));
        let b = g.input(rand_array(&mut rng, &[3], 1.0));
        let y = g.dense(x, w, b).unwrap();
        let d = g.unary(Op::Dropout { rate: 0.3, mode: Mode::Train, seed }, y).unwrap();
        g.value(d).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(build(4), build(4));
}

fn random_small_graph(seed: u64) -> (ParamStore<f64>, Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let depth = rng.random_range(1..4usize);
    let mut widths = vec![rng.random_range(2..10usize)];
    for _ in 0..depth {
        widths.push(rng.random_range(1..12usize));
    }
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        let wi = store.add("w", ParamGroup::Other, rand_array(&mut rng, &[w[0], w[1]], 0.9));
        let bi = store.add("b", ParamGroup::Other, rand_array(&mut rng, &[w[1]], 0.3));
        layers.push((wi, bi));
    }
    let acts = [Op::Tanh, Op::Sigmoid, Op::Selu];
    let act = acts[rng.random_range(0..acts.len())].clone();
    let rows = rng.random_range(1..6usize);
    let x = rand_array(&mut rng, &[rows, widths[0]], 1.0);
    let build: Build = Box::new(move |s| {
        let mut g = Graph::new();
        let mut h = g.input(x.clone());
        for &(w, b) in &layers {
            let (wn, bn) = (g.param(s, w), g.param(s, b));
            h = g.dense(h, wn, bn)?;
            h = g.unary(act.clone(), h)?;
        }
        let l = to_loss(&mut g, h, seed)?;
        Ok((g, l))
    });
    (store, build)
}

#[test]
fn twenty_random_small_graphs_pass_gradient_check() {
    for seed in 0..20 {
        let (store, build) = random_small_graph(seed);
        assert!(store.trainable_count() <= 2000);
        let err = check(&store, build);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eval_dropout_is_identity(vals in prop::collection::vec(-5.0f64..5.0, 1..40), rate in 0.0f64..0.99, seed in any::<u64>()) {
        let mut g = Graph::new();
        let x = g.input(DenseArray::from_vec(vals).unwrap());
        let y = g.unary(Op::Dropout { rate, mode: Mode::Eval, seed }, x).unwrap();
        prop_assert_eq!(g.value(x), g.value(y));
    }

    #[test]
    fn relu_output_non_negative(vals in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let mut g = Graph::new();
        let x = g.input(DenseArray::from_vec(vals).unwrap());
        let y = g.unary(Op::Relu, x).unwrap();
        prop_assert!(g.value(y).data().iter().all(|&v| v >= 0.0));
    }
}
