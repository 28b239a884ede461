use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfcap_nn::{
    check_parameters, evaluate_with_gradients, finite_diff_check, Activation, AdditiveAttention,
    Conv2d, ConvGeom, Embedding, Graph, Linear, LstmCell, ParameterStore, Tensor,
};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Gradient of `build(x)` with respect to a leaf `x`, via autodiff.
fn input_grad(x: &Tensor, build: impl Fn(&mut Graph, rfcap_nn::Var) -> rfcap_nn::Var) -> (f64, Vec<f64>) {
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let loss = build(&mut g, v);
    let (value, _) = evaluate_with_gradients(&mut g, loss).unwrap();
    (value, g.grad(v).unwrap().data().to_vec())
}

fn fd_on_input(x: &Tensor, build: impl Fn(&mut Graph, rfcap_nn::Var) -> rfcap_nn::Var + Copy) -> f64 {
    let shape = x.shape().to_vec();
    finite_diff_check(x.data(), 1e-5, |theta| {
        let t = Tensor::new(shape.clone(), theta.to_vec()).unwrap();
        Ok(input_grad(&t, build))
    })
    .unwrap()
}

#[test]
fn sum_gradient_is_all_ones() {
    let x = Tensor::from_fn(&[3, 4], |i| i as f64 - 5.0);
    let (_, grad) = input_grad(&x, |g, v| g.sum(v));
    assert!(grad.iter().all(|&v| v == 1.0));
}

#[test]
fn sum_of_squares_gradient_is_twice_input() {
    let x = Tensor::from_fn(&[5], |i| 0.3 * i as f64 - 0.7);
    let (_, grad) = input_grad(&x, |g, v| {
        let sq = g.mul(v, v);
        g.sum(sq)
    });
    for (gv, xv) in grad.iter().zip(x.data()) {
        assert_eq!(*gv, 2.0 * xv);
    }
}

#[test]
fn non_scalar_loss_is_a_contract_error() {
    let mut g = Graph::new();
    let v = g.variable(Tensor::zeros(&[2, 2]));
    let err = evaluate_with_gradients(&mut g, v).unwrap_err();
    assert!(matches!(err, rfcap_nn::NnError::Contract(_)));
}

#[test]
fn non_finite_values_name_the_node() {
    let mut g = Graph::new();
    let v = g.variable(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).unwrap());
    let t = g.tanh(v);
    let s = g.scale(v, 2.0);
    let a = g.add(t, s);
    let loss = g.sum(a);
    let err = evaluate_with_gradients(&mut g, loss).unwrap_err().to_string();
    assert!(err.contains("variable"), "{err}");
}

#[test]
fn quadratic_form_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[4, 4]);
    let x = rand_tensor(&mut rng, &[1, 4]);
    let err = fd_on_input(&x, |g, v| {
        let m = g.constant(Tensor::from_fn(&[4, 4], |i| ((i * 7 % 11) as f64 - 5.0) / 5.0));
        let xm = g.matmul(v, m);
        let p = g.mul(xm, v);
        g.sum(p)
    });
    drop(a);
    assert!(err < 1e-9, "quadratic form error {err}");
}

#[test]
fn two_layer_perceptron_matches_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let l1 = Linear::new(&mut store, "l1", 6, 8, &mut rng).unwrap();
        let l2 = Linear::new(&mut store, "l2", 8, 3, &mut rng).unwrap();
        for (id, _) in store.clone().iter() {
            let t = rand_tensor(&mut rng, store.value(id).shape());
            *store.value_mut(id) = t;
        }
        let x = rand_tensor(&mut rng, &[4, 6]);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        let err = check_parameters(&mut store, &ids, 1e-5, usize::MAX, |g, s| {
            let xv = g.constant(x.clone());
            let h = l1.forward(g, s, xv);
            let h = g.tanh(h);
            let y = l2.forward(g, s, h);
            let sq = g.mul(y, y);
            Ok(g.mean(sq))
        })
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn lstm_unrolled_five_steps_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParameterStore::new();
    let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut rng).unwrap();
    let xs: Vec<Tensor> = (0..5).map(|_| rand_tensor(&mut rng, &[2, 3])).collect();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let err = check_parameters(&mut store, &ids, 1e-5, usize::MAX, |g, s| {
        let mut st = cell.zero_state(g, 2);
        for x in &xs {
            let xv = g.constant(x.clone());
            st = cell.step(g, s, xv, st);
        }
        let sq = g.mul(st.h, st.h);
        let a = g.sum(sq);
        let c = g.sum(st.c);
        Ok(g.add(a, c))
    })
    .unwrap();
    assert!(err < 1e-4, "lstm error {err}");
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[4, 7]);
    let err = fd_on_input(&x, |g, v| g.cross_entropy(v, &[1, 6, 0, 3], &[true, true, false, true]));
    assert!(err < 1e-4, "cross entropy error {err}");
    let err = fd_on_input(&x, |g, v| {
        let lp = g.log_softmax(v);
        let w = g.constant(Tensor::from_fn(&[4, 7], |i| (i % 5) as f64 - 2.0));
        let p = g.mul(lp, w);
        g.sum(p)
    });
    assert!(err < 1e-4, "log softmax error {err}");
}

#[test]
fn elementwise_and_shape_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[2, 3, 4]);
    let w = Tensor::from_fn(&[4, 3, 2], |i| ((i * 5) % 7) as f64 * 0.3 - 1.0);
    let err = fd_on_input(&x, |g, v| {
        let p = g.permute(v, &[2, 1, 0]);
        let s = g.sigmoid(p);
        let wv = g.constant(Tensor::from_fn(&[4, 3, 2], |i| ((i * 5) % 7) as f64 * 0.3 - 1.0));
        let m = g.mul(s, wv);
        let sl = g.slice(m, 0, 1, 2);
        let r = g.reshape(sl, &[6, 2]);
        let other = g.slice(m, 0, 0, 2);
        let other = g.reshape(other, &[6, 2]);
        let c = g.concat(&[r, other], 1);
        let n = g.row_norm(c);
        g.sum(n)
    });
    drop(w);
    assert!(err < 1e-4, "shape ops error {err}");

    let x = rand_tensor(&mut rng, &[3, 5]);
    let err = fd_on_input(&x, |g, v| {
        let sm = g.softmax(v);
        let t = g.tanh(v);
        let a = g.mul(sm, t);
        let mr = g.mean_rows(a);
        let rep = g.repeat_rows(mr, 2);
        let lr = g.leaky_relu(rep, 0.1);
        let sq = g.mul(lr, lr);
        g.sum(sq)
    });
    assert!(err < 1e-4, "reduction ops error {err}");

    let x = rand_tensor(&mut rng, &[6]);
    let err = fd_on_input(&x, |g, v| g.bce_with_logits(v, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.5]));
    assert!(err < 1e-4, "bce error {err}");
}

#[test]
fn convolution_and_pooling_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParameterStore::new();
    let conv = Conv2d::new(&mut store, "c", 2, 3, (3, 3), ConvGeom::new((2, 1), (1, 1)), &mut rng).unwrap();
    for (id, _) in store.clone().iter() {
        let t = rand_tensor(&mut rng, store.value(id).shape());
        *store.value_mut(id) = t;
    }
    let x = rand_tensor(&mut rng, &[2, 2, 6, 5]);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let probe = Tensor::from_fn(&[2, 3, 3, 5], |i| ((i * 13) % 17) as f64 / 8.0 - 1.0);
    let build = |g: &mut Graph, s: &ParameterStore| {
        let xv = g.constant(x.clone());
        let y = conv.forward(g, s, xv);
        let y = g.tanh(y);
        let pv = g.constant(probe.clone());
        let m = g.mul(y, pv);
        Ok(g.sum(m))
    };
    let err = check_parameters(&mut store, &ids, 1e-5, usize::MAX, build).unwrap();
    assert!(err < 1e-4, "conv parameter error {err}");

    let err = fd_on_input(&x, |g, v| {
        let w = g.constant(Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 7) % 9) as f64 / 4.0 - 1.0));
        let y = g.conv2d(v, w, None, ConvGeom::new((1, 2), (1, 0)));
        let p = g.max_pool2d(y, (2, 1));
        let gm = g.global_max(y);
        let sm = g.spatial_mean(p);
        let a = g.sum(gm);
        let b = g.mul(sm, sm);
        let b = g.sum(b);
        g.add(a, b)
    });
    assert!(err < 1e-4, "conv input / pooling error {err}");
}

#[test]
fn attention_and_embedding_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut store = ParameterStore::new();
    let att = AdditiveAttention::new(&mut store, "att", 4, 3, 5, &mut rng).unwrap();
    let emb = Embedding::new(&mut store, "emb", 6, 4, &mut rng).unwrap();
    let memory = rand_tensor(&mut rng, &[3, 3]);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let err = check_parameters(&mut store, &ids, 1e-5, usize::MAX, |g, s| {
        let q = emb.forward(g, s, &[1, 4]);
        let mem = g.constant(memory.clone());
        let keys = att.project_keys(g, s, mem);
        let (alpha, ctx) = att.attend(g, s, q, keys, mem);
        let a = g.mul(ctx, ctx);
        let a = g.sum(a);
        let b = g.row_norm(alpha);
        let b = g.sum(b);
        Ok(g.add(a, b))
    })
    .unwrap();
    assert!(err < 1e-4, "attention error {err}");
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::new();
    let l = Linear::new(&mut store, "l", 2, 2, &mut rng).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(&[1.0, 2.0]));
    let y = l.forward_frozen(&mut g, &store, x);
    let y = g.sum(y);
    let (_, grads) = evaluate_with_gradients(&mut g, y).unwrap();
    assert!(grads.is_empty());
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut store = ParameterStore::new();
        let l = Linear::new(&mut store, "l", 3, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[0.1, -0.2, 0.3]));
        let y = l.forward(&mut g, &store, x);
        let y = Activation::Tanh.apply(&mut g, y);
        g.value(y).clone()
    };
    assert_eq!(build(), build());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in proptest::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 4], values).unwrap());
        let s = g.softmax(x);
        for row in g.value(s).data().chunks(4) {
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_tanh_layers_pass_gradient_check(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let l = Linear::new(&mut store, "l", 3, 2, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, &[2, 3]);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        let err = check_parameters(&mut store, &ids, 1e-5, usize::MAX, |g, s| {
            let xv = g.constant(x.clone());
            let y = l.forward(g, s, xv);
            let y = g.tanh(y);
            let y = g.mul(y, y);
            Ok(g.sum(y))
        }).unwrap();
        prop_assert!(err < 1e-4);
    }
}
