use super::*;
use crate::graph::gradcheck::grad_check;
use rand::Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random values kept at least `margin` away from zero, so relu inputs sit
/// on smooth points.
fn random_tensor_off_kink(shape: &[usize], rng: &mut ChaCha8Rng, margin: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn linear_identity_weight_is_identity() {
    let mut b = GraphBuilder::new(&[4]);
    let w = Tensor::new(
        vec![4, 4],
        vec![
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
    .unwrap();
    let y = b
        .linear_with(b.input(), w, Some(Tensor::zeros(&[4])), false)
        .unwrap();
    let g = b.finish(y).unwrap();
    let v = Tensor::from_vec(vec![0.5, -1.5, 2.0, 0.25]);
    let out = g.forward(&v).unwrap();
    assert_eq!(out.output().data(), v.data());
}

#[test]
fn relu_definition() {
    let mut b = GraphBuilder::new(&[3]);
    let y = b.relu(b.input()).unwrap();
    let g = b.finish(y).unwrap();
    let out = g.forward(&Tensor::from_vec(vec![-1.0, 0.0, 2.0])).unwrap();
    assert_eq!(out.output().data(), &[0.0, 0.0, 2.0]);
}

/// Direct convolution sum oracle for stride-1, zero-pad-1 conv3x3.
fn conv3x3_oracle(input: &Tensor, weight: &Tensor, bias: &[f64]) -> Vec<f64> {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let c_out = weight.shape()[0];
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = bias[o];
                for c in 0..c_in {
                    for ky in -1..=1isize {
                        for kx in -1..=1isize {
                            let (sy, sx) = (y + ky, x + kx);
                            if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let iv = input.data()[c * h * w + sy as usize * w + sx as usize];
                            let wv = weight.data()
                                [((o * c_in + c) * 3 + (ky + 1) as usize) * 3 + (kx + 1) as usize];
                            acc += iv * wv;
                        }
                    }
                }
                out[o * h * w + y as usize * w + x as usize] = acc;
            }
        }
    }
    out
}

#[test]
fn conv3x3_all_ones_counts_taps() {
    // All-ones 3x3 kernel on an all-ones 4x4 input: interior 9, edge 6, corner 4.
    let mut b = GraphBuilder::new(&[1, 4, 4]);
    let w = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let y = b.conv3x3_with(b.input(), w, None, false).unwrap();
    let g = b.finish(y).unwrap();
    let input = Tensor::new(vec![1, 4, 4], vec![1.0; 16]).unwrap();
    let out = g.forward(&input).unwrap();
    #[rustfmt::skip]
    let expected = [
        4.0, 6.0, 6.0, 4.0,
        6.0, 9.0, 9.0, 6.0,
        6.0, 9.0, 9.0, 6.0,
        4.0, 6.0, 6.0, 4.0,
    ];
    assert_eq!(out.output().data(), &expected);
}

#[test]
fn conv3x3_matches_direct_sum_oracle() {
    let mut r = rng(7);
    let input = random_tensor(&[2, 5, 4], &mut r);
    let weight = random_tensor(&[3, 2, 3, 3], &mut r);
    let bias = random_tensor(&[3], &mut r);

    let mut b = GraphBuilder::new(&[2, 5, 4]);
    let y = b
        .conv3x3_with(b.input(), weight.clone(), Some(bias.clone()), false)
        .unwrap();
    let g = b.finish(y).unwrap();
    let got = g.forward(&input).unwrap();
    let want = conv3x3_oracle(&input, &weight, bias.data());
    for (a, b) in got.output().data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn grad_of_linear_sum_is_input() {
    // f(w) = sum(w . x) with x fixed: grad w = x for every w.
    let x = Tensor::from_vec(vec![0.7, -0.3, 1.1, 2.0]);
    let mut b = GraphBuilder::new(&[4]);
    let y = b.linear(b.input(), 1).unwrap();
    let s = b.sum_output(y).unwrap();
    let mut g = b.finish(s).unwrap();
    g.set_param_data(0, vec![0.4, 0.6, -2.0, 3.0]).unwrap();
    let pass = g.forward(&x).unwrap();
    let grads = g.backward(&pass).unwrap();
    assert_eq!(grads.get(0).unwrap().data(), x.data());
    assert_eq!(grads.get(1).unwrap().data(), &[1.0]);
}

#[test]
fn grad_of_half_squared_norm_is_w() {
    // f(w) = 0.5 * ||w||^2 realized as mse(w * 1, 0): grad w = w.
    let w0 = vec![0.3, -1.2, 0.8];
    let mut b = GraphBuilder::new(&[1]);
    let y = b.linear(b.input(), 3).unwrap();
    let mut g = b.finish_with_mse(y).unwrap();
    g.set_param_data(0, w0.clone()).unwrap();
    let pass = g
        .forward_with_target(&Tensor::from_vec(vec![1.0]), &Tensor::zeros(&[3]))
        .unwrap();
    let grads = g.backward(&pass).unwrap();
    assert_eq!(grads.get(0).unwrap().data(), w0.as_slice());
}

fn two_layer_relu_net(hidden: usize) -> Graph {
    let mut b = GraphBuilder::new(&[5]);
    let h = b.linear(b.input(), hidden).unwrap();
    let h = b.relu(h).unwrap();
    let y = b.linear(h, 1).unwrap();
    let s = b.sum_output(y).unwrap();
    b.finish(s).unwrap()
}

#[test]
fn two_layer_relu_matches_finite_differences() {
    let mut r = rng(11);
    for seed in 0..5u64 {
        let mut g = two_layer_relu_net(6);
        g.init_params(seed);
        let x = random_tensor_off_kink(&[5], &mut r, 1e-3);
        let err = grad_check(&g, &x, None, 1e-5).unwrap();
        assert!(err <= 1e-5, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn grad_check_linear_model_is_nearly_exact() {
    let mut b = GraphBuilder::new(&[4]);
    let y = b.linear(b.input(), 1).unwrap();
    let s = b.sum_output(y).unwrap();
    let mut g = b.finish(s).unwrap();
    g.init_params(3);
    let x = Tensor::from_vec(vec![0.2, -0.4, 0.6, 0.9]);
    let err = grad_check(&g, &x, None, 1e-5).unwrap();
    assert!(err <= 1e-9, "linear grad_check error {err}");
}

#[test]
fn grad_check_three_layer_mlp() {
    let mut b = GraphBuilder::new(&[4]);
    let mut h = b.input();
    for dim in [8, 6] {
        h = b.linear(h, dim).unwrap();
        h = b.relu(h).unwrap();
    }
    let y = b.linear(h, 1).unwrap();
    let s = b.sum_output(y).unwrap();
    let mut g = b.finish(s).unwrap();
    g.init_params(17);
    let mut r = rng(23);
    let x = random_tensor_off_kink(&[4], &mut r, 1e-3);
    let err = grad_check(&g, &x, None, 1e-5).unwrap();
    assert!(err <= 1e-5, "mlp grad_check error {err}");
}

#[test]
fn grad_check_rejects_zero_eps() {
    let g = two_layer_relu_net(4);
    let x = Tensor::zeros(&[5]);
    assert!(matches!(
        grad_check(&g, &x, None, 0.0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn every_op_kind_passes_finite_differences() {
    // Convolutional trunk: conv3x3, conv1x1, avgpool3x3, relu, add,
    // global_avg_pool, linear, softmax_xent.
    let mut b = GraphBuilder::new(&[2, 4, 4]);
    let stem = b.conv3x3(b.input(), 3).unwrap();
    let stem = b.relu(stem).unwrap();
    let a = b.conv1x1(stem.clone(), 3).unwrap();
    let p = b.avgpool3x3(stem.clone()).unwrap();
    let merged = b.add(vec![a, p, stem]).unwrap();
    let feat = b.global_avg_pool(merged).unwrap();
    let logits = b.linear(feat, 3).unwrap();
    let mut g = b.finish_with_xent(logits).unwrap();
    g.init_params(31);
    let mut r = rng(37);
    let x = random_tensor_off_kink(&[2, 4, 4], &mut r, 1e-3);
    let err = grad_check(&g, &x, Some(&Tensor::scalar(1.0)), 1e-5).unwrap();
    assert!(err <= 1e-5, "conv trunk grad_check error {err}");

    // Scalar head: sum_output under mse.
    let mut b = GraphBuilder::new(&[2, 4, 4]);
    let stem = b.conv3x3(b.input(), 2).unwrap();
    let feat = b.global_avg_pool(stem).unwrap();
    let s = b.sum_output(feat).unwrap();
    let mut g = b.finish_with_mse(s).unwrap();
    g.init_params(41);
    let x = random_tensor_off_kink(&[2, 4, 4], &mut r, 1e-3);
    let err = grad_check(&g, &x, Some(&Tensor::scalar(0.3)), 1e-5).unwrap();
    assert!(err <= 1e-5, "scalar head grad_check error {err}");
}

#[test]
fn backward_is_deterministic() {
    let mut g = two_layer_relu_net(8);
    g.init_params(5);
    let mut r = rng(5);
    let x = random_tensor(&[5], &mut r);
    let pass = g.forward(&x).unwrap();
    let g1 = g.backward(&pass).unwrap();
    let pass2 = g.forward(&x).unwrap();
    let g2 = g.backward(&pass2).unwrap();
    for pid in g.trainable_ids() {
        assert_eq!(g1.get(pid).unwrap().data(), g2.get(pid).unwrap().data());
    }
}

#[test]
fn backward_is_linear_in_the_seed() {
    // grad seeded with a*e1 + b*e2 equals a*grad(e1) + b*grad(e2).
    let mut b = GraphBuilder::new(&[5]);
    let h = b.linear(b.input(), 6).unwrap();
    let h = b.relu(h).unwrap();
    let y = b.linear(h, 2).unwrap();
    let mut g = b.finish(y).unwrap();
    g.init_params(13);
    let mut r = rng(13);
    let x = random_tensor(&[5], &mut r);
    let pass = g.forward(&x).unwrap();
    let out_node = g.pred_node();

    let (a, bb) = (0.7, -2.3);
    let combo = g.backward_seeded(&pass, out_node, &[a, bb]).unwrap();
    let e1 = g.backward_seeded(&pass, out_node, &[1.0, 0.0]).unwrap();
    let e2 = g.backward_seeded(&pass, out_node, &[0.0, 1.0]).unwrap();
    let recombined = e1.linear_comb(a, &e2, bb).unwrap();
    for pid in g.trainable_ids() {
        for (x, y) in combo
            .get(pid)
            .unwrap()
            .data()
            .iter()
            .zip(recombined.get(pid).unwrap().data())
        {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn shape_mismatch_names_the_node() {
    let g = two_layer_relu_net(4);
    let bad = Tensor::zeros(&[7]);
    match g.forward(&bad) {
        Err(Error::Shape { op, .. }) => assert_eq!(op, "input"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn non_finite_intermediate_reports_node() {
    let mut g = two_layer_relu_net(4);
    g.init_params(1);
    let poisoned = vec![f64::NAN; g.param(0).numel()];
    g.set_param_data(0, poisoned).unwrap();
    match g.forward(&Tensor::from_vec(vec![1.0; 5])) {
        Err(Error::NonFinite { node, op }) => {
            assert_eq!(node, 0);
            assert_eq!(op, "linear");
        }
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn backward_rejects_non_scalar_output() {
    let mut b = GraphBuilder::new(&[3]);
    let y = b.linear(b.input(), 2).unwrap();
    let mut g = b.finish(y).unwrap();
    g.init_params(2);
    let pass = g.forward(&Tensor::zeros(&[3])).unwrap();
    assert!(matches!(g.backward(&pass), Err(Error::Contract(_))));
}

#[test]
fn backward_rejects_pass_from_another_graph() {
    let mut g1 = two_layer_relu_net(4);
    let g2 = {
        let mut g = two_layer_relu_net(4);
        g.init_params(9);
        g
    };
    g1.init_params(9);
    let pass = g2.forward(&Tensor::zeros(&[5])).unwrap();
    assert!(matches!(g1.backward(&pass), Err(Error::State(_))));
}

#[test]
fn zeros_source_contributes_nothing() {
    let mut b = GraphBuilder::new(&[3]);
    let z = b.zeros(&[3]);
    let y = b.add(vec![b.input(), z]).unwrap();
    let s = b.sum_output(y).unwrap();
    let g = b.finish(s).unwrap();
    let out = g.forward(&Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
    assert_eq!(out.output().item().unwrap(), 6.0);
}

#[test]
fn init_params_is_bitwise_deterministic() {
    let mut g1 = two_layer_relu_net(8);
    let mut g2 = two_layer_relu_net(8);
    g1.init_params(99);
    g2.init_params(99);
    for pid in 0..g1.num_params() {
        assert_eq!(g1.param(pid).data(), g2.param(pid).data());
    }
}
