use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest relative error between backward and central differences of
/// `sum(op(inputs) * probe)` over every coordinate of every input.
fn grad_error<F>(inputs: &[Tensor], op: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let out = op(&mut g, &vars).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = rand_tensor(&mut rng, g.value(out).shape());
    let pv = g.constant(probe.clone()).unwrap();
    let prod = g.hadamard(out, pv).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();

    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone()).unwrap()).collect();
        let out = op(&mut g, &vars)?;
        Ok(g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
    };
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]);
        let err = finite_diff_check(
            |p| {
                let mut vals = inputs.to_vec();
                vals[i] = Tensor::new(t.shape().to_vec(), p.to_vec()).unwrap();
                eval(&vals)
            },
            t.data(),
            analytic.data(),
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

fn conv_oracle(x: &Tensor, k: &Tensor, b: &[f64], stride: usize) -> Vec<f64> {
    let (rows, len) = (x.shape()[0], x.shape()[1]);
    let (t, kw) = (k.shape()[0], k.shape()[1]);
    let out_len = (len - kw) / stride + 1;
    let mut out = Vec::new();
    for j in 0..t {
        for r in 0..rows {
            for o in 0..out_len {
                let mut s = b[j];
                for q in 0..kw {
                    s += k.at(&[j, q]) * x.at(&[r, o * stride + q]);
                }
                out.push(s);
            }
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![5.0, 7.0, 9.0]]).unwrap()).unwrap();
    let k = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap()).unwrap();
    let b = g.constant(Tensor::from_vec(vec![0.0, 0.0])).unwrap();
    let y = g.conv1d_valid(x, k, b, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 1, 2]);
    assert_eq!(g.value(y).data(), &[5.0, 7.0, 12.0, 16.0]);
}

#[test]
fn conv_rejects_long_kernel_and_nonfinite() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3])).unwrap();
    let k = g.constant(Tensor::zeros(&[1, 4])).unwrap();
    let b = g.constant(Tensor::zeros(&[1])).unwrap();
    assert!(matches!(g.conv1d_valid(x, k, b, 1), Err(TensorError::Shape { .. })));
    assert!(g.constant(Tensor::from_vec(vec![f64::NAN])).is_err());
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let rows = rng.random_range(1..5);
        let len = rng.random_range(8..40);
        let t = rng.random_range(1..4);
        let kw = rng.random_range(1..=len.min(9));
        let stride = rng.random_range(1..3);
        let x = rand_tensor(&mut rng, &[rows, len]);
        let k = rand_tensor(&mut rng, &[t, kw]);
        let b = rand_tensor(&mut rng, &[t]);
        let mut g = Graph::new();
        let (xv, kv, bv) = (
            g.constant(x.clone()).unwrap(),
            g.constant(k.clone()).unwrap(),
            g.constant(b.clone()).unwrap(),
        );
        let y = g.conv1d_valid(xv, kv, bv, stride).unwrap();
        assert!(max_diff(g.value(y).data(), &conv_oracle(&x, &k, b.data(), stride)) <= 1e-12);
    }
    let x = rand_tensor(&mut rng, &[4, 100]);
    let k = rand_tensor(&mut rng, &[3, 7]);
    let b = rand_tensor(&mut rng, &[3]);
    let mut g = Graph::new();
    let (xv, kv, bv) = (g.constant(x.clone()).unwrap(), g.constant(k.clone()).unwrap(), g.constant(b.clone()).unwrap());
    let y = g.conv1d_valid(xv, kv, bv, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[3, 4, 94]);
    assert!(max_diff(g.value(y).data(), &conv_oracle(&x, &k, b.data(), 1)) <= 1e-12);
}

#[test]
fn conv_batched_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [rand_tensor(&mut rng, &[2, 3, 12]), rand_tensor(&mut rng, &[2, 4]), rand_tensor(&mut rng, &[2])];
    let err = grad_error(&inputs, |g, v| g.conv1d_valid(v[0], v[1], v[2], 2));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn avg_pool_examples_and_oracle() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
    let y = g.avg_pool1d(x, 2, 2).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, 3.5]);
    let c = g.constant(Tensor::full(&[2, 9], 0.7)).unwrap();
    let y = g.avg_pool1d(c, 4, 3).unwrap();
    assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    assert!(g.avg_pool1d(c, 10, 1).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let len = rng.random_range(5..60);
        let window = rng.random_range(1..=len.min(8));
        let stride = rng.random_range(1..4);
        let x = rand_tensor(&mut rng, &[len]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let y = g.avg_pool1d(xv, window, stride).unwrap();
        let out_len = (len - window) / stride + 1;
        let oracle: Vec<f64> = (0..out_len)
            .map(|o| {
                let mut s = 0.0;
                for q in 0..window {
                    s += x.data()[o * stride + q];
                }
                s / window as f64
            })
            .collect();
        assert!(max_diff(g.value(y).data(), &oracle) <= 1e-12);
    }
    let x = rand_tensor(&mut rng, &[3, 50]);
    let err = grad_error(&[x], |g, v| g.avg_pool1d(v[0], 7, 3));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn activations() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![-1.0, 0.0, 2.0])).unwrap();
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::from_vec(vec![-10.0])).unwrap();
    let w = g.leaky_relu(z, 0.01).unwrap();
    assert!((g.value(w).data()[0] + 0.1).abs() < 1e-15);
    assert!(g.leaky_relu(z, 1.0).is_err());

    // derivative at -3 with slope 0.01
    let f = |p: &[f64]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(p.to_vec()))?;
        let y = g.leaky_relu(x, 0.01)?;
        Ok(g.value(y).data()[0])
    };
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![-3.0])).unwrap();
    let y = g.leaky_relu(x, 0.01).unwrap();
    let grad = g.backward(y).unwrap().wrt(x);
    assert_eq!(grad.data(), &[0.01]);
    let num = numeric_gradient(f, &[-3.0], 1e-5).unwrap();
    assert!((num[0] - 0.01).abs() < 1e-8);
}

#[test]
fn activation_gradients_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut x = rand_tensor(&mut rng, &[4, 6]);
    x.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    });
    assert!(grad_error(&[x.clone()], |g, v| g.relu(v[0])) < 1e-6);
    assert!(grad_error(&[x], |g, v| g.leaky_relu(v[0], 0.01)) < 1e-6);
}

#[test]
fn batch_norm_train_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[6, 3, 4]);
    let mut g = Graph::new();
    let xv = g.constant(x).unwrap();
    let gamma = g.constant(Tensor::full(&[3], 1.0)).unwrap();
    let beta = g.constant(Tensor::zeros(&[3])).unwrap();
    let mut stats = RunningStats::new(3);
    let y = g
        .batch_norm(xv, gamma, beta, 1, BatchNormMode::Train(&mut stats), BatchNormSettings::default())
        .unwrap();
    let out = g.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..6).flat_map(|b| (0..4).map(move |f| (b, f))).map(|(b, f)| out.at(&[b, c, f])).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4 * 2.0, "{var}");
    }
    assert!(stats.mean.iter().all(|m| m.abs() < 1.0));
}

#[test]
fn batch_norm_affine_and_eval() {
    let x = Tensor::new(vec![4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let gamma = g.constant(Tensor::from_vec(vec![2.0])).unwrap();
    let beta = g.constant(Tensor::from_vec(vec![3.0])).unwrap();
    let settings = BatchNormSettings { eps: 0.0, momentum: 0.1 };
    let mut stats = RunningStats::new(1);
    let y = g.batch_norm(xv, gamma, beta, 1, BatchNormMode::Train(&mut stats), settings).unwrap();
    let expect: Vec<f64> = x.data().iter().map(|v| 2.0 * v + 3.0).collect();
    assert!(max_diff(g.value(y).data(), &expect) < 1e-12);
    // running var uses the unbiased batch variance: 4/3
    assert!((stats.var[0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-15);

    let frozen = RunningStats::new(1);
    let one = g.constant(Tensor::from_vec(vec![1.0])).unwrap();
    let zero = g.constant(Tensor::from_vec(vec![0.0])).unwrap();
    let e = g
        .batch_norm(xv, one, zero, 1, BatchNormMode::Eval(&frozen), BatchNormSettings::default())
        .unwrap();
    let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
    let expect: Vec<f64> = x.data().iter().map(|v| v * scale).collect();
    assert!(max_diff(g.value(e).data(), &expect) < 1e-15);
}

#[test]
fn batch_norm_rejects_single_sample() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 4])).unwrap();
    let gamma = g.constant(Tensor::full(&[3], 1.0)).unwrap();
    let beta = g.constant(Tensor::zeros(&[3])).unwrap();
    let mut stats = RunningStats::new(3);
    let r = g.batch_norm(x, gamma, beta, 1, BatchNormMode::Train(&mut stats), BatchNormSettings::default());
    assert!(matches!(r, Err(TensorError::Contract { .. })));
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = [rand_tensor(&mut rng, &[3, 2, 5]), rand_tensor(&mut rng, &[2]), rand_tensor(&mut rng, &[2])];
    let train = grad_error(&inputs, |g, v| {
        let mut stats = RunningStats::new(2);
        g.batch_norm(v[0], v[1], v[2], 1, BatchNormMode::Train(&mut stats), BatchNormSettings::default())
    });
    assert!(train < 1e-6, "{train}");
    let frozen = RunningStats {
        mean: vec![0.2, -0.1],
        var: vec![0.5, 1.5],
    };
    let eval = grad_error(&inputs, |g, v| {
        g.batch_norm(v[0], v[1], v[2], 1, BatchNormMode::Eval(&frozen), BatchNormSettings::default())
    });
    assert!(eval < 1e-6, "{eval}");
}

#[test]
fn matmul_examples_and_oracle() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
    let b = g.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap()).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    let i = g.constant(Tensor::identity(2)).unwrap();
    let d = g.matmul(i, a).unwrap();
    assert_eq!(g.value(d), g.value(a));
    assert!(g.matmul(b, b).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (m, k, n) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..7));
        let a = rand_tensor(&mut rng, &[m, k]);
        let b = rand_tensor(&mut rng, &[k, n]);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
        let c = g.matmul(av, bv).unwrap();
        let mut oracle = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    oracle[i * n + j] += a.at(&[i, p]) * b.at(&[p, j]);
                }
            }
        }
        assert!(max_diff(g.value(c).data(), &oracle) <= 1e-12);
    }
}

#[test]
fn matmul_gradients_all_batchings() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases = [
        (vec![3, 4], vec![4, 2]),
        (vec![2, 3, 4], vec![4, 2]),
        (vec![3, 4], vec![2, 4, 2]),
        (vec![2, 3, 4], vec![2, 4, 2]),
    ];
    for (sa, sb) in cases {
        let inputs = [rand_tensor(&mut rng, &sa), rand_tensor(&mut rng, &sb)];
        let err = grad_error(&inputs, |g, v| g.matmul(v[0], v[1]));
        assert!(err < 1e-6, "{sa:?} x {sb:?}: {err}");
    }
}

#[test]
fn elementwise_and_broadcast() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_vec(vec![2.0, 3.0])).unwrap();
    let b = g.constant(Tensor::from_vec(vec![4.0, 5.0])).unwrap();
    let c = g.hadamard(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[8.0, 15.0]);
    let bias = g.constant(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap()).unwrap();
    let m = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap()).unwrap();
    let d = g.sub(m, bias).unwrap();
    assert_eq!(g.value(d).data(), &[0.0, 1.0, 2.0, 2.0, 3.0, 4.0]);
    let bad = g.constant(Tensor::zeros(&[3, 1])).unwrap();
    assert!(g.add(m, bad).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[3, 1]);
    for kind in 0..3 {
        let err = grad_error(&[a.clone(), b.clone()], |g, v| match kind {
            0 => g.add(v[0], v[1]),
            1 => g.sub(v[0], v[1]),
            _ => g.hadamard(v[0], v[1]),
        });
        assert!(err < 1e-6, "kind {kind}: {err}");
    }
    // gradient of a∘b wrt a equals b
    let b2 = rand_tensor(&mut rng, &[2, 3, 4]);
    let mut g = Graph::new();
    let av = g.param(a).unwrap();
    let bv = g.constant(b2.clone()).unwrap();
    let p = g.hadamard(av, bv).unwrap();
    let s = g.sum(p).unwrap();
    assert_eq!(g.backward(s).unwrap().wrt(av), b2);
}

#[test]
fn concat_examples() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
    let b = g.constant(Tensor::from_rows(&[vec![3.0]]).unwrap()).unwrap();
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
    let single = g.concat(&[a], 1).unwrap();
    assert_eq!(g.value(single), g.value(a));
    assert!(g.concat(&[a, b], 0).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs = [rand_tensor(&mut rng, &[2, 3, 2]), rand_tensor(&mut rng, &[2, 3, 5])];
    let err = grad_error(&inputs, |g, v| {
        let c = g.concat(v, 2)?;
        g.slice(c, 2, 1, 5)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn dropout_behaviour() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = Graph::new();
    let x = g.param(Tensor::full(&[10_000], 1.0)).unwrap();
    assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
    assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
    let survivors = g.value(y).data().iter().filter(|&&v| v != 0.0).count() as f64 / 10_000.0;
    assert!((0.48..=0.52).contains(&survivors), "{survivors}");
    assert!(g.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    let s = g.sum(y).unwrap();
    let grad = g.backward(s).unwrap().wrt(x);
    assert_eq!(grad.data(), g.value(y).data());
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::new();
    let z = g.param(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
    let l = g.softmax_cross_entropy(z, &[0]).unwrap();
    assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    let big = g.param(Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap()).unwrap();
    let l2 = g.softmax_cross_entropy(big, &[0]).unwrap();
    let v = g.value(l2).data()[0];
    assert!(v.is_finite() && v.abs() < 1e-12);
    assert!(g.softmax_cross_entropy(z, &[2]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let logits = rand_tensor(&mut rng, &[3, 2]);
    let labels = [1, 0, 1];
    let f = |p: &[f64]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let z = g.param(Tensor::new(vec![3, 2], p.to_vec())?)?;
        let l = g.softmax_cross_entropy(z, &labels)?;
        Ok(g.value(l).data()[0])
    };
    let mut g = Graph::new();
    let z = g.param(logits.clone()).unwrap();
    let l = g.softmax_cross_entropy(z, &labels).unwrap();
    let grad = g.backward(l).unwrap().wrt(z);
    let num = numeric_gradient(f, logits.data(), 1e-5).unwrap();
    assert!(max_diff(grad.data(), &num) < 1e-6);
}

#[test]
fn weighted_sum_group_mean_triu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = [rand_tensor(&mut rng, &[2, 3, 4, 5]), rand_tensor(&mut rng, &[3])];
    assert!(grad_error(&inputs, |g, v| g.axis_weighted_sum(v[0], v[1], 1)) < 1e-6);
    let groups = vec![vec![0, 2], vec![1], vec![3, 4, 5]];
    let x = rand_tensor(&mut rng, &[2, 6, 3]);
    assert!(grad_error(&[x], |g, v| g.group_mean(v[0], 1, &groups)) < 1e-6);
    let p = rand_tensor(&mut rng, &[6]);
    assert!(grad_error(&[p], |g, v| g.symmetric_from_triu(v[0], 3)) < 1e-6);
    let r = rand_tensor(&mut rng, &[2, 6]);
    assert!(grad_error(&[r], |g, v| g.reshape(v[0], &[3, 4])) < 1e-6);
}

#[test]
fn symmetric_from_triu_layout() {
    let mut g = Graph::new();
    let p = g.param(Tensor::from_vec(vec![0.3, 0.1, 0.7])).unwrap();
    let a = g.symmetric_from_triu(p, 2).unwrap();
    assert_eq!(g.value(a).data(), &[0.3, 0.1, 0.1, 0.7]);
    assert!(g.symmetric_from_triu(p, 3).is_err());
}

#[test]
fn backward_contract() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![3.0])).unwrap();
    let y = g.hadamard(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).data(), &[6.0]);
    assert!(matches!(g.backward(y), Err(TensorError::GraphConsumed)));

    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let c = g.constant(Tensor::scalar(4.0)).unwrap();
    assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    let grads = g.backward(c).unwrap();
    assert_eq!(grads.wrt(x).data(), &[0.0, 0.0]);
    assert!(!grads.is_reached(x));
}

#[test]
fn finite_diff_examples() {
    let sq = |p: &[f64]| Ok(p[0] * p[0]);
    assert!(finite_diff_check(sq, &[3.0], &[6.0], 1e-5).unwrap() < 1e-6);
    let lin = |p: &[f64]| Ok(2.0 * p[0] - 3.0 * p[1]);
    assert!(finite_diff_check(lin, &[0.4, 1.1], &[2.0, -3.0], 1e-5).unwrap() < 1e-10);
}

proptest! {
    #[test]
    fn concat_then_slice_is_identity(
        a in proptest::collection::vec(-1e3f64..1e3, 6),
        b in proptest::collection::vec(-1e3f64..1e3, 4),
        c in proptest::collection::vec(-1e3f64..1e3, 2),
    ) {
        let parts = [
            Tensor::new(vec![2, 3], a).unwrap(),
            Tensor::new(vec![2, 2], b).unwrap(),
            Tensor::new(vec![2, 1], c).unwrap(),
        ];
        let mut g = Graph::new();
        let vars: Vec<Var> = parts.iter().map(|p| g.constant(p.clone()).unwrap()).collect();
        let cat = g.concat(&vars, 1).unwrap();
        let mut start = 0;
        for p in &parts {
            let w = p.shape()[1];
            prop_assert_eq!(&g.value(cat).slice_axis(1, start, w).unwrap(), p);
            start += w;
        }
    }

    #[test]
    fn softmax_rows_are_distributions(data in proptest::collection::vec(-15f64..15.0, 12)) {
        let p = softmax_rows(&Tensor::new(vec![4, 3], data).unwrap()).unwrap();
        for row in p.data().chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn eval_dropout_is_identity(data in proptest::collection::vec(-10f64..10.0, 1..20), rate in 0f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(data)).unwrap();
        let y = g.dropout(x, rate, false, &mut rng).unwrap();
        prop_assert_eq!(g.value(y), g.value(x));
    }
}
