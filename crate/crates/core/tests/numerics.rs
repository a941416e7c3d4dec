mod common;

use common::{naive_matmul, random_tensor, rng};
use pointy::numerics::gradcheck::rel_err;
use pointy::numerics::graph::{gelu, gelu_grad};
use pointy::numerics::{
    grad_check, AdamW, AdamWConfig, Graph, LayerNormLayer, LinearLayer, ParamStore, Tensor,
};
use pointy::Error;
use rand::Rng as _;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn matmul_hand_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let i2 = g.input(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let a = g.input(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.input(&t(&[2, 1], &[5.0, 6.0]));
    let ia = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(ia), &[1.0, 2.0, 3.0, 4.0]);
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.value(ab), &[17.0, 39.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(&Tensor::<f64>::zeros(&[2, 3]));
    let b = g.input(&Tensor::<f64>::zeros(&[2, 3]));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn matmul_matches_triple_loop_up_to_32() {
    let mut r = rng(1);
    let store = ParamStore::new();
    for m in [1, 2, 7, 13, 32] {
        for p in [1, 5, 16, 32] {
            for n in [1, 3, 11, 32] {
                let a = random_tensor(&[m, p], &mut r);
                let b = random_tensor(&[p, n], &mut r);
                let mut g = Graph::new(&store);
                let (va, vb) = (g.input(&a), g.input(&b));
                let c = g.matmul(va, vb).unwrap();
                let want = naive_matmul(a.data(), b.data(), m, p, n);
                for (x, y) in g.value(c).iter().zip(&want) {
                    assert!((x - y).abs() <= 1e-12, "{m}x{p}x{n}");
                }
            }
        }
    }
}

#[test]
fn activation_values() {
    assert_eq!(gelu(0.0f64), 0.0);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(&t(&[1, 2], &[-3.0, 3.0]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r), &[0.0, 3.0]);
    let h = 1e-6;
    let fd = (gelu(0.5 + h) - gelu(0.5 - h)) / (2.0 * h);
    assert!((gelu_grad(0.5f64) - fd).abs() < 1e-6);
}

#[test]
fn softmax_examples_and_rows() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(&t(&[1, 3], &[0.0, 0.0, 0.0]));
    let s = g.softmax(a).unwrap();
    for v in g.value(s) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let b = g.input(&t(&[1, 2], &[1000.0, 1000.0]));
    let s = g.softmax(b).unwrap();
    assert_eq!(g.value(s), &[0.5, 0.5]);
    let mut r = rng(2);
    let x = Tensor::new(vec![4, 6], (0..24).map(|_| r.random_range(-30.0..30.0)).collect()).unwrap();
    let x = g.input(&x);
    let s = g.softmax(x).unwrap();
    for row in g.value(s).chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn layer_norm_statistics() {
    let mut store = ParamStore::new();
    let ln = LayerNormLayer::register(&mut store, "ln", 16);
    let mut g = Graph::new(&store);
    let c = g.input(&Tensor::filled(&[1, 16], 2.5));
    let y = ln.forward(&mut g, c).unwrap();
    assert!(g.value(y).iter().all(|&v| v == 0.0));

    let x = random_tensor(&[5, 16], &mut rng(3));
    let x = g.input(&x);
    let y = ln.forward(&mut g, x).unwrap();
    for row in g.value(y).chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-3, "{var}");
    }
}

#[test]
fn layer_norm_variance_is_eps_limited() {
    let mut store = ParamStore::new();
    let ln = LayerNormLayer::register(&mut store, "ln", 8);
    let mut g = Graph::new(&store);
    let x = random_tensor(&[3, 8], &mut rng(4));
    let scaled = Tensor::new(vec![3, 8], x.data().iter().map(|v| v * 100.0).collect()).unwrap();
    let x = g.input(&scaled);
    let y = ln.forward(&mut g, x).unwrap();
    for row in g.value(y).chunks(8) {
        let var = row.iter().map(|v| v * v).sum::<f64>() / 8.0;
        assert!((var - 1.0).abs() < 1e-6, "{var}");
    }
}

#[test]
fn linear_hand_examples() {
    let mut store = ParamStore::new();
    let l = LinearLayer::register(&mut store, "l", 2, 1, &mut rng(0));
    *store.get_mut(l.weight) = t(&[1, 2], &[1.0, 1.0]);
    *store.get_mut(l.bias.unwrap()) = t(&[1], &[1.0]);
    let mut g = Graph::new(&store);
    let x = g.input(&t(&[1, 2], &[2.0, 3.0]));
    let y = l.forward(&mut g, x).unwrap();
    assert_eq!(g.value(y), &[6.0]);

    let mut store = ParamStore::new();
    let l = LinearLayer::register(&mut store, "id", 3, 3, &mut rng(0));
    *store.get_mut(l.weight) = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let mut g = Graph::new(&store);
    let x = g.input(&t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.25, -0.125]));
    let y = l.forward(&mut g, x).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn cross_entropy_examples() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let u = g.input(&Tensor::zeros(&[1, 4]));
    let l = g.cross_entropy(u, &[2]).unwrap();
    assert!((g.item(l) - 4f64.ln()).abs() < 1e-15);
    let s = g.input(&t(&[1, 3], &[0.0, 1000.0, 0.0]));
    let l = g.cross_entropy(s, &[1]).unwrap();
    assert!(g.item(l).abs() < 1e-12);
    assert!(matches!(g.cross_entropy(s, &[3]), Err(Error::Index { .. })));
}

#[test]
fn cross_entropy_shift_invariance() {
    let mut r = rng(5);
    let store = ParamStore::new();
    for _ in 0..50 {
        let logits = random_tensor(&[3, 5], &mut r);
        let c: f64 = r.random_range(-100.0..100.0);
        let shifted = Tensor::new(vec![3, 5], logits.data().iter().map(|v| v + c).collect()).unwrap();
        let labels = [r.random_range(0..5), r.random_range(0..5), r.random_range(0..5)];
        let mut g = Graph::new(&store);
        let (a, b) = (g.input(&logits), g.input(&shifted));
        let la = g.cross_entropy(a, &labels).unwrap();
        let lb = g.cross_entropy(b, &labels).unwrap();
        assert!((g.item(la) - g.item(lb)).abs() <= 1e-10);
    }
}

#[test]
fn backward_analytic_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.variable(&random_tensor(&[3, 4], &mut rng(6)));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).unwrap().iter().all(|&v| v == 1.0));

    let mut g = Graph::new(&store);
    let x = g.variable(&t(&[1, 3], &[1.0, 2.0, 3.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[2.0, 4.0, 6.0]);
    assert!(matches!(g.backward(s), Err(Error::BackwardTwice)));
}

#[test]
fn non_finite_results_are_errors() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(&t(&[1, 1], &[1e300]));
    assert!(matches!(g.mul(x, x), Err(Error::NonFinite { .. })));
    assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
}

#[test]
fn grad_check_of_square() {
    let mut store = ParamStore::new();
    let id = store.insert("x", t(&[1], &[3.0]));
    let report = grad_check(
        &store,
        |g| {
            let x = g.param(id);
            let sq = g.mul(x, x)?;
            g.sum(sq)
        },
        1e-5,
        1e-9,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.checked, 1);
}

#[test]
fn grad_check_reports_non_finite_parameter() {
    let mut store = ParamStore::new();
    let id = store.insert("big", t(&[1], &[1e200]));
    let err = grad_check(
        &store,
        |g| {
            let x = g.param(id);
            let sq = g.mul(x, x)?;
            g.sum(sq)
        },
        1e-5,
        1e-9,
    )
    .unwrap_err();
    assert!(err.is_numeric(), "{err}");
}

#[test]
fn rel_err_floor() {
    assert_eq!(rel_err(0.0, 0.0), 0.0);
    assert!((rel_err(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
}

#[test]
fn adamw_closed_forms() {
    let step = |p0: f64, g: f64, lr: f64, wd: f64| {
        let mut store = ParamStore::new();
        let id = store.insert("p", t(&[1], &[p0]));
        store.get_mut(id).set_grad(vec![g]);
        let cfg = AdamWConfig {
            lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.step(&mut store).unwrap();
        store.get(id).data()[0]
    };
    assert!((step(1.0, 1.0, 0.1, 0.0) - 0.9).abs() < 1e-7);
    assert_eq!(step(1.0, 0.0, 0.1, 0.0), 1.0);
    assert!((step(1.0, 0.0, 0.1, 0.01) - 0.999).abs() < 1e-15);
}

#[test]
fn adamw_missing_grad_names_parameter() {
    let mut store = ParamStore::new();
    store.insert("encoder.w", t(&[1], &[1.0]));
    let mut opt = AdamW::new(AdamWConfig::default(), &store);
    match opt.step(&mut store) {
        Err(Error::MissingGrad(name)) => assert_eq!(name, "encoder.w"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn gradients_sum_across_uses() {
    let mut store = ParamStore::new();
    let id = store.insert("w", t(&[1, 2], &[1.5, -2.0]));
    let mut g = Graph::new(&store);
    let a = g.param(id);
    let b = g.param(id);
    let s = g.add(a, b).unwrap();
    let s = g.sum(s).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param(id).unwrap(), &[2.0, 2.0]);
}
