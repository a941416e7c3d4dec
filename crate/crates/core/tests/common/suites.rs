//! Oracle suites shared by the focused test files and the acceptance run.

use pointy::backbone::Pointy;
use pointy::embed::{prepare, EmbedParams};
use pointy::geometry::{fps, knn_group, FpsStart, PointCloud};
use pointy::numerics::{grad_check, Activation, GradReport, Graph, ParamId, ParamStore, Tensor, Var};
use pointy::Result;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{brute_fps, brute_knn, random_cloud, random_points, random_tensor, rng, tiny_config};

pub const STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;

/// Values in ±[0.1, 1] so kinks and ties stay out of reach of the step.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = r.random_range(0.1..1.0);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ w ⊙ y` with fixed random `w`, so every output element matters.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.input(&random_tensor(&shape, &mut rng(seed)));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn store_with(tensors: &[(&str, Tensor<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut s = ParamStore::new();
    let ids = tensors.iter().map(|(n, t)| s.insert(*n, t.clone())).collect();
    (s, ids)
}

/// One central-difference comparison of the suite.
pub struct GradCase {
    pub name: String,
    pub report: GradReport,
}

fn case(
    out: &mut Vec<GradCase>,
    name: impl Into<String>,
    store: &ParamStore<f64>,
    tol: f64,
    f: impl Fn(&mut Graph<'_, f64>) -> Result<Var>,
) {
    out.push(GradCase {
        name: name.into(),
        report: grad_check(store, f, STEP, tol).unwrap(),
    });
}

/// Every backward rule, the attention op, a full block, the patch embedding
/// and the reduced end-to-end model (64-bit, tie-free inputs).
pub fn gradient_suite() -> Vec<GradCase> {
    let mut out = Vec::new();

    let (s, id) = store_with(&[
        ("x", random_tensor(&[3, 4], &mut rng(1))),
        ("w", random_tensor(&[5, 4], &mut rng(2))),
        ("b", random_tensor(&[5], &mut rng(3))),
        ("m", random_tensor(&[4, 2], &mut rng(4))),
    ]);
    case(&mut out, "linear", &s, PRIMITIVE_TOL, |g| {
        let (x, w, b) = (g.param(id[0]), g.param(id[1]), g.param(id[2]));
        let y = g.linear(x, w, Some(b))?;
        weighted_sum(g, y, 10)
    });
    case(&mut out, "matmul", &s, PRIMITIVE_TOL, |g| {
        let (x, m) = (g.param(id[0]), g.param(id[3]));
        let y = g.matmul(x, m)?;
        weighted_sum(g, y, 11)
    });

    let (s, id) = store_with(&[("a", away_from_zero(&[2, 5], 5)), ("b", away_from_zero(&[2, 5], 6))]);
    case(&mut out, "add/mul/scale", &s, PRIMITIVE_TOL, |g| {
        let (a, b) = (g.param(id[0]), g.param(id[1]));
        let y = g.mul(a, b)?;
        let y = g.add(y, a)?;
        let y = g.scale(y, -1.7)?;
        weighted_sum(g, y, 12)
    });
    case(&mut out, "gelu", &s, PRIMITIVE_TOL, |g| {
        let a = g.param(id[0]);
        let y = g.gelu(a)?;
        weighted_sum(g, y, 13)
    });
    case(&mut out, "relu", &s, PRIMITIVE_TOL, |g| {
        let a = g.param(id[0]);
        let y = g.relu(a)?;
        weighted_sum(g, y, 14)
    });

    let (s, id) = store_with(&[
        ("x", random_tensor(&[3, 6], &mut rng(7))),
        ("gamma", random_tensor(&[6], &mut rng(8))),
        ("beta", random_tensor(&[6], &mut rng(9))),
    ]);
    case(&mut out, "softmax", &s, PRIMITIVE_TOL, |g| {
        let x = g.param(id[0]);
        let y = g.softmax(x)?;
        weighted_sum(g, y, 15)
    });
    case(&mut out, "layer_norm", &s, PRIMITIVE_TOL, |g| {
        let (x, ga, be) = (g.param(id[0]), g.param(id[1]), g.param(id[2]));
        let y = g.layer_norm(x, ga, be, 1e-5)?;
        weighted_sum(g, y, 16)
    });
    case(&mut out, "cross_entropy", &s, PRIMITIVE_TOL, |g| {
        let x = g.param(id[0]);
        g.cross_entropy(x, &[0, 5, 2])
    });

    // Distinct values everywhere, so each group's max is unique.
    let mut vals: Vec<f64> = (0..48).map(|i| i as f64 * 0.05 - 1.2).collect();
    vals.shuffle(&mut rng(10));
    let (s, id) = store_with(&[("x", Tensor::new(vec![12, 4], vals).unwrap())]);
    case(&mut out, "max_pool_groups", &s, PRIMITIVE_TOL, |g| {
        let x = g.param(id[0]);
        let y = g.max_pool_groups(x, 4)?;
        weighted_sum(g, y, 17)
    });
    for f in [2, 5] {
        case(&mut out, format!("sum_groups/{f}"), &s, PRIMITIVE_TOL, |g| {
            let x = g.param(id[0]);
            let y = g.sum_groups(x, f)?;
            weighted_sum(g, y, 18)
        });
        case(&mut out, format!("concat_groups/{f}"), &s, PRIMITIVE_TOL, |g| {
            let x = g.param(id[0]);
            let y = g.concat_groups(x, f)?;
            weighted_sum(g, y, 19)
        });
    }
    case(&mut out, "mean_rows", &s, PRIMITIVE_TOL, |g| {
        let x = g.param(id[0]);
        let y = g.mean_rows(x)?;
        weighted_sum(g, y, 20)
    });

    let (s, id) = store_with(&[
        ("q", random_tensor(&[4, 12], &mut rng(21))),
        ("k", random_tensor(&[4, 12], &mut rng(22))),
        ("v", random_tensor(&[4, 12], &mut rng(23))),
    ]);
    case(&mut out, "attention D12 H4 T4", &s, PRIMITIVE_TOL, |g| {
        let (q, k, v) = (g.param(id[0]), g.param(id[1]), g.param(id[2]));
        let y = g.attention(q, k, v, 4)?;
        weighted_sum(g, y, 24)
    });

    let model = Pointy::<f64>::new(tiny_config(), 3).unwrap();
    let block = model.blocks()[0];
    let mut s = ParamStore::new();
    for (_, name, t) in model.params().iter() {
        s.insert(name, t.clone());
    }
    let x = s.insert("tokens", random_tensor(&[4, 12], &mut rng(25)));
    case(&mut out, "transformer block", &s, PRIMITIVE_TOL, |g| {
        let xv = g.param(x);
        let y = block.attend(g, xv, 4, Activation::Gelu)?;
        let y = block.merge(g, y)?;
        weighted_sum(g, y, 26)
    });

    let cfg = tiny_config();
    let mut s = ParamStore::new();
    let embed = EmbedParams::register(&mut s, &cfg, &mut rng(27));
    let input = prepare(&random_cloud(cfg.n_points, 28), &cfg, FpsStart::default()).unwrap();
    case(&mut out, "patch embedding", &s, PRIMITIVE_TOL, |g| {
        let y = embed.forward(g, &input, true)?;
        weighted_sum(g, y, 29)
    });

    let model = Pointy::<f64>::new(cfg.clone(), 30).unwrap();
    let input = model.prepare(&random_cloud(cfg.n_points, 31), FpsStart::default()).unwrap();
    case(&mut out, "end-to-end D12 H4 L2 P4 k4", model.params(), MODEL_TOL, |g| {
        let v = model.forward_graph(g, &input)?;
        g.cross_entropy(v.logits, &[1])
    });
    out
}

/// FPS against the step-by-step reference on 100 seeded clouds
/// (N ≤ 512, P ≤ 64). Returns the number of clouds checked.
pub fn fps_oracle() -> std::result::Result<usize, String> {
    let mut r = rng(100);
    for case in 0..100 {
        let n = r.random_range(1..=512);
        let p = r.random_range(1..=n.min(64));
        let pts = random_points(n, &mut r);
        let got = fps(&pts, p, FpsStart::default()).map_err(|e| e.to_string())?;
        if got != brute_fps(&pts, p) {
            return Err(format!("fps cloud {case}: N={n} P={p}"));
        }
    }
    Ok(100)
}

/// kNN against a full sort on 100 seeded clouds (N ≤ 512, k ≤ 32).
pub fn knn_oracle() -> std::result::Result<usize, String> {
    let mut r = rng(101);
    for case in 0..100 {
        let n = r.random_range(1..=512);
        let k = r.random_range(1..=n.min(32));
        let pts = random_points(n, &mut r);
        let anchors: Vec<usize> = (0..r.random_range(1..=n.min(16))).map(|_| r.random_range(0..n)).collect();
        let cloud = PointCloud::new(pts.clone()).map_err(|e| e.to_string())?;
        let set = knn_group(&cloud, &anchors, k).map_err(|e| e.to_string())?;
        for (i, &a) in anchors.iter().enumerate() {
            if set.neighbors(i) != brute_knn(&pts, a, k).as_slice() {
                return Err(format!("knn cloud {case}: anchor {a}, k={k}"));
            }
        }
    }
    Ok(100)
}
