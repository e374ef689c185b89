//! Kernels against naive-loop oracles, and every differentiable op against
//! central finite differences.

use eqmz_nd::{kernels, Backend, Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const SEEDS: u64 = 100;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values uniformly in ±[0.05, 1], away from the relu kink.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[allow(clippy::needless_range_loop)]
fn naive_matvec(w: &Tensor, b: &Tensor, x: &Tensor) -> Vec<f64> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0; o];
    for r in 0..o {
        for c in 0..i {
            y[r] += w.data()[r * i + c] * x.data()[c];
        }
        y[r] += b.data()[r];
    }
    y
}

fn naive_conv(w: &Tensor, b: &Tensor, x: &Tensor) -> Vec<f64> {
    let (co, ci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let p = (k / 2) as isize;
    let mut out = vec![0.0; co * h * wd];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b.data()[o];
                for i in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - p;
                            let sx = xx as isize + kx as isize - p;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            acc += w.data()[((o * ci + i) * k + ky) * k + kx]
                                * x.data()[(i * h + sy as usize) * wd + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

#[test]
fn dense_matches_naive_oracle() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (o, i) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let w = rand_tensor(&mut rng, &[o, i]);
        let b = rand_tensor(&mut rng, &[o]);
        let x = rand_tensor(&mut rng, &[i]);
        let y = kernels::dense(&w, &b, &x).unwrap();
        for (a, e) in y.data().iter().zip(naive_matvec(&w, &b, &x)) {
            assert!((a - e).abs() <= 1e-12, "seed {seed}: {a} vs {e}");
        }
    }
}

#[test]
fn dense_three_by_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = rand_tensor(&mut rng, &[3, 2]);
    let b = rand_tensor(&mut rng, &[3]);
    let x = rand_tensor(&mut rng, &[2]);
    let y = kernels::dense(&w, &b, &x).unwrap();
    let expect = naive_matvec(&w, &b, &x);
    for (a, e) in y.data().iter().zip(expect) {
        assert!((a - e).abs() <= 1e-12);
    }
}

#[test]
fn conv_matches_naive_oracle() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (co, ci) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let wt = rand_tensor(&mut rng, &[co, ci, k, k]);
        let b = rand_tensor(&mut rng, &[co]);
        let x = rand_tensor(&mut rng, &[ci, h, w]);
        let y = kernels::conv2d(&wt, &b, &x).unwrap();
        assert_eq!(y.shape(), &[co, h, w]);
        for (a, e) in y.data().iter().zip(naive_conv(&wt, &b, &x)) {
            assert!((a - e).abs() <= 1e-12, "seed {seed}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_3x3_on_4x4_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = rand_tensor(&mut rng, &[2, 3, 3, 3]);
    let b = rand_tensor(&mut rng, &[2]);
    let x = rand_tensor(&mut rng, &[3, 4, 4]);
    let y = kernels::conv2d(&w, &b, &x).unwrap();
    for (a, e) in y.data().iter().zip(naive_conv(&w, &b, &x)) {
        assert!((a - e).abs() <= 1e-12);
    }
}

#[test]
fn one_by_one_conv_is_per_pixel_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = rand_tensor(&mut rng, &[3, 2, 1, 1]);
    let b = rand_tensor(&mut rng, &[3]);
    let x = rand_tensor(&mut rng, &[2, 3, 4]);
    let y = kernels::conv2d(&w, &b, &x).unwrap();
    let wm = w.clone().reshape(&[3, 2]).unwrap();
    for p in 0..12 {
        let px = Tensor::vector(vec![x.data()[p], x.data()[12 + p]]);
        let d = kernels::dense(&wm, &b, &px).unwrap();
        for o in 0..3 {
            assert!((y.data()[o * 12 + p] - d.data()[o]).abs() <= 1e-12);
        }
    }
}

#[test]
fn softmax_sums_to_one() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..10);
        let x = Tensor::vector((0..n).map(|_| rng.gen_range(-30.0..30.0)).collect());
        let s = kernels::softmax(&x).unwrap();
        let total: f64 = s.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(s.data().iter().all(|&p| p > 0.0));
    }
}

/// Builds a scalar from parameters on a graph.
type Builder<'a> = dyn Fn(&mut Graph, &ParamStore) -> Var + 'a;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares graph gradients with central differences for every scalar of
/// every parameter.
fn check_gradients(store: &ParamStore, f: &Builder<'_>, label: &str) {
    let mut g = Graph::new();
    let out = f(&mut g, store);
    let grads = g.backward(out).to_dense(store);
    let mut probe = store.clone();
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval(f, &probe);
            probe.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval(f, &probe);
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads[id.0].data()[i];
            let err = relative_error(analytic, numeric);
            assert!(
                err < FD_TOL,
                "{label}: param {} [{i}] analytic {analytic} numeric {numeric} rel {err}",
                store.name(id)
            );
        }
    }
}

fn eval(f: &Builder<'_>, store: &ParamStore) -> f64 {
    let mut g = Graph::new();
    let out = f(&mut g, store);
    g.value(out).item()
}

/// Reduces `x` to a scalar through a fixed random projection.
fn project(g: &mut Graph, x: Var, weights: &Tensor) -> Var {
    g.dot_const(&x, weights).unwrap()
}

fn store_with(items: Vec<(&str, Tensor)>) -> (ParamStore, Vec<ParamId>) {
    let mut s = ParamStore::new();
    let ids = items
        .into_iter()
        .map(|(n, t)| s.insert(n, t).unwrap())
        .collect();
    (s, ids)
}

#[test]
fn fd_dense() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (o, i) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let (s, ids) = store_with(vec![
            ("w", rand_tensor(&mut rng, &[o, i])),
            ("b", rand_tensor(&mut rng, &[o])),
            ("x", rand_tensor(&mut rng, &[i])),
        ]);
        let proj = rand_tensor(&mut rng, &[o]);
        check_gradients(
            &s,
            &|g, st| {
                let (w, b, x) = (g.param(st, ids[0]), g.param(st, ids[1]), g.param(st, ids[2]));
                let y = g.dense(&w, &b, &x).unwrap();
                project(g, y, &proj)
            },
            &format!("dense seed {seed}"),
        );
    }
}

#[test]
fn fd_conv2d() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let k = [1, 3][rng.gen_range(0..2)];
        let (co, ci, h, w) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
        let (s, ids) = store_with(vec![
            ("w", rand_tensor(&mut rng, &[co, ci, k, k])),
            ("b", rand_tensor(&mut rng, &[co])),
            ("x", rand_tensor(&mut rng, &[ci, h, w])),
        ]);
        let proj = rand_tensor(&mut rng, &[co, h, w]);
        check_gradients(
            &s,
            &|g, st| {
                let (w, b, x) = (g.param(st, ids[0]), g.param(st, ids[1]), g.param(st, ids[2]));
                let y = g.conv2d(&w, &b, &x).unwrap();
                project(g, y, &proj)
            },
            &format!("conv seed {seed}"),
        );
    }
}

#[test]
fn fd_elementwise_ops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = rng.gen_range(1..6);
        let positive = Tensor::vector((0..n).map(|_| rng.gen_range(0.2..2.0)).collect());
        let (s, ids) = store_with(vec![
            ("a", rand_away_from_zero(&mut rng, &[n])),
            ("b", rand_tensor(&mut rng, &[n])),
            ("p", positive),
        ]);
        let proj = rand_tensor(&mut rng, &[n]);
        let c = rng.gen_range(-2.0..2.0);
        check_gradients(
            &s,
            &|g, st| {
                let (a, b, p) = (g.param(st, ids[0]), g.param(st, ids[1]), g.param(st, ids[2]));
                let r = g.relu(&a);
                let sq = g.square(&b);
                let l = g.ln(&p);
                let t = g.add(&r, &sq).unwrap();
                let t = g.sub(&t, &l).unwrap();
                let t = g.scale(&t, c);
                let sm = g.softmax(&b).unwrap();
                let t = g.add(&t, &sm).unwrap();
                let total = project(g, t, &proj);
                let extra = g.sum(&a);
                g.add(&total, &extra).unwrap()
            },
            &format!("elementwise seed {seed}"),
        );
    }
}

#[test]
fn fd_structural_ops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let (s, ids) = store_with(vec![
            ("x", rand_tensor(&mut rng, &[c, h, w])),
            ("y", rand_tensor(&mut rng, &[c, h, w])),
            ("z", rand_tensor(&mut rng, &[c, h, w])),
            ("v", rand_tensor(&mut rng, &[c])),
        ]);
        let proj_cat = rand_tensor(&mut rng, &[c, h, w]);
        let proj_pool = rand_tensor(&mut rng, &[c]);
        let perm: Vec<usize> = (0..c + 2).map(|_| rng.gen_range(0..c)).collect();
        let proj_g = rand_tensor(&mut rng, &[perm.len()]);
        check_gradients(
            &s,
            &|g, st| {
                let (x, y, z, v) = (
                    g.param(st, ids[0]),
                    g.param(st, ids[1]),
                    g.param(st, ids[2]),
                    g.param(st, ids[3]),
                );
                let xb = g.add_channels(&x, &v).unwrap();
                let cat = g.concat_channels(&[&xb, &y]).unwrap();
                let back = g.slice_channels(&cat, c / 2, c).unwrap();
                let csum = g.canonical_sum(&[&back, &z, &x]).unwrap();
                let a = project(g, csum, &proj_cat);
                let pooled = g.mean_pool(&y).unwrap();
                let b = project(g, pooled, &proj_pool);
                let gathered = g.gather(&pooled, &perm).unwrap();
                let d = project(g, gathered, &proj_g);
                let ab = g.add(&a, &b).unwrap();
                g.add(&ab, &d).unwrap()
            },
            &format!("structural seed {seed}"),
        );
    }
}

#[test]
fn fd_dense_relu_network() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let (i, hdim, o) = (3, 5, 2);
        let (s, ids) = store_with(vec![
            ("w1", rand_tensor(&mut rng, &[hdim, i])),
            ("b1", rand_tensor(&mut rng, &[hdim])),
            ("w2", rand_tensor(&mut rng, &[o, hdim])),
            ("b2", rand_tensor(&mut rng, &[o])),
        ]);
        let x = rand_tensor(&mut rng, &[i]);
        let proj = rand_tensor(&mut rng, &[o]);
        check_gradients(
            &s,
            &|g, st| {
                let xin = g.constant(x.clone());
                let (w1, b1) = (g.param(st, ids[0]), g.param(st, ids[1]));
                let (w2, b2) = (g.param(st, ids[2]), g.param(st, ids[3]));
                let h = g.dense(&w1, &b1, &xin).unwrap();
                let h = g.relu(&h);
                let y = g.dense(&w2, &b2, &h).unwrap();
                project(g, y, &proj)
            },
            &format!("mlp seed {seed}"),
        );
    }
}

#[test]
fn fd_residual_block() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let (c, m, h, w) = (2, 3, 3, 4);
        let (s, ids) = store_with(vec![
            ("w1", rand_tensor(&mut rng, &[m, c, 3, 3])),
            ("b1", rand_tensor(&mut rng, &[m])),
            ("w2", rand_tensor(&mut rng, &[c, m, 3, 3])),
            ("b2", rand_tensor(&mut rng, &[c])),
        ]);
        let x = rand_tensor(&mut rng, &[c, h, w]);
        let proj = rand_tensor(&mut rng, &[c, h, w]);
        check_gradients(
            &s,
            &|g, st| {
                let xin = g.constant(x.clone());
                let p: Vec<Var> = ids.iter().map(|&id| g.param(st, id)).collect();
                let y = g.residual_block(&p[0], &p[1], &p[2], &p[3], &xin).unwrap();
                project(g, y, &proj)
            },
            &format!("resblock seed {seed}"),
        );
    }
}

#[test]
fn gradient_is_linear_in_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (s, ids) = store_with(vec![
        ("w", rand_tensor(&mut rng, &[3, 4])),
        ("b", rand_tensor(&mut rng, &[3])),
    ]);
    let x = rand_tensor(&mut rng, &[4]);
    let p1 = rand_tensor(&mut rng, &[3]);
    let p2 = rand_tensor(&mut rng, &[3]);
    let grad_of = |projs: &[&Tensor]| {
        let mut g = Graph::new();
        let xin = g.constant(x.clone());
        let (w, b) = (g.param(&s, ids[0]), g.param(&s, ids[1]));
        let y = g.dense(&w, &b, &xin).unwrap();
        let y = g.relu(&y);
        let mut total = None;
        for p in projs {
            let o = g.dot_const(&y, p).unwrap();
            total = Some(match total {
                None => o,
                Some(t) => g.add(&t, &o).unwrap(),
            });
        }
        g.backward(total.unwrap()).to_dense(&s)
    };
    let both = grad_of(&[&p1, &p2]);
    let a = grad_of(&[&p1]);
    let b = grad_of(&[&p2]);
    for k in 0..both.len() {
        for i in 0..both[k].len() {
            let sum = a[k].data()[i] + b[k].data()[i];
            assert!((both[k].data()[i] - sum).abs() < 1e-12);
        }
    }
}

/// Values whose extrema are separated from their neighbors by more than the
/// finite-difference step, so perturbations never move the argmin/argmax.
fn well_separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    loop {
        let t = rand_tensor(rng, shape);
        let mut v = t.data().to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n >= 2 && v[1] - v[0] > 1e-3 && v[n - 1] - v[n - 2] > 1e-3 {
            return t;
        }
    }
}

#[test]
fn minmax_scale_hand_values() {
    let x = Tensor::vector(vec![2.0, -2.0, 0.0, 6.0]);
    assert_eq!(kernels::minmax_scale(&x).unwrap().data(), &[0.5, 0.0, 0.25, 1.0]);
    // a flat tensor divides by the floor instead of zero
    let flat = Tensor::vector(vec![3.0; 3]);
    assert_eq!(kernels::minmax_scale(&flat).unwrap().data(), &[0.0; 3]);
}

#[test]
fn fd_minmax_scale() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..4)];
        let (s, ids) = store_with(vec![("x", well_separated(&mut rng, &shape))]);
        let proj = rand_tensor(&mut rng, &shape);
        check_gradients(
            &s,
            &|g, st| {
                let x = g.param(st, ids[0]);
                let y = g.minmax_scale(&x).unwrap();
                project(g, y, &proj)
            },
            &format!("minmax seed {seed}"),
        );
    }
}
