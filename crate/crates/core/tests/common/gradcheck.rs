//! Gradient checker: for each differentiable op, the tape's gradient of a
//! weighted-sum loss is compared against central finite differences of an
//! independent f64 re-implementation of the same op.
//!
//! The reported error is vector-relative (`||ad - fd||_inf / ||fd||_inf`)
//! over the full gradient of the varied tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfvoc::tensor::{Graph, ParamStore, Tensor, Var};

use super::{central_diff, vec_rel_error};

pub struct OpCheck {
    pub name: &'static str,
    pub rel_err: f64,
}

/// The autodiff-vs-finite-difference comparison for one op configuration.
///
/// `build` applies the op to the varied tensor on the graph; `reference`
/// recomputes the op's output from an f64 copy of the varied tensor.
fn check_grad(
    name: &'static str,
    seed: u64,
    dims: &[usize],
    data: Vec<f32>,
    build: &dyn Fn(&mut Graph, &ParamStore, Var) -> Var,
    reference: &dyn Fn(&[f64]) -> Vec<f64>,
) -> OpCheck {
    let mut store = ParamStore::new();
    let id = store.register("x", Tensor::new(dims.to_vec(), data.clone()).unwrap(), true);

    let mut g = Graph::new();
    let xv = g.param(&store, id);
    let y = build(&mut g, &store, xv);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let weights: Vec<f32> = (0..g.value(y).numel())
        .map(|_| rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let w = g.leaf(Tensor::new(g.value(y).dims().to_vec(), weights.clone()).unwrap());
    let prod = g.mul(y, w).unwrap();
    let loss = g.sum(prod);
    store.zero_grad();
    g.backward(loss, &mut store).unwrap();
    let ad: Vec<f64> = store.grad(id).data().iter().map(|&v| v as f64).collect();

    let w64: Vec<f64> = weights.iter().map(|&v| v as f64).collect();
    let x64: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let f = |x: &[f64]| -> f64 {
        reference(x)
            .iter()
            .zip(&w64)
            .map(|(y, w)| y * w)
            .sum::<f64>()
    };
    let fd = central_diff(&f, &x64, 1e-6);

    OpCheck {
        name,
        rel_err: vec_rel_error(&ad, &fd),
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Values bounded away from zero (activation kinks, sign changes).
fn rand_nonzero(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(0.1..scale);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Run the full op gradient-check suite.
pub fn check_all_ops() -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240);
    let mut out = Vec::new();

    // conv1d: vary input, weight, bias in turn
    {
        let (b, ci, t) = (2usize, 3usize, 17usize);
        let (co, k, stride, dil, pad) = (4usize, 5usize, 2usize, 2usize, 3usize);
        let x = randn(&mut rng, b * ci * t, 1.0);
        let w = randn(&mut rng, co * ci * k, 0.6);
        let bias = randn(&mut rng, co, 0.3);
        let (w64, b64) = (to64(&w), to64(&bias));

        let (wt, bt) = (
            Tensor::new(vec![co, ci, k], w.clone()).unwrap(),
            Tensor::new(vec![co], bias.clone()).unwrap(),
        );
        let (xt,) = (Tensor::new(vec![b, ci, t], x.clone()).unwrap(),);

        let (wt_c, bt_c) = (wt.clone(), bt.clone());
        out.push(check_grad(
            "conv1d/input",
            1,
            &[b, ci, t],
            x.clone(),
            &move |g, _, xv| {
                let w = g.leaf(wt_c.clone());
                let bv = g.leaf(bt_c.clone());
                g.conv1d(xv, w, Some(bv), stride, dil, pad).unwrap()
            },
            &move |xs| {
                super::conv1d_ref(xs, (b, ci, t), &w64, (co, ci, k), Some(&b64), stride, dil, pad)
            },
        ));

        let (xt_c, bt_c) = (xt.clone(), bt.clone());
        let (x64_c, b64_c) = (to64(&x), to64(&bias));
        out.push(check_grad(
            "conv1d/weight",
            2,
            &[co, ci, k],
            w.clone(),
            &move |g, _, wv| {
                let xv = g.leaf(xt_c.clone());
                let bv = g.leaf(bt_c.clone());
                g.conv1d(xv, wv, Some(bv), stride, dil, pad).unwrap()
            },
            &move |ws| {
                super::conv1d_ref(
                    &x64_c,
                    (b, ci, t),
                    ws,
                    (co, ci, k),
                    Some(&b64_c),
                    stride,
                    dil,
                    pad,
                )
            },
        ));

        let (xt_c, wt_c) = (xt.clone(), wt.clone());
        let (x64_c, w64_c) = (to64(&x), to64(&w));
        out.push(check_grad(
            "conv1d/bias",
            3,
            &[co],
            bias.clone(),
            &move |g, _, bv| {
                let xv = g.leaf(xt_c.clone());
                let wv = g.leaf(wt_c.clone());
                g.conv1d(xv, wv, Some(bv), stride, dil, pad).unwrap()
            },
            &move |bs| {
                super::conv1d_ref(&x64_c, (b, ci, t), &w64_c, (co, ci, k), Some(bs), stride, dil, pad)
            },
        ));
    }

    // conv_transpose1d
    {
        let (b, ci, t) = (2usize, 3usize, 9usize);
        let (co, k, stride, pad) = (4usize, 6usize, 2usize, 2usize);
        let x = randn(&mut rng, b * ci * t, 1.0);
        let w = randn(&mut rng, ci * co * k, 0.6);
        let bias = randn(&mut rng, co, 0.3);
        let (w64, b64) = (to64(&w), to64(&bias));
        let wt = Tensor::new(vec![ci, co, k], w.clone()).unwrap();
        let bt = Tensor::new(vec![co], bias.clone()).unwrap();
        let xt = Tensor::new(vec![b, ci, t], x.clone()).unwrap();

        let (wt_c, bt_c) = (wt.clone(), bt.clone());
        out.push(check_grad(
            "conv_transpose1d/input",
            4,
            &[b, ci, t],
            x.clone(),
            &move |g, _, xv| {
                let w = g.leaf(wt_c.clone());
                let bv = g.leaf(bt_c.clone());
                g.conv_transpose1d(xv, w, Some(bv), stride, pad).unwrap()
            },
            &move |xs| {
                super::conv_transpose1d_ref(xs, (b, ci, t), &w64, (ci, co, k), Some(&b64), stride, pad)
            },
        ));

        let (xt_c, bt_c) = (xt.clone(), bt.clone());
        let (x64_c, b64_c) = (to64(&x), to64(&bias));
        out.push(check_grad(
            "conv_transpose1d/weight",
            5,
            &[ci, co, k],
            w.clone(),
            &move |g, _, wv| {
                let xv = g.leaf(xt_c.clone());
                let bv = g.leaf(bt_c.clone());
                g.conv_transpose1d(xv, wv, Some(bv), stride, pad).unwrap()
            },
            &move |ws| {
                super::conv_transpose1d_ref(&x64_c, (b, ci, t), ws, (ci, co, k), Some(&b64_c), stride, pad)
            },
        ));

        let (xt_c, wt_c) = (xt.clone(), wt.clone());
        let (x64_c, w64_c) = (to64(&x), to64(&w));
        out.push(check_grad(
            "conv_transpose1d/bias",
            6,
            &[co],
            bias,
            &move |g, _, bv| {
                let xv = g.leaf(xt_c.clone());
                let wv = g.leaf(wt_c.clone());
                g.conv_transpose1d(xv, wv, Some(bv), stride, pad).unwrap()
            },
            &move |bs| {
                super::conv_transpose1d_ref(&x64_c, (b, ci, t), &w64_c, (ci, co, k), Some(bs), stride, pad)
            },
        ));
    }

    // pools: distinct values so the FD step cannot flip a max tie
    {
        let (rows, t) = (4usize, 16usize);
        let x: Vec<f32> = (0..rows * t)
            .map(|i| (i as f32 * 0.37).sin() * 2.0 + (i as f32) * 1e-3)
            .collect();
        out.push(check_grad(
            "max_pool1d/input",
            7,
            &[2, 2, t],
            x.clone(),
            &|g, _, xv| g.max_pool1d(xv, 3, 2).unwrap(),
            &move |xs| super::max_pool1d_ref(xs, rows, t, 3, 2),
        ));
        out.push(check_grad(
            "avg_pool1d/input",
            8,
            &[2, 2, t],
            x,
            &|g, _, xv| g.avg_pool1d(xv, 4, 2, 1).unwrap(),
            &move |xs| super::avg_pool1d_ref(xs, rows, t, 4, 2, 1),
        ));
    }

    // elementwise activations (inputs away from kinks)
    {
        let n = 24usize;
        let x = rand_nonzero(&mut rng, n, 2.0);
        let cases: Vec<(
            &'static str,
            Box<dyn Fn(&mut Graph, &ParamStore, Var) -> Var>,
            Box<dyn Fn(f64) -> f64>,
        )> = vec![
            (
                "leaky_relu",
                Box::new(|g: &mut Graph, _: &ParamStore, v: Var| g.leaky_relu(v, 0.1).unwrap()),
                Box::new(|x: f64| if x >= 0.0 { x } else { 0.1 * x }),
            ),
            (
                "relu",
                Box::new(|g: &mut Graph, _: &ParamStore, v: Var| g.relu(v)),
                Box::new(|x: f64| x.max(0.0)),
            ),
            (
                "sigmoid",
                Box::new(|g: &mut Graph, _: &ParamStore, v: Var| g.sigmoid(v)),
                Box::new(super::sigmoid_ref),
            ),
            (
                "tanh",
                Box::new(|g: &mut Graph, _: &ParamStore, v: Var| g.tanh(v)),
                Box::new(f64::tanh),
            ),
            (
                "sin",
                Box::new(|g: &mut Graph, _: &ParamStore, v: Var| g.sin(v)),
                Box::new(f64::sin),
            ),
            (
                "abs",
                Box::new(|g: &mut Graph, _: &ParamStore, v: Var| g.abs(v)),
                Box::new(f64::abs),
            ),
            (
                "add_const",
                Box::new(|g: &mut Graph, _: &ParamStore, v: Var| g.add_const(v, -1.0)),
                Box::new(|x: f64| x - 1.0),
            ),
            (
                "scale",
                Box::new(|g: &mut Graph, _: &ParamStore, v: Var| g.scale(v, 2.5)),
                Box::new(|x: f64| 2.5 * x),
            ),
        ];
        for (i, (name, build, f)) in cases.into_iter().enumerate() {
            out.push(check_grad(
                name,
                10 + i as u64,
                &[2, 3, 4],
                x.clone(),
                &move |g, s, v| build(g, s, v),
                &move |xs| xs.iter().map(|&x| f(x)).collect(),
            ));
        }
    }

    // binary elementwise ops, varying each operand
    {
        let n = 18usize;
        let a = randn(&mut rng, n, 1.5);
        let b = rand_nonzero(&mut rng, n, 1.5);
        let bt = Tensor::new(vec![3, 6], b.clone()).unwrap();
        let at = Tensor::new(vec![3, 6], a.clone()).unwrap();
        let b64 = to64(&b);
        let a64 = to64(&a);

        let bt_c = bt.clone();
        let b64_c = b64.clone();
        out.push(check_grad(
            "add/lhs",
            20,
            &[3, 6],
            a.clone(),
            &move |g, _, v| {
                let o = g.leaf(bt_c.clone());
                g.add(v, o).unwrap()
            },
            &move |xs| xs.iter().zip(&b64_c).map(|(x, y)| x + y).collect(),
        ));
        let bt_c = bt.clone();
        let b64_c = b64.clone();
        out.push(check_grad(
            "sub/lhs",
            21,
            &[3, 6],
            a.clone(),
            &move |g, _, v| {
                let o = g.leaf(bt_c.clone());
                g.sub(v, o).unwrap()
            },
            &move |xs| xs.iter().zip(&b64_c).map(|(x, y)| x - y).collect(),
        ));
        let at_c = at.clone();
        let a64_c = a64.clone();
        out.push(check_grad(
            "sub/rhs",
            22,
            &[3, 6],
            b.clone(),
            &move |g, _, v| {
                let o = g.leaf(at_c.clone());
                g.sub(o, v).unwrap()
            },
            &move |xs| a64_c.iter().zip(xs).map(|(x, y)| x - y).collect(),
        ));
        let bt_c = bt;
        let b64_c = b64;
        out.push(check_grad(
            "mul/lhs",
            23,
            &[3, 6],
            a,
            &move |g, _, v| {
                let o = g.leaf(bt_c.clone());
                g.mul(v, o).unwrap()
            },
            &move |xs| xs.iter().zip(&b64_c).map(|(x, y)| x * y).collect(),
        ));
    }

    // reductions and shape ops
    {
        let (rows, t) = (4usize, 9usize);
        let x = randn(&mut rng, rows * t, 1.0);
        out.push(check_grad(
            "cumsum",
            30,
            &[2, 2, t],
            x.clone(),
            &|g, _, v| g.cumsum(v),
            &move |xs| super::cumsum_ref(xs, rows, t),
        ));
        out.push(check_grad(
            "sum",
            31,
            &[2, 2, t],
            x.clone(),
            &|g, _, v| g.sum(v),
            &|xs| vec![xs.iter().sum::<f64>()],
        ));
        out.push(check_grad(
            "mean",
            32,
            &[2, 2, t],
            x.clone(),
            &|g, _, v| g.mean(v),
            &move |xs| vec![xs.iter().sum::<f64>() / (rows * t) as f64],
        ));
        let flat: Vec<f32> = randn(&mut rng, 32, 1.0);
        out.push(check_grad(
            "frames",
            33,
            &[32],
            flat.clone(),
            &|g, _, v| g.frames(v, 8, 4).unwrap(),
            &|xs| super::frames_ref(xs, 8, 4),
        ));
        let sig: Vec<f32> = randn(&mut rng, 13, 1.0);
        out.push(check_grad(
            "fold_periods",
            34,
            &[1, 1, 13],
            sig,
            &|g, _, v| g.fold_periods(v, 3).unwrap(),
            &|xs| super::fold_periods_ref(xs, 3),
        ));
    }

    // matmul
    {
        let (m, k, n) = (4usize, 5usize, 3usize);
        let a = randn(&mut rng, m * k, 1.0);
        let b = randn(&mut rng, k * n, 1.0);
        let bt = Tensor::new(vec![k, n], b.clone()).unwrap();
        let at = Tensor::new(vec![m, k], a.clone()).unwrap();
        let (a64, b64) = (to64(&a), to64(&b));

        let bt_c = bt;
        let b64_c = b64;
        out.push(check_grad(
            "matmul/lhs",
            40,
            &[m, k],
            a,
            &move |g, _, v| {
                let o = g.leaf(bt_c.clone());
                g.matmul(v, o).unwrap()
            },
            &move |xs| super::matmul_ref(xs, &b64_c, (m, k, n)),
        ));
        let at_c = at;
        let a64_c = a64;
        out.push(check_grad(
            "matmul/rhs",
            41,
            &[k, n],
            b,
            &move |g, _, v| {
                let o = g.leaf(at_c.clone());
                g.matmul(o, v).unwrap()
            },
            &move |xs| super::matmul_ref(&a64_c, xs, (m, k, n)),
        ));
    }

    // magnitude and log_floor
    {
        let n = 20usize;
        let re = rand_nonzero(&mut rng, n, 1.0);
        let im = rand_nonzero(&mut rng, n, 1.0);
        let im_t = Tensor::new(vec![4, 5], im.clone()).unwrap();
        let im64 = to64(&im);
        out.push(check_grad(
            "magnitude/re",
            50,
            &[4, 5],
            re,
            &move |g, _, v| {
                let o = g.leaf(im_t.clone());
                g.magnitude(v, o).unwrap()
            },
            &move |xs| {
                xs.iter()
                    .zip(&im64)
                    .map(|(r, i)| (r * r + i * i).sqrt())
                    .collect()
            },
        ));
        // values well above and well below the floor; gradient is zero in
        // the floored region on both sides of the comparison
        let x: Vec<f32> = (0..n)
            .map(|i| if i % 3 == 0 { 1e-6 } else { 0.2 + 0.1 * i as f32 })
            .collect();
        out.push(check_grad(
            "log_floor",
            51,
            &[4, 5],
            x,
            &|g, _, v| g.log_floor(v, 1e-5),
            &|xs| xs.iter().map(|&x| x.max(1e-5).ln()).collect(),
        ));
    }

    // bce_with_logits (scalar output; harness multiplies by one weight)
    {
        let n = 12usize;
        let z = randn(&mut rng, n, 2.0);
        let y: Vec<f32> = (0..n).map(|i| (i % 2) as f32).collect();
        let y_t = Tensor::new(vec![1, 1, n], y.clone()).unwrap();
        let y64 = to64(&y);
        out.push(check_grad(
            "bce_with_logits/logits",
            60,
            &[1, 1, n],
            z,
            &move |g, _, v| {
                let t = g.leaf(y_t.clone());
                g.bce_with_logits(v, t).unwrap()
            },
            &move |xs| vec![super::bce_with_logits_ref(xs, &y64)],
        ));
    }

    // concat_channels (vary the middle part)
    {
        let t = 7usize;
        let p0 = randn(&mut rng, 2 * t, 1.0);
        let p2 = randn(&mut rng, 3 * t, 1.0);
        let p0_t = Tensor::new(vec![1, 2, t], p0.clone()).unwrap();
        let p2_t = Tensor::new(vec![1, 3, t], p2.clone()).unwrap();
        let (p0_64, p2_64) = (to64(&p0), to64(&p2));
        let x = randn(&mut rng, t, 1.0);
        out.push(check_grad(
            "concat_channels/middle",
            61,
            &[1, 1, t],
            x,
            &move |g, _, v| {
                let a = g.leaf(p0_t.clone());
                let c = g.leaf(p2_t.clone());
                g.concat_channels(&[a, v, c]).unwrap()
            },
            &move |xs| {
                let mut out = p0_64.clone();
                out.extend_from_slice(xs);
                out.extend_from_slice(&p2_64);
                out
            },
        ));
    }

    out
}
