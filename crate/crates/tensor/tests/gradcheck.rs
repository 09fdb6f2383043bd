//! Central finite-difference checks of first- and second-order gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchgan_tensor::nn::{self, ParamStore};
use switchgan_tensor::{grad, ConvGeom, Tensor, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn numeric_grad(at: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Tensor {
    let h = 1e-5;
    let mut out = vec![0.0; at.numel()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut plus = at.clone();
        plus.data_mut()[i] += h;
        let mut minus = at.clone();
        minus.data_mut()[i] -= h;
        *o = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    Tensor::new(at.shape().to_vec(), out)
}

fn assert_close(analytic: &Tensor, numeric: &Tensor, tol: f64) {
    let scale = numeric.data().iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let err = (a - n).abs() / scale;
        assert!(err < tol, "entry {i}: analytic {a} vs numeric {n} (rel {err:e})");
    }
}

fn check(inputs: &[Tensor], f: impl Fn(&[Var]) -> Var) {
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&vars);
    let refs: Vec<&Var> = vars.iter().collect();
    let analytic = grad(&out, &refs, false);
    for (k, x) in inputs.iter().enumerate() {
        let numeric = numeric_grad(x, &|xp| {
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| Var::constant(if j == k { xp.clone() } else { t.clone() }))
                .collect();
            f(&vs).value().sum()
        });
        assert_close(analytic[k].value(), &numeric, 1e-6);
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[3, 4], &mut rng).map(|v| v.abs() + 0.5);
    check(&[a, b], |v| {
        v[0].tanh()
            .mul(&v[1].ln())
            .add(&v[0].sigmoid().square())
            .sub(&v[1].recip().scale(0.3))
            .add(&v[0].exp().mul(&v[1].sqrt()))
            .leaky_relu(0.2)
            .add(&v[0].sub(&v[1]).abs())
            .sum()
    });
}

#[test]
fn matmul_broadcast_and_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[4, 3], &mut rng);
    let w = random(&[3, 5], &mut rng);
    let b = random(&[1, 5], &mut rng);
    check(&[x, w, b], |v| {
        let logits = v[0].matmul(&v[1]).add_bcast(&v[2]);
        let target = Tensor::new(vec![4, 5], (0..20).map(|i| if i % 6 == 0 { 1.0 } else { 0.0 }).collect());
        logits.log_softmax().mul_const(&target).sum().neg()
    });
}

#[test]
fn transposed_matmuls_and_mixed_broadcasts() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 3], &mut rng);
    let m = random(&[2, 1, 3, 1], &mut rng);
    check(&[a, b, m], |v| {
        let mut acc = v[0].matmul_t(&v[1], false, false).sum();
        acc = acc.add(&v[0].matmul_t(&v[0], true, false).square().sum());
        acc = acc.add(&v[1].matmul_t(&v[0], true, true).tanh().sum());
        acc = acc.add(&v[0].matmul_t(&v[1].t(), false, true).sum());
        let big = v[2].broadcast_to(&[2, 4, 3, 5]);
        let w = Tensor::new(vec![2, 4, 3, 5], (0..120).map(|i| (i as f64 * 0.3).sin()).collect());
        acc.add(&big.mul_const(&w).sum_to(&[1, 4, 1, 5]).square().sum())
    });
}

#[test]
fn conv_pool_and_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 2, 8, 8], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let w2 = random(&[2, 3, 5, 5], &mut rng);
    check(&[x, w, w2], |v| {
        let h = v[0].conv2d(&v[1], ConvGeom { stride: 1, pad: 1 }).relu().maxpool2();
        let up = h.upsample2().conv2d(&v[2], ConvGeom { stride: 2, pad: 2 });
        let parts = [up.narrow(1, 0, 1), up.narrow(1, 1, 1).scale(2.0)];
        let cat = Var::concat(&parts, 1).sumpool2();
        cat.square().reshape(&[2, 8]).t().sum()
    });
}

#[test]
fn normalisation_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 2, 4, 4], &mut rng);
    let mut store = ParamStore::new();
    nn::init_affine(&mut store, "n", 2);
    let probe = random(&[3, 2, 4, 4], &mut rng);
    check(&[x], |v| {
        let p = store.bind_frozen();
        let (bn, _, _) = nn::batch_norm_train(&p, "n", &v[0], 1e-5);
        let ln = nn::layer_norm(&p, "n", &v[0], 1e-5);
        bn.add(&ln).mul_const(&probe).sum()
    });
}

/// A miniature critic: conv (stride 2) -> layer norm -> leaky relu -> dense.
fn mini_critic(x: &Var, w: &Var, wd: &Var, store: &ParamStore) -> Var {
    let p = store.bind_frozen();
    let h = x.conv2d(w, ConvGeom { stride: 2, pad: 1 });
    let h = nn::layer_norm(&p, "ln", &h, 1e-5).leaky_relu(0.2);
    let n = x.shape()[0];
    h.reshape(&[n, 2 * 4 * 4]).matmul(wd)
}

#[test]
fn second_order_gradient_penalty_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 1, 8, 8], &mut rng);
    let w = random(&[2, 1, 3, 3], &mut rng);
    let wd = random(&[32, 1], &mut rng);
    let mut store = ParamStore::new();
    nn::init_affine(&mut store, "ln", 2);

    // penalty(w, wd) = mean over batch of (||d critic / dx|| - 1)^2
    let penalty = |w: &Var, wd: &Var, create: bool| -> Var {
        let xv = Var::param(x.clone());
        let score = mini_critic(&xv, w, wd, &store);
        let g = grad(&score, &[&xv], create).remove(0);
        let norms = g.square().sum_to(&[2, 1, 1, 1]).sqrt();
        norms.add_scalar(-1.0).square().mean()
    };

    let wv = Var::param(w.clone());
    let wdv = Var::param(wd.clone());
    let gp = penalty(&wv, &wdv, true);
    let analytic = grad(&gp, &[&wv, &wdv], false);

    let num_w = numeric_grad(&w, &|wp| penalty(&Var::constant(wp.clone()), &Var::constant(wd.clone()), false).value().item());
    let num_wd = numeric_grad(&wd, &|wp| penalty(&Var::constant(w.clone()), &Var::constant(wp.clone()), false).value().item());
    assert_close(analytic[0].value(), &num_w, 1e-6);
    assert_close(analytic[1].value(), &num_wd, 1e-6);
}

#[test]
fn conv_adjoint_ops_have_correct_second_derivatives() {
    // f(x, w) = || d/dx <conv(x, w), r> ||^2 exercises conv_input_grad's own backward.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[1, 2, 6, 6], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let r = random(&[1, 3, 3, 3], &mut rng);
    let geom = ConvGeom { stride: 2, pad: 1 };
    let f = |x: &Var, w: &Var, create: bool| -> Var {
        let y = x.conv2d(w, geom).tanh().mul_const(&r).sum();
        let gx = grad(&y, &[x], create).remove(0);
        gx.square().sum()
    };
    let xv = Var::param(x.clone());
    let wv = Var::param(w.clone());
    let out = f(&xv, &wv, true);
    let analytic = grad(&out, &[&xv, &wv], false);
    let num_x = numeric_grad(&x, &|xp| f(&Var::param(xp.clone()), &Var::constant(w.clone()), false).value().item());
    let num_w = numeric_grad(&w, &|wp| f(&Var::param(x.clone()), &Var::constant(wp.clone()), false).value().item());
    assert_close(analytic[0].value(), &num_x, 1e-6);
    assert_close(analytic[1].value(), &num_w, 1e-6);
}
