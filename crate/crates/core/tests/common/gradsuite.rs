//! Analytic-vs-finite-difference gradient checks for every differentiable op.
//!
//! Each case builds a small double-precision graph, reduces it to a scalar via
//! a fixed random weighting, and compares every grad-requiring input against
//! central differences.

#![allow(dead_code)]

use bcgan_core::rng;
use bcgan_core::tensor::gradcheck::max_relative_error;
use bcgan_core::tensor::{finite_difference_gradient, Graph, NodeId, Tensor};
use bcgan_core::Result;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error; entries smaller than this are
/// compared absolutely.
pub const FLOOR: f64 = 1e-3;
pub const POINTS: usize = 10;

pub type Builder = dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Box<Builder>,
}

/// Values uniform in ±[margin, scale], never closer than `margin` to zero.
pub fn away_from_zero(shape: &[usize], scale: f64, margin: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(margin..scale);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Scalar objective `sum(out ⊙ weights)` for fixed pseudo-random weights.
fn objective(case: &Case, inputs: &[Tensor<f64>], seed: u64) -> Result<(Graph<f64>, Vec<NodeId>, NodeId)> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = (case.build)(&mut g, &ids)?;
    let shape = g.value(out).shape().to_vec();
    let mut r = rng::stream(seed, "gradsuite.weights", &[]);
    let weights = Tensor::from_fn(&shape, |_| r.gen_range(-1.0..1.0));
    let w = g.constant(weights);
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod)?;
    Ok((g, ids, loss))
}

/// Worst relative error over all grad-requiring inputs of one case.
pub fn check_case(case: &Case, seed: u64) -> Result<f64> {
    let (g, ids, loss) = objective(case, &case.inputs, seed)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    for (k, input) in case.inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = grads.wrt(&g, ids[k]);
        let numeric = finite_difference_gradient(
            |probe| {
                let mut inputs = case.inputs.clone();
                inputs[k] = probe.clone().requiring_grad();
                let (g, _, loss) = objective(case, &inputs, seed)?;
                Ok(g.value(loss).item())
            },
            input,
            STEP,
        )?;
        worst = worst.max(max_relative_error(analytic.data(), numeric.data(), FLOOR));
    }
    Ok(worst)
}

/// Ten random instances of every differentiable op kind.
pub fn op_cases(point: u64) -> Vec<Case> {
    let mut r = rng::stream(2024, "gradsuite.points", &[point]);
    let rg = |t: Tensor<f64>| t.requiring_grad();
    let mut cases = Vec::new();

    let stride = 1 + (point as usize % 2);
    let padding = point as usize % 2;
    cases.push(Case {
        name: "conv2d",
        inputs: vec![
            rg(uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut r)),
            rg(uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r)),
            rg(uniform(&[3], -1.0, 1.0, &mut r)),
        ],
        build: Box::new(move |g, x| g.conv2d(x[0], x[1], Some(x[2]), stride, padding)),
    });
    cases.push(Case {
        name: "conv_transpose2d",
        inputs: vec![
            rg(uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut r)),
            rg(uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut r)),
            rg(uniform(&[2], -1.0, 1.0, &mut r)),
        ],
        build: Box::new(|g, x| g.conv_transpose2d(x[0], x[1], Some(x[2]), 2, 1)),
    });
    cases.push(Case {
        name: "batchnorm2d(train)",
        inputs: vec![
            rg(uniform(&[3, 2, 3, 3], -2.0, 2.0, &mut r)),
            rg(uniform(&[2], 0.5, 1.5, &mut r)),
            rg(uniform(&[2], -0.5, 0.5, &mut r)),
        ],
        build: Box::new(|g, x| g.batch_norm2d_train(x[0], x[1], x[2], 1e-5)),
    });
    cases.push(Case {
        name: "batchnorm2d(eval)",
        inputs: vec![
            rg(uniform(&[2, 2, 3, 3], -2.0, 2.0, &mut r)),
            rg(uniform(&[2], 0.5, 1.5, &mut r)),
            rg(uniform(&[2], -0.5, 0.5, &mut r)),
            uniform(&[2], -0.5, 0.5, &mut r),
            uniform(&[2], 0.5, 2.0, &mut r),
        ],
        build: Box::new(|g, x| g.batch_norm2d_eval(x[0], x[1], x[2], x[3], x[4], 1e-5)),
    });
    let shape = [2, 3, 2, 2];
    cases.push(Case {
        name: "leaky_relu",
        inputs: vec![rg(away_from_zero(&shape, 2.0, 1e-2, &mut r))],
        build: Box::new(|g, x| g.leaky_relu(x[0], 0.2)),
    });
    cases.push(Case {
        name: "relu",
        inputs: vec![rg(away_from_zero(&shape, 2.0, 1e-2, &mut r))],
        build: Box::new(|g, x| g.relu(x[0])),
    });
    cases.push(Case {
        name: "sigmoid",
        inputs: vec![rg(uniform(&shape, -4.0, 4.0, &mut r))],
        build: Box::new(|g, x| g.sigmoid(x[0])),
    });
    cases.push(Case {
        name: "tanh",
        inputs: vec![rg(uniform(&shape, -3.0, 3.0, &mut r))],
        build: Box::new(|g, x| g.tanh(x[0])),
    });
    cases.push(Case {
        name: "softplus",
        inputs: vec![rg(uniform(&shape, -5.0, 5.0, &mut r))],
        build: Box::new(|g, x| g.softplus(x[0])),
    });
    cases.push(Case {
        name: "concat_channels",
        inputs: vec![rg(uniform(&[2, 1, 2, 3], -1.0, 1.0, &mut r)), rg(uniform(&[2, 2, 2, 3], -1.0, 1.0, &mut r))],
        build: Box::new(|g, x| g.concat_channels(&[x[0], x[1]])),
    });
    cases.push(Case {
        name: "add(broadcast channel)",
        inputs: vec![rg(uniform(&shape, -1.0, 1.0, &mut r)), rg(uniform(&[2, 3, 1, 1], -1.0, 1.0, &mut r))],
        build: Box::new(|g, x| g.add(x[0], x[1])),
    });
    cases.push(Case {
        name: "sub(broadcast scalar)",
        inputs: vec![rg(uniform(&[1], -1.0, 1.0, &mut r)), rg(uniform(&shape, -1.0, 1.0, &mut r))],
        build: Box::new(|g, x| g.sub(x[0], x[1])),
    });
    cases.push(Case {
        name: "mul(broadcast channel)",
        inputs: vec![rg(uniform(&shape, -1.0, 1.0, &mut r)), rg(uniform(&[2, 3, 1, 1], -1.0, 1.0, &mut r))],
        build: Box::new(|g, x| g.mul(x[0], x[1])),
    });
    cases.push(Case {
        name: "div(broadcast scalar)",
        inputs: vec![rg(uniform(&shape, -1.0, 1.0, &mut r)), rg(uniform(&[1], 0.5, 2.0, &mut r))],
        build: Box::new(|g, x| g.div(x[0], x[1])),
    });
    cases.push(Case {
        name: "abs",
        inputs: vec![rg(away_from_zero(&shape, 2.0, 1e-2, &mut r))],
        build: Box::new(|g, x| g.abs(x[0])),
    });
    cases.push(Case {
        name: "mean",
        inputs: vec![rg(uniform(&shape, -1.0, 1.0, &mut r))],
        build: Box::new(|g, x| g.mean(x[0])),
    });
    cases.push(Case {
        name: "sum",
        inputs: vec![rg(uniform(&shape, -1.0, 1.0, &mut r))],
        build: Box::new(|g, x| g.sum(x[0])),
    });
    cases.push(Case {
        name: "square",
        inputs: vec![rg(uniform(&shape, -2.0, 2.0, &mut r))],
        build: Box::new(|g, x| g.square(x[0])),
    });
    cases.push(Case {
        name: "log",
        inputs: vec![rg(uniform(&shape, 0.1, 3.0, &mut r))],
        build: Box::new(|g, x| g.log(x[0])),
    });
    cases.push(Case {
        name: "scalar_mul",
        inputs: vec![rg(uniform(&shape, -1.0, 1.0, &mut r))],
        build: Box::new(|g, x| g.scalar_mul(x[0], -1.7)),
    });
    cases
}

/// Concrete dropout with frozen uniforms and the regularizer, both
/// differentiated with respect to `logit_p` (and the activations/weights).
pub fn concrete_cases(point: u64) -> Vec<Case> {
    use bcgan_core::layers::{concrete_apply_with_noise, concrete_regularizer_node, ConcreteDropoutParams};

    let mut r = rng::stream(2024, "gradsuite.concrete", &[point]);
    let logit = r.gen_range(-3.0..3.0);
    let temperature = [0.1, 0.5, 1.0][point as usize % 3];
    let params = ConcreteDropoutParams {
        logit_p: logit,
        temperature,
        weight_reg_coeff: 1e-2,
        dropout_reg_coeff: 1e-2,
        input_channels: 3,
    };
    // Keep the pre-activation of every gate O(1) so the relaxed gate is
    // not saturated beyond what double precision can difference.
    let u = Tensor::from_fn(&[2, 3, 1, 1], |_| {
        let target: f64 = r.gen_range(-2.0..2.0) * temperature - logit;
        1.0 / (1.0 + (-target).exp())
    });
    let u_elem = Tensor::from_fn(&[2, 3, 2, 2], |_| {
        let target: f64 = r.gen_range(-2.0..2.0) * temperature - logit;
        1.0 / (1.0 + (-target).exp())
    });
    let lp = || Tensor::new(vec![1], vec![logit]).unwrap().requiring_grad();
    let x = uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut r).requiring_grad();
    let w = uniform(&[4, 3, 4, 4], -0.5, 0.5, &mut r).requiring_grad();
    vec![
        Case {
            name: "concrete_apply(channel, frozen u)",
            inputs: vec![x.clone(), lp()],
            build: Box::new(move |g, v| concrete_apply_with_noise(g, v[0], v[1], &params, &u)),
        },
        Case {
            name: "concrete_apply(element, frozen u)",
            inputs: vec![x, lp()],
            build: Box::new(move |g, v| concrete_apply_with_noise(g, v[0], v[1], &params, &u_elem)),
        },
        Case {
            name: "concrete_regularizer",
            inputs: vec![lp(), w],
            build: Box::new(move |g, v| concrete_regularizer_node(g, v[0], v[1], &params)),
        },
    ]
}
