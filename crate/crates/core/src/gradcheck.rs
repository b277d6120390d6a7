//! Central finite-difference checks of every hand-written backward pass.
//!
//! The numerical side only ever calls forward functions, so it stays
//! independent of the analytic gradients it is compared with. Relative
//! error is `|a - n| / max(|a|, |n|, REL_FLOOR)`; the floor keeps entries
//! whose true gradient is (near) zero from dividing round-off by round-off.

use crate::cldc::Cldc;
use crate::error::Result;
use crate::model::{Model, ModelSpec};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax_cross_entropy,
    BatchNorm, Conv2d, Linear, MaxPool, Mode,
};
use crate::tensor::{Rng, Tensor4};

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Smallest denominator used by [`rel_error`].
pub const REL_FLOOR: f64 = 1e-3;
/// Per-op tolerance.
pub const OPS_TOLERANCE: f64 = 1e-6;
/// End-to-end model tolerance.
pub const MODEL_TOLERANCE: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// `Σ y·r`: a scalar probe whose gradient with respect to `y` is `r`.
pub fn weighted_sum(y: &Tensor4, r: &Tensor4) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Numerical gradient of `loss` with respect to every element exposed by
/// `access`, perturbing one element at a time and restoring it afterwards.
pub fn central_difference<S, A, L>(state: &mut S, access: A, mut loss: L) -> Vec<f64>
where
    A: Fn(&mut S) -> &mut [f64],
    L: FnMut(&S) -> f64,
{
    let len = access(state).len();
    let mut grad = Vec::with_capacity(len);
    for i in 0..len {
        let orig = access(state)[i];
        access(state)[i] = orig + FD_STEP;
        let up = loss(state);
        access(state)[i] = orig - FD_STEP;
        let down = loss(state);
        access(state)[i] = orig;
        grad.push((up - down) / (2.0 * FD_STEP));
    }
    grad
}

/// Worst relative error observed for one gradient target.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub target: String,
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(target: impl Into<String>, analytic: &[f64], numeric: &[f64], tolerance: f64) -> Self {
        Self {
            target: target.into(),
            worst: max_rel_error(analytic, numeric),
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

/// Finite-difference checks for every layer op on small random shapes.
pub fn check_ops(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::new(seed);
    let tol = OPS_TOLERANCE;
    let mut out = Vec::new();

    // conv2d: 3x3/1/1 and 3x3/2/1 and 1x1
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
        let x = Tensor4::randn((2, 2, 5, 5), 0.0, 1.0, &mut rng)?;
        let conv = Conv2d::he(2, 3, k, stride, pad, &mut rng)?;
        let r = Tensor4::randn(conv.output_shape(x.shape())?, 0.0, 1.0, &mut rng)?;
        let mut analytic = conv.clone();
        let dx = analytic.backward(&x, &r)?;
        let num_dx = central_difference(
            &mut x.clone(),
            |t| t.data_mut(),
            |t| weighted_sum(&conv.forward(t).expect("conv forward"), &r),
        );
        let num_dw = central_difference(
            &mut conv.clone(),
            |c| c.weight.value.data_mut(),
            |c| weighted_sum(&c.forward(&x).expect("conv forward"), &r),
        );
        let name = format!("conv{k}x{k}/s{stride}");
        out.push(CheckResult::new(
            format!("{name}.input"),
            dx.data(),
            &num_dx,
            tol,
        ));
        out.push(CheckResult::new(
            format!("{name}.weight"),
            analytic.weight.grad.data(),
            &num_dw,
            tol,
        ));
    }

    // batch norm, train mode
    {
        let x = Tensor4::randn((3, 2, 3, 3), 0.5, 2.0, &mut rng)?;
        let mut bn = BatchNorm::new(2)?;
        bn.gamma.value = Tensor4::randn((1, 2, 1, 1), 1.0, 0.5, &mut rng)?;
        bn.beta.value = Tensor4::randn((1, 2, 1, 1), 0.0, 0.5, &mut rng)?;
        let r = Tensor4::randn(x.shape(), 0.0, 1.0, &mut rng)?;
        let mut analytic = bn.clone();
        analytic.forward(&x, Mode::Train)?;
        let dx = analytic.backward(&r)?;
        let train_out =
            |bn: &BatchNorm, x: &Tensor4| bn.clone().forward(x, Mode::Train).expect("bn forward");
        let num_dx = central_difference(
            &mut x.clone(),
            |t| t.data_mut(),
            |t| weighted_sum(&train_out(&bn, t), &r),
        );
        let num_dg = central_difference(
            &mut bn.clone(),
            |b| b.gamma.value.data_mut(),
            |b| weighted_sum(&train_out(b, &x), &r),
        );
        let num_db = central_difference(
            &mut bn.clone(),
            |b| b.beta.value.data_mut(),
            |b| weighted_sum(&train_out(b, &x), &r),
        );
        out.push(CheckResult::new("batchnorm.input", dx.data(), &num_dx, tol));
        out.push(CheckResult::new(
            "batchnorm.gamma",
            analytic.gamma.grad.data(),
            &num_dg,
            tol,
        ));
        out.push(CheckResult::new(
            "batchnorm.beta",
            analytic.beta.grad.data(),
            &num_db,
            tol,
        ));
    }

    // relu
    {
        let x = Tensor4::randn((2, 3, 3, 3), 0.0, 1.0, &mut rng)?;
        let r = Tensor4::randn(x.shape(), 0.0, 1.0, &mut rng)?;
        let dx = relu_backward(&x, &r)?;
        let num = central_difference(
            &mut x.clone(),
            |t| t.data_mut(),
            |t| weighted_sum(&relu(t), &r),
        );
        out.push(CheckResult::new("relu.input", dx.data(), &num, tol));
    }

    // max pool 3x3/2/1
    {
        let x = Tensor4::randn((2, 2, 6, 6), 0.0, 1.0, &mut rng)?;
        let pool = MaxPool::new(3, 2, 1)?;
        let (y, idx) = pool.forward(&x)?;
        let r = Tensor4::randn(y.shape(), 0.0, 1.0, &mut rng)?;
        let dx = pool.backward(&idx, &r)?;
        let num = central_difference(
            &mut x.clone(),
            |t| t.data_mut(),
            |t| weighted_sum(&pool.forward(t).expect("pool forward").0, &r),
        );
        out.push(CheckResult::new("maxpool.input", dx.data(), &num, tol));
    }

    // global average pool
    {
        let x = Tensor4::randn((2, 3, 4, 4), 0.0, 1.0, &mut rng)?;
        let r = Tensor4::randn((2, 3, 1, 1), 0.0, 1.0, &mut rng)?;
        let dx = global_avg_pool_backward(x.shape(), &r)?;
        let num = central_difference(
            &mut x.clone(),
            |t| t.data_mut(),
            |t| weighted_sum(&global_avg_pool(t), &r),
        );
        out.push(CheckResult::new(
            "global_avg_pool.input",
            dx.data(),
            &num,
            tol,
        ));
    }

    // linear
    {
        let x = Tensor4::randn((3, 5, 1, 1), 0.0, 1.0, &mut rng)?;
        let mut lin = Linear::he(5, 4, &mut rng)?;
        lin.bias.value = Tensor4::randn((1, 4, 1, 1), 0.0, 1.0, &mut rng)?;
        let r = Tensor4::randn((3, 4, 1, 1), 0.0, 1.0, &mut rng)?;
        let mut analytic = lin.clone();
        let dx = analytic.backward(&x, &r)?;
        let num_dx = central_difference(
            &mut x.clone(),
            |t| t.data_mut(),
            |t| weighted_sum(&lin.forward(t).expect("linear forward"), &r),
        );
        let num_dw = central_difference(
            &mut lin.clone(),
            |l| l.weight.value.data_mut(),
            |l| weighted_sum(&l.forward(&x).expect("linear forward"), &r),
        );
        let num_db = central_difference(
            &mut lin.clone(),
            |l| l.bias.value.data_mut(),
            |l| weighted_sum(&l.forward(&x).expect("linear forward"), &r),
        );
        out.push(CheckResult::new("linear.input", dx.data(), &num_dx, tol));
        out.push(CheckResult::new(
            "linear.weight",
            analytic.weight.grad.data(),
            &num_dw,
            tol,
        ));
        out.push(CheckResult::new(
            "linear.bias",
            analytic.bias.grad.data(),
            &num_db,
            tol,
        ));
    }

    // softmax cross-entropy
    {
        let logits = Tensor4::randn((4, 6, 1, 1), 0.0, 2.0, &mut rng)?;
        let labels: Vec<usize> = (0..4).map(|_| rng.below(6)).collect();
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        let num = central_difference(
            &mut logits.clone(),
            |t| t.data_mut(),
            |t| softmax_cross_entropy(t, &labels).expect("loss").0,
        );
        out.push(CheckResult::new(
            "softmax_cross_entropy.logits",
            dlogits.data(),
            &num,
            tol,
        ));
    }

    // cross-layer depthwise convolution
    {
        let sources: Vec<Tensor4> = (0..3)
            .map(|_| Tensor4::randn((2, 4, 3, 3), 0.0, 1.0, &mut rng))
            .collect::<Result<_>>()?;
        let mut cldc = Cldc::new(3, 4)?;
        cldc.weight.value = Tensor4::randn((3, 4, 1, 1), 0.0, 1.0, &mut rng)?;
        cldc.bias.value = Tensor4::randn((1, 4, 1, 1), 0.0, 1.0, &mut rng)?;
        let r = Tensor4::randn(sources[0].shape(), 0.0, 1.0, &mut rng)?;
        let mut analytic = cldc.clone();
        let refs: Vec<&Tensor4> = sources.iter().collect();
        let dsrc = analytic.backward(&refs, &r)?;
        for (i, d) in dsrc.iter().enumerate() {
            let mut probe = sources.clone();
            let num = central_difference(
                &mut probe,
                |s| s[i].data_mut(),
                |s| {
                    let refs: Vec<&Tensor4> = s.iter().collect();
                    weighted_sum(&cldc.forward(&refs).expect("cldc forward"), &r)
                },
            );
            out.push(CheckResult::new(
                format!("cldc.source{i}"),
                d.data(),
                &num,
                tol,
            ));
        }
        let num_dw = central_difference(
            &mut cldc.clone(),
            |c| c.weight.value.data_mut(),
            |c| weighted_sum(&c.forward(&refs).expect("cldc forward"), &r),
        );
        let num_db = central_difference(
            &mut cldc.clone(),
            |c| c.bias.value.data_mut(),
            |c| weighted_sum(&c.forward(&refs).expect("cldc forward"), &r),
        );
        out.push(CheckResult::new(
            "cldc.weight",
            analytic.weight.grad.data(),
            &num_dw,
            tol,
        ));
        out.push(CheckResult::new(
            "cldc.bias",
            analytic.bias.grad.data(),
            &num_db,
            tol,
        ));
    }

    Ok(out)
}

/// Spec of the end-to-end check model: one block of two composite layers,
/// base width 4, two classes, 4×4 inputs.
pub fn gradcheck_model_spec() -> ModelSpec {
    ModelSpec::custom("gradcheck", vec![4], vec![2], 2)
}

/// End-to-end check: every parameter gradient of the full loss against
/// central differences of the same loss.
pub fn check_model(seed: u64) -> Result<Vec<CheckResult>> {
    check_model_spec(&gradcheck_model_spec(), (4, 3, 4, 4), seed)
}

pub fn check_model_spec(
    spec: &ModelSpec,
    input: (usize, usize, usize, usize),
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::new(seed);
    let mut model = Model::build(spec, &mut rng)?;
    model.perturb_cldc(0.3, &mut rng)?;
    let x = Tensor4::randn(input, 0.0, 1.0, &mut rng)?;
    let labels: Vec<usize> = (0..input.0).map(|_| rng.below(spec.num_classes)).collect();

    let loss_of = |m: &Model| -> f64 {
        let mut m = m.clone();
        let logits = m.forward(&x, Mode::Train).expect("model forward");
        softmax_cross_entropy(&logits, &labels).expect("loss").0
    };

    let mut analytic = model.clone();
    analytic.zero_grad();
    let logits = analytic.forward(&x, Mode::Train)?;
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
    analytic.backward(&dlogits)?;
    let grads: Vec<(String, Vec<f64>)> = analytic
        .params()
        .into_iter()
        .map(|(name, p)| (name, p.grad.data().to_vec()))
        .collect();

    let mut out = Vec::with_capacity(grads.len());
    for (idx, (name, grad)) in grads.iter().enumerate() {
        let num = central_difference(
            &mut model,
            |m| m.param_mut(idx).expect("index in range").value.data_mut(),
            |m| loss_of(m),
        );
        out.push(CheckResult::new(name.clone(), grad, &num, MODEL_TOLERANCE));
    }
    Ok(out)
}
