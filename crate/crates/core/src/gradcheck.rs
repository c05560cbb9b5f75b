//! Central finite-difference verification of analytic gradients (`f64`).
//!
//! For every checked coordinate the relative error is
//! `|analytic - numeric| / (|analytic| + floor)` with
//! `numeric = (f(x + h) - f(x - h)) / 2h`. A coordinate whose perturbation
//! flips a discrete decision of the forward pass (ReLU activity, pooling
//! winner, cosine denominator floor) sits on a kink where the central
//! difference is not a derivative; it is skipped, counted, and another
//! coordinate is drawn in its place when sampling.
//!
//! Optionally, coordinates whose derivative is smaller than the central
//! difference can resolve (its rounding noise `eps * |f| / h`, divided by
//! the tolerance) are reported as unresolved instead of scored; batch
//! normalisation in training mode makes the gradient of the bias feeding
//! it exactly zero, and such a coordinate measures only noise.

use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CheckConfig {
    pub step: f64,
    pub floor: f64,
    /// Check at most this many coordinates per input; `None` checks all.
    pub samples_per_input: Option<usize>,
    pub seed: u64,
    /// Skip coordinates below the finite-difference resolution.
    pub skip_unresolved: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            step: 1e-5,
            floor: 1e-8,
            samples_per_input: None,
            seed: 0,
            skip_unresolved: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub unresolved: usize,
    pub max_rel_err: f64,
    /// `(flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub label: String,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl CheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    /// Within tolerance, and every group had at least one coordinate that
    /// was not a kink.
    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
            && self.groups.iter().all(|g| g.checked + g.unresolved > 0)
            && self.groups.iter().any(|g| g.checked > 0)
    }
}

struct Evaluation {
    loss: f64,
    fingerprint: u64,
}

fn evaluate<F>(inputs: &[(String, Tensor<f64>)], f: &F) -> Result<Evaluation>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(Evaluation {
        loss: tape.value(loss).item()?,
        fingerprint: tape.decision_fingerprint(),
    })
}

/// Compare the tape's gradients of `f` with respect to every named input
/// against central differences. `f` must build a scalar loss from the
/// supplied input vars.
pub fn check<F>(
    label: &str,
    inputs: &[(String, Tensor<f64>)],
    f: F,
    cfg: &CheckConfig,
    tolerance: f64,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base_fp = tape.decision_fingerprint();
    let base_loss = tape.value(loss).item()?;
    let resolution = f64::EPSILON * base_loss.abs().max(1.0) / cfg.step / tolerance;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, (_, t))| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(grads);
    drop(tape);

    let mut rng = Rng::new(cfg.seed);
    let mut work: Vec<(String, Tensor<f64>)> = inputs.to_vec();
    let mut groups = Vec::with_capacity(inputs.len());
    for g in 0..inputs.len() {
        let len = inputs[g].1.len();
        let order: Vec<usize> = match cfg.samples_per_input {
            Some(_) => rng.permutation(len),
            None => (0..len).collect(),
        };
        let wanted = cfg.samples_per_input.unwrap_or(len).min(len);
        let mut report = GroupReport {
            name: inputs[g].0.clone(),
            checked: 0,
            skipped_kinks: 0,
            unresolved: 0,
            max_rel_err: 0.0,
            worst: None,
        };
        // bounded so a tensor of mostly unresolvable coordinates ends
        let attempts = wanted.saturating_mul(20);
        for &idx in order.iter().take(attempts) {
            if report.checked >= wanted {
                break;
            }
            let original = inputs[g].1.data()[idx];
            work[g].1.data_mut()[idx] = original + cfg.step;
            let plus = evaluate(&work, &f)?;
            work[g].1.data_mut()[idx] = original - cfg.step;
            let minus = evaluate(&work, &f)?;
            work[g].1.data_mut()[idx] = original;
            if plus.fingerprint != base_fp || minus.fingerprint != base_fp {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.step);
            let a = analytic[g].data()[idx];
            if cfg.skip_unresolved && a != numeric && a.abs().max(numeric.abs()) < resolution {
                report.unresolved += 1;
                continue;
            }
            let rel = (a - numeric).abs() / (a.abs() + cfg.floor);
            report.checked += 1;
            if rel >= report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((idx, a, numeric));
            }
        }
        groups.push(report);
    }
    Ok(CheckReport {
        label: label.to_string(),
        tolerance,
        groups,
    })
}

/// Random weights `r` for the probe loss `sum(r * y)`, which gives every
/// output element a distinct, non-degenerate upstream gradient.
pub fn probe_weights(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = crate::tensor::numel(shape);
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
        .expect("shape and data agree")
}

/// `sum(r * y)` on the tape.
pub fn probe_loss(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    if tape.shape(y) != weights.shape() {
        return Err(Error::Shape(format!(
            "probe weights {:?} do not match output {:?}",
            weights.shape(),
            tape.shape(y)
        )));
    }
    let r = tape.constant(weights.clone());
    let p = tape.mul(y, r)?;
    tape.sum_all(p)
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = crate::tensor::numel(shape);
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("shape and data agree")
}

fn positive(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = crate::tensor::numel(shape);
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(0.5, 2.0)).collect())
        .expect("shape and data agree")
}

fn named(items: Vec<(&str, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

/// Check one operator through the probe loss `sum(r * op(inputs))`.
fn check_op<F>(
    label: &str,
    inputs: Vec<(&str, Tensor<f64>)>,
    op: F,
    rng: &mut Rng,
    tolerance: f64,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let inputs = named(inputs);
    // output shape from one forward pass
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
        let y = op(&mut tape, &vars)?;
        tape.shape(y).to_vec()
    };
    let weights = probe_weights(&shape, rng);
    let cfg = CheckConfig {
        seed: rng.next_u64(),
        ..CheckConfig::default()
    };
    check(
        label,
        &inputs,
        |tape, vars| {
            let y = op(tape, vars)?;
            probe_loss(tape, y, &weights)
        },
        &cfg,
        tolerance,
    )
}

/// Per-operator tolerance used by [`operator_suite`].
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tighter bound for the standard convolution.
pub const CONV_TOLERANCE: f64 = 1e-6;
/// Tighter bound for the cosine-normalized convolution.
pub const COSINE_TOLERANCE: f64 = 1e-5;

/// Finite-difference checks of every primitive and neural operator on small
/// random inputs drawn from `seed`.
pub fn operator_suite(seed: u64) -> Result<Vec<CheckReport>> {
    use crate::autodiff::{BinaryOp, Reduction};
    use crate::nn;

    let mut rng = Rng::new(seed);
    let rng = &mut rng;
    let mut out = Vec::new();

    for (label, op) in [
        ("add", BinaryOp::Add),
        ("sub", BinaryOp::Sub),
        ("mul", BinaryOp::Mul),
        ("div", BinaryOp::Div),
    ] {
        let a = randn(&[3, 4], rng);
        let b = positive(&[3, 4], rng);
        out.push(check_op(label, vec![("a", a), ("b", b)], move |t, v| t.binary(op, v[0], v[1]), rng, OP_TOLERANCE)?);
        let a = randn(&[2, 3, 4], rng);
        let b = positive(&[3, 1], rng);
        let name: &str = match op {
            BinaryOp::Add => "add(broadcast)",
            BinaryOp::Sub => "sub(broadcast)",
            BinaryOp::Mul => "mul(broadcast)",
            BinaryOp::Div => "div(broadcast)",
        };
        out.push(check_op(name, vec![("a", a), ("b", b)], move |t, v| t.binary(op, v[0], v[1]), rng, OP_TOLERANCE)?);
    }
    out.push(check_op("neg", vec![("x", randn(&[5], rng))], |t, v| t.neg(v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("exp", vec![("x", randn(&[5], rng))], |t, v| t.exp(v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("ln", vec![("x", positive(&[5], rng))], |t, v| t.ln(v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("sqrt", vec![("x", positive(&[5], rng))], |t, v| t.sqrt(v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("max_scalar", vec![("x", randn(&[8], rng))], |t, v| t.max_scalar(v[0], 0.1), rng, OP_TOLERANCE)?);
    out.push(check_op(
        "matmul",
        vec![("a", randn(&[4, 5], rng)), ("b", randn(&[5, 3], rng))],
        |t, v| t.matmul(v[0], v[1]),
        rng,
        OP_TOLERANCE,
    )?);
    for (label, kind) in [
        ("reduce_sum", Reduction::Sum),
        ("reduce_mean", Reduction::Mean),
        ("reduce_max", Reduction::Max),
        ("reduce_variance", Reduction::Variance),
    ] {
        out.push(check_op(label, vec![("x", randn(&[2, 4, 3], rng))], move |t, v| t.reduce(v[0], kind, 1), rng, OP_TOLERANCE)?);
    }
    out.push(check_op(
        "concat",
        vec![("a", randn(&[2, 1, 3], rng)), ("b", randn(&[2, 2, 3], rng))],
        |t, v| t.concat(&[v[0], v[1]], 1),
        rng,
        OP_TOLERANCE,
    )?);
    out.push(check_op(
        "conv2d",
        vec![("x", randn(&[2, 2, 5, 5], rng)), ("weight", randn(&[3, 2, 3, 3], rng)), ("bias", randn(&[3], rng))],
        |t, v| nn::conv2d(t, v[0], v[1], Some(v[2])),
        rng,
        CONV_TOLERANCE,
    )?);
    out.push(check_op(
        "conv2d(1x1)",
        vec![("x", randn(&[2, 3, 4, 4], rng)), ("weight", randn(&[2, 3, 1, 1], rng)), ("bias", randn(&[2], rng))],
        |t, v| nn::conv2d(t, v[0], v[1], Some(v[2])),
        rng,
        CONV_TOLERANCE,
    )?);
    out.push(check_op(
        "cosine_norm_conv",
        vec![("x", randn(&[2, 2, 5, 5], rng)), ("weight", randn(&[3, 2, 3, 3], rng))],
        |t, v| nn::cosine_conv2d(t, v[0], v[1]),
        rng,
        COSINE_TOLERANCE,
    )?);
    out.push(check_op(
        "depthwise_separable_conv",
        vec![
            ("x", randn(&[2, 3, 4, 4], rng)),
            ("depthwise", randn(&[3, 1, 3, 3], rng)),
            ("pointwise", randn(&[4, 3, 1, 1], rng)),
            ("bias", randn(&[4], rng)),
        ],
        |t, v| nn::depthwise_separable_conv2d(t, v[0], v[1], v[2], v[3]),
        rng,
        OP_TOLERANCE,
    )?);
    for (label, mode) in [("batch_norm(train)", nn::Mode::Train), ("batch_norm(eval)", nn::Mode::Eval)] {
        let running_mean = randn(&[3], rng);
        let running_var = positive(&[3], rng);
        out.push(check_op(
            label,
            vec![("x", randn(&[3, 3, 2, 2], rng)), ("gamma", positive(&[3], rng)), ("beta", randn(&[3], rng))],
            move |t, v| Ok(nn::batch_norm(t, v[0], v[1], v[2], &running_mean, &running_var, mode)?.0),
            rng,
            OP_TOLERANCE,
        )?);
    }
    out.push(check_op("relu", vec![("x", randn(&[2, 6], rng))], |t, v| nn::relu(t, v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("sigmoid", vec![("x", randn(&[2, 6], rng))], |t, v| nn::sigmoid(t, v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("softmax", vec![("x", randn(&[3, 4], rng))], |t, v| nn::softmax(t, v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("maxpool2x2", vec![("x", randn(&[2, 2, 4, 4], rng))], |t, v| nn::maxpool2x2(t, v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("global_avg_pool", vec![("x", randn(&[2, 3, 4, 2], rng))], |t, v| nn::global_avg_pool(t, v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op("upsample2x", vec![("x", randn(&[1, 2, 2, 3], rng))], |t, v| nn::upsample2x(t, v[0]), rng, OP_TOLERANCE)?);
    out.push(check_op(
        "dense",
        vec![("x", randn(&[3, 5], rng)), ("weight", randn(&[5, 4], rng)), ("bias", randn(&[4], rng))],
        |t, v| nn::dense(t, v[0], v[1], v[2]),
        rng,
        OP_TOLERANCE,
    )?);
    out.push(check_op(
        "statistical_feature_maps",
        vec![("x", randn(&[2, 4, 3, 3], rng))],
        |t, v| {
            let s = crate::model::compute_sfm(t, v[0])?;
            t.concat(&[s.max_map, s.var_map], 1)
        },
        rng,
        OP_TOLERANCE,
    )?);
    out.push(attention_check(rng)?);
    // the loss itself: check it directly rather than through a probe
    let logits = randn(&[4, 2], rng);
    let mut labels = vec![0.0; 8];
    for r in 0..4 {
        labels[r * 2 + rng.below(2)] = 1.0;
    }
    let labels = Tensor::new(&[4, 2], labels)?;
    out.push(check(
        "softmax_cross_entropy",
        &named(vec![("logits", logits)]),
        |t, v| nn::softmax_cross_entropy(t, v[0], &labels),
        &CheckConfig::default(),
        1e-5,
    )?);
    Ok(out)
}

/// The residual attention layer alone, through a probe of its output, with
/// respect to its input and all of its parameters (training-mode batch
/// norm).
fn attention_check(rng: &mut Rng) -> Result<CheckReport> {
    use crate::model::{HybridModel, HybridModelConfig};

    let config = HybridModelConfig {
        input_size: 16,
        channel_widths: [2, 2, 2, 2],
        attention_width: 3,
        use_dsc_branch: false,
        use_mfe_branch: false,
        seed: rng.next_u64(),
        ..HybridModelConfig::default()
    };
    let model = HybridModel::<f64>::new(config)?;
    let mut inputs = vec![("x".to_string(), Tensor::new(&[2, 3, 16, 16], (0..1536).map(|_| rng.uniform()).collect())?)];
    inputs.extend(
        model
            .store()
            .params()
            .filter(|(n, _)| n.starts_with("attention."))
            .map(|(n, t)| (n.to_string(), t.clone())),
    );
    let names: Vec<String> = inputs[1..].iter().map(|(n, _)| n.clone()).collect();
    let weights = probe_weights(&[2, 3, 16, 16], rng);
    let cfg = CheckConfig { seed: rng.next_u64(), skip_unresolved: true, ..CheckConfig::default() };
    check(
        "attention_block",
        &inputs,
        |tape, vars| {
            let bound = names.iter().cloned().zip(vars[1..].iter().copied()).collect();
            let out = model.forward_bound(tape, vars[0], crate::nn::Mode::Train, bound)?;
            let a = out.taps.attention.expect("attention enabled");
            probe_loss(tape, a.output, &weights)
        },
        &cfg,
        OP_TOLERANCE,
    )
}

/// Bound for the assembled model.
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Whole-network check of the cross-entropy loss with respect to the input
/// images and every trainable tensor, on a random batch of `batch` images
/// with random labels. `samples_per_tensor` limits how many coordinates of
/// each tensor are perturbed. In eval mode the running statistics are
/// randomised first so normalisation is not the identity.
pub fn model_check(
    config: &crate::model::HybridModelConfig,
    mode: crate::nn::Mode,
    batch: usize,
    samples_per_tensor: Option<usize>,
    seed: u64,
) -> Result<CheckReport> {
    use crate::model::HybridModel;
    use crate::nn;

    let mut rng = Rng::new(seed);
    let mut model = HybridModel::<f64>::new(config.clone())?;
    let s = config.input_size;
    let images = Tensor::new(
        &[batch, 3, s, s],
        (0..batch * 3 * s * s).map(|_| rng.uniform()).collect(),
    )?;
    if mode == nn::Mode::Eval {
        // running statistics near this batch's own keep activations O(1)
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let stats = model.forward(&mut tape, x, nn::Mode::Train)?.bn_stats;
        for (prefix, st) in stats {
            let jitter = |v: &[f64], rng: &mut Rng| -> Vec<f64> {
                v.iter().map(|&m| m * (1.0 + 0.1 * rng.uniform_range(-1.0, 1.0))).collect()
            };
            let (c, mean, var) = (st.mean.len(), jitter(&st.mean, &mut rng), jitter(&st.var, &mut rng));
            model.store_mut().insert_buffer(format!("{prefix}.running_mean"), Tensor::new(&[c], mean)?);
            model.store_mut().insert_buffer(format!("{prefix}.running_var"), Tensor::new(&[c], var)?);
        }
    }
    let mut labels = vec![0.0; batch * 2];
    for r in 0..batch {
        labels[r * 2 + r % 2] = 1.0;
    }
    let labels = Tensor::new(&[batch, 2], labels)?;

    let mut inputs = vec![("input".to_string(), images)];
    inputs.extend(model.store().params().map(|(n, t)| (n.to_string(), t.clone())));
    let names: Vec<String> = inputs[1..].iter().map(|(n, _)| n.clone()).collect();
    let cfg = CheckConfig {
        samples_per_input: samples_per_tensor,
        seed: rng.next_u64(),
        skip_unresolved: true,
        ..CheckConfig::default()
    };
    let label = format!("hybrid_model({})", if mode == nn::Mode::Train { "train" } else { "eval" });
    check(
        &label,
        &inputs,
        |tape, vars| {
            let bound = names.iter().cloned().zip(vars[1..].iter().copied()).collect();
            let out = model.forward_bound(tape, vars[0], mode, bound)?;
            nn::softmax_cross_entropy(tape, out.logits, &labels)
        },
        &cfg,
        MODEL_TOLERANCE,
    )
}
