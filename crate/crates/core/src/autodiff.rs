//! Forward evaluation, activation tape, and reverse-mode gradients.
//!
//! The tape stores exactly one activation tensor per layer at or above the
//! backward-start index: the input flowing into that layer. Everything a
//! layer needs beyond its input (normalization statistics, attention
//! matrices, residual inner activations) is recomputed during the backward
//! pass, so activation memory is `layer_count - backward_start` tensors.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamSet};
use crate::partition::FreezeMask;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// A batch of stacked inputs and targets.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Tensor,
}

/// Saved activations from one forward pass.
#[derive(Debug)]
pub struct Tape {
    backward_start: usize,
    /// `activations[i]` is the input to layer `i`, present iff
    /// `i >= backward_start`.
    activations: Vec<Option<Tensor>>,
    targets: Tensor,
    forward_flops: u64,
}

impl Tape {
    pub fn backward_start(&self) -> usize {
        self.backward_start
    }

    pub fn activation(&self, layer: usize) -> Option<&Tensor> {
        self.activations.get(layer).and_then(|a| a.as_ref())
    }

    /// Number of stored activation tensors.
    pub fn stored_count(&self) -> usize {
        self.activations.iter().filter(|a| a.is_some()).count()
    }

    /// Floats held by stored activations.
    pub fn float_units(&self) -> u64 {
        self.activations
            .iter()
            .flatten()
            .map(|t| t.numel() as u64)
            .sum()
    }

    pub fn forward_flops(&self) -> u64 {
        self.forward_flops
    }
}

/// Runs the model forward, returning the mean loss and the tape of
/// activations needed to run backward from `backward_start`.
pub fn forward(
    model: &ModelSpec,
    params: &ParamSet,
    batch: &Batch,
    backward_start: usize,
) -> Result<(f64, Tape)> {
    forward_from(model, params, batch.inputs.clone(), &batch.targets, 0, backward_start)
}

/// Runs only the layers `[0, prefix_end)` and returns the activation that
/// flows into layer `prefix_end`, plus the float-ops spent.
pub fn forward_prefix(
    model: &ModelSpec,
    params: &ParamSet,
    inputs: &Tensor,
    prefix_end: usize,
) -> Result<(Tensor, u64)> {
    if prefix_end > model.layer_count() {
        return Err(Error::InvalidConfig(format!(
            "prefix end {prefix_end} exceeds layer count {}",
            model.layer_count()
        )));
    }
    let mut x = inputs.clone();
    let mut flops = 0;
    for i in 0..prefix_end {
        let layer = &model.layers[i];
        flops += layer.forward_flops(x.shape());
        x = layer.apply(params.layer(i), &x)?;
    }
    Ok((x, flops))
}

/// Runs the model forward starting at `start_layer`, given the activation
/// that flows into it. `backward_start` must be at least `start_layer`;
/// layers before `start_layer` contribute neither compute nor tape entries.
pub fn forward_from(
    model: &ModelSpec,
    params: &ParamSet,
    activation: Tensor,
    targets: &Tensor,
    start_layer: usize,
    backward_start: usize,
) -> Result<(f64, Tape)> {
    let layer_count = model.layer_count();
    if backward_start > layer_count {
        return Err(Error::InvalidConfig(format!(
            "backward start {backward_start} exceeds layer count {layer_count}"
        )));
    }
    if backward_start < start_layer {
        return Err(Error::TapeMismatch(format!(
            "backward start {backward_start} precedes resume layer {start_layer}"
        )));
    }
    let mut activations: Vec<Option<Tensor>> = vec![None; layer_count];
    let mut x = activation;
    let mut flops = 0;
    for i in start_layer..layer_count - 1 {
        let layer = &model.layers[i];
        flops += layer.forward_flops(x.shape());
        let y = layer.apply(params.layer(i), &x)?;
        if i >= backward_start {
            activations[i] = Some(x);
        }
        x = y;
    }
    let head = &model.layers[layer_count - 1];
    flops += head.forward_flops(x.shape());
    let loss = head.loss(&x, targets)?;
    if layer_count > backward_start {
        activations[layer_count - 1] = Some(x);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((
        loss,
        Tape {
            backward_start,
            activations,
            targets: targets.clone(),
            forward_flops: flops,
        },
    ))
}

/// Gradients for the trainable layers only, keyed by layer index.
#[derive(Clone, Debug, Default)]
pub struct GradSet {
    pub by_layer: BTreeMap<usize, Vec<Tensor>>,
}

impl GradSet {
    pub fn float_units(&self) -> u64 {
        self.by_layer
            .values()
            .flatten()
            .map(|t| t.numel() as u64)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_layer.is_empty()
    }
}

/// Reverse pass over the tape. Produces gradient buffers exactly for the
/// trainable layers; input gradients are propagated only down to the
/// mask's backward-start layer and never further.
pub fn backward(
    model: &ModelSpec,
    params: &ParamSet,
    tape: &Tape,
    mask: &FreezeMask,
) -> Result<GradSet> {
    let layer_count = model.layer_count();
    if mask.layer_count() != layer_count {
        return Err(Error::TapeMismatch("mask and model layer counts differ".into()));
    }
    if tape.backward_start() > mask.backward_start() {
        return Err(Error::TapeMismatch(format!(
            "tape records activations from layer {} but the mask trains from layer {}",
            tape.backward_start(),
            mask.backward_start()
        )));
    }
    let mut grads = GradSet::default();
    let head = &model.layers[layer_count - 1];
    let logits = tape
        .activation(layer_count - 1)
        .ok_or_else(|| Error::TapeMismatch("missing head activation".into()))?;
    let mut dy = head.loss_grad(logits, &tape.targets)?;
    if layer_count - 1 < mask.backward_start() {
        // Only the head sits at/above backward_start; nothing to do.
        return Ok(grads);
    }
    for i in (mask.backward_start()..layer_count - 1).rev() {
        let layer = &model.layers[i];
        let x = tape
            .activation(i)
            .ok_or_else(|| Error::TapeMismatch(format!("missing activation for layer {i}")))?;
        let want_dparams = mask.trainable(i) && layer.is_parameterized();
        let want_dx = i > mask.backward_start();
        let (dparams, dx) = layer.apply_backward(params.layer(i), x, &dy, want_dx, want_dparams)?;
        if let Some(dparams) = dparams {
            if !dparams.is_empty() {
                grads.by_layer.insert(i, dparams);
            }
        }
        match dx {
            Some(dx) => dy = dx,
            None => break,
        }
    }
    Ok(grads)
}

/// Maximum relative error between analytic gradients and central finite
/// differences over all parameters, using step size `eps`.
///
/// This is the independent correctness oracle for the backward pass: the
/// numeric side touches only `forward`. The relative-error denominator is
/// floored at 1e-6: below that magnitude the loss difference is dominated
/// by f64 rounding noise (~1e-16 / eps), so a ratio against the raw
/// magnitude measures the noise, not the gradient.
pub fn grad_check(model: &ModelSpec, batch: &Batch, eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::InvalidConfig("grad_check eps must be positive".into()));
    }
    let params = model.init_params();
    let mask = FreezeMask::full(model.layer_count());
    let (_, tape) = forward(model, &params, batch, 0)?;
    let grads = backward(model, &params, &tape, &mask)?;
    let mut max_rel = 0.0f64;
    let mut probe = params.clone();
    for (&layer, layer_grads) in &grads.by_layer {
        for (pi, grad) in layer_grads.iter().enumerate() {
            for e in 0..grad.numel() {
                let original = probe.layer(layer)[pi].data()[e];
                probe.layer_mut(layer)[pi].data_mut()[e] = original + eps;
                let (loss_hi, _) = forward(model, &probe, batch, model.layer_count())?;
                probe.layer_mut(layer)[pi].data_mut()[e] = original - eps;
                let (loss_lo, _) = forward(model, &probe, batch, model.layer_count())?;
                probe.layer_mut(layer)[pi].data_mut()[e] = original;
                let numeric = (loss_hi - loss_lo) / (2.0 * eps);
                let analytic = grad.data()[e];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max((analytic - numeric).abs() / denom);
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize, out: usize) -> Batch {
        let inputs = Tensor::new(
            vec![rows, dim],
            (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let targets = Tensor::new(
            vec![rows, out],
            (0..rows * out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        Batch { inputs, targets }
    }

    #[test]
    fn identity_linear_squared_error_is_zero() {
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 3, output: 3, bias: true },
                LayerSpec::SquaredError,
            ],
            0,
        )
        .unwrap();
        let mut params = model.init_params();
        // weights = I, bias = 0
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        params.layer_mut(0)[0] = eye;
        params.layer_mut(0)[1] = Tensor::zeros(vec![3]);
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
        let batch = Batch { inputs: x.clone(), targets: x };
        let (loss, _) = forward(&model, &params, &batch, 0).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn zero_logits_cross_entropy_is_ln_c() {
        let classes = 7;
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 4, output: classes, bias: false },
                LayerSpec::SoftmaxCrossEntropy,
            ],
            0,
        )
        .unwrap();
        let mut params = model.init_params();
        params.layer_mut(0)[0] = Tensor::zeros(vec![classes, 4]);
        let batch = Batch {
            inputs: Tensor::filled(vec![3, 4], 1.0),
            targets: Tensor::new(vec![3], vec![0.0, 3.0, 6.0]).unwrap(),
        };
        let (loss, _) = forward(&model, &params, &batch, 0).unwrap();
        assert!((loss - (classes as f64).ln()).abs() < 1e-12);
    }

    /// Independent straight-line recomputation of a fixed 2-layer MLP:
    /// explicit loops, no layer dispatch, written directly against the
    /// parameter buffers.
    fn straight_line_mlp_loss(params: &ParamSet, batch: &Batch, hidden: usize) -> f64 {
        let w0 = &params.layer(0)[0];
        let b0 = &params.layer(0)[1];
        let w1 = &params.layer(2)[0];
        let b1 = &params.layer(2)[1];
        let rows = batch.inputs.rows();
        let din = batch.inputs.last_dim();
        let dout = batch.targets.last_dim();
        let mut total = 0.0;
        for r in 0..rows {
            let x = batch.inputs.row(r);
            let mut h = vec![0.0; hidden];
            for o in 0..hidden {
                let mut acc = 0.0;
                for i in 0..din {
                    acc += w0.row(o)[i] * x[i];
                }
                acc += b0.data()[o];
                h[o] = if acc > 0.0 { acc } else { 0.0 };
            }
            for o in 0..dout {
                let mut acc = 0.0;
                for i in 0..hidden {
                    acc += w1.row(o)[i] * h[i];
                }
                acc += b1.data()[o];
                let d = acc - batch.targets.row(r)[o];
                total += d * d;
            }
        }
        total / rows as f64
    }

    #[test]
    fn seeded_mlp_matches_straight_line_oracle() {
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 5, output: 8, bias: true },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 8, output: 3, bias: true },
                LayerSpec::SquaredError,
            ],
            1234,
        )
        .unwrap();
        let params = model.init_params();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = random_batch(&mut rng, 6, 5, 3);
        let (loss, _) = forward(&model, &params, &batch, 0).unwrap();
        let oracle = straight_line_mlp_loss(&params, &batch, 8);
        assert_eq!(loss, oracle);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 4, output: 6, bias: true },
                LayerSpec::Gelu,
                LayerSpec::Linear { input: 6, output: 2, bias: true },
                LayerSpec::SquaredError,
            ],
            7,
        )
        .unwrap();
        let params = model.init_params();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = random_batch(&mut rng, 4, 4, 2);
        let (l1, t1) = forward(&model, &params, &batch, 0).unwrap();
        let (l2, t2) = forward(&model, &params, &batch, 0).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        let mask = FreezeMask::full(model.layer_count());
        let g1 = backward(&model, &params, &t1, &mask).unwrap();
        let g2 = backward(&model, &params, &t2, &mask).unwrap();
        assert_eq!(g1.by_layer, g2.by_layer);
    }

    #[test]
    fn tape_stores_exactly_suffix_activations() {
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 4, output: 4, bias: false },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 4, output: 4, bias: false },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 4, output: 2, bias: false },
                LayerSpec::SquaredError,
            ],
            3,
        )
        .unwrap();
        let params = model.init_params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = random_batch(&mut rng, 3, 4, 2);
        let layer_count = model.layer_count();
        for backward_start in 0..=layer_count {
            let (_, tape) = forward(&model, &params, &batch, backward_start).unwrap();
            assert_eq!(tape.stored_count(), layer_count - backward_start);
            for i in 0..layer_count {
                assert_eq!(tape.activation(i).is_some(), i >= backward_start);
            }
        }
    }

    #[test]
    fn single_linear_gradient_matches_closed_form() {
        // y = Wx (no bias), squared error: dW = 2 (Wx - t) x^T / batch
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 3, output: 2, bias: false },
                LayerSpec::SquaredError,
            ],
            11,
        )
        .unwrap();
        let params = model.init_params();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = random_batch(&mut rng, 4, 3, 2);
        let (_, tape) = forward(&model, &params, &batch, 0).unwrap();
        let mask = FreezeMask::full(model.layer_count());
        let grads = backward(&model, &params, &tape, &mask).unwrap();
        let dw = &grads.by_layer[&0][0];

        let w = &params.layer(0)[0];
        let rows = batch.inputs.rows();
        let mut expect = Tensor::zeros(vec![2, 3]);
        for r in 0..rows {
            let x = batch.inputs.row(r);
            for o in 0..2 {
                let mut y = 0.0;
                for i in 0..3 {
                    y += w.row(o)[i] * x[i];
                }
                let resid = 2.0 * (y - batch.targets.row(r)[o]) / rows as f64;
                for i in 0..3 {
                    expect.row_mut(o)[i] += resid * x[i];
                }
            }
        }
        for (a, b) in dw.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_frozen_yields_empty_gradients() {
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 3, output: 3, bias: false },
                LayerSpec::SquaredError,
            ],
            1,
        )
        .unwrap();
        let params = model.init_params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 2, 3, 3);
        let (_, tape) = forward(&model, &params, &batch, 0).unwrap();
        // mask trains only the head "block": layers [1,2) hold no params
        let mask = FreezeMask::from_parts(0, vec![false, true], 1);
        let grads = backward(&model, &params, &tape, &mask).unwrap();
        assert!(grads.is_empty());
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 4, output: 6, bias: true },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 6, output: 6, bias: true },
                LayerSpec::Gelu,
                LayerSpec::Linear { input: 6, output: 2, bias: true },
                LayerSpec::SquaredError,
            ],
            21,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let batch = random_batch(&mut rng, 5, 4, 2);
        let err = grad_check(&model, &batch, 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn linear_regression_grad_check_is_tight() {
        // quadratic loss: central differences are exact up to rounding
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 3, output: 2, bias: true },
                LayerSpec::SquaredError,
            ],
            31,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let batch = random_batch(&mut rng, 8, 3, 2);
        let err = grad_check(&model, &batch, 1e-5).unwrap();
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn zero_input_relu_grad_check_is_finite() {
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 3, output: 4, bias: true },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 4, output: 2, bias: true },
                LayerSpec::SquaredError,
            ],
            41,
        )
        .unwrap();
        let batch = Batch {
            inputs: Tensor::zeros(vec![3, 3]),
            targets: Tensor::filled(vec![3, 2], 1.0),
        };
        let err = grad_check(&model, &batch, 1e-5).unwrap();
        assert!(err.is_finite());
    }

    #[test]
    fn residual_stack_grad_check() {
        let block = || LayerSpec::Residual {
            layers: vec![
                LayerSpec::Linear { input: 4, output: 4, bias: true },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 4, output: 4, bias: true },
            ],
        };
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 3, output: 4, bias: true },
                block(),
                block(),
                block(),
                LayerSpec::Linear { input: 4, output: 2, bias: true },
                LayerSpec::SquaredError,
            ],
            51,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let batch = random_batch(&mut rng, 4, 3, 2);
        let err = grad_check(&model, &batch, 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn sequence_model_grad_check() {
        // embedding -> attention -> layer norm -> linear -> cross entropy
        let model = ModelSpec::new(
            vec![
                LayerSpec::Embedding { vocab: 9, dim: 6 },
                LayerSpec::Attention { dim: 6 },
                LayerSpec::LayerNorm { dim: 6 },
                LayerSpec::Linear { input: 6, output: 5, bias: true },
                LayerSpec::SoftmaxCrossEntropy,
            ],
            61,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let (batch_size, seq) = (3, 4);
        let inputs = Tensor::new(
            vec![batch_size, seq],
            (0..batch_size * seq)
                .map(|_| rng.gen_range(0..9) as f64)
                .collect(),
        )
        .unwrap();
        let targets = Tensor::new(
            vec![batch_size, seq],
            (0..batch_size * seq)
                .map(|_| rng.gen_range(0..5) as f64)
                .collect(),
        )
        .unwrap();
        let err = grad_check(&model, &Batch { inputs, targets }, 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]

            /// Gradient correctness holds across layer kinds at widths up
            /// to 64.
            #[test]
            fn grad_check_stays_tight_on_larger_shapes(
                din in 2usize..=64,
                dh in 2usize..=64,
                dout in 1usize..=8,
                rows in 1usize..=4,
                seed in any::<u64>(),
                kind in 0u8..3,
            ) {
                let hidden = match kind {
                    0 => LayerSpec::Relu,
                    1 => LayerSpec::Gelu,
                    _ => LayerSpec::LayerNorm { dim: dh },
                };
                let model = ModelSpec::new(
                    vec![
                        LayerSpec::Linear { input: din, output: dh, bias: true },
                        hidden,
                        LayerSpec::Linear { input: dh, output: dout, bias: true },
                        LayerSpec::SquaredError,
                    ],
                    seed,
                )
                .unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                let batch = random_batch(&mut rng, rows, din, dout);
                let err = grad_check(&model, &batch, 1e-5).unwrap();
                prop_assert!(err <= 1e-4, "max rel err {err}");
            }
        }
    }

    #[test]
    fn frozen_prefix_changes_do_not_affect_backward_from_cached_activation() {
        let model = ModelSpec::new(
            vec![
                LayerSpec::Linear { input: 3, output: 4, bias: true },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 4, output: 4, bias: true },
                LayerSpec::Relu,
                LayerSpec::Linear { input: 4, output: 2, bias: true },
                LayerSpec::SquaredError,
            ],
            71,
        )
        .unwrap();
        let params = model.init_params();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let batch = random_batch(&mut rng, 4, 3, 2);
        let prefix_end = 2;
        let (act, _) = forward_prefix(&model, &params, &batch.inputs, prefix_end).unwrap();
        let mask =
            FreezeMask::from_parts(1, vec![false, false, true, true, true, true], prefix_end);
        let run = |p: &ParamSet| {
            let (loss, tape) =
                forward_from(&model, p, act.clone(), &batch.targets, prefix_end, prefix_end)
                    .unwrap();
            (loss, backward(&model, p, &tape, &mask).unwrap())
        };
        let (loss_a, grads_a) = run(&params);
        // perturb the frozen prefix: with the cached activation as the
        // entry point, outputs must be unchanged
        let mut perturbed = params.clone();
        for t in perturbed.layer_mut(0) {
            for v in t.data_mut() {
                *v += 13.0;
            }
        }
        let (loss_b, grads_b) = run(&perturbed);
        assert_eq!(loss_a.to_bits(), loss_b.to_bits());
        assert_eq!(grads_a.by_layer, grads_b.by_layer);
    }
}
