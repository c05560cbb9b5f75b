//! The hybrid network: residual attention, cosine-normalized and
//! depthwise-separable feeder networks, the meta-feature extraction network
//! fed by statistical feature maps, and the dense head.

mod accounting;
mod config;
mod hybrid;
mod params;
mod sfm;

pub use accounting::{
    accounting_table, count_params_and_flops, render_accounting, AccountingRow, Counts,
    REFERENCE_CONV_LAYERS, REFERENCE_FULL_PARAMS, REFERENCE_TOTALS,
};
pub use config::{HybridModelConfig, Toggles, ABLATION_GRID, FC_WIDTHS, FEATURE_LENGTH};
pub use hybrid::{AttentionTap, BlockTap, Branch, ForwardOutput, HybridModel, SfmTap, Taps};
pub use params::ParamStore;
pub use sfm::{compute_sfm, mfe_block_input, StatFeatureMaps};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::nn::Mode;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn small(input: usize) -> HybridModelConfig {
        HybridModelConfig {
            input_size: input,
            channel_widths: [4, 6, 8, 8],
            attention_width: 4,
            seed: 3,
            ..Default::default()
        }
    }

    fn random_images(n: usize, side: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let data = (0..n * 3 * side * side).map(|_| rng.uniform()).collect();
        Tensor::new(&[n, 3, side, side], data).unwrap()
    }

    #[test]
    fn built_model_matches_analytic_counts() {
        for t in ABLATION_GRID {
            let c = HybridModelConfig::default().with_toggles(t);
            let m = HybridModel::<f32>::new(c.clone()).unwrap();
            assert_eq!(m.param_count(), count_params_and_flops(&c).params, "{t:?}");
        }
    }

    #[test]
    fn branches_align_and_head_has_expected_widths() {
        let c = small(32);
        let m = HybridModel::<f64>::new(c.clone()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(random_images(2, 32, 0));
        let out = m.forward(&mut tape, x, Mode::Train).unwrap();
        for i in 0..4 {
            let side = 32 >> (i + 1);
            for (b, taps) in &out.taps.blocks {
                assert_eq!(tape.shape(taps[i].output), &[2, c.channel_widths[i], side, side], "{b:?}");
            }
        }
        assert_eq!(tape.shape(out.taps.concat), &[2, 24, 2, 2]);
        assert_eq!(tape.shape(out.taps.penultimate), &[2, FEATURE_LENGTH]);
        assert_eq!(tape.shape(out.logits), &[2, 2]);
        assert_eq!(out.taps.sfm.len(), 3);
    }

    #[test]
    fn logits_are_finite_and_probabilities_normalised() {
        let m = HybridModel::<f64>::new(small(16)).unwrap();
        let (tape, out) = m.infer(&random_images(3, 16, 1)).unwrap();
        let p = tape.value(out.logits).softmax_rows().unwrap();
        for row in p.data().chunks(2) {
            assert!(row.iter().all(|v| v.is_finite()));
            assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let m = HybridModel::<f64>::new(small(16)).unwrap();
        assert!(m.infer(&random_images(1, 32, 0)).is_err());
    }

    #[test]
    fn mfe_off_skips_statistical_maps() {
        let c = HybridModelConfig { use_mfe_branch: false, ..small(16) };
        let m = HybridModel::<f64>::new(c).unwrap();
        let (tape, out) = m.infer(&random_images(1, 16, 2)).unwrap();
        assert!(out.taps.sfm.is_empty());
        assert_eq!(tape.shape(out.taps.concat)[1], 16);
        assert!(m.store().param_names().all(|n| !n.starts_with("mfe.")));
    }

    fn set_mask_bias(m: &mut HybridModel<f64>, v: f64) {
        let b = m.store_mut().param_mut("attention.mask.conv.bias").unwrap();
        *b = Tensor::full(b.shape(), v);
    }

    /// Projects `scale * trunk` with the model's own 1x1 projection weights.
    fn project(m: &HybridModel<f64>, tape: &mut Tape<f64>, trunk: crate::autodiff::Var, scale: f64) -> Vec<f64> {
        let t = tape.mul_scalar(trunk, scale).unwrap();
        let w = tape.constant(m.store().param("attention.project.weight").unwrap().clone());
        let b = tape.constant(m.store().param("attention.project.bias").unwrap().clone());
        let y = crate::nn::conv2d(tape, t, w, Some(b)).unwrap();
        tape.value(y).to_f64_vec()
    }

    #[test]
    fn saturated_masks_reduce_to_trunk_projection() {
        let mut m = HybridModel::<f64>::new(small(16)).unwrap();
        for (bias, scale) in [(-1e4, 1.0), (1e4, 2.0)] {
            set_mask_bias(&mut m, bias);
            let (mut tape, out) = m.infer(&random_images(2, 16, 4)).unwrap();
            let a = out.taps.attention.unwrap();
            let got = tape.value(a.output).to_f64_vec();
            let want = project(&m, &mut tape, a.trunk, scale);
            assert_eq!(got, want, "mask bias {bias}");
        }
    }

    #[test]
    fn modulated_trunk_lies_between_one_and_two_times_trunk() {
        let m = HybridModel::<f64>::new(small(16)).unwrap();
        let (tape, out) = m.infer(&random_images(2, 16, 5)).unwrap();
        let a = out.taps.attention.unwrap();
        let (t, y) = (tape.value(a.trunk).data(), tape.value(a.modulated).data());
        for (&t, &y) in t.iter().zip(y) {
            assert!(y.abs() >= t.abs() && y.abs() <= 2.0 * t.abs(), "{t} {y}");
        }
        assert!(tape.value(a.mask).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn cnc_first_block_ignores_input_scale() {
        let c = HybridModelConfig { use_attention: false, ..small(16) };
        let m = HybridModel::<f64>::new(c).unwrap();
        let x = random_images(2, 16, 6);
        let conv_of = |x: &Tensor<f64>| {
            let (tape, out) = m.infer(x).unwrap();
            tape.value(out.taps.blocks[&Branch::Cnc][0].conv).to_f64_vec()
        };
        let base = conv_of(&x);
        for s in [0.1, 10.0] {
            for (a, b) in base.iter().zip(conv_of(&x.scale(s))) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn init_is_per_component() {
        let with = HybridModel::<f32>::new(small(16)).unwrap();
        let without = HybridModel::<f32>::new(HybridModelConfig { use_attention: false, ..small(16) }).unwrap();
        for (name, t) in without.store().params().filter(|(n, _)| n.starts_with("cnc.")) {
            assert_eq!(with.store().param(name).unwrap(), t);
        }
    }

    #[test]
    fn train_mode_reports_stats_for_every_bn() {
        let mut m = HybridModel::<f64>::new(small(16)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(random_images(2, 16, 7));
        let out = m.forward(&mut tape, x, Mode::Train).unwrap();
        let bn_layers = m.store().buffers().count() / 2;
        assert_eq!(out.bn_stats.len(), bn_layers);
        let before = m.store().buffer("cnc.1.bn.running_mean").unwrap().clone();
        m.commit_bn(&out.bn_stats).unwrap();
        assert_ne!(m.store().buffer("cnc.1.bn.running_mean").unwrap(), &before);
        let (_, eval) = m.infer(&random_images(2, 16, 7)).unwrap();
        assert!(eval.bn_stats.is_empty());
    }
}
