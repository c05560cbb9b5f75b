use hybridcnn::autodiff::Tape;
use hybridcnn::gradcheck::{model_check, operator_suite, CheckConfig};
use hybridcnn::model::{HybridModel, HybridModelConfig, ABLATION_GRID};
use hybridcnn::nn::{self, Mode};
use hybridcnn::rng::Rng;
use hybridcnn::Tensor;

#[test]
fn every_operator_matches_finite_differences_on_ten_seeds() {
    for seed in 0..10 {
        for report in operator_suite(seed).unwrap() {
            assert!(
                report.passed(),
                "seed {seed}: {} max rel err {:.3e} (tol {:.0e}) {:?}",
                report.label,
                report.max_rel_err(),
                report.tolerance,
                report.groups
            );
        }
    }
}

#[test]
fn exp_gradient_at_zero() {
    let inputs = vec![("x".to_string(), Tensor::<f64>::zeros(&[1]))];
    let report = hybridcnn::gradcheck::check(
        "exp",
        &inputs,
        |t, v| {
            let y = t.exp(v[0])?;
            t.sum_all(y)
        },
        &CheckConfig::default(),
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    let mut tape = Tape::new();
    let x = tape.param(Tensor::<f64>::zeros(&[1]));
    let y = tape.exp(x).unwrap();
    let s = tape.sum_all(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert!((g.get(x).unwrap().data()[0] - 1.0).abs() < 1e-6);
}

fn toy_config(seed: u64) -> HybridModelConfig {
    HybridModelConfig {
        input_size: 16,
        channel_widths: [4, 6, 8, 8],
        attention_width: 4,
        seed,
        ..HybridModelConfig::default()
    }
}

#[test]
fn whole_model_matches_finite_differences_in_both_modes() {
    for mode in [Mode::Train, Mode::Eval] {
        let report = model_check(&toy_config(1), mode, 3, Some(6), 7).unwrap();
        assert!(report.passed(), "{} max rel err {:.3e}: {:?}", report.label, report.max_rel_err(), report.groups);
    }
}

#[test]
fn every_ablation_row_matches_finite_differences() {
    for (i, t) in ABLATION_GRID.iter().enumerate() {
        let c = toy_config(10 + i as u64).with_toggles(*t);
        let report = model_check(&c, Mode::Train, 2, Some(2), i as u64).unwrap();
        assert!(report.passed(), "{t:?}: {:.3e}", report.max_rel_err());
    }
}

#[test]
fn every_enabled_parameter_receives_gradient() {
    for seed in 0..5 {
        let model = HybridModel::<f64>::new(toy_config(seed)).unwrap();
        let mut tape = Tape::new();
        let mut rng = Rng::new(seed);
        let x = Tensor::new(&[4, 3, 16, 16], (0..3072).map(|_| rng.uniform()).collect()).unwrap();
        let x = tape.constant(x);
        let out = model.forward(&mut tape, x, Mode::Eval).unwrap();
        let labels = Tensor::from_f64(&[4, 2], &[1., 0., 0., 1., 1., 0., 0., 1.]).unwrap();
        let loss = nn::softmax_cross_entropy(&mut tape, out.logits, &labels).unwrap();
        let grads = out.param_grads(&tape.backward(loss).unwrap());
        for (name, value) in model.store().params() {
            let g = &grads[name];
            assert_eq!(g.shape(), value.shape());
            assert!(g.data().iter().any(|&v| v != 0.0), "seed {seed}: {name} has zero gradient");
        }
    }
}
