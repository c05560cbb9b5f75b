use hybridcnn::autodiff::{BinaryOp, Tape};
use hybridcnn::metrics::{roc_auc, Confusion, Metrics};
use hybridcnn::model::compute_sfm;
use hybridcnn::nn;
use hybridcnn::Tensor;
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

// Explicitly tile `src` (shape `s`) up to `t`, one element at a time.
fn tile(src: &[f64], s: &[usize], t: &[usize]) -> Vec<f64> {
    let offset = t.len() - s.len();
    let total: usize = t.iter().product();
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut idx = vec![0; t.len()];
            for a in (0..t.len()).rev() {
                idx[a] = rem % t[a];
                rem /= t[a];
            }
            let mut k = 0;
            for (i, &d) in s.iter().enumerate() {
                k = k * d + if d == 1 { 0 } else { idx[offset + i] };
            }
            src[k]
        })
        .collect()
}

fn broadcast_case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (prop::collection::vec(1usize..4, 1..4), any::<u8>(), 0usize..3).prop_map(|(t, mask, drop)| {
        let drop = drop.min(t.len() - 1);
        let s = t[drop..].iter().enumerate().map(|(i, &d)| if mask >> i & 1 == 1 { 1 } else { d }).collect();
        (t, s)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn broadcast_equals_tiling((t, s) in broadcast_case(), seed in any::<u64>()) {
        let mut rng = hybridcnn::rng::Rng::new(seed);
        let a: Vec<f64> = (0..t.iter().product::<usize>()).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..s.iter().product::<usize>()).map(|_| rng.uniform_range(0.5, 2.0)).collect();
        let tiled = tile(&b, &s, &t);
        for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div] {
            let mut tape = Tape::<f64>::new();
            let av = tape.constant(Tensor::new(&t, a.clone()).unwrap());
            let bv = tape.constant(Tensor::new(&s, b.clone()).unwrap());
            let tv = tape.constant(Tensor::new(&t, tiled.clone()).unwrap());
            let broad = tape.binary(op, av, bv).unwrap();
            let full = tape.binary(op, av, tv).unwrap();
            prop_assert_eq!(tape.value(broad).data(), tape.value(full).data());
        }
    }

    #[test]
    fn cnc_is_bounded_and_scale_invariant(
        x in values(2 * 5 * 5),
        w in values(3 * 2 * 9),
        c in prop::sample::select(vec![1e-3, 0.1, 7.0, 1e3]),
    ) {
        let run = |scale: f64| {
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(Tensor::new(&[1, 2, 5, 5], x.iter().map(|v| v * scale).collect()).unwrap());
            let wv = tape.constant(Tensor::new(&[3, 2, 3, 3], w.clone()).unwrap());
            let y = nn::cosine_conv2d(&mut tape, xv, wv).unwrap();
            tape.value(y).data().to_vec()
        };
        let base = run(1.0);
        prop_assert!(base.iter().all(|v| v.abs() <= 1.0 + 1e-6));
        for (a, b) in run(c).iter().zip(&base) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn sfm_variance_nonnegative_and_max_dominates_mean(k in 1usize..6, x in values(6 * 4 * 4)) {
        let data = x[..k * 16].to_vec();
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::new(&[1, k, 4, 4], data.clone()).unwrap());
        let s = compute_sfm(&mut tape, v).unwrap();
        let (max, var) = (tape.value(s.max_map).data(), tape.value(s.var_map).data());
        for p in 0..16 {
            let mean = (0..k).map(|j| data[j * 16 + p]).sum::<f64>() / k as f64;
            prop_assert!(var[p] >= 0.0);
            prop_assert!(max[p] >= mean - 1e-12);
        }
    }

    #[test]
    fn trapezoid_auc_equals_rank_formula(pairs in prop::collection::vec((0u8..2, 0u8..8), 2..60)) {
        let labels: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let scores: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 8.0).collect();
        let (pos, neg) = (labels.iter().filter(|&&l| l == 1).count(), labels.iter().filter(|&&l| l == 0).count());
        let auc = roc_auc(&labels, &scores);
        if pos == 0 || neg == 0 {
            prop_assert!(auc.is_none());
        } else {
            let mut wins = 0.0;
            for i in 0..labels.len() {
                for j in 0..labels.len() {
                    if labels[i] == 1 && labels[j] == 0 {
                        wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            prop_assert!((auc.unwrap() - wins / (pos * neg) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn f1_is_harmonic_mean(tn in 0u64..200, fp in 0u64..200, fn_ in 0u64..200, tp in 1u64..200) {
        let m = Metrics::from_confusion(Confusion([[tn, fp], [fn_, tp]]));
        let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        prop_assert!((m.f1 - h).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&m.kappa));
    }
}
