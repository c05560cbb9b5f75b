use hybridcnn::data::{synthetic_color_dataset, Label};
use hybridcnn::gradcam::{gradcam, write_overlay, CamLayer};
use hybridcnn::model::{Branch, HybridModel, HybridModelConfig};
use hybridcnn::train::{train, TrainConfig};

#[test]
fn heatmaps_on_a_trained_toy_model() {
    let c = HybridModelConfig { input_size: 32, channel_widths: [4, 6, 8, 8], attention_width: 4, seed: 2, ..Default::default() };
    let d = synthetic_color_dataset(8, 32, 2);
    let cfg = TrainConfig { epochs: 5, batch_size: 8, learning_rate: 0.01, ..Default::default() };
    let (model, _, _) = train(HybridModel::new(c).unwrap(), d.clone(), None, &cfg, None).unwrap();

    let img = &d.items[9].image;
    let a = gradcam(&model, img, Label::Abnormal, CamLayer::Concat).unwrap();
    let n = gradcam(&model, img, Label::Normal, CamLayer::Concat).unwrap();
    for cam in [&a, &n] {
        assert_eq!(cam.heatmap.shape(), &[32, 32]);
        assert!(cam.heatmap.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        if !cam.degenerate {
            assert_eq!(cam.heatmap.data().iter().cloned().fold(0.0, f32::max), 1.0);
        }
    }
    assert_ne!(a.heatmap, n.heatmap);

    for b in Branch::ALL {
        let cam = gradcam(&model, img, Label::Abnormal, CamLayer::Branch(b)).unwrap();
        assert_eq!(cam.raw.shape(), &[2, 2]);
    }

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cam.png");
    write_overlay(&p, img, &a.heatmap).unwrap();
    assert_eq!(image::open(&p).unwrap().width(), 32);
}

#[test]
fn disabled_branch_is_an_error() {
    let c = HybridModelConfig {
        input_size: 16,
        channel_widths: [4, 6, 8, 8],
        attention_width: 4,
        use_dsc_branch: false,
        ..Default::default()
    };
    let model = HybridModel::<f32>::new(c).unwrap();
    let img = &synthetic_color_dataset(1, 16, 0).items[0].image;
    assert!(gradcam(&model, img, Label::Normal, CamLayer::Branch(Branch::Dsc)).is_err());
}
