use lgg_core::data::{load_dataset, preprocess, synth_dataset, write_dataset, Dimension, PreprocessConfig, SynthSpec};
use lgg_core::interpret::saliency;
use lgg_core::model::{read_checkpoint, write_checkpoint, Lgg, ModelConfig};
use lgg_core::montage::MontageGraph;
use lgg_core::train::{run_nested_cv, Dataset, ModelSpec, TrainConfig};

fn montage() -> MontageGraph {
    MontageGraph::parse(
        "channels: Ch1, Ch2, Ch3, Ch4, Ch5, Ch6, Ch7, Ch8\n\
         local a: Ch1, Ch2\nlocal b: Ch3, Ch4\nlocal c: Ch5, Ch6\nlocal d: Ch7, Ch8\n",
    )
    .unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        sample_rate: 32.0,
        kernels: 3,
        pool_window: 4,
        pool_stride: 4,
        pool2_window: 4,
        pool2_stride: 4,
        hidden: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn synth_to_disk_to_cv_to_checkpoint() {
    let spec = SynthSpec {
        channels: 8,
        trials: 12,
        sample_rate: 32.0,
        duration: 2.0,
        discriminative: vec![0, 4],
        frequency: 6.0,
        amplitude: 2.0,
        ..SynthSpec::default()
    };
    let (names, trials) = synth_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &names, &trials).unwrap();
    let (manifest, loaded) = load_dataset(dir.path()).unwrap();
    assert_eq!(manifest.channels, names);
    assert_eq!(loaded, trials);

    let data = Dataset {
        signals: loaded.iter().map(|t| t.signal.clone()).collect(),
        labels: loaded
            .iter()
            .map(|t| t.label(Dimension::Arousal).unwrap().class_index())
            .collect(),
    };
    let (config, montage) = (small_model(), montage());
    let model_spec = ModelSpec {
        config: &config,
        montage: &montage,
        input_len: 64,
    };
    let train = TrainConfig {
        stage1_epochs: 3,
        stage2_epochs: 1,
        inner_folds: 3,
        ..TrainConfig::default()
    };
    let out = run_nested_cv(model_spec, &data, &train, 2).unwrap();
    assert_eq!(out.models.len(), 12);
    assert_eq!(out.report.fold_accuracy.len(), 12);
    let serial = run_nested_cv(model_spec, &data, &train, 1).unwrap();
    assert_eq!(serial.report, out.report);

    // a fold model survives a checkpoint round trip bit for bit
    let path = dir.path().join("fold.ckpt");
    write_checkpoint(&out.models[0].to_checkpoint(), &path).unwrap();
    let back = Lgg::from_checkpoint(config.clone(), &montage, 64, &read_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(back, out.models[0]);
    let x = back.batch_input(&[&loaded[0].signal]).unwrap();
    assert_eq!(back.logits(&x).unwrap(), out.models[0].logits(&x).unwrap());

    // a different montage is refused
    let other = MontageGraph::parse(
        "channels: Ch1, Ch2, Ch3, Ch4, Ch5, Ch6, Ch7, Ch8\nlocal a: Ch1, Ch2, Ch3, Ch4\nlocal b: Ch5, Ch6, Ch7, Ch8\n",
    )
    .unwrap();
    assert!(Lgg::from_checkpoint(config, &other, 64, &read_checkpoint(&path).unwrap()).is_err());

    let map = saliency(&back, &montage, &loaded[0].signal).unwrap();
    assert_eq!(map.channels, names);
}

#[test]
fn preprocessed_trials_fit_the_default_model() {
    let spec = SynthSpec {
        trials: 1,
        sample_rate: 512.0,
        duration: 8.0,
        ..SynthSpec::default()
    };
    let (names, trials) = synth_dataset(&spec).unwrap();
    let clean = preprocess(&trials[0], &PreprocessConfig::default()).unwrap();
    assert_eq!(clean.sample_rate, 128.0);
    assert_eq!(clean.signal.shape(), [32, 640]);
    let montage = MontageGraph::parse(&format!("channels: {}\nlocal all: {}\n", names.join(", "), names.join(", "))).unwrap();
    let model = Lgg::new(ModelConfig::default(), &montage, 640, 0).unwrap();
    let x = model.batch_input(&[&clean.signal]).unwrap();
    let p = model.logits(&x).unwrap();
    assert_eq!(p.shape(), [1, 2]);
    assert!(p.is_finite());
}
