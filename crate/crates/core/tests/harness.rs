use std::fs;

use bimodal_segnet::harness::{
    evaluate, frame_logits, frames_from_sequences, generate_plan, load_checkpoint, load_checkpoint_for,
    save_checkpoint, train, ConfigDoc, Frame, Split, SuiteConfig, TrainConfig, CHECKPOINT_FILE, LAST_GOOD_FILE,
    METRICS_FILE,
};
use bimodal_segnet::model::{ArchKind, Model, ModelConfig};
use bimodal_segnet::synth::ConditionAxis;
use bimodal_segnet::Error;

fn tiny_config() -> TrainConfig {
    TrainConfig::parse(
        "[model]\npreset = reduced\n\
         [train]\nlr = 0.01\nbatch_size = 2\nepochs = 2\nval_interval = 1\ncheckpoint_interval = 1\n\
         [data]\nsize = 32\nscenes_per_cell = 3\nframes = 2\n",
    )
    .unwrap()
}

fn frames_of(cfg: &TrainConfig) -> Vec<Frame> {
    frames_from_sequences(&generate_plan(&cfg.data).unwrap(), cfg.data.event_clip).unwrap()
}

#[test]
fn one_sample_one_epoch_is_one_step() {
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    cfg.batch_size = 1;
    cfg.val_interval = 0;
    cfg.data.scenes_per_cell = 1;
    cfg.data.frames_per_scene = 1;
    let frames = frames_of(&cfg);
    assert_eq!(frames.len(), 1);
    let run = train::<f32>(&cfg, &frames, &Split::all_train(1), None).unwrap();
    assert_eq!(run.steps, 1);
    assert_eq!(run.train_losses().len(), 1);
}

#[test]
fn reruns_write_identical_metrics() {
    let cfg = tiny_config();
    let frames = frames_of(&cfg);
    let split = Split {
        train: vec![0, 1],
        val: vec![2],
        test: vec![],
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train::<f32>(&cfg, &frames, &split, Some(a.path())).unwrap();
    train::<f32>(&cfg, &frames, &split, Some(b.path())).unwrap();
    let csv_a = fs::read(a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(csv_a, fs::read(b.path().join(METRICS_FILE)).unwrap());
    assert_eq!(
        fs::read(a.path().join(CHECKPOINT_FILE)).unwrap(),
        fs::read(b.path().join(CHECKPOINT_FILE)).unwrap()
    );
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.lines().any(|l| l.contains(",val,")), "{text}");
    // A different seed changes the log.
    let mut other = cfg.clone();
    other.seed = 1;
    let c = tempfile::tempdir().unwrap();
    train::<f32>(&other, &frames, &split, Some(c.path())).unwrap();
    assert_ne!(text.as_bytes(), fs::read(c.path().join(METRICS_FILE)).unwrap());
}

#[test]
fn empty_training_set_is_a_data_error() {
    let cfg = tiny_config();
    let err = train::<f32>(&cfg, &[], &Split::all_train(0), None).err().unwrap();
    assert!(matches!(err, Error::Dataset(_)), "{err}");
}

#[test]
fn class_count_mismatch_is_rejected_before_training() {
    let mut cfg = tiny_config();
    cfg.data.objects = vec![4];
    let frames = frames_of(&cfg);
    // Reduced preset has 3 classes; four objects need 5.
    let dir = tempfile::tempdir().unwrap();
    let err = train::<f32>(&cfg, &frames, &Split::all_train(3), Some(dir.path())).err().unwrap();
    assert!(matches!(err, Error::Dataset(_)), "{err}");
    assert!(!dir.path().join(METRICS_FILE).exists());
}

#[test]
fn non_finite_loss_keeps_last_good_checkpoint() {
    let mut cfg = tiny_config();
    cfg.val_interval = 0;
    // The first Adam step moves every weight by about lr, so activations
    // overflow on the second step.
    cfg.lr = 1e30;
    let frames = frames_of(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let err = train::<f32>(&cfg, &frames, &Split::all_train(3), Some(dir.path())).err().unwrap();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    let model: Model<f32> = load_checkpoint(&dir.path().join(LAST_GOOD_FILE)).unwrap();
    assert!(model.params.iter().all(|p| p.value.data().iter().all(|x| x.is_finite())));
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let cfg = tiny_config();
    let frames = frames_of(&cfg);
    let dir = tempfile::tempdir().unwrap();
    for kind in ArchKind::ALL {
        // Values are stored as 32-bit floats.
        let model = Model::<f32>::new(kind, ModelConfig::reduced(), 7).unwrap();
        let path = dir.path().join(format!("{kind}.evck"));
        save_checkpoint(&path, &model).unwrap();
        let back: Model<f32> = load_checkpoint_for(&path, kind, &model.config).unwrap();
        assert_eq!(frame_logits(&model, &frames[0]).unwrap(), frame_logits(&back, &frames[0]).unwrap());
        let other = ModelConfig {
            num_classes: 4,
            ..ModelConfig::reduced()
        };
        assert!(load_checkpoint_for::<f32>(&path, kind, &other).is_err());
    }
}

#[test]
fn single_patch_inference_equals_whole_image() {
    let mut cfg = tiny_config();
    cfg.data.render.height = 32;
    cfg.data.render.width = 32;
    let frames = frames_of(&cfg);
    let f = &frames[0];
    let model = Model::<f64>::new(ArchKind::Bimodal, ModelConfig::reduced(), 3).unwrap();
    let cast = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let rgb = bimodal_segnet::Tensor::new(vec![1, 3, 32, 32], cast(&f.rgb)).unwrap();
    let ev = bimodal_segnet::Tensor::new(vec![1, 2, 32, 32], cast(&f.event)).unwrap();
    let whole = model.predict_logits(&rgb, Some(&ev)).unwrap();
    assert_eq!(frame_logits(&model, f).unwrap(), whole.data());
}

#[test]
fn duplicate_image_gives_identical_rows() {
    let mut cfg = tiny_config();
    cfg.data.light = vec!["normal".parse().unwrap(), "low".parse().unwrap()];
    let frames = frames_of(&cfg);
    let model = Model::<f32>::new(ArchKind::Bimodal, ModelConfig::reduced(), 0).unwrap();
    let once = evaluate(&model, &[&frames[0]], None).unwrap();
    let twice = evaluate(&model, &[&frames[0], &frames[0]], None).unwrap();
    let (a, b) = (&once.rows[0], &twice.rows[0]);
    assert_eq!(a.pixel_accuracy(), b.pixel_accuracy());
    assert_eq!(a.miou(), b.miou());
    assert_eq!(b.samples, 2);
    assert_eq!(b.counts.total, 2 * a.counts.total);

    let refs: Vec<&Frame> = frames.iter().collect();
    let by_light = evaluate(&model, &refs, Some(ConditionAxis::Light)).unwrap();
    assert_eq!(by_light.rows.len(), 2);
    assert_eq!(by_light.aggregate, by_light.recompute_aggregate());
    let agg = by_light.aggregate.as_ref().unwrap();
    assert_eq!(agg.samples, frames.len());
    let all = evaluate(&model, &refs, None).unwrap();
    assert_eq!(all.rows[0].counts, agg.counts);
}

#[test]
fn empty_eval_has_no_aggregate() {
    let model = Model::<f32>::new(ArchKind::RgbOnly, ModelConfig::reduced(), 0).unwrap();
    let report = evaluate(&model, &[], None).unwrap();
    assert!(report.is_empty());
    assert!(report.aggregate.is_none());
}

#[test]
fn frames_without_metadata_group_as_unknown() {
    let cfg = tiny_config();
    let mut frames = frames_of(&cfg);
    frames[0].spec = None;
    let model = Model::<f32>::new(ArchKind::Bimodal, ModelConfig::reduced(), 0).unwrap();
    let report = evaluate(&model, &[&frames[0], &frames[1]], Some(ConditionAxis::Objects)).unwrap();
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["unknown", "2"]);
}

#[test]
fn every_config_key_is_overridable() {
    let mut doc = ConfigDoc::parse("[model]\npreset = reduced\n[train]\nlr = 0.5\n").unwrap();
    for o in [
        "model.kind=rgb_only",
        "model.widths=4,8",
        "model.dropout=0",
        "model.num_classes=5",
        "train.lr=0.02",
        "train.batch_size=3",
        "train.epochs=7",
        "train.max_steps=9",
        "train.seed=11",
        "train.precision=f64",
        "train.checkpoint_interval=0",
        "train.val_interval=2",
        "train.log_wall_time=true",
        "data.objects=2,4",
        "data.light=low",
        "data.trajectory=linear",
        "data.speed=fast",
        "data.distance=far",
        "data.scenes_per_cell=1",
        "data.frames=3",
        "data.height=40",
        "data.width=48",
        "data.window_us=10000",
        "data.subframes=4",
        "data.threshold=0.3",
        "data.event_clip=2",
        "data.seed=5",
    ] {
        doc.apply_override(o).unwrap();
    }
    let cfg = TrainConfig::from_doc(&doc).unwrap();
    assert_eq!(cfg.kind, ArchKind::RgbOnly);
    assert_eq!(cfg.model.widths, vec![4, 8]);
    assert_eq!((cfg.lr, cfg.batch_size, cfg.epochs, cfg.max_steps, cfg.seed), (0.02, 3, 7, 9, 11));
    assert_eq!(cfg.data.objects, vec![2, 4]);
    assert_eq!((cfg.data.render.height, cfg.data.render.width), (40, 48));
    assert_eq!(cfg.data.event_clip, 2);
    // Rendering back and reparsing gives the same config.
    assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);

    assert!(doc.apply_override("train.lr").is_err());
    let mut bad = doc.clone();
    bad.apply_override("train.bogus=1").unwrap();
    assert!(TrainConfig::from_doc(&bad).is_err());
}

#[test]
fn suite_config_reads_its_section() {
    let doc = ConfigDoc::parse(
        "[suite]\nkinds = bimodal, rgb_only\nseeds = 4,5\ntest_scenes_per_cell = 2\n\
         [model]\npreset = reduced\n[data]\nlight = normal,low\n",
    )
    .unwrap();
    let cfg = SuiteConfig::from_doc(&doc).unwrap();
    assert_eq!(cfg.kinds, vec![ArchKind::Bimodal, ArchKind::RgbOnly]);
    assert_eq!(cfg.seeds, vec![4, 5]);
    assert_eq!(cfg.test_scenes_per_cell, 2);
    assert_eq!(cfg.axes(), vec![ConditionAxis::Light]);
    assert_eq!(cfg.test_plan().scenes_per_cell, 2);
    assert_ne!(cfg.test_plan().seed, cfg.train.data.seed);
}

#[test]
fn small_suite_fills_every_cell() {
    let doc = ConfigDoc::parse(
        "[suite]\nseeds = 0\ntest_scenes_per_cell = 1\n\
         [model]\npreset = reduced\n[train]\nepochs = 1\nbatch_size = 4\nval_interval = 0\ncheckpoint_interval = 0\n\
         [data]\nsize = 32\nscenes_per_cell = 2\nframes = 1\n",
    )
    .unwrap();
    let cfg = SuiteConfig::from_doc(&doc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = bimodal_segnet::harness::run_suite(&cfg, Some(dir.path())).unwrap();
    assert!(run.error.is_none());
    assert_eq!(run.report.cells.len(), 4);
    assert!(dir.path().join("suite_cells.csv").exists());
    assert!(dir.path().join("suite_report.txt").exists());
    // No axis varies, so neither claim can be tested.
    assert!(run.report.verdicts.iter().all(|v| v.status == bimodal_segnet::harness::VerdictStatus::NotApplicable));
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for name in ["desk.ini", "full.ini"] {
        let text = fs::read_to_string(format!("{dir}/{name}")).unwrap();
        TrainConfig::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let text = fs::read_to_string(format!("{dir}/suite.ini")).unwrap();
    SuiteConfig::from_doc(&ConfigDoc::parse(&text).unwrap()).unwrap();
}
