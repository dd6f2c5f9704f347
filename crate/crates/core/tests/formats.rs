use proptest::prelude::*;
use tnf_autograd::optim::{AdamWConfig, CosineSchedule};
use tnf_core::explain::grad_cam_3d;
use tnf_core::formats::checkpoint::Checkpoint;
use tnf_core::formats::dataset::{decode_split, encode_split, HEADER_LEN};
use tnf_core::formats::heatmap::{read_heatmap, write_heatmap, HeatmapHeader};
use tnf_core::formats::manifest::{read_dataset, write_dataset, DatasetManifest, MANIFEST_FILE};
use tnf_core::formats::runconfig::{DataSource, RunConfig};
use tnf_core::synth::{gen_synthetic, SynthConfig};
use tnf_core::{Branch, Error, FusionKind, ModelConfig, TnfModel};

fn synth() -> SynthConfig {
    SynthConfig {
        n_cases: 20,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn split_file_round_trip() {
    let splits = gen_synthetic(&synth()).unwrap();
    let (bytes, offsets) = encode_split(&splits.train);
    assert_eq!(&bytes[..4], b"TNF1");
    assert_eq!(offsets[0], HEADER_LEN);
    assert!(offsets.windows(2).all(|w| w[0] < w[1]));
    let (back, off2) = decode_split(&bytes).unwrap();
    assert_eq!(back, splits.train);
    assert_eq!(off2, offsets);
    for cut in [0, 3, 15, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_split(&bytes[..cut]), Err(Error::Data(_))), "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_split(&bad).is_err());
}

#[test]
fn dataset_directory_round_trip() {
    let cfg = synth();
    let splits = gen_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &splits, Some(&cfg)).unwrap();
    assert_eq!(m.splits["train"].count, 12);
    let (m2, back) = read_dataset(dir.path()).unwrap();
    assert_eq!(m, m2);
    assert_eq!(back.train, splits.train);
    assert_eq!(back.test, splits.test);
    assert_eq!(m2.generator, Some(cfg));
}

#[test]
fn manifest_must_agree_with_records() {
    let cfg = synth();
    let splits = gen_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &splits, None).unwrap();
    let text = m.to_toml();
    assert_eq!(DatasetManifest::from_toml(&text).unwrap(), m);

    let path = dir.path().join(MANIFEST_FILE);
    let mut wrong = m.clone();
    wrong.splits.get_mut("val").unwrap().count += 1;
    assert!(wrong.validate().is_err());

    let mut shifted = m.clone();
    shifted.splits.get_mut("train").unwrap().offsets[1] += 1;
    std::fs::write(&path, shifted.to_toml()).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Data(_))));

    let mut unordered = m.clone();
    unordered.splits.get_mut("train").unwrap().offsets.swap(1, 2);
    assert!(unordered.validate().is_err());

    std::fs::write(&path, text.replace("tnf-dataset", "other")).unwrap();
    assert!(read_dataset(dir.path()).is_err());
    std::fs::write(&path, format!("{text}\nextra = 1\n")).unwrap();
    assert!(read_dataset(dir.path()).is_err());
    assert!(read_dataset(&dir.path().join("missing")).is_err());
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    for fusion in [FusionKind::Mmtm, FusionKind::TokenFusion, FusionKind::CrossModalAttention] {
        let cfg = ModelConfig { fusion, ..Default::default() };
        let model = TnfModel::<f32>::new(&cfg, 9).unwrap();
        let ck = Checkpoint::from_model(&model, 0.75, None);
        let bytes = ck.encode();
        assert_eq!(&bytes[..4], b"TNFC");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        let restored: TnfModel<f32> = back.to_model().unwrap();
        assert_eq!(Checkpoint::from_model(&restored, 0.75, None).encode(), bytes);
        for ((_, a, x), (_, b, y)) in model.store.iter().zip(restored.store.iter()) {
            assert_eq!(a, b);
            assert_eq!(x.data(), y.data());
        }
    }
}

#[test]
fn checkpoint_with_optimizer_state() {
    let model = TnfModel::<f32>::new(&ModelConfig::default(), 2).unwrap();
    let sched = CosineSchedule::new(1e-3, 1e-4, 10).unwrap();
    let opt = tnf_autograd::optim::AdamW::new(&model.store, AdamWConfig::default(), sched);
    let ck = Checkpoint::from_model(&model, 0.5, Some(&opt));
    let back = Checkpoint::decode(&ck.encode()).unwrap();
    let restored = back.optimizer_for(&model, AdamWConfig::default(), sched).unwrap().unwrap();
    assert_eq!(restored.state(), opt.state());
}

#[test]
fn checkpoint_rejects_other_architecture() {
    let a = TnfModel::<f32>::new(&ModelConfig::default(), 1).unwrap();
    let ck = Checkpoint::from_model(&a, 0.0, None);
    let mut b = TnfModel::<f32>::new(&ModelConfig { fusion: FusionKind::TokenFusion, ..Default::default() }, 1).unwrap();
    assert!(matches!(ck.apply_to(&mut b), Err(Error::Config(_))));
    let bytes = ck.encode();
    for cut in [0, 4, 8, bytes.len() - 1] {
        assert!(Checkpoint::decode(&bytes[..cut]).is_err());
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(Checkpoint::decode(&trailing).is_err());
}

#[test]
fn heatmap_round_trip() {
    let m = TnfModel::<f64>::new(&ModelConfig::default(), 5).unwrap();
    let img = tnf_autograd::Tensor::from_fn([1, 1, 8, 8, 8], |i| ((i * 37) % 11) as f64 / 5.0 - 1.0).unwrap();
    let h = grad_cam_3d(&m, &img, None, Branch::Image, 1, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (raw, hdr) = write_heatmap(&dir.path().join("cam"), &h).unwrap();
    assert!(raw.exists() && hdr.exists());
    let (header, values) = read_heatmap(&dir.path().join("cam")).unwrap();
    assert_eq!(header, HeatmapHeader::of(&h));
    assert_eq!(header.dims, [8, 8, 8]);
    let want: Vec<f32> = h.upsampled.data().iter().map(|&v| v as f32).collect();
    assert_eq!(values, want);
    assert_eq!(HeatmapHeader::parse(&header.to_text()).unwrap(), header);
}

#[test]
fn heatmap_header_is_strict() {
    let good = "format = tnf-heatmap\nversion = 1\ndtype = f32\nendian = little\ndims = 8 8 8\nspacing = 1 1 1\nbranch = image\nclass = 1\nlayer = 1\n";
    assert!(HeatmapHeader::parse(good).is_ok());
    for bad in [
        good.replace("dtype = f32", "dtype = f64"),
        good.replace("endian = little", "endian = big"),
        good.replace("dims = 8 8 8", "dims = 8 8"),
        good.replace("branch = image", "branch = eye"),
        format!("{good}color = red\n"),
        format!("{good}class = 0\n"),
        good.replace("layer = 1\n", ""),
        good.replace("dims = 8 8 8", "dims = 100000 100000 100000"),
    ] {
        assert!(matches!(HeatmapHeader::parse(&bad), Err(Error::Data(_))), "{bad}");
    }
}

#[test]
fn run_config_defaults_and_echo() {
    let cfg = RunConfig::from_toml("").unwrap();
    assert_eq!(cfg.weights().lambda3, 0.8);
    assert!(matches!(cfg.data_source(), DataSource::Synth(_)));
    let echo = cfg.resolved_toml();
    assert_eq!(RunConfig::from_toml(&echo).unwrap(), cfg);
    assert!(echo.contains("lambda1 = 0.1"));

    let text = "[loss]\nlambda1 = 0.0\nlambda2 = 0.0\nlambda3 = 1.0\nlabel_strategy = \"label_masking\"\n[data]\npath = \"d\"\n";
    let cfg = RunConfig::from_toml(text).unwrap();
    assert_eq!(cfg.data_source(), DataSource::Path("d".into()));
    assert_eq!(cfg.train_config().weights.lambda3, 1.0);
}

#[test]
fn run_config_errors_name_the_key() {
    let e = RunConfig::from_toml("[loss]\nlambda3 = \"abc\"\n").unwrap_err();
    assert!(matches!(e, Error::Config(_)));
    assert!(e.to_string().contains("loss.lambda3"), "{e}");
    let e = RunConfig::from_toml("[train]\nepochz = 3\n").unwrap_err();
    assert!(e.to_string().contains("epochz"), "{e}");
    for bad in [
        "[loss]\nlambda1 = 0.0\nlambda2 = 0.0\nlambda3 = 0.0\n",
        "[loss]\nlambda1 = -1.0\n",
        "[eval]\ntheta = 1.5\n",
        "[data]\npath = \"x\"\n[data.synth]\nn_cases = 10\n",
        "[data.synth]\nn_attr = 5\n",
        "[data]\ngroup_size = 24\n",
        "[model]\nfusion = \"nope\"\n",
        "not toml at all [",
    ] {
        assert!(matches!(RunConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]
    #[test]
    fn decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_split(&bytes);
        let _ = Checkpoint::decode(&bytes);
        let text = String::from_utf8_lossy(&bytes);
        let _ = HeatmapHeader::parse(&text);
        let _ = DatasetManifest::from_toml(&text);
        let _ = RunConfig::from_toml(&text);
    }

    #[test]
    fn corrupted_split_files_fail_cleanly(pos in 0usize..4000, val in any::<u8>()) {
        let splits = gen_synthetic(&SynthConfig { n_cases: 5, split: [1.0, 0.0, 0.0], ..Default::default() }).unwrap();
        let (mut bytes, _) = encode_split(&splits.train);
        let p = pos % bytes.len();
        bytes[p] = val;
        let _ = decode_split(&bytes);
    }
}

#[test]
fn float32_weights_widen_but_never_narrow() {
    let m32 = TnfModel::<f32>::new(&ModelConfig::default(), 4).unwrap();
    let wide: TnfModel<f64> = Checkpoint::from_model(&m32, 0.0, None).to_model().unwrap();
    for ((_, _, a), (_, _, b)) in m32.store.iter().zip(wide.store.iter()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| f64::from(*x) == *y));
    }
    let ck64 = Checkpoint::from_model(&wide, 0.0, None);
    assert!(matches!(ck64.to_model::<f32>(), Err(Error::Data(_))));
}
