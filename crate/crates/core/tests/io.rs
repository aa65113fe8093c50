use std::path::Path;

use dpf_core::engine::Trainer;
use dpf_core::error::Error;
use dpf_core::field::{FieldSample, MetricSpaceSpec, SignalSet};
use dpf_core::io::dataset::{blob_image, occupancy_solid, TWO_MODE_MEANS};
use dpf_core::io::{
    encode_pixmap, decode_pixmap, load_checkpoint, load_dataset, save_checkpoint,
    synthesize_dataset, synthesize_fields, Checkpoint, DatasetKind, FieldTensor, RunConfig,
};
use dpf_core::score::Architecture;

const TINY: &str = r#"
seed = 5

[schedule]
steps = 50

[space]
kind = "euclidean_grid_2d"
height = 4
width = 4

[model]
architecture = "cross_attention"
n_latents = 4
d_latent = 8
n_blocks = 1
self_attends_per_block = 1
n_heads = 2
coord_freqs = 2
time_freqs = 3
signal_dim = 3

[pairs]
n_context = 8
n_query = 8

[train]
steps = 3
batch_size = 2
ema_decay = 0.5
"#;

fn trained_checkpoint() -> Checkpoint {
    let config = RunConfig::from_toml_str(TINY).unwrap();
    let fields: Vec<FieldSample> = (0..3)
        .map(|i| {
            let v = i as f64 * 0.3 - 0.3;
            FieldSample::on_space(config.space, SignalSet::new(16, 3, vec![v; 48]).unwrap())
                .unwrap()
        })
        .collect();
    let ckpt = Checkpoint {
        config: config.clone(),
        seed: config.seed,
        step: 0,
        params: Default::default(),
        optimizer: None,
        ema: None,
    };
    let mut trainer = Trainer::new(
        ckpt.model().unwrap(),
        ckpt.schedule().unwrap(),
        config.pairs.clone(),
        config.train.clone(),
        config.seed,
    )
    .unwrap();
    trainer.run_until(&fields, 3, |_| {}).unwrap();
    Checkpoint::from_trainer(&trainer, &config)
}

#[test]
fn config_parses_and_round_trips() {
    let config = RunConfig::from_toml_str(TINY).unwrap();
    assert_eq!(config.model.architecture, Architecture::CrossAttention);
    assert_eq!(config.schedule.beta_end, 0.02);
    let again = RunConfig::from_toml_str(&config.to_toml_string()).unwrap();
    assert_eq!(config, again);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(RunConfig::from_toml_str(&TINY.replace("seed = 5", "seed = 5\nbogus = 1")).is_err());
    let bad_dim = TINY.replace("kind = \"euclidean_grid_2d\"\nheight = 4\nwidth = 4", "kind = \"sphere_dh\"\nbandwidth = 2");
    assert!(matches!(RunConfig::from_toml_str(&bad_dim), Err(Error::Config(_))));
    let too_many = TINY.replace("n_query = 8", "n_query = 17");
    assert!(RunConfig::from_toml_str(&too_many).is_err());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    save_checkpoint(&a, &ckpt).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&b, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.step, 3);
    for ((n1, t1), (n2, t2)) in ckpt.params.iter().zip(loaded.params.iter()) {
        assert_eq!(n1, n2);
        let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t1.data()), bits(t2.data()));
    }
    let opt = loaded.optimizer.clone().unwrap();
    assert_eq!(opt.step, 3);
    assert_eq!(opt.first, ckpt.optimizer.as_ref().unwrap().first);
    let ema = loaded.ema.as_ref().unwrap();
    assert_eq!(ema, ckpt.ema.as_ref().unwrap());
    assert_ne!(ema, &loaded.params);
    assert!(std::ptr::eq(loaded.sampling_params(), ema));
}

fn expect_format(path: &Path) -> String {
    match load_checkpoint(path) {
        Err(Error::Format { reason, .. }) => reason,
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn corrupt_checkpoints_fail_with_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = trained_checkpoint().encode();
    let p = dir.path().join("c.ckpt");

    std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
    assert!(expect_format(&p).contains("truncated"));

    std::fs::write(&p, &bytes[..10]).unwrap();
    assert!(expect_format(&p).contains("truncated"));

    let mut foreign = bytes.clone();
    foreign[0] = b'X';
    std::fs::write(&p, &foreign).unwrap();
    assert!(expect_format(&p).contains("magic"));

    let mut version = bytes.clone();
    version[4] = 9;
    std::fs::write(&p, &version).unwrap();
    assert!(expect_format(&p).contains("version"));

    let mut extra = bytes.clone();
    extra.push(0);
    std::fs::write(&p, &extra).unwrap();
    assert!(expect_format(&p).contains("trailing"));

    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn mismatched_config_is_refused_with_both_printed() {
    let ckpt = trained_checkpoint();
    let mut other = ckpt.config.clone();
    other.model.d_latent = 16;
    let err = ckpt.ensure_compatible(&other).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::ConfigMismatch { .. }));
    assert!(msg.contains("d_latent = 16") && msg.contains("d_latent = 8"), "{msg}");
    let mut longer = ckpt.config.clone();
    longer.train.steps = 100;
    ckpt.ensure_compatible(&longer).unwrap();
}

#[test]
fn field_tensor_round_trip_and_rejection() {
    let t = FieldTensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25]).unwrap();
    let bytes = t.encode();
    assert_eq!(&bytes[..4], b"FTEN");
    assert_eq!(bytes.len(), 4 + 4 + 2 * 8 + 4 + 6 * 4);
    let p = Path::new("mem");
    assert_eq!(FieldTensor::decode(&bytes, p).unwrap(), t);
    assert!(FieldTensor::decode(&bytes[..bytes.len() - 1], p).is_err());
    assert!(FieldTensor::decode(b"P6\n1 1\n255\n\0\0\0", p).is_err());
    assert!(FieldTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

fn grid(h: usize, w: usize, c: usize, data: Vec<f64>) -> FieldSample {
    FieldSample::on_space(
        MetricSpaceSpec::Grid2d { height: h, width: w },
        SignalSet::new(h * w, c, data).unwrap(),
    )
    .unwrap()
}

#[test]
fn pixmap_examples() {
    let black = encode_pixmap(&grid(2, 2, 3, vec![-1.0; 12])).unwrap();
    assert!(black.starts_with(b"P6\n2 2\n255\n"));
    assert!(black[11..].iter().all(|&b| b == 0));
    let white = encode_pixmap(&grid(2, 2, 1, vec![1.0; 4])).unwrap();
    assert!(white.starts_with(b"P5\n"));
    assert!(white[11..].iter().all(|&b| b == 255));

    let vals = vec![-1.0, 0.0, 1.0, 0.5, -0.5, 2.0, -3.0, 0.2, 0.9, 1.0, -1.0, 0.0];
    let bytes = encode_pixmap(&grid(2, 2, 3, vals.clone())).unwrap();
    // round((s + 1)·127.5) clamped to [0, 255]
    let want: Vec<u8> = vec![0, 128, 255, 191, 64, 255, 0, 153, 242, 255, 0, 128];
    assert_eq!(&bytes[11..], &want[..]);

    let back = decode_pixmap(&bytes, Path::new("mem")).unwrap();
    assert_eq!(back.space, MetricSpaceSpec::Grid2d { height: 2, width: 2 });
    assert_eq!(encode_pixmap(&back).unwrap(), bytes);

    assert!(encode_pixmap(&grid(1, 1, 2, vec![0.0, 0.0])).is_err());
    let sphere = FieldSample::on_space(
        MetricSpaceSpec::Sphere { bandwidth: 1 },
        SignalSet::new(4, 1, vec![0.0; 4]).unwrap(),
    )
    .unwrap();
    assert!(encode_pixmap(&sphere).is_err());
    assert!(decode_pixmap(b"P3\n1 1\n255\n1 2 3", Path::new("mem")).is_err());
}

#[test]
fn datasets_are_deterministic_and_hash_checked() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let m1 = synthesize_dataset(DatasetKind::TwoModeColors, 2, 9, d1.path()).unwrap();
    let m2 = synthesize_dataset(DatasetKind::TwoModeColors, 2, 9, d2.path()).unwrap();
    assert_eq!(m1.files.len(), 2);
    for e in &m1.files {
        let a = std::fs::read(d1.path().join(&e.file)).unwrap();
        let b = std::fs::read(d2.path().join(&e.file)).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(m1, m2);
    let ds = load_dataset(d1.path()).unwrap();
    assert_eq!(ds.fields.len(), 2);
    assert_eq!(ds.fields[0].signal_dim(), 3);

    let victim = d1.path().join(&m1.files[1].file);
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&victim, bytes).unwrap();
    match load_dataset(d1.path()) {
        Err(Error::Format { reason, .. }) => assert!(reason.contains("hash")),
        other => panic!("expected hash failure, got {other:?}"),
    }
}

#[test]
fn two_mode_colors_are_solid_and_near_their_cluster() {
    for lf in synthesize_fields(DatasetKind::TwoModeColors, 50, 1).unwrap() {
        let first = lf.field.signals.row(0).to_vec();
        assert!((0..64).all(|i| lf.field.signals.row(i) == first.as_slice()));
        let mean = TWO_MODE_MEANS[lf.label as usize];
        assert!(first.iter().all(|v| (v - mean).abs() < 0.5));
    }
}

#[test]
fn blobs_peak_at_exactly_one_center() {
    for lf in synthesize_fields(DatasetKind::GaussianBlobs2d, 20, 2).unwrap() {
        let s = lf.field.signals.data();
        let max = s.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
        let peaks: Vec<usize> = (0..s.len()).filter(|&i| s[i] == max).collect();
        assert_eq!(peaks, vec![lf.label as usize]);
    }
    let b = blob_image(4, 1, 2, 2.0).unwrap();
    assert_eq!(b.signals.row(1 * 4 + 2)[0], 1.0);
}

#[test]
fn checkerboards_alternate() {
    for lf in synthesize_fields(DatasetKind::Checkerboards, 10, 3).unwrap() {
        let s = lf.field.signals.data();
        let k = lf.label as usize;
        assert!(s.iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(s[0], -s[k]);
        assert_eq!(s[0], s[k - 1]);
    }
}

#[test]
fn sphere_occupancy_matches_voxel_count() {
    for r in [0.4, 0.6, 0.8] {
        let lf = occupancy_solid(0, r).unwrap();
        let inside = lf.field.signals.data().iter().filter(|&&v| v > 0.0).count();
        // brute-force count of voxel centers within the ball
        let mut count = 0;
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    let c = |i: usize| (2 * i + 1) as f64 / 16.0 - 1.0;
                    if c(x).powi(2) + c(y).powi(2) + c(z).powi(2) <= r * r {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(inside, count);
        let fraction = inside as f64 / 4096.0;
        let continuum = std::f64::consts::PI / 6.0 * r.powi(3);
        assert!((fraction - continuum).abs() / continuum < 0.15, "r={r} {fraction} vs {continuum}");
    }
    let cube = occupancy_solid(1, 0.5).unwrap();
    let inside = cube.field.signals.data().iter().filter(|&&v| v > 0.0).count();
    assert_eq!(inside, 8 * 8 * 8);
}

#[test]
fn spherical_blobs_live_on_the_sphere() {
    let lf = &synthesize_fields(DatasetKind::SphericalBlobs, 1, 4).unwrap()[0];
    assert_eq!(lf.field.space, MetricSpaceSpec::Sphere { bandwidth: 8 });
    assert_eq!(lf.field.len(), 256);
    assert!(lf.field.signals.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(DatasetKind::parse("nope").is_err());
    assert_eq!(DatasetKind::parse("checkerboards").unwrap(), DatasetKind::Checkerboards);
}
