use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::field::{CoordinateSet, PairSet, SignalSet};
use crate::numerics::{
    backward_gradients, finite_difference_check, GradCheckOptions, ParameterStore, Tape,
};

const ALL: [Architecture; 3] = [
    Architecture::CrossAttention,
    Architecture::TransformerEncoder,
    Architecture::MlpMixer,
];

fn random_pairs(n: usize, c: &ScoreFieldConfig, t: usize, rng: &mut ChaCha8Rng) -> PairSet {
    let coords: Vec<f64> = (0..n * c.coord_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let signals: Vec<f64> = (0..n * c.signal_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    PairSet::new(
        CoordinateSet::new(n, c.coord_dim, coords).unwrap(),
        SignalSet::new(n, c.signal_dim, signals).unwrap(),
        t,
    )
    .unwrap()
}

fn setup(arch: Architecture) -> (ScoreField, ParameterStore<f64>, PairSet, PairSet) {
    let mut config = ScoreFieldConfig::tiny(arch);
    config.signal_dim = 3;
    let model = ScoreField::new(config.clone(), 100).unwrap();
    let params = model.init_params::<f64>(7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ctx = random_pairs(config.n_tokens, &config, 40, &mut rng);
    let qry = random_pairs(5, &config, 40, &mut rng);
    (model, params, ctx, qry)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn output_shape_matches_queries() {
    for arch in ALL {
        let (model, params, ctx, qry) = setup(arch);
        let out = model.eval(&params, &ctx, &qry).unwrap();
        assert_eq!((out.len(), out.dim()), (5, 3), "{arch}");
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn context_order_does_not_matter() {
    for arch in [Architecture::CrossAttention, Architecture::TransformerEncoder] {
        let (model, params, ctx, qry) = setup(arch);
        let base = model.eval(&params, &ctx, &qry).unwrap();
        let mut perm: Vec<usize> = (0..ctx.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
        let shuffled = model.eval(&params, &ctx.select(&perm), &qry).unwrap();
        assert!(max_diff(base.data(), shuffled.data()) < 1e-6, "{arch}");
    }
}

#[test]
fn query_permutation_permutes_outputs() {
    for arch in ALL {
        let (model, params, ctx, qry) = setup(arch);
        let base = model.eval(&params, &ctx, &qry).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let out = model.eval(&params, &ctx, &qry.select(&perm)).unwrap();
        assert!(max_diff(out.data(), base.select(&perm).data()) < 1e-6, "{arch}");
    }
}

#[test]
fn each_query_is_evaluated_independently() {
    for arch in ALL {
        let (model, params, ctx, qry) = setup(arch);
        let batched = model.eval(&params, &ctx, &qry).unwrap();
        for i in 0..qry.len() {
            let single = model.eval(&params, &ctx, &qry.select(&[i])).unwrap();
            assert!(max_diff(single.data(), batched.row(i)) < 1e-6, "{arch}");
        }
    }
}

#[test]
fn f32_and_f64_agree_closely() {
    let (model, params, ctx, qry) = setup(Architecture::CrossAttention);
    let p32 = model.init_params::<f32>(7).unwrap();
    let a = model.eval(&params, &ctx, &qry).unwrap();
    let b = model.eval(&p32, &ctx, &qry).unwrap();
    assert!(max_diff(a.data(), b.data()) < 1e-4);
}

#[test]
fn initialization_is_seeded() {
    let model = ScoreField::new(ScoreFieldConfig::tiny(Architecture::CrossAttention), 10).unwrap();
    let a = model.init_params::<f32>(1).unwrap();
    let b = model.init_params::<f32>(1).unwrap();
    let c = model.init_params::<f32>(2).unwrap();
    let flat = |s: &ParameterStore<f32>| -> Vec<u32> {
        s.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
    assert_eq!(a.len(), model.parameter_shapes().len());
    assert_eq!(a.num_elements(), model.num_parameters());
    model.check_params(&a).unwrap();
}

#[test]
fn truncated_init_stays_within_two_sigma() {
    let model = ScoreField::new(ScoreFieldConfig::tiny(Architecture::CrossAttention), 10).unwrap();
    let p = model.init_params::<f64>(5).unwrap();
    let w = p.get("encoder0.cross.attn.q.w").unwrap();
    let bound = 2.0 / (w.shape()[0] as f64).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert!(p.get("out_norm.gain").unwrap().data().iter().all(|&v| v == 1.0));
    assert!(p.get("out.b").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn mismatched_parameters_are_rejected() {
    let model = ScoreField::new(ScoreFieldConfig::tiny(Architecture::CrossAttention), 10).unwrap();
    let other = ScoreField::new(ScoreFieldConfig::tiny(Architecture::TransformerEncoder), 10).unwrap();
    let p = other.init_params::<f64>(0).unwrap();
    assert!(model.check_params(&p).is_err());
    let mut wider = ScoreFieldConfig::tiny(Architecture::CrossAttention);
    wider.n_latents = 9;
    let p = ScoreField::new(wider, 10).unwrap().init_params::<f64>(0).unwrap();
    assert!(model.check_params(&p).is_err());
}

#[test]
fn timesteps_must_agree() {
    let (model, params, ctx, mut qry) = setup(Architecture::CrossAttention);
    qry.t = 41;
    assert!(model.eval(&params, &ctx, &qry).is_err());
}

#[test]
fn mixer_requires_its_token_count() {
    let (model, params, ctx, qry) = setup(Architecture::MlpMixer);
    let fewer = ctx.select(&[0, 1, 2]);
    assert!(model.eval(&params, &fewer, &qry).is_err());
}

#[test]
fn invalid_configs_fail() {
    let mut c = ScoreFieldConfig::tiny(Architecture::CrossAttention);
    c.n_heads = 3;
    assert!(ScoreField::new(c, 10).is_err());
    let mut c = ScoreFieldConfig::tiny(Architecture::CrossAttention);
    c.n_latents = 0;
    assert!(ScoreField::new(c, 10).is_err());
    assert!(ScoreField::new(ScoreFieldConfig::tiny(Architecture::CrossAttention), 0).is_err());
}

#[test]
fn pair_features_layout() {
    let (model, _, ctx, _) = setup(Architecture::CrossAttention);
    let c = model.config();
    let f = model.context_embedding().features(&ctx, 0.4);
    assert_eq!(f.cols(), c.pre_projection_width());
    assert_eq!(f.cols(), 2 * 3 * 2 + 2 + 3 + 2 * 4 + 1);
    let time_start = f.cols() - (2 * c.time_freqs + 1);
    for r in 1..f.rows() {
        assert_eq!(&f.row(r)[time_start..], &f.row(0)[time_start..]);
    }
    assert_eq!(*f.row(0).last().unwrap(), 0.4);
    // raw coordinates and signal sit after the coordinate encoding
    let coord_enc = 2 * c.coord_freqs * c.coord_dim;
    assert_eq!(&f.row(2)[coord_enc..coord_enc + 2], ctx.coords.row(2));
    assert_eq!(&f.row(2)[coord_enc + 2..coord_enc + 5], ctx.signals.row(2));
}

#[test]
fn embedding_equals_single_projection_of_features() {
    let (model, params, ctx, _) = setup(Architecture::CrossAttention);
    let emb = model.context_embedding();
    let tape = Tape::<f64>::new();
    let bound = tape.bind(&params).unwrap();
    let e = emb.forward(&tape, &bound, &ctx, 0.4).unwrap();
    let e = tape.value(e);
    let feats = emb.features(&ctx, 0.4);
    // stack the three weight blocks into one projection
    let mut w = Vec::new();
    for block in ["coord", "signal", "time"] {
        w.extend_from_slice(params.get(&format!("context_embed.{block}.w")).unwrap().data());
    }
    let b = params.get("context_embed.time.b").unwrap().data();
    let d = model.config().d_latent;
    for r in 0..feats.rows() {
        for j in 0..d {
            let mut acc = b[j];
            for (k, x) in feats.row(r).iter().enumerate() {
                acc += x * w[k * d + j];
            }
            assert!((acc - e.data()[r * d + j]).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_attention_with_one_key_returns_value_path() {
    let mut reg = layers_registry();
    let ca = CrossAttention::new_for_test(&mut reg, 4, 2);
    let params = reg_init(&reg);
    let tape = Tape::<f64>::new();
    let bound = tape.bind(&params).unwrap();
    let x = tape.constant_from(vec![3, 4], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
    let kv_data = vec![0.3, -1.2, 0.8, 2.0];
    let kv = tape.constant_from(vec![1, 4], kv_data.clone()).unwrap();
    let out = ca.forward(&tape, &bound, x, kv).unwrap();
    // independent oracle: LN(kv) -> value proj -> output proj, added to x
    let mean = kv_data.iter().sum::<f64>() / 4.0;
    let var = kv_data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    let normed: Vec<f64> = kv_data.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect();
    let affine = |name: &str, input: &[f64]| -> Vec<f64> {
        let w = params.get(&format!("{name}.w")).unwrap();
        let b = params.get(&format!("{name}.b")).unwrap().data();
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        (0..cols)
            .map(|j| b[j] + (0..rows).map(|k| input[k] * w.data()[k * cols + j]).sum::<f64>())
            .collect()
    };
    let v = affine("ca.attn.v", &normed);
    let o = affine("ca.attn.out", &v);
    let got = tape.value(out);
    let xv = tape.value(x);
    for r in 0..3 {
        for j in 0..4 {
            let want = xv.data()[r * 4 + j] + o[j];
            assert!((got.data()[r * 4 + j] - want).abs() < 1e-12);
        }
    }
}

fn layers_registry() -> super::layers::ParamRegistry {
    super::layers::ParamRegistry::default()
}

fn reg_init(reg: &super::layers::ParamRegistry) -> ParameterStore<f64> {
    reg.initialize(&mut ChaCha8Rng::seed_from_u64(9)).unwrap()
}

fn loss_on(
    model: &ScoreField,
    ctx: &PairSet,
    qry: &PairSet,
    target: &[f64],
    params: &ParameterStore<f64>,
) -> (Tape<f64>, crate::numerics::Var) {
    let tape = Tape::new();
    let bound = tape.bind(params).unwrap();
    let out = model.forward(&tape, &bound, ctx, qry).unwrap();
    let t = tape.constant_from(tape.shape(out), target.to_vec()).unwrap();
    let diff = tape.sub(out, t).unwrap();
    let sq = tape.mul(diff, diff).unwrap();
    let loss = tape.mean(sq).unwrap();
    (tape, loss)
}

#[test]
fn network_gradients_match_finite_differences() {
    for arch in ALL {
        let (model, mut params, ctx, qry) = setup(arch);
        let target: Vec<f64> = (0..qry.len() * 3).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4).collect();
        let report = finite_difference_check(
            &mut params,
            |p| {
                let (tape, loss) = loss_on(&model, &ctx, &qry, &target, p);
                let v = tape.scalar_value(loss);
                backward_gradients(&tape, loss, p)?;
                Ok(v)
            },
            |p| {
                let (tape, loss) = loss_on(&model, &ctx, &qry, &target, p);
                Ok(tape.scalar_value(loss))
            },
            GradCheckOptions { tolerance: 1e-4, ..Default::default() },
        )
        .unwrap();
        let worst = report.worst().unwrap();
        assert!(report.passed(), "{arch}: {} rel {:e}", worst.name, worst.rel_error);
    }
}
