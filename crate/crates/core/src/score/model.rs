use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{Matrix, PairSet, SignalSet};
use crate::numerics::{Bound, ParameterStore, Scalar, Tape, Var};

use super::config::{Architecture, ScoreFieldConfig};
use super::layers::{
    CrossAttention, FeedForward, LayerNorm, Linear, MixerBlock, PairEmbedding, ParamRegistry,
    SelfAttentionBlock,
};

/// Cross-attention to the context followed by its MLP, then self-attention
/// blocks over the latents.
#[derive(Clone, Debug)]
struct EncoderBlock {
    cross: CrossAttention,
    cross_ff: FeedForward,
    selfs: Vec<SelfAttentionBlock>,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    cross: CrossAttention,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
enum Body {
    Latent {
        latents: String,
        encoder: Vec<EncoderBlock>,
        decoder: Vec<DecoderBlock>,
    },
    Transformer {
        blocks: Vec<SelfAttentionBlock>,
        pool_norm: LayerNorm,
        head: PooledHead,
    },
    Mixer {
        blocks: Vec<MixerBlock>,
        pool_norm: LayerNorm,
        head: PooledHead,
    },
}

/// Query head for pooled encoders: concatenate each query embedding with
/// the pooled context, project, then residual MLPs.
#[derive(Clone, Debug)]
struct PooledHead {
    merge: Linear,
    blocks: Vec<FeedForward>,
}

impl PooledHead {
    fn new(reg: &mut ParamRegistry, c: &ScoreFieldConfig) -> Self {
        let d = c.d_latent;
        PooledHead {
            merge: Linear::new(reg, "head.merge", 2 * d, d),
            blocks: (0..c.decoder_blocks)
                .map(|i| FeedForward::new(reg, &format!("head.ff{i}"), d, c.mlp_ratio * d))
                .collect(),
        }
    }

    fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, q: Var, pooled: Var) -> Result<Var> {
        let n = tape.shape(q)[0];
        let rep = tape.repeat_rows(pooled, n)?;
        let joined = tape.concat_cols(&[q, rep])?;
        let mut h = self.merge.forward(tape, p, joined)?;
        for b in &self.blocks {
            h = b.forward(tape, p, h)?;
        }
        Ok(h)
    }
}

/// Score network mapping a context pair set and a query pair set at the
/// same timestep to a noise prediction per query.
#[derive(Clone, Debug)]
pub struct ScoreField {
    config: ScoreFieldConfig,
    steps: usize,
    registry_shapes: Vec<(String, Vec<usize>)>,
    context_embed: PairEmbedding,
    query_embed: PairEmbedding,
    body: Body,
    out_norm: LayerNorm,
    out: Linear,
}

impl ScoreField {
    /// `steps` is the diffusion length used to normalize timesteps.
    pub fn new(config: ScoreFieldConfig, steps: usize) -> Result<Self> {
        config.validate()?;
        if steps == 0 {
            return Err(Error::Config("diffusion steps must be at least 1".into()));
        }
        let (reg, field) = Self::build(config, steps)?;
        Ok(ScoreField {
            registry_shapes: reg.shapes().map(|(n, s)| (n.to_string(), s.to_vec())).collect(),
            ..field
        })
    }

    fn build(c: ScoreFieldConfig, steps: usize) -> Result<(ParamRegistry, ScoreField)> {
        let mut reg = ParamRegistry::default();
        let d = c.d_latent;
        let hidden = c.mlp_ratio * d;
        let embed = |reg: &mut ParamRegistry, name: &str| {
            PairEmbedding::new(reg, name, c.coord_dim, c.signal_dim, c.coord_freqs, c.time_freqs, d)
        };
        let context_embed = embed(&mut reg, "context_embed");
        let query_embed = embed(&mut reg, "query_embed");
        let body = match c.architecture {
            Architecture::CrossAttention => {
                let latents = "latents".to_string();
                reg.declare_latents(&latents, c.n_latents, d);
                let mut encoder = Vec::with_capacity(c.n_blocks);
                for i in 0..c.n_blocks {
                    let p = format!("encoder{i}");
                    let cross = CrossAttention::new(&mut reg, &format!("{p}.cross"), d, d, c.n_heads)?;
                    let cross_ff = FeedForward::new(&mut reg, &format!("{p}.cross_ff"), d, hidden);
                    let selfs = (0..c.self_attends_per_block)
                        .map(|j| {
                            SelfAttentionBlock::new(&mut reg, &format!("{p}.self{j}"), d, c.n_heads, hidden)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    encoder.push(EncoderBlock { cross, cross_ff, selfs });
                }
                let mut decoder = Vec::with_capacity(c.decoder_blocks);
                for i in 0..c.decoder_blocks {
                    let p = format!("decoder{i}");
                    decoder.push(DecoderBlock {
                        cross: CrossAttention::new(&mut reg, &format!("{p}.cross"), d, d, c.n_heads)?,
                        ff: FeedForward::new(&mut reg, &format!("{p}.ff"), d, hidden),
                    });
                }
                Body::Latent { latents, encoder, decoder }
            }
            Architecture::TransformerEncoder => {
                let blocks = (0..c.n_blocks * c.self_attends_per_block)
                    .map(|i| SelfAttentionBlock::new(&mut reg, &format!("encoder{i}"), d, c.n_heads, hidden))
                    .collect::<Result<Vec<_>>>()?;
                let pool_norm = LayerNorm::new(&mut reg, "pool_norm", d);
                let head = PooledHead::new(&mut reg, &c);
                Body::Transformer { blocks, pool_norm, head }
            }
            Architecture::MlpMixer => {
                let blocks = (0..c.n_blocks * c.self_attends_per_block)
                    .map(|i| {
                        MixerBlock::new(
                            &mut reg,
                            &format!("mixer{i}"),
                            c.n_tokens,
                            d,
                            c.mlp_ratio * c.n_tokens,
                            hidden,
                        )
                    })
                    .collect();
                let pool_norm = LayerNorm::new(&mut reg, "pool_norm", d);
                let head = PooledHead::new(&mut reg, &c);
                Body::Mixer { blocks, pool_norm, head }
            }
        };
        let out_norm = LayerNorm::new(&mut reg, "out_norm", d);
        let out = Linear::new(&mut reg, "out", d, c.signal_dim);
        let field = ScoreField {
            config: c,
            steps,
            registry_shapes: Vec::new(),
            context_embed,
            query_embed,
            body,
            out_norm,
            out,
        };
        Ok((reg, field))
    }

    pub fn config(&self) -> &ScoreFieldConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn context_embedding(&self) -> &PairEmbedding {
        &self.context_embed
    }

    pub fn query_embedding(&self) -> &PairEmbedding {
        &self.query_embed
    }

    /// Parameter names and shapes in construction order.
    pub fn parameter_shapes(&self) -> &[(String, Vec<usize>)] {
        &self.registry_shapes
    }

    pub fn num_parameters(&self) -> usize {
        self.registry_shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Deterministic initialization: identical seeds give bit-identical
    /// parameters. Values are drawn in f64 and rounded to `S`.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> Result<ParameterStore<S>> {
        let (reg, _) = Self::build(self.config.clone(), self.steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(reg.initialize(&mut rng)?.cast())
    }

    /// Fails unless `params` holds exactly the expected names and shapes.
    pub fn check_params<S: Scalar>(&self, params: &ParameterStore<S>) -> Result<()> {
        if params.len() != self.registry_shapes.len() {
            return Err(Error::Contract(format!(
                "parameter store has {} tensors, model expects {}",
                params.len(),
                self.registry_shapes.len()
            )));
        }
        for (name, shape) in &self.registry_shapes {
            let t = params.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "parameter",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn normalized_time(&self, t: usize) -> f64 {
        t as f64 / self.steps as f64
    }

    /// Records the network on `tape` and returns the `[n_query × signal_dim]`
    /// prediction.
    pub fn forward<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound,
        context: &PairSet,
        query: &PairSet,
    ) -> Result<Var> {
        if context.t != query.t {
            return Err(Error::Contract(format!(
                "context timestep {} differs from query timestep {}",
                context.t, query.t
            )));
        }
        if context.is_empty() || query.is_empty() {
            return Err(Error::contract("score evaluation needs non-empty context and query sets"));
        }
        let tn = self.normalized_time(context.t);
        let ctx = self.context_embed.forward(tape, p, context, tn)?;
        let qry = self.query_embed.forward(tape, p, query, tn)?;
        let h = match &self.body {
            Body::Latent { latents, encoder, decoder } => {
                let mut z = p.get(latents)?;
                for block in encoder {
                    z = block.cross.forward(tape, p, z, ctx)?;
                    z = block.cross_ff.forward(tape, p, z)?;
                    for s in &block.selfs {
                        z = s.forward(tape, p, z)?;
                    }
                }
                let mut h = qry;
                for block in decoder {
                    h = block.cross.forward(tape, p, h, z)?;
                    h = block.ff.forward(tape, p, h)?;
                }
                h
            }
            Body::Transformer { blocks, pool_norm, head } => {
                let mut z = ctx;
                for b in blocks {
                    z = b.forward(tape, p, z)?;
                }
                let z = pool_norm.forward(tape, p, z)?;
                let pooled = tape.mean_rows(z)?;
                head.forward(tape, p, qry, pooled)?
            }
            Body::Mixer { blocks, pool_norm, head } => {
                let mut z = ctx;
                for b in blocks {
                    z = b.forward(tape, p, z)?;
                }
                let z = pool_norm.forward(tape, p, z)?;
                let pooled = tape.mean_rows(z)?;
                head.forward(tape, p, qry, pooled)?
            }
        };
        let h = self.out_norm.forward(tape, p, h)?;
        self.out.forward(tape, p, h)
    }

    /// Evaluates the network on a fresh tape.
    pub fn eval<S: Scalar>(
        &self,
        params: &ParameterStore<S>,
        context: &PairSet,
        query: &PairSet,
    ) -> Result<SignalSet> {
        self.check_params(params)?;
        let tape = Tape::new();
        let bound = tape.bind(params)?;
        let out = self.forward(&tape, &bound, context, query)?;
        let value = tape.value(out);
        let data = value.data().iter().map(|v| v.as_f64()).collect();
        Ok(SignalSet::from_matrix(Matrix::new(query.len(), self.config.signal_dim, data)?))
    }
}

/// Convenience wrapper matching the free-function form.
pub fn score_eval<S: Scalar>(
    model: &ScoreField,
    params: &ParameterStore<S>,
    context: &PairSet,
    query: &PairSet,
) -> Result<SignalSet> {
    model.eval(params, context, query)
}
