//! Building blocks of the score networks. Layers only hold parameter names;
//! weights live in a [`ParameterStore`] and are bound onto a tape per pass.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{encode_scalar_into, fourier_encode, Matrix, PairSet};
use crate::numerics::{Bound, ParameterStore, Scalar, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const LATENT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Truncated normal (±2σ) with `σ = 1/√fan_in`.
    FanIn(usize),
    Zeros,
    Ones,
    /// Small-variance normal for the learnable latent array.
    Latent,
}

/// Collects parameter declarations in construction order, then draws their
/// initial values from one RNG stream in that same order.
#[derive(Default)]
pub(crate) struct ParamRegistry {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl ParamRegistry {
    fn declare(&mut self, name: String, shape: Vec<usize>, init: Init) -> String {
        self.specs.push((name.clone(), shape, init));
        name
    }

    pub(crate) fn declare_latents(&mut self, name: &str, n: usize, d: usize) {
        self.declare(name.to_string(), vec![n, d], Init::Latent);
    }

    pub(crate) fn shapes(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.specs.iter().map(|(n, s, _)| (n.as_str(), s.as_slice()))
    }

    pub(crate) fn initialize(&self, rng: &mut impl Rng) -> Result<ParameterStore<f64>> {
        let mut store = ParameterStore::new();
        for (name, shape, init) in &self.specs {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match *init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Latent => (0..n)
                    .map(|_| LATENT_STD * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                Init::FanIn(fan_in) => {
                    let std = 1.0 / (fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| loop {
                            let z: f64 = rng.sample(StandardNormal);
                            if z.abs() <= 2.0 {
                                break z * std;
                            }
                        })
                        .collect()
                }
            };
            store.insert(name.clone(), Tensor::new(shape.clone(), data)?)?;
        }
        Ok(store)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: Option<String>,
}

impl Linear {
    pub(crate) fn new(reg: &mut ParamRegistry, prefix: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: reg.declare(format!("{prefix}.w"), vec![d_in, d_out], Init::FanIn(d_in)),
            b: Some(reg.declare(format!("{prefix}.b"), vec![d_out], Init::Zeros)),
        }
    }

    pub fn weight_name(&self) -> &str {
        &self.w
    }

    pub fn bias_name(&self) -> Option<&str> {
        self.b.as_deref()
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(&self.w)?)?;
        match &self.b {
            Some(b) => tape.add_row(y, p.get(b)?),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: String,
    bias: String,
}

impl LayerNorm {
    pub(crate) fn new(reg: &mut ParamRegistry, prefix: &str, d: usize) -> Self {
        LayerNorm {
            gain: reg.declare(format!("{prefix}.gain"), vec![d], Init::Ones),
            bias: reg.declare(format!("{prefix}.bias"), vec![d], Init::Zeros),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.get(&self.gain)?, p.get(&self.bias)?, S::of(LN_EPS))
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub(crate) fn new(reg: &mut ParamRegistry, prefix: &str, d: usize, hidden: usize) -> Self {
        Mlp {
            fc1: Linear::new(reg, &format!("{prefix}.fc1"), d, hidden),
            fc2: Linear::new(reg, &format!("{prefix}.fc2"), hidden, d),
        }
    }

    pub fn first(&self) -> &Linear {
        &self.fc1
    }

    pub fn second(&self) -> &Linear {
        &self.fc2
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.gelu(h)?;
        self.fc2.forward(tape, p, h)
    }
}

/// Multi-head scaled dot-product attention with input and output
/// projections.
#[derive(Clone, Debug)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    d_head: usize,
}

impl Attention {
    pub(crate) fn new(
        reg: &mut ParamRegistry,
        prefix: &str,
        d_query: usize,
        d_kv: usize,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {d_model} not divisible into {heads} heads"
            )));
        }
        Ok(Attention {
            q: Linear::new(reg, &format!("{prefix}.q"), d_query, d_model),
            k: Linear::new(reg, &format!("{prefix}.k"), d_kv, d_model),
            v: Linear::new(reg, &format!("{prefix}.v"), d_kv, d_model),
            out: Linear::new(reg, &format!("{prefix}.out"), d_model, d_query),
            heads,
            d_head: d_model / heads,
        })
    }

    pub fn value(&self) -> &Linear {
        &self.v
    }

    pub fn output(&self) -> &Linear {
        &self.out
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var, kv: Var) -> Result<Var> {
        let q = self.q.forward(tape, p, x)?;
        let k = self.k.forward(tape, p, kv)?;
        let v = self.v.forward(tape, p, kv)?;
        let scale = S::of(1.0 / (self.d_head as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                let start = h * self.d_head;
                (
                    tape.slice_cols(q, start, self.d_head)?,
                    tape.slice_cols(k, start, self.d_head)?,
                    tape.slice_cols(v, start, self.d_head)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale)?;
            let weights = tape.softmax(scores, 1)?;
            outs.push(tape.matmul(weights, vh)?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        self.out.forward(tape, p, joined)
    }
}

/// `x + Attention(LN(x), LN(kv))`: rows of `x` attend to all rows of `kv`.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    norm_q: LayerNorm,
    norm_kv: LayerNorm,
    attn: Attention,
}

impl CrossAttention {
    pub(crate) fn new(
        reg: &mut ParamRegistry,
        prefix: &str,
        d_query: usize,
        d_kv: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(CrossAttention {
            norm_q: LayerNorm::new(reg, &format!("{prefix}.norm_q"), d_query),
            norm_kv: LayerNorm::new(reg, &format!("{prefix}.norm_kv"), d_kv),
            attn: Attention::new(reg, &format!("{prefix}.attn"), d_query, d_kv, d_query, heads)?,
        })
    }

    #[cfg(test)]
    pub(crate) fn new_for_test(reg: &mut ParamRegistry, d: usize, heads: usize) -> Self {
        CrossAttention::new(reg, "ca", d, d, heads).unwrap()
    }

    pub fn attention(&self) -> &Attention {
        &self.attn
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var, kv: Var) -> Result<Var> {
        let q = self.norm_q.forward(tape, p, x)?;
        let kv = self.norm_kv.forward(tape, p, kv)?;
        let a = self.attn.forward(tape, p, q, kv)?;
        tape.add(x, a)
    }
}

/// Pre-norm residual MLP: `x + MLP(LN(x))`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    norm: LayerNorm,
    mlp: Mlp,
}

impl FeedForward {
    pub(crate) fn new(reg: &mut ParamRegistry, prefix: &str, d: usize, hidden: usize) -> Self {
        FeedForward {
            norm: LayerNorm::new(reg, &format!("{prefix}.norm"), d),
            mlp: Mlp::new(reg, &format!("{prefix}.mlp"), d, hidden),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, p, x)?;
        let h = self.mlp.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

/// Pre-norm transformer block: self-attention then MLP, both residual.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    norm: LayerNorm,
    attn: Attention,
    ff: FeedForward,
}

impl SelfAttentionBlock {
    pub(crate) fn new(
        reg: &mut ParamRegistry,
        prefix: &str,
        d: usize,
        heads: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(SelfAttentionBlock {
            norm: LayerNorm::new(reg, &format!("{prefix}.norm"), d),
            attn: Attention::new(reg, &format!("{prefix}.attn"), d, d, d, heads)?,
            ff: FeedForward::new(reg, &format!("{prefix}.ff"), d, hidden),
        })
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, p, x)?;
        let a = self.attn.forward(tape, p, h, h)?;
        let x = tape.add(x, a)?;
        self.ff.forward(tape, p, x)
    }
}

/// MLP-mixer block over a fixed token count: token mixing across rows,
/// then channel mixing across columns, each pre-norm and residual.
#[derive(Clone, Debug)]
pub struct MixerBlock {
    tokens: usize,
    norm_tokens: LayerNorm,
    token_mlp: Mlp,
    channel: FeedForward,
}

impl MixerBlock {
    pub(crate) fn new(
        reg: &mut ParamRegistry,
        prefix: &str,
        tokens: usize,
        d: usize,
        token_hidden: usize,
        channel_hidden: usize,
    ) -> Self {
        MixerBlock {
            tokens,
            norm_tokens: LayerNorm::new(reg, &format!("{prefix}.norm_tokens"), d),
            token_mlp: Mlp::new(reg, &format!("{prefix}.token_mlp"), tokens, token_hidden),
            channel: FeedForward::new(reg, &format!("{prefix}.channel"), d, channel_hidden),
        }
    }

    pub fn token_mlp(&self) -> &Mlp {
        &self.token_mlp
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let rows = tape.shape(x)[0];
        if rows != self.tokens {
            return Err(Error::Shape {
                op: "mixer_block",
                lhs: vec![self.tokens],
                rhs: vec![rows],
            });
        }
        let h = self.norm_tokens.forward(tape, p, x)?;
        let ht = tape.transpose(h)?;
        let mixed = self.token_mlp.forward(tape, p, ht)?;
        let mixed = tape.transpose(mixed)?;
        let x = tape.add(x, mixed)?;
        self.channel.forward(tape, p, x)
    }
}

/// Learned projection of coordinate–signal pairs plus a shared timestep
/// encoding.
///
/// Mathematically one linear map applied to
/// `[fourier(m), m, y, fourier(t/T), t/T]`; the weight is stored in three
/// row blocks so the per-call time term is projected once and broadcast.
#[derive(Clone, Debug)]
pub struct PairEmbedding {
    coord: Linear,
    signal: Linear,
    time: Linear,
    coord_freqs: usize,
    time_freqs: usize,
    coord_dim: usize,
    signal_dim: usize,
}

impl PairEmbedding {
    pub(crate) fn new(
        reg: &mut ParamRegistry,
        prefix: &str,
        coord_dim: usize,
        signal_dim: usize,
        coord_freqs: usize,
        time_freqs: usize,
        d: usize,
    ) -> Self {
        let coord_width = 2 * coord_freqs * coord_dim + coord_dim;
        let time_width = 2 * time_freqs + 1;
        // All three blocks feed one output; fan-in is the full input width.
        let fan_in = coord_width + signal_dim + time_width;
        let block = |reg: &mut ParamRegistry, name: &str, rows: usize| Linear {
            w: reg.declare(format!("{prefix}.{name}.w"), vec![rows, d], Init::FanIn(fan_in)),
            b: None,
        };
        let coord = block(reg, "coord", coord_width);
        let signal = block(reg, "signal", signal_dim);
        let time = Linear {
            b: Some(reg.declare(format!("{prefix}.time.b"), vec![d], Init::Zeros)),
            ..block(reg, "time", time_width)
        };
        PairEmbedding {
            coord,
            signal,
            time,
            coord_freqs,
            time_freqs,
            coord_dim,
            signal_dim,
        }
    }

    pub fn coord_features(&self, pairs: &PairSet) -> Matrix {
        let enc = fourier_encode(pairs.coords.matrix(), self.coord_freqs);
        hcat(&enc, pairs.coords.matrix())
    }

    pub fn time_features(&self, t_norm: f64) -> Matrix {
        let mut row = Vec::with_capacity(2 * self.time_freqs + 1);
        encode_scalar_into(t_norm, self.time_freqs, &mut row);
        row.push(t_norm);
        Matrix::new(1, row.len(), row).expect("row width")
    }

    /// The unprojected per-pair features.
    pub fn features(&self, pairs: &PairSet, t_norm: f64) -> Matrix {
        let coord = self.coord_features(pairs);
        let with_signal = hcat(&coord, pairs.signals.matrix());
        let time = self.time_features(t_norm);
        let mut data = Vec::with_capacity(pairs.len() * (with_signal.cols() + time.cols()));
        for r in 0..pairs.len() {
            data.extend_from_slice(with_signal.row(r));
            data.extend_from_slice(time.data());
        }
        Matrix::new(pairs.len(), with_signal.cols() + time.cols(), data).expect("row width")
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound,
        pairs: &PairSet,
        t_norm: f64,
    ) -> Result<Var> {
        if pairs.coords.dim() != self.coord_dim || pairs.signals.dim() != self.signal_dim {
            return Err(Error::Shape {
                op: "embed_pairs",
                lhs: vec![self.coord_dim, self.signal_dim],
                rhs: vec![pairs.coords.dim(), pairs.signals.dim()],
            });
        }
        let coord = constant(tape, &self.coord_features(pairs))?;
        let signal = constant(tape, pairs.signals.matrix())?;
        let time = constant(tape, &self.time_features(t_norm))?;
        let e = self.coord.forward(tape, p, coord)?;
        let s = self.signal.forward(tape, p, signal)?;
        let e = tape.add(e, s)?;
        let tv = self.time.forward(tape, p, time)?;
        tape.add_row(e, tv)
    }
}

fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(a.rows() * (a.cols() + b.cols()));
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Matrix::new(a.rows(), a.cols() + b.cols(), data).expect("row counts match")
}

pub(crate) fn constant<S: Scalar>(tape: &Tape<S>, m: &Matrix) -> Result<Var> {
    tape.constant_from(
        vec![m.rows(), m.cols()],
        m.data().iter().map(|&v| S::of(v)).collect(),
    )
}
