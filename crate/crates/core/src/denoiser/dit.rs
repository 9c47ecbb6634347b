//! A tiny diffusion transformer with random, seeded weights.
//!
//! One token per latent cell. Each block runs pre-norm self-attention over all
//! tokens, then multi-query disentangled (MQD) cross-attention, then a
//! feedforward layer, each with a residual add. All matrix products use a
//! fixed per-row summation order, so a token's result never depends on which
//! other rows were computed alongside it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{cfg_combine, check_owners, Conditioning, Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::mask::RegionPartition;
use crate::prompt::PromptEmbedding;

const LN_EPS: f32 = 1e-5;
const FF_EXPANSION: usize = 4;

/// Bias-free dense layer; `weight` is `in_dim x out_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
}

impl Linear {
    fn random(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, std: f32) -> Self {
        let normal = Normal::new(0.0f32, std).expect("positive std");
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
        }
    }

    fn apply_row(&self, x: &[f32], out: &mut [f32]) {
        out.fill(0.0);
        for (k, &xk) in x.iter().enumerate() {
            let w = &self.weight[k * self.out_dim..(k + 1) * self.out_dim];
            for (o, &wk) in out.iter_mut().zip(w) {
                *o += xk * wk;
            }
        }
    }

    /// Applies the layer to each `in_dim`-wide row of `x`.
    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let rows = x.len() / self.in_dim;
        let mut out = vec![0.0; rows * self.out_dim];
        for (xr, or) in x
            .chunks_exact(self.in_dim)
            .zip(out.chunks_exact_mut(self.out_dim))
        {
            self.apply_row(xr, or);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub sa_q: Linear,
    pub sa_k: Linear,
    pub sa_v: Linear,
    pub sa_o: Linear,
    pub ca_q: Linear,
    pub ca_k: Linear,
    pub ca_v: Linear,
    pub ca_o: Linear,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DitWeights {
    pub input: Linear,
    pub blocks: Vec<BlockWeights>,
    pub output: Linear,
}

impl DitWeights {
    /// Draws every matrix from `N(0, 1/d_model)` in a fixed order.
    pub fn random(config: &DenoiserConfig, channels: usize) -> Self {
        let d = config.d_model;
        let std = 1.0 / (d as f32).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.weight_seed);
        let input = Linear::random(&mut rng, channels, d, std);
        let blocks = (0..config.blocks)
            .map(|_| BlockWeights {
                sa_q: Linear::random(&mut rng, d, d, std),
                sa_k: Linear::random(&mut rng, d, d, std),
                sa_v: Linear::random(&mut rng, d, d, std),
                sa_o: Linear::random(&mut rng, d, d, std),
                ca_q: Linear::random(&mut rng, d, d, std),
                ca_k: Linear::random(&mut rng, d, d, std),
                ca_v: Linear::random(&mut rng, d, d, std),
                ca_o: Linear::random(&mut rng, d, d, std),
                ff_in: Linear::random(&mut rng, d, FF_EXPANSION * d, std),
                ff_out: Linear::random(&mut rng, FF_EXPANSION * d, d, std),
            })
            .collect();
        let output = Linear::random(&mut rng, d, channels, std);
        Self {
            input,
            blocks,
            output,
        }
    }
}

/// Token activations entering or leaving a block (`z^{k,t}`).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockActivations {
    /// `n_tokens x d_model`, row-major; token `n` is latent cell `n`.
    pub tokens: Vec<f32>,
    pub d_model: usize,
    pub t: usize,
    pub block: usize,
}

impl BlockActivations {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len() / self.d_model
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.tokens[n * self.d_model..(n + 1) * self.d_model]
    }
}

/// Attention weights recorded by [`mqd_cross_attention`] for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub heads: usize,
    /// Owner of each key token (keys are all owners' prompt tokens,
    /// concatenated in partition entry order).
    pub key_owner: Vec<usize>,
    /// `n_tokens x heads x n_keys` post-softmax weights.
    pub weights: Vec<f32>,
    /// Times each query token was written by the merge.
    pub write_counts: Vec<u32>,
}

impl AttentionTrace {
    pub fn n_keys(&self) -> usize {
        self.key_owner.len()
    }

    pub fn row(&self, token: usize, head: usize) -> &[f32] {
        let m = self.n_keys();
        let start = (token * self.heads + head) * m;
        &self.weights[start..start + m]
    }
}

fn layer_norm(x: &[f32], d: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        out.extend(row.iter().map(|v| (v - mean) * inv));
    }
    out
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Scaled dot-product attention, multi-head. Disallowed keys get `-inf`
/// before the softmax, so their weight is exactly zero.
#[allow(clippy::too_many_arguments)]
fn attend(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    d: usize,
    heads: usize,
    allowed: impl Fn(usize, usize) -> bool,
    mut trace: Option<&mut Vec<f32>>,
) -> Result<Vec<f32>> {
    let n = q.len() / d;
    let m = k.len() / d;
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = vec![0.0f32; n * d];
    let mut scores = vec![0.0f32; m];
    for i in 0..n {
        for h in 0..heads {
            let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
            let mut max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                *s = if allowed(i, j) {
                    let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
                    qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale
                } else {
                    f32::NEG_INFINITY
                };
                max = max.max(*s);
            }
            if max == f32::NEG_INFINITY {
                return Err(Error::InvalidConfig(format!(
                    "query token {i} has no key it may attend to"
                )));
            }
            let mut sum = 0.0f32;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            for s in scores.iter_mut() {
                *s /= sum;
            }
            let oi = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
            for (j, &w) in scores.iter().enumerate() {
                let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
                for (o, &vv) in oi.iter_mut().zip(vj) {
                    *o += w * vv;
                }
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.extend_from_slice(&scores);
            }
        }
    }
    Ok(out)
}

fn gather_rows(x: &[f32], d: usize, rows: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(&x[r * d..(r + 1) * d]);
    }
    out
}

fn stack_prompts<'a>(prompts: impl Iterator<Item = &'a PromptEmbedding>) -> Vec<f32> {
    prompts.flat_map(|p| p.vectors().iter().copied()).collect()
}

fn check_prompt_width(prompt: &PromptEmbedding, d: usize) -> Result<()> {
    if prompt.d_model() != d {
        return Err(Error::dims(
            format!("prompt width {d}"),
            prompt.d_model(),
        ));
    }
    Ok(())
}

/// Standard cross-attention: every token attends to every token of `prompt`.
pub fn cross_attention(
    acts: &BlockActivations,
    prompt: &PromptEmbedding,
    weights: &BlockWeights,
    heads: usize,
) -> Result<BlockActivations> {
    let d = acts.d_model;
    check_prompt_width(prompt, d)?;
    let q = weights.ca_q.apply(&acts.tokens);
    let k = weights.ca_k.apply(prompt.vectors());
    let v = weights.ca_v.apply(prompt.vectors());
    let attn = attend(&q, &k, &v, d, heads, |_, _| true, None)?;
    Ok(BlockActivations {
        tokens: weights.ca_o.apply(&attn),
        ..acts.clone()
    })
}

/// Region-routed cross-attention. Tokens in each partition region attend only
/// to the owning layer's prompt tokens; results are scattered back so every
/// token is written exactly once. `prompts[j]` belongs to owner `j`.
pub fn mqd_cross_attention(
    acts: &BlockActivations,
    partition: &RegionPartition,
    prompts: &[&PromptEmbedding],
    weights: &BlockWeights,
    heads: usize,
) -> Result<(BlockActivations, AttentionTrace)> {
    mqd_inner(acts, partition, prompts, weights, heads, true)
}

fn mqd_inner(
    acts: &BlockActivations,
    partition: &RegionPartition,
    prompts: &[&PromptEmbedding],
    weights: &BlockWeights,
    heads: usize,
    traced: bool,
) -> Result<(BlockActivations, AttentionTrace)> {
    let d = acts.d_model;
    let n = acts.n_tokens();
    let (pw, ph) = partition.dims();
    if pw * ph != n {
        return Err(Error::dims(format!("{n} tokens"), pw * ph));
    }
    check_owners(partition, prompts.len())?;

    // Keys and values: every owner's prompt tokens, in entry order.
    let mut key_owner = Vec::new();
    for owner in partition.owners() {
        check_prompt_width(prompts[owner], d)?;
        key_owner.extend(std::iter::repeat_n(owner, prompts[owner].len()));
    }
    let stacked = stack_prompts(partition.owners().map(|o| prompts[o]));
    let k = weights.ca_k.apply(&stacked);
    let v = weights.ca_v.apply(&stacked);
    let m = key_owner.len();

    let mut merged = vec![0.0f32; n * d];
    let mut write_counts = vec![0u32; n];
    let mut trace_weights = if traced {
        vec![0.0f32; n * heads * m]
    } else {
        Vec::new()
    };
    let mut region_trace = Vec::new();

    for entry in partition.entries() {
        let rows: Vec<usize> = entry
            .region
            .bits()
            .iter()
            .enumerate()
            .filter_map(|(cell, &b)| b.then_some(cell))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let q = weights.ca_q.apply(&gather_rows(&acts.tokens, d, &rows));
        region_trace.clear();
        let attn = attend(
            &q,
            &k,
            &v,
            d,
            heads,
            |_, j| key_owner[j] == entry.owner,
            traced.then_some(&mut region_trace),
        )?;
        let out = weights.ca_o.apply(&attn);
        for (local, &row) in rows.iter().enumerate() {
            merged[row * d..(row + 1) * d].copy_from_slice(&out[local * d..(local + 1) * d]);
            write_counts[row] += 1;
            if traced {
                let span = heads * m;
                trace_weights[row * span..(row + 1) * span]
                    .copy_from_slice(&region_trace[local * span..(local + 1) * span]);
            }
        }
    }
    assert!(
        write_counts.iter().all(|&c| c == 1),
        "partition left a token unwritten or wrote it twice"
    );

    Ok((
        BlockActivations {
            tokens: merged,
            ..acts.clone()
        },
        AttentionTrace {
            heads,
            key_owner,
            weights: trace_weights,
            write_counts,
        },
    ))
}

/// Sinusoidal embedding of `t`: pairs `(sin, cos)` at geometric frequencies.
pub fn timestep_embedding(t: usize, d: usize) -> Vec<f32> {
    let half = d / 2;
    let mut emb = Vec::with_capacity(d);
    for i in 0..half {
        let freq = (-(10_000f32.ln()) * i as f32 / half as f32).exp();
        let arg = t as f32 * freq;
        emb.push(arg.sin());
        emb.push(arg.cos());
    }
    emb
}

#[derive(Debug, Clone)]
pub struct ToyDit {
    config: DenoiserConfig,
    channels: usize,
    weights: DitWeights,
    null_prompt: PromptEmbedding,
}

impl ToyDit {
    pub fn new(config: DenoiserConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(Error::InvalidConfig("latent needs channels".into()));
        }
        let weights = DitWeights::random(&config, channels);
        let null_prompt = PromptEmbedding::null(config.d_model, config.weight_seed);
        Ok(Self {
            config,
            channels,
            weights,
            null_prompt,
        })
    }

    pub fn weights(&self) -> &DitWeights {
        &self.weights
    }

    pub fn null_prompt(&self) -> &PromptEmbedding {
        &self.null_prompt
    }

    /// Tokens entering block 0: input projection plus the timestep embedding.
    pub fn embed_latent(&self, latent: &Latent, t: usize) -> BlockActivations {
        let d = self.config.d_model;
        let (c, h, w) = latent.shape();
        let mut cells = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    cells.push(latent.get(ch, y, x));
                }
            }
        }
        let mut tokens = self.weights.input.apply(&cells);
        let temb = timestep_embedding(t, d);
        for row in tokens.chunks_exact_mut(d) {
            for (v, e) in row.iter_mut().zip(&temb) {
                *v += e;
            }
        }
        BlockActivations {
            tokens,
            d_model: d,
            t,
            block: 0,
        }
    }

    /// One transformer block: self-attention, MQD cross-attention, feedforward.
    pub fn block_forward(
        &self,
        acts: &BlockActivations,
        partition: &RegionPartition,
        prompts: &[&PromptEmbedding],
    ) -> Result<BlockActivations> {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let bw = &self.weights.blocks[acts.block];
        let mut x = acts.tokens.clone();

        let h = layer_norm(&x, d);
        let sa = attend(
            &bw.sa_q.apply(&h),
            &bw.sa_k.apply(&h),
            &bw.sa_v.apply(&h),
            d,
            heads,
            |_, _| true,
            None,
        )?;
        for (xi, o) in x.iter_mut().zip(bw.sa_o.apply(&sa)) {
            *xi += o;
        }

        let normed = BlockActivations {
            tokens: layer_norm(&x, d),
            ..acts.clone()
        };
        let (ca, _) = mqd_inner(&normed, partition, prompts, bw, heads, false)?;
        for (xi, o) in x.iter_mut().zip(ca.tokens) {
            *xi += o;
        }

        let h = layer_norm(&x, d);
        let hidden: Vec<f32> = bw.ff_in.apply(&h).into_iter().map(gelu).collect();
        for (xi, o) in x.iter_mut().zip(bw.ff_out.apply(&hidden)) {
            *xi += o;
        }

        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                block: acts.block,
                what: format!("non-finite activation at token {}", pos / d),
            });
        }
        Ok(BlockActivations {
            tokens: x,
            d_model: d,
            t: acts.t,
            block: acts.block + 1,
        })
    }

    /// Unguided forward pass: K blocks, final norm, output projection.
    pub fn forward(
        &self,
        latent: &Latent,
        t: usize,
        partition: &RegionPartition,
        prompts: &[&PromptEmbedding],
    ) -> Result<Latent> {
        if latent.channels() != self.channels {
            return Err(Error::dims(
                format!("{} channels", self.channels),
                latent.channels(),
            ));
        }
        if partition.dims() != (latent.width(), latent.height()) {
            return Err(Error::dims(
                format!("{}x{}", latent.width(), latent.height()),
                format!("{:?}", partition.dims()),
            ));
        }
        let mut acts = self.embed_latent(latent, t);
        for _ in 0..self.config.blocks {
            acts = self.block_forward(&acts, partition, prompts)?;
        }
        let out = self
            .weights
            .output
            .apply(&layer_norm(&acts.tokens, self.config.d_model));
        let (c, h, w) = latent.shape();
        let mut result = Latent::zeros(c, h, w);
        for (cell, row) in out.chunks_exact(c).enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                result.set(ch, cell / w, cell % w, v);
            }
        }
        result.ensure_finite("toy-dit output")?;
        Ok(result)
    }
}

impl Denoiser for ToyDit {
    fn backend(&self) -> super::Backend {
        super::Backend::ToyDit
    }

    fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    fn predict(
        &self,
        latent: &Latent,
        t: usize,
        partition: &RegionPartition,
        conds: &[&Conditioning],
    ) -> Result<Latent> {
        check_owners(partition, conds.len())?;
        let prompts: Vec<&PromptEmbedding> = conds.iter().map(|c| &c.embedding).collect();
        let cond = self.forward(latent, t, partition, &prompts)?;
        let null = RegionPartition::single(0, latent.width(), latent.height());
        let uncond = self.forward(latent, t, &null, &[&self.null_prompt])?;
        cfg_combine(&uncond, &cond, self.config.guidance_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::sample_init_latent;
    use crate::mask::{partition, Mask};
    use crate::prompt::embed_prompt;

    fn small_config() -> DenoiserConfig {
        DenoiserConfig {
            blocks: 2,
            d_model: 16,
            heads: 4,
            steps: 4,
            guidance_scale: 7.5,
            weight_seed: 11,
        }
    }

    #[test]
    fn forward_preserves_shape_and_is_deterministic() {
        let dit = ToyDit::new(small_config(), 4).unwrap();
        let z = sample_init_latent(1, 0, 4, 4, 6);
        let part = RegionPartition::single(0, 6, 4);
        let p = embed_prompt("a wooden floor", 16, 0).unwrap();
        let a = dit.forward(&z, 3, &part, &[&p]).unwrap();
        let b = dit.forward(&z, 3, &part, &[&p]).unwrap();
        assert_eq!(a.shape(), z.shape());
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
    }

    #[test]
    fn missing_conditioning_is_an_error() {
        let dit = ToyDit::new(small_config(), 4).unwrap();
        let z = sample_init_latent(1, 0, 4, 4, 4);
        let m = Mask::from_fn(4, 4, |x, _| x < 2);
        let part = partition(&[Mask::full(4, 4), m]).unwrap();
        let p = embed_prompt("floor", 16, 0).unwrap();
        assert!(dit.forward(&z, 1, &part, &[&p]).is_err());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let dit = ToyDit::new(small_config(), 4).unwrap();
        let z = sample_init_latent(1, 0, 3, 4, 4);
        let part = RegionPartition::single(0, 4, 4);
        let p = embed_prompt("floor", 16, 0).unwrap();
        assert!(matches!(
            dit.forward(&z, 1, &part, &[&p]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn timestep_embedding_pairs() {
        let e = timestep_embedding(0, 8);
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_ne!(timestep_embedding(5, 8), timestep_embedding(6, 8));
    }
}
