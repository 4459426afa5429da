//! Two-stream attention encoder for paired motion.
//!
//! Each person's clip is embedded per frame by a pose MLP, offset by a
//! positional embedding, and refined by a stack of blocks. Every block runs,
//! per stream: self-attention, cross-attention against the other stream
//! (stream x queries y's keys/values and vice versa, both reading the
//! pre-update features), optionally cross-attention against an embedding of
//! the inter-person distance maps, and a position-wise feed-forward — each
//! sub-block pre-normalized with a residual connection around it. A final
//! normalization + MLP is applied per timestep, each stream is mean-pooled
//! over time, and the two pooled vectors are concatenated into the fused
//! feature of width 2·E.
//!
//! Both streams use one parameter set when `share_streams` is on (the
//! default); the distance-map MLP always does, since it embeds a pair-level
//! signal. The positional embedding is controlled independently: one learned
//! matrix shared by both streams, two independent learned matrices, or a
//! fixed sinusoid.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::InteractionPair;
use crate::distmap;
use crate::error::{Error, Result};
use crate::numeric::graph::{Graph, Mat, Var};
use crate::numeric::params::{self, BoundParams, ParamId, ParamStore};
use crate::numeric::scaled_dot_attention_graph;

/// Epsilon inside layer normalization.
const LN_EPS: f64 = 1e-5;

/// Positional-embedding variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    /// One learned T×E matrix added to both streams.
    #[serde(alias = "sync")]
    Synchronized,
    /// Two independently learned T×E matrices, one per stream.
    #[serde(alias = "unsync")]
    Unsynchronized,
    /// The fixed sinusoidal schedule; contributes no parameters.
    Sinusoidal,
}

impl std::str::FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" | "synchronized" => Ok(Self::Synchronized),
            "unsync" | "unsynchronized" => Ok(Self::Unsynchronized),
            "sinusoidal" => Ok(Self::Sinusoidal),
            other => Err(Error::Config(format!(
                "unknown positional-embedding mode '{other}' \
                 (expected sync, unsync or sinusoidal)"
            ))),
        }
    }
}

impl std::fmt::Display for PeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Synchronized => "sync",
            Self::Unsynchronized => "unsync",
            Self::Sinusoidal => "sinusoidal",
        })
    }
}

/// Structural hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Frames per clip after resampling (T).
    pub frames: usize,
    /// Joints per person (D).
    pub joints: usize,
    /// Embedding width (E).
    pub embed_dim: usize,
    /// Attention head count; must divide `embed_dim`.
    pub heads: usize,
    /// Number of stacked blocks (N).
    pub blocks: usize,
    pub pe_mode: PeMode,
    /// When off, blocks skip the distance-map cross-attention entirely.
    pub use_distance_maps: bool,
    /// When off, each stream gets its own copy of every stream parameter.
    pub share_streams: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            joints: 6,
            embed_dim: 64,
            heads: 4,
            blocks: 8,
            pe_mode: PeMode::Synchronized,
            use_distance_maps: true,
            share_streams: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config("encoder needs at least 2 frames".into()));
        }
        if self.joints == 0 {
            return Err(Error::Config("encoder needs at least 1 joint".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("encoder needs at least 1 block".into()));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {} must be a positive multiple of the head count {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Width of the fused feature handed to the likelihood head.
    pub fn feature_dim(&self) -> usize {
        2 * self.embed_dim
    }
}

/// Which person's stream an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    X,
    Y,
}

// ── Parameter handles ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct AttnIds {
    ln_gain: ParamId,
    ln_bias: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone)]
struct FeedForwardIds {
    ln_gain: ParamId,
    ln_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct BlockIds {
    self_attn: AttnIds,
    cross_attn: AttnIds,
    dist_attn: Option<AttnIds>,
    ff: FeedForwardIds,
}

#[derive(Debug, Clone)]
struct MlpIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct StreamIds {
    pose: MlpIds,
    blocks: Vec<BlockIds>,
    out_ln_gain: ParamId,
    out_ln_bias: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone)]
enum PeIds {
    Synchronized(ParamId),
    Unsynchronized { x: ParamId, y: ParamId },
    Sinusoidal,
}

/// Handles to every encoder parameter in a [`ParamStore`]. With stream
/// sharing on, `x` and `y` hold the same handles, so the two streams read
/// identical storage by construction.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    x: StreamIds,
    y: StreamIds,
    pe: PeIds,
    /// Per-block distance-map MLPs (pair-level, never duplicated per stream);
    /// empty when distance maps are disabled.
    map_mlps: Vec<MlpIds>,
}

impl EncoderParams {
    /// Registers all encoder parameters on `store` with deterministic names
    /// and ordering. Weight matrices start Glorot-initialized, biases at
    /// zero, normalization gains at one, positional embeddings as small
    /// Gaussians.
    pub fn register(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        cfg.validate().expect("encoder config must be valid before registration");
        let pe = match cfg.pe_mode {
            PeMode::Synchronized => PeIds::Synchronized(store.insert(
                "enc.pe.h",
                params::normal(rng, cfg.frames, cfg.embed_dim, 0.02),
            )),
            PeMode::Unsynchronized => PeIds::Unsynchronized {
                x: store.insert(
                    "enc.pe.hx",
                    params::normal(rng, cfg.frames, cfg.embed_dim, 0.02),
                ),
                y: store.insert(
                    "enc.pe.hy",
                    params::normal(rng, cfg.frames, cfg.embed_dim, 0.02),
                ),
            },
            PeMode::Sinusoidal => PeIds::Sinusoidal,
        };
        let x = register_stream(store, cfg, rng, if cfg.share_streams { "enc.shared" } else { "enc.x" });
        let y = if cfg.share_streams {
            x.clone()
        } else {
            register_stream(store, cfg, rng, "enc.y")
        };
        let map_mlps = if cfg.use_distance_maps {
            let d2 = cfg.joints * cfg.joints;
            (0..cfg.blocks)
                .map(|l| register_mlp(store, rng, &format!("enc.block{l:02}.map"), d2, cfg.embed_dim))
                .collect()
        } else {
            Vec::new()
        };
        Self { x, y, pe, map_mlps }
    }

    /// Per-frame pose embedding of one stream: a two-layer MLP over the
    /// flattened joint coordinates plus that stream's positional-embedding
    /// row for each timestep.
    pub fn embed_poses(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        coords: &Mat,
        stream: Stream,
        cfg: &EncoderConfig,
    ) -> Var {
        assert_eq!(
            coords.dim(),
            (cfg.frames, 3 * cfg.joints),
            "pose input must be T×3D"
        );
        let ids = match stream {
            Stream::X => &self.x,
            Stream::Y => &self.y,
        };
        let input = g.leaf(coords.clone());
        let embedded = mlp(g, bound, &ids.pose, input);
        let pe = match (&self.pe, stream) {
            (PeIds::Synchronized(h), _) => bound.var(*h),
            (PeIds::Unsynchronized { x, .. }, Stream::X) => bound.var(*x),
            (PeIds::Unsynchronized { y, .. }, Stream::Y) => bound.var(*y),
            (PeIds::Sinusoidal, _) => g.leaf(sinusoidal_embedding(cfg.frames, cfg.embed_dim)),
        };
        g.add(embedded, pe)
    }

    /// Full encoder forward for one prepared sample: returns the fused
    /// feature as a 1×2E node.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        sample: &PreparedSample,
        cfg: &EncoderConfig,
    ) -> Var {
        let mut fx = self.embed_poses(g, bound, &sample.person_x, Stream::X, cfg);
        let mut fy = self.embed_poses(g, bound, &sample.person_y, Stream::Y, cfg);
        let dmap = cfg
            .use_distance_maps
            .then(|| g.leaf(sample.dmap_flat.clone()));

        for (l, (bx, by)) in self.x.blocks.iter().zip(&self.y.blocks).enumerate() {
            // Self-attention.
            fx = attend(g, bound, &bx.self_attn, fx, fx, cfg.heads);
            fy = attend(g, bound, &by.self_attn, fy, fy, cfg.heads);
            // Cross-attention: both streams query the other's pre-update
            // features, so the exchange is simultaneous.
            let (px, py) = (fx, fy);
            fx = attend(g, bound, &bx.cross_attn, px, py, cfg.heads);
            fy = attend(g, bound, &by.cross_attn, py, px, cfg.heads);
            // Distance cross-attention against this block's map embedding.
            if let Some(dmap) = dmap {
                let fr = mlp(g, bound, &self.map_mlps[l], dmap);
                let dx = bx.dist_attn.as_ref().expect("dist ids exist when maps are on");
                let dy = by.dist_attn.as_ref().expect("dist ids exist when maps are on");
                fx = attend(g, bound, dx, fx, fr, cfg.heads);
                fy = attend(g, bound, dy, fy, fr, cfg.heads);
            }
            // Position-wise feed-forward.
            fx = feed_forward(g, bound, &bx.ff, fx);
            fy = feed_forward(g, bound, &by.ff, fy);
        }

        let px = finish_stream(g, bound, &self.x, fx);
        let py = finish_stream(g, bound, &self.y, fy);
        g.concat_cols(&[px, py])
    }
}

fn register_stream(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
    prefix: &str,
) -> StreamIds {
    let e = cfg.embed_dim;
    let pose = register_mlp(store, rng, &format!("{prefix}.pose"), 3 * cfg.joints, e);
    let blocks = (0..cfg.blocks)
        .map(|l| BlockIds {
            self_attn: register_attn(store, rng, &format!("{prefix}.block{l:02}.self"), e),
            cross_attn: register_attn(store, rng, &format!("{prefix}.block{l:02}.cross"), e),
            dist_attn: cfg
                .use_distance_maps
                .then(|| register_attn(store, rng, &format!("{prefix}.block{l:02}.dist"), e)),
            ff: register_ff(store, rng, &format!("{prefix}.block{l:02}.ff"), e),
        })
        .collect();
    StreamIds {
        pose,
        blocks,
        out_ln_gain: store.insert(format!("{prefix}.out.ln.gain"), params::full(1, e, 1.0)),
        out_ln_bias: store.insert(format!("{prefix}.out.ln.bias"), params::zeros(1, e)),
        out_w: store.insert(format!("{prefix}.out.w"), params::glorot(rng, e, e)),
        out_b: store.insert(format!("{prefix}.out.b"), params::zeros(1, e)),
    }
}

fn register_attn(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, e: usize) -> AttnIds {
    AttnIds {
        ln_gain: store.insert(format!("{prefix}.ln.gain"), params::full(1, e, 1.0)),
        ln_bias: store.insert(format!("{prefix}.ln.bias"), params::zeros(1, e)),
        wq: store.insert(format!("{prefix}.wq"), params::glorot(rng, e, e)),
        wk: store.insert(format!("{prefix}.wk"), params::glorot(rng, e, e)),
        wv: store.insert(format!("{prefix}.wv"), params::glorot(rng, e, e)),
        wo: store.insert(format!("{prefix}.wo"), params::glorot(rng, e, e)),
    }
}

fn register_ff(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, e: usize) -> FeedForwardIds {
    FeedForwardIds {
        ln_gain: store.insert(format!("{prefix}.ln.gain"), params::full(1, e, 1.0)),
        ln_bias: store.insert(format!("{prefix}.ln.bias"), params::zeros(1, e)),
        w1: store.insert(format!("{prefix}.w1"), params::glorot(rng, e, 2 * e)),
        b1: store.insert(format!("{prefix}.b1"), params::zeros(1, 2 * e)),
        w2: store.insert(format!("{prefix}.w2"), params::glorot(rng, 2 * e, e)),
        b2: store.insert(format!("{prefix}.b2"), params::zeros(1, e)),
    }
}

fn register_mlp(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input: usize,
    e: usize,
) -> MlpIds {
    MlpIds {
        w1: store.insert(format!("{prefix}.w1"), params::glorot(rng, input, e)),
        b1: store.insert(format!("{prefix}.b1"), params::zeros(1, e)),
        w2: store.insert(format!("{prefix}.w2"), params::glorot(rng, e, e)),
        b2: store.insert(format!("{prefix}.b2"), params::zeros(1, e)),
    }
}

/// Two-layer MLP with a GELU between the layers.
fn mlp(g: &mut Graph, bound: &BoundParams, ids: &MlpIds, input: Var) -> Var {
    let h = g.linear(input, bound.var(ids.w1), bound.var(ids.b1));
    let h = g.gelu(h);
    g.linear(h, bound.var(ids.w2), bound.var(ids.b2))
}

/// Pre-normalized multi-head attention sub-block with a residual around it.
/// Queries come from `q_src`, keys and values from `kv_src`; the residual is
/// added to `q_src`. When `kv_src == q_src` this is self-attention.
fn attend(
    g: &mut Graph,
    bound: &BoundParams,
    ids: &AttnIds,
    q_src: Var,
    kv_src: Var,
    heads: usize,
) -> Var {
    let gain = bound.var(ids.ln_gain);
    let bias = bound.var(ids.ln_bias);
    let qn = g.layer_norm_affine(q_src, gain, bias, LN_EPS);
    let kn = if kv_src == q_src {
        qn
    } else {
        g.layer_norm_affine(kv_src, gain, bias, LN_EPS)
    };
    let q = g.matmul(qn, bound.var(ids.wq));
    let k = g.matmul(kn, bound.var(ids.wk));
    let v = g.matmul(kn, bound.var(ids.wv));
    let width = g.value(q).ncols() / heads;
    let mut per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * width, (h + 1) * width);
        let qh = g.slice_cols(q, lo, hi);
        let kh = g.slice_cols(k, lo, hi);
        let vh = g.slice_cols(v, lo, hi);
        per_head.push(scaled_dot_attention_graph(g, qh, kh, vh));
    }
    let merged = g.concat_cols(&per_head);
    let projected = g.matmul(merged, bound.var(ids.wo));
    g.add(q_src, projected)
}

/// Pre-normalized position-wise feed-forward sub-block with residual.
fn feed_forward(g: &mut Graph, bound: &BoundParams, ids: &FeedForwardIds, x: Var) -> Var {
    let n = g.layer_norm_affine(x, bound.var(ids.ln_gain), bound.var(ids.ln_bias), LN_EPS);
    let h = g.linear(n, bound.var(ids.w1), bound.var(ids.b1));
    let h = g.gelu(h);
    let o = g.linear(h, bound.var(ids.w2), bound.var(ids.b2));
    g.add(x, o)
}

/// Final normalization, per-timestep output MLP, and temporal mean pooling
/// of one stream down to a 1×E vector.
fn finish_stream(g: &mut Graph, bound: &BoundParams, ids: &StreamIds, f: Var) -> Var {
    let n = g.layer_norm_affine(
        f,
        bound.var(ids.out_ln_gain),
        bound.var(ids.out_ln_bias),
        LN_EPS,
    );
    let o = g.linear(n, bound.var(ids.out_w), bound.var(ids.out_b));
    let o = g.gelu(o);
    g.mean_rows(o)
}

/// The fixed sinusoidal positional schedule over positions `0..t`.
pub fn sinusoidal_embedding(t: usize, e: usize) -> Mat {
    Array2::from_shape_fn((t, e), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / e as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

// ── Sample preparation ───────────────────────────────────────────────────────

/// One interaction pair converted to the matrices the encoder consumes:
/// per-person flattened coordinates (T×3D) and the flattened distance maps
/// (T×D²), all after resampling to the configured length and root-centered
/// normalization.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub person_x: Mat,
    pub person_y: Mat,
    pub dmap_flat: Mat,
}

/// Resamples, normalizes and flattens one pair for the encoder.
pub fn prepare(pair: &InteractionPair, cfg: &EncoderConfig) -> Result<PreparedSample> {
    if pair.person_x.joint_count() != cfg.joints {
        return Err(Error::Shape(format!(
            "sample has {} joints but the encoder is configured for {}",
            pair.person_x.joint_count(),
            cfg.joints
        )));
    }
    let mut pair = crate::data::resample_pair(pair, cfg.frames)?;
    crate::data::normalize_pair(&mut pair);
    let maps = distmap::distance_maps(&pair);
    let d = cfg.joints;
    let dmap_flat = Mat::from_shape_fn((cfg.frames, d * d), |(t, c)| maps.maps[t][[c / d, c % d]]);
    let flatten = |frames: &ndarray::Array3<f32>| {
        Mat::from_shape_fn((cfg.frames, 3 * d), |(t, c)| {
            f64::from(frames[[t, c / 3, c % 3]])
        })
    };
    let prepared = PreparedSample {
        person_x: flatten(&pair.person_x.frames),
        person_y: flatten(&pair.person_y.frames),
        dmap_flat,
    };
    for m in [&prepared.person_x, &prepared.person_y, &prepared.dmap_flat] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(
                "sample contains non-finite coordinates after preparation".into(),
            ));
        }
    }
    Ok(prepared)
}
