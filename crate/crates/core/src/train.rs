//! One-class training: fit the encoder and the flow jointly on a single
//! normal interaction category by minimizing mean NLL, then score clips.
//!
//! The loop is deterministic for a fixed (dataset, config, seed): parameter
//! initialization, batch shuffling and the optimizer state all derive from
//! the configured seed, and no other entropy enters. Only samples of the
//! configured normal category influence parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, InteractionPair};
use crate::encoder::{self, EncoderConfig, EncoderParams, PreparedSample};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numeric::graph::{Graph, Mat, Var};
use crate::numeric::params::{ParamId, ParamStore};

/// Offset mixed into the seed per epoch to derive shuffle orders.
const EPOCH_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Hyperparameters of a one-class training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate at the first epoch.
    pub initial_lr: f64,
    /// Learning rate reached at the last epoch (geometric decay between).
    pub final_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// The category treated as normal; everything else is anomalous.
    pub normal_category: String,
    /// Fraction of normal samples reserved (excluded from optimization).
    pub holdout_fraction: f64,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f64>,
    /// Depth of the likelihood head.
    pub flow_layers: usize,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            initial_lr: 1e-3,
            final_lr: 1e-5,
            batch_size: 32,
            seed: 0,
            normal_category: String::new(),
            holdout_fraction: 0.0,
            clip_norm: None,
            flow_layers: 10,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.initial_lr.is_finite() && self.final_lr.is_finite())
            || self.initial_lr < 0.0
            || self.final_lr < 0.0
        {
            return Err(Error::Config("learning rates must be finite and ≥ 0".into()));
        }
        if self.final_lr > self.initial_lr {
            return Err(Error::Config(format!(
                "final learning rate {} must not exceed the initial rate {}",
                self.final_lr, self.initial_lr
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout fraction must be in [0, 1)".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("clip norm must be finite and positive".into()));
            }
        }
        if self.flow_layers == 0 {
            return Err(Error::Config("the flow needs at least 1 layer".into()));
        }
        self.encoder.validate()
    }
}

/// Learning rate for a zero-based epoch index: geometric interpolation from
/// `initial_lr` to `final_lr` across the configured epochs. Falls back to
/// linear interpolation when an endpoint is zero (the geometric ratio is
/// undefined there) and to a constant when there is nothing to interpolate.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    debug_assert!(epoch < cfg.epochs);
    if cfg.epochs == 1 || cfg.initial_lr == cfg.final_lr {
        return cfg.initial_lr;
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    if cfg.initial_lr > 0.0 && cfg.final_lr > 0.0 {
        cfg.initial_lr * (cfg.final_lr / cfg.initial_lr).powf(t)
    } else {
        cfg.initial_lr + (cfg.final_lr - cfg.initial_lr) * t
    }
}

// ── Optimizer ────────────────────────────────────────────────────────────────

/// Adaptive moment estimation with the standard defaults
/// (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) and bias correction.
pub struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = (0..store.len())
            .map(|i| Mat::zeros(store.value(ParamId(i)).dim()))
            .collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One update over every parameter; `grads` is indexed like the store.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Mat], lr: f64) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, grad) in grads.iter().enumerate() {
            let id = ParamId(i);
            ndarray::Zip::from(store.value_mut(id))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                });
        }
    }
}

// ── Model assembly ───────────────────────────────────────────────────────────

/// A trained (or freshly initialized) encoder + flow with its parameter
/// storage and the per-epoch mean training NLL.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub flow: FlowModel,
    pub loss_history: Vec<f64>,
}

/// Registers encoder and flow parameters in the deterministic order and
/// initialization implied by the config. Checkpoint loading rebuilds the
/// same structure and then overwrites the values.
pub fn init_model(cfg: &TrainConfig) -> Result<(ParamStore, EncoderParams, FlowModel)> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let enc = EncoderParams::register(&mut store, &cfg.encoder, &mut rng);
    let flow = FlowModel::register(
        &mut store,
        &mut rng,
        cfg.encoder.feature_dim(),
        cfg.flow_layers,
        "flow",
    );
    Ok((store, enc, flow))
}

/// Builds the mean-NLL loss graph over a batch of prepared samples and
/// returns the graph together with the loss node.
fn batch_loss(
    store: &ParamStore,
    enc: &EncoderParams,
    flow: &FlowModel,
    cfg: &EncoderConfig,
    batch: &[&PreparedSample],
) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let features: Vec<Var> = batch
        .iter()
        .map(|sample| enc.forward(&mut g, &bound, sample, cfg))
        .collect();
    let stacked = g.concat_rows(&features);
    let nll = flow.nll_graph(&mut g, &bound, stacked);
    let loss = g.mean_all(nll);
    let vars = bound.iter().collect();
    (g, vars, loss)
}

/// Mean NLL over samples with frozen parameters (no backward pass).
fn frozen_mean_nll(
    store: &ParamStore,
    enc: &EncoderParams,
    flow: &FlowModel,
    cfg: &EncoderConfig,
    samples: &[PreparedSample],
    batch_size: usize,
) -> f64 {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let (g, _, loss) = batch_loss(store, enc, flow, cfg, &refs);
        total += g.value(loss)[[0, 0]] * chunk.len() as f64;
    }
    total / samples.len() as f64
}

/// Trains on the normal category of `dataset` and returns the fitted model
/// with its loss history.
pub fn train_one_class(dataset: &InteractionDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let normal: Vec<&InteractionPair> = dataset
        .samples
        .iter()
        .filter(|p| p.category == cfg.normal_category)
        .collect();
    if normal.is_empty() {
        return Err(Error::Data(format!(
            "dataset contains no samples of the normal category '{}'",
            cfg.normal_category
        )));
    }
    let mut prepared = normal
        .iter()
        .map(|p| encoder::prepare(p, &cfg.encoder))
        .collect::<Result<Vec<_>>>()?;
    if cfg.holdout_fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5D0_F00D);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);
        let keep = prepared.len() - (prepared.len() as f64 * cfg.holdout_fraction) as usize;
        let keep = keep.max(1);
        let mut kept: Vec<PreparedSample> = Vec::with_capacity(keep);
        for &i in order.iter().take(keep) {
            kept.push(prepared[i].clone());
        }
        prepared = kept;
    }

    let (mut store, enc, flow) = init_model(cfg)?;
    let mut adam = Adam::new(&store);
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed
                .wrapping_add((epoch as u64).wrapping_mul(EPOCH_SEED_STRIDE)),
        );
        order.shuffle(&mut rng);

        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&PreparedSample> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (g, vars, loss) = batch_loss(&store, &enc, &flow, &cfg.encoder, &refs);
            let loss_value = g.value(loss)[[0, 0]];
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {batch_no}"
                )));
            }
            let grads = g.backward(loss);
            let mut grad_mats: Vec<Mat> = (0..store.len())
                .map(|i| grads.get_or_zeros(vars[i], store.value(ParamId(i)).dim()))
                .collect();
            if let Some(clip) = cfg.clip_norm {
                let norm = grad_mats
                    .iter()
                    .map(|m| m.iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > clip {
                    let scale = clip / norm;
                    for m in &mut grad_mats {
                        m.mapv_inplace(|v| v * scale);
                    }
                }
            }
            adam.step(&mut store, &grad_mats, lr);
        }

        let epoch_nll =
            frozen_mean_nll(&store, &enc, &flow, &cfg.encoder, &prepared, cfg.batch_size);
        if !epoch_nll.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite mean NLL after epoch {epoch}"
            )));
        }
        loss_history.push(epoch_nll);
    }

    Ok(TrainedModel {
        config: cfg.clone(),
        store,
        encoder: enc,
        flow,
        loss_history,
    })
}

impl TrainedModel {
    /// NLL anomaly score of one pair: a pure function of (model, pair).
    pub fn score(&self, pair: &InteractionPair) -> Result<f64> {
        let sample = encoder::prepare(pair, &self.config.encoder)?;
        Ok(self.score_prepared(&sample))
    }

    /// Scores an already-prepared sample.
    pub fn score_prepared(&self, sample: &PreparedSample) -> f64 {
        let (g, _, loss) = batch_loss(
            &self.store,
            &self.encoder,
            &self.flow,
            &self.config.encoder,
            &[sample],
        );
        g.value(loss)[[0, 0]]
    }

    /// Mean NLL over pairs under the frozen model — the same quantity the
    /// training loop records per epoch.
    pub fn mean_nll(&self, pairs: &[InteractionPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Data("cannot average NLL over zero samples".into()));
        }
        let prepared = pairs
            .iter()
            .map(|p| encoder::prepare(p, &self.config.encoder))
            .collect::<Result<Vec<_>>>()?;
        Ok(frozen_mean_nll(
            &self.store,
            &self.encoder,
            &self.flow,
            &self.config.encoder,
            &prepared,
            self.config.batch_size,
        ))
    }
}
