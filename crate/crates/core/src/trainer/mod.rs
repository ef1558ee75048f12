//! Two-view pretraining: build views, encode, split, decode intermediates,
//! combine losses, optimize. Deterministic given (config, seed).

mod checkpoint;
mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use metrics::{read_metrics, MetricsRow, METRICS_HEADER};

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::{
    apply_transform, common_augment, make_intermediates, sample_params, AugRecord,
    AugmentationConfig, Image, TransformKind, TransformParams,
};
use crate::loss::{invariance_loss, reconstruction_loss, total_loss, LossBreakdown};
use crate::model::{
    split_features, Decoder, DecoderConfig, Encoder, EncoderConfig, FeatureSplit, ParamSet,
};
use crate::rng::stream;
use crate::tensor::{cosine_lr, AdamWConfig, AdamWState, NodeId, Scalar, Tape, TensorData};

/// Which transformation the second view carries: one fixed kind, or a kind
/// drawn uniformly per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformChoice {
    Single(TransformKind),
    All,
}

impl TransformChoice {
    pub fn pick<R: Rng>(&self, rng: &mut R) -> TransformKind {
        match self {
            TransformChoice::Single(k) => *k,
            TransformChoice::All => TransformKind::ALL[rng.random_range(0..TransformKind::ALL.len())],
        }
    }

    pub fn parse(s: &str) -> Result<TransformChoice> {
        if s.trim().eq_ignore_ascii_case("all") {
            Ok(TransformChoice::All)
        } else {
            Ok(TransformChoice::Single(TransformKind::parse(s)?))
        }
    }
}

impl fmt::Display for TransformChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformChoice::Single(k) => f.write_str(k.name()),
            TransformChoice::All => f.write_str("all"),
        }
    }
}

impl Serialize for TransformChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TransformChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TransformChoice::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Every hyperparameter of one pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Weight of the reconstruction objective in the combined loss.
    pub lambda: f64,
    /// Channels of the equivariant block (out of `encoder.d_rep`).
    pub d_equi: usize,
    /// Number of intermediate reconstruction targets (and decoders).
    pub intermediates: usize,
    pub transform: TransformChoice,
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate before linear batch-size scaling (lr * batch/256).
    pub base_lr: f64,
    pub min_lr: f64,
    /// Fraction of total steps spent on linear warmup.
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub checkpoint_every_epochs: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub augment: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        let augment = AugmentationConfig { out_side: encoder.side, ..Default::default() };
        TrainConfig {
            seed: 0,
            lambda: 1.0,
            d_equi: encoder.d_rep / 4,
            intermediates: 2,
            transform: TransformChoice::Single(TransformKind::Se2),
            epochs: 10,
            batch_size: 64,
            base_lr: 3e-4,
            min_lr: 3e-6,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            checkpoint_every_epochs: 1,
            encoder,
            decoder: DecoderConfig::default(),
            augment,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.intermediates < 1 {
            return Err(Error::Config("intermediates must be >= 1".to_string()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!(
                "warmup_frac must lie in [0,1), got {}",
                self.warmup_frac
            )));
        }
        if self.checkpoint_every_epochs == 0 {
            return Err(Error::Config("checkpoint_every_epochs must be >= 1".to_string()));
        }
        self.encoder.validate()?;
        self.decoder.validate(&self.encoder)?;
        self.augment.validate()?;
        if self.d_equi == 0 || self.d_equi >= self.encoder.d_rep {
            return Err(Error::Config(format!(
                "d_equi must satisfy 0 < d_equi < d_rep ({}), got {}",
                self.encoder.d_rep, self.d_equi
            )));
        }
        if self.augment.out_side != self.encoder.side {
            return Err(Error::Config(format!(
                "augment.out_side {} must equal encoder.side {}",
                self.augment.out_side, self.encoder.side
            )));
        }
        Ok(())
    }

    /// Learning rate after the linear batch-size scaling rule.
    pub fn scaled_lr(&self) -> (f64, f64) {
        let s = self.batch_size as f64 / 256.0;
        (self.base_lr * s, self.min_lr * s)
    }
}

/// Encoder plus reconstruction decoders over one shared parameter set.
pub struct Model {
    pub params: ParamSet<f32>,
    pub encoder: Encoder,
    pub decoders: Vec<Decoder>,
}

impl Model {
    pub fn init(cfg: &TrainConfig) -> Result<Model> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let encoder = Encoder::init(&mut params, cfg.encoder, &mut stream(cfg.seed, "init.enc", 0, 0))?;
        let mut decoders = Vec::with_capacity(cfg.intermediates);
        for k in 0..cfg.intermediates {
            decoders.push(Decoder::init(
                &mut params,
                cfg.decoder.clone(),
                &cfg.encoder,
                cfg.d_equi,
                k,
                &mut stream(cfg.seed, "init.dec", k as u64, 0),
            )?);
        }
        Ok(Model { params, encoder, decoders })
    }

    /// Parameter indices that participate in the loss for a given lambda:
    /// with lambda = 0 the decoders have no path to the loss and stay frozen.
    pub fn active_params(&self, lambda: f64) -> std::ops::Range<usize> {
        if lambda > 0.0 {
            0..self.params.len()
        } else {
            self.encoder.param_indices()
        }
    }
}

/// One batch's two views, per-sample transformation parameters, and the K
/// intermediate reconstruction targets.
pub struct ViewBundle {
    pub v1: TensorData<f32>,
    pub v2: TensorData<f32>,
    /// K batches: targets[k] holds the (k+1)/(K+1)-fraction images.
    pub targets: Vec<TensorData<f32>>,
    pub params: Vec<TransformParams>,
    pub records: Vec<(AugRecord, AugRecord)>,
}

fn batch_tensor(images: &[Image], side: usize) -> TensorData<f32> {
    let mut data = Vec::with_capacity(images.len() * 3 * side * side);
    for img in images {
        debug_assert_eq!(img.side(), side);
        data.extend_from_slice(img.data());
    }
    TensorData::new(vec![images.len(), 3, side, side], data)
}

/// Build both views for one batch. Per-sample randomness comes from streams
/// addressed by (seed, step, slot), so results do not depend on how the
/// batch is assembled. Draw order per sample: view-1 augmentation, view-2
/// augmentation, transform kind (in "all" mode), transform parameters.
pub fn make_views(
    images: &[&Image],
    cfg: &TrainConfig,
    step: usize,
    forced_params: Option<&[TransformParams]>,
) -> Result<ViewBundle> {
    if images.is_empty() {
        return Err(Error::Dataset("empty batch".to_string()));
    }
    let k = cfg.intermediates;
    let side = cfg.augment.out_side;
    let mut v1 = Vec::with_capacity(images.len());
    let mut base2 = Vec::with_capacity(images.len());
    let mut v2 = Vec::with_capacity(images.len());
    let mut params = Vec::with_capacity(images.len());
    let mut records = Vec::with_capacity(images.len());
    let mut targets: Vec<Vec<Image>> = (0..k).map(|_| Vec::with_capacity(images.len())).collect();
    for (slot, img) in images.iter().enumerate() {
        let mut rng = stream(cfg.seed, "views", step as u64, slot as u64);
        let (a, rec1) = common_augment(img, &cfg.augment, &mut rng);
        let (b, rec2) = common_augment(img, &cfg.augment, &mut rng);
        let kind = cfg.transform.pick(&mut rng);
        let p = match forced_params {
            Some(ps) => ps[slot],
            None => sample_params(kind, &mut rng),
        };
        v2.push(apply_transform(&b, &p));
        for (kk, t) in make_intermediates(&b, &p, k)?.into_iter().enumerate() {
            targets[kk].push(t);
        }
        v1.push(a);
        base2.push(b);
        params.push(p);
        records.push((rec1, rec2));
    }
    Ok(ViewBundle {
        v1: batch_tensor(&v1, side),
        v2: batch_tensor(&v2, side),
        targets: targets.iter().map(|t| batch_tensor(t, side)).collect(),
        params,
        records,
    })
}

/// Graph nodes of one training step, exposed for gradient inspection.
pub struct StepNodes {
    pub l_total: NodeId,
    pub l_ssl: NodeId,
    pub l_recon: Option<NodeId>,
    pub inv_term: NodeId,
    pub var_term: NodeId,
    pub cov_term: NodeId,
    pub tokens_v1: NodeId,
    pub tokens_v2: NodeId,
    pub split_v1: FeatureSplit,
    pub split_v2: FeatureSplit,
    pub preds: Vec<NodeId>,
}

/// Assemble the full step graph: encode both views with shared weights,
/// split, invariance loss on the invariant blocks, decode intermediates from
/// the concatenated equivariant blocks, combine with weight lambda.
///
/// With lambda = 0 the reconstruction path is not built at all; decoder
/// parameters then have no path to the loss.
pub fn build_step_graph<T: Scalar>(
    tape: &mut Tape<T>,
    encoder: &Encoder,
    decoders: &[Decoder],
    binds: &[NodeId],
    v1: TensorData<T>,
    v2: TensorData<T>,
    targets: &[TensorData<T>],
    d_equi: usize,
    lambda: f64,
) -> Result<StepNodes> {
    let x1 = tape.leaf(v1)?;
    let x2 = tape.leaf(v2)?;
    let out1 = encoder.forward(tape, binds, x1)?;
    let out2 = encoder.forward(tape, binds, x2)?;
    let split_v1 = split_features(tape, out1.tokens, d_equi)?;
    let split_v2 = split_features(tape, out2.tokens, d_equi)?;
    let inv = invariance_loss(tape, split_v1.invariant, split_v2.invariant)?;

    let (l_recon, preds) = if lambda > 0.0 {
        if targets.len() != decoders.len() {
            return Err(Error::Config(format!(
                "{} reconstruction targets for {} decoders",
                targets.len(),
                decoders.len()
            )));
        }
        let mut preds = Vec::with_capacity(decoders.len());
        let mut target_nodes = Vec::with_capacity(decoders.len());
        for (dec, t) in decoders.iter().zip(targets.iter()) {
            preds.push(dec.forward(tape, binds, split_v1.equivariant, split_v2.equivariant)?);
            target_nodes.push(tape.leaf(t.clone())?);
        }
        (Some(reconstruction_loss(tape, &preds, &target_nodes)?), preds)
    } else {
        (None, Vec::new())
    };

    let l_total = total_loss(tape, inv.total, l_recon, lambda)?;
    Ok(StepNodes {
        l_total,
        l_ssl: inv.total,
        l_recon,
        inv_term: inv.invariance,
        var_term: inv.variance,
        cov_term: inv.covariance,
        tokens_v1: out1.tokens,
        tokens_v2: out2.tokens,
        split_v1,
        split_v2,
        preds,
    })
}

/// Mutable training state: parameters, optimizer moments, step counter.
pub struct TrainState {
    pub cfg: TrainConfig,
    pub model: Model,
    pub opt: AdamWState<f32>,
    pub step: usize,
}

impl TrainState {
    pub fn new(cfg: TrainConfig) -> Result<TrainState> {
        let model = Model::init(&cfg)?;
        let opt = AdamWState::new(
            AdamWConfig { weight_decay: cfg.weight_decay, ..Default::default() },
            &model.params.shapes(),
        );
        Ok(TrainState { cfg, model, opt, step: 0 })
    }

    /// One optimization step on a prepared view bundle. Returns the loss
    /// breakdown; a non-finite forward anywhere aborts with the step index.
    pub fn train_step(&mut self, bundle: &ViewBundle, lr: f64) -> Result<LossBreakdown> {
        let mut tape = Tape::<f32>::new();
        let binds = self.model.params.bind_all(&mut tape)?;
        let nodes = build_step_graph(
            &mut tape,
            &self.model.encoder,
            &self.model.decoders,
            &binds,
            bundle.v1.clone(),
            bundle.v2.clone(),
            &bundle.targets,
            self.cfg.d_equi,
            self.cfg.lambda,
        )
        .map_err(|e| self.diverged(e))?;
        let l_ssl = tape.scalar_value(nodes.l_ssl);
        let l_recon = nodes.l_recon.map(|n| tape.scalar_value(n)).unwrap_or(0.0);
        let terms = (
            tape.scalar_value(nodes.inv_term),
            tape.scalar_value(nodes.var_term),
            tape.scalar_value(nodes.cov_term),
        );
        let breakdown = LossBreakdown::combine(l_ssl, l_recon, self.cfg.lambda, terms)?;
        if !breakdown.l_total.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                detail: format!("loss {} is not finite", breakdown.l_total),
            });
        }
        tape.backward(nodes.l_total)?;
        let active = self.model.active_params(self.cfg.lambda);
        let mut updates = Vec::with_capacity(active.len());
        for idx in active {
            let grad = tape.grad(binds[idx]).ok_or_else(|| {
                Error::MissingGrad(self.model.params.names[idx].clone())
            })?;
            updates.push((idx, grad));
        }
        self.opt.step(&mut self.model.params.values, &updates, lr)?;
        self.step += 1;
        Ok(breakdown)
    }

    fn diverged(&self, e: Error) -> Error {
        match e {
            Error::NonFinite { op } => Error::Diverged {
                step: self.step,
                detail: format!("non-finite value produced by {op}"),
            },
            other => other,
        }
    }
}

/// Result summary of a pretraining run.
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub steps_run: usize,
    pub final_loss: Option<LossBreakdown>,
}

/// Run the full pretraining loop, appending per-step metrics and writing
/// checkpoints under `out_dir`.
pub fn pretrain(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset is empty".to_string()));
    }
    let n = dataset.len();
    if n < cfg.batch_size {
        return Err(Error::Dataset(format!(
            "dataset has {n} images but batch_size is {}",
            cfg.batch_size
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let steps_per_epoch = n / cfg.batch_size;
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup = (cfg.warmup_frac * total_steps as f64).round() as usize;
    let (base_lr, min_lr) = cfg.scaled_lr();

    let mut state = TrainState::new(cfg.clone())?;
    let mut start_epoch = 0usize;
    if let Some(ckpt) = resume {
        let loaded = load_checkpoint(ckpt)?;
        if &loaded.train_config != cfg {
            return Err(Error::Checkpoint(
                "resume config differs from the checkpoint's config".to_string(),
            ));
        }
        loaded.install(&mut state)?;
        if state.step % steps_per_epoch != 0 {
            return Err(Error::Checkpoint(format!(
                "checkpoint step {} is not an epoch boundary for {} steps/epoch",
                state.step, steps_per_epoch
            )));
        }
        start_epoch = state.step / steps_per_epoch;
    }

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = metrics::MetricsWriter::open(&metrics_path, resume.is_some())?;

    let mut last = None;
    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, "order", epoch as u64, 0));
        for chunk in order.chunks_exact(cfg.batch_size) {
            let images: Vec<Image> = chunk.iter().map(|&i| dataset.image(i)).collect::<Result<_>>()?;
            let refs: Vec<&Image> = images.iter().collect();
            let bundle = make_views(&refs, cfg, state.step, None)?;
            let lr = cosine_lr(state.step, warmup, total_steps, base_lr, min_lr);
            let breakdown = state.train_step(&bundle, lr)?;
            metrics.append(state.step - 1, lr, &breakdown)?;
            last = Some(breakdown);
        }
        if (epoch + 1) % cfg.checkpoint_every_epochs == 0 && epoch + 1 < cfg.epochs {
            let dir = out_dir.join(format!("checkpoints/epoch_{:04}", epoch + 1));
            save_checkpoint(&dir, &state)?;
        }
    }
    let final_dir = out_dir.join("checkpoint_final");
    save_checkpoint(&final_dir, &state)?;
    Ok(TrainOutcome {
        final_checkpoint: final_dir,
        metrics_path,
        steps_run: state.step,
        final_loss: last,
    })
}
