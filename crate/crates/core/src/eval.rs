//! Synthetic equivariance evaluation: regress transformation parameters
//! from frozen features and report the coefficient of determination, plus a
//! linear classification probe on the class token.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::{apply_transform, sample_params, Image, TransformKind};
use crate::model::{Encoder, ParamSet};
use crate::rng::stream;
use crate::tensor::{AdamWConfig, AdamWState, Tape, TensorData};
use crate::trainer::{load_checkpoint, Model, TrainConfig, TrainState};

/// Coefficient of determination 1 - RSS/TSS.
///
/// Errors on length mismatch, fewer than two points, or constant targets
/// (TSS = 0).
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Eval(format!(
            "r_squared length mismatch: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Eval("r_squared needs at least two points".to_string()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut rss = 0.0;
    let mut tss = 0.0;
    for (&yi, &hi) in y.iter().zip(y_hat.iter()) {
        rss += (yi - hi) * (yi - hi);
        tss += (yi - mean) * (yi - mean);
    }
    if tss == 0.0 {
        return Err(Error::Eval("r_squared undefined for constant targets (TSS = 0)".to_string()));
    }
    Ok(1.0 - rss / tss)
}

/// Which frozen features feed the probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Cls,
    MeanPatch,
    /// Class token concatenated with the mean patch token.
    ClsMeanConcat,
}

/// Configuration of the lightweight regression probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Width of the two hidden layers.
    pub hidden_width: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Number of (original, transformed) image pairs to build.
    pub pairs: usize,
    pub feature: FeatureSource,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_width: 24,
            steps: 2000,
            lr: 1e-3,
            batch: 128,
            pairs: 1280,
            feature: FeatureSource::ClsMeanConcat,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("probe width/steps/batch must be positive".to_string()));
        }
        if self.pairs < 10 {
            return Err(Error::Config(format!("probe needs >= 10 pairs, got {}", self.pairs)));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("probe lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }

    /// Parameter count of the two-hidden-layer regressor.
    pub fn param_count(&self, input_dim: usize, out_dim: usize) -> usize {
        let h = self.hidden_width;
        input_dim * h + h + h * h + h + h * out_dim + out_dim
    }
}

/// An encoder restored from a checkpoint, used read-only.
pub struct FrozenEncoder {
    pub params: ParamSet<f32>,
    pub encoder: Encoder,
    pub train_config: TrainConfig,
}

impl FrozenEncoder {
    pub fn from_checkpoint(dir: &Path) -> Result<FrozenEncoder> {
        let loaded = load_checkpoint(dir)?;
        let cfg = loaded.train_config.clone();
        let mut state = TrainState::new(cfg.clone())?;
        loaded.install(&mut state)?;
        Ok(FrozenEncoder {
            params: state.model.params,
            encoder: state.model.encoder,
            train_config: cfg,
        })
    }

    /// Wrap an already-built model (e.g. a random-init baseline).
    pub fn from_model(model: Model, train_config: TrainConfig) -> FrozenEncoder {
        FrozenEncoder { params: model.params, encoder: model.encoder, train_config }
    }

    pub fn side(&self) -> usize {
        self.encoder.cfg.side
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.param_count(&self.params)
    }

    /// Per-image feature vectors for a batch of images.
    pub fn features(&self, images: &[Image], source: FeatureSource) -> Result<Vec<Vec<f32>>> {
        let side = self.side();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut data = Vec::with_capacity(chunk.len() * 3 * side * side);
            for img in chunk {
                if img.side() != side {
                    return Err(Error::Eval(format!(
                        "feature extraction expects side {side}, got {}",
                        img.side()
                    )));
                }
                data.extend_from_slice(img.data());
            }
            let mut tape = Tape::<f32>::new();
            let binds = self.params.bind_all(&mut tape)?;
            let x = tape.leaf(TensorData::new(vec![chunk.len(), 3, side, side], data))?;
            let enc = self.encoder.forward(&mut tape, &binds, x)?;
            let mean_patch = tape.mean_axis(enc.tokens, 1)?;
            let d = self.encoder.cfg.d_rep;
            let cls = tape.value(enc.cls);
            let mp = tape.value(mean_patch);
            for i in 0..chunk.len() {
                let vec = match source {
                    FeatureSource::Cls => cls[i * d..(i + 1) * d].to_vec(),
                    FeatureSource::MeanPatch => mp[i * d..(i + 1) * d].to_vec(),
                    FeatureSource::ClsMeanConcat => {
                        let mut v = cls[i * d..(i + 1) * d].to_vec();
                        v.extend_from_slice(&mp[i * d..(i + 1) * d]);
                        v
                    }
                };
                out.push(vec);
            }
        }
        Ok(out)
    }
}

/// Feature/label pairs for one transformation kind, already split into
/// train and held-out sets.
pub struct EvalPairs {
    pub x_train: Vec<Vec<f32>>,
    pub y_train: Vec<Vec<f64>>,
    pub x_test: Vec<Vec<f32>>,
    pub y_test: Vec<Vec<f64>>,
    pub param_names: Vec<&'static str>,
}

impl EvalPairs {
    pub fn input_dim(&self) -> usize {
        self.x_train.first().map_or(0, |v| v.len())
    }

    pub fn out_dim(&self) -> usize {
        self.param_names.len()
    }
}

/// Build evaluation pairs: for each drawn image, sample parameters, apply
/// the transformation, featurize both images with `extract`, and
/// concatenate. Labels are range-normalized parameters. The train/test
/// split is an 80/20 seeded shuffle, disjoint by construction.
pub fn build_eval_pairs<F>(
    dataset: &Dataset,
    kind: TransformKind,
    side: usize,
    n: usize,
    seed: u64,
    extract: F,
) -> Result<EvalPairs>
where
    F: Fn(&[Image]) -> Result<Vec<Vec<f32>>>,
{
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset is empty".to_string()));
    }
    let n = n.min(dataset.len());
    if n < 10 {
        return Err(Error::Eval(format!("need at least 10 evaluation images, got {n}")));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream(seed, "eval.images", 0, 0));
    }
    let mut originals = Vec::with_capacity(n);
    let mut transformed = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (slot, &idx) in order[..n].iter().enumerate() {
        let img = dataset.image(idx)?.resize(side);
        let mut rng = stream(seed, "eval.params", slot as u64, 0);
        let p = sample_params(kind, &mut rng);
        transformed.push(apply_transform(&img, &p));
        originals.push(img);
        labels.push(p.normalized());
    }
    let f_orig = extract(&originals)?;
    let f_trans = extract(&transformed)?;
    let mut features = Vec::with_capacity(n);
    for (a, b) in f_orig.into_iter().zip(f_trans.into_iter()) {
        let mut v = a;
        v.extend_from_slice(&b);
        features.push(v);
    }

    let mut split_order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        split_order.shuffle(&mut stream(seed, "eval.split", 0, 0));
    }
    let n_train = (n as f64 * 0.8).round() as usize;
    let mut pairs = EvalPairs {
        x_train: Vec::with_capacity(n_train),
        y_train: Vec::with_capacity(n_train),
        x_test: Vec::with_capacity(n - n_train),
        y_test: Vec::with_capacity(n - n_train),
        param_names: kind.param_names().to_vec(),
    };
    for (rank, &i) in split_order.iter().enumerate() {
        if rank < n_train {
            pairs.x_train.push(features[i].clone());
            pairs.y_train.push(labels[i].clone());
        } else {
            pairs.x_test.push(features[i].clone());
            pairs.y_test.push(labels[i].clone());
        }
    }
    Ok(pairs)
}

/// Result of one probe run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub per_param: Vec<(String, f64)>,
    pub mean_r2: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn rows_to_tensor(rows: &[Vec<f32>], idx: &[usize]) -> TensorData<f32> {
    let d = rows[0].len();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&rows[i]);
    }
    TensorData::new(vec![idx.len(), d], data)
}

fn labels_to_tensor(rows: &[Vec<f64>], idx: &[usize]) -> TensorData<f32> {
    let d = rows[0].len();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend(rows[i].iter().map(|&v| v as f32));
    }
    TensorData::new(vec![idx.len(), d], data)
}

/// Train the two-hidden-layer regression probe on the train pairs and
/// report held-out per-parameter R-squared plus their mean.
pub fn train_regression_probe(pairs: &EvalPairs, cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    cfg.validate()?;
    if pairs.x_train.len() < 2 || pairs.x_test.len() < 2 {
        return Err(Error::Eval(format!(
            "probe needs at least 2 train and 2 test pairs, got {} / {}",
            pairs.x_train.len(),
            pairs.x_test.len()
        )));
    }
    let in_dim = pairs.input_dim();
    let out_dim = pairs.out_dim();
    let h = cfg.hidden_width;

    let mut rng = stream(cfg.seed, "probe.init", 0, 0);
    let mut probe = ParamSet::<f32>::new();
    use crate::model::Init;
    let w1 = probe.add("probe.w1", vec![in_dim, h], Init::HeNormal, &mut rng);
    let b1 = probe.add("probe.b1", vec![h], Init::Zeros, &mut rng);
    let w2 = probe.add("probe.w2", vec![h, h], Init::HeNormal, &mut rng);
    let b2 = probe.add("probe.b2", vec![h], Init::Zeros, &mut rng);
    let w3 = probe.add("probe.w3", vec![h, out_dim], Init::HeNormal, &mut rng);
    let b3 = probe.add("probe.b3", vec![out_dim], Init::Zeros, &mut rng);

    let forward = |tape: &mut Tape<f32>, binds: &[crate::tensor::NodeId], x| -> Result<_> {
        let h1 = tape.matmul(x, binds[w1])?;
        let h1 = tape.add_broadcast(h1, binds[b1])?;
        let h1 = tape.gelu(h1)?;
        let h2 = tape.matmul(h1, binds[w2])?;
        let h2 = tape.add_broadcast(h2, binds[b2])?;
        let h2 = tape.gelu(h2)?;
        let out = tape.matmul(h2, binds[w3])?;
        tape.add_broadcast(out, binds[b3])
    };

    let mut opt = AdamWState::new(
        AdamWConfig { weight_decay: 0.0, ..Default::default() },
        &probe.shapes(),
    );
    let n_train = pairs.x_train.len();
    let mut batch_rng = stream(cfg.seed, "probe.batch", 0, 0);
    for _step in 0..cfg.steps {
        let idx: Vec<usize> =
            (0..cfg.batch.min(n_train)).map(|_| batch_rng.random_range(0..n_train)).collect();
        let x = rows_to_tensor(&pairs.x_train, &idx);
        let y = labels_to_tensor(&pairs.y_train, &idx);
        let mut tape = Tape::<f32>::new();
        let binds = probe.bind_all(&mut tape)?;
        let xb = tape.leaf(x)?;
        let yb = tape.leaf(y)?;
        let pred = forward(&mut tape, &binds, xb)?;
        let loss = tape.mse(pred, yb)?;
        tape.backward(loss)?;
        let updates: Vec<(usize, &[f32])> =
            (0..probe.len()).map(|i| (i, tape.grad(binds[i]).unwrap())).collect();
        opt.step(&mut probe.values, &updates, cfg.lr)?;
    }

    // Held-out predictions.
    let test_idx: Vec<usize> = (0..pairs.x_test.len()).collect();
    let x = rows_to_tensor(&pairs.x_test, &test_idx);
    let mut tape = Tape::<f32>::new();
    let binds = probe.bind_all(&mut tape)?;
    let xb = tape.leaf(x)?;
    let pred = forward(&mut tape, &binds, xb)?;
    let pred_rows = tape.value(pred);

    let mut per_param = Vec::with_capacity(out_dim);
    let mut acc = 0.0;
    for j in 0..out_dim {
        let y: Vec<f64> = pairs.y_test.iter().map(|r| r[j]).collect();
        let y_hat: Vec<f64> =
            (0..pairs.y_test.len()).map(|i| pred_rows[i * out_dim + j] as f64).collect();
        let r2 = r_squared(&y, &y_hat)?;
        acc += r2;
        per_param.push((pairs.param_names[j].to_string(), r2));
    }
    Ok(ProbeOutcome {
        per_param,
        mean_r2: acc / out_dim as f64,
        n_train,
        n_test: pairs.x_test.len(),
    })
}

/// One transformation kind's entry in the evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct R2Entry {
    pub kind: String,
    pub per_param: Vec<(String, f64)>,
    pub r2: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// The full synthetic-evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct R2Report {
    pub entries: Vec<R2Entry>,
    /// Unweighted mean of the per-kind values.
    pub mean_r2: f64,
    pub probe: ProbeConfig,
}

impl R2Report {
    pub fn from_entries(entries: Vec<R2Entry>, probe: ProbeConfig) -> R2Report {
        let mean_r2 = if entries.is_empty() {
            0.0
        } else {
            entries.iter().map(|e| e.r2).sum::<f64>() / entries.len() as f64
        };
        R2Report { entries, mean_r2, probe }
    }
}

/// Frozen-encoder equivariance evaluation for one transformation kind.
///
/// Enforces the lightweight-probe contract: the regressor must stay under
/// 5% of the encoder's parameter count.
pub fn eval_equivariance(
    frozen: &FrozenEncoder,
    dataset: &Dataset,
    kind: TransformKind,
    cfg: &ProbeConfig,
) -> Result<R2Entry> {
    cfg.validate()?;
    let per_image = match cfg.feature {
        FeatureSource::Cls | FeatureSource::MeanPatch => frozen.encoder.cfg.d_rep,
        FeatureSource::ClsMeanConcat => 2 * frozen.encoder.cfg.d_rep,
    };
    let probe_params = cfg.param_count(2 * per_image, kind.param_names().len());
    let enc_params = frozen.encoder_param_count();
    if probe_params * 20 >= enc_params {
        return Err(Error::Config(format!(
            "probe has {probe_params} parameters, >= 5% of the encoder's {enc_params}; shrink hidden_width"
        )));
    }
    let pairs = build_eval_pairs(dataset, kind, frozen.side(), cfg.pairs, cfg.seed, |imgs| {
        frozen.features(imgs, cfg.feature)
    })?;
    let outcome = train_regression_probe(&pairs, cfg)?;
    Ok(R2Entry {
        kind: kind.name().to_string(),
        per_param: outcome.per_param,
        r2: outcome.mean_r2,
        n_train: outcome.n_train,
        n_test: outcome.n_test,
    })
}

/// Configuration of the linear classification probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Cap on how many dataset images the probe uses (0 = all).
    pub max_images: usize,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        LinearProbeConfig { steps: 1500, lr: 1e-2, batch: 256, max_images: 0, seed: 0 }
    }
}

/// Train a single linear layer on the frozen class token with cross-entropy
/// and report held-out top-1 accuracy.
pub fn linear_probe(
    frozen: &FrozenEncoder,
    dataset: &Dataset,
    cfg: &LinearProbeConfig,
) -> Result<f64> {
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| Error::Eval("linear probe needs a labeled dataset".to_string()))?;
    let n = if cfg.max_images == 0 { dataset.len() } else { cfg.max_images.min(dataset.len()) };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream(cfg.seed, "linprobe.images", 0, 0));
    }
    let chosen = &order[..n];
    let images: Vec<Image> = chosen
        .iter()
        .map(|&i| Ok(dataset.image(i)?.resize(frozen.side())))
        .collect::<Result<_>>()?;
    let feats = frozen.features(&images, FeatureSource::Cls)?;
    let ys: Vec<usize> = chosen.iter().map(|&i| labels[i]).collect();
    train_linear_classifier(&feats, &ys, cfg)
}

/// Cross-entropy linear classifier on fixed feature vectors with a seeded
/// 80/20 split; returns held-out top-1 accuracy.
pub fn train_linear_classifier(
    feats: &[Vec<f32>],
    ys: &[usize],
    cfg: &LinearProbeConfig,
) -> Result<f64> {
    let n = feats.len();
    let n_classes = ys.iter().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(Error::Eval(format!(
            "linear probe needs at least 2 classes, got {n_classes}"
        )));
    }
    if n < 10 || ys.len() != n {
        return Err(Error::Eval(format!(
            "linear probe needs >= 10 labeled feature rows, got {n} features / {} labels",
            ys.len()
        )));
    }
    let n_train = (n as f64 * 0.8).round() as usize;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n).collect();
    if test_idx.len() < 2 {
        return Err(Error::Eval("linear probe held-out split is too small".to_string()));
    }

    let d = feats[0].len();
    let mut probe = ParamSet::<f32>::new();
    use crate::model::Init;
    let mut rng = stream(cfg.seed, "linprobe.init", 0, 0);
    let w = probe.add("linprobe.w", vec![d, n_classes], Init::TruncNormal(0.01), &mut rng);
    let b = probe.add("linprobe.b", vec![n_classes], Init::Zeros, &mut rng);
    let mut opt = AdamWState::new(
        AdamWConfig { weight_decay: 0.0, ..Default::default() },
        &probe.shapes(),
    );
    let mut batch_rng = stream(cfg.seed, "linprobe.batch", 0, 0);
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch.min(train_idx.len()))
            .map(|_| train_idx[batch_rng.random_range(0..train_idx.len())])
            .collect();
        let x = rows_to_tensor(&feats, &idx);
        let t: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
        let mut tape = Tape::<f32>::new();
        let binds = probe.bind_all(&mut tape)?;
        let xb = tape.leaf(x)?;
        let logits = tape.matmul(xb, binds[w])?;
        let logits = tape.add_broadcast(logits, binds[b])?;
        let loss = tape.cross_entropy(logits, &t)?;
        tape.backward(loss)?;
        let updates: Vec<(usize, &[f32])> =
            (0..probe.len()).map(|i| (i, tape.grad(binds[i]).unwrap())).collect();
        opt.step(&mut probe.values, &updates, cfg.lr)?;
    }

    let x = rows_to_tensor(&feats, &test_idx);
    let mut tape = Tape::<f32>::new();
    let binds = probe.bind_all(&mut tape)?;
    let xb = tape.leaf(x)?;
    let logits = tape.matmul(xb, binds[w])?;
    let logits = tape.add_broadcast(logits, binds[b])?;
    let lv = tape.value(logits);
    let mut correct = 0usize;
    for (row, &i) in test_idx.iter().enumerate() {
        let scores = &lv[row * n_classes..(row + 1) * n_classes];
        let pred = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        if pred == ys[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_basics() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        // Mean predictor scores exactly zero.
        assert_eq!(r_squared(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        // RSS=1, TSS=2.
        assert!((r_squared(&y, &[1.0, 2.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(r_squared(&y, &[1.0, 2.0]).is_err());
        assert!(r_squared(&[5.0, 5.0], &[1.0, 2.0]).is_err());
        assert!(r_squared(&[5.0], &[1.0]).is_err());
    }

    #[test]
    fn r_squared_constant_off_mean_is_negative() {
        let y = [1.0, 2.0, 3.0];
        assert!(r_squared(&y, &[0.0, 0.0, 0.0]).unwrap() < 0.0);
    }

    #[test]
    fn r_squared_is_permutation_invariant() {
        let y = [0.3, -1.2, 0.7, 2.0, -0.4];
        let yh = [0.1, -1.0, 0.9, 1.7, -0.2];
        let base = r_squared(&y, &yh).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let yhp: Vec<f64> = perm.iter().map(|&i| yh[i]).collect();
        assert!((base - r_squared(&yp, &yhp).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn r_squared_matches_direct_arithmetic_on_random_vectors() {
        // 100 random small vectors against an independent two-pass oracle.
        use rand::Rng;
        let mut rng = crate::rng::stream(1, "r2", 0, 0);
        for _ in 0..100 {
            let n = rng.random_range(3..20);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let yh: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mean: f64 = y.iter().copied().sum::<f64>() / n as f64;
            let rss: f64 = y.iter().zip(&yh).map(|(a, b)| (a - b) * (a - b)).sum();
            let tss: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
            if tss == 0.0 {
                continue;
            }
            let oracle = 1.0 - rss / tss;
            assert!((r_squared(&y, &yh).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn probe_size_contract() {
        let cfg = ProbeConfig::default();
        // input 256 pair features -> width 24 stays small.
        let p = cfg.param_count(256, 3);
        assert_eq!(p, 256 * 24 + 24 + 24 * 24 + 24 + 24 * 3 + 3);
    }
}
