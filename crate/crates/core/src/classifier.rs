//! CRNN language classifier: four convolution blocks, a bidirectional LSTM
//! over the time axis and a dense softmax layer. The output of the third
//! convolution block, average-pooled, doubles as the FID feature space.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use switchgan_tensor::{nn, no_grad, Adam, Bound, ConvGeom, ParamStore, Tensor, Var};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{confusion_matrix, metrics_from_confusion, MetricsReport};
use crate::features::{MelSpectrogram, SpecDomain, N_FRAMES, N_MELS};
use crate::rng::{derive_seed, rng_for};

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

const BLOCKS: usize = 4;
/// Block whose pooled activations serve as features (1-based).
pub const FEATURE_BLOCK: usize = 3;
const INFER_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrnnConfig {
    /// Output channels of the four 3x3 convolution blocks.
    pub channels: Vec<usize>,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    pub leaky_relu_alpha: f64,
    pub n_classes: usize,
}

impl Default for CrnnConfig {
    fn default() -> Self {
        CrnnConfig { channels: vec![16, 32, 64, 128], hidden: 128, leaky_relu_alpha: 0.2, n_classes: 3 }
    }
}

impl CrnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != BLOCKS || self.channels.contains(&0) {
            return Err(Error::invalid(format!("classifier.channels needs {BLOCKS} positive entries")));
        }
        if self.hidden == 0 || self.n_classes < 2 || self.leaky_relu_alpha < 0.0 {
            return Err(Error::invalid("classifier hidden size, class count or slope out of range"));
        }
        Ok(())
    }

    /// Spatial side after all pooling stages.
    fn final_side(&self) -> usize {
        N_MELS >> BLOCKS
    }

    pub fn feature_dim(&self) -> usize {
        self.channels[FEATURE_BLOCK - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub max_epochs: usize,
    /// Epochs without a validation-UAR improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: CrnnConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            learning_rate: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            max_epochs: 30,
            patience: 5,
            batch_size: 32,
            seed: 0,
            model: CrnnConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.max_epochs > 0 && self.batch_size > 0) {
            return Err(Error::invalid("classifier learning_rate, max_epochs and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("classifier Adam betas must lie in [0, 1)"));
        }
        self.model.validate()
    }
}

pub fn init_crnn(cfg: &CrnnConfig, seed: u64) -> ParamStore {
    let mut rng = rng_for(seed, &[STREAM_INIT]);
    let mut p = ParamStore::new();
    let mut inp = 1;
    for (i, &c) in cfg.channels.iter().enumerate() {
        nn::init_conv(&mut p, &format!("crnn.conv{}", i + 1), inp, c, 3, &mut rng);
        inp = c;
    }
    let side = cfg.final_side();
    let step_dim = inp * side;
    let h = cfg.hidden;
    for dir in ["fwd", "bwd"] {
        let prefix = format!("crnn.lstm_{dir}");
        p.insert_param(format!("{prefix}.wx"), nn::glorot_uniform(&[step_dim, 4 * h], step_dim, 4 * h, &mut rng));
        p.insert_param(format!("{prefix}.wh"), nn::glorot_uniform(&[h, 4 * h], h, 4 * h, &mut rng));
        // Gate order i, f, g, o; the forget gate starts open.
        let bias = (0..4 * h).map(|j| if (h..2 * h).contains(&j) { 1.0 } else { 0.0 }).collect();
        p.insert_param(format!("{prefix}.b"), Tensor::new(vec![4 * h], bias));
    }
    nn::init_dense(&mut p, "crnn.out", 2 * h, cfg.n_classes, &mut rng);
    p
}

fn conv_blocks(p: &Bound, cfg: &CrnnConfig, x: &Var, upto: usize) -> Var {
    let geom = ConvGeom { stride: 1, pad: 1 };
    let mut h = x.clone();
    for i in 1..=upto {
        h = nn::conv(p, &format!("crnn.conv{i}"), &h, geom)
            .leaky_relu(cfg.leaky_relu_alpha)
            .maxpool2();
    }
    h
}

/// Runs one LSTM direction over `steps` and returns the final hidden state.
fn lstm(p: &Bound, prefix: &str, steps: &[Var], hidden: usize) -> Var {
    let n = steps[0].shape()[0];
    let wx = p.get(&format!("{prefix}.wx"));
    let wh = p.get(&format!("{prefix}.wh"));
    let b = p.get(&format!("{prefix}.b")).reshape(&[1, 4 * hidden]);
    let mut h = Var::constant(Tensor::zeros(vec![n, hidden]));
    let mut c = Var::constant(Tensor::zeros(vec![n, hidden]));
    for x in steps {
        let z = x.matmul(wx).add(&h.matmul(wh)).add_bcast(&b);
        let gate = |k: usize| z.narrow(1, k * hidden, hidden);
        let i = gate(0).sigmoid();
        let f = gate(1).sigmoid();
        let g = gate(2).tanh();
        let o = gate(3).sigmoid();
        c = f.mul(&c).add(&i.mul(&g));
        h = o.mul(&c.tanh());
    }
    h
}

/// Class logits for `x: [N, 1, mels, frames]`.
pub fn crnn_logits(p: &Bound, cfg: &CrnnConfig, x: &Var) -> Var {
    let n = x.shape()[0];
    let h = conv_blocks(p, cfg, x, BLOCKS);
    let (c, side) = (h.shape()[1], h.shape()[2]);
    // Time runs along the last axis; each step sees every channel and band.
    let steps: Vec<Var> = (0..h.shape()[3])
        .map(|t| h.narrow(3, t, 1).reshape(&[n, c * side]))
        .collect();
    let rev: Vec<Var> = steps.iter().rev().cloned().collect();
    let fwd = lstm(p, "crnn.lstm_fwd", &steps, cfg.hidden);
    let bwd = lstm(p, "crnn.lstm_bwd", &rev, cfg.hidden);
    nn::dense(p, "crnn.out", &Var::concat(&[fwd, bwd], 1))
}

fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn spec_batch(specs: &[&MelSpectrogram]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(specs.len() * N_MELS * N_FRAMES);
    for s in specs {
        if s.domain() != SpecDomain::Norm01 {
            return Err(Error::Domain { expected: SpecDomain::Norm01.tag().into(), actual: s.domain().tag().into() });
        }
        data.extend_from_slice(s.values());
    }
    Ok(Tensor::new(vec![specs.len(), 1, N_MELS, N_FRAMES], data))
}

/// A spectrogram (norm_01) with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSpec {
    pub spec: MelSpectrogram,
    pub label: usize,
}

/// On-the-fly augmentation of one training example. `index` is the
/// example's position in the training set, `seed` is unique per epoch and
/// example.
pub trait Augmenter: Sync {
    fn augment(&self, index: usize, example: &LabeledSpec, seed: u64) -> Result<MelSpectrogram>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_uar: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_uar";

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = format!("{HISTORY_HEADER}\n");
    for r in history {
        text.push_str(&format!("{},{:e},{:e},{:e}\n", r.epoch, r.train_loss, r.val_loss, r.val_uar));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

const STORE: &str = "crnn";

/// Trained (or freshly initialised) classifier parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: CrnnConfig,
    pub params: ParamStore,
    pub class_names: Vec<String>,
}

impl Classifier {
    pub fn new(config: CrnnConfig, class_names: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        if class_names.len() != config.n_classes {
            return Err(Error::invalid(format!(
                "{} class names for a {}-class model",
                class_names.len(),
                config.n_classes
            )));
        }
        Ok(Classifier { params: init_crnn(&config, seed), config, class_names })
    }

    fn chunks<T>(&self, specs: &[MelSpectrogram], mut f: impl FnMut(&Bound, Var) -> Result<Vec<T>>) -> Result<Vec<T>> {
        let _guard = no_grad();
        let p = self.params.bind_frozen();
        let mut out = Vec::with_capacity(specs.len());
        for chunk in specs.chunks(INFER_CHUNK) {
            let refs: Vec<&MelSpectrogram> = chunk.iter().collect();
            out.extend(f(&p, Var::constant(spec_batch(&refs)?))?);
        }
        Ok(out)
    }

    /// Class probabilities, one row per spectrogram.
    pub fn probabilities(&self, specs: &[MelSpectrogram]) -> Result<Vec<Vec<f64>>> {
        self.chunks(specs, |p, x| {
            let logits = crnn_logits(p, &self.config, &x);
            if !logits.value().all_finite() {
                return Err(Error::Numerical("classifier produced non-finite logits".into()));
            }
            Ok(softmax_rows(logits.value()))
        })
    }

    pub fn predict(&self, specs: &[MelSpectrogram]) -> Result<Vec<usize>> {
        Ok(self.probabilities(specs)?.iter().map(|r| argmax(r)).collect())
    }

    /// Global-average-pooled activations of the feature block.
    pub fn extract_features(&self, specs: &[MelSpectrogram]) -> Result<Vec<Vec<f64>>> {
        self.chunks(specs, |p, x| {
            let h = conv_blocks(p, &self.config, &x, FEATURE_BLOCK);
            let (c, area) = (h.shape()[1], h.shape()[2] * h.shape()[3]);
            Ok(h.value()
                .data()
                .chunks(c * area)
                .map(|ex| ex.chunks(area).map(|plane| plane.iter().sum::<f64>() / area as f64).collect())
                .collect())
        })
    }

    pub fn evaluate(&self, data: &[LabeledSpec]) -> Result<MetricsReport> {
        let specs: Vec<MelSpectrogram> = data.iter().map(|d| d.spec.clone()).collect();
        let truth: Vec<usize> = data.iter().map(|d| d.label).collect();
        let cm = confusion_matrix(&truth, &self.predict(&specs)?, &self.class_names)?;
        metrics_from_confusion(&cm)
    }

    pub fn to_checkpoint(&self, epoch: u64, config: &ClassifierConfig, history: &[EpochRecord]) -> Checkpoint {
        let cfg = serde_json::to_value(config).expect("serialisable config");
        let mut ck = Checkpoint::new("classifier", epoch, cfg);
        ck.stores.insert(STORE.into(), self.params.clone());
        ck.set_extra("class_names", &self.class_names);
        ck.set_extra("history", &history);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.kind != "classifier" {
            return Err(Error::Checkpoint(format!("expected a classifier checkpoint, found `{}`", ck.meta.kind)));
        }
        let config: ClassifierConfig = serde_json::from_value(ck.meta.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;
        config.validate()?;
        let params = ck.store(STORE)?.clone();
        let expected = init_crnn(&config.model, 0);
        for (name, t) in expected.params() {
            match params.param(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::Checkpoint(format!("parameter `{name}` missing or misshapen"))),
            }
        }
        Ok(Classifier { config: config.model, params, class_names: ck.extra("class_names")? })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir, &[STORE])?)
    }
}

/// Mean cross-entropy of `logits` against integer labels.
fn cross_entropy(logits: &Var, labels: &[usize]) -> Var {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut onehot = vec![0.0; n * k];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * k + l] = 1.0;
    }
    logits
        .log_softmax()
        .mul_const(&Tensor::new(vec![n, k], onehot))
        .sum()
        .scale(-1.0 / n as f64)
}

fn check_labels(set: &[LabeledSpec], k: usize, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::invalid(format!("{what} split is empty")));
    }
    if let Some(bad) = set.iter().find(|e| e.label >= k) {
        return Err(Error::UnknownLabel(format!("class index {} in {what} split", bad.label)));
    }
    Ok(())
}

fn validation(model: &Classifier, val: &[LabeledSpec]) -> Result<(f64, f64)> {
    let _guard = no_grad();
    let p = model.params.bind_frozen();
    let mut loss = 0.0;
    let mut pred = Vec::with_capacity(val.len());
    for chunk in val.chunks(INFER_CHUNK) {
        let refs: Vec<&MelSpectrogram> = chunk.iter().map(|e| &e.spec).collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        let logits = crnn_logits(&p, &model.config, &Var::constant(spec_batch(&refs)?));
        loss += cross_entropy(&logits, &labels).value().item() * chunk.len() as f64;
        pred.extend(softmax_rows(logits.value()).iter().map(|r| argmax(r)));
    }
    let truth: Vec<usize> = val.iter().map(|e| e.label).collect();
    let report = metrics_from_confusion(&confusion_matrix(&truth, &pred, &model.class_names)?)?;
    Ok((loss / val.len() as f64, report.uar))
}

/// Tracks the best validation score; stops once more than `patience`
/// epochs pass without a strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, usize)>,
    wait: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, wait: 0 }
    }

    pub fn update(&mut self, epoch: usize, score: f64) -> StopDecision {
        if self.best.is_none_or(|(b, _)| score > b) {
            self.best = Some((score, epoch));
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait > self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(_, e)| e)
    }
}

/// Result of [`train_classifier`]: the best-validation-UAR parameters.
#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub model: Classifier,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainedClassifier {
    pub fn to_checkpoint(&self, config: &ClassifierConfig) -> Checkpoint {
        self.model.to_checkpoint(self.best_epoch as u64, config, &self.history)
    }
}

/// Minimises cross-entropy with Adam, tracking validation UAR per epoch.
/// Training stops once more than `patience` epochs pass without a UAR
/// improvement; the best epoch's parameters are returned. With an
/// augmenter, examples of class `augment_class` are replaced on the fly.
pub fn train_classifier(
    train: &[LabeledSpec],
    val: &[LabeledSpec],
    class_names: &[String],
    config: &ClassifierConfig,
    augmenter: Option<(&dyn Augmenter, usize)>,
) -> Result<TrainedClassifier> {
    config.validate()?;
    let k = config.model.n_classes;
    check_labels(train, k, "training")?;
    check_labels(val, k, "validation")?;
    let mut model = Classifier::new(config.model.clone(), class_names.to_vec(), config.seed)?;
    let mut opt = Adam::new(config.learning_rate, config.adam_beta1, config.adam_beta2);
    let mut history = Vec::new();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params.clone();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut specs = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &train[i];
                specs.push(match augmenter {
                    Some((aug, class)) if ex.label == class => {
                        aug.augment(i, ex, derive_seed(config.seed, &[STREAM_AUGMENT, epoch as u64, i as u64]))?
                    }
                    _ => ex.spec.clone(),
                });
            }
            let refs: Vec<&MelSpectrogram> = specs.iter().collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].label).collect();
            let p = model.params.bind();
            let loss = cross_entropy(&crnn_logits(&p, &model.config, &Var::constant(spec_batch(&refs)?)), &labels);
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite classifier loss in epoch {epoch}")));
            }
            loss_sum += value * batch.len() as f64;
            let grads = p.grads(&loss);
            opt.apply(&mut model.params, &grads);
        }
        let (val_loss, val_uar) = validation(&model, val)?;
        let record = EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_loss, val_uar };
        log::info!("classifier epoch {epoch}: train {:.4} val {:.4} uar {:.4}", record.train_loss, val_loss, val_uar);
        history.push(record);
        match stopper.update(epoch, val_uar) {
            StopDecision::Improved => best_params = model.params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    model.params = best_params;
    let best_epoch = stopper.best_epoch().expect("at least one epoch runs");
    Ok(TrainedClassifier { model, best_epoch, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CrnnConfig {
        CrnnConfig { channels: vec![2, 2, 3, 2], hidden: 4, ..CrnnConfig::default() }
    }

    fn names() -> Vec<String> {
        ["english", "hindi", "hindi-english"].map(String::from).to_vec()
    }

    fn spec(f: impl Fn(usize, usize) -> f64) -> MelSpectrogram {
        let v = (0..N_MELS * N_FRAMES).map(|i| f(i / N_FRAMES, i % N_FRAMES)).collect();
        MelSpectrogram::new(v, SpecDomain::Norm01).unwrap()
    }

    #[test]
    fn probabilities_are_normalised_rows() {
        let model = Classifier::new(small(), names(), 3).unwrap();
        let specs: Vec<_> = (0..5).map(|k| spec(|b, t| ((b * 7 + t * k) % 11) as f64 / 10.0)).collect();
        let probs = model.probabilities(&specs).unwrap();
        assert_eq!(probs.len(), 5);
        for row in probs {
            assert_eq!(row.len(), 3);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn zero_output_layer_gives_uniform_probabilities() {
        let mut model = Classifier::new(small(), names(), 3).unwrap();
        let w = model.params.param("crnn.out.w").unwrap().shape().to_vec();
        model.params.insert_param("crnn.out.w", Tensor::zeros(w));
        let probs = model.probabilities(&[spec(|b, _| b as f64 / 127.0)]).unwrap();
        for p in &probs[0] {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(model.predict(&[spec(|_, _| 0.5)]).unwrap(), vec![0]);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn rejects_wrong_domain() {
        let model = Classifier::new(small(), names(), 3).unwrap();
        let pm1 = MelSpectrogram::new(vec![0.0; N_MELS * N_FRAMES], SpecDomain::NormPm1).unwrap();
        assert!(matches!(model.predict(&[pm1]), Err(Error::Domain { .. })));
    }

    #[test]
    fn features_have_block_width_and_vanish_on_zero_input() {
        let mut model = Classifier::new(small(), names(), 3).unwrap();
        let specs = vec![spec(|b, t| ((b + t) % 5) as f64 / 4.0); 2];
        let f = model.extract_features(&specs).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].len(), small().feature_dim());
        assert_eq!(f[0], f[1]);
        assert_eq!(CrnnConfig::default().feature_dim(), 64);
        for i in 1..=FEATURE_BLOCK {
            let name = format!("crnn.conv{i}.b");
            let shape = model.params.param(&name).unwrap().shape().to_vec();
            model.params.insert_param(name, Tensor::zeros(shape));
        }
        let z = model.extract_features(&[spec(|_, _| 0.0)]).unwrap();
        assert!(z[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ClassifierConfig { model: small(), ..ClassifierConfig::default() };
        let model = Classifier::new(small(), names(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.to_checkpoint(4, &cfg, &[]).save(dir.path()).unwrap();
        let back = Classifier::load(dir.path()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn early_stopping_waits_patience_epochs_past_best() {
        let mut s = EarlyStopping::new(3);
        assert_eq!(s.update(1, 0.9), StopDecision::Improved);
        let mut epochs_after_best = 0;
        for (epoch, uar) in (2..).zip([0.8, 0.7, 0.6, 0.5, 0.4]) {
            epochs_after_best += 1;
            if s.update(epoch, uar) == StopDecision::Stop {
                break;
            }
        }
        assert_eq!(epochs_after_best, 4);
        assert_eq!(s.best_epoch(), Some(1));
        // Ties do not count as improvements.
        let mut s = EarlyStopping::new(0);
        s.update(1, 0.5);
        assert_eq!(s.update(2, 0.5), StopDecision::Stop);
    }

    #[test]
    fn empty_or_mislabelled_splits_are_rejected() {
        let cfg = ClassifierConfig { model: small(), max_epochs: 1, ..ClassifierConfig::default() };
        let ex = LabeledSpec { spec: spec(|_, _| 0.5), label: 0 };
        assert!(train_classifier(&[], std::slice::from_ref(&ex), &names(), &cfg, None).is_err());
        let bad = LabeledSpec { label: 7, ..ex.clone() };
        assert!(matches!(
            train_classifier(&[bad], &[ex], &names(), &cfg, None),
            Err(Error::UnknownLabel(_))
        ));
    }
}
