//! Training samples per label strategy, per-volume evaluation and the
//! minibatch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tnf_autograd::optim::{AdamW, AdamWConfig, CosineSchedule};
use tnf_autograd::{Graph, ParamStore, Real, Tensor, TensorError};

use crate::data::Case;
use crate::error::{Error, Result};
use crate::grouping::{group_labels, group_volume, positive_likelihood, select_max_likelihood, stack, AIR, MIN_POSITIVE_SLICES};
use crate::loss::{clip_finetune_loss, label_masked_loss, tnf_loss, LossWeights, CLIP_TAU};
use crate::metrics::{compute_metrics, ensemble_predict, BranchLikelihoods, MetricsReport, DEFAULT_THETA};
use crate::model::{Branch, BranchProbs, TnfModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStrategy {
    /// Every group is trained with the volume label.
    Consistent,
    /// Every group keeps its own image label; the fusion term is masked
    /// where image and tabular labels differ.
    LabelMasking,
    /// One group per volume, chosen by a pretrained image branch.
    MaxLikelihoodSelection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    pub enabled: bool,
    pub tau: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            enabled: false,
            tau: CLIP_TAU,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub strategy: LabelStrategy,
    pub clip: ClipConfig,
    /// Image-branch-only epochs on slice groups before the main stage.
    pub pretrain_epochs: usize,
    pub pretrain_lr_max: f64,
    /// Class-balanced epochs during pretraining.
    pub balance_pretrain: bool,
    pub group_size: usize,
    pub pad_value: f64,
    pub min_positive: usize,
    pub theta: f64,
    /// Write a checkpoint every this many epochs (0: only the best).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            lr_max: 1e-4,
            lr_min: 1e-5,
            weight_decay: 0.01,
            seed: 0,
            weights: LossWeights::default(),
            strategy: LabelStrategy::MaxLikelihoodSelection,
            clip: ClipConfig::default(),
            pretrain_epochs: 5,
            pretrain_lr_max: 1e-4,
            balance_pretrain: true,
            group_size: 8,
            pad_value: AIR,
            min_positive: MIN_POSITIVE_SLICES,
            theta: DEFAULT_THETA,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if self.clip.enabled && self.batch_size < 2 {
            return Err(Error::Config("the contrastive loss needs a batch size of at least 2".into()));
        }
        if self.strategy == LabelStrategy::MaxLikelihoodSelection && self.pretrain_epochs == 0 {
            return Err(Error::Config(
                "max-likelihood selection needs a pretrained image branch (pretrain_epochs ≥ 1)".into(),
            ));
        }
        if !(self.lr_max.is_finite() && self.pretrain_lr_max.is_finite() && self.lr_min >= 0.0) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group size must be positive".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        Ok(())
    }
}

/// One training input: a slab and a tabular vector with their labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub case_id: u64,
    pub image: Tensor<f32>,
    pub tabular: Vec<f32>,
    pub y_i: usize,
    pub y_t: usize,
}

fn groups_of(case: &Case, cfg: &TrainConfig) -> Result<Vec<Tensor<f32>>> {
    Ok(group_volume(&case.volume, cfg.group_size, cfg.pad_value)?.groups)
}

/// Every group of every case. Group image labels follow their slices
/// (a positive group carries the volume class); with `volume_labels` the
/// volume label is used throughout instead.
pub fn group_samples(cases: &[Case], cfg: &TrainConfig, volume_labels: bool) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for c in cases {
        let labels = group_labels(&c.slice_labels, cfg.group_size, cfg.min_positive);
        for (g, l) in groups_of(c, cfg)?.into_iter().zip(labels) {
            let y_t = c.label as usize;
            let y_i = if volume_labels || l > 0 { y_t } else { 0 };
            out.push(Sample {
                case_id: c.id,
                image: g,
                tabular: c.tabular.clone(),
                y_i,
                y_t,
            });
        }
    }
    Ok(out)
}

fn to_t<T: Real>(t: &Tensor<f32>) -> Tensor<T> {
    t.cast()
}

fn tab_batch<T: Real>(rows: &[&[f32]]) -> Result<Tensor<T>> {
    let n = rows.first().map_or(0, |r| r.len());
    let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::c(v as f64))).collect();
    Ok(Tensor::new(vec![rows.len(), n], data)?)
}

/// Positive likelihood of each group of each case under the image branch.
fn score_cases<T: Real>(model: &TnfModel<T>, groups: &[Vec<Tensor<f32>>]) -> Result<Vec<Vec<f64>>> {
    let flat: Vec<Tensor<T>> = groups.iter().flatten().map(to_t).collect();
    let mut scores = Vec::with_capacity(flat.len());
    for chunk in flat.chunks(128) {
        let refs: Vec<&Tensor<T>> = chunk.iter().collect();
        let p = model.predict(Some(&stack(&refs)?), None)?;
        scores.extend(positive_likelihood(p.image.as_deref().expect("image branch"), model.classes()));
    }
    let mut it = scores.into_iter();
    Ok(groups.iter().map(|g| it.by_ref().take(g.len()).collect()).collect())
}

/// One group per case: the one the image branch finds most positive. Labels
/// are the volume label for both modalities.
pub fn mls_samples<T: Real>(model: &TnfModel<T>, cases: &[Case], cfg: &TrainConfig) -> Result<(Vec<Sample>, Vec<usize>)> {
    let groups = cases.iter().map(|c| groups_of(c, cfg)).collect::<Result<Vec<_>>>()?;
    let scores = score_cases(model, &groups)?;
    let mut samples = Vec::with_capacity(cases.len());
    let mut picks = Vec::with_capacity(cases.len());
    for ((c, g), s) in cases.iter().zip(groups).zip(scores) {
        let j = select_max_likelihood(&s)?;
        picks.push(j);
        let y = c.label as usize;
        samples.push(Sample {
            case_id: c.id,
            image: g[j].clone(),
            tabular: c.tabular.clone(),
            y_i: y,
            y_t: y,
        });
    }
    Ok((samples, picks))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Image,
    Tabular,
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "tabular" => Ok(Modality::Tabular),
            _ => Err(Error::Config(format!("unknown modality {s:?} (expected image or tabular)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CasePrediction {
    pub case_id: u64,
    pub label: usize,
    /// Group fed to the image input, when present.
    pub group: Option<usize>,
    /// Per-branch probability vectors `[C]`.
    pub probs: BranchProbs,
}

/// Per-volume branch probabilities. The image input is the group the image
/// branch scores most positive; `drop` removes one modality (and with it
/// the fusion branch).
pub fn predict_cases<T: Real>(
    model: &TnfModel<T>,
    cases: &[Case],
    group_size: usize,
    pad_value: f64,
    drop: Option<Modality>,
) -> Result<Vec<CasePrediction>> {
    let mut out = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(64) {
        let use_image = drop != Some(Modality::Image);
        let use_tab = drop != Some(Modality::Tabular);
        let picks: Vec<Option<(usize, Tensor<f32>)>> = if use_image {
            let groups = chunk
                .iter()
                .map(|c| Ok(group_volume(&c.volume, group_size, pad_value)?.groups))
                .collect::<Result<Vec<_>>>()?;
            let scores = score_cases(model, &groups)?;
            groups
                .into_iter()
                .zip(scores)
                .map(|(mut g, s)| {
                    let j = select_max_likelihood(&s)?;
                    Ok(Some((j, g.swap_remove(j))))
                })
                .collect::<Result<_>>()?
        } else {
            vec![None; chunk.len()]
        };
        let img = if use_image {
            let t: Vec<Tensor<T>> = picks.iter().map(|p| to_t(&p.as_ref().expect("picked").1)).collect();
            Some(stack(&t.iter().collect::<Vec<_>>())?)
        } else {
            None
        };
        let tab = if use_tab {
            Some(tab_batch::<T>(&chunk.iter().map(|c| c.tabular.as_slice()).collect::<Vec<_>>())?)
        } else {
            None
        };
        let p = model.predict(img.as_ref(), tab.as_ref())?;
        let c = model.classes();
        let row = |v: &Option<Vec<f64>>, k: usize| v.as_ref().map(|v| v[k * c..(k + 1) * c].to_vec());
        for (k, case) in chunk.iter().enumerate() {
            out.push(CasePrediction {
                case_id: case.id,
                label: case.label as usize,
                group: picks[k].as_ref().map(|p| p.0),
                probs: BranchProbs {
                    image: row(&p.image, k),
                    tabular: row(&p.tabular, k),
                    fusion: row(&p.fusion, k),
                },
            });
        }
    }
    Ok(out)
}

/// What a prediction set is scored on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scoring {
    Ensemble,
    Branch(Branch),
}

/// Metrics of one branch, or of the ensemble of all present branches.
pub fn score_predictions(preds: &[CasePrediction], scoring: Scoring, theta: f64, classes: usize) -> Result<MetricsReport> {
    let mut truth = Vec::with_capacity(preds.len());
    let mut pred = Vec::with_capacity(preds.len());
    let mut scores = Vec::with_capacity(preds.len());
    for p in preds {
        let b = &p.probs;
        let lik = match scoring {
            Scoring::Ensemble => BranchLikelihoods {
                z_i: b.image.as_deref(),
                z_t: b.tabular.as_deref(),
                z_f: b.fusion.as_deref(),
            },
            Scoring::Branch(Branch::Image) => BranchLikelihoods {
                z_i: b.image.as_deref(),
                ..Default::default()
            },
            Scoring::Branch(Branch::Tabular) => BranchLikelihoods {
                z_t: b.tabular.as_deref(),
                ..Default::default()
            },
            Scoring::Branch(Branch::Fusion) => BranchLikelihoods {
                z_f: b.fusion.as_deref(),
                ..Default::default()
            },
        };
        let e = ensemble_predict(&lik, theta)?;
        truth.push(p.label);
        pred.push(e.label);
        scores.push(e.scores);
    }
    compute_metrics(&truth, &pred, &scores, classes)
}

/// Which loss a training stage minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Tri-branch loss with `y_f = y_i`.
    Tnf,
    LabelMasking,
    Clip { tau: f64 },
}

#[derive(Clone, Debug)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub objective: Objective,
    /// Reject batches whose image and tabular labels disagree.
    pub require_consistent: bool,
    pub select_on: Scoring,
    /// Each epoch draws, per image class, as many samples as the rarest
    /// class has.
    pub balance: bool,
    pub group_size: usize,
    pub pad_value: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_mcc: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_acc,val_mcc";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9},{:.6},{:.6}",
            self.epoch, self.lr, self.train_loss, self.val_acc, self.val_mcc
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        s.push_str(&e.csv_row());
        s.push('\n');
    }
    s
}

/// Index of the first maximum; the best-checkpoint rule.
pub fn best_epoch(val_acc: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &a) in val_acc.iter().enumerate() {
        if best.is_none_or(|b| a > val_acc[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct FitReport<T: Real> {
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose weights the model now holds.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub optimizer: AdamW<T>,
}

fn divergence(epoch: usize, step: u64, loss: f64) -> Error {
    Error::Divergence { epoch, step, loss }
}

/// Minibatch training with per-epoch validation; the model ends up holding
/// the weights of the best validation epoch. `on_epoch` sees every epoch's
/// model state after its log row is written.
pub fn fit<T: Real>(
    model: &mut TnfModel<T>,
    train: &[Sample],
    val: &[Case],
    cfg: &StageConfig,
    mut on_epoch: impl FnMut(&EpochLog, &TnfModel<T>, &AdamW<T>) -> Result<()>,
) -> Result<FitReport<T>> {
    cfg.weights.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be at least 1".into()));
    }
    let clip = matches!(cfg.objective, Objective::Clip { .. });
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    for (k, s) in train.iter().enumerate() {
        if by_class.len() <= s.y_i {
            by_class.resize(s.y_i + 1, Vec::new());
        }
        by_class[s.y_i].push(k);
    }
    by_class.retain(|c| !c.is_empty());
    let per_class = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let epoch_len = if cfg.balance { per_class * by_class.len() } else { train.len() };
    let mut batches_per_epoch = epoch_len.div_ceil(cfg.batch_size);
    if clip && epoch_len % cfg.batch_size == 1 {
        batches_per_epoch -= 1;
    }
    if batches_per_epoch == 0 {
        return Err(Error::Config("the contrastive loss needs at least 2 training samples".into()));
    }
    let w = cfg.weights;
    let need_image = w.lambda1 > 0.0 || w.lambda3 > 0.0;
    let need_tab = w.lambda2 > 0.0 || w.lambda3 > 0.0;
    let schedule = CosineSchedule::new(cfg.lr_max, cfg.lr_min, (cfg.epochs * batches_per_epoch) as u64)?;
    let adam = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(&model.store, adam, schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;
    for epoch in 1..=cfg.epochs {
        if cfg.balance {
            order.clear();
            for c in &mut by_class {
                c.shuffle(&mut rng);
                order.extend_from_slice(&c[..per_class]);
            }
        }
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        let mut lr = opt.current_lr();
        for batch in order.chunks(cfg.batch_size).take(batches_per_epoch) {
            let step = opt.step_count();
            let items: Vec<&Sample> = batch.iter().map(|&k| &train[k]).collect();
            let y_i: Vec<usize> = items.iter().map(|s| s.y_i).collect();
            let y_t: Vec<usize> = items.iter().map(|s| s.y_t).collect();
            if cfg.require_consistent && y_i != y_t {
                return Err(Error::Contract(format!(
                    "epoch {epoch}, step {step}: batch mixes image and tabular labels"
                )));
            }
            let mut g = Graph::new();
            let img = if need_image || clip {
                let t: Vec<Tensor<T>> = items.iter().map(|s| to_t(&s.image)).collect();
                Some(stack(&t.iter().collect::<Vec<_>>())?)
            } else {
                None
            };
            let tab = if need_tab || clip {
                Some(tab_batch::<T>(&items.iter().map(|s| s.tabular.as_slice()).collect::<Vec<_>>())?)
            } else {
                None
            };
            let run = |g: &mut Graph<T>| -> Result<_> {
                let out = model.forward(g, img.as_ref(), tab.as_ref())?;
                let lg = |b: Branch| out.logits(b);
                let first = |b: Branch, on: bool| -> Result<tnf_autograd::Var> {
                    if on {
                        lg(b)
                    } else {
                        // Unused term; any logits of the right batch size will do.
                        lg(if out.image.is_some() { Branch::Image } else { Branch::Tabular })
                    }
                };
                let zi = first(Branch::Image, w.lambda1 > 0.0)?;
                let zt = first(Branch::Tabular, w.lambda2 > 0.0)?;
                match cfg.objective {
                    Objective::Tnf => {
                        let zf = first(Branch::Fusion, w.lambda3 > 0.0)?;
                        tnf_loss(g, zi, zt, zf, &y_i, &y_t, &y_i, &w)
                    }
                    Objective::LabelMasking => {
                        let zf = first(Branch::Fusion, w.lambda3 > 0.0)?;
                        label_masked_loss(g, zi, zt, zf, &y_i, &y_t, &w)
                    }
                    Objective::Clip { tau } => {
                        let (fi, ft) = model.clip_features(g, &out)?;
                        clip_finetune_loss(g, zi, zt, fi, ft, &y_i, &y_t, &w, tau)
                    }
                }
            };
            let loss = match run(&mut g) {
                Ok(l) => l,
                Err(Error::Tensor(TensorError::NonFinite { .. })) => return Err(divergence(epoch, step, f64::NAN)),
                Err(e) => return Err(e),
            };
            let lv = g.data(loss)[0].f64();
            if !lv.is_finite() {
                return Err(divergence(epoch, step, lv));
            }
            match g.backward(loss) {
                Ok(()) => {}
                Err(TensorError::NonFinite { .. }) => return Err(divergence(epoch, step, lv)),
                Err(e) => return Err(e.into()),
            }
            lr = opt.step(&mut model.store, &g)?;
            if model.store.iter().any(|(_, _, t)| t.data().iter().any(|v| !v.is_finite())) {
                return Err(divergence(epoch, step, lv));
            }
            total += lv * items.len() as f64;
            seen += items.len();
        }
        let preds = predict_cases(model, val, cfg.group_size, cfg.pad_value, None)?;
        let m = score_predictions(&preds, cfg.select_on, cfg.theta, model.classes())?;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: total / seen as f64,
            val_acc: m.acc,
            val_mcc: m.mcc,
        };
        on_epoch(&entry, model, &opt)?;
        if best.as_ref().is_none_or(|b| entry.val_acc > b.1) {
            best = Some((epoch, entry.val_acc, model.store.clone()));
        }
        log.push(entry);
    }
    let (best_epoch, best_val_acc, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(FitReport {
        log,
        best_epoch,
        best_val_acc,
        optimizer: opt,
    })
}

impl StageConfig {
    /// Image-branch-only training on slice groups with their own labels.
    pub fn pretrain(cfg: &TrainConfig) -> Self {
        StageConfig {
            epochs: cfg.pretrain_epochs,
            lr_max: cfg.pretrain_lr_max,
            weights: LossWeights {
                lambda1: 1.0,
                lambda2: 0.0,
                lambda3: 0.0,
            },
            objective: Objective::Tnf,
            require_consistent: false,
            select_on: Scoring::Branch(Branch::Image),
            balance: cfg.balance_pretrain,
            ..Self::main(cfg)
        }
    }

    pub fn main(cfg: &TrainConfig) -> Self {
        let objective = if cfg.clip.enabled {
            Objective::Clip { tau: cfg.clip.tau }
        } else if cfg.strategy == LabelStrategy::LabelMasking {
            Objective::LabelMasking
        } else {
            Objective::Tnf
        };
        let w = cfg.weights;
        let select_on = match (w.lambda1 > 0.0, w.lambda2 > 0.0, w.lambda3 > 0.0 && !cfg.clip.enabled) {
            (false, false, true) => Scoring::Branch(Branch::Fusion),
            (true, false, false) => Scoring::Branch(Branch::Image),
            (false, true, false) => Scoring::Branch(Branch::Tabular),
            _ => Scoring::Ensemble,
        };
        StageConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr_max: cfg.lr_max,
            lr_min: cfg.lr_min,
            weight_decay: cfg.weight_decay,
            seed: cfg.seed,
            weights: w,
            objective,
            require_consistent: cfg.strategy == LabelStrategy::MaxLikelihoodSelection,
            select_on,
            balance: false,
            group_size: cfg.group_size,
            pad_value: cfg.pad_value,
            theta: cfg.theta,
        }
    }
}

/// Pretrain the image branch on slice groups.
pub fn pretrain_image<T: Real>(model: &mut TnfModel<T>, train: &[Case], val: &[Case], cfg: &TrainConfig) -> Result<FitReport<T>> {
    let samples = group_samples(train, cfg, false)?;
    fit(model, &samples, val, &StageConfig::pretrain(cfg), |_, _, _| Ok(()))
}

/// Training samples for the main stage under `cfg.strategy`.
pub fn main_samples<T: Real>(model: &TnfModel<T>, train: &[Case], cfg: &TrainConfig) -> Result<Vec<Sample>> {
    match cfg.strategy {
        LabelStrategy::Consistent => group_samples(train, cfg, true),
        LabelStrategy::LabelMasking => group_samples(train, cfg, false),
        LabelStrategy::MaxLikelihoodSelection => {
            let (s, _) = mls_samples(model, train, cfg)?;
            if let Some(bad) = s.iter().find(|s| s.y_i != s.y_t) {
                return Err(Error::Contract(format!("case {}: selected slab has inconsistent labels", bad.case_id)));
            }
            Ok(s)
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineReport<T: Real> {
    pub pretrain: Option<FitReport<T>>,
    pub main: FitReport<T>,
}

/// Optional image pretraining, then the main stage under the configured
/// strategy and loss.
pub fn train_pipeline<T: Real>(
    model: &mut TnfModel<T>,
    train: &[Case],
    val: &[Case],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog, &TnfModel<T>, &AdamW<T>) -> Result<()>,
) -> Result<PipelineReport<T>> {
    cfg.validate()?;
    let pretrain = if cfg.pretrain_epochs > 0 {
        Some(pretrain_image(model, train, val, cfg)?)
    } else {
        None
    };
    let samples = main_samples(model, train, cfg)?;
    let main = fit(model, &samples, val, &StageConfig::main(cfg), on_epoch)?;
    Ok(PipelineReport { pretrain, main })
}
