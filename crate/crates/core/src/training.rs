//! Losses, the teacher-forced training loop, and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spdn_tensor::optim::{DEFAULT_EPS, DEFAULT_RHO};
use spdn_tensor::{Adadelta, ParamGrads, Session, Tensor, Var};

use crate::decode::{DecodeMode, DecodeOutput};
use crate::error::{Result, SpdnError};
use crate::model::{Model, Variant};
use crate::synth::{sample_seed, Dataset, Example, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceVariant {
    /// Mean L1 length of the steps between consecutive points.
    AdjacentL1,
    /// Mean L1 deviation of each step from the mean step.
    StrideVariance,
}

impl DistanceVariant {
    pub fn name(self) -> &'static str {
        match self {
            DistanceVariant::AdjacentL1 => "adjacent_l1",
            DistanceVariant::StrideVariance => "stride_variance",
        }
    }
}

impl fmt::Display for DistanceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceVariant {
    type Err = SpdnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacent_l1" => Ok(DistanceVariant::AdjacentL1),
            "stride_variance" => Ok(DistanceVariant::StrideVariance),
            _ => {
                Err(SpdnError::Config(format!("unknown distance loss {s:?} (expected adjacent_l1 or stride_variance)")))
            }
        }
    }
}

/// The three terms of the objective and their weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub rec: f64,
    pub dist: f64,
    pub lambda: f64,
}

impl LossValue {
    /// `total − (rec + λ·dist)`.
    pub fn residual(&self) -> f64 {
        self.total - (self.rec + self.lambda * self.dist)
    }
}

pub fn total_loss(rec: f64, dist: f64, lambda: f64) -> Result<LossValue> {
    if !rec.is_finite() || !dist.is_finite() || !lambda.is_finite() {
        return Err(SpdnError::Numerical(format!("non-finite loss terms rec={rec} dist={dist} λ={lambda}")));
    }
    if rec < 0.0 || dist < 0.0 || lambda < 0.0 {
        return Err(SpdnError::Numerical(format!("negative loss terms rec={rec} dist={dist} λ={lambda}")));
    }
    Ok(LossValue { total: rec + lambda * dist, rec, dist, lambda })
}

/// Mean cross-entropy of each step against `labels` followed by EOS.
pub fn recognition_loss(s: &mut Session, logits: &[Var], labels: &[usize], eos: usize) -> Result<Var> {
    if logits.len() != labels.len() + 1 {
        return Err(SpdnError::Usage(format!("{} steps for {} labels plus EOS", logits.len(), labels.len())));
    }
    let mut terms = Vec::with_capacity(logits.len());
    for (t, &l) in logits.iter().enumerate() {
        let target = labels.get(t).copied().unwrap_or(eos);
        let ce = s.cross_entropy(l, target)?;
        terms.push(s.reshape(ce, &[1])?);
    }
    let all = s.concat(&terms, 0)?;
    Ok(s.mean(all))
}

/// Distance term over per-step points (each `[2]`); zero for a single point.
pub fn distance_loss(s: &mut Session, points: &[Var], variant: DistanceVariant) -> Result<Var> {
    let n = points.len();
    if n < 2 {
        return Ok(s.constant(Tensor::scalar(0.0)));
    }
    let m = n - 1;
    let flat = s.concat(points, 0)?;
    let prev = s.slice(flat, 0, 2 * m)?;
    let next = s.slice(flat, 2, 2 * m)?;
    let strides = s.sub(next, prev)?;
    let deviation = match variant {
        DistanceVariant::AdjacentL1 => strides,
        DistanceVariant::StrideVariance => {
            let rows = s.reshape(strides, &[m, 2])?;
            let w = s.constant(Tensor::full(&[m], -1.0 / m as f64));
            let neg_mean = s.matmul(w, rows)?;
            let dev = s.add_broadcast(rows, neg_mean)?;
            s.reshape(dev, &[2 * m])?
        }
    };
    let a = s.abs(deviation);
    let total = s.sum(a);
    Ok(s.scale(total, 1.0 / m as f64))
}

/// Plain evaluation of [`distance_loss`].
pub fn distance_value(points: &[[f64; 2]], variant: DistanceVariant) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let strides: Vec<[f64; 2]> = points.windows(2).map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]]).collect();
    let m = strides.len() as f64;
    let center = match variant {
        DistanceVariant::AdjacentL1 => [0.0, 0.0],
        DistanceVariant::StrideVariance => {
            [strides.iter().map(|d| d[0]).sum::<f64>() / m, strides.iter().map(|d| d[1]).sum::<f64>() / m]
        }
    };
    strides.iter().map(|d| (d[0] - center[0]).abs() + (d[1] - center[1]).abs()).sum::<f64>() / m
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    /// Last epochs (1-based) run at multipliers 1 and 0.1; later epochs use 0.01.
    pub lr_boundaries: [usize; 2],
    pub lambda: f64,
    pub seed: u64,
    pub distance: DistanceVariant,
    /// Also apply the distance term to the parallel decoder.
    pub dist_parallel: bool,
    pub clip: f64,
    pub rho: f64,
    pub eps: f64,
    /// Record wall-clock seconds in the metrics log (makes it non-reproducible).
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 100,
            epochs: 10,
            lr_boundaries: [5, 7],
            lambda: 1.0,
            seed: 0,
            distance: DistanceVariant::AdjacentL1,
            dist_parallel: false,
            clip: 5.0,
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
            log_wall_time: false,
        }
    }
}

pub const LR_MULTIPLIERS: [f64; 3] = [1.0, 0.1, 0.01];

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SpdnError::Config(m.to_string()));
        if self.batch == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a finite non-negative number");
        }
        if self.lr_boundaries[0] > self.lr_boundaries[1] {
            return bad("learning-rate boundaries must be non-decreasing");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.eps > 0.0) || !(self.clip > 0.0) {
            return bad("rho must lie in (0, 1); eps and clip must be positive");
        }
        Ok(())
    }

    /// Schedule multiplier for a 1-based epoch.
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_boundaries[0] {
            LR_MULTIPLIERS[0]
        } else if epoch <= self.lr_boundaries[1] {
            LR_MULTIPLIERS[1]
        } else {
            LR_MULTIPLIERS[2]
        }
    }

    fn uses_distance(&self, variant: Variant) -> bool {
        match variant {
            Variant::Serial => true,
            Variant::Parallel => self.dist_parallel,
            Variant::Attention => false,
        }
    }
}

/// Teacher-forced forward pass of one example: total-loss variable, its parts, and the decode record.
pub struct SampleLoss {
    pub total: Var,
    pub rec: f64,
    pub dist: f64,
    pub output: DecodeOutput,
}

pub fn sample_loss(
    model: &Model,
    s: &mut Session,
    image: &Tensor,
    label: &[usize],
    cfg: &TrainConfig,
) -> Result<SampleLoss> {
    let feats = model.features(s, image)?;
    let output = model.decode(s, feats, DecodeMode::TeacherForced(label), false)?;
    let rec = recognition_loss(s, &output.logits, label, model.eos())?;
    let (total, dist) = if cfg.uses_distance(model.cfg.variant) {
        let d = distance_loss(s, &output.anchors, cfg.distance)?;
        let weighted = s.scale(d, cfg.lambda);
        (s.add(rec, weighted)?, s.value(d).item())
    } else {
        (rec, 0.0)
    };
    Ok(SampleLoss { total, rec: s.value(rec).item(), dist, output })
}

fn exact_match(output: &DecodeOutput, label: &[usize], eos: usize) -> bool {
    output.symbols(eos) == label && output.argmax.get(label.len()) == Some(&eos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub batch: usize,
    pub loss: LossValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: LossValue,
    pub seq_acc: f64,
    pub mean_steps: f64,
    pub wall_sec: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,split,loss_total,loss_rec,loss_dist,seq_acc,mean_steps,wall_sec";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let wall = self.wall_sec.map_or_else(|| "na".to_string(), |w| format!("{w:.3}"));
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.6},{:.4},{}",
            self.epoch, self.split, self.loss.total, self.loss.rec, self.loss.dist, self.seq_acc, self.mean_steps, wall
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub const STEPS_HEADER: &str = "step,epoch,batch,loss_total,loss_rec,loss_dist,lambda";

pub fn steps_csv(steps: &[StepLog]) -> String {
    let mut out = format!("{STEPS_HEADER}\n");
    for (i, s) in steps.iter().enumerate() {
        let l = s.loss;
        out.push_str(&format!("{},{},{},{},{},{},{}\n", i, s.epoch, s.batch, l.total, l.rec, l.dist, l.lambda));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepLog>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Checks that the dataset matches the model's vocabulary and canvas.
pub fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    if data.vocab != model.vocab {
        return Err(SpdnError::Config(format!(
            "dataset vocabulary {:?} differs from the model's {:?}",
            data.vocab.symbols().iter().collect::<String>(),
            model.vocab.symbols().iter().collect::<String>()
        )));
    }
    if let Some((h, w)) = data.image_extents() {
        if (h, w) != (model.cfg.height, model.cfg.width) {
            return Err(SpdnError::Config(format!(
                "dataset images are {h}×{w}, model expects {}×{}",
                model.cfg.height, model.cfg.width
            )));
        }
    }
    let limit = model.cfg.decoder.t_max;
    if let Some(e) = data.examples.iter().find(|e| e.label.len() + 1 > limit) {
        return Err(SpdnError::Config(format!("label {:?} is too long for T_max = {limit}", e.text)));
    }
    Ok(())
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(SpdnError::io(path))
}

/// Trains in place. With `out`, writes `metrics.csv`, `steps.csv`, `best.spdn` and `last.spdn`.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    check_compatible(model, data)?;
    let train_set = data.split(Split::Train);
    let val_set = data.split(Split::Val);
    if train_set.is_empty() {
        return Err(SpdnError::Dataset("no training examples".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(SpdnError::io(dir))?;
    }
    let eos = model.eos();
    let mut opt = Adadelta::new(&model.store, cfg.rho, cfg.eps);
    let mut report = TrainReport { epochs: Vec::new(), steps: Vec::new(), best_epoch: 0, best_val_acc: -1.0 };
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed ^ 0x5eed, epoch as u64)));
        let (mut sum_total, mut sum_rec, mut sum_dist, mut correct, mut steps) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut grads = ParamGrads::zeros_like(&model.store);
            let (mut bt, mut br, mut bd) = (0.0, 0.0, 0.0);
            for &i in chunk {
                let ex = train_set[i];
                let mut s = Session::new(&model.store);
                let sl = sample_loss(model, &mut s, &ex.image, &ex.label, cfg)?;
                let total = s.value(sl.total).item();
                if !total.is_finite() {
                    return Err(diverged(out, epoch, b, chunk.iter().map(|&j| train_set[j].id), total));
                }
                correct += usize::from(exact_match(&sl.output, &ex.label, eos));
                steps += ex.label.len() + 1;
                s.backward(sl.total)?;
                s.accumulate_grads(&mut grads);
                bt += total;
                br += sl.rec;
                bd += sl.dist;
            }
            let n = chunk.len() as f64;
            grads.scale(1.0 / n);
            if !grads.is_finite() {
                return Err(diverged(out, epoch, b, chunk.iter().map(|&j| train_set[j].id), f64::NAN));
            }
            grads.clip_global_norm(cfg.clip);
            opt.step(&mut model.store, &grads, cfg.lr(epoch))?;
            let loss = LossValue { total: bt / n, rec: br / n, dist: bd / n, lambda: cfg.lambda };
            report.steps.push(StepLog { epoch, batch: b, loss });
            sum_total += bt;
            sum_rec += br;
            sum_dist += bd;
        }
        let n = train_set.len() as f64;
        let wall = cfg.log_wall_time.then(|| started.elapsed().as_secs_f64());
        report.epochs.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss: LossValue { total: sum_total / n, rec: sum_rec / n, dist: sum_dist / n, lambda: cfg.lambda },
            seq_acc: correct as f64 / n,
            mean_steps: steps as f64 / n,
            wall_sec: wall,
        });
        let improved = if val_set.is_empty() {
            true
        } else {
            let started = Instant::now();
            let loss = teacher_forced_loss(model, &val_set, cfg)?;
            let eval = evaluate(model, &val_set)?;
            report.epochs.push(EpochMetrics {
                epoch,
                split: Split::Val,
                loss,
                seq_acc: eval.seq_acc,
                mean_steps: eval.mean_steps,
                wall_sec: cfg.log_wall_time.then(|| started.elapsed().as_secs_f64()),
            });
            let better = eval.seq_acc > report.best_val_acc;
            if better {
                report.best_val_acc = eval.seq_acc;
            }
            better
        };
        if improved {
            report.best_epoch = epoch;
            if let Some(dir) = out {
                model.save(&dir.join("best.spdn"))?;
            }
        }
        if let Some(dir) = out {
            write(&dir.join("metrics.csv"), &metrics_csv(&report.epochs))?;
            write(&dir.join("steps.csv"), &steps_csv(&report.steps))?;
        }
    }
    if let Some(dir) = out {
        model.save(&dir.join("last.spdn"))?;
    }
    Ok(report)
}

fn diverged(out: Option<&Path>, epoch: usize, batch: usize, ids: impl Iterator<Item = usize>, value: f64) -> SpdnError {
    let ids: Vec<String> = ids.map(|i| format!("{i:06}")).collect();
    let msg = format!("non-finite loss ({value}) in epoch {epoch}, batch {batch}; sample ids {}", ids.join(" "));
    if let Some(dir) = out {
        // Best effort: the error itself carries the same diagnostic.
        let _ = fs::write(dir.join("diverged_batch.txt"), format!("{msg}\n"));
    }
    SpdnError::Numerical(format!("training aborted: {msg}"))
}

/// Mean teacher-forced loss terms over `examples`, without gradients.
pub fn teacher_forced_loss(model: &Model, examples: &[&Example], cfg: &TrainConfig) -> Result<LossValue> {
    let (mut t, mut r, mut d) = (0.0, 0.0, 0.0);
    for ex in examples {
        let mut s = Session::inference(&model.store);
        let sl = sample_loss(model, &mut s, &ex.image, &ex.label, cfg)?;
        t += s.value(sl.total).item();
        r += sl.rec;
        d += sl.dist;
    }
    let n = examples.len().max(1) as f64;
    Ok(LossValue { total: t / n, rec: r / n, dist: d / n, lambda: cfg.lambda })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub n: usize,
    pub correct: usize,
    pub seq_acc: f64,
    pub mean_steps: f64,
    /// Label length → (correct, total).
    pub by_length: BTreeMap<usize, (usize, usize)>,
    /// `(id, predicted text)` per example, in input order.
    pub predictions: Vec<(usize, String)>,
}

/// Exact-match accuracy of greedy decoding.
pub fn score(predictions: &[(usize, String)], examples: &[&Example], steps: &[usize]) -> EvalMetrics {
    let mut by_length: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for ((_, pred), ex) in predictions.iter().zip(examples) {
        let hit = *pred == ex.text;
        correct += usize::from(hit);
        let e = by_length.entry(ex.label.len()).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
    }
    let n = examples.len();
    EvalMetrics {
        n,
        correct,
        seq_acc: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        mean_steps: if n == 0 { 0.0 } else { steps.iter().sum::<usize>() as f64 / n as f64 },
        by_length,
        predictions: predictions.to_vec(),
    }
}

pub fn evaluate(model: &Model, examples: &[&Example]) -> Result<EvalMetrics> {
    let mut predictions = Vec::with_capacity(examples.len());
    let mut steps = Vec::with_capacity(examples.len());
    for ex in examples {
        let r = model.recognize(&ex.image)?;
        predictions.push((ex.id, r.text));
        steps.push(r.steps);
    }
    Ok(score(&predictions, examples, &steps))
}
