//! The five training strategies on in-memory image pairs.
//!
//! Every stage runs the same loop: random square crops (optionally flipped
//! and rotated), mini-batches, weighted cross entropy on the heads of the
//! stage objective, one optimiser step on the trainable parameter groups,
//! then validation on held-out pairs. Groups outside the trainable set run
//! with stored normalisation statistics and are never written, so they stay
//! bitwise unchanged. Each stage ends with the parameters of its best
//! validation epoch.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{Strategy, TrainConfig, WeightScheme};
use crate::data::{self, InputNorm};
use crate::error::{Error, Result};
use crate::inference::{decode_strategy, predict_tiled, score_pair, Decoded, PairScores, Role, StrategyModels};
use crate::loss::{self, HeadTarget, Objective};
use crate::metrics::ConfusionMatrix;
use crate::nn::{backward, forward, Architecture, GroupSet, Mode, Model, ModelSpec, ParamStore, Tensor};
use crate::nomenclature::{ChangePairs, Nomenclature};
use crate::optim::{Adam, Optimizer};
use crate::raster::{ImagePair, LabelMap};
use crate::tiling::TileSpec;

/// What one stage optimises.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Task {
    /// Single-image land-cover network, both dates as separate samples.
    LandCover,
    /// Early-fusion network on binary change.
    Change,
    /// Early-fusion network on change-pair classes.
    ChangePairs,
    /// Integrated network under the given objective.
    Integrated(Objective),
}

impl Task {
    pub fn role(self) -> Role {
        match self {
            Task::LandCover => Role::LandCover,
            Task::Change | Task::ChangePairs => Role::Change,
            Task::Integrated(_) => Role::Integrated,
        }
    }

    fn objective(self) -> Objective {
        match self {
            Task::LandCover => Objective::LandCover,
            Task::Change | Task::ChangePairs => Objective::Change,
            Task::Integrated(o) => o,
        }
    }

    /// Parameter groups updated by the stage.
    pub fn trainable(self) -> GroupSet {
        loss::default_trainable(self.objective())
    }

    /// Validation selects on land-cover kappa for land-cover stages and on
    /// binary change kappa otherwise.
    fn selects_on_land_cover(self) -> bool {
        matches!(self, Task::LandCover | Task::Integrated(Objective::LandCoverPair))
    }
}

/// Summary of one training epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub role: Role,
    pub stage: u8,
    pub epoch: u32,
    pub learning_rate: f64,
    pub steps: u32,
    pub skipped: u32,
    /// Mean loss per head over the epoch's steps.
    pub losses: Vec<(String, f64)>,
    pub val_kappa: Option<f64>,
}

impl EpochRecord {
    /// Tab-separated `key=value` line for the metrics log.
    pub fn log_line(&self) -> String {
        let mut s = format!(
            "stage={}\trole={}\tepoch={}\tlr={}\tsteps={}\tskipped={}",
            self.stage,
            self.role.name(),
            self.epoch,
            self.learning_rate,
            self.steps,
            self.skipped
        );
        for (h, l) in &self.losses {
            s.push_str(&format!("\tloss.{h}={l:.6}"));
        }
        match self.val_kappa {
            Some(k) => s.push_str(&format!("\tval_kappa={k:.6}")),
            None => s.push_str("\tval_kappa=none"),
        }
        s
    }
}

/// Progress notifications.
pub enum TrainEvent<'a> {
    /// After every optimiser step.
    Step { role: Role, stage: u8, step: u64, loss: f64, model: &'a Model<f32> },
    /// After every epoch, with the state as a checkpoint. `best` marks a new
    /// best validation score.
    Epoch { record: &'a EpochRecord, checkpoint: &'a Checkpoint, best: bool },
    Warning(String),
}

/// Observer that ignores everything.
pub fn quiet(_: TrainEvent<'_>) -> Result<()> {
    Ok(())
}

/// Splits pair indices into training and validation parts. At least one
/// pair is kept for training; a positive fraction validates at least one
/// pair when two or more are available.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if fraction <= 0.0 || n < 2 {
        return (idx, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5a11);
    idx.shuffle(&mut rng);
    let k = (libm::round(n as f64 * fraction) as usize).clamp(1, n - 1);
    let mut val = idx.split_off(n - k);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Training run of one strategy over borrowed pairs.
pub struct Session<'a> {
    pub config: TrainConfig,
    pub land_cover: Nomenclature,
    pub models: StrategyModels,
    pub optimizers: Vec<(Role, Adam<f32>)>,
    pub history: Vec<EpochRecord>,
    train: Vec<&'a ImagePair>,
    val: Vec<&'a ImagePair>,
    rng: ChaCha8Rng,
    steps: u64,
    stage: u8,
    epoch: u32,
}

impl<'a> Session<'a> {
    /// Validates the configuration, holds out validation pairs, fits the
    /// input statistics on the training part and initialises the networks.
    pub fn new(config: TrainConfig, land_cover: &Nomenclature, pairs: &'a [ImagePair]) -> Result<Self> {
        config.validate()?;
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("no training pairs".into()));
        }
        let (tr, va) = split_validation(pairs.len(), config.val_fraction, config.seed);
        let train: Vec<&ImagePair> = tr.iter().map(|&i| &pairs[i]).collect();
        let val: Vec<&ImagePair> = va.iter().map(|&i| &pairs[i]).collect();
        let norm = InputNorm::fit(train.iter().copied())?;
        let channels = norm.channels();
        let preset = config.preset();
        let mut models = Vec::new();
        let mut optimizers = Vec::new();
        for (k, &role) in StrategyModels::roles(config.strategy).iter().enumerate() {
            let spec = match role {
                Role::LandCover => ModelSpec::new(Architecture::LcmBranch, channels, land_cover.n_scored(), preset),
                Role::Change => {
                    let n = if config.strategy == Strategy::S2 {
                        ChangePairs::from_land_cover(land_cover)?.nomenclature().len()
                    } else {
                        2
                    };
                    ModelSpec::new(Architecture::FcEfRes, channels, n, preset)
                }
                Role::Integrated => ModelSpec::new(Architecture::Integrated, channels, land_cover.n_scored(), preset),
            };
            let m = Model::<f32>::new(spec, config.seed.wrapping_add(1 + k as u64))?;
            let mut opt = Adam::new(&m.graph, config.learning_rate);
            opt.weight_decay = config.weight_decay;
            optimizers.push((role, opt));
            models.push((role, m));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(7));
        Ok(Self {
            models: StrategyModels { strategy: config.strategy, land_cover: land_cover.clone(), norm, models },
            land_cover: land_cover.clone(),
            config,
            optimizers,
            history: Vec::new(),
            train,
            val,
            rng,
            steps: 0,
            stage: 0,
            epoch: 0,
        })
    }

    pub fn train_pairs(&self) -> &[&'a ImagePair] {
        &self.train
    }

    pub fn val_pairs(&self) -> &[&'a ImagePair] {
        &self.val
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            models: self.models.clone(),
            optimizers: self.optimizers.clone(),
            stage: self.stage,
            epoch: self.epoch,
            history: self.history.clone(),
        }
    }

    /// Runs every stage of the configured strategy.
    pub fn run(&mut self, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<()> {
        let e1 = self.config.epochs_stage1;
        match self.config.strategy {
            Strategy::S1 => self.fit(Task::LandCover, 1, e1, observer),
            Strategy::S2 => self.fit(Task::ChangePairs, 1, e1, observer),
            Strategy::S3 => {
                self.fit(Task::LandCover, 1, e1, observer)?;
                self.fit(Task::Change, 1, e1, observer)
            }
            Strategy::S4_1 => {
                let lambda = self.config.lambda.ok_or_else(|| Error::Config("strategy S4_1 requires lambda".into()))?;
                self.fit(Task::Integrated(Objective::Combined { lambda }), 1, e1, observer)
            }
            Strategy::S4_2 => {
                self.stage1_land_cover(observer)?;
                self.stage2_change(observer)
            }
        }
    }

    fn require_sequential(&self) -> Result<()> {
        if self.config.strategy != Strategy::S4_2 {
            return Err(Error::Config(format!("sequential stages need strategy S4_2, not {}", self.config.strategy)));
        }
        Ok(())
    }

    /// Land-cover branches only; the change branch stays untouched.
    pub fn stage1_land_cover(&mut self, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<()> {
        self.require_sequential()?;
        self.fit(Task::Integrated(Objective::LandCoverPair), 1, self.config.epochs_stage1, observer)
    }

    /// Change branch only, land-cover branches frozen.
    pub fn stage2_change(&mut self, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<()> {
        self.require_sequential()?;
        self.fit(Task::Integrated(Objective::Change), 2, self.config.epochs_stage2, observer)
    }

    fn model(&self, role: Role) -> Result<&Model<f32>> {
        self.models.model(role).ok_or_else(|| Error::InvalidArgument(format!("no {} network", role.name())))
    }

    /// Pairs carrying the labels a task needs.
    fn usable(&self, task: Task) -> Vec<&'a ImagePair> {
        self.train
            .iter()
            .copied()
            .filter(|p| match task {
                Task::LandCover => p.lcm1.is_some() || p.lcm2.is_some(),
                Task::ChangePairs | Task::Integrated(_) => p.lcm1.is_some() && p.lcm2.is_some(),
                Task::Change => p.change.is_some() || (p.lcm1.is_some() && p.lcm2.is_some()),
            })
            .collect()
    }

    /// Class weights per head name from whole training pairs, plus
    /// warnings about classes without pixels.
    fn weights(&self, task: Task, pairs: &[&ImagePair], cp: Option<&ChangePairs>) -> Result<(Vec<(&'static str, Vec<f32>)>, Vec<String>)> {
        let mut per_head: Vec<(&'static str, Vec<Vec<u32>>)> = Vec::new();
        for p in pairs {
            let data = |m: &Option<LabelMap>| m.as_ref().map(|m| m.data().to_vec());
            let (l1, l2, ch) = (data(&p.lcm1), data(&p.lcm2), data(&p.change));
            let t = targets(task, &self.land_cover, l1.as_deref(), l2.as_deref(), ch.as_deref(), p.image1.data().len() / p.image1.channels(), cp)?;
            for (name, v) in t {
                match per_head.iter_mut().find(|e| e.0 == name) {
                    Some(e) => e.1.push(v),
                    None => per_head.push((name, vec![v])),
                }
            }
        }
        // both dates share one land-cover weighting
        let lcm_counts = data::head_counts(
            per_head.iter().filter(|e| e.0 != "change").flat_map(|e| e.1.iter().map(Vec::as_slice)),
        );
        let mut out = Vec::new();
        let mut warnings = Vec::new();
        for (name, ts) in &per_head {
            let n_heads = match (*name, cp) {
                ("change", Some(cp)) => cp.nomenclature().len(),
                ("change", None) => 2,
                _ => self.land_cover.n_scored(),
            };
            let w = match self.config.class_weights {
                WeightScheme::Uniform => vec![1.0; n_heads],
                WeightScheme::InverseFrequency => {
                    let counts =
                        if *name == "change" { data::head_counts(ts.iter().map(Vec::as_slice)) } else { lcm_counts.clone() };
                    let (w, warn) = data::head_weights(&counts, n_heads, self.config.clip_max)?;
                    if *name != "lcm2" {
                        warnings.extend(warn.into_iter().map(|w| format!("head {name}: {}", w.message)));
                    }
                    w
                }
            };
            out.push((*name, w.into_iter().map(|v| v as f32).collect()));
        }
        Ok((out, warnings))
    }

    fn fit(&mut self, task: Task, stage: u8, epochs: u32, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<()> {
        let role = task.role();
        let pairs = self.usable(task);
        if pairs.is_empty() {
            return Err(Error::InvalidArgument(format!("no training pair carries the labels {task:?} needs")));
        }
        let cp = match task {
            Task::ChangePairs => Some(ChangePairs::from_land_cover(&self.land_cover)?),
            _ => None,
        };
        let (weights, warnings) = self.weights(task, &pairs, cp.as_ref())?;
        for w in warnings {
            observer(TrainEvent::Warning(w))?;
        }
        let objective = task.objective();
        let trainable = task.trainable();
        let heads: &[&str] = objective.heads();
        let n = self.config.crop_size;
        let mut best: Option<(Option<f64>, ParamStore<f32>)> = None;
        self.stage = stage;
        for epoch in 0..epochs {
            self.epoch = epoch + 1;
            let lr = self.config.learning_rate * libm::pow(self.config.lr_decay, f64::from(epoch));
            self.optimizer(role).set_learning_rate(lr);

            let mut crops = Vec::with_capacity(pairs.len() * self.config.crops_per_pair);
            for p in &pairs {
                for _ in 0..self.config.crops_per_pair {
                    crops.push(data::random_crop(p, &self.models.norm, n, self.config.augment, &mut self.rng)?);
                }
            }
            // samples: (crop index, date) with date 0 meaning both images
            let mut samples: Vec<(usize, u8)> = match task {
                Task::LandCover => (0..crops.len())
                    .flat_map(|i| [(i, 1u8), (i, 2u8)])
                    .filter(|&(i, d)| if d == 1 { crops[i].lcm1.is_some() } else { crops[i].lcm2.is_some() })
                    .collect(),
                _ => (0..crops.len()).map(|i| (i, 0)).collect(),
            };
            samples.shuffle(&mut self.rng);

            let mut sums: Vec<(String, f64)> = heads.iter().map(|h| (h.to_string(), 0.0)).collect();
            let (mut steps, mut skipped) = (0u32, 0u32);
            for batch in samples.chunks(self.config.batch_size) {
                let c = self.models.norm.channels();
                let mut in1 = Vec::with_capacity(batch.len() * c * n * n);
                let mut in2 = Vec::new();
                let mut tgt: Vec<(&'static str, Vec<u32>)> = heads.iter().map(|h| (*h, Vec::new())).collect();
                for &(i, d) in batch {
                    let crop = &crops[i];
                    let t = targets(task, &self.land_cover, crop.lcm1.as_deref(), crop.lcm2.as_deref(), crop.change.as_deref(), n * n, cp.as_ref())?;
                    match d {
                        1 | 2 => {
                            in1.extend_from_slice(if d == 1 { &crop.image1 } else { &crop.image2 });
                            let key = if d == 1 { "lcm1" } else { "lcm2" };
                            let v = &t.iter().find(|e| e.0 == key).unwrap().1;
                            tgt[0].1.extend_from_slice(v);
                        }
                        _ => {
                            in1.extend_from_slice(&crop.image1);
                            in2.extend_from_slice(&crop.image2);
                            for (name, v) in &mut tgt {
                                v.extend_from_slice(&t.iter().find(|e| e.0 == *name).unwrap().1);
                            }
                        }
                    }
                }
                let b = batch.len();
                let x1 = Tensor::from_vec(b, c, n, n, in1);
                let x2 = (!in2.is_empty()).then(|| Tensor::from_vec(b, c, n, n, in2));
                let inputs: Vec<&Tensor<f32>> = core::iter::once(&x1).chain(x2.as_ref()).collect();
                let head_targets: Vec<HeadTarget<'_, f32>> = tgt
                    .iter()
                    .map(|(name, v)| {
                        let wkey = if task == Task::LandCover { "lcm1" } else { *name };
                        HeadTarget { head: name, targets: v, weights: &weights.iter().find(|e| e.0 == wkey).unwrap().1 }
                    })
                    .collect();

                let model = self.models.model_mut(role).unwrap();
                let pass = forward(&model.graph, &model.params, &inputs, Mode::Train(trainable), Some(heads))?;
                let Some(value) = loss::evaluate(&model.graph, &pass, objective, &head_targets)? else {
                    skipped += 1;
                    observer(TrainEvent::Warning(format!(
                        "stage {stage} epoch {}: batch without scored pixels skipped",
                        epoch + 1
                    )))?;
                    continue;
                };
                let grads = backward(&model.graph, &model.params, &pass, value.head_grads, trainable)?;
                let opt = &mut self.optimizers.iter_mut().find(|(r, _)| *r == role).unwrap().1;
                opt.step(&model.graph, &mut model.params, &grads, trainable);
                model.params.apply_batch_stats(&pass.stats);
                for (h, l) in &value.terms {
                    if let Some(s) = sums.iter_mut().find(|s| s.0 == *h) {
                        s.1 += f64::from(*l);
                    }
                }
                steps += 1;
                self.steps += 1;
                let total = f64::from(value.total);
                if !total.is_finite() {
                    return Err(Error::NonFinite(self.steps as usize));
                }
                observer(TrainEvent::Step { role, stage, step: self.steps, loss: total, model })?;
            }
            for s in &mut sums {
                s.1 /= f64::from(steps.max(1));
            }
            let val_kappa = self.validate(task)?;
            let record = EpochRecord {
                role,
                stage,
                epoch: epoch + 1,
                learning_rate: lr,
                steps,
                skipped,
                losses: sums,
                val_kappa,
            };
            let improved = match &best {
                None => true,
                Some((prev, _)) => match (val_kappa, prev) {
                    (Some(k), Some(p)) => k > *p,
                    (Some(_), None) => true,
                    (None, _) => self.val.is_empty(),
                },
            };
            if improved {
                best = Some((val_kappa, self.model(role)?.params.clone()));
            }
            self.history.push(record.clone());
            let ck = self.checkpoint();
            observer(TrainEvent::Epoch { record: &record, checkpoint: &ck, best: improved })?;
        }
        if let Some((_, params)) = best {
            self.models.model_mut(role).unwrap().params = params;
        }
        Ok(())
    }

    fn optimizer(&mut self, role: Role) -> &mut Adam<f32> {
        &mut self.optimizers.iter_mut().find(|(r, _)| *r == role).unwrap().1
    }

    /// Kappa on the validation pairs; `None` without validation pairs or
    /// when undefined.
    fn validate(&self, task: Task) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let model = self.model(task.role())?;
        let spec = TileSpec { stride: self.config.tile.tile_size, ..self.config.tile };
        let nom = &self.land_cover;
        let bin = Nomenclature::binary_change();
        let mut cd = ConfusionMatrix::new(&bin);
        let mut lc = ConfusionMatrix::new(nom);
        for pair in &self.val {
            let scores = match task {
                Task::LandCover => {
                    let mut heads = Vec::new();
                    for (name, img) in [("lcm1", &pair.image1), ("lcm2", &pair.image2)] {
                        let mut hs = predict_tiled(model, &self.models.norm, &[img], &spec)?.remove(0);
                        hs.head = name.into();
                        heads.push(hs);
                    }
                    PairScores { heads }
                }
                _ => PairScores { heads: predict_tiled(model, &self.models.norm, &[&pair.image1, &pair.image2], &spec)? },
            };
            if task.selects_on_land_cover() {
                for (name, truth) in [("lcm1", &pair.lcm1), ("lcm2", &pair.lcm2)] {
                    if let Some(t) = truth {
                        let s = scores.get(name).ok_or_else(|| Error::MissingHead(name.into()))?;
                        let codes = s.argmax().into_iter().map(|i| nom.code_of_head(i).unwrap()).collect();
                        lc.accumulate(nom, t, &LabelMap::new(s.height, s.width, codes, nom)?, None)?;
                    }
                }
            } else {
                let change = match task {
                    Task::ChangePairs => decode_strategy(&scores, Strategy::S2, nom)?.change,
                    _ => {
                        let s = scores.get("change").ok_or_else(|| Error::MissingHead("change".into()))?;
                        let codes = s.argmax().into_iter().map(|i| bin.code_of_head(i).unwrap()).collect();
                        LabelMap::new(s.height, s.width, codes, &bin)?
                    }
                };
                let d = Decoded { change, lcm1: None, lcm2: None, semantic: None };
                let (m, _) = score_pair(&d, pair, nom)?;
                cd = cd.merge(&m)?;
            }
        }
        let m = if task.selects_on_land_cover() { lc } else { cd };
        Ok(m.metrics().ok().and_then(|r| r.kappa))
    }
}

/// Head targets of one window for a task, keyed by head name. A
/// single-image land-cover task yields targets for both dates.
fn targets(
    task: Task,
    nom: &Nomenclature,
    lcm1: Option<&[u8]>,
    lcm2: Option<&[u8]>,
    change: Option<&[u8]>,
    len: usize,
    cp: Option<&ChangePairs>,
) -> Result<Vec<(&'static str, Vec<u32>)>> {
    let lc = |m: Option<&[u8]>| match m {
        Some(m) => data::land_cover_targets(m, nom),
        None => Ok(vec![loss::IGNORE; len]),
    };
    let ch = || data::change_targets(nom, lcm1, lcm2, change, len);
    Ok(match task {
        Task::LandCover => vec![("lcm1", lc(lcm1)?), ("lcm2", lc(lcm2)?)],
        Task::Change => vec![("change", ch()?)],
        Task::ChangePairs => {
            let cp = cp.ok_or_else(|| Error::InvalidArgument("change-pair task without a pair table".into()))?;
            match (lcm1, lcm2) {
                (Some(a), Some(b)) => vec![("change", data::change_pair_targets(cp, nom, a, b, change)?)],
                _ => return Err(Error::InvalidArgument("change-pair targets need both land-cover maps".into())),
            }
        }
        Task::Integrated(_) => vec![("change", ch()?), ("lcm1", lc(lcm1)?), ("lcm2", lc(lcm2)?)],
    })
}

/// Trains a strategy from scratch and returns the final checkpoint.
pub fn train(
    config: TrainConfig,
    land_cover: &Nomenclature,
    pairs: &[ImagePair],
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<Checkpoint> {
    let mut s = Session::new(config, land_cover, pairs)?;
    s.run(observer)?;
    Ok(s.checkpoint())
}
