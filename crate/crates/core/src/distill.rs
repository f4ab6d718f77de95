//! Teacher training, the four distillation structures and the two-step
//! progressive schedule.
//!
//! Within one step updates happen in a fixed order: student discriminator,
//! student generator, teacher discriminator, teacher generator. Teacher outputs
//! enter the distillation loss as constants, so the distillation loss never
//! produces teacher gradients.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::OneClassSplit;
use crate::eval::{self, EvalError};
use crate::losses::{self, DistillWeights, LossError, LossWeights};
use crate::model::{ArchSpec, Discriminator, GenCache, GenOutput, Generator, ModelError};
use crate::nn::{Adam, AdamConfig, Parameterized};
use crate::rng::{self, Stream};
use crate::tensor::{Real, Tensor};

/// Loss records kept for the divergence report.
pub const DIVERGENCE_WINDOW: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("inconsistent structure flags: {0}")]
    InconsistentFlags(String),
    #[error("teacher latent dimension {teacher} differs from student latent dimension {student}")]
    LatentMismatch { teacher: usize, student: usize },
    #[error("teacher has {teacher} input channels but student has {student}")]
    ChannelMismatch { teacher: usize, student: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("epoch callback failed: {0}")]
    Observer(Box<dyn std::error::Error + Send + Sync>),
    #[error("non-finite {role} loss at step {step}")]
    Divergence { step: u64, role: Role, recent: Vec<LossRecord> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Keep every n-th step's loss record in the history (0 = none).
    pub log_every: usize,
    /// Evaluate AUC every n epochs and always after the last one (0 = last only).
    pub eval_every: usize,
    /// Write a checkpoint every n epochs (0 = final only); used by the command-line tool.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, batch_size: 1, learning_rate: 0.002, beta1: 0.5, beta2: 0.999, seed: 0, log_every: 100, eval_every: 1, checkpoint_every: 0 }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if self.batch_size == 0 {
            return Err(DistillError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(DistillError::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(DistillError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn evaluates_after(&self, epoch: usize) -> bool {
        epoch == self.epochs || (self.eval_every > 0 && epoch % self.eval_every == 0)
    }
}

/// Which of the five losses are active, and whether the teacher is frozen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureFlags {
    /// Teacher generator loss.
    pub alpha: bool,
    /// Teacher discriminator loss.
    pub beta: bool,
    /// Student generator loss.
    pub mu: bool,
    /// Student discriminator loss.
    pub nu: bool,
    /// Distillation loss.
    pub lambda: bool,
    pub teacher_frozen: bool,
}

impl StructureFlags {
    pub fn validate(&self) -> Result<(), DistillError> {
        if self.teacher_frozen && (self.alpha || self.beta) {
            return Err(DistillError::InconsistentFlags("a frozen teacher cannot have active teacher losses".into()));
        }
        Ok(())
    }

    fn teacher_trains(&self) -> bool {
        self.alpha || self.beta
    }
}

/// The four named distillation structures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    /// Distillation loss only, teacher frozen.
    One = 1,
    /// Student GAN losses plus distillation, teacher frozen.
    Two = 2,
    /// Teacher GAN losses plus distillation, teacher trains.
    Three = 3,
    /// All five losses, teacher trains.
    Four = 4,
}

impl Structure {
    pub fn from_index(i: u32) -> Option<Self> {
        match i {
            1 => Some(Self::One),
            2 => Some(Self::Two),
            3 => Some(Self::Three),
            4 => Some(Self::Four),
            _ => None,
        }
    }

    pub fn flags(self) -> StructureFlags {
        let (alpha, beta, mu, nu, teacher_frozen) = match self {
            Self::One => (false, false, false, false, true),
            Self::Two => (false, false, true, true, true),
            Self::Three => (true, true, false, false, false),
            Self::Four => (true, true, true, true, false),
        };
        StructureFlags { alpha, beta, mu, nu, lambda: true, teacher_frozen }
    }

    pub fn name(self) -> String {
        format!("KDGAN-{}", self as u8)
    }
}

/// Second structure of the progressive schedule (the first is always [`Structure::Two`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProgressiveVariant {
    /// Then structure 3.
    TwoThree,
    /// Then structure 4.
    TwoFour,
}

impl ProgressiveVariant {
    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            23 => Some(Self::TwoThree),
            24 => Some(Self::TwoFour),
            _ => None,
        }
    }

    pub fn second(self) -> Structure {
        match self {
            Self::TwoThree => Structure::Three,
            Self::TwoFour => Structure::Four,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoThree => "P-KDGAN-II-23",
            Self::TwoFour => "P-KDGAN-II-24",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    pub loss: LossWeights,
    pub distill: DistillWeights,
}

/// Loss values of one update step; inactive terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub s_con: f64,
    pub s_enc: f64,
    pub s_adv: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub k1: f64,
    pub kx: f64,
    pub k2: f64,
    pub k_l: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,S_con,S_enc,S_adv,L_g,L_d,K1,Kx,K2,K_l";

    fn values(&self) -> [f64; 9] {
        [self.s_con, self.s_enc, self.s_adv, self.l_g, self.l_d, self.k1, self.kx, self.k2, self.k_l]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn csv_row(&self) -> String {
        let mut row = self.step.to_string();
        for v in self.values() {
            row += &format!(",{v}");
        }
        row
    }

    fn accumulate(&mut self, other: &LossRecord) {
        self.s_con += other.s_con;
        self.s_enc += other.s_enc;
        self.s_adv += other.s_adv;
        self.l_g += other.l_g;
        self.l_d += other.l_d;
        self.k1 += other.k1;
        self.kx += other.kx;
        self.k2 += other.k2;
        self.k_l += other.k_l;
    }

    fn scaled(mut self, s: f64) -> Self {
        for v in [
            &mut self.s_con,
            &mut self.s_enc,
            &mut self.s_adv,
            &mut self.l_g,
            &mut self.l_d,
            &mut self.k1,
            &mut self.kx,
            &mut self.k2,
            &mut self.k_l,
        ] {
            *v *= s;
        }
        self
    }
}

/// A generator/discriminator pair with its optimizer state and gradient buffers.
#[derive(Clone, Debug)]
pub struct GanPair<T> {
    pub spec: ArchSpec,
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
    opt_gen: Adam<Generator<T>>,
    opt_disc: Adam<Discriminator<T>>,
    grad_gen: Generator<T>,
    grad_disc: Discriminator<T>,
}

impl<T: Real> GanPair<T> {
    pub fn new<R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R, adam: AdamConfig) -> Self {
        let gen = Generator::new(spec, rng);
        let disc = Discriminator::new(spec, rng);
        Self::from_networks(gen, disc, adam)
    }

    /// Wraps existing networks with fresh optimizer state.
    pub fn from_networks(gen: Generator<T>, disc: Discriminator<T>, adam: AdamConfig) -> Self {
        Self {
            spec: gen.spec,
            opt_gen: Adam::new(&gen, adam),
            opt_disc: Adam::new(&disc, adam),
            grad_gen: gen.zeros_like(),
            grad_disc: disc.zeros_like(),
            gen,
            disc,
        }
    }

    pub fn reset_optimizers(&mut self, adam: AdamConfig) {
        self.opt_gen = Adam::new(&self.gen, adam);
        self.opt_disc = Adam::new(&self.disc, adam);
    }

    /// SHA-256 over every generator and discriminator tensor (parameters and
    /// running statistics), as little-endian f32.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.gen.tensors().into_iter().chain(self.disc.tensors()) {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update((v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn generator_checksum(&self) -> String {
        tensor_checksum(self.gen.params())
    }

    pub fn discriminator_checksum(&self) -> String {
        tensor_checksum(self.disc.params())
    }
}

/// SHA-256 of named parameter tensors.
pub fn tensor_checksum<T: Real>(tensors: Vec<(String, &Tensor<T>)>) -> String {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_f64_lossy().to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64_lossy()
}

fn scaled<T: Real>(g: Vec<T>, w: f64) -> Vec<T> {
    let w = T::from_f64_lossy(w);
    g.into_iter().map(|v| v * w).collect()
}

fn add_into<T: Real>(acc: &mut Tensor<T>, g: &[T]) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g) {
        *a += b;
    }
}

/// Cross-entropy of the discriminator on real `x` versus reconstructed `fake`;
/// accumulates parameter gradients into `grads`.
pub fn discriminator_objective<T: Real>(
    disc: &mut Discriminator<T>,
    x: &Tensor<T>,
    fake: &Tensor<T>,
    grads: &mut Discriminator<T>,
) -> Result<f64, ModelError> {
    let (real_out, real_cache) = disc.forward_train(x)?;
    let (fake_out, fake_cache) = disc.forward_train(fake)?;
    let loss = losses::discriminator_loss(real_out.prob.data(), fake_out.prob.data());
    let (g_real, g_fake) = losses::discriminator_loss_grad(real_out.prob.data(), fake_out.prob.data());
    let shape = real_out.prob.shape().to_vec();
    disc.backward_prob(&real_cache, Tensor::from_vec(&shape, g_real).expect("prob grad"), grads);
    disc.backward_prob(&fake_cache, Tensor::from_vec(fake_out.prob.shape(), g_fake).expect("prob grad"), grads);
    Ok(to_f64(loss))
}

/// Objective of a generator update: the GAN loss (when `disc` is given) plus the
/// distillation loss against `teacher` outputs (when given). Accumulates
/// parameter gradients of the combined objective into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Real>(
    gen: &Generator<T>,
    out: &GenOutput<T>,
    cache: &GenCache<T>,
    x: &Tensor<T>,
    disc: Option<&mut Discriminator<T>>,
    teacher: Option<&GenOutput<T>>,
    objectives: &Objectives,
    grads: &mut Generator<T>,
) -> Result<LossRecord, DistillError> {
    let mut rec = LossRecord::default();
    let mut g_z1 = Tensor::zeros(out.z1.shape());
    let mut g_x = Tensor::zeros(out.x_hat.shape());
    let mut g_z2 = Tensor::zeros(out.z2.shape());
    let (z1, x_hat, z2) = (out.z1.data(), out.x_hat.data(), out.z2.data());

    if let Some(disc) = disc {
        let w = &objectives.loss;
        rec.s_con = to_f64(losses::s_con(x.data(), x_hat)?);
        add_into(&mut g_x, &scaled(losses::l1_grad(x_hat, x.data())?, w.w_con));
        rec.s_enc = to_f64(losses::s_enc(z1, z2)?);
        add_into(&mut g_z1, &scaled(losses::mse_grad(z1, z2)?, w.w_enc));
        add_into(&mut g_z2, &scaled(losses::mse_grad(z2, z1)?, w.w_enc));
        let (feat_real, _) = disc.features_train(x)?;
        let (feat_fake, fake_cache) = disc.features_train(&out.x_hat)?;
        rec.s_adv = to_f64(losses::s_adv(feat_real.data(), feat_fake.data())?);
        let g_feat = scaled(losses::mse_grad(feat_fake.data(), feat_real.data())?, w.w_adv);
        let g_feat = Tensor::from_vec(feat_fake.shape(), g_feat).expect("feature grad");
        g_x.add_scaled(&disc.backward_features_to_input(&fake_cache, g_feat), T::one());
        rec.l_g = losses::generator_loss(w, rec.s_con, rec.s_enc, rec.s_adv);
    }

    if let Some(t) = teacher {
        if t.z1.len() != out.z1.len() {
            return Err(DistillError::LatentMismatch { teacher: t.z1.sample_len(), student: out.z1.sample_len() });
        }
        let w = &objectives.distill;
        rec.k1 = to_f64(losses::k1(t.z1.data(), z1)?);
        add_into(&mut g_z1, &scaled(losses::mse_grad(z1, t.z1.data())?, w.w1));
        rec.kx = to_f64(losses::kx(t.x_hat.data(), x_hat)?);
        add_into(&mut g_x, &scaled(losses::l1_grad(x_hat, t.x_hat.data())?, w.wx));
        rec.k2 = to_f64(losses::k2(t.z2.data(), z2)?);
        add_into(&mut g_z2, &scaled(losses::mse_grad(z2, t.z2.data())?, w.w2));
        rec.k_l = losses::k_l(w, rec.k1, rec.kx, rec.k2);
    }

    gen.backward(cache, g_z1, g_x, g_z2, grads);
    Ok(rec)
}

/// Discriminator and/or generator updates of one pair from an existing
/// training-mode generator pass.
fn update_pair<T: Real>(
    pair: &mut GanPair<T>,
    x: &Tensor<T>,
    fwd: &(GenOutput<T>, GenCache<T>),
    update_disc: bool,
    gan_loss: bool,
    teacher: Option<&GenOutput<T>>,
    objectives: &Objectives,
) -> Result<LossRecord, DistillError> {
    let (out, cache) = fwd;
    let mut l_d = 0.0;
    if update_disc {
        pair.grad_disc.zero_params();
        l_d = discriminator_objective(&mut pair.disc, x, &out.x_hat, &mut pair.grad_disc)?;
        pair.opt_disc.step(&mut pair.disc, &pair.grad_disc);
    }
    let mut rec = LossRecord::default();
    if gan_loss || teacher.is_some() {
        pair.grad_gen.zero_params();
        let disc = if gan_loss { Some(&mut pair.disc) } else { None };
        rec = generator_objective(&pair.gen, out, cache, x, disc, teacher, objectives, &mut pair.grad_gen)?;
        pair.opt_gen.step(&mut pair.gen, &pair.grad_gen);
    }
    rec.l_d = l_d;
    Ok(rec)
}

/// One standalone GAN step: discriminator update, then generator update.
pub fn gan_step<T: Real>(pair: &mut GanPair<T>, x: &Tensor<T>, objectives: &Objectives) -> Result<LossRecord, DistillError> {
    let fwd = pair.gen.forward_train(x)?;
    update_pair(pair, x, &fwd, true, true, None, objectives)
}

/// Loss records of one distillation step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepRecord {
    pub student: LossRecord,
    pub teacher: Option<LossRecord>,
}

/// Executes exactly the updates selected by `flags` on one batch.
pub fn distill_step<T: Real>(
    flags: &StructureFlags,
    teacher: &mut GanPair<T>,
    student: &mut GanPair<T>,
    x: &Tensor<T>,
    objectives: &Objectives,
) -> Result<StepRecord, DistillError> {
    flags.validate()?;
    check_compatible(&teacher.spec, &student.spec)?;

    // Training-mode teacher pass only when the teacher itself is updated; a
    // frozen teacher runs in evaluation mode and stays bit-identical.
    let teacher_fwd = if flags.teacher_trains() { Some(teacher.gen.forward_train(x)?) } else { None };
    let teacher_eval = if flags.lambda && teacher_fwd.is_none() { Some(teacher.gen.forward(x)?) } else { None };
    let targets = if flags.lambda { teacher_fwd.as_ref().map(|(o, _)| o).or(teacher_eval.as_ref()) } else { None };

    let mut record = StepRecord::default();
    if flags.nu || flags.mu || flags.lambda {
        let fwd = student.gen.forward_train(x)?;
        record.student = update_pair(student, x, &fwd, flags.nu, flags.mu, targets, objectives)?;
    }
    if let Some(fwd) = &teacher_fwd {
        record.teacher = Some(update_pair(teacher, x, fwd, flags.beta, flags.alpha, None, objectives)?);
    }
    Ok(record)
}

pub fn check_compatible(teacher: &ArchSpec, student: &ArchSpec) -> Result<(), DistillError> {
    if teacher.latent_dim != student.latent_dim {
        return Err(DistillError::LatentMismatch { teacher: teacher.latent_dim, student: student.latent_dim });
    }
    if teacher.input_channels != student.input_channels {
        return Err(DistillError::ChannelMismatch { teacher: teacher.input_channels, student: student.input_channels });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucPoint {
    pub epoch: usize,
    pub auc: f64,
    pub role: Role,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub role: Role,
    pub mean: LossRecord,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_losses: Vec<EpochLoss>,
    pub steps: Vec<(Role, LossRecord)>,
    pub auc: Vec<AucPoint>,
    pub steps_run: u64,
}

impl TrainHistory {
    pub fn final_auc(&self, role: Role) -> Option<f64> {
        self.auc.iter().rev().find(|p| p.role == role).map(|p| p.auc)
    }

    pub fn auc_csv(&self) -> String {
        let mut s = String::from("epoch,auc,role\n");
        for p in &self.auc {
            s += &format!("{},{},{}\n", p.epoch, p.auc, p.role);
        }
        s
    }

    /// Logged steps of both roles, `role` first.
    pub fn losses_csv(&self) -> String {
        let mut s = format!("role,{}\n", LossRecord::CSV_HEADER);
        for (role, r) in &self.steps {
            s += &format!("{role},{}\n", r.csv_row());
        }
        s
    }

    /// Appends another history, shifting its epochs and steps to follow this one.
    pub fn extend_after(&mut self, other: &TrainHistory) {
        let epoch_offset = self.epoch_losses.iter().map(|e| e.epoch).max().unwrap_or(0);
        let step_offset = self.steps_run;
        self.epoch_losses
            .extend(other.epoch_losses.iter().map(|e| EpochLoss { epoch: e.epoch + epoch_offset, ..*e }));
        self.steps.extend(other.steps.iter().map(|(role, r)| (*role, LossRecord { step: r.step + step_offset, ..*r })));
        self.auc.extend(other.auc.iter().map(|p| AucPoint { epoch: p.epoch + epoch_offset, ..*p }));
        self.steps_run += other.steps_run;
    }
}

/// Tracks per-step records for one run.
struct Recorder {
    history: TrainHistory,
    recent: VecDeque<LossRecord>,
    log_every: usize,
    sums: [(LossRecord, usize); 2],
}

impl Recorder {
    fn new(log_every: usize) -> Self {
        Self { history: TrainHistory::default(), recent: VecDeque::new(), log_every, sums: Default::default() }
    }

    fn record(&mut self, role: Role, mut rec: LossRecord) -> Result<(), DistillError> {
        let step = self.history.steps_run;
        rec.step = step;
        if self.recent.len() == DIVERGENCE_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(rec);
        if !rec.is_finite() {
            log::error!("non-finite {role} loss at step {step}: {rec:?}");
            return Err(DistillError::Divergence { step, role, recent: self.recent.iter().copied().collect() });
        }
        if self.log_every > 0 && step % self.log_every as u64 == 0 {
            self.history.steps.push((role, rec));
        }
        let slot = &mut self.sums[role as usize];
        slot.0.accumulate(&rec);
        slot.1 += 1;
        Ok(())
    }

    fn end_epoch(&mut self, epoch: usize) {
        for (i, role) in [Role::Teacher, Role::Student].into_iter().enumerate() {
            let (sum, count) = std::mem::take(&mut self.sums[i]);
            if count > 0 {
                self.history.epoch_losses.push(EpochLoss { epoch, role, mean: sum.scaled(1.0 / count as f64) });
            }
        }
    }

    fn auc(&mut self, epoch: usize, role: Role, gen: &Generator<f32>, split: &OneClassSplit) -> Result<f64, DistillError> {
        let auc = eval::evaluate_model(gen, split)?.auc;
        log::info!("epoch {epoch} {role} AUC {auc:.4}");
        self.history.auc.push(AucPoint { epoch, auc, role });
        Ok(auc)
    }
}

/// State handed to an epoch callback after each completed epoch.
pub struct EpochView<'a> {
    pub epoch: usize,
    pub teacher: &'a GanPair<f32>,
    pub student: Option<&'a GanPair<f32>>,
    pub history: &'a TrainHistory,
}

pub type ObserverResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

/// Called after every epoch, e.g. to write periodic checkpoints.
pub type Observer<'a> = dyn FnMut(&EpochView<'_>) -> ObserverResult + 'a;

fn no_observer(_: &EpochView<'_>) -> ObserverResult {
    Ok(())
}

fn shuffled_batches<R: Rng>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// A trained teacher and its history.
#[derive(Clone, Debug)]
pub struct TeacherRun {
    pub pair: GanPair<f32>,
    pub history: TrainHistory,
}

/// Trains a teacher GAN from random initialization.
pub fn train_teacher(split: &OneClassSplit, spec: &ArchSpec, cfg: &TrainConfig, objectives: &Objectives) -> Result<TeacherRun, DistillError> {
    train_teacher_observed(split, spec, cfg, objectives, &mut no_observer)
}

pub fn train_teacher_observed(
    split: &OneClassSplit,
    spec: &ArchSpec,
    cfg: &TrainConfig,
    objectives: &Objectives,
    observer: &mut Observer<'_>,
) -> Result<TeacherRun, DistillError> {
    spec.validate()?;
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(DistillError::InvalidConfig("training partition is empty".into()));
    }
    let mut pair = GanPair::new(spec, &mut rng::stream(cfg.seed, Stream::TeacherInit), cfg.adam());
    let history = train_standalone(&mut pair, split, cfg, objectives, Role::Teacher, observer)?;
    Ok(TeacherRun { pair, history })
}

/// Trains an existing pair with its own GAN losses only.
pub fn train_standalone(
    pair: &mut GanPair<f32>,
    split: &OneClassSplit,
    cfg: &TrainConfig,
    objectives: &Objectives,
    role: Role,
    observer: &mut Observer<'_>,
) -> Result<TrainHistory, DistillError> {
    let mut shuffle = rng::stream(cfg.seed, Stream::Shuffle);
    let mut rec = Recorder::new(cfg.log_every);
    for epoch in 1..=cfg.epochs {
        for idx in shuffled_batches(split.train.len(), cfg.batch_size, &mut shuffle) {
            let x = split.train.batch(&idx).0;
            let r = gan_step(pair, &x, objectives)?;
            rec.record(role, r)?;
            rec.history.steps_run += 1;
        }
        rec.end_epoch(epoch);
        if cfg.evaluates_after(epoch) {
            rec.auc(epoch, role, &pair.gen, split)?;
        }
        observer(&EpochView { epoch, teacher: pair, student: None, history: &rec.history }).map_err(DistillError::Observer)?;
    }
    Ok(rec.history)
}

/// Teacher and student after a distillation run.
#[derive(Clone, Debug)]
pub struct TrainedPair {
    pub teacher: GanPair<f32>,
    pub student: GanPair<f32>,
    pub structure: String,
    pub history: TrainHistory,
}

/// Runs `flags` for `cfg.epochs` epochs on an existing teacher/student pair.
/// Both optimizers start from fresh state.
pub fn run_structure(
    flags: &StructureFlags,
    mut teacher: GanPair<f32>,
    mut student: GanPair<f32>,
    split: &OneClassSplit,
    cfg: &TrainConfig,
    objectives: &Objectives,
    observer: &mut Observer<'_>,
) -> Result<(GanPair<f32>, GanPair<f32>, TrainHistory), DistillError> {
    flags.validate()?;
    cfg.validate()?;
    check_compatible(&teacher.spec, &student.spec)?;
    teacher.reset_optimizers(cfg.adam());
    student.reset_optimizers(cfg.adam());
    let mut shuffle = rng::stream(cfg.seed, Stream::Shuffle);
    let mut rec = Recorder::new(cfg.log_every);
    for epoch in 1..=cfg.epochs {
        for idx in shuffled_batches(split.train.len(), cfg.batch_size, &mut shuffle) {
            let x = split.train.batch(&idx).0;
            let step = distill_step(flags, &mut teacher, &mut student, &x, objectives)?;
            rec.record(Role::Student, step.student)?;
            if let Some(t) = step.teacher {
                rec.record(Role::Teacher, t)?;
            }
            rec.history.steps_run += 1;
        }
        rec.end_epoch(epoch);
        if cfg.evaluates_after(epoch) {
            rec.auc(epoch, Role::Student, &student.gen, split)?;
            if flags.teacher_trains() || epoch == cfg.epochs {
                rec.auc(epoch, Role::Teacher, &teacher.gen, split)?;
            }
        }
        observer(&EpochView { epoch, teacher: &teacher, student: Some(&student), history: &rec.history }).map_err(DistillError::Observer)?;
    }
    Ok((teacher, student, rec.history))
}

/// One distillation structure from a randomly initialized student.
pub fn run_kdgan(
    structure: Structure,
    teacher: GanPair<f32>,
    student_spec: &ArchSpec,
    split: &OneClassSplit,
    cfg: &TrainConfig,
    objectives: &Objectives,
) -> Result<TrainedPair, DistillError> {
    run_kdgan_observed(structure, teacher, student_spec, split, cfg, objectives, &mut no_observer)
}

pub fn run_kdgan_observed(
    structure: Structure,
    teacher: GanPair<f32>,
    student_spec: &ArchSpec,
    split: &OneClassSplit,
    cfg: &TrainConfig,
    objectives: &Objectives,
    observer: &mut Observer<'_>,
) -> Result<TrainedPair, DistillError> {
    student_spec.validate()?;
    check_compatible(&teacher.spec, student_spec)?;
    let student = GanPair::new(student_spec, &mut rng::stream(cfg.seed, Stream::StudentInit), cfg.adam());
    let (teacher, student, history) = run_structure(&structure.flags(), teacher, student, split, cfg, objectives, observer)?;
    Ok(TrainedPair { teacher, student, structure: structure.name(), history })
}

/// Both steps of the progressive schedule.
#[derive(Clone, Debug)]
pub struct ProgressiveRun {
    pub step1: TrainedPair,
    pub step2: TrainedPair,
}

impl ProgressiveRun {
    /// Step-1 history followed by step-2 history.
    pub fn full_history(&self) -> TrainHistory {
        let mut h = self.step1.history.clone();
        h.extend_after(&self.step2.history);
        h
    }
}

/// Structure 2 against the frozen teacher, then structure 3 or 4 starting from
/// both step-1 networks.
pub fn run_progressive(
    variant: ProgressiveVariant,
    teacher: GanPair<f32>,
    student_spec: &ArchSpec,
    split: &OneClassSplit,
    cfg_step1: &TrainConfig,
    cfg_step2: &TrainConfig,
    objectives: &Objectives,
) -> Result<ProgressiveRun, DistillError> {
    let step1 = run_kdgan(Structure::Two, teacher, student_spec, split, cfg_step1, objectives)?;
    let step2 = continue_progressive(variant, &step1, split, cfg_step2, objectives, &mut no_observer)?;
    Ok(ProgressiveRun { step1, step2 })
}

/// The second step alone, from step-1 networks.
pub fn continue_progressive(
    variant: ProgressiveVariant,
    step1: &TrainedPair,
    split: &OneClassSplit,
    cfg: &TrainConfig,
    objectives: &Objectives,
    observer: &mut Observer<'_>,
) -> Result<TrainedPair, DistillError> {
    let flags = variant.second().flags();
    let (teacher, student, history) = run_structure(&flags, step1.teacher.clone(), step1.student.clone(), split, cfg, objectives, observer)?;
    Ok(TrainedPair { teacher, student, structure: variant.name().to_string(), history })
}
