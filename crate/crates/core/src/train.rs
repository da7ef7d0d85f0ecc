//! Maximum-likelihood pretraining, discounted returns, clipped policy
//! updates and the adversarial alternation loop.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::clicklog::{SerpRecord, Split};
use crate::critic::{Discriminator, Pair};
use crate::error::{Error, Result};
use crate::metrics::{log_likelihood, perplexity, predict_all};
use crate::numkernel::{log_softmax, AdamConfig, AdamState};
use crate::policy::{Generator, Trajectory};
use crate::scalar::Scalar;

/// How the discriminator score turns into a reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardSign {
    /// `r = -ln D`: generated pairs the critic flags (D → 1) earn nothing.
    NegLogD,
    /// `r = ln D`.
    LogD,
}

impl FromStr for RewardSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_log_d" => Ok(Self::NegLogD),
            "log_d" => Ok(Self::LogD),
            other => Err(Error::Config(format!("reward_sign must be neg_log_d or log_d, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for RewardSign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NegLogD => "neg_log_d",
            Self::LogD => "log_d",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub lr_decay: f64,
    pub lr_pretrain: f64,
    pub l2: f64,
    pub dropout: f64,
    pub gamma: f64,
    pub lambda_entropy: f64,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    /// Generator updates per minibatch.
    pub g_step: usize,
    /// `(m, n)`: `m` sampled batches, each training the critic `n` times.
    pub d_step: (usize, usize),
    pub pretrain_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before the learning rate
    /// decays; a second stall after a decay stops training. 0 disables both.
    pub patience: usize,
    pub reward_sign: RewardSign,
    pub emb_size: usize,
    pub hidden_size: usize,
    pub init_scale: f64,
    /// Fixed epoch budget of neural surrogates in coverage runs.
    pub surrogate_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr_gen: 5e-4,
            lr_disc: 1e-3,
            lr_decay: 0.5,
            lr_pretrain: 1e-3,
            l2: 1e-5,
            dropout: 0.5,
            gamma: 0.1,
            lambda_entropy: 1e-2,
            ppo_clip: 0.2,
            ppo_epochs: 4,
            g_step: 1,
            d_step: (1, 1),
            pretrain_epochs: 10,
            max_epochs: 10,
            seed: 0,
            patience: 2,
            reward_sign: RewardSign::NegLogD,
            emb_size: 64,
            hidden_size: 64,
            init_scale: 0.1,
            surrogate_epochs: 5,
        }
    }
}

impl TrainConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        let v = value.trim();
        match key {
            "batch_size" => self.batch_size = num(key, v)?,
            "lr_gen" => self.lr_gen = num(key, v)?,
            "lr_disc" => self.lr_disc = num(key, v)?,
            "lr_decay" => self.lr_decay = num(key, v)?,
            "lr_pretrain" => self.lr_pretrain = num(key, v)?,
            "l2" => self.l2 = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "lambda_entropy" => self.lambda_entropy = num(key, v)?,
            "ppo_clip" => self.ppo_clip = num(key, v)?,
            "ppo_epochs" => self.ppo_epochs = num(key, v)?,
            "g_step" => self.g_step = num(key, v)?,
            "d_step" => {
                let (m, n) = v
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("d_step must be \"m,n\", got {v:?}")))?;
                self.d_step = (num(key, m.trim())?, num(key, n.trim())?);
            }
            "pretrain_epochs" => self.pretrain_epochs = num(key, v)?,
            "max_epochs" => self.max_epochs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "reward_sign" => self.reward_sign = v.parse()?,
            "emb_size" => self.emb_size = num(key, v)?,
            "hidden_size" => self.hidden_size = num(key, v)?,
            "init_scale" => self.init_scale = num(key, v)?,
            "surrogate_epochs" => self.surrogate_epochs = num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(self.ppo_clip > 0.0 && self.ppo_clip < 1.0) {
            return fail("ppo_clip must lie in (0, 1)");
        }
        if [self.lr_gen, self.lr_disc, self.lr_pretrain].iter().any(|lr| !(*lr > 0.0)) {
            return fail("learning rates must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.l2 < 0.0 || self.lambda_entropy < 0.0 {
            return fail("l2 and lambda_entropy must be non-negative");
        }
        if self.batch_size == 0 || self.emb_size == 0 || self.hidden_size == 0 {
            return fail("batch_size, emb_size and hidden_size must be positive");
        }
        Ok(())
    }

    /// Canonical `key = value` rendering (round-trips through `from_text`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("batch_size", self.batch_size.to_string());
        put("lr_gen", format!("{:?}", self.lr_gen));
        put("lr_disc", format!("{:?}", self.lr_disc));
        put("lr_decay", format!("{:?}", self.lr_decay));
        put("lr_pretrain", format!("{:?}", self.lr_pretrain));
        put("l2", format!("{:?}", self.l2));
        put("dropout", format!("{:?}", self.dropout));
        put("gamma", format!("{:?}", self.gamma));
        put("lambda_entropy", format!("{:?}", self.lambda_entropy));
        put("ppo_clip", format!("{:?}", self.ppo_clip));
        put("ppo_epochs", self.ppo_epochs.to_string());
        put("g_step", self.g_step.to_string());
        put("d_step", format!("{},{}", self.d_step.0, self.d_step.1));
        put("pretrain_epochs", self.pretrain_epochs.to_string());
        put("max_epochs", self.max_epochs.to_string());
        put("seed", self.seed.to_string());
        put("patience", self.patience.to_string());
        put("reward_sign", self.reward_sign.to_string());
        put("emb_size", self.emb_size.to_string());
        put("hidden_size", self.hidden_size.to_string());
        put("init_scale", format!("{:?}", self.init_scale));
        put("surrogate_epochs", self.surrogate_epochs.to_string());
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub phase: &'static str,
    pub epoch: usize,
    /// Mean NLL per position when pretraining; negated mean per-step
    /// critic reward in the adversarial phase.
    pub train_loss: f64,
    pub disc_loss: f64,
    pub valid_ll: f64,
    pub valid_ppl: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// Row index of the checkpoint kept as the final model.
    pub best_row: Option<usize>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn best_valid_ppl(&self) -> Option<f64> {
        self.best_row.map(|i| self.rows[i].valid_ppl)
    }

    pub fn extend(&mut self, other: TrainReport) {
        let offset = self.rows.len();
        self.rows.extend(other.rows);
        if other.best_row.is_some() {
            self.best_row = other.best_row.map(|i| i + offset);
        }
        self.stopped_early |= other.stopped_early;
    }

    /// Per-epoch table; wall-clock lives in [`TrainReport::timing_tsv`] so
    /// this stays reproducible.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("phase\tepoch\ttrain_loss\tdisc_loss\tvalid_ll\tvalid_ppl\tlr_gen\tlr_disc\tbest\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.10}\t{:.10}\t{:.10}\t{:.10}\t{:e}\t{:e}\t{}",
                r.phase,
                r.epoch,
                r.train_loss,
                r.disc_loss,
                r.valid_ll,
                r.valid_ppl,
                r.lr_gen,
                r.lr_disc,
                (self.best_row == Some(i)) as u8
            );
        }
        s
    }

    pub fn timing_tsv(&self) -> String {
        let mut s = String::from("phase\tepoch\tseconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{:.3}", r.phase, r.epoch, r.seconds);
        }
        s
    }
}

/// Validation LL and PPL of a generator under teacher forcing.
pub fn evaluate<S: Scalar>(gen: &Generator<S>, records: &[SerpRecord]) -> Result<(f64, f64)> {
    let preds = predict_all(gen, records);
    Ok((log_likelihood(&preds, records)?, perplexity(&preds, records)?.1))
}

enum PlateauStep {
    Improved,
    Wait,
    Decay,
    Stop,
}

struct Plateau {
    best: f64,
    since: usize,
    decayed: bool,
    patience: usize,
}

impl Plateau {
    fn new(initial: f64, patience: usize) -> Self {
        Self {
            best: initial,
            since: 0,
            decayed: false,
            patience,
        }
    }

    fn observe(&mut self, v: f64) -> PlateauStep {
        if v < self.best {
            self.best = v;
            self.since = 0;
            self.decayed = false;
            return PlateauStep::Improved;
        }
        self.since += 1;
        if self.patience == 0 || self.since < self.patience {
            return PlateauStep::Wait;
        }
        self.since = 0;
        if self.decayed {
            PlateauStep::Stop
        } else {
            self.decayed = true;
            PlateauStep::Decay
        }
    }
}

fn minibatches<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(|c| c.to_vec()).collect()
}

fn sample_fake<S: Scalar, R: Rng + ?Sized>(
    gen: &Generator<S>,
    batch: &[&SerpRecord],
    rng: &mut R,
) -> Result<Vec<Vec<u8>>> {
    batch
        .iter()
        .map(|r| Ok(gen.sample_sequence(r, rng)?.actions))
        .collect()
}

/// One critic step on logged vs. freshly generated clicks; returns the loss.
fn critic_step<S: Scalar, R: Rng + ?Sized>(
    disc: &mut Discriminator<S>,
    opt: &mut AdamState<S>,
    adam: &AdamConfig,
    batch: &[&SerpRecord],
    fake: &[Vec<u8>],
    dropout: f64,
    rng: &mut R,
) -> Result<f64> {
    let real: Vec<Pair> = batch.iter().map(|r| (*r, r.clicks.as_slice())).collect();
    let fake: Vec<Pair> = batch.iter().zip(fake).map(|(r, c)| (*r, c.as_slice())).collect();
    disc.store_mut().zero_grad();
    let loss = disc.disc_grads(&real, &fake, dropout, rng)?;
    opt.step(disc.store_mut(), adam);
    Ok(loss.as_f64())
}

struct Snapshot<S> {
    gen: Generator<S>,
    disc: Option<Discriminator<S>>,
}

/// Behaviour cloning: teacher-forced cross-entropy on the logged clicks.
/// When a critic is given it is pretrained alongside on logged vs. sampled
/// sequences. The parameters with the lowest validation PPL (the starting
/// point included) are kept.
pub fn pretrain_mle<S: Scalar, R: Rng + ?Sized>(
    gen: &mut Generator<S>,
    mut disc: Option<&mut Discriminator<S>>,
    train: &Split,
    valid: &Split,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    if cfg.pretrain_epochs == 0 {
        return Ok(report);
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data("pretraining needs non-empty train and validation splits".into()));
    }
    let mut lr = cfg.lr_pretrain;
    let mut gen_opt = AdamState::new(gen.store());
    let mut disc_opt = disc.as_ref().map(|d| AdamState::new(d.store()));
    let disc_adam = AdamConfig::new(cfg.lr_disc, cfg.l2);

    let start = Instant::now();
    let (ll0, ppl0) = evaluate(gen, &valid.records)?;
    report.rows.push(EpochRow {
        phase: "pretrain",
        epoch: 0,
        train_loss: f64::NAN,
        disc_loss: f64::NAN,
        valid_ll: ll0,
        valid_ppl: ppl0,
        lr_gen: lr,
        lr_disc: cfg.lr_disc,
        seconds: start.elapsed().as_secs_f64(),
    });
    report.best_row = Some(0);
    let mut best = Snapshot {
        gen: gen.clone(),
        disc: disc.as_deref().cloned(),
    };
    let mut plateau = Plateau::new(ppl0, cfg.patience);

    for epoch in 1..=cfg.pretrain_epochs {
        let t0 = Instant::now();
        let (mut loss_sum, mut disc_sum, mut n_batches, mut n_disc) = (0.0, 0.0, 0usize, 0usize);
        for idx in minibatches(train.len(), cfg.batch_size, rng) {
            let batch: Vec<&SerpRecord> = idx.iter().map(|&i| &train.records[i]).collect();
            gen.store_mut().zero_grad();
            loss_sum += gen.mle_loss_grad(&batch, cfg.dropout, rng)?.as_f64();
            gen_opt.step(gen.store_mut(), &AdamConfig::new(lr, cfg.l2));
            n_batches += 1;
            if let (Some(d), Some(opt)) = (disc.as_deref_mut(), disc_opt.as_mut()) {
                let fake = sample_fake(gen, &batch, rng)?;
                disc_sum += critic_step(d, opt, &disc_adam, &batch, &fake, cfg.dropout, rng)?;
                n_disc += 1;
            }
        }
        let (ll, ppl) = evaluate(gen, &valid.records)?;
        report.rows.push(EpochRow {
            phase: "pretrain",
            epoch,
            train_loss: loss_sum / n_batches as f64,
            disc_loss: if n_disc > 0 { disc_sum / n_disc as f64 } else { f64::NAN },
            valid_ll: ll,
            valid_ppl: ppl,
            lr_gen: lr,
            lr_disc: cfg.lr_disc,
            seconds: t0.elapsed().as_secs_f64(),
        });
        match plateau.observe(ppl) {
            PlateauStep::Improved => {
                report.best_row = Some(report.rows.len() - 1);
                best = Snapshot {
                    gen: gen.clone(),
                    disc: disc.as_deref().cloned(),
                };
            }
            PlateauStep::Wait => {}
            PlateauStep::Decay => lr *= cfg.lr_decay,
            PlateauStep::Stop => {
                report.stopped_early = true;
                break;
            }
        }
    }
    *gen = best.gen;
    if let (Some(d), Some(b)) = (disc, best.disc) {
        *d = b;
    }
    Ok(report)
}

/// Teacher-forced training for a fixed number of epochs, no model
/// selection (coverage surrogates).
pub fn train_mle_fixed<S: Scalar, R: Rng + ?Sized>(
    gen: &mut Generator<S>,
    train: &Split,
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut opt = AdamState::new(gen.store());
    let adam = AdamConfig::new(cfg.lr_pretrain, cfg.l2);
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut sum = 0.0;
        let batches = minibatches(train.len(), cfg.batch_size, rng);
        let n = batches.len().max(1);
        for idx in batches {
            let batch: Vec<&SerpRecord> = idx.iter().map(|&i| &train.records[i]).collect();
            gen.store_mut().zero_grad();
            sum += gen.mle_loss_grad(&batch, cfg.dropout, rng)?.as_f64();
            opt.step(gen.store_mut(), &adam);
        }
        losses.push(sum / n as f64);
    }
    Ok(losses)
}

/// Fills in rewards from the critic and Monte-Carlo discounted returns
/// `Q_t = Σ_{k≥t} γ^{k-t} r_k`.
pub fn compute_returns<S: Scalar>(
    traj: &mut Trajectory<S>,
    disc: &Discriminator<S>,
    gamma: f64,
    sign: RewardSign,
) -> Result<()> {
    let log_d = disc.log_scores(&traj.record, &traj.actions)?;
    traj.rewards = log_d
        .into_iter()
        .map(|l| match sign {
            RewardSign::NegLogD => -l,
            RewardSign::LogD => l,
        })
        .collect();
    traj.returns = discounted_returns(&traj.rewards, S::lit(gamma));
    Ok(())
}

pub fn discounted_returns<S: Scalar>(rewards: &[S], gamma: S) -> Vec<S> {
    let mut out = vec![S::zero(); rewards.len()];
    let mut acc = S::zero();
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Returns standardised across the batch separately at every rank:
/// `A_t = (Q_t - mean_t) / (std_t + 1e-8)`.
pub fn advantages<S: Scalar>(trajs: &[Trajectory<S>]) -> Vec<Vec<S>> {
    let t_max = trajs.iter().map(|t| t.returns.len()).max().unwrap_or(0);
    let mut mean = vec![0.0; t_max];
    let mut sq = vec![0.0; t_max];
    let mut n = vec![0usize; t_max];
    for tr in trajs {
        for (t, q) in tr.returns.iter().enumerate() {
            mean[t] += q.as_f64();
            n[t] += 1;
        }
    }
    for t in 0..t_max {
        mean[t] /= n[t].max(1) as f64;
    }
    for tr in trajs {
        for (t, q) in tr.returns.iter().enumerate() {
            sq[t] += (q.as_f64() - mean[t]).powi(2);
        }
    }
    let std: Vec<f64> = (0..t_max).map(|t| (sq[t] / n[t].max(1) as f64).sqrt()).collect();
    trajs
        .iter()
        .map(|tr| {
            tr.returns
                .iter()
                .enumerate()
                .map(|(t, q)| S::lit((q.as_f64() - mean[t]) / (std[t] + 1e-8)))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    /// Mean clipped surrogate objective per position (before the entropy term).
    pub surrogate: f64,
    /// Mean policy entropy per position, nats.
    pub entropy: f64,
    /// Fraction of positions whose gradient was cut by clipping.
    pub clipped: f64,
}

/// Accumulates the gradient of the loss
/// `-(1/N) Σ [min(ρ A, clip(ρ, 1-ε, 1+ε) A) + λ H]` with `ρ` the ratio of
/// current to recorded action probabilities.
pub fn ppo_gradients<S: Scalar>(
    gen: &mut Generator<S>,
    trajs: &[Trajectory<S>],
    adv: &[Vec<S>],
    clip: f64,
    lambda: f64,
) -> Result<PpoStats> {
    let n: usize = trajs.iter().map(|t| t.actions.len()).sum();
    if n == 0 {
        return Err(Error::Data("empty trajectory batch".into()));
    }
    let inv = S::lit(1.0 / n as f64);
    let (lo, hi) = (S::lit(1.0 - clip), S::lit(1.0 + clip));
    let lam = S::lit(lambda);
    let mut stats = PpoStats::default();
    let mut n_clipped = 0usize;
    for (tr, a_t) in trajs.iter().zip(adv) {
        let u = gen.unroll(&tr.record, &tr.actions, None::<(f64, &mut dyn rand::RngCore)>)?;
        let mut dlogits = Vec::with_capacity(tr.actions.len());
        for t in 0..tr.actions.len() {
            let lp = log_softmax(&u.logits[t]);
            let p: Vec<S> = lp.iter().map(|l| l.exp()).collect();
            let a = tr.actions[t] as usize;
            let ratio = (lp[a] - tr.logp[t]).exp();
            let adv = a_t[t];
            let unclipped = ratio * adv;
            let clipped = ratio.max(lo).min(hi) * adv;
            // d objective / d log π(a): ρA on the unclipped branch, 0 otherwise
            let g = if unclipped <= clipped {
                unclipped
            } else {
                n_clipped += 1;
                S::zero()
            };
            let h = -(p[0] * lp[0] + p[1] * lp[1]);
            stats.surrogate += unclipped.min(clipped).as_f64();
            stats.entropy += h.as_f64();
            let dz: Vec<S> = (0..2)
                .map(|j| {
                    let onehot = if j == a { S::one() } else { S::zero() };
                    let d_logp = g * (onehot - p[j]);
                    let d_ent = -p[j] * (lp[j] + h);
                    -(d_logp + lam * d_ent) * inv
                })
                .collect();
            dlogits.push(dz);
        }
        gen.net_mut().backward(&u, &dlogits)?;
    }
    stats.surrogate /= n as f64;
    stats.entropy /= n as f64;
    stats.clipped = n_clipped as f64 / n as f64;
    Ok(stats)
}

/// `ppo_epochs` passes of clipped-surrogate ascent, one Adam step each.
/// Returns the statistics of the first pass.
pub fn ppo_update<S: Scalar>(
    gen: &mut Generator<S>,
    trajs: &[Trajectory<S>],
    cfg: &TrainConfig,
    opt: &mut AdamState<S>,
    lr: f64,
) -> Result<PpoStats> {
    if trajs.is_empty() {
        return Err(Error::Data("empty trajectory batch".into()));
    }
    let adv = advantages(trajs);
    let adam = AdamConfig::new(lr, cfg.l2);
    let mut first = None;
    for _ in 0..cfg.ppo_epochs {
        gen.store_mut().zero_grad();
        let s = ppo_gradients(gen, trajs, &adv, cfg.ppo_clip, cfg.lambda_entropy)?;
        first.get_or_insert(s);
        opt.step(gen.store_mut(), &adam);
    }
    Ok(first.unwrap_or_default())
}

/// Adversarial alternation. Per minibatch: `g_step` policy updates on fresh
/// rollouts, then `m` sampled batches each training the critic `n` times.
/// The parameters with the lowest validation PPL, the starting point
/// included, are kept.
pub fn gail_loop<S: Scalar, R: Rng + ?Sized>(
    gen: &mut Generator<S>,
    disc: &mut Discriminator<S>,
    train: &Split,
    valid: &Split,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data("adversarial training needs non-empty train and validation splits".into()));
    }
    let mut report = TrainReport::default();
    let (mut lr_gen, mut lr_disc) = (cfg.lr_gen, cfg.lr_disc);
    let mut gen_opt = AdamState::new(gen.store());
    let mut disc_opt = AdamState::new(disc.store());

    let t0 = Instant::now();
    let (ll0, ppl0) = evaluate(gen, &valid.records)?;
    report.rows.push(EpochRow {
        phase: "gail",
        epoch: 0,
        train_loss: f64::NAN,
        disc_loss: f64::NAN,
        valid_ll: ll0,
        valid_ppl: ppl0,
        lr_gen,
        lr_disc,
        seconds: t0.elapsed().as_secs_f64(),
    });
    report.best_row = Some(0);
    let mut best = Snapshot {
        gen: gen.clone(),
        disc: Some(disc.clone()),
    };
    let mut plateau = Plateau::new(ppl0, cfg.patience);
    let mut last_disc_loss = f64::NAN;

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let (mut g_sum, mut g_n, mut d_sum, mut d_n) = (0.0, 0usize, 0.0, 0usize);
        for idx in minibatches(train.len(), cfg.batch_size, rng) {
            let batch: Vec<&SerpRecord> = idx.iter().map(|&i| &train.records[i]).collect();
            for _ in 0..cfg.g_step {
                let mut trajs = batch
                    .iter()
                    .map(|r| gen.sample_sequence(r, rng))
                    .collect::<Result<Vec<_>>>()?;
                for tr in &mut trajs {
                    compute_returns(tr, disc, cfg.gamma, cfg.reward_sign)?;
                    g_sum -= tr.rewards.iter().map(|r| r.as_f64()).sum::<f64>();
                    g_n += tr.rewards.len();
                }
                ppo_update(gen, &trajs, cfg, &mut gen_opt, lr_gen)?;
            }
            let adam = AdamConfig::new(lr_disc, cfg.l2);
            for _ in 0..cfg.d_step.0 {
                let fake = sample_fake(gen, &batch, rng)?;
                for _ in 0..cfg.d_step.1 {
                    d_sum += critic_step(disc, &mut disc_opt, &adam, &batch, &fake, cfg.dropout, rng)?;
                    d_n += 1;
                }
            }
        }
        if d_n > 0 {
            last_disc_loss = d_sum / d_n as f64;
        }
        let (ll, ppl) = evaluate(gen, &valid.records)?;
        report.rows.push(EpochRow {
            phase: "gail",
            epoch,
            train_loss: if g_n > 0 { g_sum / g_n as f64 } else { f64::NAN },
            disc_loss: last_disc_loss,
            valid_ll: ll,
            valid_ppl: ppl,
            lr_gen,
            lr_disc,
            seconds: t0.elapsed().as_secs_f64(),
        });
        match plateau.observe(ppl) {
            PlateauStep::Improved => {
                report.best_row = Some(report.rows.len() - 1);
                best = Snapshot {
                    gen: gen.clone(),
                    disc: Some(disc.clone()),
                };
            }
            PlateauStep::Wait => {}
            PlateauStep::Decay => {
                lr_gen *= cfg.lr_decay;
                lr_disc *= cfg.lr_decay;
            }
            PlateauStep::Stop => {
                report.stopped_early = true;
                break;
            }
        }
    }
    *gen = best.gen;
    if let Some(d) = best.disc {
        *disc = d;
    }
    Ok(report)
}
