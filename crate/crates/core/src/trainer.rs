//! Adam training loop for one direction model.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::draw::{DrawModel, DrawPass};
use crate::error::{Error, Result};
use crate::losses::{kl_latent, total_loss, LossKind, LossSpec, ReconstructionLoss};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::tensor::kernels::dot;
use crate::tensor::Tensor;
use crate::tiles::{build_epoch, Direction, TextureImage, TileQuintet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub epochs: usize,
    /// Quintets whose gradients are averaged into one optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub seed: u64,
    pub direction: Direction,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(direction: Direction, loss: LossKind) -> Self {
        Self {
            loss: LossSpec::new(loss),
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            direction,
            checkpoint_path: None,
            log_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid(
                "learning rate and clip norm must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("moment decays must lie in [0, 1)"));
        }
        self.loss.validate()
    }
}

/// Where training quintets come from.
#[derive(Clone, Debug)]
pub enum TrainingSet<S> {
    /// Fresh random quintets every epoch: `(texture, samples per epoch)`.
    Textures {
        textures: Vec<(TextureImage<S>, usize)>,
        tile_size: usize,
    },
    /// The same quintets, in the same order, every epoch.
    Fixed(Vec<TileQuintet<S>>),
}

impl<S: Scalar> TrainingSet<S> {
    fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<TileQuintet<S>>> {
        match self {
            TrainingSet::Textures {
                textures,
                tile_size,
            } => build_epoch(textures, *tile_size, rng),
            TrainingSet::Fixed(q) => Ok(q.clone()),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            TrainingSet::Textures { textures, .. } => textures.iter().all(|(_, n)| *n == 0),
            TrainingSet::Fixed(q) => q.is_empty(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub l_rec: f64,
    pub l_kl: f64,
    pub l_total: f64,
    pub ms: u128,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub const HEADER: &'static str = "epoch,step,l_rec,l_kl,l_total,ms";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{}",
                r.epoch, r.step, r.l_rec, r.l_kl, r.l_total, r.ms
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    t: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &[Tensor<S>], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr: S::of(lr),
            beta1: S::of(beta1),
            beta2: S::of(beta2),
            eps: S::of(eps),
            t: 0,
            m: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Vec<S>]) {
        self.t += 1;
        let one = S::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((x, &gk), mk), vk) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mk = self.beta1 * *mk + (one - self.beta1) * gk;
                *vk = self.beta2 * *vk + (one - self.beta2) * gk * gk;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Vec<S>], max_norm: S) -> S {
    let norm = grads.iter().map(|g| dot(g, g)).sum::<S>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        grads
            .iter_mut()
            .flat_map(|g| g.iter_mut())
            .for_each(|v| *v *= f);
    }
    norm
}

/// Reconstruction and latent loss of one forward pass, plus gradients
/// w.r.t. every parameter (in model slot order) when `with_grads`.
pub struct SampleLoss<S> {
    pub l_rec: S,
    pub l_kl: S,
    pub grads: Option<Vec<Vec<S>>>,
}

pub fn sample_loss<S: Scalar, R: Rng + ?Sized>(
    model: &DrawModel<S>,
    loss: &ReconstructionLoss<S>,
    input: &Tensor<S>,
    target: &Tensor<S>,
    rng: &mut R,
    with_grads: bool,
) -> Result<SampleLoss<S>> {
    let mut pass = model.forward(input, target, rng)?;
    pass_loss(&mut pass, loss, with_grads)
}

/// [`sample_loss`] with the parameters lent to the graph rather than copied.
fn lent_sample_loss<S: Scalar, R: Rng + ?Sized>(
    model: &mut DrawModel<S>,
    loss: &ReconstructionLoss<S>,
    input: &Tensor<S>,
    target: &Tensor<S>,
    rng: &mut R,
) -> Result<SampleLoss<S>> {
    let mut pass = model.forward_lent(input, target, rng)?;
    let out = pass_loss(&mut pass, loss, true);
    model.reclaim(&mut pass);
    out
}

fn pass_loss<S: Scalar>(
    pass: &mut DrawPass<S>,
    loss: &ReconstructionLoss<S>,
    with_grads: bool,
) -> Result<SampleLoss<S>> {
    let g = &mut pass.graph;
    let diverged = !g.value(pass.output).all_finite()
        || pass.latents.sigma.iter().any(|&s| {
            g.value(s)
                .data()
                .iter()
                .any(|&v| !(v > S::zero() && v.is_finite()))
        });
    if diverged {
        let nan = S::of(f64::NAN);
        return Ok(SampleLoss {
            l_rec: nan,
            l_kl: nan,
            grads: None,
        });
    }
    let lc = loss.evaluate(g, pass.target, pass.output)?;
    let lz = kl_latent(g, &pass.latents)?;
    let total = total_loss(g, lc, lz)?;
    let (l_rec, l_kl) = (g.value(lc).item(), g.value(lz).item());
    let grads = if with_grads && g.value(total).item().is_finite() {
        let mut grads = g.backward(total)?;
        Some(
            pass.params
                .iter()
                .map(|&v| {
                    grads
                        .take(v)
                        .map_or_else(|| vec![S::zero(); g.value(v).numel()], Tensor::into_data)
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(SampleLoss { l_rec, l_kl, grads })
}

pub struct TrainOutcome<S> {
    pub model: DrawModel<S>,
    pub log: LossLog,
    pub steps: usize,
}

pub fn train<S: Scalar>(
    model: DrawModel<S>,
    data: &TrainingSet<S>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    train_observed(model, data, cfg, |_| {})
}

/// Like [`train`], calling `observe` after every optimizer step.
pub fn train_observed<S: Scalar>(
    mut model: DrawModel<S>,
    data: &TrainingSet<S>,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&LossRow),
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let loss = ReconstructionLoss::new(cfg.loss.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        model.params(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.adam_eps,
    );
    let mut log = LossLog::default();
    let mut step = 0usize;
    let clip = S::of(cfg.clip_norm);

    for epoch in 0..cfg.epochs {
        let quintets = data.epoch(&mut rng)?;
        for batch in quintets.chunks(cfg.batch_size) {
            let started = Instant::now();
            let inv = S::one() / S::of_usize(batch.len());
            let mut acc: Option<Vec<Vec<S>>> = None;
            let (mut rec, mut kl) = (S::zero(), S::zero());
            for q in batch {
                let s = lent_sample_loss(
                    &mut model,
                    &loss,
                    &q.center,
                    q.neighbor(cfg.direction),
                    &mut rng,
                )?;
                let mut grads = s.grads.ok_or(Error::NonFinite { step })?;
                match &mut acc {
                    None => {
                        if batch.len() > 1 {
                            grads.iter_mut().flatten().for_each(|y| *y *= inv);
                        }
                        acc = Some(grads);
                    }
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, &y) in a.iter_mut().zip(g) {
                                *x += y * inv;
                            }
                        }
                    }
                }
                rec += s.l_rec * inv;
                kl += s.l_kl * inv;
            }
            let mut acc = acc.expect("batches are non-empty");
            clip_global_norm(&mut acc, clip);
            adam.step(model.params_mut(), &acc);
            debug_assert!(
                model.all_finite(),
                "non-finite parameters after step {step}"
            );

            let row = LossRow {
                epoch,
                step,
                l_rec: rec.as_f64(),
                l_kl: kl.as_f64(),
                l_total: (rec + kl).as_f64(),
                ms: started.elapsed().as_millis(),
            };
            observe(&row);
            log.rows.push(row);
            step += 1;
        }
        if let Some(path) = &cfg.checkpoint_path {
            model.save(path, cfg.seed, Some(cfg.direction), Some(&cfg.loss), step)?;
        }
        if let Some(path) = &cfg.log_path {
            log.write_csv(path)?;
        }
    }
    if cfg.epochs == 0 {
        if let Some(path) = &cfg.checkpoint_path {
            model.save(path, cfg.seed, Some(cfg.direction), Some(&cfg.loss), 0)?;
        }
        if let Some(path) = &cfg.log_path {
            log.write_csv(path)?;
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        steps: step,
    })
}

/// Mean reconstruction and latent losses over `quintets`, without updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalLosses {
    pub l_rec: f64,
    pub l_kl: f64,
}

/// Sample `i` uses noise seeded by `derive_seed(seed, [i])`, so results
/// depend only on the model, the data and `seed`.
pub fn evaluate<S: Scalar>(
    model: &DrawModel<S>,
    quintets: &[TileQuintet<S>],
    loss: &LossSpec,
    direction: Direction,
    seed: u64,
) -> Result<EvalLosses> {
    if quintets.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let loss = ReconstructionLoss::new(loss.clone())?;
    let (mut rec, mut kl) = (0.0, 0.0);
    for (i, q) in quintets.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        let s = sample_loss(
            model,
            &loss,
            &q.center,
            q.neighbor(direction),
            &mut rng,
            false,
        )?;
        rec += s.l_rec.as_f64();
        kl += s.l_kl.as_f64();
    }
    let n = quintets.len() as f64;
    Ok(EvalLosses {
        l_rec: rec / n,
        l_kl: kl / n,
    })
}
