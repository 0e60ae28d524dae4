//! Adam with bias correction, the cosine-annealing schedule, and the
//! training loop.
//!
//! Everything is deterministic in the run seed: batch sampling, augmentation,
//! and the update itself, so two runs with the same seed produce bit-identical
//! loss histories in double precision.

use crate::data::{augment, AugmentSpec, ImagePair};
use crate::error::{Result, WfnError};
use crate::loss::{total_loss, LossWeights, PerceptualExtractor};
use crate::metrics::psnr;
use crate::network::{save_checkpoint, Model};
use crate::params::Ctx;
use crate::tape::Tape;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::PathBuf;

/// Cosine annealing from `lr0` at step 0 down to exactly 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub lr0: f64,
    pub total_steps: usize,
}

/// `lr(t) = lr0/2 (1 + cos(pi t / T))`.
pub fn cosine_lr(t: usize, spec: &ScheduleSpec) -> Result<f64> {
    if t > spec.total_steps {
        return Err(WfnError::arg(format!(
            "schedule step {t} out of range 0..={}",
            spec.total_steps
        )));
    }
    if spec.total_steps == 0 {
        return Ok(spec.lr0);
    }
    let frac = t as f64 / spec.total_steps as f64;
    Ok(spec.lr0 / 2.0 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[Vec<usize>]) -> Self {
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn for_model(model: &Model) -> Self {
        let shapes: Vec<Vec<usize>> = model.store.iter().map(|(_, t)| t.shape().to_vec()).collect();
        Self::new(&shapes)
    }

    /// One bias-corrected Adam update. `grads[i] = None` means that parameter
    /// saw no gradient this step and is treated as zero.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(WfnError::arg("optimizer state does not match parameter list".to_string()));
        }
        for g in grads.iter().flatten() {
            g.check_finite("adam_step gradient")?;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            match &grads[i] {
                Some(g) => {
                    for ((pv, mv), (vv, gv)) in
                        p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut().zip(g.data().iter()))
                    {
                        *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                        *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
                None => {
                    // moments decay toward zero; with zero first moment the
                    // parameter is unchanged
                    for (mv, vv) in m.iter_mut().zip(v.iter_mut()) {
                        *mv *= self.beta1;
                        *vv *= self.beta2;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales all gradients so the global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flatten().map(Tensor::sq_norm).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Training-run parameters (the desk-scale defaults; the published protocol
/// values of batch 16 / crop 256 remain expressible).
#[derive(Debug, Clone)]
pub struct FitCfg {
    pub steps: usize,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    pub lr0: f64,
    pub weights: LossWeights,
    pub msssim_scales: usize,
    pub augment: bool,
    /// Global-norm gradient clipping at 1.0 (default on).
    pub clip_grad: bool,
    pub log_every: usize,
    pub ckpt_every: Option<usize>,
    pub out_dir: Option<PathBuf>,
    /// Stop early once training PSNR reaches this, if set.
    pub target_psnr: Option<f64>,
}

impl Default for FitCfg {
    fn default() -> Self {
        FitCfg {
            steps: 500,
            batch: 1,
            crop: 64,
            seed: 0,
            lr0: 1e-4,
            weights: LossWeights::default(),
            msssim_scales: 3,
            augment: true,
            clip_grad: true,
            log_every: 10,
            ckpt_every: None,
            out_dir: None,
            target_psnr: None,
        }
    }
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub l1: f64,
    pub msssim_loss: f64,
    pub perceptual: f64,
    pub psnr: f64,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.4}",
            self.step, self.lr, self.total, self.l1, self.msssim_loss, self.perceptual, self.psnr
        )
    }
}

fn stack_batch(samples: &[ImagePair]) -> Result<(Tensor, Tensor)> {
    let s = samples[0].hazy.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut hazy = Tensor::zeros(&[samples.len(), c, h, w]);
    let mut clean = Tensor::zeros(&[samples.len(), c, h, w]);
    let plane = c * h * w;
    for (i, p) in samples.iter().enumerate() {
        if p.hazy.shape() != s || p.clean.shape() != s {
            return Err(WfnError::shape("batch samples disagree in shape".to_string()));
        }
        hazy.data_mut()[i * plane..][..plane].copy_from_slice(p.hazy.data());
        clean.data_mut()[i * plane..][..plane].copy_from_slice(p.clean.data());
    }
    Ok((hazy, clean))
}

/// Runs the training loop: per step, sample + augment a batch, forward,
/// composite loss, backward, clip, Adam with the cosine schedule. Emits one
/// record per step and periodic checkpoints when an output directory is set.
pub fn fit(model: &mut Model, dataset: &[ImagePair], cfg: &FitCfg) -> Result<Vec<StepRecord>> {
    if dataset.is_empty() {
        return Err(WfnError::arg("dataset is empty".to_string()));
    }
    cfg.weights.validate()?;
    model.cfg.check_input(cfg.crop, cfg.crop)?;
    let schedule = ScheduleSpec { lr0: cfg.lr0, total_steps: cfg.steps };
    let extractor = PerceptualExtractor::new(cfg.seed ^ 0x7065_7263);
    let mut adam = AdamState::for_model(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);

    let mut log_file = match (&cfg.out_dir, cfg.steps) {
        (Some(dir), _) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::File::create(dir.join("metrics.log"))?;
            writeln!(f, "# step lr total l1 msssim perc psnr")?;
            Some(f)
        }
        _ => None,
    };

    for step in 0..cfg.steps {
        // assemble the batch
        let mut samples = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let idx = rng.gen_range(0..dataset.len());
            let pair = &dataset[idx];
            let sample = if cfg.augment {
                let spec = AugmentSpec { patch: cfg.crop, rotations: true, hflip: true };
                augment(pair, &spec, rng.gen())?
            } else {
                let spec = AugmentSpec { patch: cfg.crop, rotations: false, hflip: false };
                // crop only (deterministic window when the crop spans the image)
                augment(pair, &spec, rng.gen())?
            };
            samples.push(sample);
        }
        let (hazy, clean) = stack_batch(&samples)?;

        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &model.store);
        let x = ctx.tape.leaf(hazy);
        let target = ctx.tape.leaf(clean);
        let pred = model.forward_on(&mut ctx, x)?;
        let (loss, parts) = total_loss(ctx.tape, pred, target, &cfg.weights, &extractor, cfg.msssim_scales)?;
        if !parts.total.is_finite() {
            return Err(WfnError::Training(format!("non-finite loss at step {step}")));
        }
        ctx.tape.backward(loss)?;
        let mut grads = ctx.collect_grads();
        let step_psnr = psnr(tape.value(pred), tape.value(target), 1.0)?;
        drop(tape);

        if cfg.clip_grad {
            clip_global_norm(&mut grads, 1.0);
        }
        let lr = cosine_lr(step, &schedule)?;
        adam.step(model.store.tensors_mut(), &grads, lr)?;

        let record = StepRecord {
            step,
            lr,
            total: parts.total,
            l1: parts.l1,
            msssim_loss: parts.msssim_loss,
            perceptual: parts.perceptual,
            psnr: step_psnr,
        };
        if let Some(f) = &mut log_file {
            writeln!(f, "{}", record.to_line())?;
        }
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) && cfg.out_dir.is_some() {
            println!(
                "step {:5}  lr {:.3e}  loss {:.5}  psnr {:.2}",
                record.step, record.lr, record.total, record.psnr
            );
        }
        history.push(record);

        if let (Some(every), Some(dir)) = (cfg.ckpt_every, &cfg.out_dir) {
            if every > 0 && (step + 1) % every == 0 {
                save_checkpoint(model, dir.join(format!("ckpt_{:06}.wfn", step + 1)))?;
            }
        }
        if let Some(target_db) = cfg.target_psnr {
            // evaluate the post-update model so stopping reflects the
            // parameters actually returned
            if step_psnr >= target_db - 1.0 {
                let (hazy, clean) = stack_batch(&samples)?;
                let mut tape = Tape::new();
                let mut ctx = Ctx::new(&mut tape, &model.store);
                let x = ctx.tape.leaf(hazy);
                let pred = model.forward_on(&mut ctx, x)?;
                if psnr(tape.value(pred), &clean, 1.0)? >= target_db {
                    break;
                }
            }
        }
    }
    if let Some(dir) = &cfg.out_dir {
        save_checkpoint(model, dir.join("ckpt_final.wfn"))?;
    }
    Ok(history)
}
