//! Composite training objective: `w1 * L1 + w2 * (1 - MS-SSIM) + w3 * Lperc`.
//!
//! All three terms run on the tape, so one backward pass differentiates the
//! whole mixture. The perceptual term uses a fixed, seed-initialized strided
//! conv stack instead of a pretrained backbone, keeping the artifact
//! self-contained; its weights are frozen and never receive updates.

use crate::error::{Result, WfnError};
use crate::tape::{ConvSpec, Tape, VarId};
use crate::tensor::Tensor;

/// Mixture weights; all non-negative, at least one positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_l1: f64,
    pub w_msssim: f64,
    pub w_perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_l1: 1.0, w_msssim: 0.4, w_perc: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_l1 < 0.0 || self.w_msssim < 0.0 || self.w_perc < 0.0 {
            return Err(WfnError::arg("loss weights must be non-negative".to_string()));
        }
        if self.w_l1 == 0.0 && self.w_msssim == 0.0 && self.w_perc == 0.0 {
            return Err(WfnError::arg("at least one loss weight must be positive".to_string()));
        }
        Ok(())
    }
}

/// Mean absolute difference.
pub fn l1_loss(tape: &mut Tape, pred: VarId, target: VarId) -> Result<VarId> {
    let diff = tape.sub(pred, target)?;
    let mag = tape.abs(diff)?;
    tape.mean_all(mag)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` with dynamic range `L = 1`.
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
/// Canonical five-scale MS-SSIM weights (renormalized over the scales used).
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable Gaussian blur over the valid region: rows then columns.
fn blur(tape: &mut Tape, x: VarId, window: &[f64]) -> Result<VarId> {
    let k = window.len();
    let hpass = tape.blur_valid_rect(x, window, 1, k)?;
    tape.blur_valid_rect(hpass, window, k, 1)
}

struct ScaleTerms {
    cs_mean: VarId,
    luminance_mean: Option<VarId>,
}

fn ssim_terms(tape: &mut Tape, x: VarId, y: VarId, window: &[f64], with_luminance: bool) -> Result<ScaleTerms> {
    let mu_x = blur(tape, x, window)?;
    let mu_y = blur(tape, y, window)?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let e_xx = blur(tape, xx, window)?;
    let e_yy = blur(tape, yy, window)?;
    let e_xy = blur(tape, xy, window)?;
    let mu_x2 = tape.mul(mu_x, mu_x)?;
    let mu_y2 = tape.mul(mu_y, mu_y)?;
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = tape.sub(e_xx, mu_x2)?;
    let var_y = tape.sub(e_yy, mu_y2)?;
    let cov = tape.sub(e_xy, mu_xy)?;

    let cov2 = tape.scale(cov, 2.0)?;
    let cs_num = tape.add_scalar(cov2, SSIM_C2)?;
    let var_sum = tape.add(var_x, var_y)?;
    let cs_den = tape.add_scalar(var_sum, SSIM_C2)?;
    let cs_map = tape.div(cs_num, cs_den)?;
    let cs_mean = tape.mean_all(cs_map)?;

    let luminance_mean = if with_luminance {
        let mu_xy2 = tape.scale(mu_xy, 2.0)?;
        let l_num = tape.add_scalar(mu_xy2, SSIM_C1)?;
        let mu_sum = tape.add(mu_x2, mu_y2)?;
        let l_den = tape.add_scalar(mu_sum, SSIM_C1)?;
        let l_map = tape.div(l_num, l_den)?;
        Some(tape.mean_all(l_map)?)
    } else {
        None
    };
    Ok(ScaleTerms { cs_mean, luminance_mean })
}

/// Multi-scale SSIM in `[0, 1]`-ish (exactly 1 at `pred == target`).
///
/// Contrast/structure terms at every scale, luminance only at the coarsest,
/// combined geometrically with the canonical weights renormalized over
/// `scales`. Needs extents `>= 2^(scales-1) * 11` and divisible by
/// `2^(scales-1)` for the dyadic pooling.
pub fn ms_ssim(tape: &mut Tape, pred: VarId, target: VarId, scales: usize) -> Result<VarId> {
    if scales == 0 || scales > MSSSIM_WEIGHTS.len() {
        return Err(WfnError::arg(format!("scales must be in 1..=5, got {scales}")));
    }
    let shape = tape.value(pred).shape().to_vec();
    if shape != tape.value(target).shape() {
        return Err(WfnError::shape(format!(
            "ms_ssim shapes differ: {:?} vs {:?}",
            shape,
            tape.value(target).shape()
        )));
    }
    if shape.len() != 4 {
        return Err(WfnError::shape(format!("ms_ssim expects [N,C,H,W], got {shape:?}")));
    }
    let factor = 1 << (scales - 1);
    let (h, w) = (shape[2], shape[3]);
    if h % factor != 0 || w % factor != 0 || h / factor < SSIM_WINDOW || w / factor < SSIM_WINDOW {
        return Err(WfnError::arg(format!(
            "image {h}x{w} too small for {scales} scales: needs extents divisible by {factor} and >= {}",
            factor * SSIM_WINDOW
        )));
    }

    let window = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let weight_sum: f64 = MSSSIM_WEIGHTS[..scales].iter().sum();
    let mut result: Option<VarId> = None;
    let (mut x, mut y) = (pred, target);
    for s in 0..scales {
        let last = s + 1 == scales;
        let terms = ssim_terms(tape, x, y, &window, last)?;
        let weight = MSSSIM_WEIGHTS[s] / weight_sum;
        let cs_safe = tape.clamp_min(terms.cs_mean, 1e-8)?;
        let cs_pow = tape.pow_scalar(cs_safe, weight)?;
        result = Some(match result {
            Some(acc) => tape.mul(acc, cs_pow)?,
            None => cs_pow,
        });
        if let Some(lum) = terms.luminance_mean {
            let l_safe = tape.clamp_min(lum, 1e-8)?;
            let l_pow = tape.pow_scalar(l_safe, weight)?;
            result = Some(tape.mul(result.unwrap(), l_pow)?);
        }
        if !last {
            x = tape.avg_pool2(x)?;
            y = tape.avg_pool2(y)?;
        }
    }
    Ok(result.unwrap())
}

/// `1 - ms_ssim`.
pub fn ms_ssim_loss(tape: &mut Tape, pred: VarId, target: VarId, scales: usize) -> Result<VarId> {
    let sim = ms_ssim(tape, pred, target, scales)?;
    let neg = tape.neg(sim)?;
    tape.add_scalar(neg, 1.0)
}

/// Frozen three-layer strided conv feature stack for the perceptual term.
/// Weights come from the seed alone and are never trained.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    layers: Vec<(Tensor, Tensor, ConvSpec)>,
}

pub const PERC_CHANNELS: [usize; 4] = [3, 8, 16, 32];

impl PerceptualExtractor {
    pub fn new(seed: u64) -> Self {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..3)
            .map(|i| {
                let (cin, cout) = (PERC_CHANNELS[i], PERC_CHANNELS[i + 1]);
                let spec = ConvSpec::new(cin, cout, 3).with_stride(2);
                let bound = 1.0 / ((cin * 9) as f64).sqrt();
                let w = Tensor::uniform_with(&mut rng, &[cout, cin, 3, 3], -bound, bound);
                let b = Tensor::zeros(&[cout]);
                (w, b, spec)
            })
            .collect();
        PerceptualExtractor { layers }
    }

    /// Feature maps after the second and third conv (GELU between layers).
    fn features(&self, tape: &mut Tape, x: VarId) -> Result<(VarId, VarId)> {
        let mut cur = x;
        let mut taps = Vec::with_capacity(2);
        for (i, (w, b, spec)) in self.layers.iter().enumerate() {
            let wid = tape.leaf(w.clone());
            let bid = tape.leaf(b.clone());
            cur = tape.conv2d(cur, wid, Some(bid), spec)?;
            if i < 2 {
                cur = tape.gelu(cur)?;
            }
            if i >= 1 {
                taps.push(cur);
            }
        }
        Ok((taps[0], taps[1]))
    }

    /// Mean absolute feature difference at two depths, summed.
    pub fn loss(&self, tape: &mut Tape, pred: VarId, target: VarId) -> Result<VarId> {
        if tape.value(pred).shape() != tape.value(target).shape() {
            return Err(WfnError::shape(format!(
                "perceptual loss shapes differ: {:?} vs {:?}",
                tape.value(pred).shape(),
                tape.value(target).shape()
            )));
        }
        let (p2, p3) = self.features(tape, pred)?;
        let (t2, t3) = self.features(tape, target)?;
        let l2 = l1_loss(tape, p2, t2)?;
        let l3 = l1_loss(tape, p3, t3)?;
        tape.add(l2, l3)
    }
}

/// Per-component values of one total-loss evaluation, for logging.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub total: f64,
    pub l1: f64,
    pub msssim_loss: f64,
    pub perceptual: f64,
}

/// Linear combination of the three terms. Zero-weighted terms are skipped
/// entirely, so e.g. `(1, 0, 0)` is exactly the plain L1 loss.
pub fn total_loss(
    tape: &mut Tape,
    pred: VarId,
    target: VarId,
    weights: &LossWeights,
    extractor: &PerceptualExtractor,
    msssim_scales: usize,
) -> Result<(VarId, LossParts)> {
    weights.validate()?;
    let mut parts = LossParts::default();
    let mut acc: Option<VarId> = None;
    let push = |tape: &mut Tape, term: VarId, weight: f64, acc: &mut Option<VarId>| -> Result<()> {
        let scaled = tape.scale(term, weight)?;
        *acc = Some(match *acc {
            Some(prev) => tape.add(prev, scaled)?,
            None => scaled,
        });
        Ok(())
    };
    if weights.w_l1 > 0.0 {
        let term = l1_loss(tape, pred, target)?;
        parts.l1 = tape.value(term).item();
        push(tape, term, weights.w_l1, &mut acc)?;
    }
    if weights.w_msssim > 0.0 {
        let term = ms_ssim_loss(tape, pred, target, msssim_scales)?;
        parts.msssim_loss = tape.value(term).item();
        push(tape, term, weights.w_msssim, &mut acc)?;
    }
    if weights.w_perc > 0.0 {
        let term = extractor.loss(tape, pred, target)?;
        parts.perceptual = tape.value(term).item();
        push(tape, term, weights.w_perc, &mut acc)?;
    }
    let total = acc.expect("validated weights have a positive entry");
    parts.total = tape.value(total).item();
    Ok((total, parts))
}
