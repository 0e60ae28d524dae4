//! Referenced and no-reference image quality metrics: PSNR, SSIM, Entropy.
//!
//! These are plain (non-differentiable) evaluation paths, independent of the
//! tape-based MS-SSIM used in the training loss. PSNR runs on RGB jointly;
//! SSIM and Entropy convert to grayscale by unweighted channel mean.

use crate::error::{Result, WfnError};
use crate::loss::{gaussian_window, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use crate::tensor::Tensor;

/// `10 log10(max^2 / MSE)` over all elements; identical inputs report the
/// `+inf` sentinel.
pub fn psnr(pred: &Tensor, target: &Tensor, max_val: f64) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(WfnError::shape(format!(
            "psnr shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mse = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Unweighted channel mean of a `[C,H,W]` image.
fn grayscale(img: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(WfnError::shape(format!("expected [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut gray = vec![0.0; h * w];
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..][..h * w];
        for (g, v) in gray.iter_mut().zip(plane.iter()) {
            *g += v;
        }
    }
    let inv = 1.0 / c as f64;
    for g in &mut gray {
        *g *= inv;
    }
    Ok((gray, h, w))
}

fn blur2d(src: &[f64], h: usize, w: usize, window: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = window.len();
    // rows
    let wo = w - k + 1;
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &kv) in window.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            tmp[y * wo + x] = acc;
        }
    }
    // columns
    let ho = h - k + 1;
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &kv) in window.iter().enumerate() {
                acc += kv * tmp[(y + i) * wo + x];
            }
            out[y * wo + x] = acc;
        }
    }
    (out, ho, wo)
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), grayscale.
pub fn ssim(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(WfnError::shape(format!(
            "ssim shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (gx, h, w) = grayscale(pred)?;
    let (gy, _, _) = grayscale(target)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(WfnError::arg(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let window = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let xx: Vec<f64> = gx.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = gy.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = gx.iter().zip(gy.iter()).map(|(a, b)| a * b).collect();
    let (mu_x, ho, wo) = blur2d(&gx, h, w, &window);
    let (mu_y, _, _) = blur2d(&gy, h, w, &window);
    let (e_xx, _, _) = blur2d(&xx, h, w, &window);
    let (e_yy, _, _) = blur2d(&yy, h, w, &window);
    let (e_xy, _, _) = blur2d(&xy, h, w, &window);
    let mut acc = 0.0;
    for i in 0..ho * wo {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2);
        acc += num / den;
    }
    Ok(acc / (ho * wo) as f64)
}

/// Shannon entropy (bits) of the 256-level grayscale histogram; `0 log 0 = 0`.
pub fn entropy(img: &Tensor) -> Result<f64> {
    let (gray, _, _) = grayscale(img)?;
    let mut hist = [0u64; 256];
    for &v in &gray {
        let level = (v * 255.0).round().clamp(0.0, 255.0) as usize;
        hist[level] += 1;
    }
    let total = gray.len() as f64;
    let mut bits = 0.0;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / total;
            bits -= p * p.log2();
        }
    }
    Ok(bits)
}

/// Per-image rows plus the aggregate mean, serialized one record per line.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub entropy: f64,
}

impl MetricsReport {
    pub fn push(&mut self, id: impl Into<String>, psnr: f64, ssim: f64, entropy: f64) {
        self.rows.push(MetricsRow { id: id.into(), psnr, ssim, entropy });
    }

    pub fn mean(&self) -> (f64, f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let sum = self.rows.iter().fold((0.0, 0.0, 0.0), |acc, r| {
            (acc.0 + r.psnr, acc.1 + r.ssim, acc.2 + r.entropy)
        });
        (sum.0 / n, sum.1 / n, sum.2 / n)
    }

    /// `id psnr ssim entropy` per row, then a final `MEAN` record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!("{} {} {} {}\n", r.id, fmt(r.psnr), fmt(r.ssim), fmt(r.entropy)));
        }
        let (p, s, e) = self.mean();
        out.push_str(&format!("MEAN {} {} {}\n", fmt(p), fmt(s), fmt(e)));
        out
    }
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = Tensor::zeros(&[3, 4, 4]);
        let b = Tensor::full(&[3, 4, 4], 0.1);
        let db = psnr(&a, &b, 1.0).unwrap();
        assert!((db - 20.0).abs() < 1e-9, "got {db}");
        assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn psnr_monotone_in_noise() {
        let clean = Tensor::rand_uniform(&[3, 8, 8], 0.2, 0.8, 3);
        let mut last = f64::INFINITY;
        for (i, std) in [0.01, 0.03, 0.1].iter().enumerate() {
            let noise = Tensor::rand_normal(clean.shape(), 0.0, *std, 50 + i as u64);
            let noisy = clean.zip(&noise, |a, b| a + b).unwrap();
            let db = psnr(&noisy, &clean, 1.0).unwrap();
            assert!(db < last);
            last = db;
        }
    }

    #[test]
    fn ssim_self_and_constant_closed_form() {
        let img = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, 7);
        let s = ssim(&img, &img).unwrap();
        assert!((s - 1.0).abs() < 1e-9);

        let zero = Tensor::zeros(&[1, 16, 16]);
        let one = Tensor::full(&[1, 16, 16], 1.0);
        let s = ssim(&zero, &one).unwrap();
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((s - expect).abs() < 1e-9, "got {s}, expected {expect}");

        // symmetry
        let a = Tensor::rand_uniform(&[1, 16, 16], 0.0, 1.0, 8);
        let b = Tensor::rand_uniform(&[1, 16, 16], 0.0, 1.0, 9);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::zeros(&[1, 8, 8]);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn entropy_closed_forms() {
        // constant image -> 0 bits
        let c = Tensor::full(&[1, 8, 8], 0.5);
        assert_eq!(entropy(&c).unwrap(), 0.0);

        // exactly uniform 256-level histogram -> 8 bits
        let data: Vec<f64> = (0..256).map(|k| k as f64 / 255.0).collect();
        let img = Tensor::new(vec![1, 16, 16], data).unwrap();
        assert!((entropy(&img).unwrap() - 8.0).abs() < 1e-12);

        // two levels at equal frequency -> 1 bit
        let data: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let img = Tensor::new(vec![1, 8, 8], data).unwrap();
        assert!((entropy(&img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_text_has_mean_row() {
        let mut report = MetricsReport::default();
        report.push("a", 20.0, 0.9, 6.5);
        report.push("b", f64::INFINITY, 1.0, 7.0);
        let text = report.to_text();
        assert!(text.lines().count() == 3);
        assert!(text.contains("inf"));
        assert!(text.lines().last().unwrap().starts_with("MEAN"));
    }
}
