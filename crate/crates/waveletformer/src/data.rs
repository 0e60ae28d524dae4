//! Synthetic-haze data pipeline: the atmospheric scattering model and its
//! analytic inverse, deterministic depth fields, exact-permutation
//! augmentation, and binary PPM (P6) image I/O.
//!
//! Degradation model: `I = J t + A (1 - t)` with `t = exp(-beta d)`. The
//! inverse `J = (I - A(1 - t)) / t` serves as the round-trip oracle for the
//! synthesizer, valid wherever `t` stays above its clamp floor.

use crate::error::{Result, WfnError};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

/// A hazy/clean training pair, both `[3,H,W]` in `[0,1]`.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub id: String,
    pub hazy: Tensor,
    pub clean: Tensor,
}

pub const DEFAULT_T_MIN: f64 = 0.05;

/// Atmospheric light, scattering coefficient, and scene depth.
#[derive(Debug, Clone)]
pub struct HazeParams {
    /// Per-channel ambient light, each in `[0.6, 1.0]`.
    pub ambient: [f64; 3],
    pub beta: f64,
    /// Dimensionless depth field `[H,W]`, `>= 0` (beta absorbs scale).
    pub depth: Tensor,
    /// Transmission clamp floor.
    pub t_min: f64,
}

impl HazeParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(WfnError::arg(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.ambient.iter().any(|&a| !(0.6..=1.0).contains(&a)) {
            return Err(WfnError::arg(format!(
                "ambient light out of [0.6, 1.0]: {:?}",
                self.ambient
            )));
        }
        if self.depth.shape().len() != 2 {
            return Err(WfnError::shape(format!("depth must be [H,W], got {:?}", self.depth.shape())));
        }
        if self.depth.data().iter().any(|&d| d < 0.0) {
            return Err(WfnError::arg("depth must be non-negative".to_string()));
        }
        if !(0.0..1.0).contains(&self.t_min) {
            return Err(WfnError::arg(format!("t_min must be in [0,1), got {}", self.t_min)));
        }
        Ok(())
    }

    /// Transmission including the clamp floor.
    pub fn transmission(&self) -> Result<Tensor> {
        transmission_map(&self.depth, self.beta, Some(self.t_min))
    }
}

/// `t = exp(-beta d)`, optionally clamped below.
pub fn transmission_map(depth: &Tensor, beta: f64, t_min: Option<f64>) -> Result<Tensor> {
    if beta < 0.0 {
        return Err(WfnError::arg(format!("beta must be >= 0, got {beta}")));
    }
    if depth.data().iter().any(|&d| d < 0.0) {
        return Err(WfnError::arg("depth must be non-negative".to_string()));
    }
    let floor = t_min.unwrap_or(0.0);
    Ok(depth.map(|d| (-beta * d).exp().max(floor)))
}

/// Degrades a clean image: `I = J t + A (1 - t)` per pixel and channel.
pub fn apply_asm(clean: &Tensor, params: &HazeParams) -> Result<Tensor> {
    params.validate()?;
    let s = clean.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(WfnError::shape(format!("expected [3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    if params.depth.shape() != [h, w] {
        return Err(WfnError::shape(format!(
            "depth {:?} does not match image {h}x{w}",
            params.depth.shape()
        )));
    }
    let t = params.transmission()?;
    let mut out = Tensor::zeros(s);
    for c in 0..3 {
        let a = params.ambient[c];
        let src = &clean.data()[c * h * w..][..h * w];
        let dst = &mut out.data_mut()[c * h * w..][..h * w];
        for ((d, &j), &tv) in dst.iter_mut().zip(src.iter()).zip(t.data().iter()) {
            *d = j * tv + a * (1.0 - tv);
        }
    }
    Ok(out)
}

/// Analytic inverse `J = (I - A(1 - t)) / t`; errors if any `t` falls below
/// the floor.
pub fn invert_asm(hazy: &Tensor, params: &HazeParams) -> Result<Tensor> {
    params.validate()?;
    let s = hazy.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(WfnError::shape(format!("expected [3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let t = params.transmission()?;
    if t.data().iter().any(|&tv| tv < params.t_min) {
        return Err(WfnError::arg(format!("transmission below floor {}", params.t_min)));
    }
    let mut out = Tensor::zeros(s);
    for c in 0..3 {
        let a = params.ambient[c];
        let src = &hazy.data()[c * h * w..][..h * w];
        let dst = &mut out.data_mut()[c * h * w..][..h * w];
        for ((d, &i), &tv) in dst.iter_mut().zip(src.iter()).zip(t.data().iter()) {
            *d = (i - a * (1.0 - tv)) / tv;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthKind {
    /// `d(y,x) = y / (H-1)`: zero at the top row, one at the bottom.
    Ramp,
    /// Normalized distance from the image center.
    Radial,
    /// Piecewise-constant random patches (non-homogeneous haze).
    Blocks,
}

impl DepthKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ramp" => Ok(DepthKind::Ramp),
            "radial" => Ok(DepthKind::Radial),
            "blocks" => Ok(DepthKind::Blocks),
            other => Err(WfnError::arg(format!("unknown depth kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DepthKind::Ramp => "ramp",
            DepthKind::Radial => "radial",
            DepthKind::Blocks => "blocks",
        }
    }
}

/// Deterministic non-negative depth field in `[0,1]`.
pub fn synth_depth(h: usize, w: usize, kind: DepthKind, seed: u64) -> Tensor {
    let mut out = Tensor::zeros(&[h, w]);
    match kind {
        DepthKind::Ramp => {
            for y in 0..h {
                let v = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };
                out.data_mut()[y * w..][..w].fill(v);
            }
        }
        DepthKind::Radial => {
            let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
            let max_d = (cy * cy + cx * cx).sqrt().max(f64::MIN_POSITIVE);
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    out.data_mut()[y * w + x] = (dy * dy + dx * dx).sqrt() / max_d;
                }
            }
        }
        DepthKind::Blocks => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cell = (h.min(w) / 4).max(1);
            let (gy, gx) = (h.div_ceil(cell), w.div_ceil(cell));
            let levels: Vec<f64> = (0..gy * gx).map(|_| rng.gen_range(0.0..1.0)).collect();
            for y in 0..h {
                for x in 0..w {
                    out.data_mut()[y * w + x] = levels[(y / cell) * gx + x / cell];
                }
            }
        }
    }
    out
}

/// Patch cropping plus the rotation/flip augmentation protocol. Rotations are
/// quarter turns (identity included) and flips are horizontal, so every
/// augmentation is an exact pixel permutation.
#[derive(Debug, Clone, Copy)]
pub struct AugmentSpec {
    pub patch: usize,
    pub rotations: bool,
    pub hflip: bool,
}

/// Crop `[C,H,W] -> [C,size,size]` at `(y0, x0)`.
pub fn crop(t: &Tensor, y0: usize, x0: usize, size: usize) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 3 || y0 + size > s[1] || x0 + size > s[2] {
        return Err(WfnError::arg(format!(
            "crop {size}x{size} at ({y0},{x0}) does not fit {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let _ = h;
    let mut out = Tensor::zeros(&[c, size, size]);
    for ch in 0..c {
        for y in 0..size {
            let src = &t.data()[(ch * s[1] + y0 + y) * w + x0..][..size];
            out.data_mut()[(ch * size + y) * size..][..size].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Clockwise quarter-turn rotations (`turns` in 0..=3), exact permutation.
pub fn rotate90(t: &Tensor, turns: usize) -> Tensor {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    match turns % 4 {
        0 => t.clone(),
        1 => {
            let mut out = Tensor::zeros(&[c, w, h]);
            for ch in 0..c {
                for y in 0..w {
                    for x in 0..h {
                        out.data_mut()[(ch * w + y) * h + x] = t.data()[(ch * h + (h - 1 - x)) * w + y];
                    }
                }
            }
            out
        }
        2 => {
            let mut out = Tensor::zeros(&[c, h, w]);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.data_mut()[(ch * h + y) * w + x] = t.data()[(ch * h + (h - 1 - y)) * w + (w - 1 - x)];
                    }
                }
            }
            out
        }
        _ => {
            let mut out = Tensor::zeros(&[c, w, h]);
            for ch in 0..c {
                for y in 0..w {
                    for x in 0..h {
                        out.data_mut()[(ch * w + y) * h + x] = t.data()[(ch * h + x) * w + (w - 1 - y)];
                    }
                }
            }
            out
        }
    }
}

/// Horizontal mirror (left-right), exact permutation.
pub fn hflip(t: &Tensor) -> Tensor {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.data_mut()[(ch * h + y) * w + x] = t.data()[(ch * h + y) * w + (w - 1 - x)];
            }
        }
    }
    out
}

/// Applies one random crop window, rotation, and flip to both images of a
/// pair, deterministic in the seed.
pub fn augment(pair: &ImagePair, spec: &AugmentSpec, seed: u64) -> Result<ImagePair> {
    let s = pair.hazy.shape();
    if pair.clean.shape() != s {
        return Err(WfnError::shape("pair images differ in shape".to_string()));
    }
    if spec.patch > s[1] || spec.patch > s[2] {
        return Err(WfnError::arg(format!(
            "patch {} larger than source {}x{}",
            spec.patch, s[1], s[2]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = rng.gen_range(0..=s[1] - spec.patch);
    let x0 = rng.gen_range(0..=s[2] - spec.patch);
    let turns = if spec.rotations { rng.gen_range(0..4usize) } else { 0 };
    let flip = spec.hflip && rng.gen_bool(0.5);
    let apply = |img: &Tensor| -> Result<Tensor> {
        let mut out = crop(img, y0, x0, spec.patch)?;
        out = rotate90(&out, turns);
        if flip {
            out = hflip(&out);
        }
        Ok(out)
    };
    Ok(ImagePair {
        id: pair.id.clone(),
        hazy: apply(&pair.hazy)?,
        clean: apply(&pair.clean)?,
    })
}

// ---- P6 portable pixmap I/O -------------------------------------------------

/// Loads an 8-bit binary PPM (`P6`, maxval 255) as `[3,H,W]` with `b / 255`.
pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let file = std::fs::File::open(&path)?;
    let mut reader = BufReader::new(file);
    let magic = read_token(&mut reader)?;
    if magic != "P6" {
        return Err(WfnError::Parse(format!(
            "{}: expected P6 magic, got `{magic}`",
            path.as_ref().display()
        )));
    }
    let w: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| WfnError::Parse("bad width".to_string()))?;
    let h: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| WfnError::Parse("bad height".to_string()))?;
    let maxval: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| WfnError::Parse("bad maxval".to_string()))?;
    if maxval != 255 {
        return Err(WfnError::Parse(format!("unsupported maxval {maxval}; only 255")));
    }
    if w == 0 || h == 0 {
        return Err(WfnError::Parse("zero image extent".to_string()));
    }
    let mut payload = vec![0u8; w * h * 3];
    reader.read_exact(&mut payload).map_err(|_| {
        WfnError::Parse(format!(
            "{}: truncated payload, expected {} bytes",
            path.as_ref().display(),
            w * h * 3
        ))
    })?;
    let mut out = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.data_mut()[(c * h + y) * w + x] = payload[(y * w + x) * 3 + c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Saves `[3,H,W]` as binary PPM, rounding half-up and clamping to `[0,1]`.
pub fn save_ppm(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(WfnError::shape(format!("save_ppm expects [3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut payload = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = t.data()[(c * h + y) * w + x].clamp(0.0, 1.0);
                payload[(y * w + x) * 3 + c] = (v * 255.0).round() as u8;
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    write!(file, "P6\n{w} {h}\n255\n")?;
    file.write_all(&payload)?;
    Ok(())
}

/// One whitespace-delimited header token, skipping `#` comments.
fn read_token(reader: &mut impl BufRead) -> Result<String> {
    let mut token = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        match reader.read_exact(&mut byte) {
            Ok(()) => {}
            Err(_) if !token.is_empty() => return Ok(token),
            Err(_) => return Err(WfnError::Parse("truncated header".to_string())),
        }
        let ch = byte[0] as char;
        if in_comment {
            if ch == '\n' {
                in_comment = false;
            }
            continue;
        }
        if ch == '#' {
            in_comment = true;
            continue;
        }
        if ch.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        token.push(ch);
    }
}

/// Scans a directory for `<id>_hazy.ppm` / `<id>_gt.ppm` pairs, sorted by id.
pub fn load_pairs(dir: impl AsRef<Path>) -> Result<Vec<ImagePair>> {
    let mut ids: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("_hazy.ppm") {
            ids.push((id.to_string(), entry.path()));
        }
    }
    ids.sort();
    let mut pairs = Vec::with_capacity(ids.len());
    for (id, hazy_path) in ids {
        let gt_path = dir.as_ref().join(format!("{id}_gt.ppm"));
        if !gt_path.exists() {
            return Err(WfnError::Parse(format!("pair `{id}` is missing {}", gt_path.display())));
        }
        let hazy = load_ppm(&hazy_path)?;
        let clean = load_ppm(&gt_path)?;
        if hazy.shape() != clean.shape() {
            return Err(WfnError::shape(format!("pair `{id}`: hazy and gt shapes differ")));
        }
        pairs.push(ImagePair { id, hazy, clean });
    }
    if pairs.is_empty() {
        return Err(WfnError::Parse(format!(
            "no `<id>_hazy.ppm` files in {}",
            dir.as_ref().display()
        )));
    }
    Ok(pairs)
}
