//! Command implementations behind the `wfn` binary: synthetic data
//! generation, training, inference, evaluation, and the verification
//! oracles. Kept as a library so integration tests can drive the commands
//! directly.

use anyhow::{bail, Context, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use waveletformer::data::{
    apply_asm, load_pairs, load_ppm, save_ppm, synth_depth, DepthKind, HazeParams, DEFAULT_T_MIN,
};
use waveletformer::loss::LossWeights;
use waveletformer::metrics::{entropy, psnr, ssim, MetricsReport};
use waveletformer::network::{load_checkpoint, Model, NetworkConfig};
use waveletformer::optim::{fit, FitCfg};
use waveletformer::tensor::Tensor;
use waveletformer::kv;
use waveletformer::verify::{all_passed, asm_suite, grad_suite, metrics_suite, wavelet_suite, CheckResult};

/// Full run configuration: network keys plus training keys, parsed from a
/// `key = value` file. Unknown keys are rejected.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub crop: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub msssim_scales: usize,
    pub augment: bool,
    pub clip_grad: bool,
    pub log_every: usize,
    pub ckpt_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            seed: 0,
            steps: 500,
            batch: 1,
            crop: 64,
            lr: 1e-4,
            weights: LossWeights::default(),
            msssim_scales: 3,
            augment: true,
            clip_grad: true,
            log_every: 10,
            ckpt_every: 0,
        }
    }
}

const NETWORK_KEYS: [&str; 13] = [
    "stages",
    "base_channels",
    "channel_mult",
    "head_dim",
    "window",
    "wavelet",
    "mlp_ratio",
    "conv_kernel",
    "use_dwt",
    "use_parallel_conv",
    "use_fam",
    "use_aspp",
    "global_residual",
];

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (key, value) in kv::parse(text)? {
            if NETWORK_KEYS.contains(&key.as_str()) {
                cfg.network.apply_kv(&key, &value)?;
                continue;
            }
            match key.as_str() {
                "seed" => cfg.seed = kv::parse_u64(&key, &value)?,
                "steps" => cfg.steps = kv::parse_usize(&key, &value)?,
                "batch" => cfg.batch = kv::parse_usize(&key, &value)?,
                "crop" => cfg.crop = kv::parse_usize(&key, &value)?,
                "lr" => cfg.lr = kv::parse_f64(&key, &value)?,
                "w_l1" => cfg.weights.w_l1 = kv::parse_f64(&key, &value)?,
                "w_msssim" => cfg.weights.w_msssim = kv::parse_f64(&key, &value)?,
                "w_perc" => cfg.weights.w_perc = kv::parse_f64(&key, &value)?,
                "msssim_scales" => cfg.msssim_scales = kv::parse_usize(&key, &value)?,
                "augment" => cfg.augment = kv::parse_bool(&key, &value)?,
                "clip_grad" => cfg.clip_grad = kv::parse_bool(&key, &value)?,
                "log_every" => cfg.log_every = kv::parse_usize(&key, &value)?,
                "ckpt_every" => cfg.ckpt_every = kv::parse_usize(&key, &value)?,
                other => bail!("unknown config key `{other}`"),
            }
        }
        cfg.network.validate()?;
        cfg.weights.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_text(&text)
    }

    /// The resolved `key = value` form written into every run directory.
    pub fn to_text(&self) -> String {
        format!(
            "{}seed = {}\nsteps = {}\nbatch = {}\ncrop = {}\nlr = {}\nw_l1 = {}\nw_msssim = {}\n\
             w_perc = {}\nmsssim_scales = {}\naugment = {}\nclip_grad = {}\nlog_every = {}\nckpt_every = {}\n",
            self.network.to_kv(),
            self.seed,
            self.steps,
            self.batch,
            self.crop,
            self.lr,
            self.weights.w_l1,
            self.weights.w_msssim,
            self.weights.w_perc,
            self.msssim_scales,
            self.augment,
            self.clip_grad,
            self.log_every,
            self.ckpt_every
        )
    }
}

/// The `--ablate` variants of `train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    WithoutDwt,
    WithoutParallelConv,
    WithoutFam,
    WithoutAspp,
}

impl Ablation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "w/o-dwt" => Ok(Ablation::WithoutDwt),
            "w/o-parallel" => Ok(Ablation::WithoutParallelConv),
            "w/o-fam" => Ok(Ablation::WithoutFam),
            "w/o-aspp" => Ok(Ablation::WithoutAspp),
            other => bail!("unknown ablation `{other}` (expected w/o-dwt|w/o-parallel|w/o-fam|w/o-aspp)"),
        }
    }

    pub fn apply(&self, cfg: &mut NetworkConfig) {
        match self {
            Ablation::WithoutDwt => cfg.use_dwt = false,
            Ablation::WithoutParallelConv => cfg.use_parallel_conv = false,
            Ablation::WithoutFam => cfg.use_fam = false,
            Ablation::WithoutAspp => cfg.use_aspp = false,
        }
    }
}

/// Deterministic procedurally generated "clean" scene: a per-channel mixture
/// of sinusoids with a block overlay for hard edges, clamped to `[0,1]`.
pub fn synth_clean(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Tensor::zeros(&[3, h, w]);
    let blocks = synth_depth(h, w, DepthKind::Blocks, seed ^ 0xb10c);
    for c in 0..3 {
        let comps: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.3..3.0) * std::f64::consts::PI,
                    rng.gen_range(0.3..3.0) * std::f64::consts::PI,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.15..0.3),
                )
            })
            .collect();
        let base: f64 = rng.gen_range(0.35..0.65);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                let mut val = base;
                for (fx, fy, phase, amp) in &comps {
                    val += amp * (fx * u + fy * v + phase).sin();
                }
                val += 0.25 * (blocks.data()[y * w + x] - 0.5);
                img.data_mut()[(c * h + y) * w + x] = val.clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// `synth`: writes `count` paired `<id>_hazy.ppm` / `<id>_gt.ppm` files plus
/// a `manifest.txt` of the haze parameters per pair.
pub fn cmd_synth(
    out: &Path,
    count: usize,
    size: (usize, usize),
    depth_kind: DepthKind,
    beta_range: (f64, f64),
    seed: u64,
) -> Result<()> {
    synth_inner(out, count, size, depth_kind, beta_range, seed).inspect_err(|e| {
        let _ = std::fs::write(out.join("FAILED"), format!("{e:#}\n"));
    })
}

fn synth_inner(
    out: &Path,
    count: usize,
    size: (usize, usize),
    depth_kind: DepthKind,
    beta_range: (f64, f64),
    seed: u64,
) -> Result<()> {
    let (h, w) = size;
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        bail!("size {h}x{w} invalid: extents must be positive and even");
    }
    if beta_range.0 > beta_range.1 || beta_range.0 < 0.0 {
        bail!("beta range {}..{} invalid", beta_range.0, beta_range.1);
    }
    std::fs::create_dir_all(out)?;
    let mut manifest = String::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let id = format!("{i:04}");
        let clean = synth_clean(h, w, rng.gen());
        let beta = if beta_range.1 > beta_range.0 {
            rng.gen_range(beta_range.0..=beta_range.1)
        } else {
            beta_range.0
        };
        let ambient = [
            rng.gen_range(0.6..=1.0),
            rng.gen_range(0.6..=1.0),
            rng.gen_range(0.6..=1.0),
        ];
        let params = HazeParams {
            ambient,
            beta,
            depth: synth_depth(h, w, depth_kind, rng.gen()),
            t_min: DEFAULT_T_MIN,
        };
        let hazy = apply_asm(&clean, &params)?;
        save_ppm(&hazy, out.join(format!("{id}_hazy.ppm")))?;
        save_ppm(&clean, out.join(format!("{id}_gt.ppm")))?;
        manifest.push_str(&format!(
            "{id} beta={beta:.6} A={:.6},{:.6},{:.6} depth={} t_min={}\n",
            ambient[0],
            ambient[1],
            ambient[2],
            depth_kind.name(),
            params.t_min
        ));
    }
    std::fs::write(out.join("manifest.txt"), manifest)?;
    Ok(())
}

/// `train`: fits the model on a paired directory and writes checkpoints, the
/// metrics log, and the resolved config into `out`.
pub fn cmd_train(config: &Path, data: &Path, out: &Path, ablate: Option<Ablation>) -> Result<()> {
    let run = || -> Result<()> {
        let mut cfg = RunConfig::from_file(config)?;
        if let Some(ab) = ablate {
            ab.apply(&mut cfg.network);
        }
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("config.resolved"), cfg.to_text())?;
        let dataset = load_pairs(data)?;
        let mut model = Model::build(cfg.network, cfg.seed)?;
        println!(
            "model: {} parameters, ~{:.3} GMAC per {}x{} forward",
            model.param_count(),
            model.flop_count(cfg.crop, cfg.crop) as f64 / 1e9,
            cfg.crop,
            cfg.crop
        );
        let fit_cfg = FitCfg {
            steps: cfg.steps,
            batch: cfg.batch,
            crop: cfg.crop,
            seed: cfg.seed,
            lr0: cfg.lr,
            weights: cfg.weights,
            msssim_scales: cfg.msssim_scales,
            augment: cfg.augment,
            clip_grad: cfg.clip_grad,
            log_every: cfg.log_every,
            ckpt_every: (cfg.ckpt_every > 0).then_some(cfg.ckpt_every),
            out_dir: Some(out.to_path_buf()),
            target_psnr: None,
        };
        let history = fit(&mut model, &dataset, &fit_cfg)?;
        if let (Some(first), Some(last)) = (history.first(), history.last()) {
            println!(
                "trained {} steps: loss {:.5} -> {:.5}, psnr {:.2} -> {:.2} dB",
                history.len(),
                first.total,
                last.total,
                first.psnr,
                last.psnr
            );
        }
        Ok(())
    };
    run().inspect_err(|e| {
        // mark the partial run directory so failures are never mistaken for
        // finished runs
        let _ = std::fs::write(out.join("FAILED"), format!("{e:#}\n"));
    })
}

/// `infer`: restores one image with a trained checkpoint.
pub fn cmd_infer(ckpt: &Path, input: &Path, output: &Path) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let img = load_ppm(input)?;
    let s = img.shape().to_vec();
    let multiple = model.cfg.required_multiple();
    if s[1] % multiple != 0 || s[2] % multiple != 0 {
        bail!(
            "input {}x{} not divisible by {multiple} (2^stages * window); crop or pad first",
            s[1],
            s[2]
        );
    }
    let batched = img.reshape(vec![1, 3, s[1], s[2]])?;
    let restored = model.forward(&batched)?;
    let restored = restored.reshape(vec![3, s[1], s[2]])?;
    save_ppm(&restored.map(|v| v.clamp(0.0, 1.0)), output)?;
    Ok(())
}

/// `eval`: pairs identically named `.ppm` files from two directories and
/// writes the `id psnr ssim entropy` report.
pub fn cmd_eval(pred_dir: &Path, gt_dir: &Path, report_path: &Path) -> Result<()> {
    let mut names: Vec<String> = std::fs::read_dir(pred_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ppm"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no .ppm files in {}", pred_dir.display());
    }
    let mut report = MetricsReport::default();
    for name in &names {
        let gt_path = gt_dir.join(name);
        if !gt_path.exists() {
            bail!("{} has no ground-truth counterpart in {}", name, gt_dir.display());
        }
        let pred = load_ppm(pred_dir.join(name))?;
        let gt = load_ppm(&gt_path)?;
        let id = name.trim_end_matches(".ppm");
        report.push(id, psnr(&pred, &gt, 1.0)?, ssim(&pred, &gt)?, entropy(&pred)?);
    }
    let text = report.to_text();
    std::fs::write(report_path, &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Wavelet,
    Grad,
    Metrics,
    Asm,
    All,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "wavelet" => Ok(Suite::Wavelet),
            "grad" => Ok(Suite::Grad),
            "metrics" => Ok(Suite::Metrics),
            "asm" => Ok(Suite::Asm),
            "all" => Ok(Suite::All),
            other => bail!("unknown suite `{other}` (expected wavelet|grad|metrics|asm|all)"),
        }
    }
}

/// `verify`: runs the property oracles, printing per-check max errors.
/// Returns an error (non-zero exit) if any check fails.
pub fn cmd_verify(suite: Suite) -> Result<()> {
    let mut results: Vec<CheckResult> = Vec::new();
    if matches!(suite, Suite::Wavelet | Suite::All) {
        results.extend(wavelet_suite()?);
    }
    if matches!(suite, Suite::Grad | Suite::All) {
        results.extend(grad_suite(5)?);
    }
    if matches!(suite, Suite::Metrics | Suite::All) {
        results.extend(metrics_suite()?);
    }
    if matches!(suite, Suite::Asm | Suite::All) {
        results.extend(asm_suite()?);
    }
    let mut stdout = std::io::stdout().lock();
    for r in &results {
        writeln!(stdout, "{}", r.line())?;
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    writeln!(stdout, "{} checks, {} failed", results.len(), failed)?;
    if !all_passed(&results) {
        bail!("{failed} verification check(s) failed");
    }
    Ok(())
}

/// Parses `HxW` (e.g. `64x64`).
pub fn parse_size(text: &str) -> Result<(usize, usize)> {
    let Some((h, w)) = text.split_once('x') else {
        bail!("size must look like 64x64, got `{text}`");
    };
    Ok((
        h.parse().with_context(|| format!("bad height in `{text}`"))?,
        w.parse().with_context(|| format!("bad width in `{text}`"))?,
    ))
}

/// Parses `a..b` (e.g. `0.4..1.2`).
pub fn parse_range(text: &str) -> Result<(f64, f64)> {
    let Some((a, b)) = text.split_once("..") else {
        bail!("range must look like 0.4..1.2, got `{text}`");
    };
    Ok((
        a.parse().with_context(|| format!("bad range start in `{text}`"))?,
        b.parse().with_context(|| format!("bad range end in `{text}`"))?,
    ))
}
