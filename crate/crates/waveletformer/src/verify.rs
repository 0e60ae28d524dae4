//! Property-oracle suites shared by the acceptance tests and the CLI
//! `verify` command: wavelet reconstruction, finite-difference gradient
//! checks across every differentiable operation, metric closed forms, and
//! the scattering-model round trip. Each check reports its worst observed
//! error against its threshold.

use crate::attention::{attention_core, AttentionConfig, AttentionLayer};
use crate::blocks::{AsppBlock, BlockConfig, FamBlock, IWaveletFormerBlock, WaveletFormerBlock};
use crate::data::{apply_asm, invert_asm, synth_depth, DepthKind, HazeParams};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckCfg};
use crate::loss::{l1_loss, ms_ssim, ms_ssim_loss, PerceptualExtractor, SSIM_C1};
use crate::metrics;
use crate::network::{Model, NetworkConfig};
use crate::params::{Ctx, ParamStore};
use crate::tape::{ConvSpec, Tape, VarId};
use crate::tensor::Tensor;
use crate::wavelet::{self, make_filters, wavedec2, waverec2, WaveletFamily, WaveletSpec};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_err < self.tol
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<55} max_err {:>12.4e}  tol {:>8.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_err,
            self.tol
        )
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(CheckResult::passed)
}

/// Filter orthonormality plus multi-level perfect reconstruction on random
/// inputs, for every family and levels 1..=3.
pub fn wavelet_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for family in WaveletFamily::ALL {
        let (h, g) = make_filters(family);
        let sum_err = (h.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs();
        let sq_err = (h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs();
        let mut shift_err = 0.0f64;
        for m in 1..h.len() / 2 {
            let dot: f64 = (0..h.len() - 2 * m).map(|k| h[k] * h[k + 2 * m]).sum();
            shift_err = shift_err.max(dot.abs());
        }
        let g_sum = g.iter().sum::<f64>().abs();
        out.push(CheckResult {
            name: format!("{}: sum(h) = sqrt(2)", family.name()),
            max_err: sum_err,
            tol: 1e-12,
        });
        out.push(CheckResult {
            name: format!("{}: sum(h^2) = 1", family.name()),
            max_err: sq_err,
            tol: 1e-12,
        });
        out.push(CheckResult {
            name: format!("{}: even-shift orthogonality", family.name()),
            max_err: shift_err,
            tol: 1e-12,
        });
        out.push(CheckResult {
            name: format!("{}: sum(g) = 0", family.name()),
            max_err: g_sum,
            tol: 1e-12,
        });
    }
    for family in WaveletFamily::ALL {
        for levels in 1..=3usize {
            let mut worst = 0.0f64;
            let mut energy_worst = 0.0f64;
            for trial in 0..20u64 {
                let x = Tensor::rand_uniform(&[1, 3, 64, 64], 0.0, 1.0, 1000 + trial);
                let spec = WaveletSpec { family, levels };
                let (approx, details) = wavedec2(&x, spec)?;
                let r = waverec2(&approx, &details, family)?;
                worst = worst.max(r.max_abs_diff(&x));
                if levels == 1 {
                    let s = wavelet::dwt2d(&x, family)?;
                    energy_worst = energy_worst.max((s.energy() - x.sq_norm()).abs());
                }
            }
            out.push(CheckResult {
                name: format!("{}: reconstruction, {levels} level(s), 20 inputs", family.name()),
                max_err: worst,
                tol: 1e-10,
            });
            if levels == 1 {
                out.push(CheckResult {
                    name: format!("{}: energy conservation", family.name()),
                    max_err: energy_worst,
                    tol: 1e-10,
                });
            }
        }
    }
    Ok(out)
}

fn run_grad(
    name: &str,
    inputs: &[Tensor],
    f: impl Fn(&mut Tape, &[VarId]) -> Result<VarId>,
    seeds: u64,
    cap: Option<usize>,
    out: &mut Vec<CheckResult>,
) -> Result<()> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let cfg = GradCheckCfg {
            seed,
            max_elems_per_input: cap,
            ..Default::default()
        };
        let report = grad_check(inputs, &f, &cfg)?;
        worst = worst.max(report.max_rel_err);
    }
    out.push(CheckResult {
        name: format!("grad: {name} ({seeds} seeds)"),
        max_err: worst,
        tol: 1e-4,
    });
    Ok(())
}

/// Finite-difference gradient checks for every differentiable operation:
/// conv2d, softmax, layer_norm, dwt2d/idwt2d, window attention, MHCA, all
/// four blocks, a tiny end-to-end network, and the three losses.
pub fn grad_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    let x = Tensor::rand_uniform(&[1, 2, 6, 6], -1.0, 1.0, 11);
    let w = Tensor::rand_uniform(&[2, 2, 3, 3], -0.5, 0.5, 12);
    let b = Tensor::rand_uniform(&[2], -0.1, 0.1, 13);
    let spec = ConvSpec::new(2, 2, 3);
    run_grad(
        "conv2d 1x2x6x6 k3 (x, w, b)",
        &[x, w, b],
        |t, ids| t.conv2d(ids[0], ids[1], Some(ids[2]), &spec),
        seeds,
        None,
        &mut out,
    )?;

    let x = Tensor::rand_uniform(&[1, 2, 5, 5], -1.0, 1.0, 14);
    let w = Tensor::rand_uniform(&[3, 2, 3, 3], -0.5, 0.5, 15);
    let dilated = ConvSpec::new(2, 3, 3).with_dilation(2).with_padding(2).with_bias(false);
    run_grad(
        "conv2d dilated r2 same-padded (x, w)",
        &[x, w],
        |t, ids| t.conv2d(ids[0], ids[1], None, &dilated),
        seeds,
        None,
        &mut out,
    )?;

    let x = Tensor::rand_uniform(&[1, 2, 6, 6], -1.0, 1.0, 70);
    let w = Tensor::rand_uniform(&[3, 2, 3, 3], -0.5, 0.5, 71);
    let b = Tensor::rand_uniform(&[3], -0.1, 0.1, 72);
    let strided = ConvSpec::new(2, 3, 3).with_stride(2);
    run_grad(
        "conv2d stride-2 (downsample ablation path)",
        &[x, w, b],
        |t, ids| t.conv2d(ids[0], ids[1], Some(ids[2]), &strided),
        seeds,
        None,
        &mut out,
    )?;

    let x = Tensor::rand_uniform(&[1, 3, 4, 4], -1.0, 1.0, 73);
    let w = Tensor::rand_uniform(&[3, 2, 2, 2], -0.5, 0.5, 74);
    let b = Tensor::rand_uniform(&[2], -0.1, 0.1, 75);
    run_grad(
        "conv_transpose2d k2 s2 (upsample ablation path)",
        &[x, w, b],
        |t, ids| t.conv_transpose2d(ids[0], ids[1], Some(ids[2]), 2, 2),
        seeds,
        None,
        &mut out,
    )?;

    let x = Tensor::rand_uniform(&[8], -2.0, 2.0, 16);
    run_grad("softmax length-8", &[x], |t, ids| t.softmax(ids[0], 0), seeds, None, &mut out)?;

    let x = Tensor::rand_uniform(&[2, 5, 3, 3], -1.0, 1.0, 17);
    let gamma = Tensor::rand_uniform(&[5], 0.5, 1.5, 18);
    let beta = Tensor::rand_uniform(&[5], -0.5, 0.5, 19);
    run_grad(
        "layer_norm [2,5,3,3] (x, gamma, beta)",
        &[x, gamma, beta],
        |t, ids| t.layer_norm(ids[0], ids[1], ids[2], 1e-6),
        seeds,
        None,
        &mut out,
    )?;

    for family in WaveletFamily::ALL {
        let x = Tensor::rand_uniform(&[1, 2, 8, 8], -1.0, 1.0, 20);
        run_grad(
            &format!("dwt2d {}", family.name()),
            std::slice::from_ref(&x),
            |t, ids| t.dwt2d(ids[0], family),
            seeds,
            None,
            &mut out,
        )?;
        let s = Tensor::rand_uniform(&[1, 8, 4, 4], -1.0, 1.0, 21);
        run_grad(
            &format!("idwt2d {}", family.name()),
            &[s],
            |t, ids| t.idwt2d(ids[0], family),
            seeds,
            None,
            &mut out,
        )?;
    }

    // window attention with parameters checked as inputs
    {
        let heads = 2;
        let x = Tensor::rand_uniform(&[1, 4, 8], -1.0, 1.0, 22);
        let wq = Tensor::rand_trunc_normal(&[8, 8], 0.2, 23);
        let wk = Tensor::rand_trunc_normal(&[8, 8], 0.2, 24);
        let wv = Tensor::rand_trunc_normal(&[8, 8], 0.2, 25);
        let wo = Tensor::rand_trunc_normal(&[8, 8], 0.2, 26);
        run_grad(
            "window_mhsa 1 window, 2 heads, dim 4 (x + projections)",
            &[x, wq, wk, wv, wo],
            |t, ids| {
                let q = t.linear(ids[0], ids[1], None)?;
                let k = t.linear(ids[0], ids[2], None)?;
                let v = t.linear(ids[0], ids[3], None)?;
                let mixed = attention_core(t, q, k, v, heads)?;
                t.linear(mixed, ids[4], None)
            },
            seeds,
            None,
            &mut out,
        )?;
    }

    {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let layer = AttentionLayer::init(&mut store, "mhca", AttentionConfig::new(2, 2, 2), &mut rng);
        let q = Tensor::rand_uniform(&[1, 4, 4, 4], -1.0, 1.0, 28);
        let kv = Tensor::rand_uniform(&[1, 4, 4, 4], -1.0, 1.0, 29);
        run_grad(
            "mhca windowed (query, kv)",
            &[q, kv],
            |t, ids| {
                let mut ctx = Ctx::new(t, &store);
                layer.cross_attention_nchw(&mut ctx, ids[0], ids[1])
            },
            seeds,
            None,
            &mut out,
        )?;
    }

    let block_cfg = BlockConfig {
        in_channels: 4,
        out_channels: 8,
        head_dim: 4,
        window: 4,
        family: WaveletFamily::Db2,
        conv_kernel: 3,
        mlp_ratio: 4,
        use_dwt: true,
        use_parallel_conv: true,
    };
    {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let block = WaveletFormerBlock::init(&mut store, "enc", &block_cfg, &mut rng)?;
        let x = Tensor::rand_uniform(&[1, 4, 8, 8], -1.0, 1.0, 31);
        run_grad(
            "waveletformer block 1x4x8x8 -> 1x8x4x4",
            &[x],
            |t, ids| {
                let mut ctx = Ctx::new(t, &store);
                block.forward(&mut ctx, ids[0])
            },
            seeds,
            Some(96),
            &mut out,
        )?;
    }
    {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut cfg = block_cfg;
        cfg.in_channels = 8;
        cfg.out_channels = 4;
        let block = IWaveletFormerBlock::init(&mut store, "dec", &cfg, &mut rng)?;
        let x = Tensor::rand_uniform(&[1, 8, 4, 4], -1.0, 1.0, 33);
        run_grad(
            "iwaveletformer block 1x8x4x4 -> 1x4x8x8",
            &[x],
            |t, ids| {
                let mut ctx = Ctx::new(t, &store);
                block.forward(&mut ctx, ids[0])
            },
            seeds,
            Some(96),
            &mut out,
        )?;
    }
    {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let fam = FamBlock::init(&mut store, "fam", 4, 2, 2, &mut rng)?;
        let a = Tensor::rand_uniform(&[1, 4, 4, 4], -1.0, 1.0, 35);
        let b = Tensor::rand_uniform(&[1, 4, 4, 4], -1.0, 1.0, 36);
        run_grad(
            "fam (encoder, decoder features)",
            &[a, b],
            |t, ids| {
                let mut ctx = Ctx::new(t, &store);
                fam.forward(&mut ctx, ids[0], ids[1])
            },
            seeds,
            None,
            &mut out,
        )?;
    }
    {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let aspp = AsppBlock::init(&mut store, "aspp", 2, &mut rng);
        let x = Tensor::rand_uniform(&[1, 2, 8, 8], -1.0, 1.0, 38);
        run_grad(
            "aspp rates 3/6/9",
            &[x],
            |t, ids| {
                let mut ctx = Ctx::new(t, &store);
                aspp.forward(&mut ctx, ids[0])
            },
            seeds,
            Some(96),
            &mut out,
        )?;
    }

    // end-to-end tiny network: gradient with respect to the input image
    {
        let cfg = NetworkConfig {
            stages: 1,
            base_channels: 4,
            window: 4,
            ..Default::default()
        };
        let model = Model::build(cfg, 39)?;
        let x = Tensor::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, 40);
        run_grad(
            "end-to-end network S=1 C0=4 on 16x16 input",
            &[x],
            |t, ids| {
                let mut ctx = Ctx::new(t, &model.store);
                model.forward_on(&mut ctx, ids[0])
            },
            seeds,
            Some(64),
            &mut out,
        )?;
    }

    let p = Tensor::rand_uniform(&[1, 3, 8, 8], 0.1, 0.9, 41);
    let t0 = Tensor::rand_uniform(&[1, 3, 8, 8], 0.1, 0.9, 42);
    run_grad("l1 loss", &[p, t0], |t, ids| l1_loss(t, ids[0], ids[1]), seeds, None, &mut out)?;

    let p = Tensor::rand_uniform(&[1, 1, 24, 24], 0.1, 0.9, 43);
    let t1 = Tensor::rand_uniform(&[1, 1, 24, 24], 0.1, 0.9, 44);
    run_grad(
        "ms-ssim loss (2 scales)",
        &[p, t1],
        |t, ids| ms_ssim_loss(t, ids[0], ids[1], 2),
        seeds,
        Some(72),
        &mut out,
    )?;

    let extractor = PerceptualExtractor::new(45);
    let p = Tensor::rand_uniform(&[1, 3, 12, 12], 0.1, 0.9, 46);
    let t2 = Tensor::rand_uniform(&[1, 3, 12, 12], 0.1, 0.9, 47);
    run_grad(
        "perceptual loss (frozen extractor)",
        &[p, t2],
        |t, ids| extractor.loss(t, ids[0], ids[1]),
        seeds,
        Some(96),
        &mut out,
    )?;

    Ok(out)
}

/// Metric closed forms: PSNR offset, SSIM self/constant forms, entropy of a
/// uniform histogram, MS-SSIM self-similarity.
pub fn metrics_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    let a = Tensor::zeros(&[3, 8, 8]);
    let b = Tensor::full(&[3, 8, 8], 0.1);
    let db = metrics::psnr(&a, &b, 1.0)?;
    out.push(CheckResult {
        name: "psnr: uniform 0.1 offset = 20 dB".to_string(),
        max_err: (db - 20.0).abs(),
        tol: 1e-9,
    });

    let img = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, 50);
    out.push(CheckResult {
        name: "ssim: self-similarity = 1".to_string(),
        max_err: (metrics::ssim(&img, &img)? - 1.0).abs(),
        tol: 1e-9,
    });

    let zero = Tensor::zeros(&[1, 16, 16]);
    let one = Tensor::full(&[1, 16, 16], 1.0);
    let expect = SSIM_C1 / (1.0 + SSIM_C1);
    out.push(CheckResult {
        name: "ssim: constant 0 vs 1 = C1/(1+C1)".to_string(),
        max_err: (metrics::ssim(&zero, &one)? - expect).abs(),
        tol: 1e-9,
    });

    let data: Vec<f64> = (0..256).map(|k| k as f64 / 255.0).collect();
    let uniform = Tensor::new(vec![1, 16, 16], data)?;
    out.push(CheckResult {
        name: "entropy: uniform 256-level histogram = 8 bits".to_string(),
        max_err: (metrics::entropy(&uniform)? - 8.0).abs(),
        tol: 1e-12,
    });

    let x = Tensor::rand_uniform(&[1, 3, 176, 176], 0.0, 1.0, 51);
    let mut tape = Tape::new();
    let xa = tape.leaf(x.clone());
    let xb = tape.leaf(x);
    let sim = ms_ssim(&mut tape, xa, xb, 5)?;
    out.push(CheckResult {
        name: "ms-ssim: self-similarity = 1 (5 scales)".to_string(),
        max_err: (tape.value(sim).item() - 1.0).abs(),
        tol: 1e-6,
    });

    Ok(out)
}

/// Synthesize-then-invert round trip of the scattering model over 10 seeds.
pub fn asm_suite() -> Result<Vec<CheckResult>> {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let clean = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, 600 + seed);
        let kind = match seed % 3 {
            0 => DepthKind::Ramp,
            1 => DepthKind::Radial,
            _ => DepthKind::Blocks,
        };
        let params = HazeParams {
            ambient: [
                0.6 + 0.04 * (seed as f64),
                0.7 + 0.02 * (seed as f64),
                1.0 - 0.03 * (seed as f64),
            ],
            beta: 0.3 + 0.35 * seed as f64,
            depth: synth_depth(16, 16, kind, seed),
            t_min: 0.05,
        };
        let hazy = apply_asm(&clean, &params)?;
        let back = invert_asm(&hazy, &params)?;
        worst = worst.max(back.max_abs_diff(&clean));
    }
    Ok(vec![CheckResult {
        name: "asm: synthesize-then-invert round trip, 10 seeds".to_string(),
        max_err: worst,
        tol: 1e-10,
    }])
}
