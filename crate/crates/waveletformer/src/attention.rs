//! Windowed multi-head self-attention and cross-attention.
//!
//! Features are partitioned into non-overlapping `w x w` windows and
//! attention runs independently per window: `softmax(QK^T / sqrt(d)) V` per
//! head, heads concatenated, then an output projection. Cross-attention takes
//! queries from one feature map and keys/values from another with the same
//! window layout. No relative position bias and no shifted windows by
//! default; both exist behind [`AttentionConfig`] flags.

use crate::error::{Result, WfnError};
use crate::params::{Ctx, Init, PIdx, ParamStore};
use crate::tape::{self, Tape, VarId};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// Geometry of one attention layer. Feature channels = `heads * head_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub window: usize,
    /// Swin-style refinements, off by default (the verified core is the
    /// unbiased, unshifted form).
    pub relative_bias: bool,
    pub shifted: bool,
}

impl AttentionConfig {
    pub fn new(heads: usize, head_dim: usize, window: usize) -> Self {
        AttentionConfig {
            heads,
            head_dim,
            window,
            relative_bias: false,
            shifted: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Splits `channels` into heads of `head_dim`, failing on remainders.
    pub fn for_channels(channels: usize, head_dim: usize, window: usize) -> Result<Self> {
        if head_dim == 0 || channels % head_dim != 0 {
            return Err(WfnError::arg(format!(
                "channels {channels} not divisible by head_dim {head_dim}"
            )));
        }
        Ok(AttentionConfig::new(channels / head_dim, head_dim, window))
    }
}

/// `[N,C,H,W] -> [N*(H/w)*(W/w), w*w, C]` tokens in raster order.
pub fn window_partition(x: &Tensor, win: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[2] % win != 0 || s[3] % win != 0 {
        return Err(WfnError::shape(format!(
            "window_partition: {s:?} not divisible by window {win}"
        )));
    }
    Ok(tape::partition_forward(x, win))
}

/// Exact inverse of [`window_partition`] for the given image geometry.
pub fn window_merge(tokens: &Tensor, nchw: [usize; 4], win: usize) -> Result<Tensor> {
    let s = tokens.shape();
    let [n, c, h, w] = nchw;
    if s.len() != 3 || s[0] != n * (h / win) * (w / win) || s[1] != win * win || s[2] != c {
        return Err(WfnError::shape(format!(
            "window_merge: tokens {s:?} do not fit {nchw:?} with window {win}"
        )));
    }
    Ok(tape::merge_forward(tokens, nchw, win))
}

/// QKV and output projection parameters of one attention layer, plus the
/// optional relative-position-bias table.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub wq: PIdx,
    pub bq: PIdx,
    pub wk: PIdx,
    pub bk: PIdx,
    pub wv: PIdx,
    pub bv: PIdx,
    pub wo: PIdx,
    pub bo: PIdx,
    /// `[(2w-1)^2, heads]` learnable table when `cfg.relative_bias`.
    pub rel_bias: Option<PIdx>,
    pub cfg: AttentionConfig,
}

impl AttentionLayer {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: AttentionConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.channels();
        let w = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| {
            store.add_init(format!("{prefix}.{name}"), &[c, c], Init::TruncNormal, rng)
        };
        let wq = w(store, rng, "wq");
        let bq = store.add_init(format!("{prefix}.bq"), &[c], Init::Zeros, rng);
        let wk = w(store, rng, "wk");
        let bk = store.add_init(format!("{prefix}.bk"), &[c], Init::Zeros, rng);
        let wv = w(store, rng, "wv");
        let bv = store.add_init(format!("{prefix}.bv"), &[c], Init::Zeros, rng);
        let wo = w(store, rng, "wo");
        let bo = store.add_init(format!("{prefix}.bo"), &[c], Init::Zeros, rng);
        let rel_bias = cfg.relative_bias.then(|| {
            let span = 2 * cfg.window - 1;
            store.add_init(
                format!("{prefix}.rel_bias"),
                &[span * span, cfg.heads],
                Init::TruncNormal,
                rng,
            )
        });
        AttentionLayer { wq, bq, wk, bk, wv, bv, wo, bo, rel_bias, cfg }
    }

    /// Parameters of one plain layer: four `CxC` projections plus biases.
    pub fn param_count(channels: usize) -> usize {
        4 * (channels * channels + channels)
    }

    /// Self-attention over per-window tokens `[B, T, C]`.
    pub fn self_attention(&self, ctx: &mut Ctx, tokens: VarId) -> Result<VarId> {
        self.cross_attention(ctx, tokens, tokens)
    }

    /// Q from `q_tokens`, K and V from `kv_tokens`; both `[B, T, C]`.
    pub fn cross_attention(&self, ctx: &mut Ctx, q_tokens: VarId, kv_tokens: VarId) -> Result<VarId> {
        self.cross_attention_masked(ctx, q_tokens, kv_tokens, None)
    }

    fn cross_attention_masked(
        &self,
        ctx: &mut Ctx,
        q_tokens: VarId,
        kv_tokens: VarId,
        window_mask: Option<VarId>,
    ) -> Result<VarId> {
        let c = ctx.tape.value(q_tokens).shape()[2];
        if c != self.cfg.channels() {
            return Err(WfnError::shape(format!(
                "attention expects {} channels (heads {} x dim {}), got {c}",
                self.cfg.channels(),
                self.cfg.heads,
                self.cfg.head_dim
            )));
        }
        let (wq, bq) = (ctx.param(self.wq), ctx.param(self.bq));
        let (wk, bk) = (ctx.param(self.wk), ctx.param(self.bk));
        let (wv, bv) = (ctx.param(self.wv), ctx.param(self.bv));
        let (wo, bo) = (ctx.param(self.wo), ctx.param(self.bo));
        let q = ctx.tape.linear(q_tokens, wq, Some(bq))?;
        let k = ctx.tape.linear(kv_tokens, wk, Some(bk))?;
        let v = ctx.tape.linear(kv_tokens, wv, Some(bv))?;

        let head_bias = match self.rel_bias {
            Some(idx) => {
                let table = ctx.param(idx);
                let gathered = ctx.tape.gather_rows(table, &relative_index(self.cfg.window))?;
                let transposed = ctx.tape.transpose2d(gathered)?;
                let t = self.cfg.window * self.cfg.window;
                Some(ctx.tape.reshape(transposed, vec![self.cfg.heads, t, t])?)
            }
            None => None,
        };
        let mixed = attention_core_biased(ctx.tape, q, k, v, self.cfg.heads, head_bias, window_mask)?;
        ctx.tape.linear(mixed, wo, Some(bo))
    }

    /// Self-attention on an `[N,C,H,W]` map: partition, attend, merge. With
    /// `cfg.shifted`, the map is cyclically shifted by half a window first
    /// and masked so wrapped regions never attend across the seam.
    pub fn self_attention_nchw(&self, ctx: &mut Ctx, x: VarId) -> Result<VarId> {
        self.windowed_nchw(ctx, x, x)
    }

    /// Windowed cross-attention on `[N,C,H,W]` maps sharing one shape.
    pub fn cross_attention_nchw(&self, ctx: &mut Ctx, query_src: VarId, kv_src: VarId) -> Result<VarId> {
        let qs = ctx.tape.value(query_src).shape().to_vec();
        let ks = ctx.tape.value(kv_src).shape().to_vec();
        if qs != ks {
            return Err(WfnError::shape(format!("mhca inputs differ: {qs:?} vs {ks:?}")));
        }
        self.windowed_nchw(ctx, query_src, kv_src)
    }

    fn windowed_nchw(&self, ctx: &mut Ctx, query_src: VarId, kv_src: VarId) -> Result<VarId> {
        let shape = ctx.tape.value(query_src).shape().to_vec();
        let nchw = [shape[0], shape[1], shape[2], shape[3]];
        let win = self.cfg.window;
        // a single window covering the whole map has nothing to shift
        let shiftable = self.cfg.shifted && nchw[2] > win && nchw[3] > win;
        let shift = if shiftable { (win / 2) as i64 } else { 0 };
        let (q_in, kv_in) = if shift > 0 {
            let q = ctx.tape.roll2d(query_src, -shift, -shift)?;
            let kv = if kv_src == query_src {
                q
            } else {
                ctx.tape.roll2d(kv_src, -shift, -shift)?
            };
            (q, kv)
        } else {
            (query_src, kv_src)
        };
        let q_tokens = ctx.tape.window_partition(q_in, win)?;
        let kv_tokens = if kv_in == q_in {
            q_tokens
        } else {
            ctx.tape.window_partition(kv_in, win)?
        };
        let mask = if shift > 0 {
            let m = shifted_window_mask(nchw[0], nchw[2], nchw[3], win, shift as usize);
            Some(ctx.tape.leaf(m))
        } else {
            None
        };
        let out = self.cross_attention_masked(ctx, q_tokens, kv_tokens, mask)?;
        let merged = ctx.tape.window_merge(out, nchw, win)?;
        if shift > 0 {
            ctx.tape.roll2d(merged, shift, shift)
        } else {
            Ok(merged)
        }
    }
}

/// Relative-position lookup indices for a `w x w` window: entry `(t, t')`
/// maps the offset `(dy, dx)` between the two tokens into the
/// `(2w-1) x (2w-1)` table.
pub fn relative_index(window: usize) -> Vec<usize> {
    let t = window * window;
    let span = 2 * window - 1;
    let mut index = Vec::with_capacity(t * t);
    for a in 0..t {
        let (ay, ax) = (a / window, a % window);
        for b in 0..t {
            let (by, bx) = (b / window, b % window);
            let dy = ay as i64 - by as i64 + window as i64 - 1;
            let dx = ax as i64 - bx as i64 + window as i64 - 1;
            index.push(dy as usize * span + dx as usize);
        }
    }
    index
}

/// Additive mask `[N*windows, T, T]` for shifted-window attention: 0 where a
/// token pair belongs to the same pre-shift region, a large negative value
/// where the cyclic shift wrapped them together.
pub fn shifted_window_mask(n: usize, h: usize, w: usize, win: usize, shift: usize) -> Tensor {
    const BLOCKED: f64 = -1e9;
    // Region ids on the rolled canvas, three bands per axis: rows/cols past
    // `len - shift` hold wrapped content, `[len - win, len - shift)` is the
    // genuine tail sharing windows with it, everything before is interior.
    let band = |coord: usize, len: usize| -> usize {
        if coord < len - win {
            0
        } else if coord < len - shift {
            1
        } else {
            2
        }
    };
    let region = |y: usize, x: usize| -> usize { band(y, h) * 3 + band(x, w) };
    let (gh, gw) = (h / win, w / win);
    let t = win * win;
    let mut mask = Tensor::zeros(&[n * gh * gw, t, t]);
    let md = mask.data_mut();
    for wy in 0..gh {
        for wx in 0..gw {
            let base = (wy * gw + wx) * t * t;
            for a in 0..t {
                let (ay, ax) = (wy * win + a / win, wx * win + a % win);
                for b in 0..t {
                    let (by, bx) = (wy * win + b / win, wx * win + b % win);
                    if region(ay, ax) != region(by, bx) {
                        md[base + a * t + b] = BLOCKED;
                    }
                }
            }
        }
    }
    // identical mask for every image in the batch
    for nb in 1..n {
        let (head, tail) = md.split_at_mut(nb * gh * gw * t * t);
        tail[..gh * gw * t * t].copy_from_slice(&head[..gh * gw * t * t]);
    }
    mask
}

/// Scaled dot-product attention on projected tokens, heads handled by
/// reshuffling into the batch axis. Returns the pre-output-projection mix,
/// which is a convex combination of value rows per head.
pub fn attention_core(tape: &mut Tape, q: VarId, k: VarId, v: VarId, heads: usize) -> Result<VarId> {
    attention_core_biased(tape, q, k, v, heads, None, None)
}

fn attention_core_biased(
    tape: &mut Tape,
    q: VarId,
    k: VarId,
    v: VarId,
    heads: usize,
    head_bias: Option<VarId>,
    window_mask: Option<VarId>,
) -> Result<VarId> {
    let head_dim = tape.value(q).shape()[2] / heads;
    let qh = tape.split_heads(q, heads)?;
    let kh = tape.split_heads(k, heads)?;
    let vh = tape.split_heads(v, heads)?;
    let scores = tape.bmm_nt(qh, kh)?;
    let mut scaled = tape.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
    if let Some(bias) = head_bias {
        scaled = tape.add_head_bias(scaled, bias)?;
    }
    if let Some(mask) = window_mask {
        scaled = tape.add_window_bias(scaled, mask)?;
    }
    let attn = tape.softmax(scaled, 2)?;
    let mixed = tape.bmm(attn, vh)?;
    tape.merge_heads(mixed, heads)
}
