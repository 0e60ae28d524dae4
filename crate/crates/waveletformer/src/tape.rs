//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every forward op appends one node holding its output value plus the
//! metadata its adjoint needs; `backward` walks the tape in reverse and
//! accumulates vector-Jacobian products into per-node gradient buffers.
//! Ops are pure: inputs are never mutated, so tensors can be shared freely.
//!
//! Every op validates that its output is finite and fails loudly otherwise.

use crate::error::{Result, WfnError};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;
use crate::wavelet::{self, WaveletFamily};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

/// Parameters of a 2D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation: 1,
            padding: kernel / 2,
            bias: true,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(WfnError::arg(format!("kernel extent must be odd and positive, got {}", self.kernel)));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(WfnError::arg("stride and dilation must be >= 1".to_string()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(WfnError::arg("channel counts must be positive".to_string()));
        }
        Ok(())
    }

    fn geom(&self) -> ConvGeom {
        ConvGeom {
            kernel: self.kernel,
            stride: self.stride,
            dilation: self.dilation,
            padding: self.padding,
        }
    }

    /// Effective receptive field per axis: `dilation*(kernel-1) + 1`.
    pub fn receptive_field(&self) -> usize {
        self.geom().receptive_field()
    }

    /// Output spatial extents, or an error when an extent collapses below 1.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let geom = self.geom();
        match (geom.out_extent(h), geom.out_extent(w)) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(WfnError::arg(format!(
                "conv output extent < 1 for input {h}x{w} with kernel {} stride {} dilation {} padding {}",
                self.kernel, self.stride, self.dilation, self.padding
            ))),
        }
    }

    /// Parameter count of this layer (weights plus optional bias).
    pub fn param_count(&self) -> usize {
        let w = self.out_channels * self.in_channels * self.kernel * self.kernel;
        w + if self.bias { self.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    Neg(VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    PowScalar(VarId, f64),
    ClampMin(VarId, f64),
    Abs(VarId),
    Sigmoid(VarId),
    Gelu(VarId),
    Relu(VarId),
    Linear { x: VarId, w: VarId, b: Option<VarId> },
    Bmm { a: VarId, b: VarId },
    BmmNt { a: VarId, b: VarId },
    Softmax { x: VarId, axis: usize },
    LayerNorm { x: VarId, gamma: VarId, beta: VarId, eps: f64 },
    Conv2d { x: VarId, w: VarId, b: Option<VarId>, geom: ConvGeom },
    ConvT2d { x: VarId, w: VarId, b: Option<VarId>, kernel: usize, stride: usize },
    Dwt2d { x: VarId, family: WaveletFamily },
    Idwt2d { x: VarId, family: WaveletFamily },
    WindowPartition { x: VarId, win: usize },
    WindowMerge { x: VarId, win: usize },
    SplitHeads { x: VarId, heads: usize },
    MergeHeads { x: VarId, heads: usize },
    ConcatCh(Vec<VarId>),
    MeanAll(VarId),
    SumAll(VarId),
    AvgPool2(VarId),
    BlurValid { x: VarId, kernel: Vec<f64>, kh: usize, kw: usize },
    Roll2d { x: VarId, dy: i64, dx: i64 },
    Transpose2d { x: VarId },
    Reshape { x: VarId },
    AddHeadBias { scores: VarId, bias: VarId },
    AddWindowBias { scores: VarId, bias: VarId },
    GatherRows { table: VarId, index: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Tensor>,
}

/// Wengert-style tape: forward methods record nodes, `backward` fills grads.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor (parameter or data) on the tape.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push_unchecked(value, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` root with respect to `id`, if any
    /// reached it.
    pub fn grad(&self, id: VarId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> VarId {
        self.nodes.push(Node { value, op, grad: None });
        VarId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<VarId> {
        value.check_finite(name)?;
        Ok(self.push_unchecked(value, op))
    }

    fn binary_value(&self, a: VarId, b: VarId, name: &str) -> Result<(&Tensor, &Tensor)> {
        let ta = self.value(a);
        let tb = self.value(b);
        if !ta.same_shape(tb) {
            return Err(WfnError::shape(format!(
                "{name}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok((ta, tb))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = self.binary_value(a, b, "add")?;
        let out = ta.zip(tb, |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = self.binary_value(a, b, "sub")?;
        let out = ta.zip(tb, |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = self.binary_value(a, b, "mul")?;
        let out = ta.zip(tb, |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = self.binary_value(a, b, "div")?;
        let out = ta.zip(tb, |x, y| x / y)?;
        self.push(out, Op::Div(a, b), "div")
    }

    pub fn neg(&mut self, x: VarId) -> Result<VarId> {
        let out = self.value(x).map(|v| -v);
        self.push(out, Op::Neg(x), "neg")
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> Result<VarId> {
        let out = self.value(x).map(|v| c * v);
        self.push(out, Op::Scale(x, c), "scale")
    }

    pub fn add_scalar(&mut self, x: VarId, c: f64) -> Result<VarId> {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x), "add_scalar")
    }

    /// Elementwise power with a fixed exponent; the base must stay strictly
    /// positive so the derivative is defined.
    pub fn pow_scalar(&mut self, x: VarId, p: f64) -> Result<VarId> {
        let tx = self.value(x);
        if tx.data().iter().any(|&v| v <= 0.0) {
            return Err(WfnError::arg("pow_scalar requires a strictly positive base".to_string()));
        }
        let out = tx.map(|v| v.powf(p));
        self.push(out, Op::PowScalar(x, p), "pow_scalar")
    }

    pub fn clamp_min(&mut self, x: VarId, c: f64) -> Result<VarId> {
        let out = self.value(x).map(|v| v.max(c));
        self.push(out, Op::ClampMin(x, c), "clamp_min")
    }

    pub fn abs(&mut self, x: VarId) -> Result<VarId> {
        let out = self.value(x).map(f64::abs);
        self.push(out, Op::Abs(x), "abs")
    }

    pub fn sigmoid(&mut self, x: VarId) -> Result<VarId> {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    pub fn gelu(&mut self, x: VarId) -> Result<VarId> {
        let out = self.value(x).map(gelu_fwd);
        self.push(out, Op::Gelu(x), "gelu")
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), "relu")
    }

    // ---- linear algebra --------------------------------------------------

    /// `x [.., K] @ w [K, N] (+ b [N])`, flattening all leading axes of `x`.
    pub fn linear(&mut self, x: VarId, w: VarId, b: Option<VarId>) -> Result<VarId> {
        let tx = self.value(x);
        let tw = self.value(w);
        let (xs, ws) = (tx.shape(), tw.shape());
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return Err(WfnError::shape(format!("linear: x {xs:?} @ w {ws:?}")));
        }
        let (k, n) = (ws[0], ws[1]);
        let rows = tx.numel() / k;
        if let Some(bid) = b {
            let bs = self.value(bid).shape();
            if bs != [n] {
                return Err(WfnError::shape(format!("linear bias {bs:?}, expected [{n}]")));
            }
        }
        let tx = self.value(x);
        let tw = self.value(w);
        let mut out = vec![0.0; rows * n];
        matmul(tx.data(), tw.data(), &mut out, rows, k, n);
        if let Some(bid) = b {
            let bias = self.value(bid).data();
            for r in 0..rows {
                for (j, bv) in bias.iter().enumerate() {
                    out[r * n + j] += bv;
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::Linear { x, w, b }, "linear")
    }

    /// Batched `a [B,M,K] @ b [B,K,N] -> [B,M,N]`.
    pub fn bmm(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(WfnError::shape(format!("bmm: {sa:?} @ {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            matmul(
                &self.value(a).data()[i * m * k..][..m * k],
                &self.value(b).data()[i * k * n..][..k * n],
                &mut out[i * m * n..][..m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new(vec![bs, m, n], out)?;
        self.push(out, Op::Bmm { a, b }, "bmm")
    }

    /// Batched `a [B,M,K] @ b[B,N,K]^T -> [B,M,N]` (attention scores).
    pub fn bmm_nt(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(WfnError::shape(format!("bmm_nt: {sa:?} @ {sb:?}^T")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            matmul_nt(
                &self.value(a).data()[i * m * k..][..m * k],
                &self.value(b).data()[i * n * k..][..n * k],
                &mut out[i * m * n..][..m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new(vec![bs, m, n], out)?;
        self.push(out, Op::BmmNt { a, b }, "bmm_nt")
    }

    // ---- normalization and softmax ----------------------------------------

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: VarId, axis: usize) -> Result<VarId> {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        if axis >= shape.len() {
            return Err(WfnError::arg(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let mut out = tx.data().to_vec();
        for_each_lane(&shape, axis, |start, stride, len| {
            let mut max = f64::NEG_INFINITY;
            for i in 0..len {
                max = max.max(out[start + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..len {
                let e = (out[start + i * stride] - max).exp();
                out[start + i * stride] = e;
                sum += e;
            }
            for i in 0..len {
                out[start + i * stride] /= sum;
            }
        });
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::Softmax { x, axis }, "softmax")
    }

    /// Layer normalization across axis 1 (the channel axis) for every
    /// `(batch, spatial...)` position, with per-channel affine parameters.
    pub fn layer_norm(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: f64) -> Result<VarId> {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        if shape.len() < 2 {
            return Err(WfnError::shape(format!("layer_norm needs rank >= 2, got {shape:?}")));
        }
        let ch = shape[1];
        if self.value(gamma).shape() != [ch] || self.value(beta).shape() != [ch] {
            return Err(WfnError::shape(format!(
                "layer_norm affine params must be [{ch}], got {:?} and {:?}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let inner: usize = shape[2..].iter().product();
        let outer = shape[0];
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for pos in 0..inner {
                let base = o * ch * inner + pos;
                let (mean, var) = lane_moments(xd, base, inner, ch);
                let inv = 1.0 / (var + eps).sqrt();
                for c in 0..ch {
                    let idx = base + c * inner;
                    out[idx] = g[c] * (xd[idx] - mean) * inv + b[c];
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::LayerNorm { x, gamma, beta, eps }, "layer_norm")
    }

    // ---- convolution ------------------------------------------------------

    /// 2D cross-correlation with dilation and zero padding, per `spec`.
    pub fn conv2d(&mut self, x: VarId, w: VarId, b: Option<VarId>, spec: &ConvSpec) -> Result<VarId> {
        spec.validate()?;
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || xs[1] != spec.in_channels {
            return Err(WfnError::shape(format!(
                "conv2d input {xs:?} does not match spec in_channels {}",
                spec.in_channels
            )));
        }
        if ws != [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel] {
            return Err(WfnError::shape(format!(
                "conv2d weights {ws:?}, spec wants [{}, {}, {}, {}]",
                spec.out_channels, spec.in_channels, spec.kernel, spec.kernel
            )));
        }
        match (b.is_some(), spec.bias) {
            (true, false) => return Err(WfnError::arg("bias tensor given but spec.bias = false".to_string())),
            (false, true) => return Err(WfnError::arg("spec.bias = true but no bias tensor".to_string())),
            _ => {}
        }
        if let Some(bid) = b {
            if self.value(bid).shape() != [spec.out_channels] {
                return Err(WfnError::shape(format!(
                    "conv2d bias {:?}, expected [{}]",
                    self.value(bid).shape(),
                    spec.out_channels
                )));
            }
        }
        let (nb, _, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = spec.out_hw(h, wd)?;
        let geom = spec.geom();
        let bias = b.map(|bid| self.value(bid).data().to_vec());
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            (nb, spec.in_channels, h, wd),
            self.value(w).data(),
            spec.out_channels,
            bias.as_deref(),
            geom,
            (ho, wo),
        );
        let out = Tensor::new(vec![nb, spec.out_channels, ho, wo], out)?;
        self.push(out, Op::Conv2d { x, w, b, geom }, "conv2d")
    }

    /// Transposed convolution (zero padding, `out = (in-1)*stride + kernel`),
    /// weights `[Cin, Cout, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        kernel: usize,
        stride: usize,
    ) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != kernel || ws[3] != kernel {
            return Err(WfnError::shape(format!("conv_transpose2d: x {xs:?}, w {ws:?}")));
        }
        let (nb, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[1];
        let (ho, wo) = ((h - 1) * stride + kernel, (wd - 1) * stride + kernel);
        let bias = b.map(|bid| self.value(bid).data().to_vec());
        let out = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            (nb, cin, h, wd),
            self.value(w).data(),
            cout,
            bias.as_deref(),
            kernel,
            stride,
            (ho, wo),
        );
        let out = Tensor::new(vec![nb, cout, ho, wo], out)?;
        self.push(out, Op::ConvT2d { x, w, b, kernel, stride }, "conv_transpose2d")
    }

    /// Depthwise "valid" correlation with a fixed `kh x kw` kernel shared by
    /// all channels; the kernel itself gets no gradient.
    pub fn blur_valid_rect(&mut self, x: VarId, kernel: &[f64], kh: usize, kw: usize) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        if kernel.len() != kh * kw {
            return Err(WfnError::arg(format!(
                "kernel length {} does not match {kh}x{kw}",
                kernel.len()
            )));
        }
        if xs.len() != 4 || xs[2] < kh || xs[3] < kw {
            return Err(WfnError::shape(format!("blur_valid_rect: input {xs:?} too small for {kh}x{kw} window")));
        }
        let (nb, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let out = kernels::depthwise_valid_forward(self.value(x).data(), (nb * c, h, w), kernel, (kh, kw));
        let out = Tensor::new(vec![nb, c, h - kh + 1, w - kw + 1], out)?;
        self.push(out, Op::BlurValid { x, kernel: kernel.to_vec(), kh, kw }, "blur_valid_rect")
    }

    pub fn avg_pool2(&mut self, x: VarId) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0 {
            return Err(WfnError::shape(format!("avg_pool2 needs even [N,C,H,W], got {xs:?}")));
        }
        let (nb, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let out = kernels::avg_pool2_forward(self.value(x).data(), (nb * c, h, w));
        let out = Tensor::new(vec![nb, c, h / 2, w / 2], out)?;
        self.push(out, Op::AvgPool2(x), "avg_pool2")
    }

    // ---- wavelet ----------------------------------------------------------

    /// Stacked-subband DWT: `[N,C,H,W] -> [N,4C,H/2,W/2]` in (LL,LH,HL,HH)
    /// channel order. Its adjoint is the synthesis bank.
    pub fn dwt2d(&mut self, x: VarId, family: WaveletFamily) -> Result<VarId> {
        let out = wavelet::dwt2d_stacked(self.value(x), family)?;
        self.push(out, Op::Dwt2d { x, family }, "dwt2d")
    }

    /// Stacked-subband IDWT: `[N,4C,H,W] -> [N,C,2H,2W]`.
    pub fn idwt2d(&mut self, x: VarId, family: WaveletFamily) -> Result<VarId> {
        let out = wavelet::idwt2d_stacked(self.value(x), family)?;
        self.push(out, Op::Idwt2d { x, family }, "idwt2d")
    }

    // ---- rearrangements ----------------------------------------------------

    /// `[N,C,H,W] -> [N*(H/w)*(W/w), w*w, C]`, tokens in raster order.
    pub fn window_partition(&mut self, x: VarId, win: usize) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[2] % win != 0 || xs[3] % win != 0 {
            return Err(WfnError::shape(format!(
                "window_partition: {xs:?} not divisible by window {win}"
            )));
        }
        let out = partition_forward(self.value(x), win);
        self.push(out, Op::WindowPartition { x, win }, "window_partition")
    }

    /// Inverse of [`Tape::window_partition`] for the given image geometry.
    pub fn window_merge(&mut self, x: VarId, nchw: [usize; 4], win: usize) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        let [n, c, h, w] = nchw;
        let wins = n * (h / win) * (w / win);
        if xs.len() != 3 || xs[0] != wins || xs[1] != win * win || xs[2] != c {
            return Err(WfnError::shape(format!(
                "window_merge: tokens {xs:?} do not fit image {nchw:?} with window {win}"
            )));
        }
        let out = merge_forward(self.value(x), nchw, win);
        self.push(out, Op::WindowMerge { x, win }, "window_merge")
    }

    /// `[B, T, heads*dim] -> [B*heads, T, dim]`.
    pub fn split_heads(&mut self, x: VarId, heads: usize) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || xs[2] % heads != 0 {
            return Err(WfnError::shape(format!("split_heads: {xs:?} not divisible by {heads} heads")));
        }
        let out = split_heads_forward(self.value(x), heads);
        self.push(out, Op::SplitHeads { x, heads }, "split_heads")
    }

    /// `[B*heads, T, dim] -> [B, T, heads*dim]`.
    pub fn merge_heads(&mut self, x: VarId, heads: usize) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || xs[0] % heads != 0 {
            return Err(WfnError::shape(format!("merge_heads: {xs:?} batch not divisible by {heads}")));
        }
        let out = merge_heads_forward(self.value(x), heads);
        self.push(out, Op::MergeHeads { x, heads }, "merge_heads")
    }

    /// Concatenates `[N,C_i,H,W]` tensors along the channel axis.
    pub fn concat_ch(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(WfnError::arg("concat_ch of zero tensors".to_string()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if first.len() != 4 {
            return Err(WfnError::shape(format!("concat_ch expects 4D, got {first:?}")));
        }
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut c_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(WfnError::shape(format!("concat_ch mismatch: {first:?} vs {s:?}")));
            }
            c_total += s[1];
        }
        let plane = h * w;
        let mut out = vec![0.0; n * c_total * plane];
        for nb in 0..n {
            let mut c_off = 0;
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                let src = &t.data()[nb * c * plane..][..c * plane];
                out[(nb * c_total + c_off) * plane..][..c * plane].copy_from_slice(src);
                c_off += c;
            }
        }
        let out = Tensor::new(vec![n, c_total, h, w], out)?;
        self.push(out, Op::ConcatCh(parts.to_vec()), "concat_ch")
    }

    /// Cyclic shift of an `[N,C,H,W]` map: output pixel `(y,x)` reads input
    /// `(y - dy, x - dx)` modulo the extents.
    pub fn roll2d(&mut self, x: VarId, dy: i64, dx: i64) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(WfnError::shape(format!("roll2d expects [N,C,H,W], got {xs:?}")));
        }
        let out = roll_forward(self.value(x), dy, dx);
        self.push(out, Op::Roll2d { x, dy, dx }, "roll2d")
    }

    /// `scores [W*K, T, T] + bias [K, T, T]`, bias tiled over the leading
    /// window groups (per-head relative position bias).
    pub fn add_head_bias(&mut self, scores: VarId, bias: VarId) -> Result<VarId> {
        let ss = self.value(scores).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if ss.len() != 3 || bs.len() != 3 || ss[0] % bs[0] != 0 || ss[1..] != bs[1..] {
            return Err(WfnError::shape(format!("add_head_bias: scores {ss:?}, bias {bs:?}")));
        }
        let out = tiled_bias_add(self.value(scores), self.value(bias), true);
        self.push(out, Op::AddHeadBias { scores, bias }, "add_head_bias")
    }

    /// `scores [W*heads, T, T] + bias [W, T, T]`, one bias per window shared
    /// across heads (shifted-window attention mask).
    pub fn add_window_bias(&mut self, scores: VarId, bias: VarId) -> Result<VarId> {
        let ss = self.value(scores).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if ss.len() != 3 || bs.len() != 3 || ss[0] % bs[0] != 0 || ss[1..] != bs[1..] {
            return Err(WfnError::shape(format!("add_window_bias: scores {ss:?}, bias {bs:?}")));
        }
        let out = tiled_bias_add(self.value(scores), self.value(bias), false);
        self.push(out, Op::AddWindowBias { scores, bias }, "add_window_bias")
    }

    /// `[A, B] -> [B, A]`.
    pub fn transpose2d(&mut self, x: VarId) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(WfnError::shape(format!("transpose2d expects 2D, got {xs:?}")));
        }
        let out = transpose_forward(self.value(x));
        self.push(out, Op::Transpose2d { x }, "transpose2d")
    }

    /// Same buffer under a new shape of equal volume.
    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape { x }, "reshape")
    }

    /// Row gather: `table [R, C]` and an index list produce
    /// `[index.len(), C]`; the adjoint scatter-adds back into the table.
    pub fn gather_rows(&mut self, table: VarId, index: &[usize]) -> Result<VarId> {
        let ts = self.value(table).shape().to_vec();
        if ts.len() != 2 {
            return Err(WfnError::shape(format!("gather_rows expects a 2D table, got {ts:?}")));
        }
        let (rows, cols) = (ts[0], ts[1]);
        if index.iter().any(|&i| i >= rows) {
            return Err(WfnError::arg(format!("gather index out of range for {rows} rows")));
        }
        let td = self.value(table).data();
        let mut out = vec![0.0; index.len() * cols];
        for (r, &src) in index.iter().enumerate() {
            out[r * cols..][..cols].copy_from_slice(&td[src * cols..][..cols]);
        }
        let out = Tensor::new(vec![index.len(), cols], out)?;
        self.push(out, Op::GatherRows { table, index: index.to_vec() }, "gather_rows")
    }

    // ---- reductions --------------------------------------------------------

    pub fn mean_all(&mut self, x: VarId) -> Result<VarId> {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(out, Op::MeanAll(x), "mean_all")
    }

    pub fn sum_all(&mut self, x: VarId) -> Result<VarId> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x), "sum_all")
    }

    // ---- reverse pass --------------------------------------------------------

    /// Accumulates gradients of the scalar `root` into every reachable node.
    pub fn backward(&mut self, root: VarId) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(WfnError::arg(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.accumulate_parents(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn accumulate_parents(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let give = |id: VarId, contrib: Tensor, grads: &mut [Option<Tensor>]| {
            match &mut grads[id.0] {
                Some(acc) => acc.axpy(1.0, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                give(*a, g.clone(), grads);
                give(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                give(*a, g.clone(), grads);
                give(*b, g.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                give(*a, g.zip(self.value(*b), |gv, bv| gv * bv)?, grads);
                give(*b, g.zip(self.value(*a), |gv, av| gv * av)?, grads);
            }
            Op::Div(a, b) => {
                let tb = self.value(*b);
                give(*a, g.zip(tb, |gv, bv| gv / bv)?, grads);
                let ta = self.value(*a);
                let mut db = g.zip(ta, |gv, av| gv * av)?;
                for (d, bv) in db.data_mut().iter_mut().zip(tb.data()) {
                    *d = -*d / (bv * bv);
                }
                give(*b, db, grads);
            }
            Op::Neg(x) => give(*x, g.map(|v| -v), grads),
            Op::Scale(x, c) => give(*x, g.map(|v| c * v), grads),
            Op::AddScalar(x) => give(*x, g.clone(), grads),
            Op::PowScalar(x, p) => {
                let tx = self.value(*x);
                give(*x, g.zip(tx, |gv, xv| gv * p * xv.powf(p - 1.0))?, grads);
            }
            Op::ClampMin(x, c) => {
                let tx = self.value(*x);
                give(*x, g.zip(tx, |gv, xv| if xv > *c { gv } else { 0.0 })?, grads);
            }
            Op::Abs(x) => {
                let tx = self.value(*x);
                give(*x, g.zip(tx, |gv, xv| gv * sign(xv))?, grads);
            }
            Op::Sigmoid(x) => {
                let s = &self.nodes[i].value;
                give(*x, g.zip(s, |gv, sv| gv * sv * (1.0 - sv))?, grads);
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                give(*x, g.zip(tx, |gv, xv| gv * gelu_grad(xv))?, grads);
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                give(*x, g.zip(tx, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?, grads);
            }
            Op::Linear { x, w, b } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let (k, n) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.numel() / k;
                // dx = g @ w^T
                let mut dx = vec![0.0; rows * k];
                matmul_nt(g.data(), tw.data(), &mut dx, rows, n, k);
                give(*x, Tensor::new(tx.shape().to_vec(), dx)?, grads);
                // dw = x^T @ g
                let mut dw = vec![0.0; k * n];
                matmul_tn(tx.data(), g.data(), &mut dw, rows, k, n);
                give(*w, Tensor::new(vec![k, n], dw)?, grads);
                if let Some(bid) = b {
                    let mut db = vec![0.0; n];
                    for r in 0..rows {
                        for (j, d) in db.iter_mut().enumerate() {
                            *d += g.data()[r * n + j];
                        }
                    }
                    give(*bid, Tensor::new(vec![n], db)?, grads);
                }
            }
            Op::Bmm { a, b } => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[2];
                let mut da = vec![0.0; ta.numel()];
                let mut db = vec![0.0; tb.numel()];
                for ib in 0..bs {
                    // da = g @ b^T ; db = a^T @ g
                    matmul_nt(
                        &g.data()[ib * m * n..][..m * n],
                        &tb.data()[ib * k * n..][..k * n],
                        &mut da[ib * m * k..][..m * k],
                        m,
                        n,
                        k,
                    );
                    matmul_tn(
                        &ta.data()[ib * m * k..][..m * k],
                        &g.data()[ib * m * n..][..m * n],
                        &mut db[ib * k * n..][..k * n],
                        m,
                        k,
                        n,
                    );
                }
                give(*a, Tensor::new(ta.shape().to_vec(), da)?, grads);
                give(*b, Tensor::new(tb.shape().to_vec(), db)?, grads);
            }
            Op::BmmNt { a, b } => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[1];
                let mut da = vec![0.0; ta.numel()];
                let mut db = vec![0.0; tb.numel()];
                for ib in 0..bs {
                    // out = a @ b^T; da = g @ b ; db = g^T @ a
                    matmul(
                        &g.data()[ib * m * n..][..m * n],
                        &tb.data()[ib * n * k..][..n * k],
                        &mut da[ib * m * k..][..m * k],
                        m,
                        n,
                        k,
                    );
                    matmul_tn(
                        &g.data()[ib * m * n..][..m * n],
                        &ta.data()[ib * m * k..][..m * k],
                        &mut db[ib * n * k..][..n * k],
                        m,
                        n,
                        k,
                    );
                }
                give(*a, Tensor::new(ta.shape().to_vec(), da)?, grads);
                give(*b, Tensor::new(tb.shape().to_vec(), db)?, grads);
            }
            Op::Softmax { x, axis } => {
                let s = &self.nodes[i].value;
                let shape = s.shape().to_vec();
                let mut dx = g.data().to_vec();
                let sd = s.data();
                for_each_lane(&shape, *axis, |start, stride, len| {
                    let mut dot = 0.0;
                    for t in 0..len {
                        dot += dx[start + t * stride] * sd[start + t * stride];
                    }
                    for t in 0..len {
                        let idx = start + t * stride;
                        dx[idx] = sd[idx] * (dx[idx] - dot);
                    }
                });
                give(*x, Tensor::new(shape, dx)?, grads);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let shape = tx.shape().to_vec();
                let ch = shape[1];
                let inner: usize = shape[2..].iter().product();
                let outer = shape[0];
                let xd = tx.data();
                let gd = g.data();
                let gam = tg.data();
                let mut dx = vec![0.0; xd.len()];
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for o in 0..outer {
                    for pos in 0..inner {
                        let base = o * ch * inner + pos;
                        let (mean, var) = lane_moments(xd, base, inner, ch);
                        let inv = 1.0 / (var + eps).sqrt();
                        let mut mean_h = 0.0;
                        let mut mean_hx = 0.0;
                        for c in 0..ch {
                            let idx = base + c * inner;
                            let xhat = (xd[idx] - mean) * inv;
                            let h = gam[c] * gd[idx];
                            mean_h += h;
                            mean_hx += h * xhat;
                            dgamma[c] += gd[idx] * xhat;
                            dbeta[c] += gd[idx];
                        }
                        mean_h /= ch as f64;
                        mean_hx /= ch as f64;
                        for c in 0..ch {
                            let idx = base + c * inner;
                            let xhat = (xd[idx] - mean) * inv;
                            dx[idx] = (gam[c] * gd[idx] - mean_h - xhat * mean_hx) * inv;
                        }
                    }
                }
                give(*x, Tensor::new(shape, dx)?, grads);
                give(*gamma, Tensor::new(vec![ch], dgamma)?, grads);
                give(*beta, Tensor::new(vec![ch], dbeta)?, grads);
            }
            Op::Conv2d { x, w, b, geom } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let xs = tx.shape();
                let (nb, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = tw.shape()[0];
                let gs = g.shape();
                let (ho, wo) = (gs[2], gs[3]);
                let dx = kernels::conv2d_backward_x(g.data(), (nb, cin, h, wd), tw.data(), cout, *geom, (ho, wo));
                give(*x, Tensor::new(xs.to_vec(), dx)?, grads);
                let dw = kernels::conv2d_backward_w(tx.data(), (nb, cin, h, wd), g.data(), cout, *geom, (ho, wo));
                give(*w, Tensor::new(tw.shape().to_vec(), dw)?, grads);
                if let Some(bid) = b {
                    let db = kernels::conv2d_backward_bias(g.data(), nb, cout, ho * wo);
                    give(*bid, Tensor::new(vec![cout], db)?, grads);
                }
            }
            Op::ConvT2d { x, w, b, kernel, stride } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let xs = tx.shape();
                let (nb, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = tw.shape()[1];
                let gs = g.shape();
                let (ho, wo) = (gs[2], gs[3]);
                let dx = kernels::conv_transpose2d_backward_x(
                    g.data(), (nb, cin, h, wd), tw.data(), cout, *kernel, *stride, (ho, wo),
                );
                give(*x, Tensor::new(xs.to_vec(), dx)?, grads);
                let dw = kernels::conv_transpose2d_backward_w(
                    tx.data(), (nb, cin, h, wd), g.data(), cout, *kernel, *stride, (ho, wo),
                );
                give(*w, Tensor::new(tw.shape().to_vec(), dw)?, grads);
                if let Some(bid) = b {
                    let db = kernels::conv2d_backward_bias(g.data(), nb, cout, ho * wo);
                    give(*bid, Tensor::new(vec![cout], db)?, grads);
                }
            }
            // The transform is orthogonal, so analysis and synthesis are each
            // other's adjoints.
            Op::Dwt2d { x, family } => {
                give(*x, wavelet::idwt2d_stacked(g, *family)?, grads);
            }
            Op::Idwt2d { x, family } => {
                give(*x, wavelet::dwt2d_stacked(g, *family)?, grads);
            }
            Op::WindowPartition { x, win } => {
                let xs = self.value(*x).shape();
                let nchw = [xs[0], xs[1], xs[2], xs[3]];
                give(*x, merge_forward(g, nchw, *win), grads);
            }
            Op::WindowMerge { x, win } => {
                give(*x, partition_forward(g, *win), grads);
            }
            Op::SplitHeads { x, heads } => {
                give(*x, merge_heads_forward(g, *heads), grads);
            }
            Op::MergeHeads { x, heads } => {
                give(*x, split_heads_forward(g, *heads), grads);
            }
            Op::ConcatCh(parts) => {
                let gs = g.shape();
                let (n, c_total, h, w) = (gs[0], gs[1], gs[2], gs[3]);
                let plane = h * w;
                let mut c_off = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    let mut dp = Tensor::zeros(&[n, c, h, w]);
                    for nb in 0..n {
                        let src = &g.data()[(nb * c_total + c_off) * plane..][..c * plane];
                        dp.data_mut()[nb * c * plane..][..c * plane].copy_from_slice(src);
                    }
                    give(p, dp, grads);
                    c_off += c;
                }
            }
            Op::MeanAll(x) => {
                let tx = self.value(*x);
                let gv = g.item() / tx.numel() as f64;
                give(*x, Tensor::full(tx.shape(), gv), grads);
            }
            Op::SumAll(x) => {
                let tx = self.value(*x);
                give(*x, Tensor::full(tx.shape(), g.item()), grads);
            }
            Op::AvgPool2(x) => {
                let xs = self.value(*x).shape();
                let (nb, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let dx = kernels::avg_pool2_backward(g.data(), (nb * c, h, w));
                give(*x, Tensor::new(xs.to_vec(), dx)?, grads);
            }
            Op::BlurValid { x, kernel, kh, kw } => {
                let xs = self.value(*x).shape();
                let (nb, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let dx = kernels::depthwise_valid_backward(g.data(), (nb * c, h, w), kernel, (*kh, *kw));
                give(*x, Tensor::new(xs.to_vec(), dx)?, grads);
            }
            Op::Roll2d { x, dy, dx } => {
                give(*x, roll_forward(g, -dy, -dx), grads);
            }
            Op::Transpose2d { x } => {
                give(*x, transpose_forward(g), grads);
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                give(*x, g.clone().reshape(shape)?, grads);
            }
            Op::AddHeadBias { scores, bias } => {
                give(*scores, g.clone(), grads);
                give(*bias, tiled_bias_reduce(g, self.value(*bias).shape()[0], true), grads);
            }
            Op::AddWindowBias { scores, bias } => {
                give(*scores, g.clone(), grads);
                give(*bias, tiled_bias_reduce(g, self.value(*bias).shape()[0], false), grads);
            }
            Op::GatherRows { table, index } => {
                let ts = self.value(*table).shape();
                let cols = ts[1];
                let mut dt = Tensor::zeros(ts);
                for (r, &src) in index.iter().enumerate() {
                    let grow = &g.data()[r * cols..][..cols];
                    let drow = &mut dt.data_mut()[src * cols..][..cols];
                    for (d, gv) in drow.iter_mut().zip(grow.iter()) {
                        *d += gv;
                    }
                }
                give(*table, dt, grads);
            }
        }
        Ok(())
    }
}

fn transpose_forward(x: &Tensor) -> Tensor {
    let (a, b) = (x.shape()[0], x.shape()[1]);
    let mut out = Tensor::zeros(&[b, a]);
    let xd = x.data();
    let od = out.data_mut();
    for i in 0..a {
        for j in 0..b {
            od[j * a + i] = xd[i * b + j];
        }
    }
    out
}

/// Cyclic 2D shift of an NCHW tensor.
fn roll_forward(x: &Tensor, dy: i64, dx: i64) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let shift = |v: i64, len: usize| -> usize { (v.rem_euclid(len as i64)) as usize };
    let (sy, sx) = (shift(dy, h), shift(dx, w));
    if sy == 0 && sx == 0 {
        return x.clone();
    }
    let mut out = Tensor::zeros(s);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let src_plane = &xd[p * h * w..][..h * w];
        let dst_plane = &mut od[p * h * w..][..h * w];
        for y in 0..h {
            let src_y = (y + h - sy) % h;
            for x_i in 0..w {
                let src_x = (x_i + w - sx) % w;
                dst_plane[y * w + x_i] = src_plane[src_y * w + src_x];
            }
        }
    }
    out
}

/// `scores [G*K or K*G, T, T] + tiled bias`. `inner` selects whether the bias
/// index is the inner (`scores` laid out window-major, bias per head) or the
/// outer factor (bias per window, shared across heads).
fn tiled_bias_add(scores: &Tensor, bias: &Tensor, inner: bool) -> Tensor {
    let tt = scores.shape()[1] * scores.shape()[2];
    let k = bias.shape()[0];
    let total = scores.shape()[0];
    let groups = total / k;
    let mut out = scores.clone();
    let od = out.data_mut();
    let bd = bias.data();
    for b in 0..total {
        let which = if inner { b % k } else { b / groups };
        let dst = &mut od[b * tt..][..tt];
        let src = &bd[which * tt..][..tt];
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d += s;
        }
    }
    out
}

/// Adjoint of [`tiled_bias_add`]: sum the gradient over the tiled axis.
fn tiled_bias_reduce(g: &Tensor, k: usize, inner: bool) -> Tensor {
    let tt = g.shape()[1] * g.shape()[2];
    let total = g.shape()[0];
    let groups = total / k;
    let mut out = Tensor::zeros(&[k, g.shape()[1], g.shape()[2]]);
    let od = out.data_mut();
    let gd = g.data();
    for b in 0..total {
        let which = if inner { b % k } else { b / groups };
        let dst = &mut od[which * tt..][..tt];
        let src = &gd[b * tt..][..tt];
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d += s;
        }
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// tanh-form GELU; smooth everywhere, which keeps finite-difference checks clean.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `out[m,n] = sum_k a[m,k] b[k,n]` (accumulating into zeroed `out`).
fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..][..k];
        let out_row = &mut out[i * n..][..n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..][..n];
            for (o, bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] = sum_k a[m,k] b[n,k]` (`b` transposed).
fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..][..k];
        let out_row = &mut out[i * n..][..n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..][..k];
            let mut acc = 0.0;
            for (av, bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// `out[k,n] = sum_m a[m,k] b[m,n]` (`a` transposed).
fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..][..k];
        let b_row = &b[i * n..][..n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[kk * n..][..n];
            for (o, bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Visits every 1D lane along `axis`, calling `f(start, stride, len)`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * len * inner + i, inner, len);
        }
    }
}

/// Mean and biased variance of one channel lane starting at `base` with
/// elements spaced `inner` apart.
fn lane_moments(data: &[f64], base: usize, inner: usize, ch: usize) -> (f64, f64) {
    let mut mean = 0.0;
    for c in 0..ch {
        mean += data[base + c * inner];
    }
    mean /= ch as f64;
    let mut var = 0.0;
    for c in 0..ch {
        let d = data[base + c * inner] - mean;
        var += d * d;
    }
    (mean, var / ch as f64)
}

pub(crate) fn partition_forward(x: &Tensor, win: usize) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (gh, gw) = (h / win, w / win);
    let t = win * win;
    let mut out = vec![0.0; n * gh * gw * t * c];
    let xd = x.data();
    for nb in 0..n {
        for wy in 0..gh {
            for wx in 0..gw {
                let b = (nb * gh + wy) * gw + wx;
                for ty in 0..win {
                    let iy = wy * win + ty;
                    for tx in 0..win {
                        let ix = wx * win + tx;
                        let tok = ty * win + tx;
                        let dst = (b * t + tok) * c;
                        for ch in 0..c {
                            out[dst + ch] = xd[((nb * c + ch) * h + iy) * w + ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n * gh * gw, t, c], out).expect("partition shape")
}

pub(crate) fn merge_forward(tokens: &Tensor, nchw: [usize; 4], win: usize) -> Tensor {
    let [n, c, h, w] = nchw;
    let (gh, gw) = (h / win, w / win);
    let t = win * win;
    let mut out = vec![0.0; n * c * h * w];
    let td = tokens.data();
    for nb in 0..n {
        for wy in 0..gh {
            for wx in 0..gw {
                let b = (nb * gh + wy) * gw + wx;
                for ty in 0..win {
                    let iy = wy * win + ty;
                    for tx in 0..win {
                        let ix = wx * win + tx;
                        let tok = ty * win + tx;
                        let src = (b * t + tok) * c;
                        for ch in 0..c {
                            out[((nb * c + ch) * h + iy) * w + ix] = td[src + ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out).expect("merge shape")
}

fn split_heads_forward(x: &Tensor, heads: usize) -> Tensor {
    let s = x.shape();
    let (b, t, c) = (s[0], s[1], s[2]);
    let d = c / heads;
    let mut out = vec![0.0; b * t * c];
    let xd = x.data();
    for ib in 0..b {
        for hd in 0..heads {
            for it in 0..t {
                let dst = (((ib * heads + hd) * t) + it) * d;
                let src = (ib * t + it) * c + hd * d;
                out[dst..dst + d].copy_from_slice(&xd[src..src + d]);
            }
        }
    }
    Tensor::new(vec![b * heads, t, d], out).expect("split_heads shape")
}

fn merge_heads_forward(x: &Tensor, heads: usize) -> Tensor {
    let s = x.shape();
    let (bh, t, d) = (s[0], s[1], s[2]);
    let b = bh / heads;
    let c = heads * d;
    let mut out = vec![0.0; b * t * c];
    let xd = x.data();
    for ib in 0..b {
        for hd in 0..heads {
            for it in 0..t {
                let src = (((ib * heads + hd) * t) + it) * d;
                let dst = (ib * t + it) * c + hd * d;
                out[dst..dst + d].copy_from_slice(&xd[src..src + d]);
            }
        }
    }
    Tensor::new(vec![b, t, c], out).expect("merge_heads shape")
}
