use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::objectives::rho as pinball;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    Depthwise { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    Pointwise { input: Var, weight: Var, bias: Var, n: usize, c: usize, k: usize, p: usize },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample2 { input: Var, nc: usize, h: usize, w: usize },
    Concat { a: Var, b: Var, n: usize, ca: usize, cb: usize, p: usize },
    SelectChannels { input: Var, channels: Vec<usize>, c: usize, p: usize },
    LeakyRelu { input: Var, slope: T },
    Sigmoid { input: Var },
    Add { a: Var, b: Var },
    MulBroadcast { a: Var, b: Var, adims: [usize; 4], bdims: [usize; 4] },
    Square { input: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
    GlobalAvgPool { input: Var, p: usize },
    ChannelMeanMax { input: Var, argmax: Vec<u32>, c: usize, p: usize },
    Pinball { target: Var, pred: Var, q: f64 },
    MultiQuantile { target: Var, pred: Var, levels: Vec<f64>, weights: Vec<f64>, dims: [usize; 4] },
    Mse { target: Var, pred: Var, batch: usize },
    Mae { target: Var, pred: Var, batch: usize },
}

#[derive(Clone, Debug)]
struct Node<T: Real> {
    tensor: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of tensor operations. Every node's inputs precede it,
/// so a reverse sweep over the node list is a valid backward order.
///
/// Calling [`Tape::backward`] twice without [`Tape::zero_grad`] adds the
/// second set of gradients onto the first.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Derivative of the pinball loss with respect to the prediction. At zero
/// error the right-derivative in `e` is used, giving `-q`.
#[inline]
fn pinball_dpred(e: f64, q: f64) -> f64 {
    if e >= 0.0 {
        -q
    } else {
        1.0 - q
    }
}


fn take_buf<T: Real>(grads: &mut [Option<Vec<T>>], id: Var, len: usize) -> Vec<T> {
    grads[id.0].take().unwrap_or_else(|| vec![T::zero(); len])
}

fn put_buf<T: Real>(grads: &mut [Option<Vec<T>>], id: Var, buf: Vec<T>) {
    match grads[id.0].take() {
        Some(mut existing) => {
            for (a, b) in existing.iter_mut().zip(buf) {
                *a = *a + b;
            }
            grads[id.0] = Some(existing);
        }
        None => grads[id.0] = Some(buf),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, tensor: Tensor<T>, requires_grad: bool) -> Var {
        let tensor = tensor.with_requires_grad(requires_grad);
        self.nodes.push(Node { tensor, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn values(&self, v: Var) -> &[T] {
        self.nodes[v.0].tensor.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.tensor.zero_grad();
        }
    }

    /// Removes and returns a recorded tensor's value, leaving an empty
    /// placeholder. Used to hand outputs back without copying.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let shape = vec![0];
        std::mem::replace(&mut self.nodes[v.0].tensor, Tensor::zeros(shape))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, values: Vec<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&v| self.needs(v));
        let tensor = Tensor::from_vec(shape, values)?.with_requires_grad(requires_grad);
        self.nodes.push(Node { tensor, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims4(&self, v: Var) -> Result<[usize; 4]> {
        self.nodes[v.0].tensor.dims4()
    }

    /// Standard 2-D convolution. `weight` is `[K, C, kh, kw]`, `bias` is `[K]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input)?;
        let [k, wc, kh, kw] = self.dims4(weight)?;
        if wc != c {
            return Err(Error::dim(format!("conv2d: input has {c} channels, weight expects {wc}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("conv2d: kernel {kh}x{kw} must have odd sides")));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d: stride must be at least 1"));
        }
        if self.shape(bias) != [k] {
            return Err(Error::dim(format!("conv2d: bias shape {:?} != [{k}]", self.shape(bias))));
        }
        let mut geom = ConvGeom { n, c, h, w, k, kh, kw, pad: padding, stride, oh: 0, ow: 0 };
        geom.oh = geom
            .output_len(h, kh)
            .ok_or_else(|| Error::dim("conv2d: kernel taller than padded input"))?;
        geom.ow = geom
            .output_len(w, kw)
            .ok_or_else(|| Error::dim("conv2d: kernel wider than padded input"))?;
        let out = kernels::conv2d_forward(self.values(input), self.values(weight), self.values(bias), &geom);
        self.push("conv2d", vec![n, k, geom.oh, geom.ow], out, &[input, weight, bias], Op::Conv2d { input, weight, bias, geom })
    }

    /// One spatial filter per channel. `weight` is `[C, 1, kh, kw]`.
    pub fn depthwise_conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input)?;
        let [wc, one, kh, kw] = self.dims4(weight)?;
        if wc != c || one != 1 {
            return Err(Error::dim(format!(
                "depthwise_conv2d: weight {:?} does not match {c} input channels",
                self.shape(weight)
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("depthwise_conv2d: kernel {kh}x{kw} must have odd sides")));
        }
        if self.shape(bias) != [c] {
            return Err(Error::dim(format!("depthwise_conv2d: bias shape {:?} != [{c}]", self.shape(bias))));
        }
        let mut geom = ConvGeom { n, c, h, w, k: c, kh, kw, pad: padding, stride: 1, oh: 0, ow: 0 };
        geom.oh = geom
            .output_len(h, kh)
            .ok_or_else(|| Error::dim("depthwise_conv2d: kernel taller than padded input"))?;
        geom.ow = geom
            .output_len(w, kw)
            .ok_or_else(|| Error::dim("depthwise_conv2d: kernel wider than padded input"))?;
        let out = kernels::depthwise_forward(self.values(input), self.values(weight), self.values(bias), &geom);
        self.push(
            "depthwise_conv2d",
            vec![n, c, geom.oh, geom.ow],
            out,
            &[input, weight, bias],
            Op::Depthwise { input, weight, bias, geom },
        )
    }

    /// 1×1 channel-mixing convolution. `weight` is `[K, C, 1, 1]`.
    pub fn pointwise_conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input)?;
        let [k, wc, kh, kw] = self.dims4(weight)?;
        if wc != c || kh != 1 || kw != 1 {
            return Err(Error::dim(format!(
                "pointwise_conv2d: weight {:?} does not match {c} input channels",
                self.shape(weight)
            )));
        }
        if self.shape(bias) != [k] {
            return Err(Error::dim(format!("pointwise_conv2d: bias shape {:?} != [{k}]", self.shape(bias))));
        }
        let p = h * w;
        let out = kernels::pointwise_forward(self.values(input), self.values(weight), self.values(bias), n, c, k, p);
        self.push("pointwise_conv2d", vec![n, k, h, w], out, &[input, weight, bias], Op::Pointwise { input, weight, bias, n, c, k, p })
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!("max_pool2: spatial size {h}x{w} must be even")));
        }
        let (out, argmax) = kernels::max_pool2_forward(self.values(input), n * c, h, w);
        self.push("max_pool2", vec![n, c, h / 2, w / 2], out, &[input], Op::MaxPool2 { input, argmax })
    }

    /// ×2 bilinear upsampling with half-pixel sampling (align-corners false).
    pub fn bilinear_upsample2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input)?;
        if h == 0 || w == 0 {
            return Err(Error::dim("bilinear_upsample2: empty spatial extent"));
        }
        let out = kernels::upsample2_forward(self.values(input), n * c, h, w);
        self.push("bilinear_upsample2", vec![n, c, 2 * h, 2 * w], out, &[input], Op::Upsample2 { input, nc: n * c, h, w })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.dims4(a)?;
        let [nb, cb, hb, wb] = self.dims4(b)?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::dim(format!(
                "concat_channels: {:?} and {:?} differ outside the channel axis",
                self.shape(a),
                self.shape(b)
            )));
        }
        let p = h * w;
        let (av, bv) = (self.values(a), self.values(b));
        let mut out = Vec::with_capacity(n * (ca + cb) * p);
        for i in 0..n {
            out.extend_from_slice(&av[i * ca * p..(i + 1) * ca * p]);
            out.extend_from_slice(&bv[i * cb * p..(i + 1) * cb * p]);
        }
        self.push("concat_channels", vec![n, ca + cb, h, w], out, &[a, b], Op::Concat { a, b, n, ca, cb, p })
    }

    /// Gathers the listed channels, in order, into a new tensor.
    pub fn select_channels(&mut self, input: Var, channels: &[usize]) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input)?;
        if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
            return Err(Error::contract(format!("select_channels: channel {bad} out of range for {c}")));
        }
        let p = h * w;
        let xs = self.values(input);
        let mut out = Vec::with_capacity(n * channels.len() * p);
        for i in 0..n {
            for &ch in channels {
                out.extend_from_slice(&xs[(i * c + ch) * p..(i * c + ch + 1) * p]);
            }
        }
        let op = Op::SelectChannels { input, channels: channels.to_vec(), c, p };
        self.push("select_channels", vec![n, channels.len(), h, w], out, &[input], op)
    }

    /// `max(x, slope·x)` elementwise; the derivative at zero is `slope`.
    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        let out = self
            .values(input)
            .iter()
            .map(|&x| if x > T::zero() { x } else { slope * x })
            .collect();
        let shape = self.shape(input).to_vec();
        self.push("leaky_relu", shape, out, &[input], Op::LeakyRelu { input, slope })
    }

    /// `max(x, 0)`, the non-negativity map on forecasts.
    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.leaky_relu(input, T::zero())
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out = self.values(input).iter().map(|&x| kernels::sigmoid(x)).collect();
        let shape = self.shape(input).to_vec();
        self.push("sigmoid", shape, out, &[input], Op::Sigmoid { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.values(a).iter().zip(self.values(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push("add", shape, out, &[a, b], Op::Add { a, b })
    }

    /// Elementwise product of 4-D tensors where each axis of `b` either
    /// matches `a` or has size 1 and is broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let adims = self.dims4(a)?;
        let bdims = self.dims4(b)?;
        for ax in 0..4 {
            if bdims[ax] != adims[ax] && bdims[ax] != 1 {
                return Err(Error::dim(format!("mul: cannot broadcast {bdims:?} onto {adims:?}")));
            }
        }
        let (av, bv) = (self.values(a), self.values(b));
        let mut out = Vec::with_capacity(av.len());
        for_each_broadcast(adims, bdims, |ia, ib| out.push(av[ia] * bv[ib]));
        self.push("mul", adims.to_vec(), out, &[a, b], Op::MulBroadcast { a, b, adims, bdims })
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        let out = self.values(input).iter().map(|&x| x * x).collect();
        let shape = self.shape(input).to_vec();
        self.push("square", shape, out, &[input], Op::Square { input })
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out = self.values(input).iter().map(|&x| x * factor).collect();
        let shape = self.shape(input).to_vec();
        self.push("scale", shape, out, &[input], Op::Scale { input, factor })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let mut s = 0.0f64;
        for &x in self.values(input) {
            s += x.as_f64();
        }
        self.push("sum", vec![1], vec![T::from_f64(s)], &[input], Op::Sum { input })
    }

    /// Mean over each channel plane: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input)?;
        let p = h * w;
        let inv = T::one() / T::from_usize(p);
        let xs = self.values(input);
        let out = (0..n * c)
            .map(|plane| {
                let mut s = T::zero();
                for &x in &xs[plane * p..(plane + 1) * p] {
                    s = s + x;
                }
                s * inv
            })
            .collect();
        self.push("global_avg_pool", vec![n, c, 1, 1], out, &[input], Op::GlobalAvgPool { input, p })
    }

    /// Channel-wise mean and max at every pixel: `[N,C,H,W] -> [N,2,H,W]`.
    /// Max ties resolve to the lowest channel index.
    pub fn channel_mean_max(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(input)?;
        if c == 0 {
            return Err(Error::dim("channel_mean_max: no channels"));
        }
        let p = h * w;
        let inv = T::one() / T::from_usize(c);
        let xs = self.values(input);
        let mut out = vec![T::zero(); n * 2 * p];
        let mut argmax = vec![0u32; n * p];
        for i in 0..n {
            for px in 0..p {
                let mut s = T::zero();
                let mut best = 0;
                for ch in 0..c {
                    let v = xs[(i * c + ch) * p + px];
                    s = s + v;
                    if v > xs[(i * c + best) * p + px] {
                        best = ch;
                    }
                }
                out[(i * 2) * p + px] = s * inv;
                out[(i * 2 + 1) * p + px] = xs[(i * c + best) * p + px];
                argmax[i * p + px] = best as u32;
            }
        }
        self.push("channel_mean_max", vec![n, 2, h, w], out, &[input], Op::ChannelMeanMax { input, argmax, c, p })
    }

    /// Elementwise pinball loss summed over all elements. The error is
    /// `e = target - pred`; `e >= 0` costs `q·e`, `e < 0` costs `(q-1)·e`.
    pub fn pinball(&mut self, target: Var, pred: Var, q: f64) -> Result<Var> {
        if self.shape(target) != self.shape(pred) {
            return Err(Error::dim(format!("pinball: {:?} vs {:?}", self.shape(target), self.shape(pred))));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::contract(format!("pinball: quantile level {q} outside (0, 1)")));
        }
        let mut s = 0.0f64;
        for (&y, &p) in self.values(target).iter().zip(self.values(pred)) {
            s += pinball((y - p).as_f64(), q);
        }
        self.push("pinball", vec![1], vec![T::from_f64(s)], &[target, pred], Op::Pinball { target, pred, q })
    }

    /// Weighted multi-quantile pinball objective averaged over the batch.
    /// `pred` channels are lead-time-major: channel `ℓ·|Q| + k` holds
    /// quantile `k` at lead time `ℓ`.
    pub fn multi_quantile_loss(&mut self, target: Var, pred: Var, levels: &[f64], weights: &[f64]) -> Result<Var> {
        let [b, l, h, w] = self.dims4(target)?;
        let [pb, pc, ph, pw] = self.dims4(pred)?;
        let nq = levels.len();
        if nq == 0 || weights.len() != nq {
            return Err(Error::contract("multi_quantile_loss: levels and weights must be non-empty and equal length"));
        }
        if (pb, ph, pw) != (b, h, w) || pc != l * nq {
            return Err(Error::dim(format!(
                "multi_quantile_loss: prediction {:?} incompatible with target {:?} and {nq} quantiles",
                self.shape(pred),
                self.shape(target)
            )));
        }
        if b == 0 {
            return Err(Error::contract("multi_quantile_loss: empty batch"));
        }
        let p = h * w;
        let (ys, ps) = (self.values(target), self.values(pred));
        // One running sum per level in target order, so a lone median level
        // reproduces half the absolute-error sum bit for bit.
        let mut total = 0.0f64;
        for (qi, (&q, &wq)) in levels.iter().zip(weights).enumerate() {
            let mut s = 0.0f64;
            for bi in 0..b {
                for li in 0..l {
                    let yrow = &ys[(bi * l + li) * p..(bi * l + li + 1) * p];
                    let ch = li * nq + qi;
                    let prow = &ps[(bi * pc + ch) * p..(bi * pc + ch + 1) * p];
                    for (&y, &yh) in yrow.iter().zip(prow) {
                        s += pinball((y - yh).as_f64(), q);
                    }
                }
            }
            total += wq * s;
        }
        let value = T::from_f64(total / b as f64);
        let op = Op::MultiQuantile { target, pred, levels: levels.to_vec(), weights: weights.to_vec(), dims: [b, l, h, w] };
        self.push("multi_quantile_loss", vec![1], vec![value], &[target, pred], op)
    }

    /// Squared error summed over all non-batch axes and averaged over the batch.
    pub fn mse_loss(&mut self, target: Var, pred: Var) -> Result<Var> {
        let batch = self.check_pair("mse_loss", target, pred)?;
        let mut s = 0.0f64;
        for (&y, &p) in self.values(target).iter().zip(self.values(pred)) {
            let e = (y - p).as_f64();
            s += e * e;
        }
        let value = T::from_f64(s / batch as f64);
        self.push("mse_loss", vec![1], vec![value], &[target, pred], Op::Mse { target, pred, batch })
    }

    /// Absolute error summed over all non-batch axes and averaged over the batch.
    pub fn mae_loss(&mut self, target: Var, pred: Var) -> Result<Var> {
        let batch = self.check_pair("mae_loss", target, pred)?;
        let mut s = 0.0f64;
        for (&y, &p) in self.values(target).iter().zip(self.values(pred)) {
            s += (y - p).as_f64().abs();
        }
        let value = T::from_f64(s / batch as f64);
        self.push("mae_loss", vec![1], vec![value], &[target, pred], Op::Mae { target, pred, batch })
    }

    fn check_pair(&self, name: &str, target: Var, pred: Var) -> Result<usize> {
        if self.shape(target) != self.shape(pred) {
            return Err(Error::dim(format!("{name}: {:?} vs {:?}", self.shape(target), self.shape(pred))));
        }
        let batch = self.shape(target).first().copied().unwrap_or(0);
        if batch == 0 {
            return Err(Error::contract(format!("{name}: empty batch")));
        }
        Ok(batch)
    }

    /// Propagates gradients from a one-element `loss` to every recorded
    /// tensor that requires them, adding into existing gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must hold a single element, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].tensor.requires_grad() {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            self.nodes[idx].tensor.accumulate_grad(&g);
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let len = |v: Var| self.nodes[v.0].tensor.len();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let (input, weight, bias) = (*input, *weight, *bias);
                let mut dx = self.needs(input).then(|| take_buf(grads, input, len(input)));
                let mut dw = self.needs(weight).then(|| take_buf(grads, weight, len(weight)));
                let mut db = self.needs(bias).then(|| take_buf(grads, bias, len(bias)));
                kernels::conv2d_backward(
                    self.values(input),
                    self.values(weight),
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, [(input, dx), (weight, dw), (bias, db)]);
            }
            Op::Depthwise { input, weight, bias, geom } => {
                let (input, weight, bias) = (*input, *weight, *bias);
                let mut dx = self.needs(input).then(|| take_buf(grads, input, len(input)));
                let mut dw = self.needs(weight).then(|| take_buf(grads, weight, len(weight)));
                let mut db = self.needs(bias).then(|| take_buf(grads, bias, len(bias)));
                kernels::depthwise_backward(
                    self.values(input),
                    self.values(weight),
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, [(input, dx), (weight, dw), (bias, db)]);
            }
            Op::Pointwise { input, weight, bias, n, c, k, p } => {
                let (input, weight, bias) = (*input, *weight, *bias);
                let mut dx = self.needs(input).then(|| take_buf(grads, input, len(input)));
                let mut dw = self.needs(weight).then(|| take_buf(grads, weight, len(weight)));
                let mut db = self.needs(bias).then(|| take_buf(grads, bias, len(bias)));
                kernels::pointwise_backward(
                    self.values(input),
                    self.values(weight),
                    g,
                    *n,
                    *c,
                    *k,
                    *p,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, [(input, dx), (weight, dw), (bias, db)]);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = take_buf(grads, *input, len(*input));
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src as usize] = dx[src as usize] + gv;
                }
                grads[input.0] = Some(dx);
            }
            Op::Upsample2 { input, nc, h, w } => {
                let mut dx = take_buf(grads, *input, len(*input));
                kernels::upsample2_backward(g, *nc, *h, *w, &mut dx);
                grads[input.0] = Some(dx);
            }
            Op::Concat { a, b, n, ca, cb, p } => {
                let (a, b, n, ca, cb, p) = (*a, *b, *n, *ca, *cb, *p);
                let stride = (ca + cb) * p;
                if self.needs(a) {
                    let mut da = take_buf(grads, a, len(a));
                    for i in 0..n {
                        for (d, &gv) in da[i * ca * p..(i + 1) * ca * p].iter_mut().zip(&g[i * stride..i * stride + ca * p]) {
                            *d = *d + gv;
                        }
                    }
                    put_buf(grads, a, da);
                }
                if self.needs(b) {
                    let mut db = take_buf(grads, b, len(b));
                    for i in 0..n {
                        let src = &g[i * stride + ca * p..(i + 1) * stride];
                        for (d, &gv) in db[i * cb * p..(i + 1) * cb * p].iter_mut().zip(src) {
                            *d = *d + gv;
                        }
                    }
                    put_buf(grads, b, db);
                }
            }
            Op::SelectChannels { input, channels, c, p } => {
                let (c, p) = (*c, *p);
                let mut dx = take_buf(grads, *input, len(*input));
                let nsel = channels.len();
                let n = if nsel == 0 { 0 } else { g.len() / (nsel * p) };
                for i in 0..n {
                    for (j, &ch) in channels.iter().enumerate() {
                        let src = &g[(i * nsel + j) * p..(i * nsel + j + 1) * p];
                        for (d, &gv) in dx[(i * c + ch) * p..(i * c + ch + 1) * p].iter_mut().zip(src) {
                            *d = *d + gv;
                        }
                    }
                }
                grads[input.0] = Some(dx);
            }
            Op::LeakyRelu { input, slope } => {
                let mut dx = take_buf(grads, *input, len(*input));
                for ((d, &x), &gv) in dx.iter_mut().zip(self.values(*input)).zip(g) {
                    let s = if x > T::zero() { T::one() } else { *slope };
                    *d = *d + s * gv;
                }
                grads[input.0] = Some(dx);
            }
            Op::Sigmoid { input } => {
                let mut dx = take_buf(grads, *input, len(*input));
                for ((d, &y), &gv) in dx.iter_mut().zip(self.nodes[idx].tensor.values()).zip(g) {
                    *d = *d + gv * y * (T::one() - y);
                }
                grads[input.0] = Some(dx);
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        put_buf(grads, v, g.to_vec());
                    }
                }
            }
            Op::MulBroadcast { a, b, adims, bdims } => {
                let (a, b) = (*a, *b);
                let (av, bv) = (self.values(a), self.values(b));
                if self.needs(a) {
                    let mut da = vec![T::zero(); av.len()];
                    for_each_broadcast(*adims, *bdims, |ia, ib| da[ia] = g[ia] * bv[ib]);
                    put_buf(grads, a, da);
                }
                if self.needs(b) {
                    let mut db = vec![T::zero(); bv.len()];
                    for_each_broadcast(*adims, *bdims, |ia, ib| db[ib] = db[ib] + g[ia] * av[ia]);
                    put_buf(grads, b, db);
                }
            }
            Op::Square { input } => {
                let two = T::from_f64(2.0);
                let mut dx = take_buf(grads, *input, len(*input));
                for ((d, &x), &gv) in dx.iter_mut().zip(self.values(*input)).zip(g) {
                    *d = *d + two * x * gv;
                }
                grads[input.0] = Some(dx);
            }
            Op::Scale { input, factor } => {
                let mut dx = take_buf(grads, *input, len(*input));
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d = *d + *factor * gv;
                }
                grads[input.0] = Some(dx);
            }
            Op::Sum { input } => {
                let mut dx = take_buf(grads, *input, len(*input));
                for d in dx.iter_mut() {
                    *d = *d + g[0];
                }
                grads[input.0] = Some(dx);
            }
            Op::GlobalAvgPool { input, p } => {
                let inv = T::one() / T::from_usize(*p);
                let mut dx = take_buf(grads, *input, len(*input));
                for (plane, &gv) in g.iter().enumerate() {
                    let share = gv * inv;
                    for d in &mut dx[plane * p..(plane + 1) * p] {
                        *d = *d + share;
                    }
                }
                grads[input.0] = Some(dx);
            }
            Op::ChannelMeanMax { input, argmax, c, p } => {
                let (c, p) = (*c, *p);
                let inv = T::one() / T::from_usize(c);
                let mut dx = take_buf(grads, *input, len(*input));
                let n = argmax.len() / p.max(1);
                for i in 0..n {
                    for px in 0..p {
                        let gmean = g[(i * 2) * p + px] * inv;
                        for ch in 0..c {
                            let d = &mut dx[(i * c + ch) * p + px];
                            *d = *d + gmean;
                        }
                        let ch = argmax[i * p + px] as usize;
                        let d = &mut dx[(i * c + ch) * p + px];
                        *d = *d + g[(i * 2 + 1) * p + px];
                    }
                }
                grads[input.0] = Some(dx);
            }
            Op::Pinball { target, pred, q } => {
                let (target, pred, q) = (*target, *pred, *q);
                let scale = g[0].as_f64();
                let (ys, ps) = (self.values(target), self.values(pred));
                let dpred: Vec<T> = ys
                    .iter()
                    .zip(ps)
                    .map(|(&y, &p)| T::from_f64(scale * pinball_dpred((y - p).as_f64(), q)))
                    .collect();
                self.send_pair(grads, target, pred, dpred);
            }
            Op::MultiQuantile { target, pred, levels, weights, dims } => {
                let (target, pred) = (*target, *pred);
                let [b, l, h, w] = *dims;
                let (nq, p) = (levels.len(), h * w);
                let scale = g[0].as_f64() / b as f64;
                let (ys, ps) = (self.values(target), self.values(pred));
                let mut dpred = vec![T::zero(); ps.len()];
                for bi in 0..b {
                    for (qi, (&q, &wq)) in levels.iter().zip(weights).enumerate() {
                        for li in 0..l {
                            let ch = li * nq + qi;
                            let yrow = &ys[(bi * l + li) * p..(bi * l + li + 1) * p];
                            let off = (bi * l * nq + ch) * p;
                            for (j, &y) in yrow.iter().enumerate() {
                                let e = (y - ps[off + j]).as_f64();
                                dpred[off + j] = T::from_f64(scale * wq * pinball_dpred(e, q));
                            }
                        }
                    }
                }
                if self.needs(pred) {
                    put_buf(grads, pred, dpred.clone());
                }
                if self.needs(target) {
                    // Each target element feeds |Q| predictions.
                    let mut dy = vec![T::zero(); ys.len()];
                    for bi in 0..b {
                        for li in 0..l {
                            for qi in 0..nq {
                                let off = (bi * l * nq + li * nq + qi) * p;
                                for j in 0..p {
                                    let d = &mut dy[(bi * l + li) * p + j];
                                    *d = *d - dpred[off + j];
                                }
                            }
                        }
                    }
                    put_buf(grads, target, dy);
                }
            }
            Op::Mse { target, pred, batch } => {
                let (target, pred) = (*target, *pred);
                let scale = 2.0 * g[0].as_f64() / *batch as f64;
                let dpred: Vec<T> = self
                    .values(target)
                    .iter()
                    .zip(self.values(pred))
                    .map(|(&y, &p)| T::from_f64(-scale * (y - p).as_f64()))
                    .collect();
                self.send_pair(grads, target, pred, dpred);
            }
            Op::Mae { target, pred, batch } => {
                let (target, pred) = (*target, *pred);
                let scale = g[0].as_f64() / *batch as f64;
                let dpred: Vec<T> = self
                    .values(target)
                    .iter()
                    .zip(self.values(pred))
                    .map(|(&y, &p)| {
                        let e = (y - p).as_f64();
                        let s = if e > 0.0 {
                            -1.0
                        } else if e < 0.0 {
                            1.0
                        } else {
                            0.0
                        };
                        T::from_f64(scale * s)
                    })
                    .collect();
                self.send_pair(grads, target, pred, dpred);
            }
        }
    }

    /// Routes a loss gradient to the prediction and its negation to the target.
    fn send_pair(&self, grads: &mut [Option<Vec<T>>], target: Var, pred: Var, dpred: Vec<T>) {
        if self.needs(target) {
            put_buf(grads, target, dpred.iter().map(|&d| -d).collect());
        }
        if self.needs(pred) {
            put_buf(grads, pred, dpred);
        }
    }
}

fn restore<T: Real, const K: usize>(grads: &mut [Option<Vec<T>>], parts: [(Var, Option<Vec<T>>); K]) {
    for (v, buf) in parts {
        if let Some(buf) = buf {
            put_buf(grads, v, buf);
        }
    }
}

/// Visits every element of `a` with the flat index of the `b` element
/// broadcast onto it.
fn for_each_broadcast(adims: [usize; 4], bdims: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let [n, c, h, w] = adims;
    let [bn, bc, bh, bw] = bdims;
    let mut ia = 0;
    for i0 in 0..n {
        let j0 = if bn == 1 { 0 } else { i0 };
        for i1 in 0..c {
            let j1 = if bc == 1 { 0 } else { i1 };
            for i2 in 0..h {
                let j2 = if bh == 1 { 0 } else { i2 };
                let row = ((j0 * bc + j1) * bh + j2) * bw;
                for i3 in 0..w {
                    let j3 = if bw == 1 { 0 } else { i3 };
                    f(ia, row + j3);
                    ia += 1;
                }
            }
        }
    }
}
