use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ParamVars, Parameters};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.01;
/// Hidden width of the channel-attention bottleneck is `C / ATTENTION_REDUCTION`.
pub const ATTENTION_REDUCTION: usize = 4;
pub const SPATIAL_KERNEL: usize = 7;

/// One parameter tensor of the architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Inputs feeding each output unit; zero for biases.
    pub fan_in: usize,
    /// Whether a leaky-ReLU follows, which doubles the init variance.
    pub rectified: bool,
}

impl LayerSpec {
    pub fn count(&self) -> usize {
        self.shape.iter().product()
    }

    fn weight(name: String, shape: Vec<usize>, rectified: bool) -> Self {
        let fan_in = shape[1..].iter().product();
        Self { name, shape, fan_in, rectified }
    }

    fn bias(name: String, len: usize) -> Self {
        Self { name, shape: vec![len], fan_in: 0, rectified: false }
    }
}

fn double_conv_specs(out: &mut Vec<LayerSpec>, prefix: &str, cin: usize, cout: usize) {
    out.push(LayerSpec::weight(format!("{prefix}.dw1.weight"), vec![cin, 1, 3, 3], false));
    out.push(LayerSpec::bias(format!("{prefix}.dw1.bias"), cin));
    out.push(LayerSpec::weight(format!("{prefix}.pw1.weight"), vec![cout, cin, 1, 1], true));
    out.push(LayerSpec::bias(format!("{prefix}.pw1.bias"), cout));
    out.push(LayerSpec::weight(format!("{prefix}.dw2.weight"), vec![cout, 1, 3, 3], false));
    out.push(LayerSpec::bias(format!("{prefix}.dw2.bias"), cout));
    out.push(LayerSpec::weight(format!("{prefix}.pw2.weight"), vec![cout, cout, 1, 1], true));
    out.push(LayerSpec::bias(format!("{prefix}.pw2.bias"), cout));
}

pub fn attention_hidden(channels: usize) -> usize {
    (channels / ATTENTION_REDUCTION).max(1)
}

fn attention_specs(out: &mut Vec<LayerSpec>, prefix: &str, c: usize) {
    let h = attention_hidden(c);
    let k = SPATIAL_KERNEL;
    out.push(LayerSpec::weight(format!("{prefix}.fc1.weight"), vec![h, c, 1, 1], true));
    out.push(LayerSpec::bias(format!("{prefix}.fc1.bias"), h));
    out.push(LayerSpec::weight(format!("{prefix}.fc2.weight"), vec![c, h, 1, 1], false));
    out.push(LayerSpec::bias(format!("{prefix}.fc2.bias"), c));
    out.push(LayerSpec::weight(format!("{prefix}.spatial.weight"), vec![1, 2, k, k], false));
    out.push(LayerSpec::bias(format!("{prefix}.spatial.bias"), 1));
}

/// Every parameter tensor of the network in initialisation order.
///
/// Encoder level `l` runs a separable double convolution at width
/// `base·2^l` (after 2×2 pooling for `l > 0`). Decoder level `l` upsamples
/// the level below, concatenates the level-`l` skip, and maps back to
/// `base·2^l` channels. A 1×1 head produces the output channels.
pub fn architecture(config: &ModelConfig) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for level in 0..=config.depth {
        let cin = if level == 0 { config.input_frames } else { config.channels_at(level - 1) };
        double_conv_specs(&mut specs, &format!("enc{level}"), cin, config.channels_at(level));
        if config.attention {
            attention_specs(&mut specs, &format!("att{level}"), config.channels_at(level));
        }
    }
    for level in (0..config.depth).rev() {
        let cin = config.channels_at(level) + config.channels_at(level + 1);
        double_conv_specs(&mut specs, &format!("dec{level}"), cin, config.channels_at(level));
    }
    specs.push(LayerSpec::weight("head.weight".into(), vec![config.output_channels(), config.base_channels, 1, 1], false));
    specs.push(LayerSpec::bias("head.bias".into(), config.output_channels()));
    specs
}

/// Plain-text table of layer name, shape and parameter count.
pub fn architecture_table(config: &ModelConfig) -> String {
    let specs = architecture(config);
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:<18} {:>8}", "layer", "shape", "params");
    for s in &specs {
        let shape = s.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        let _ = writeln!(out, "{:<24} {:<18} {:>8}", s.name, shape, s.count());
    }
    let total: usize = specs.iter().map(LayerSpec::count).sum();
    let _ = writeln!(out, "{:<24} {:<18} {:>8}", "total", "", total);
    out
}

/// Draws weights from `U(-b, b)` with `b = sqrt(3·gain²/fan_in)`, where the
/// gain is √2 for layers followed by a leaky-ReLU and 1 otherwise. Biases
/// start at zero. The draw order follows [`architecture`], so a seed fixes
/// every value.
pub fn init_parameters(config: &ModelConfig) -> Result<Parameters<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Parameters::new();
    for spec in architecture(config) {
        let n = spec.count();
        let values = if spec.fan_in == 0 {
            vec![0.0f32; n]
        } else {
            let gain2 = if spec.rectified { 2.0 } else { 1.0 };
            let bound = (3.0 * gain2 / spec.fan_in as f64).sqrt() as f32;
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        params.insert(spec.name, Tensor::from_vec(spec.shape, values)?)?;
    }
    Ok(params)
}

fn double_conv<T: Real>(tape: &mut Tape<T>, p: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let slope = T::from_f64(LEAKY_SLOPE);
    let mut cur = x;
    for stage in ["1", "2"] {
        let dw_w = p.get(&format!("{prefix}.dw{stage}.weight"))?;
        let dw_b = p.get(&format!("{prefix}.dw{stage}.bias"))?;
        let pw_w = p.get(&format!("{prefix}.pw{stage}.weight"))?;
        let pw_b = p.get(&format!("{prefix}.pw{stage}.bias"))?;
        cur = tape.depthwise_conv2d(cur, dw_w, dw_b, 1)?;
        cur = tape.pointwise_conv2d(cur, pw_w, pw_b)?;
        cur = tape.leaky_relu(cur, slope)?;
    }
    Ok(cur)
}

/// Channel-then-spatial gating of a feature map.
///
/// The channel scale is `σ(fc2(leaky(fc1(avgpool(x)))))`; the spatial scale is
/// `σ(conv7x7([mean_c, max_c]))` computed on the channel-gated map. The
/// output is `x ⊙ channel_scale ⊙ spatial_scale`.
pub fn attention_gate<T: Real>(tape: &mut Tape<T>, p: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let pooled = tape.global_avg_pool(x)?;
    let hidden = tape.pointwise_conv2d(pooled, p.get(&format!("{prefix}.fc1.weight"))?, p.get(&format!("{prefix}.fc1.bias"))?)?;
    let hidden = tape.leaky_relu(hidden, T::from_f64(LEAKY_SLOPE))?;
    let logits = tape.pointwise_conv2d(hidden, p.get(&format!("{prefix}.fc2.weight"))?, p.get(&format!("{prefix}.fc2.bias"))?)?;
    let channel_scale = tape.sigmoid(logits)?;
    let gated = tape.mul(x, channel_scale)?;

    let maps = tape.channel_mean_max(gated)?;
    let sw = p.get(&format!("{prefix}.spatial.weight"))?;
    let sb = p.get(&format!("{prefix}.spatial.bias"))?;
    let spatial = tape.conv2d(maps, sw, sb, SPATIAL_KERNEL / 2, 1)?;
    let spatial_scale = tape.sigmoid(spatial)?;
    tape.mul(gated, spatial_scale)
}

/// Records the network on `tape` and returns the non-negative forecast,
/// shaped `[B, out, H, W]`.
pub fn forward_on_tape<T: Real>(tape: &mut Tape<T>, p: &ParamVars, config: &ModelConfig, input: Var) -> Result<Var> {
    let [b, m, h, w] = tape.value(input).dims4()?;
    if b == 0 {
        return Err(Error::contract("forward: empty batch"));
    }
    if (m, h, w) != (config.input_frames, config.grid_h, config.grid_w) {
        return Err(Error::dim(format!(
            "forward: input [{b}, {m}, {h}, {w}] does not match config [_, {}, {}, {}]",
            config.input_frames, config.grid_h, config.grid_w
        )));
    }
    let mut skips = Vec::with_capacity(config.depth + 1);
    let mut cur = input;
    for level in 0..=config.depth {
        if level > 0 {
            cur = tape.max_pool2(cur)?;
        }
        cur = double_conv(tape, p, &format!("enc{level}"), cur)?;
        let skip = if config.attention {
            attention_gate(tape, p, &format!("att{level}"), cur)?
        } else {
            cur
        };
        skips.push(skip);
    }
    let mut up = skips[config.depth];
    for level in (0..config.depth).rev() {
        let upsampled = tape.bilinear_upsample2(up)?;
        let joined = tape.concat_channels(skips[level], upsampled)?;
        up = double_conv(tape, p, &format!("dec{level}"), joined)?;
    }
    let raw = tape.pointwise_conv2d(up, p.get("head.weight")?, p.get("head.bias")?)?;
    tape.relu(raw)
}

/// Inference without gradient tracking.
pub fn forward<T: Real>(params: &Parameters<T>, config: &ModelConfig, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let x = tape.leaf(input.clone(), false);
    let y = forward_on_tape(&mut tape, &vars, config, x)?;
    Ok(tape.take(y))
}

/// Channels `ℓ·n_quantiles + q_index` for every lead time `ℓ`.
pub fn quantile_channels(lead_times: usize, n_quantiles: usize, q_index: usize) -> Vec<usize> {
    (0..lead_times).map(|l| l * n_quantiles + q_index).collect()
}

/// Pulls one quantile's frames out of a lead-time-major output tensor.
pub fn extract_quantile<T: Real>(output: &Tensor<T>, q_index: usize, n_quantiles: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = output.dims4()?;
    if q_index >= n_quantiles {
        return Err(Error::contract(format!("quantile index {q_index} out of range for {n_quantiles} quantiles")));
    }
    if n_quantiles == 0 || c % n_quantiles != 0 {
        return Err(Error::dim(format!("{c} channels do not split into {n_quantiles} quantiles")));
    }
    let lead = c / n_quantiles;
    let p = h * w;
    let src = output.values();
    let mut out = Vec::with_capacity(b * lead * p);
    for bi in 0..b {
        for ch in quantile_channels(lead, n_quantiles, q_index) {
            out.extend_from_slice(&src[(bi * c + ch) * p..(bi * c + ch + 1) * p]);
        }
    }
    Tensor::from_vec(vec![b, lead, h, w], out)
}

/// Inverse of [`extract_quantile`] over all indices.
pub fn interleave_quantiles<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::contract("no quantile tensors to interleave"))?;
    let [b, lead, h, w] = first.dims4()?;
    if parts.iter().any(|t| t.shape() != first.shape()) {
        return Err(Error::dim("quantile tensors differ in shape"));
    }
    let nq = parts.len();
    let p = h * w;
    let mut out = vec![T::zero(); b * lead * nq * p];
    for (qi, part) in parts.iter().enumerate() {
        for bi in 0..b {
            for l in 0..lead {
                let dst = (bi * lead * nq + l * nq + qi) * p;
                out[dst..dst + p].copy_from_slice(&part.values()[(bi * lead + l) * p..(bi * lead + l + 1) * p]);
            }
        }
    }
    Tensor::from_vec(vec![b, lead * nq, h, w], out)
}
