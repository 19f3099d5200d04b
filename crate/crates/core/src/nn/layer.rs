//! Layer variants and their forward / backward kernels.
//!
//! Activations are `[height, width, channels]` for spatial layers and `[n]`
//! for dense layers. Convolution kernels are stored `[out][ky][kx][in]` so a
//! kernel row lines up with an input patch gathered in the same order.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// How a backward pass treats ReLU units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReluRule {
    /// Ordinary chain rule: `1[s > 0] * g`.
    Gradient,
    /// Keep only positive upstream signal: `1[g > 0] * g`.
    Deconvnet,
    /// Both gates: `1[s > 0] * 1[g > 0] * g`.
    Guided,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs][inputs]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][ky][kx][in]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    MaxPool2d(MaxPool2d),
    Flatten,
    SigmoidOutput,
    SoftmaxOutput,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights: vec![0.0; out_channels * kernel * kernel * in_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn kernel_row(&self, oc: usize) -> &[f64] {
        let n = self.patch_len();
        &self.weights[oc * n..(oc + 1) * n]
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel || self.stride == 0 {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    /// Copies the receptive field of output pixel `(oy, ox)` into `patch`,
    /// zero-filling padded positions. `valid` receives the flat input offset
    /// of every patch slot, or `usize::MAX` for padding.
    #[allow(clippy::too_many_arguments)]
    pub fn gather(&self, x: &[f64], h: usize, w: usize, oy: usize, ox: usize, patch: &mut [f64], valid: &mut [usize]) {
        let c = self.in_channels;
        let k = self.kernel;
        let y0 = (oy * self.stride) as isize - self.padding as isize;
        let x0 = (ox * self.stride) as isize - self.padding as isize;
        for ky in 0..k {
            let iy = y0 + ky as isize;
            for kx in 0..k {
                let ix = x0 + kx as isize;
                let slot = (ky * k + kx) * c;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    patch[slot..slot + c].fill(0.0);
                    valid[slot..slot + c].fill(usize::MAX);
                } else {
                    let base = (iy as usize * w + ix as usize) * c;
                    patch[slot..slot + c].copy_from_slice(&x[base..base + c]);
                    for (i, v) in valid[slot..slot + c].iter_mut().enumerate() {
                        *v = base + i;
                    }
                }
            }
        }
    }
}

impl MaxPool2d {
    pub fn output_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h < self.window || w < self.window || self.stride == 0 {
            return None;
        }
        Some(((h - self.window) / self.stride + 1, (w - self.window) / self.stride + 1))
    }

    /// Flat input offset of the winner for output `(oy, ox, ch)`; ties go to
    /// the first element in row-major scan order.
    pub fn argmax(&self, x: &[f64], w: usize, c: usize, oy: usize, ox: usize, ch: usize) -> usize {
        let mut best = usize::MAX;
        let mut best_v = f64::NEG_INFINITY;
        for ky in 0..self.window {
            for kx in 0..self.window {
                let idx = ((oy * self.stride + ky) * w + ox * self.stride + kx) * c + ch;
                if best == usize::MAX || x[idx] > best_v {
                    best = idx;
                    best_v = x[idx];
                }
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::SigmoidOutput => "sigmoid_output",
            Layer::SoftmaxOutput => "softmax_output",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    pub fn is_output(&self) -> bool {
        matches!(self, Layer::SigmoidOutput | Layer::SoftmaxOutput)
    }

    pub fn param_count(&self) -> usize {
        self.params().map_or(0, |(w, b)| w.len() + b.len())
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            Layer::Conv2d(c) => Some((&c.weights, &c.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            Layer::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` used by Glorot initialization.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Dense(d) => Some((d.inputs, d.outputs)),
            Layer::Conv2d(c) => Some((
                c.kernel * c.kernel * c.in_channels,
                c.kernel * c.kernel * c.out_channels,
            )),
            _ => None,
        }
    }

    /// Output shape for a given input shape, or `None` if they do not compose.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Dense(d) => (input == [d.inputs]).then(|| vec![d.outputs]),
            Layer::Conv2d(c) => match input {
                [h, w, ch] if *ch == c.in_channels => {
                    let (oh, ow) = c.output_dims(*h, *w)?;
                    Some(vec![oh, ow, c.out_channels])
                }
                _ => None,
            },
            Layer::Relu => Some(input.to_vec()),
            Layer::MaxPool2d(p) => match input {
                [h, w, ch] => {
                    let (oh, ow) = p.output_dims(*h, *w)?;
                    Some(vec![oh, ow, *ch])
                }
                _ => None,
            },
            Layer::Flatten => Some(vec![input.iter().product()]),
            Layer::SigmoidOutput | Layer::SoftmaxOutput => (input.len() == 1).then(|| input.to_vec()),
        }
    }

    /// Forward pass. The caller guarantees `x` has a shape accepted by
    /// [`Layer::output_shape`].
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Dense(d) => {
                let xs = x.data();
                let out = (0..d.outputs).map(|j| d.bias[j] + dot(d.row(j), xs)).collect();
                Tensor::from_vec(out)
            }
            Layer::Conv2d(c) => {
                let (h, w, _) = x.hwc();
                let (oh, ow) = c.output_dims(h, w).expect("validated shape");
                let mut out = vec![0.0; oh * ow * c.out_channels];
                let mut patch = vec![0.0; c.patch_len()];
                let mut valid = vec![0usize; c.patch_len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        c.gather(x.data(), h, w, oy, ox, &mut patch, &mut valid);
                        let base = (oy * ow + ox) * c.out_channels;
                        for oc in 0..c.out_channels {
                            out[base + oc] = c.bias[oc] + dot(c.kernel_row(oc), &patch);
                        }
                    }
                }
                Tensor::new(vec![oh, ow, c.out_channels], out).expect("conv output shape")
            }
            Layer::Relu => x.map(|v| v.max(0.0)),
            Layer::MaxPool2d(p) => {
                let (h, w, ch) = x.hwc();
                let (oh, ow) = p.output_dims(h, w).expect("validated shape");
                let xs = x.data();
                let mut out = Vec::with_capacity(oh * ow * ch);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for c in 0..ch {
                            out.push(xs[p.argmax(xs, w, ch, oy, ox, c)]);
                        }
                    }
                }
                Tensor::new(vec![oh, ow, ch], out).expect("pool output shape")
            }
            Layer::Flatten => Tensor::from_vec(x.data().to_vec()),
            Layer::SigmoidOutput => x.map(sigmoid),
            Layer::SoftmaxOutput => Tensor::from_vec(softmax(x.data())),
        }
    }

    /// Backward pass: maps `grad_out` (d/d output) to d/d input.
    ///
    /// `input` and `output` are this layer's cached activations. When
    /// `param_grad` is given, parameter gradients are accumulated into it as
    /// `[weights..., bias...]`.
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_out: &Tensor,
        rule: ReluRule,
        param_grad: Option<&mut [f64]>,
    ) -> Tensor {
        match self {
            Layer::Dense(d) => {
                let g = grad_out.data();
                let xs = input.data();
                let mut gin = vec![0.0; d.inputs];
                for (j, &gj) in g.iter().enumerate() {
                    if gj != 0.0 {
                        axpy(gj, d.row(j), &mut gin);
                    }
                }
                if let Some(pg) = param_grad {
                    let (gw, gb) = pg.split_at_mut(d.weights.len());
                    for (j, &gj) in g.iter().enumerate() {
                        if gj != 0.0 {
                            axpy(gj, xs, &mut gw[j * d.inputs..(j + 1) * d.inputs]);
                        }
                        gb[j] += gj;
                    }
                }
                Tensor::new(input.shape().to_vec(), gin).expect("dense grad shape")
            }
            Layer::Conv2d(c) => {
                let (h, w, _) = input.hwc();
                let (oh, ow) = c.output_dims(h, w).expect("validated shape");
                let g = grad_out.data();
                let n = c.patch_len();
                let mut gin = vec![0.0; input.len()];
                let mut patch = vec![0.0; n];
                let mut valid = vec![0usize; n];
                let mut gpatch = vec![0.0; n];
                let mut pg = param_grad;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = (oy * ow + ox) * c.out_channels;
                        let gs = &g[base..base + c.out_channels];
                        if gs.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        c.gather(input.data(), h, w, oy, ox, &mut patch, &mut valid);
                        gpatch.fill(0.0);
                        for (oc, &goc) in gs.iter().enumerate() {
                            if goc == 0.0 {
                                continue;
                            }
                            axpy(goc, c.kernel_row(oc), &mut gpatch);
                            if let Some(pg) = pg.as_deref_mut() {
                                axpy(goc, &patch, &mut pg[oc * n..(oc + 1) * n]);
                                pg[c.weights.len() + oc] += goc;
                            }
                        }
                        for (slot, &idx) in valid.iter().enumerate() {
                            if idx != usize::MAX {
                                gin[idx] += gpatch[slot];
                            }
                        }
                    }
                }
                Tensor::new(input.shape().to_vec(), gin).expect("conv grad shape")
            }
            Layer::Relu => {
                let data = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&s, &g)| match rule {
                        ReluRule::Gradient => {
                            if s > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        }
                        ReluRule::Deconvnet => g.max(0.0),
                        ReluRule::Guided => {
                            if s > 0.0 {
                                g.max(0.0)
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                Tensor::new(input.shape().to_vec(), data).expect("relu grad shape")
            }
            Layer::MaxPool2d(p) => {
                let (_, w, ch) = input.hwc();
                let (oh, ow, _) = output.hwc();
                let xs = input.data();
                let g = grad_out.data();
                let mut gin = vec![0.0; input.len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for c in 0..ch {
                            let gv = g[(oy * ow + ox) * ch + c];
                            gin[p.argmax(xs, w, ch, oy, ox, c)] += gv;
                        }
                    }
                }
                Tensor::new(input.shape().to_vec(), gin).expect("pool grad shape")
            }
            Layer::Flatten => {
                Tensor::new(input.shape().to_vec(), grad_out.data().to_vec()).expect("flatten grad shape")
            }
            Layer::SigmoidOutput => {
                let data = output
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                Tensor::from_vec(data)
            }
            Layer::SoftmaxOutput => {
                let s = output.data();
                let g = grad_out.data();
                let sg = dot(s, g);
                Tensor::from_vec(s.iter().zip(g).map(|(&si, &gi)| si * (gi - sg)).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_forward_by_hand() {
        let layer = Layer::Dense(Dense {
            inputs: 2,
            outputs: 1,
            weights: vec![1.0, 2.0],
            bias: vec![0.0],
        });
        let y = layer.forward(&Tensor::from_vec(vec![3.0, 4.0]));
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn relu_forward() {
        let y = Layer::Relu.forward(&Tensor::from_vec(vec![-1.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn relu_rules_gate_differently() {
        let s = Tensor::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        let g = Tensor::from_vec(vec![2.0, 2.0, -2.0, -2.0]);
        let out = Layer::Relu.forward(&s);
        let grad = Layer::Relu.backward(&s, &out, &g, ReluRule::Gradient, None);
        let dec = Layer::Relu.backward(&s, &out, &g, ReluRule::Deconvnet, None);
        let gbp = Layer::Relu.backward(&s, &out, &g, ReluRule::Guided, None);
        assert_eq!(grad.data(), &[2.0, 0.0, -2.0, 0.0]);
        assert_eq!(dec.data(), &[2.0, 2.0, 0.0, 0.0]);
        assert_eq!(gbp.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_routes_ties_to_first_in_scan_order() {
        let pool = Layer::MaxPool2d(MaxPool2d { window: 2, stride: 2 });
        let x = t(&[2, 2, 1], &[5.0, 5.0, 1.0, 5.0]);
        let y = pool.forward(&x);
        assert_eq!(y.data(), &[5.0]);
        let g = pool.backward(&x, &y, &t(&[1, 1, 1], &[1.0]), ReluRule::Gradient, None);
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_identity_kernel_with_padding() {
        let mut c = Conv2d::zeros(1, 1, 3, 1, 1);
        c.weights[4] = 1.0; // center tap
        c.bias[0] = 0.5;
        let layer = Layer::Conv2d(c);
        let x = t(&[2, 3, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(layer.output_shape(x.shape()), Some(vec![2, 3, 1]));
        let y = layer.forward(&x);
        assert_eq!(y.data(), &[1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
    }

    #[test]
    fn conv_param_gradient_matches_patch_sum() {
        // One output pixel, kernel covers the whole 2x2 input.
        let c = Conv2d::zeros(1, 1, 2, 1, 0);
        let layer = Layer::Conv2d(c);
        let x = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let y = layer.forward(&x);
        let mut pg = vec![0.0; layer.param_count()];
        layer.backward(&x, &y, &t(&[1, 1, 1], &[2.0]), ReluRule::Gradient, Some(&mut pg));
        assert_eq!(pg, vec![2.0, 4.0, 6.0, 8.0, 2.0]);
    }

    #[test]
    fn softmax_backward_is_jacobian_product() {
        let z = Tensor::from_vec(vec![0.3, -1.2, 2.0]);
        let s = Layer::SoftmaxOutput.forward(&z);
        let g = Layer::SoftmaxOutput.backward(&z, &s, &Tensor::from_vec(vec![1.0, 0.0, 0.0]), ReluRule::Gradient, None);
        let sd = s.data();
        let expected = [sd[0] * (1.0 - sd[0]), -sd[0] * sd[1], -sd[0] * sd[2]];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shapes_that_do_not_compose_are_rejected() {
        assert_eq!(Layer::Dense(Dense::zeros(3, 2)).output_shape(&[4]), None);
        assert_eq!(
            Layer::Conv2d(Conv2d::zeros(3, 2, 3, 1, 0)).output_shape(&[5, 5, 1]),
            None
        );
        assert_eq!(Layer::SoftmaxOutput.output_shape(&[2, 2, 1]), None);
    }
}
