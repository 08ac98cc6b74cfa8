use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::layer::{LayerKind, LayerSpec};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::seed;

/// Parameter tensors in layer order: `[weight, bias]` for every dense or
/// conv layer, nothing for activation layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub seed: u64,
    pub tensors: Vec<Tensor>,
}

/// Gradients with the same layout as [`NetworkParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients { tensors: params.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect() }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.values_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.values_mut().iter_mut().zip(b.values()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.values()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Cached intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `outputs[0]` is the network input, `outputs[i + 1]` the output of layer `i`.
    outputs: Vec<Tensor>,
    pre: Vec<Vec<f64>>,
    cols: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        self.outputs.last().expect("activations always hold the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.outputs[0]
    }

    /// Pre-activation values of layer `i`.
    pub fn pre_activation(&self, i: usize) -> &[f64] {
        &self.pre[i]
    }

    /// Input tensor seen by layer `i`.
    pub fn layer_input(&self, i: usize) -> &Tensor {
        &self.outputs[i]
    }
}

/// Where the incoming loss gradient attaches.
#[derive(Debug, Clone, Copy)]
pub enum OutputGrad<'a> {
    /// Gradient with respect to the network output.
    Output(&'a Tensor),
    /// Gradient with respect to the last layer's pre-activation, e.g. the
    /// `p - y` shortcut for a logistic output under cross-entropy.
    PreActivation(&'a Tensor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: NetworkParams,
}

impl Network {
    /// Builds a network with seeded Glorot-uniform weights and zero biases.
    pub fn new(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        LayerSpec::validate_chain(&layers)?;
        let mut rng = seed::rng(seed);
        let mut tensors = Vec::new();
        for spec in layers.iter().filter(|s| s.has_params()) {
            let bound = spec.init_bound();
            let shape = spec.weight_shape();
            let n: usize = shape.iter().product();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            tensors.push(Tensor::from_raw(shape, w));
            tensors.push(Tensor::zeros(vec![spec.fan_out]));
        }
        Ok(Network { layers, params: NetworkParams { seed, tensors } })
    }

    pub fn from_parts(layers: Vec<LayerSpec>, params: NetworkParams) -> Result<Self> {
        LayerSpec::validate_chain(&layers)?;
        let mut it = params.tensors.iter();
        for spec in layers.iter().filter(|s| s.has_params()) {
            let (w, b) = (it.next(), it.next());
            match (w, b) {
                (Some(w), Some(b)) if w.shape() == spec.weight_shape() && b.shape() == [spec.fan_out] => {}
                _ => return Err(shape_err!("parameters do not match layer {spec:?}")),
            }
        }
        if it.next().is_some() {
            return Err(shape_err!("more parameter tensors than layers need"));
        }
        Ok(Network { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn param_count(&self) -> usize {
        self.params.tensors.iter().map(Tensor::len).sum()
    }

    fn slots(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.layers
            .iter()
            .map(|s| {
                s.has_params().then(|| {
                    next += 2;
                    next - 2
                })
            })
            .collect()
    }

    /// Runs the network and keeps every intermediate needed by [`backward`](Self::backward).
    pub fn forward(&self, input: &Tensor) -> Result<Activations> {
        let slots = self.slots();
        let mut acts = Activations {
            outputs: Vec::with_capacity(self.layers.len() + 1),
            pre: Vec::with_capacity(self.layers.len()),
            cols: Vec::with_capacity(self.layers.len()),
        };
        acts.outputs.push(input.clone());
        for (i, spec) in self.layers.iter().enumerate() {
            let x = &acts.outputs[i];
            let (pre, out, cols) = self.layer_forward(spec, slots[i], x, true)?;
            acts.pre.push(pre);
            acts.cols.push(cols);
            acts.outputs.push(out);
        }
        Ok(acts)
    }

    /// Forward pass without caching.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let slots = self.slots();
        let mut x = input.clone();
        for (i, spec) in self.layers.iter().enumerate() {
            let (_, out, _) = self.layer_forward(spec, slots[i], &x, false)?;
            x = out;
        }
        Ok(x)
    }

    fn layer_forward(
        &self,
        spec: &LayerSpec,
        slot: Option<usize>,
        x: &Tensor,
        keep: bool,
    ) -> Result<(Vec<f64>, Tensor, Vec<f64>)> {
        let (mut pre, out_shape, cols) = match spec.kind {
            LayerKind::Dense => {
                let n = dense_rows(x, spec.fan_in)?;
                let slot = slot.expect("dense layer has params");
                let w = self.params.tensors[slot].values();
                let b = self.params.tensors[slot + 1].values();
                let mut pre = vec![0.0; n * spec.fan_out];
                gemm(n, spec.fan_in, spec.fan_out, x.values(), (spec.fan_in, 1), w, (1, spec.fan_in), 0.0, &mut pre);
                for row in pre.chunks_exact_mut(spec.fan_out) {
                    row.iter_mut().zip(b).for_each(|(p, bi)| *p += bi);
                }
                let shape = if x.shape().len() == 1 { vec![spec.fan_out] } else { vec![n, spec.fan_out] };
                (pre, shape, Vec::new())
            }
            LayerKind::Conv3x3 => {
                let (h, w) = conv_dims(x, spec.fan_in)?;
                let slot = slot.expect("conv layer has params");
                let wt = self.params.tensors[slot].values();
                let b = self.params.tensors[slot + 1].values();
                let p = h * w;
                let k = spec.fan_in * 9;
                let cols = im2col(x.values(), spec.fan_in, h, w);
                let mut pre = vec![0.0; spec.fan_out * p];
                gemm(spec.fan_out, k, p, wt, (k, 1), &cols, (p, 1), 0.0, &mut pre);
                for (row, bi) in pre.chunks_exact_mut(p).zip(b) {
                    row.iter_mut().for_each(|v| *v += bi);
                }
                (pre, vec![spec.fan_out, h, w], if keep { cols } else { Vec::new() })
            }
            LayerKind::Activation => {
                let lead = match x.shape() {
                    [f] => *f,
                    [_, f] => *f,
                    [c, _, _] => *c,
                    s => return Err(shape_err!("activation layer cannot take shape {s:?}")),
                };
                if lead != spec.fan_in {
                    return Err(shape_err!("activation layer expects width {}, got {:?}", spec.fan_in, x.shape()));
                }
                (x.values().to_vec(), x.shape().to_vec(), Vec::new())
            }
        };
        let act = spec.activation;
        let out: Vec<f64> = pre.iter().map(|&z| act.apply(z)).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("activation of {:?} layer", spec.kind)));
        }
        if !keep {
            pre = Vec::new();
        }
        Ok((pre, Tensor::from_raw(out_shape, out), cols))
    }

    /// Backpropagates `grad` through the cached pass, accumulating parameter
    /// gradients into `grads`, and returns the gradient with respect to the input.
    pub fn backward_into(&self, acts: &Activations, grad: OutputGrad<'_>, grads: &mut Gradients) -> Result<Tensor> {
        if acts.pre.len() != self.layers.len() {
            return Err(shape_err!("activations come from a different network"));
        }
        if grads.tensors.len() != self.params.tensors.len() {
            return Err(shape_err!("gradient buffer does not match network parameters"));
        }
        let slots = self.slots();
        let last = self.layers.len() - 1;
        let (mut delta, mut delta_is_pre) = match grad {
            OutputGrad::Output(g) => (g.values().to_vec(), false),
            OutputGrad::PreActivation(g) => (g.values().to_vec(), true),
        };
        if delta.len() != acts.outputs[last + 1].len() {
            return Err(shape_err!(
                "loss gradient has {} values, network output has {}",
                delta.len(),
                acts.outputs[last + 1].len()
            ));
        }

        for i in (0..=last).rev() {
            let spec = &self.layers[i];
            let x = &acts.outputs[i];
            if !delta_is_pre {
                let out = acts.outputs[i + 1].values();
                for ((d, &z), &a) in delta.iter_mut().zip(&acts.pre[i]).zip(out) {
                    *d *= spec.activation.derivative(z, a);
                }
            }
            delta_is_pre = false;
            delta = match spec.kind {
                LayerKind::Dense => {
                    let slot = slots[i].expect("dense layer has params");
                    let n = dense_rows(x, spec.fan_in)?;
                    let (fi, fo) = (spec.fan_in, spec.fan_out);
                    gemm(fo, n, fi, &delta, (1, fo), x.values(), (fi, 1), 1.0, grads.tensors[slot].values_mut());
                    let db = grads.tensors[slot + 1].values_mut();
                    for row in delta.chunks_exact(fo) {
                        db.iter_mut().zip(row).for_each(|(b, d)| *b += d);
                    }
                    let mut dx = vec![0.0; n * fi];
                    gemm(n, fo, fi, &delta, (fo, 1), self.params.tensors[slot].values(), (fi, 1), 0.0, &mut dx);
                    dx
                }
                LayerKind::Conv3x3 => {
                    let slot = slots[i].expect("conv layer has params");
                    let (h, w) = conv_dims(x, spec.fan_in)?;
                    let p = h * w;
                    let k = spec.fan_in * 9;
                    let cols = &acts.cols[i];
                    gemm(spec.fan_out, p, k, &delta, (p, 1), cols, (1, p), 1.0, grads.tensors[slot].values_mut());
                    let db = grads.tensors[slot + 1].values_mut();
                    for (b, row) in db.iter_mut().zip(delta.chunks_exact(p)) {
                        *b += row.iter().sum::<f64>();
                    }
                    let mut dcols = vec![0.0; k * p];
                    gemm(k, spec.fan_out, p, self.params.tensors[slot].values(), (1, k), &delta, (p, 1), 0.0, &mut dcols);
                    col2im(&dcols, spec.fan_in, h, w)
                }
                LayerKind::Activation => delta,
            };
        }
        Ok(Tensor::from_raw(acts.outputs[0].shape().to_vec(), delta))
    }

    /// Parameter gradients and input gradient for `loss_gradient` (with
    /// respect to the network output).
    pub fn backward(&self, acts: &Activations, loss_gradient: &Tensor) -> Result<(Gradients, Tensor)> {
        let mut grads = Gradients::zeros_like(&self.params);
        let dx = self.backward_into(acts, OutputGrad::Output(loss_gradient), &mut grads)?;
        Ok((grads, dx))
    }
}

fn dense_rows(x: &Tensor, fan_in: usize) -> Result<usize> {
    match x.shape() {
        [f] if *f == fan_in => Ok(1),
        [n, f] if *f == fan_in => Ok(*n),
        s => Err(shape_err!("dense layer expects [n, {fan_in}], got {s:?}")),
    }
}

fn conv_dims(x: &Tensor, fan_in: usize) -> Result<(usize, usize)> {
    match x.shape() {
        [c, h, w] if *c == fan_in && *h > 0 && *w > 0 => Ok((*h, *w)),
        s => Err(shape_err!("conv3x3 layer expects [{fan_in}, h, w], got {s:?}")),
    }
}

/// Unfolds a `[c, h, w]` image into a `(c·9) × (h·w)` matrix of zero-padded
/// 3×3 neighbourhoods; row `ch·9 + ky·3 + kx` holds offset `(ky−1, kx−1)`.
fn im2col(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let p = h * w;
    let mut cols = vec![0.0; c * 9 * p];
    for ch in 0..c {
        let img = &x[ch * p..(ch + 1) * p];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * p..][..p];
                let x0 = 1usize.saturating_sub(kx);
                let x1 = (w + 1 - kx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w + x0 + kx - 1;
                    row[y * w + x0..y * w + x1].copy_from_slice(&img[src..src + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let p = h * w;
    let mut x = vec![0.0; c * p];
    for ch in 0..c {
        let img = &mut x[ch * p..(ch + 1) * p];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * p..][..p];
                let x0 = 1usize.saturating_sub(kx);
                let x1 = (w + 1 - kx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = sy as usize * w + x0 + kx - 1;
                    for (d, s) in img[dst..dst + (x1 - x0)].iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}
