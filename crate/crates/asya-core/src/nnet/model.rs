//! Sequential layer-stack model with reverse-mode gradients.
//!
//! The layer set is deliberately small: valid-padding strided conv2d, dense,
//! relu, global average pooling, l2 normalization and softmax. Every layer
//! has a hand-derived backward pass that is finite-difference checked in the
//! test suite.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nnet::Tensor;

/// One layer descriptor. Parameterized layers carry a name; their tensors are
/// stored in the model under `{name}.w` / `{name}.b`.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        name: String,
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    GlobalAvgPool,
    L2Normalize,
    Softmax,
}

impl Layer {
    pub fn conv2d(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Layer {
        Layer::Conv2d {
            name: name.to_string(),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    pub fn dense(name: &str, in_dim: usize, out_dim: usize) -> Layer {
        Layer::Dense {
            name: name.to_string(),
            in_dim,
            out_dim,
        }
    }

    fn param_name(&self) -> Option<&str> {
        match self {
            Layer::Conv2d { name, .. } | Layer::Dense { name, .. } => Some(name),
            _ => None,
        }
    }
}

/// A named parameter tensor; frozen parameters are skipped by backward and
/// left untouched by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Cached per-layer inputs from a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    layer_inputs: Vec<Tensor>,
    output: Tensor,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

/// Parameter gradients plus the gradient with respect to the model input
/// (needed to chain models, e.g. a classification head on a frozen trunk).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: BTreeMap<String, Tensor>,
    pub input: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<Layer>,
    params: BTreeMap<String, Param>,
    rng_seed: u64,
    trace: Option<ForwardTrace>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        // The cached forward trace is transient state, not part of identity.
        self.layers == other.layers
            && self.params == other.params
            && self.rng_seed == other.rng_seed
    }
}

impl Model {
    /// Build a model and initialize its parameters from `rng_seed`
    /// (He-uniform weights, zero biases).
    pub fn new(layers: Vec<Layer>, rng_seed: u64) -> Result<Model> {
        validate_chain(&layers)?;
        let mut names = std::collections::BTreeSet::new();
        for layer in &layers {
            if let Some(name) = layer.param_name() {
                if !names.insert(name.to_string()) {
                    return Err(Error::config(format!("duplicate layer name `{name}`")));
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut params = BTreeMap::new();
        for layer in &layers {
            match layer {
                Layer::Conv2d {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let fan_in = in_ch * kernel * kernel;
                    let w = he_uniform(&mut rng, &[*out_ch, *in_ch, *kernel, *kernel], fan_in);
                    params.insert(format!("{name}.w"), Param { tensor: w, trainable: true });
                    params.insert(
                        format!("{name}.b"),
                        Param {
                            tensor: Tensor::zeros(&[*out_ch]),
                            trainable: true,
                        },
                    );
                }
                Layer::Dense { name, in_dim, out_dim } => {
                    let w = he_uniform(&mut rng, &[*out_dim, *in_dim], *in_dim);
                    params.insert(format!("{name}.w"), Param { tensor: w, trainable: true });
                    params.insert(
                        format!("{name}.b"),
                        Param {
                            tensor: Tensor::zeros(&[*out_dim]),
                            trainable: true,
                        },
                    );
                }
                _ => {}
            }
        }

        Ok(Model {
            layers,
            params,
            rng_seed,
            trace: None,
        })
    }

    /// Rebuild from parts, e.g. when loading a checkpoint.
    pub(crate) fn from_parts(
        layers: Vec<Layer>,
        params: BTreeMap<String, Param>,
        rng_seed: u64,
    ) -> Result<Model> {
        validate_chain(&layers)?;
        for layer in &layers {
            if let Some(name) = layer.param_name() {
                for suffix in ["w", "b"] {
                    let key = format!("{name}.{suffix}");
                    if !params.contains_key(&key) {
                        return Err(Error::Model(format!("missing parameter `{key}`")));
                    }
                }
            }
        }
        Ok(Model {
            layers,
            params,
            rng_seed,
            trace: None,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Param> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Param> {
        &mut self.params
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Mark every parameter trainable or frozen.
    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.params.values_mut() {
            p.trainable = trainable;
        }
    }

    /// Pure inference: no activation caching.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(input)?.output)
    }

    /// Forward pass that caches activations on the model for a subsequent
    /// [`Model::backward`].
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let trace = self.forward_traced(input)?;
        let out = trace.output.clone();
        self.trace = Some(trace);
        Ok(out)
    }

    /// Backward pass over the activations cached by the last [`Model::forward`].
    pub fn backward(&self, loss_grad: &Tensor) -> Result<Gradients> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        self.backward_traced(trace, loss_grad)
    }

    /// Forward pass returning the trace by value; lets training loops hold
    /// several traces at once (e.g. one per triplet element).
    pub fn forward_traced(&self, input: &Tensor) -> Result<ForwardTrace> {
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let next = self.apply_layer(layer, &current)?;
            layer_inputs.push(current);
            current = next;
        }
        Ok(ForwardTrace {
            layer_inputs,
            output: current,
        })
    }

    /// Reverse-mode pass over an explicit trace.
    pub fn backward_traced(&self, trace: &ForwardTrace, loss_grad: &Tensor) -> Result<Gradients> {
        if trace.layer_inputs.len() != self.layers.len() {
            return Err(Error::State(
                "forward trace does not match this model's layers".into(),
            ));
        }
        if loss_grad.shape() != trace.output.shape() {
            return Err(Error::Shape {
                expected: format!("{:?}", trace.output.shape()),
                actual: format!("{:?}", loss_grad.shape()),
            });
        }
        let mut param_grads = BTreeMap::new();
        let mut grad = loss_grad.clone();
        for (layer, input) in self.layers.iter().zip(&trace.layer_inputs).rev() {
            grad = self.backward_layer(layer, input, &grad, &mut param_grads)?;
        }
        Ok(Gradients {
            params: param_grads,
            input: grad,
        })
    }

    /// Run layers up to and including the first global-average-pool; the
    /// pooled vector is the feature interface shared with classifier heads.
    pub fn forward_pooled(&self, input: &Tensor) -> Result<Tensor> {
        let mut current = input.clone();
        for layer in &self.layers {
            current = self.apply_layer(layer, &current)?;
            if matches!(layer, Layer::GlobalAvgPool) {
                return Ok(current);
            }
        }
        Err(Error::Model(
            "model has no global-average-pool layer to take features from".into(),
        ))
    }

    fn param(&self, name: &str) -> &Tensor {
        &self.params[name].tensor
    }

    fn apply_layer(&self, layer: &Layer, input: &Tensor) -> Result<Tensor> {
        match layer {
            Layer::Conv2d {
                name,
                in_ch,
                out_ch,
                kernel,
                stride,
            } => conv2d_forward(
                input,
                self.param(&format!("{name}.w")),
                self.param(&format!("{name}.b")),
                *in_ch,
                *out_ch,
                *kernel,
                *stride,
            ),
            Layer::Dense { name, in_dim, out_dim } => dense_forward(
                input,
                self.param(&format!("{name}.w")),
                self.param(&format!("{name}.b")),
                *in_dim,
                *out_dim,
            ),
            Layer::Relu => {
                let mut out = input.clone();
                for v in out.data_mut() {
                    *v = v.max(0.0);
                }
                Ok(out)
            }
            Layer::GlobalAvgPool => gap_forward(input),
            Layer::L2Normalize => l2norm_forward(input),
            Layer::Softmax => {
                expect_rank1(input, "softmax")?;
                let out = crate::nnet::softmax(input.data());
                Tensor::from_vec(input.shape(), out)
            }
        }
    }

    fn backward_layer(
        &self,
        layer: &Layer,
        input: &Tensor,
        upstream: &Tensor,
        param_grads: &mut BTreeMap<String, Tensor>,
    ) -> Result<Tensor> {
        match layer {
            Layer::Conv2d {
                name,
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let w_name = format!("{name}.w");
                let b_name = format!("{name}.b");
                let (d_in, d_w, d_b) = conv2d_backward(
                    input,
                    self.param(&w_name),
                    *in_ch,
                    *out_ch,
                    *kernel,
                    *stride,
                    upstream,
                );
                self.record_grad(param_grads, w_name, d_w);
                self.record_grad(param_grads, b_name, d_b);
                Ok(d_in)
            }
            Layer::Dense { name, in_dim, out_dim } => {
                let w_name = format!("{name}.w");
                let b_name = format!("{name}.b");
                let (d_in, d_w, d_b) =
                    dense_backward(input, self.param(&w_name), *in_dim, *out_dim, upstream);
                self.record_grad(param_grads, w_name, d_w);
                self.record_grad(param_grads, b_name, d_b);
                Ok(d_in)
            }
            Layer::Relu => {
                let mut d_in = upstream.clone();
                for (g, x) in d_in.data_mut().iter_mut().zip(input.data()) {
                    if *x <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok(d_in)
            }
            Layer::GlobalAvgPool => gap_backward(input, upstream),
            Layer::L2Normalize => l2norm_backward(input, upstream),
            Layer::Softmax => {
                let y = crate::nnet::softmax(input.data());
                let weighted: f64 = y.iter().zip(upstream.data()).map(|(yi, gi)| yi * gi).sum();
                let d_in: Vec<f64> = y
                    .iter()
                    .zip(upstream.data())
                    .map(|(yi, gi)| yi * (gi - weighted))
                    .collect();
                Tensor::from_vec(input.shape(), d_in)
            }
        }
    }

    fn record_grad(&self, grads: &mut BTreeMap<String, Tensor>, name: String, grad: Tensor) {
        // Frozen parameters stay out of the gradient map entirely.
        if self.params[&name].trainable {
            grads.insert(name, grad);
        }
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("init shape is valid")
}

/// Static compatibility check over the layer chain; runtime shapes are
/// re-checked per input in forward.
fn validate_chain(layers: &[Layer]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::config("model needs at least one layer"));
    }
    // Width flowing through the chain: Spatial(channels) for conv feature
    // maps, Flat(dim) after pooling / for dense inputs.
    #[derive(Clone, Copy, PartialEq)]
    enum Width {
        Unknown,
        Spatial(usize),
        Flat(usize),
    }
    let mut width = Width::Unknown;
    for (i, layer) in layers.iter().enumerate() {
        width = match (layer, width) {
            (Layer::Conv2d { in_ch, out_ch, kernel, stride, .. }, w) => {
                if *kernel == 0 || *stride == 0 || *in_ch == 0 || *out_ch == 0 {
                    return Err(Error::config(format!("layer {i}: conv dims must be positive")));
                }
                match w {
                    Width::Unknown => Width::Spatial(*out_ch),
                    Width::Spatial(c) if c == *in_ch => Width::Spatial(*out_ch),
                    Width::Spatial(c) => {
                        return Err(Error::config(format!(
                            "layer {i}: conv expects {in_ch} channels but gets {c}"
                        )))
                    }
                    Width::Flat(_) => {
                        return Err(Error::config(format!(
                            "layer {i}: conv cannot follow a flat (pooled/dense) output"
                        )))
                    }
                }
            }
            (Layer::Dense { in_dim, out_dim, .. }, w) => {
                if *in_dim == 0 || *out_dim == 0 {
                    return Err(Error::config(format!("layer {i}: dense dims must be positive")));
                }
                match w {
                    Width::Unknown => Width::Flat(*out_dim),
                    Width::Flat(d) if d == *in_dim => Width::Flat(*out_dim),
                    Width::Flat(d) => {
                        return Err(Error::config(format!(
                            "layer {i}: dense expects {in_dim} inputs but gets {d}"
                        )))
                    }
                    Width::Spatial(_) => {
                        return Err(Error::config(format!(
                            "layer {i}: dense needs a flat input; pool the feature map first"
                        )))
                    }
                }
            }
            (Layer::GlobalAvgPool, w) => match w {
                Width::Unknown => Width::Unknown,
                Width::Spatial(c) => Width::Flat(c),
                Width::Flat(_) => {
                    return Err(Error::config(format!(
                        "layer {i}: global-average-pool needs a spatial input"
                    )))
                }
            },
            (Layer::Relu, w) => w,
            (Layer::L2Normalize | Layer::Softmax, w) => match w {
                Width::Spatial(_) => {
                    return Err(Error::config(format!(
                        "layer {i}: normalization layers need a flat input"
                    )))
                }
                other => other,
            },
        };
    }
    Ok(())
}

fn expect_rank1(t: &Tensor, what: &str) -> Result<()> {
    if t.shape().len() != 1 {
        return Err(Error::Shape {
            expected: format!("rank-1 input for {what}"),
            actual: format!("{:?}", t.shape()),
        });
    }
    Ok(())
}

fn conv_out_len(in_len: usize, kernel: usize, stride: usize) -> usize {
    (in_len - kernel) / stride + 1
}

fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 || shape[0] != in_ch || shape[1] < kernel || shape[2] < kernel {
        return Err(Error::Shape {
            expected: format!("[{in_ch}, >={kernel}, >={kernel}]"),
            actual: format!("{shape:?}"),
        });
    }
    let (h, w) = (shape[1], shape[2]);
    let (oh, ow) = (conv_out_len(h, kernel, stride), conv_out_len(w, kernel, stride));
    let x = input.data();
    let wts = weight.data();
    let b = bias.data();
    let mut out = vec![0.0; out_ch * oh * ow];
    for o in 0..out_ch {
        let out_plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[o];
                let iy0 = oy * stride;
                let ix0 = ox * stride;
                for i in 0..in_ch {
                    let w_base = ((o * in_ch + i) * kernel) * kernel;
                    let x_plane = &x[i * h * w..(i + 1) * h * w];
                    for dy in 0..kernel {
                        let x_row = &x_plane[(iy0 + dy) * w + ix0..(iy0 + dy) * w + ix0 + kernel];
                        let w_row = &wts[w_base + dy * kernel..w_base + (dy + 1) * kernel];
                        acc += x_row.iter().zip(w_row).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                out_plane[oy * ow + ox] = acc;
            }
        }
    }
    Tensor::from_vec(&[out_ch, oh, ow], out)
}

fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    upstream: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (oh, ow) = (conv_out_len(h, kernel, stride), conv_out_len(w, kernel, stride));
    let x = input.data();
    let wts = weight.data();
    let g = upstream.data();
    let mut d_in = vec![0.0; in_ch * h * w];
    let mut d_w = vec![0.0; out_ch * in_ch * kernel * kernel];
    let mut d_b = vec![0.0; out_ch];
    for o in 0..out_ch {
        let g_plane = &g[o * oh * ow..(o + 1) * oh * ow];
        d_b[o] += g_plane.iter().sum::<f64>();
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g_plane[oy * ow + ox];
                if gv == 0.0 {
                    continue;
                }
                let iy0 = oy * stride;
                let ix0 = ox * stride;
                for i in 0..in_ch {
                    let w_base = ((o * in_ch + i) * kernel) * kernel;
                    let x_base = i * h * w;
                    for dy in 0..kernel {
                        let row = (iy0 + dy) * w + ix0;
                        for dx in 0..kernel {
                            d_w[w_base + dy * kernel + dx] += gv * x[x_base + row + dx];
                            d_in[x_base + row + dx] += gv * wts[w_base + dy * kernel + dx];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(input.shape(), d_in).expect("conv d_in shape"),
        Tensor::from_vec(weight.shape(), d_w).expect("conv d_w shape"),
        Tensor::from_vec(&[out_ch], d_b).expect("conv d_b shape"),
    )
}

fn dense_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_dim: usize,
    out_dim: usize,
) -> Result<Tensor> {
    if input.shape() != [in_dim] {
        return Err(Error::Shape {
            expected: format!("[{in_dim}]"),
            actual: format!("{:?}", input.shape()),
        });
    }
    let x = input.data();
    let w = weight.data();
    let out: Vec<f64> = (0..out_dim)
        .map(|o| {
            bias.data()[o]
                + w[o * in_dim..(o + 1) * in_dim]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect();
    Tensor::from_vec(&[out_dim], out)
}

fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    in_dim: usize,
    out_dim: usize,
    upstream: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let x = input.data();
    let w = weight.data();
    let g = upstream.data();
    let mut d_in = vec![0.0; in_dim];
    let mut d_w = vec![0.0; out_dim * in_dim];
    for o in 0..out_dim {
        let gv = g[o];
        let w_row = &w[o * in_dim..(o + 1) * in_dim];
        let dw_row = &mut d_w[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            dw_row[i] = gv * x[i];
            d_in[i] += gv * w_row[i];
        }
    }
    (
        Tensor::from_vec(&[in_dim], d_in).expect("dense d_in shape"),
        Tensor::from_vec(weight.shape(), d_w).expect("dense d_w shape"),
        Tensor::from_vec(&[out_dim], g.to_vec()).expect("dense d_b shape"),
    )
}

fn gap_forward(input: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::Shape {
            expected: "[channels, height, width]".into(),
            actual: format!("{shape:?}"),
        });
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let out: Vec<f64> = (0..c)
        .map(|i| input.data()[i * plane..(i + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::from_vec(&[c], out)
}

fn gap_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let mut d_in = vec![0.0; c * plane];
    for i in 0..c {
        let g = upstream.data()[i] / plane as f64;
        for v in &mut d_in[i * plane..(i + 1) * plane] {
            *v = g;
        }
    }
    Tensor::from_vec(shape, d_in)
}

fn l2norm_forward(input: &Tensor) -> Result<Tensor> {
    expect_rank1(input, "l2-normalize")?;
    let norm = input.norm2();
    if norm < 1e-12 {
        return Err(Error::Model(
            "l2-normalize received a (numerically) zero vector".into(),
        ));
    }
    let out: Vec<f64> = input.data().iter().map(|v| v / norm).collect();
    Tensor::from_vec(input.shape(), out)
}

fn l2norm_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    let norm = input.norm2();
    if norm < 1e-12 {
        return Err(Error::Model(
            "l2-normalize received a (numerically) zero vector".into(),
        ));
    }
    let y: Vec<f64> = input.data().iter().map(|v| v / norm).collect();
    let proj: f64 = y.iter().zip(upstream.data()).map(|(yi, gi)| yi * gi).sum();
    let d_in: Vec<f64> = y
        .iter()
        .zip(upstream.data())
        .map(|(yi, gi)| (gi - yi * proj) / norm)
        .collect();
    Tensor::from_vec(input.shape(), d_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_passes_input_through() {
        let mut m = Model::new(vec![Layer::dense("fc", 3, 3)], 0).unwrap();
        let w = m.params_mut().get_mut("fc.w").unwrap();
        w.tensor = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let v = Tensor::vector(&[0.3, -1.2, 2.5]).unwrap();
        let out = m.predict(&v).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn conv_averaging_kernel_preserves_constants() {
        let mut m = Model::new(vec![Layer::conv2d("c", 1, 1, 3, 1)], 0).unwrap();
        m.params_mut().get_mut("c.w").unwrap().tensor =
            Tensor::from_vec(&[1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let input = Tensor::from_vec(&[1, 5, 6], vec![0.7; 30]).unwrap();
        let out = m.predict(&input).unwrap();
        assert_eq!(out.shape(), &[1, 3, 4]);
        for &v in out.data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_tail_yields_unit_norm() {
        let m = Model::new(
            vec![Layer::dense("fc", 4, 8), Layer::L2Normalize],
            3,
        )
        .unwrap();
        let out = m.predict(&Tensor::vector(&[0.1, -0.4, 2.0, 0.9]).unwrap()).unwrap();
        assert!((out.norm2() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let m = Model::new(vec![Layer::dense("fc", 4, 2)], 0).unwrap();
        let err = m.predict(&Tensor::vector(&[1.0, 2.0]).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[4]") && msg.contains("[2]"), "got: {msg}");
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let m = Model::new(vec![Layer::dense("fc", 2, 2)], 0).unwrap();
        let g = Tensor::vector(&[1.0, 0.0]).unwrap();
        assert!(matches!(m.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_param_gradients() {
        let mut m = Model::new(
            vec![Layer::dense("a", 3, 4), Layer::Relu, Layer::dense("b", 4, 2)],
            9,
        )
        .unwrap();
        m.forward(&Tensor::vector(&[0.5, -1.0, 2.0]).unwrap()).unwrap();
        let grads = m.backward(&Tensor::vector(&[0.0, 0.0]).unwrap()).unwrap();
        for (name, g) in &grads.params {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name} not zero");
        }
    }

    #[test]
    fn frozen_params_are_absent_from_gradients() {
        let mut m = Model::new(
            vec![Layer::dense("a", 3, 4), Layer::dense("b", 4, 2)],
            1,
        )
        .unwrap();
        m.params_mut().get_mut("a.w").unwrap().trainable = false;
        m.params_mut().get_mut("a.b").unwrap().trainable = false;
        m.forward(&Tensor::vector(&[1.0, 2.0, 3.0]).unwrap()).unwrap();
        let grads = m.backward(&Tensor::vector(&[1.0, -1.0]).unwrap()).unwrap();
        assert!(!grads.params.contains_key("a.w"));
        assert!(!grads.params.contains_key("a.b"));
        assert!(grads.params.contains_key("b.w"));
        assert!(grads.params.contains_key("b.b"));
    }

    #[test]
    fn chain_validation_catches_width_mismatch() {
        assert!(Model::new(
            vec![Layer::conv2d("a", 1, 4, 3, 1), Layer::conv2d("b", 8, 4, 3, 1)],
            0
        )
        .is_err());
        assert!(Model::new(
            vec![Layer::dense("a", 4, 8), Layer::dense("b", 4, 2)],
            0
        )
        .is_err());
        assert!(Model::new(
            vec![Layer::conv2d("a", 1, 4, 3, 1), Layer::dense("b", 4, 2)],
            0
        )
        .is_err());
    }

    #[test]
    fn duplicate_layer_names_rejected() {
        assert!(Model::new(
            vec![Layer::dense("fc", 2, 2), Layer::Relu, Layer::dense("fc", 2, 2)],
            0
        )
        .is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let layers = || vec![Layer::conv2d("c", 1, 4, 3, 2), Layer::GlobalAvgPool, Layer::dense("fc", 4, 2)];
        let a = Model::new(layers(), 42).unwrap();
        let b = Model::new(layers(), 42).unwrap();
        let c = Model::new(layers(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn forward_pooled_stops_at_gap() {
        let m = Model::new(
            vec![
                Layer::conv2d("c", 1, 6, 3, 2),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::dense("fc", 6, 2),
            ],
            5,
        )
        .unwrap();
        let input = Tensor::from_vec(&[1, 8, 9], vec![0.1; 72]).unwrap();
        let pooled = m.forward_pooled(&input).unwrap();
        assert_eq!(pooled.shape(), &[6]);
        let no_gap = Model::new(vec![Layer::dense("fc", 3, 2)], 0).unwrap();
        assert!(no_gap.forward_pooled(&Tensor::vector(&[1.0, 2.0, 3.0]).unwrap()).is_err());
    }
}
