//! Minimal trainable convolutional network: forward inference,
//! backpropagation and plain SGD, enough to realize the patch classifier
//! (three 3×3 conv + 2×2 max-pool + ReLU stages, a 128-unit dense layer
//! with dropout, and a softmax head over two classes).

mod serial;
mod train;

pub use train::{train, TrainConfig};

use rand::Rng;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of output classes of the patch classifier.
pub const NUM_CLASSES: usize = 2;
/// Class index of the positive (nerve) class.
pub const NERVE_CLASS: usize = 1;

/// 3×3 convolution with zero same-padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel weights, `[out, in, 3, 3]` row-major.
    pub weights: Tensor,
    pub biases: Vec<f64>,
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_size: usize,
    pub out_size: usize,
    /// Weights, `[out, in]` row-major.
    pub weights: Tensor,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    ReLU,
    /// 2×2 max-pooling with stride 2.
    MaxPool,
    Flatten,
    Dense(DenseLayer),
    /// Inverted dropout: active only in train mode, identity at inference.
    Dropout(f64),
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::ReLU => "relu",
            Layer::MaxPool => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Dropout(_) => "dropout",
        }
    }
}

/// Execution mode for a forward/backward pass.
pub enum Mode<'a> {
    /// Dropout is the identity; the pass is a pure function.
    Infer,
    /// Dropout masks units at its configured rate, scaling survivors by
    /// 1/(1−rate); the mask is drawn from the supplied generator.
    Train { rng: &'a mut dyn RngCore },
}

/// Parameter gradients for one layer (conv or dense).
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub biases: Vec<f64>,
}

/// Gradient set aligned with a network's layer list; `None` for layers
/// without parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrads>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape {
                layer: "gradients".into(),
                detail: "layer counts differ".into(),
            });
        }
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            match (a, b) {
                (Some(ga), Some(gb)) => {
                    for (x, y) in ga.weights.data_mut().iter_mut().zip(gb.weights.data()) {
                        *x += y;
                    }
                    for (x, y) in ga.biases.iter_mut().zip(gb.biases.iter()) {
                        *x += y;
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::Shape {
                        layer: "gradients".into(),
                        detail: "parameter layout differs".into(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.layers.iter_mut().flatten() {
            for x in g.weights.data_mut() {
                *x *= s;
            }
            for x in g.biases.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// Ordered layer stack ending in a softmax over the final dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of empty vector".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// Glorot-uniform bound for a parameter tensor.
fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn init_uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 * bound - bound).collect()
}

impl Network {
    /// Builds the 64×64 grayscale patch classifier:
    /// conv 1→8, 8→16, 16→32 (each ReLU + 2×2 pool), dense 2048→128,
    /// ReLU, dropout, dense 128→2.
    pub fn patch_classifier(seed: u64, dropout_rate: f64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let widths = [(1usize, 8usize), (8, 16), (16, 32)];
        for &(ic, oc) in &widths {
            layers.push(Layer::Conv(Self::conv_init(&mut rng, ic, oc)));
            layers.push(Layer::ReLU);
            layers.push(Layer::MaxPool);
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense(Self::dense_init(&mut rng, 32 * 8 * 8, 128)));
        layers.push(Layer::ReLU);
        layers.push(Layer::Dropout(dropout_rate));
        layers.push(Layer::Dense(Self::dense_init(&mut rng, 128, NUM_CLASSES)));
        Network { layers }
    }

    pub fn conv_init(rng: &mut ChaCha8Rng, in_channels: usize, out_channels: usize) -> ConvLayer {
        let bound = glorot(in_channels * 9, out_channels * 9);
        let weights = Tensor::from_vec(
            &[out_channels, in_channels, 3, 3],
            init_uniform(rng, out_channels * in_channels * 9, bound),
        )
        .expect("conv weight dims");
        ConvLayer { in_channels, out_channels, weights, biases: vec![0.0; out_channels] }
    }

    pub fn dense_init(rng: &mut ChaCha8Rng, in_size: usize, out_size: usize) -> DenseLayer {
        let bound = glorot(in_size, out_size);
        let weights =
            Tensor::from_vec(&[out_size, in_size], init_uniform(rng, out_size * in_size, bound))
                .expect("dense weight dims");
        DenseLayer { in_size, out_size, weights, biases: vec![0.0; out_size] }
    }

    /// Number of classes of the softmax head (out size of the last dense layer).
    pub fn num_classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.out_size),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// Forward pass returning the softmax class probabilities.
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<Vec<f64>> {
        let (probs, _, _) = self.forward_cached(input, mode)?;
        Ok(probs)
    }

    /// Forward pass in inference mode (pure function of `(self, input)`).
    pub fn infer(&self, input: &Tensor) -> Result<Vec<f64>> {
        self.forward(input, Mode::Infer)
    }

    fn shape_err(&self, idx: usize, detail: String) -> Error {
        Error::Shape { layer: format!("layer {} ({})", idx, self.layers[idx].kind()), detail }
    }

    fn forward_cached(
        &self,
        input: &Tensor,
        mut mode: Mode,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<LayerCache>)> {
        let mut cur = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, cache) = match layer {
                Layer::Conv(conv) => {
                    let dims = cur.dims();
                    if dims.len() != 3 || dims[0] != conv.in_channels {
                        return Err(self.shape_err(
                            i,
                            format!("expected [{}, h, w] input, got {:?}", conv.in_channels, dims),
                        ));
                    }
                    let out = conv_forward(conv, &cur);
                    (out, LayerCache::Conv { input: cur })
                }
                Layer::ReLU => {
                    let mut out = cur.clone();
                    for v in out.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    (out, LayerCache::ReLU { input: cur })
                }
                Layer::MaxPool => {
                    let dims = cur.dims();
                    if dims.len() != 3 || dims[1] < 2 || dims[2] < 2 {
                        return Err(self.shape_err(
                            i,
                            format!("expected [c, h≥2, w≥2] input, got {:?}", dims),
                        ));
                    }
                    let (out, argmax) = pool_forward(&cur);
                    (out, LayerCache::MaxPool { input_dims: dims.to_vec(), argmax })
                }
                Layer::Flatten => {
                    let dims = cur.dims().to_vec();
                    let len = cur.len();
                    (cur.clone().reshaped(&[len])?, LayerCache::Flatten { input_dims: dims })
                }
                Layer::Dense(dense) => {
                    if cur.dims().len() != 1 || cur.len() != dense.in_size {
                        return Err(self.shape_err(
                            i,
                            format!(
                                "expected flat vector of {} values, got {:?}",
                                dense.in_size,
                                cur.dims()
                            ),
                        ));
                    }
                    let out = dense_forward(dense, &cur);
                    (out, LayerCache::Dense { input: cur })
                }
                Layer::Dropout(rate) => match &mut mode {
                    Mode::Infer => (cur, LayerCache::Dropout { mask: None }),
                    Mode::Train { rng } => {
                        let keep = 1.0 - *rate;
                        let mask: Vec<f64> = (0..cur.len())
                            .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { 1.0 / keep })
                            .collect();
                        let mut out = cur;
                        for (v, m) in out.data_mut().iter_mut().zip(mask.iter()) {
                            *v *= m;
                        }
                        (out, LayerCache::Dropout { mask: Some(mask) })
                    }
                },
            };
            caches.push(cache);
            cur = next;
        }
        if cur.dims().len() != 1 {
            return Err(Error::Shape {
                layer: "output".into(),
                detail: format!("network output is not a vector: {:?}", cur.dims()),
            });
        }
        let logits = cur.data().to_vec();
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite network output".into()));
        }
        let probs = softmax(&logits)?;
        Ok((probs, logits, caches))
    }

    /// Backpropagation of the cross-entropy loss for `target_class`, with
    /// dropout inactive (deterministic). Returns the parameter gradients and
    /// the scalar loss.
    pub fn backward(&self, input: &Tensor, target_class: usize) -> Result<(Gradients, f64)> {
        self.backward_with_mode(input, target_class, Mode::Infer)
    }

    /// As [`Network::backward`] but with an explicit mode, so training can
    /// draw per-sample dropout masks.
    pub fn backward_with_mode(
        &self,
        input: &Tensor,
        target_class: usize,
        mode: Mode,
    ) -> Result<(Gradients, f64)> {
        let k = self.num_classes();
        if target_class >= k {
            return Err(Error::InvalidInput(format!(
                "target class {target_class} out of range for {k} classes"
            )));
        }
        let (probs, _logits, caches) = self.forward_cached(input, mode)?;
        let loss = -probs[target_class].max(1e-300).ln();

        // Softmax + cross-entropy gradient at the logits.
        let mut delta_data: Vec<f64> = probs;
        delta_data[target_class] -= 1.0;
        let mut delta = Tensor::from_vec(&[delta_data.len()], delta_data)?;

        let mut grads: Vec<Option<ParamGrads>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[i];
            delta = match (layer, cache) {
                (Layer::Conv(conv), LayerCache::Conv { input }) => {
                    let (d_in, pg) = conv_backward(conv, input, &delta);
                    grads[i] = Some(pg);
                    d_in
                }
                (Layer::ReLU, LayerCache::ReLU { input }) => {
                    let mut d = delta;
                    for (g, &x) in d.data_mut().iter_mut().zip(input.data()) {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    d
                }
                (Layer::MaxPool, LayerCache::MaxPool { input_dims, argmax }) => {
                    let mut d_in = Tensor::zeros(input_dims);
                    for (&idx, &g) in argmax.iter().zip(delta.data()) {
                        d_in.data_mut()[idx] += g;
                    }
                    d_in
                }
                (Layer::Flatten, LayerCache::Flatten { input_dims }) => {
                    delta.reshaped(input_dims)?
                }
                (Layer::Dense(dense), LayerCache::Dense { input }) => {
                    let (d_in, pg) = dense_backward(dense, input, &delta);
                    grads[i] = Some(pg);
                    d_in
                }
                (Layer::Dropout(_), LayerCache::Dropout { mask }) => {
                    let mut d = delta;
                    if let Some(mask) = mask {
                        for (g, m) in d.data_mut().iter_mut().zip(mask.iter()) {
                            *g *= m;
                        }
                    }
                    d
                }
                _ => unreachable!("cache misaligned with layer list"),
            };
        }
        debug_assert!(
            grads.iter().flatten().all(|g| g.weights.all_finite()
                && g.biases.iter().all(|b| b.is_finite())),
            "non-finite gradient"
        );
        if !loss.is_finite() {
            return Err(Error::InvalidInput("non-finite loss".into()));
        }
        Ok((Gradients { layers: grads }, loss))
    }

    /// One plain SGD step: every parameter `w` becomes `w − lr·g`.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape {
                layer: "gradients".into(),
                detail: format!(
                    "gradient set has {} layers, network has {}",
                    grads.layers.len(),
                    self.layers.len()
                ),
            });
        }
        for (i, (layer, grad)) in self.layers.iter_mut().zip(grads.layers.iter()).enumerate() {
            match (layer, grad) {
                (Layer::Conv(conv), Some(g)) => {
                    apply_step(&mut conv.weights, &mut conv.biases, g, learning_rate, i)?;
                }
                (Layer::Dense(dense), Some(g)) => {
                    apply_step(&mut dense.weights, &mut dense.biases, g, learning_rate, i)?;
                }
                (Layer::Conv(_), None) | (Layer::Dense(_), None) => {
                    return Err(Error::Shape {
                        layer: format!("layer {i}"),
                        detail: "missing gradient for parameterized layer".into(),
                    });
                }
                (_, Some(_)) => {
                    return Err(Error::Shape {
                        layer: format!("layer {i}"),
                        detail: "gradient supplied for parameterless layer".into(),
                    });
                }
                (_, None) => {}
            }
        }
        Ok(())
    }
}

fn apply_step(
    weights: &mut Tensor,
    biases: &mut [f64],
    g: &ParamGrads,
    lr: f64,
    idx: usize,
) -> Result<()> {
    if weights.dims() != g.weights.dims() || biases.len() != g.biases.len() {
        return Err(Error::Shape {
            layer: format!("layer {idx}"),
            detail: format!(
                "gradient dims {:?}/{} do not match parameter dims {:?}/{}",
                g.weights.dims(),
                g.biases.len(),
                weights.dims(),
                biases.len()
            ),
        });
    }
    for (w, gw) in weights.data_mut().iter_mut().zip(g.weights.data()) {
        *w -= lr * gw;
    }
    for (b, gb) in biases.iter_mut().zip(g.biases.iter()) {
        *b -= lr * gb;
    }
    Ok(())
}

enum LayerCache {
    Conv { input: Tensor },
    ReLU { input: Tensor },
    MaxPool { input_dims: Vec<usize>, argmax: Vec<usize> },
    Flatten { input_dims: Vec<usize> },
    Dense { input: Tensor },
    Dropout { mask: Option<Vec<f64>> },
}

/// 3×3 same-padded convolution, shift-and-accumulate over row slices.
fn conv_forward(conv: &ConvLayer, input: &Tensor) -> Tensor {
    let (h, w) = (input.dims()[1], input.dims()[2]);
    let mut out = Tensor::zeros(&[conv.out_channels, h, w]);
    for oc in 0..conv.out_channels {
        let bias = conv.biases[oc];
        for y in 0..h {
            out.row_mut(oc, y, h, w).fill(bias);
        }
        for ic in 0..conv.in_channels {
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let wv = conv.weights.data()[((oc * conv.in_channels + ic) * 3 + ky) * 3 + kx];
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy.max(0)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx.max(0)) as usize;
                    for y in y0..y1 {
                        let src_row = input.row(ic, (y as isize + dy) as usize, h, w);
                        let src = &src_row[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                        let dst = &mut out.row_mut(oc, y, h, w)[x0..x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(conv: &ConvLayer, input: &Tensor, d_out: &Tensor) -> (Tensor, ParamGrads) {
    let (h, w) = (input.dims()[1], input.dims()[2]);
    let mut d_in = Tensor::zeros(&[conv.in_channels, h, w]);
    let mut d_w = Tensor::zeros(&[conv.out_channels, conv.in_channels, 3, 3]);
    let mut d_b = vec![0.0; conv.out_channels];
    for oc in 0..conv.out_channels {
        for y in 0..h {
            d_b[oc] += d_out.row(oc, y, h, w).iter().sum::<f64>();
        }
        for ic in 0..conv.in_channels {
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let widx = ((oc * conv.in_channels + ic) * 3 + ky) * 3 + kx;
                    let wv = conv.weights.data()[widx];
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy.max(0)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx.max(0)) as usize;
                    let mut wsum = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let sx1 = (x1 as isize + dx) as usize;
                        let g_row = &d_out.row(oc, y, h, w)[x0..x1];
                        {
                            let in_row = &input.row(ic, iy, h, w)[sx0..sx1];
                            for (g, s) in g_row.iter().zip(in_row) {
                                wsum += g * s;
                            }
                        }
                        let din_row = &mut d_in.row_mut(ic, iy, h, w)[sx0..sx1];
                        for (d, g) in din_row.iter_mut().zip(g_row) {
                            *d += wv * g;
                        }
                    }
                    d_w.data_mut()[widx] = wsum;
                }
            }
        }
    }
    (d_in, ParamGrads { weights: d_w, biases: d_b })
}

/// 2×2 stride-2 max pooling; returns the output and per-cell flat argmax
/// indices into the input for gradient routing.
fn pool_forward(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0usize; c * oh * ow];
    let data = input.data();
    for ch in 0..c {
        for oy in 0..oh {
            let base0 = (ch * h + 2 * oy) * w;
            let base1 = base0 + w;
            for ox in 0..ow {
                let i00 = base0 + 2 * ox;
                let i01 = i00 + 1;
                let i10 = base1 + 2 * ox;
                let i11 = i10 + 1;
                let mut best = i00;
                if data[i01] > data[best] {
                    best = i01;
                }
                if data[i10] > data[best] {
                    best = i10;
                }
                if data[i11] > data[best] {
                    best = i11;
                }
                let o = (ch * oh + oy) * ow + ox;
                out.data_mut()[o] = data[best];
                argmax[o] = best;
            }
        }
    }
    (out, argmax)
}

fn dense_forward(dense: &DenseLayer, input: &Tensor) -> Tensor {
    let x = input.data();
    let mut out = Tensor::zeros(&[dense.out_size]);
    for o in 0..dense.out_size {
        let row = &dense.weights.data()[o * dense.in_size..(o + 1) * dense.in_size];
        let mut acc = dense.biases[o];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out.data_mut()[o] = acc;
    }
    out
}

fn dense_backward(dense: &DenseLayer, input: &Tensor, d_out: &Tensor) -> (Tensor, ParamGrads) {
    let x = input.data();
    let g = d_out.data();
    let mut d_w = Tensor::zeros(&[dense.out_size, dense.in_size]);
    let mut d_in = Tensor::zeros(&[dense.in_size]);
    for o in 0..dense.out_size {
        let go = g[o];
        let w_row = &dense.weights.data()[o * dense.in_size..(o + 1) * dense.in_size];
        let dw_row = &mut d_w.data_mut()[o * dense.in_size..(o + 1) * dense.in_size];
        for i in 0..dense.in_size {
            dw_row[i] = go * x[i];
        }
        for (d, wv) in d_in.data_mut().iter_mut().zip(w_row) {
            *d += go * wv;
        }
    }
    (d_in, ParamGrads { weights: d_w, biases: g.to_vec() })
}
