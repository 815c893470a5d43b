//! Batched forward inference and reverse-mode differentiation.
//!
//! A single backward routine serves both uses: reprogramming only needs the
//! gradient with respect to the input, host training additionally asks for
//! weight gradients.

use super::layer::LayerSpec;
use super::model::HostModel;
use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

/// Activations cached by [`forward_batch`], consumed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f32> {
    model_id: u64,
    batch: usize,
    /// `activations[i]` is the input of layer `i`; the last entry is the logits.
    activations: Vec<Vec<T>>,
    /// Flat input index of the selected maximum for every maxpool output.
    argmax: Vec<Option<Vec<usize>>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    /// Cached input of layer `layer` (flattened over the batch).
    pub fn activation(&self, layer: usize) -> &[T] {
        &self.activations[layer]
    }

    pub fn logits(&self) -> &[T] {
        self.activations.last().unwrap()
    }

    /// Binary on/off pattern of every relu and the argmax choice of every
    /// maxpool. Two inputs with equal patterns lie in the same linear piece
    /// of the network.
    pub fn activation_pattern(&self, model: &HostModel<T>) -> Vec<u64> {
        let mut pattern = Vec::new();
        for (i, layer) in model.layers().iter().enumerate() {
            match layer.spec() {
                LayerSpec::Relu => pattern.extend(self.activations[i].iter().map(|&v| (v > T::zero()) as u64)),
                LayerSpec::Maxpool { .. } => pattern.extend(self.argmax[i].as_ref().unwrap().iter().map(|&j| j as u64)),
                _ => {}
            }
        }
        pattern
    }
}

/// Weight and bias gradients for each parameterized layer, in declaration
/// order (`None` for parameter-free layers).
pub type ParamGrads<T> = Vec<Option<(Tensor<T>, Tensor<T>)>>;

/// Forward pass on a single `[n, n, 3]` image.
pub fn forward<T: Real>(model: &HostModel<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    if x.shape() != model.input_shape() {
        return Err(Error::LayerShape {
            layer: 0,
            kind: model.layers()[0].spec().kind(),
            expected: format!("{:?}", model.input_shape()),
            got: x.shape().to_vec(),
        });
    }
    let mut batched = vec![1];
    batched.extend_from_slice(x.shape());
    let (logits, trace) = forward_batch(model, &x.clone().reshape(batched)?)?;
    Ok((logits.reshape(vec![model.num_labels()])?, trace))
}

/// Forward pass on a `[batch, n, n, 3]` tensor; returns `[batch, num_labels]`
/// logits and the trace needed for [`backward`].
pub fn forward_batch<T: Real>(model: &HostModel<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1..] != model.input_shape() {
        return Err(Error::LayerShape {
            layer: 0,
            kind: model.layers()[0].spec().kind(),
            expected: format!("[batch, {:?}]", model.input_shape()),
            got: shape.to_vec(),
        });
    }
    let batch = shape[0];
    let shapes = model.activation_shapes();
    let mut activations = Vec::with_capacity(shapes.len());
    let mut argmax = Vec::with_capacity(model.layers().len());
    activations.push(x.data().to_vec());

    for (i, layer) in model.layers().iter().enumerate() {
        let input = activations.last().unwrap();
        let in_shape = &shapes[i];
        let out_shape = &shapes[i + 1];
        let mut pool_choice = None;
        let output = match *layer.spec() {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let (w, b) = layer.params.as_ref().unwrap();
                let geom = ConvGeom::new(in_shape, out_shape, kernel, stride, padding);
                conv_forward(&geom, batch, input, w.data(), b.data())
            }
            LayerSpec::Relu => input.iter().map(|&v| v.max(T::zero())).collect(),
            LayerSpec::Maxpool { size, stride } => {
                let (out, choice) = maxpool_forward(batch, in_shape, out_shape, size, stride, input);
                pool_choice = Some(choice);
                out
            }
            LayerSpec::Flatten => input.clone(),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let (w, b) = layer.params.as_ref().unwrap();
                let mut out = Vec::with_capacity(batch * out_features);
                for _ in 0..batch {
                    out.extend_from_slice(b.data());
                }
                matmul(
                    batch,
                    in_features,
                    out_features,
                    input,
                    false,
                    w.data(),
                    true,
                    &mut out,
                    true,
                );
                out
            }
        };
        if matches!(layer.spec(), LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
            && !output.iter().all(|v| v.is_finite())
        {
            return Err(Error::NonFinite {
                layer: i,
                kind: layer.spec().kind(),
            });
        }
        argmax.push(pool_choice);
        activations.push(output);
    }

    let logits = Tensor::new(vec![batch, model.num_labels()], activations.last().unwrap().clone())?;
    let trace = ForwardTrace {
        model_id: model.id(),
        batch,
        activations,
        argmax,
    };
    Ok((logits, trace))
}

/// Gradient of `sum(logits * dlogits)` with respect to the `[n, n, 3]` input.
pub fn backward_to_input<T: Real>(
    model: &HostModel<T>,
    trace: &ForwardTrace<T>,
    dlogits: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (dx, _) = backward(model, trace, dlogits, false)?;
    if trace.batch == 1 && dlogits.shape().len() == 1 {
        return dx.reshape(model.input_shape().to_vec());
    }
    Ok(dx)
}

/// Reverse pass through the whole network.
///
/// `dlogits` is `[batch, num_labels]` (or `[num_labels]` for a batch of one).
/// Returns the input gradient `[batch, n, n, 3]` and, when `weight_grads` is
/// set, the parameter gradients summed over the batch.
pub fn backward<T: Real>(
    model: &HostModel<T>,
    trace: &ForwardTrace<T>,
    dlogits: &Tensor<T>,
    weight_grads: bool,
) -> Result<(Tensor<T>, Option<ParamGrads<T>>)> {
    if trace.model_id != model.id() || trace.activations.len() != model.layers().len() + 1 {
        return Err(Error::StaleTrace {
            trace: trace.model_id,
            model: model.id(),
        });
    }
    let batch = trace.batch;
    let expected = batch * model.num_labels();
    if dlogits.len() != expected {
        return Err(Error::Shape {
            expected: vec![batch, model.num_labels()],
            got: dlogits.shape().to_vec(),
        });
    }
    let shapes = model.activation_shapes();
    let mut grad: Vec<T> = dlogits.data().to_vec();
    let mut param_grads: ParamGrads<T> = vec![None; model.layers().len()];

    for (i, layer) in model.layers().iter().enumerate().rev() {
        let input = &trace.activations[i];
        let output = &trace.activations[i + 1];
        let in_shape = &shapes[i];
        let out_shape = &shapes[i + 1];
        grad = match *layer.spec() {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let (w, _) = layer.params.as_ref().unwrap();
                let geom = ConvGeom::new(in_shape, out_shape, kernel, stride, padding);
                if weight_grads {
                    param_grads[i] = Some(conv_param_grads(&geom, batch, input, &grad));
                }
                conv_backward_input(&geom, batch, w.data(), &grad)
            }
            LayerSpec::Relu => {
                for (g, &o) in grad.iter_mut().zip(output) {
                    if o <= T::zero() {
                        *g = T::zero();
                    }
                }
                grad
            }
            LayerSpec::Maxpool { .. } => {
                let mut dx = vec![T::zero(); input.len()];
                for (&g, &j) in grad.iter().zip(trace.argmax[i].as_ref().unwrap()) {
                    dx[j] = dx[j] + g;
                }
                dx
            }
            LayerSpec::Flatten => grad,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let (w, _) = layer.params.as_ref().unwrap();
                if weight_grads {
                    let mut dw = vec![T::zero(); out_features * in_features];
                    matmul(
                        out_features,
                        batch,
                        in_features,
                        &grad,
                        true,
                        input,
                        false,
                        &mut dw,
                        false,
                    );
                    let db = column_sums(&grad, out_features);
                    param_grads[i] = Some((
                        Tensor::new(vec![out_features, in_features], dw)?,
                        Tensor::new(vec![out_features], db)?,
                    ));
                }
                let mut dx = vec![T::zero(); batch * in_features];
                matmul(
                    batch,
                    out_features,
                    in_features,
                    &grad,
                    false,
                    w.data(),
                    false,
                    &mut dx,
                    false,
                );
                dx
            }
        };
    }

    let mut shape = vec![batch];
    shape.extend_from_slice(&model.input_shape());
    let dx = Tensor::new(shape, grad)?;
    Ok((dx, weight_grads.then_some(param_grads)))
}

/// Numerically stable softmax of a logit vector (max subtraction).
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    softmax_in_place(out.data_mut());
    out
}

/// Row-wise softmax of a `[batch, classes]` tensor.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = *logits.shape().last().unwrap();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn column_sums<T: Real>(rows: &[T], width: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); width];
    for row in rows.chunks(width) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s = *s + v;
        }
    }
    sums
}

struct ConvGeom {
    in_h: usize,
    in_w: usize,
    in_c: usize,
    out_h: usize,
    out_w: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(input: &[usize], output: &[usize], kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeom {
            in_h: input[0],
            in_w: input[1],
            in_c: input[2],
            out_h: output[0],
            out_w: output[1],
            out_c: output[2],
            kernel,
            stride,
            padding,
        }
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    fn rows(&self, batch: usize) -> usize {
        batch * self.out_h * self.out_w
    }

    /// Images per im2col block, sized so a block's patch matrix stays around
    /// a few megabytes.
    fn block(&self, batch: usize) -> usize {
        let per_image = self.out_h * self.out_w * self.patch_len();
        ((1 << 20) / per_image.max(1)).clamp(1, batch.max(1))
    }

    /// Visits every (patch offset, input offset) pair of one image whose
    /// source pixel lies inside the image. Offsets address runs of `in_c`
    /// contiguous channels.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let k = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = oy * self.out_w + ox;
                for ky in 0..self.kernel {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    if iy < 0 || iy >= self.in_h as isize {
                        continue;
                    }
                    for kx in 0..self.kernel {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        if ix < 0 || ix >= self.in_w as isize {
                            continue;
                        }
                        let col = row * k + (ky * self.kernel + kx) * self.in_c;
                        let src = (iy as usize * self.in_w + ix as usize) * self.in_c;
                        f(col, src);
                    }
                }
            }
        }
    }

    fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w * self.out_c
    }
}

/// Patch matrix of consecutive images `input` into `cols` (fully overwritten).
fn im2col<T: Real>(geom: &ConvGeom, input: &[T], cols: &mut Vec<T>) {
    let c = geom.in_c;
    let images = input.len() / geom.in_len();
    let per = geom.rows(1) * geom.patch_len();
    cols.clear();
    cols.resize(images * per, T::zero());
    for (img, out) in input.chunks(geom.in_len()).zip(cols.chunks_mut(per)) {
        geom.for_each_tap(|dst, src| {
            out[dst..dst + c].copy_from_slice(&img[src..src + c]);
        });
    }
}

fn conv_forward<T: Real>(geom: &ConvGeom, batch: usize, input: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let m = geom.rows(batch);
    let mut out = Vec::with_capacity(m * geom.out_c);
    for _ in 0..m {
        out.extend_from_slice(b);
    }
    let block = geom.block(batch);
    let mut cols = Vec::new();
    for (x, y) in input
        .chunks(block * geom.in_len())
        .zip(out.chunks_mut(block * geom.out_len()))
    {
        im2col(geom, x, &mut cols);
        let rows = y.len() / geom.out_c;
        matmul(rows, geom.patch_len(), geom.out_c, &cols, false, w, false, y, true);
    }
    out
}

fn conv_backward_input<T: Real>(geom: &ConvGeom, batch: usize, w: &[T], dout: &[T]) -> Vec<T> {
    let k = geom.patch_len();
    let c = geom.in_c;
    let block = geom.block(batch);
    let mut dx = vec![T::zero(); batch * geom.in_len()];
    let mut dcols = Vec::new();
    for (g, d) in dout
        .chunks(block * geom.out_len())
        .zip(dx.chunks_mut(block * geom.in_len()))
    {
        let rows = g.len() / geom.out_c;
        dcols.clear();
        dcols.resize(rows * k, T::zero());
        matmul(rows, geom.out_c, k, g, false, w, true, &mut dcols, false);
        let per = geom.rows(1) * k;
        for (img, cols) in d.chunks_mut(geom.in_len()).zip(dcols.chunks(per)) {
            geom.for_each_tap(|col, dst| {
                for (v, &g) in img[dst..dst + c].iter_mut().zip(&cols[col..col + c]) {
                    *v = *v + g;
                }
            });
        }
    }
    dx
}

fn conv_param_grads<T: Real>(geom: &ConvGeom, batch: usize, input: &[T], dout: &[T]) -> (Tensor<T>, Tensor<T>) {
    let k = geom.patch_len();
    let block = geom.block(batch);
    let mut dw = vec![T::zero(); k * geom.out_c];
    let mut cols = Vec::new();
    for (x, g) in input
        .chunks(block * geom.in_len())
        .zip(dout.chunks(block * geom.out_len()))
    {
        im2col(geom, x, &mut cols);
        let rows = g.len() / geom.out_c;
        matmul(k, rows, geom.out_c, &cols, true, g, false, &mut dw, true);
    }
    let db = column_sums(dout, geom.out_c);
    (
        Tensor::new(vec![geom.kernel, geom.kernel, geom.in_c, geom.out_c], dw).unwrap(),
        Tensor::new(vec![geom.out_c], db).unwrap(),
    )
}

/// Ties go to the first maximum in row-major window order.
fn maxpool_forward<T: Real>(
    batch: usize,
    in_shape: &[usize],
    out_shape: &[usize],
    size: usize,
    stride: usize,
    input: &[T],
) -> (Vec<T>, Vec<usize>) {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let n_out = batch * oh * ow * c;
    let mut out = vec![T::zero(); n_out];
    let mut choice = vec![0usize; n_out];
    for ((o, ch), pos) in out
        .chunks_mut(c)
        .zip(choice.chunks_mut(c))
        .zip((0..batch).flat_map(|b| (0..oh).flat_map(move |oy| (0..ow).map(move |ox| (b, oy, ox)))))
    {
        let (b, oy, ox) = pos;
        let base = b * h * w * c;
        for dy in 0..size {
            for dx in 0..size {
                let j = base + ((oy * stride + dy) * w + ox * stride + dx) * c;
                let window = &input[j..j + c];
                if dy == 0 && dx == 0 {
                    o.copy_from_slice(window);
                    for (k, slot) in ch.iter_mut().enumerate() {
                        *slot = j + k;
                    }
                    continue;
                }
                for (k, ((best, slot), &v)) in o.iter_mut().zip(ch.iter_mut()).zip(window).enumerate() {
                    if v > *best {
                        *best = v;
                        *slot = j + k;
                    }
                }
            }
        }
    }
    (out, choice)
}
