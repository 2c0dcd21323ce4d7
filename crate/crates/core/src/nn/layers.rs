//! Forward passes and hand-derived backward passes per layer type.
//!
//! Activations are batch-major: a sequence activation is `batch × steps ×
//! channels`, a flat one `batch × features`, both row-major.

use super::spec::{conv_geometry, pool_bounds, Activation, LayerSpec, Shape};
use super::tensor::{gemm, MatRef, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub params: Vec<Tensor<T>>,
}

/// What a training forward pass keeps for the backward pass.
pub(crate) enum Cache<T> {
    None,
    Affine { input: Vec<T>, output: Vec<T> },
    Conv { patches: Vec<T>, output: Vec<T> },
    Lstm { input: Vec<T>, gates: Vec<T>, cells: Vec<T>, hidden: Vec<T> },
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn activate<T: Real>(act: Activation, v: &mut [T]) {
    match act {
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(T::zero())),
        Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        Activation::Linear => {}
    }
}

/// Multiplies `grad` by the activation derivative, expressed through the
/// activation output `out`.
fn activation_backward<T: Real>(act: Activation, out: &[T], grad: &mut [T]) {
    match act {
        Activation::Relu => {
            for (g, &y) in grad.iter_mut().zip(out) {
                if y <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        Activation::Tanh => {
            for (g, &y) in grad.iter_mut().zip(out) {
                *g = *g * (T::one() - y * y);
            }
        }
        Activation::Linear => {}
    }
}

fn add_bias<T: Real>(rows: &mut [T], bias: &[T]) {
    for row in rows.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

fn column_sums<T: Real>(rows: &[T], cols: usize, out: &mut [T]) {
    out.fill(T::zero());
    for row in rows.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

impl<T: Real> Layer<T> {
    /// Parameter tensor shapes for a layer with the given input shape.
    pub fn param_shapes(spec: &LayerSpec, input: Shape) -> Vec<Vec<usize>> {
        let in_ch = match input {
            Shape::Seq { channels, .. } => channels,
            Shape::Flat(n) => n,
        };
        match *spec {
            LayerSpec::Dense { units, .. }
            | LayerSpec::TimeDistributedDense { units, .. }
            | LayerSpec::SoftmaxOutput { classes: units } => vec![vec![in_ch, units], vec![units]],
            LayerSpec::Conv1d { filters, kernel_size, .. } => vec![vec![kernel_size, in_ch, filters], vec![filters]],
            LayerSpec::Lstm { units, .. } => vec![vec![in_ch, 4 * units], vec![units, 4 * units], vec![4 * units]],
            LayerSpec::Flatten | LayerSpec::AdaptiveAvgPool { .. } => vec![],
        }
    }

    /// Fan-in and fan-out used by Glorot initialization for parameter `i`,
    /// or `None` for biases.
    pub fn glorot_fans(spec: &LayerSpec, shape: &[usize]) -> Option<(usize, usize)> {
        match (spec, shape) {
            (LayerSpec::Conv1d { .. }, [k, c, f]) => Some((k * c, k * f)),
            (_, [a, b]) => Some((*a, *b)),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn steps(shape: Shape) -> usize {
        match shape {
            Shape::Seq { steps, .. } => steps,
            Shape::Flat(_) => 1,
        }
    }

    fn channels(shape: Shape) -> usize {
        match shape {
            Shape::Seq { channels, .. } => channels,
            Shape::Flat(n) => n,
        }
    }

    pub(crate) fn forward(&self, x: Vec<T>, batch: usize, keep: bool) -> (Vec<T>, Cache<T>) {
        debug_assert_eq!(x.len(), batch * self.input.size());
        match self.spec {
            LayerSpec::Dense { activation, .. } | LayerSpec::TimeDistributedDense { activation, .. } => {
                self.affine_forward(x, batch, activation, keep)
            }
            LayerSpec::SoftmaxOutput { .. } => self.affine_forward(x, batch, Activation::Linear, keep),
            LayerSpec::Flatten => (x, Cache::None),
            LayerSpec::AdaptiveAvgPool { .. } => (self.pool_forward(&x, batch), Cache::None),
            LayerSpec::Conv1d { kernel_size, stride, padding, .. } => {
                self.conv_forward(&x, batch, kernel_size, stride, padding, keep)
            }
            LayerSpec::Lstm { return_sequences, .. } => self.lstm_forward(x, batch, return_sequences, keep),
        }
    }

    /// Writes parameter gradients into `grads` and returns the input
    /// gradient when `need_dx`.
    pub(crate) fn backward(
        &self,
        cache: Cache<T>,
        dy: Vec<T>,
        batch: usize,
        grads: &mut [Tensor<T>],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        debug_assert_eq!(dy.len(), batch * self.output.size());
        match (self.spec, cache) {
            (LayerSpec::Dense { activation, .. }, Cache::Affine { input, output })
            | (LayerSpec::TimeDistributedDense { activation, .. }, Cache::Affine { input, output }) => {
                self.affine_backward(&input, &output, dy, batch, activation, grads, need_dx)
            }
            (LayerSpec::SoftmaxOutput { .. }, Cache::Affine { input, output }) => {
                self.affine_backward(&input, &output, dy, batch, Activation::Linear, grads, need_dx)
            }
            (LayerSpec::Flatten, _) => need_dx.then_some(dy),
            (LayerSpec::AdaptiveAvgPool { .. }, _) => need_dx.then(|| self.pool_backward(&dy, batch)),
            (LayerSpec::Conv1d { kernel_size, stride, padding, .. }, Cache::Conv { patches, output }) => {
                self.conv_backward(&patches, &output, dy, batch, kernel_size, stride, padding, grads, need_dx)
            }
            (LayerSpec::Lstm { return_sequences, .. }, Cache::Lstm { input, gates, cells, hidden }) => {
                self.lstm_backward(&input, &gates, &cells, &hidden, &dy, batch, return_sequences, grads, need_dx)
            }
            _ => panic!("backward called without a training cache"),
        }
    }

    fn affine_forward(&self, x: Vec<T>, batch: usize, act: Activation, keep: bool) -> (Vec<T>, Cache<T>) {
        let rows = batch * Self::steps(self.input);
        let (n_in, n_out) = (Self::channels(self.input), Self::channels(self.output));
        let mut y = vec![T::zero(); rows * n_out];
        gemm(MatRef::new(&x, rows, n_in), MatRef::new(self.params[0].data(), n_in, n_out), &mut y, n_out, false);
        add_bias(&mut y, self.params[1].data());
        activate(act, &mut y);
        let cache = if keep { Cache::Affine { input: x, output: y.clone() } } else { Cache::None };
        (y, cache)
    }

    #[allow(clippy::too_many_arguments)]
    fn affine_backward(
        &self,
        x: &[T],
        y: &[T],
        mut dz: Vec<T>,
        batch: usize,
        act: Activation,
        grads: &mut [Tensor<T>],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let rows = batch * Self::steps(self.input);
        let (n_in, n_out) = (Self::channels(self.input), Self::channels(self.output));
        activation_backward(act, y, &mut dz);
        let (dw, db) = grads.split_at_mut(1);
        gemm(MatRef::new(x, rows, n_in).t(), MatRef::new(&dz, rows, n_out), dw[0].data_mut(), n_out, false);
        column_sums(&dz, n_out, db[0].data_mut());
        need_dx.then(|| {
            let mut dx = vec![T::zero(); rows * n_in];
            gemm(MatRef::new(&dz, rows, n_out), MatRef::new(self.params[0].data(), n_in, n_out).t(), &mut dx, n_in, false);
            dx
        })
    }

    fn pool_forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let (Shape::Seq { steps, channels }, Shape::Seq { steps: sections, .. }) = (self.input, self.output) else {
            unreachable!("pooling acts on sequences")
        };
        let bounds = pool_bounds(steps, sections);
        let mut y = vec![T::zero(); batch * sections * channels];
        for b in 0..batch {
            for s in 0..sections {
                let (lo, hi) = (bounds[s], bounds[s + 1]);
                let inv = T::one() / T::from_usize(hi - lo).unwrap();
                let out = &mut y[(b * sections + s) * channels..(b * sections + s + 1) * channels];
                for t in lo..hi {
                    let row = &x[(b * steps + t) * channels..(b * steps + t + 1) * channels];
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o = *o + v;
                    }
                }
                out.iter_mut().for_each(|o| *o = *o * inv);
            }
        }
        y
    }

    fn pool_backward(&self, dy: &[T], batch: usize) -> Vec<T> {
        let (Shape::Seq { steps, channels }, Shape::Seq { steps: sections, .. }) = (self.input, self.output) else {
            unreachable!("pooling acts on sequences")
        };
        let bounds = pool_bounds(steps, sections);
        let mut dx = vec![T::zero(); batch * steps * channels];
        for b in 0..batch {
            for s in 0..sections {
                let (lo, hi) = (bounds[s], bounds[s + 1]);
                let inv = T::one() / T::from_usize(hi - lo).unwrap();
                let g = &dy[(b * sections + s) * channels..(b * sections + s + 1) * channels];
                for t in lo..hi {
                    let row = &mut dx[(b * steps + t) * channels..(b * steps + t + 1) * channels];
                    for (d, &v) in row.iter_mut().zip(g) {
                        *d = v * inv;
                    }
                }
            }
        }
        dx
    }

    fn conv_patches(&self, x: &[T], batch: usize, kernel: usize, stride: usize, left: usize, out_steps: usize) -> Vec<T> {
        let Shape::Seq { steps, channels } = self.input else { unreachable!("conv acts on sequences") };
        let width = kernel * channels;
        let mut patches = vec![T::zero(); batch * out_steps * width];
        for b in 0..batch {
            for i in 0..out_steps {
                let row = &mut patches[(b * out_steps + i) * width..(b * out_steps + i + 1) * width];
                for j in 0..kernel {
                    let p = (i * stride + j) as isize - left as isize;
                    if p >= 0 && (p as usize) < steps {
                        let src = (b * steps + p as usize) * channels;
                        row[j * channels..(j + 1) * channels].copy_from_slice(&x[src..src + channels]);
                    }
                }
            }
        }
        patches
    }

    fn conv_forward(
        &self,
        x: &[T],
        batch: usize,
        kernel: usize,
        stride: usize,
        padding: super::spec::Padding,
        keep: bool,
    ) -> (Vec<T>, Cache<T>) {
        let Shape::Seq { steps, channels } = self.input else { unreachable!() };
        let (out_steps, left) = conv_geometry(steps, kernel, stride, padding);
        let filters = Self::channels(self.output);
        let width = kernel * channels;
        let patches = self.conv_patches(x, batch, kernel, stride, left, out_steps);
        let rows = batch * out_steps;
        let mut y = vec![T::zero(); rows * filters];
        gemm(MatRef::new(&patches, rows, width), MatRef::new(self.params[0].data(), width, filters), &mut y, filters, false);
        add_bias(&mut y, self.params[1].data());
        activate(Activation::Relu, &mut y);
        let cache = if keep { Cache::Conv { patches, output: y.clone() } } else { Cache::None };
        (y, cache)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        patches: &[T],
        y: &[T],
        mut dz: Vec<T>,
        batch: usize,
        kernel: usize,
        stride: usize,
        padding: super::spec::Padding,
        grads: &mut [Tensor<T>],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let Shape::Seq { steps, channels } = self.input else { unreachable!() };
        let (out_steps, left) = conv_geometry(steps, kernel, stride, padding);
        let filters = Self::channels(self.output);
        let width = kernel * channels;
        let rows = batch * out_steps;
        activation_backward(Activation::Relu, y, &mut dz);
        let (dw, db) = grads.split_at_mut(1);
        gemm(MatRef::new(patches, rows, width).t(), MatRef::new(&dz, rows, filters), dw[0].data_mut(), filters, false);
        column_sums(&dz, filters, db[0].data_mut());
        if !need_dx {
            return None;
        }
        let mut dp = vec![T::zero(); rows * width];
        gemm(MatRef::new(&dz, rows, filters), MatRef::new(self.params[0].data(), width, filters).t(), &mut dp, width, false);
        let mut dx = vec![T::zero(); batch * steps * channels];
        for b in 0..batch {
            for i in 0..out_steps {
                let row = &dp[(b * out_steps + i) * width..(b * out_steps + i + 1) * width];
                for j in 0..kernel {
                    let p = (i * stride + j) as isize - left as isize;
                    if p >= 0 && (p as usize) < steps {
                        let dst = (b * steps + p as usize) * channels;
                        for c in 0..channels {
                            dx[dst + c] = dx[dst + c] + row[j * channels + c];
                        }
                    }
                }
            }
        }
        Some(dx)
    }

    fn lstm_forward(&self, x: Vec<T>, batch: usize, return_sequences: bool, keep: bool) -> (Vec<T>, Cache<T>) {
        let Shape::Seq { steps, channels } = self.input else { unreachable!("LSTM acts on sequences") };
        let units = match self.spec {
            LayerSpec::Lstm { units, .. } => units,
            _ => unreachable!(),
        };
        let g4 = 4 * units;
        let (wx, wh, bias) = (self.params[0].data(), self.params[1].data(), self.params[2].data());
        // input projections for all steps at once; row (b, t)
        let mut gates = vec![T::zero(); batch * steps * g4];
        gemm(MatRef::new(&x, batch * steps, channels), MatRef::new(wx, channels, g4), &mut gates, g4, false);
        add_bias(&mut gates, bias);
        let mut cells = vec![T::zero(); batch * steps * units];
        let mut hidden = vec![T::zero(); batch * steps * units];
        let row_stride = steps * units;
        for t in 0..steps {
            if t > 0 {
                let h_prev = MatRef::strided(&hidden[(t - 1) * units..], batch, units, row_stride);
                gemm(h_prev, MatRef::new(wh, units, g4), &mut gates[t * g4..], steps * g4, true);
            }
            for b in 0..batch {
                let z = &mut gates[(b * steps + t) * g4..(b * steps + t + 1) * g4];
                for v in &mut z[..2 * units] {
                    *v = sigmoid(*v);
                }
                for v in &mut z[2 * units..3 * units] {
                    *v = v.tanh();
                }
                for v in &mut z[3 * units..] {
                    *v = sigmoid(*v);
                }
                let base = (b * steps + t) * units;
                for u in 0..units {
                    let (i, f, g, o) = (z[u], z[units + u], z[2 * units + u], z[3 * units + u]);
                    let c_prev = if t > 0 { cells[base - units + u] } else { T::zero() };
                    let c = f * c_prev + i * g;
                    cells[base + u] = c;
                    hidden[base + u] = o * c.tanh();
                }
            }
        }
        let y = if return_sequences {
            hidden.clone()
        } else {
            let mut last = vec![T::zero(); batch * units];
            for b in 0..batch {
                let src = (b * steps + steps - 1) * units;
                last[b * units..(b + 1) * units].copy_from_slice(&hidden[src..src + units]);
            }
            last
        };
        let cache = if keep { Cache::Lstm { input: x, gates, cells, hidden } } else { Cache::None };
        (y, cache)
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        x: &[T],
        gates: &[T],
        cells: &[T],
        hidden: &[T],
        dy: &[T],
        batch: usize,
        return_sequences: bool,
        grads: &mut [Tensor<T>],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let Shape::Seq { steps, channels } = self.input else { unreachable!() };
        let units = match self.spec {
            LayerSpec::Lstm { units, .. } => units,
            _ => unreachable!(),
        };
        let g4 = 4 * units;
        let wh = self.params[1].data();
        let mut dz = vec![T::zero(); batch * steps * g4];
        let mut dh_next = vec![T::zero(); batch * units];
        let mut dc_next = vec![T::zero(); batch * units];
        let (dwx, rest) = grads.split_at_mut(1);
        let (dwh, db) = rest.split_at_mut(1);
        dwh[0].fill(T::zero());
        for t in (0..steps).rev() {
            for b in 0..batch {
                let z = &gates[(b * steps + t) * g4..(b * steps + t + 1) * g4];
                let base = (b * steps + t) * units;
                let dzt = &mut dz[(b * steps + t) * g4..(b * steps + t + 1) * g4];
                for u in 0..units {
                    let mut dh = dh_next[b * units + u];
                    if return_sequences {
                        dh = dh + dy[base + u];
                    } else if t == steps - 1 {
                        dh = dh + dy[b * units + u];
                    }
                    let (i, f, g, o) = (z[u], z[units + u], z[2 * units + u], z[3 * units + u]);
                    let c = cells[base + u];
                    let c_prev = if t > 0 { cells[base - units + u] } else { T::zero() };
                    let tc = c.tanh();
                    let d_o = dh * tc;
                    let dc = dc_next[b * units + u] + dh * o * (T::one() - tc * tc);
                    let d_i = dc * g;
                    let d_g = dc * i;
                    let d_f = dc * c_prev;
                    dc_next[b * units + u] = dc * f;
                    dzt[u] = d_i * i * (T::one() - i);
                    dzt[units + u] = d_f * f * (T::one() - f);
                    dzt[2 * units + u] = d_g * (T::one() - g * g);
                    dzt[3 * units + u] = d_o * o * (T::one() - o);
                }
            }
            let dz_t = MatRef::strided(&dz[t * g4..], batch, g4, steps * g4);
            gemm(dz_t, MatRef::new(wh, units, g4).t(), &mut dh_next, units, false);
            if t > 0 {
                let h_prev = MatRef::strided(&hidden[(t - 1) * units..], batch, units, steps * units);
                gemm(h_prev.t(), dz_t, dwh[0].data_mut(), g4, true);
            }
        }
        let rows = batch * steps;
        gemm(MatRef::new(x, rows, channels).t(), MatRef::new(&dz, rows, g4), dwx[0].data_mut(), g4, false);
        column_sums(&dz, g4, db[0].data_mut());
        need_dx.then(|| {
            let mut dx = vec![T::zero(); rows * channels];
            gemm(MatRef::new(&dz, rows, g4), MatRef::new(self.params[0].data(), channels, g4).t(), &mut dx, channels, false);
            dx
        })
    }
}
