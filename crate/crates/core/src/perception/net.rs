//! Three strided 3x3 conv blocks, 4x4 average pooling and a two-layer head.
//!
//! Convolutions go through im2col + GEMM; the backward pass is written out
//! by hand so the same code serves training (parameter gradients) and the
//! attacks (input gradients).

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageTensor, Objective, PerceptionOutput, Scalar, INPUT_SIZE};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

const POOL: usize = 4;
const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub channels: [usize; 3],
    pub hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            channels: [8, 12, 16],
            hidden: 32,
        }
    }
}

impl Architecture {
    /// Spatial side after each stride-2 conv.
    fn sides() -> [usize; 4] {
        [INPUT_SIZE, INPUT_SIZE / 2, INPUT_SIZE / 4, INPUT_SIZE / 8]
    }

    fn pooled_side() -> usize {
        INPUT_SIZE / 8 / POOL
    }

    pub fn features(&self) -> usize {
        self.channels[2] * Self::pooled_side() * Self::pooled_side()
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut cin = 3;
        for &c in &self.channels {
            n += c * cin * TAPS + c;
            cin = c;
        }
        n + self.hidden * self.features() + self.hidden + 2 * self.hidden + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().any(|&c| c == 0) || self.hidden == 0 {
            return Err(Error::Config("architecture widths must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of one layer: `w` is (out, in) with conv kernels flattened as
/// (in_channel, ky, kx).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<A> {
    pub w: Array2<A>,
    pub b: Array1<A>,
}

impl<A: Scalar> Layer<A> {
    fn zeros(out: usize, inp: usize) -> Self {
        Layer {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneNet<A = f32> {
    pub arch: Architecture,
    /// conv1..conv3, fc1, fc2
    pub layers: Vec<Layer<A>>,
}

/// Parameter gradients share the network's layout.
pub type Gradients<A> = LaneNet<A>;

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<A> {
    cols: Vec<Array2<A>>,
    acts: Vec<Array2<A>>,
    pooled: Array1<A>,
    hidden: Array1<A>,
    pub raw: [A; 2],
}

fn check_finite<A: Scalar>(values: impl IntoIterator<Item = A>, layer: usize, grad: bool) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else if grad {
        Err(Error::NonFiniteGradient { layer })
    } else {
        Err(Error::NonFiniteActivation { layer })
    }
}

/// Unfolds a (c, side, side) input into (c*9, out*out) patches for a
/// stride-2, pad-1 3x3 conv.
fn im2col<A: Scalar>(x: &[A], c: usize, side: usize, cols: &mut [A]) {
    let out = side / 2;
    let n = out * out;
    for ci in 0..c {
        let plane = &x[ci * side * side..(ci + 1) * side * side];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let dst = &mut cols[(ci * TAPS + ky * KERNEL + kx) * n..][..n];
                for oy in 0..out {
                    let iy = (2 * oy + ky) as isize - 1;
                    let row = &mut dst[oy * out..(oy + 1) * out];
                    if iy < 0 || iy >= side as isize {
                        row.fill(A::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * side..(iy as usize + 1) * side];
                    for (ox, d) in row.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        *d = if ix < 0 || ix >= side as isize {
                            A::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`].
fn col2im<A: Scalar>(cols: &[A], c: usize, side: usize, x: &mut [A]) {
    let out = side / 2;
    let n = out * out;
    x.fill(A::zero());
    for ci in 0..c {
        let plane = &mut x[ci * side * side..(ci + 1) * side * side];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let src = &cols[(ci * TAPS + ky * KERNEL + kx) * n..][..n];
                for oy in 0..out {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    let row = &mut plane[iy as usize * side..(iy as usize + 1) * side];
                    for ox in 0..out {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < side as isize {
                            row[ix as usize] += src[oy * out + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<A: Scalar> LaneNet<A> {
    pub fn zeros(arch: Architecture) -> Self {
        let mut layers = Vec::with_capacity(5);
        let mut cin = 3;
        for &c in &arch.channels {
            layers.push(Layer::zeros(c, cin * TAPS));
            cin = c;
        }
        layers.push(Layer::zeros(arch.hidden, arch.features()));
        layers.push(Layer::zeros(2, arch.hidden));
        LaneNet { arch, layers }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut net = Self::zeros(arch);
        let mut rng = stream_rng(seed, Stream::Init, 0);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let (out, inp) = layer.w.dim();
            let (fan_in, fan_out) = if i < 3 {
                (inp, out * TAPS)
            } else {
                (inp, out)
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer
                .w
                .mapv_inplace(|_| A::of(rng.random_range(-limit..limit)));
        }
        net
    }

    pub fn cast<B: Scalar>(&self) -> LaneNet<B> {
        LaneNet {
            arch: self.arch,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: l.w.mapv(|v| B::of(v.f64())),
                    b: l.b.mapv(|v| B::of(v.f64())),
                })
                .collect(),
        }
    }

    pub fn param_slices(&self) -> Vec<&[A]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w.as_slice().expect("standard layout"),
                    l.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [A]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn forward_tape(&self, input: &ImageTensor<A>) -> Result<Tape<A>> {
        let sides = Architecture::sides();
        let mut cols = Vec::with_capacity(3);
        let mut acts: Vec<Array2<A>> = Vec::with_capacity(3);
        let mut cin = 3;
        for l in 0..3 {
            let side = sides[l];
            let n = sides[l + 1] * sides[l + 1];
            let mut col = Array2::<A>::zeros((cin * TAPS, n));
            {
                let x = match l {
                    0 => input.data().as_slice().expect("standard layout"),
                    _ => acts[l - 1].as_slice().expect("standard layout"),
                };
                im2col(x, cin, side, col.as_slice_mut().expect("standard layout"));
            }
            let layer = &self.layers[l];
            let cout = layer.w.nrows();
            let mut z = Array2::<A>::zeros((cout, n));
            general_mat_mul(A::one(), &layer.w, &col, A::zero(), &mut z);
            for (mut row, &b) in z.outer_iter_mut().zip(layer.b.iter()) {
                row.mapv_inplace(|v| (v + b).tanh());
            }
            check_finite(z.iter().copied(), l, false)?;
            cols.push(col);
            acts.push(z);
            cin = cout;
        }

        let side = sides[3];
        let ps = Architecture::pooled_side();
        let c3 = self.arch.channels[2];
        let scale = A::of(1.0 / (POOL * POOL) as f64);
        let mut pooled = Array1::<A>::zeros(c3 * ps * ps);
        let a3 = acts[2].as_slice().expect("standard layout");
        for c in 0..c3 {
            for y in 0..side {
                for x in 0..side {
                    pooled[c * ps * ps + (y / POOL) * ps + x / POOL] += a3[c * side * side + y * side + x];
                }
            }
        }
        pooled.mapv_inplace(|v| v * scale);

        let fc1 = &self.layers[3];
        let hidden = (fc1.w.dot(&pooled) + &fc1.b).mapv(|v| v.tanh());
        check_finite(hidden.iter().copied(), 3, false)?;
        let fc2 = &self.layers[4];
        let out = fc2.w.dot(&hidden) + &fc2.b;
        check_finite(out.iter().copied(), 4, false)?;
        Ok(Tape {
            cols,
            acts,
            pooled,
            hidden,
            raw: [out[0], out[1]],
        })
    }

    /// Pre-clip head output.
    pub fn forward_raw(&self, input: &ImageTensor<A>) -> Result<[f64; 2]> {
        let t = self.forward_tape(input)?;
        Ok([t.raw[0].f64(), t.raw[1].f64()])
    }

    pub fn forward(&self, input: &ImageTensor<A>) -> Result<PerceptionOutput> {
        Ok(PerceptionOutput::from_raw(self.forward_raw(input)?))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the raw head output).
    /// Returns parameter gradients if requested and the input gradient if
    /// requested.
    pub fn backward(
        &self,
        tape: &Tape<A>,
        d_out: [A; 2],
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients<A>>, Option<Array3<A>>)> {
        let mut grads = want_params.then(|| Self::zeros(self.arch));
        let d_out = Array1::from_vec(d_out.to_vec());

        let fc2 = &self.layers[4];
        if let Some(g) = grads.as_mut() {
            g.layers[4].w = outer(&d_out, &tape.hidden);
            g.layers[4].b = d_out.clone();
        }
        let dh = fc2.w.t().dot(&d_out);
        let dz1 = &dh * &tape.hidden.mapv(|h| A::one() - h * h);
        check_finite(dz1.iter().copied(), 3, true)?;
        let fc1 = &self.layers[3];
        if let Some(g) = grads.as_mut() {
            g.layers[3].w = outer(&dz1, &tape.pooled);
            g.layers[3].b = dz1.clone();
        }
        let dp = fc1.w.t().dot(&dz1);

        let sides = Architecture::sides();
        let side = sides[3];
        let ps = Architecture::pooled_side();
        let c3 = self.arch.channels[2];
        let scale = A::of(1.0 / (POOL * POOL) as f64);
        let mut d_act = Array2::<A>::zeros((c3, side * side));
        {
            let buf = d_act.as_slice_mut().expect("standard layout");
            for c in 0..c3 {
                for y in 0..side {
                    for x in 0..side {
                        buf[c * side * side + y * side + x] = dp[c * ps * ps + (y / POOL) * ps + x / POOL] * scale;
                    }
                }
            }
        }

        let mut d_input = None;
        for l in (0..3).rev() {
            let a = &tape.acts[l];
            let dz = &d_act * &a.mapv(|v| A::one() - v * v);
            let layer = &self.layers[l];
            if let Some(g) = grads.as_mut() {
                let mut dw = Array2::<A>::zeros(layer.w.dim());
                general_mat_mul(A::one(), &dz, &tape.cols[l].t(), A::zero(), &mut dw);
                g.layers[l].w = dw;
                g.layers[l].b = dz.sum_axis(Axis(1));
            }
            if l == 0 && !want_input {
                break;
            }
            let cin = if l == 0 { 3 } else { self.arch.channels[l - 1] };
            let mut dcols = Array2::<A>::zeros(tape.cols[l].dim());
            general_mat_mul(A::one(), &layer.w.t(), &dz, A::zero(), &mut dcols);
            let mut dx = Array2::<A>::zeros((cin, sides[l] * sides[l]));
            col2im(
                dcols.as_slice().expect("standard layout"),
                cin,
                sides[l],
                dx.as_slice_mut().expect("standard layout"),
            );
            check_finite(dx.iter().copied(), l, true)?;
            if l == 0 {
                d_input = Some(
                    dx.into_shape_with_order((3, INPUT_SIZE, INPUT_SIZE))
                        .expect("input gradient shape"),
                );
            } else {
                d_act = dx;
            }
        }
        Ok((grads, d_input))
    }

    /// Gradient of MSE(raw output, anchor) with respect to the input, plus
    /// the raw output at `input`.
    pub fn grad_input(&self, input: &ImageTensor<A>, objective: &Objective) -> Result<(Array3<A>, [f64; 2])> {
        let tape = self.forward_tape(input)?;
        let (ax, ay) = objective.anchor();
        // d/do of ((o0-a0)^2 + (o1-a1)^2) / 2
        let d = [tape.raw[0] - A::of(ax), tape.raw[1] - A::of(ay)];
        let (_, g) = self.backward(&tape, d, false, true)?;
        let raw = [tape.raw[0].f64(), tape.raw[1].f64()];
        Ok((g.expect("input gradient requested"), raw))
    }
}

fn outer<A: Scalar>(a: &Array1<A>, b: &Array1<A>) -> Array2<A> {
    let mut m = Array2::<A>::zeros((a.len(), b.len()));
    for (mut row, &ai) in m.outer_iter_mut().zip(a.iter()) {
        row.assign(&b.mapv(|v| v * ai));
    }
    m
}

/// MSE of the raw head output against `target`, as used in training and by
/// the attacks.
pub fn raw_loss(raw: [f64; 2], target: (f64, f64)) -> f64 {
    ((raw[0] - target.0).powi(2) + (raw[1] - target.1).powi(2)) / 2.0
}
