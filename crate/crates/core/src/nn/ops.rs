//! Layer primitives with hand-derived backward passes.
//!
//! Forward functions are pure. Backward functions take the forward inputs
//! and the upstream gradient and *accumulate* into caller-owned gradient
//! buffers, returning the gradient with respect to the layer input.

use super::tensor::{axpy, dot, ensure_finite};
use super::{NnError, Parameter, Tensor};

fn shape_err(op: &'static str, expected: impl Into<String>, got: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        op,
        expected: expected.into(),
        got: format!("{got:?}"),
    }
}

// ---------------------------------------------------------------------------
// dense

/// `y = W x + b` with `W: [n_out, n_in]`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (n_out, n_in) = dense_dims(x, w, b)?;
    let xs = x.data();
    let ws = w.data();
    let mut y = b.data().to_vec();
    for (o, yo) in y.iter_mut().enumerate() {
        *yo += dot(&ws[o * n_in..(o + 1) * n_in], xs);
    }
    debug_assert_eq!(y.len(), n_out);
    ensure_finite("dense", &y)?;
    Ok(Tensor::from_parts(vec![n_out], y))
}

/// Accumulates `dW += gy xᵀ`, `db += gy` and returns `dx = Wᵀ gy`.
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad_y: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Result<Tensor, NnError> {
    let n_in = x.len();
    let n_out = grad_y.len();
    if w.shape() != [n_out, n_in] || grad_w.shape() != w.shape() || grad_b.len() != n_out {
        return Err(shape_err("dense_backward", format!("[{n_out}, {n_in}]"), w.shape()));
    }
    let xs = x.data();
    let ws = w.data();
    let gy = grad_y.data();
    let mut dx = vec![0.0; n_in];
    {
        let gw = grad_w.data_mut();
        for o in 0..n_out {
            let g = gy[o];
            axpy(g, xs, &mut gw[o * n_in..(o + 1) * n_in]);
            axpy(g, &ws[o * n_in..(o + 1) * n_in], &mut dx);
        }
    }
    for (gb, g) in grad_b.data_mut().iter_mut().zip(gy) {
        *gb += g;
    }
    Ok(Tensor::from_parts(vec![n_in], dx))
}

fn dense_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize), NnError> {
    if w.shape().len() != 2 {
        return Err(shape_err("dense", "rank-2 weight", w.shape()));
    }
    let (n_out, n_in) = (w.shape()[0], w.shape()[1]);
    if x.len() != n_in {
        return Err(shape_err("dense", format!("input of length {n_in}"), x.shape()));
    }
    if b.len() != n_out {
        return Err(shape_err("dense", format!("bias of length {n_out}"), b.shape()));
    }
    Ok((n_out, n_in))
}

/// Fully connected layer owning its parameters.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
}

impl Dense {
    pub fn new(w: Tensor, b: Tensor) -> Self {
        Self {
            w: Parameter::new(w),
            b: Parameter::new(b),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        dense(x, &self.w.value, &self.b.value)
    }

    pub fn backward(&mut self, x: &Tensor, grad_y: &Tensor) -> Result<Tensor, NnError> {
        dense_backward(x, &self.w.value, grad_y, &mut self.w.grad, &mut self.b.grad)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.w, &mut self.b]
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution

/// Geometry of a strided, zero-padded 1-D convolution. Padding may differ
/// between the two ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeometry {
    pub const fn symmetric(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            pad_left: padding,
            pad_right: padding,
        }
    }

    fn total_pad(&self) -> usize {
        self.pad_left + self.pad_right
    }
}

/// Output length of `conv1d`, or `None` when the kernel does not fit.
pub fn conv1d_out_len(t: usize, k: usize, geom: ConvGeometry) -> Option<usize> {
    if geom.stride == 0 || k == 0 || t + geom.total_pad() < k {
        return None;
    }
    Some((t + geom.total_pad() - k) / geom.stride + 1)
}

/// Output length of `conv1d_transpose` before output padding.
pub fn conv1d_transpose_out_len(t: usize, k: usize, geom: ConvGeometry) -> Option<usize> {
    let full = (t.checked_sub(1)?) * geom.stride + k;
    full.checked_sub(geom.total_pad()).filter(|&n| n > 0)
}

fn kernel_dims(op: &'static str, k: &Tensor) -> Result<(usize, usize, usize), NnError> {
    match *k.shape() {
        [a, b, c] if c > 0 => Ok((a, b, c)),
        _ => Err(shape_err(op, "kernel [C_out, C_in, k]", k.shape())),
    }
}

fn signal_dims(op: &'static str, x: &Tensor) -> Result<(usize, usize), NnError> {
    match *x.shape() {
        [c, t] => Ok((c, t)),
        _ => Err(shape_err(op, "signal [C, T]", x.shape())),
    }
}

/// Cross-correlation `y[o, t] = b[o] + Σ_c Σ_j w[o, c, j] · x[c, t·s + j − p_left]`
/// with `x: [C_in, T]`, `w: [C_out, C_in, k]`.
pub fn conv1d(
    x: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    geom: ConvGeometry,
) -> Result<Tensor, NnError> {
    let (c_out, c_in, k) = kernel_dims("conv1d", kernels)?;
    let (xc, t_in) = signal_dims("conv1d", x)?;
    if xc != c_in {
        return Err(shape_err("conv1d", format!("{c_in} input channels"), x.shape()));
    }
    let t_out = conv1d_out_len(t_in, k, geom)
        .ok_or_else(|| shape_err("conv1d", format!("length >= kernel {k}"), x.shape()))?;
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(shape_err("conv1d", format!("bias of length {c_out}"), b.shape()));
        }
    }
    let xs = x.data();
    let ws = kernels.data();
    let mut y = vec![0.0; c_out * t_out];
    for o in 0..c_out {
        let b0 = bias.map_or(0.0, |b| b.data()[o]);
        let yrow = &mut y[o * t_out..(o + 1) * t_out];
        for (t, yv) in yrow.iter_mut().enumerate() {
            let base = (t * geom.stride) as isize - geom.pad_left as isize;
            let j0 = (-base).max(0) as usize;
            let j1 = ((t_in as isize - base).min(k as isize)).max(0) as usize;
            let mut acc = b0;
            if j0 < j1 {
                for c in 0..c_in {
                    let wrow = &ws[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    let xstart = c * t_in + (base + j0 as isize) as usize;
                    acc += dot(&wrow[j0..j1], &xs[xstart..xstart + (j1 - j0)]);
                }
            }
            *yv = acc;
        }
    }
    ensure_finite("conv1d", &y)?;
    Ok(Tensor::from_parts(vec![c_out, t_out], y))
}

/// Backward of [`conv1d`]. Accumulates kernel (and bias) gradients and
/// returns the input gradient.
pub fn conv1d_backward(
    x: &Tensor,
    kernels: &Tensor,
    grad_y: &Tensor,
    geom: ConvGeometry,
    grad_k: &mut Tensor,
    grad_b: Option<&mut Tensor>,
) -> Result<Tensor, NnError> {
    let (c_out, c_in, k) = kernel_dims("conv1d_backward", kernels)?;
    let (_, t_in) = signal_dims("conv1d_backward", x)?;
    let (gc, t_out) = signal_dims("conv1d_backward", grad_y)?;
    if gc != c_out || grad_k.shape() != kernels.shape() {
        return Err(shape_err("conv1d_backward", format!("{c_out} output channels"), grad_y.shape()));
    }
    let xs = x.data();
    let ws = kernels.data();
    let gy = grad_y.data();
    let mut dx = vec![0.0; c_in * t_in];
    {
        let gk = grad_k.data_mut();
        for o in 0..c_out {
            for t in 0..t_out {
                let g = gy[o * t_out + t];
                if g == 0.0 {
                    continue;
                }
                let base = (t * geom.stride) as isize - geom.pad_left as isize;
                let j0 = (-base).max(0) as usize;
                let j1 = ((t_in as isize - base).min(k as isize)).max(0) as usize;
                if j0 >= j1 {
                    continue;
                }
                let len = j1 - j0;
                for c in 0..c_in {
                    let widx = (o * c_in + c) * k + j0;
                    let xstart = c * t_in + (base + j0 as isize) as usize;
                    axpy(g, &xs[xstart..xstart + len], &mut gk[widx..widx + len]);
                    axpy(g, &ws[widx..widx + len], &mut dx[xstart..xstart + len]);
                }
            }
        }
    }
    if let Some(gb) = grad_b {
        for (o, gbo) in gb.data_mut().iter_mut().enumerate() {
            *gbo += gy[o * t_out..(o + 1) * t_out].iter().sum::<f64>();
        }
    }
    Ok(Tensor::from_parts(vec![c_in, t_in], dx))
}

/// Adjoint of [`conv1d`] sharing the same kernel tensor: `kernels` has shape
/// `[C_x, C_y, k]` where `x: [C_x, T]` and the result is `[C_y, T']` with
/// `T' = (T − 1)·s + k − p_left − p_right + output_padding`.
///
/// Without bias, `⟨conv1d(u), v⟩ = ⟨u, conv1d_transpose(v)⟩` whenever
/// `u` has length `T'`.
pub fn conv1d_transpose(
    x: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    geom: ConvGeometry,
    output_padding: usize,
) -> Result<Tensor, NnError> {
    let (c_x, c_y, k) = kernel_dims("conv1d_transpose", kernels)?;
    let (xc, t_in) = signal_dims("conv1d_transpose", x)?;
    if xc != c_x {
        return Err(shape_err("conv1d_transpose", format!("{c_x} input channels"), x.shape()));
    }
    let t_out = conv1d_transpose_out_len(t_in, k, geom)
        .ok_or_else(|| shape_err("conv1d_transpose", "positive output length", x.shape()))?
        + output_padding;
    if output_padding >= geom.stride.max(1) && output_padding > 0 {
        return Err(shape_err("conv1d_transpose", "output_padding < stride", &[output_padding]));
    }
    if let Some(b) = bias {
        if b.len() != c_y {
            return Err(shape_err("conv1d_transpose", format!("bias of length {c_y}"), b.shape()));
        }
    }
    let xs = x.data();
    let ws = kernels.data();
    let mut y = vec![0.0; c_y * t_out];
    for o in 0..c_x {
        for t in 0..t_in {
            let g = xs[o * t_in + t];
            if g == 0.0 {
                continue;
            }
            let base = (t * geom.stride) as isize - geom.pad_left as isize;
            let j0 = (-base).max(0) as usize;
            let j1 = ((t_out as isize - base).min(k as isize)).max(0) as usize;
            if j0 >= j1 {
                continue;
            }
            let len = j1 - j0;
            for c in 0..c_y {
                let widx = (o * c_y + c) * k + j0;
                let ystart = c * t_out + (base + j0 as isize) as usize;
                axpy(g, &ws[widx..widx + len], &mut y[ystart..ystart + len]);
            }
        }
    }
    if let Some(b) = bias {
        for (c, &bc) in b.data().iter().enumerate() {
            y[c * t_out..(c + 1) * t_out].iter_mut().for_each(|v| *v += bc);
        }
    }
    ensure_finite("conv1d_transpose", &y)?;
    Ok(Tensor::from_parts(vec![c_y, t_out], y))
}

/// Backward of [`conv1d_transpose`].
pub fn conv1d_transpose_backward(
    x: &Tensor,
    kernels: &Tensor,
    grad_y: &Tensor,
    geom: ConvGeometry,
    grad_k: &mut Tensor,
    grad_b: Option<&mut Tensor>,
) -> Result<Tensor, NnError> {
    let (c_x, c_y, k) = kernel_dims("conv1d_transpose_backward", kernels)?;
    let (_, t_in) = signal_dims("conv1d_transpose_backward", x)?;
    let (gc, t_out) = signal_dims("conv1d_transpose_backward", grad_y)?;
    if gc != c_y || grad_k.shape() != kernels.shape() {
        return Err(shape_err(
            "conv1d_transpose_backward",
            format!("{c_y} output channels"),
            grad_y.shape(),
        ));
    }
    let xs = x.data();
    let ws = kernels.data();
    let gy = grad_y.data();
    let mut dx = vec![0.0; c_x * t_in];
    {
        let gk = grad_k.data_mut();
        for o in 0..c_x {
            for t in 0..t_in {
                let base = (t * geom.stride) as isize - geom.pad_left as isize;
                let j0 = (-base).max(0) as usize;
                let j1 = ((t_out as isize - base).min(k as isize)).max(0) as usize;
                if j0 >= j1 {
                    continue;
                }
                let len = j1 - j0;
                let xv = xs[o * t_in + t];
                let mut acc = 0.0;
                for c in 0..c_y {
                    let widx = (o * c_y + c) * k + j0;
                    let ystart = c * t_out + (base + j0 as isize) as usize;
                    let gslice = &gy[ystart..ystart + len];
                    acc += dot(&ws[widx..widx + len], gslice);
                    axpy(xv, gslice, &mut gk[widx..widx + len]);
                }
                dx[o * t_in + t] = acc;
            }
        }
    }
    if let Some(gb) = grad_b {
        for (c, gbc) in gb.data_mut().iter_mut().enumerate() {
            *gbc += gy[c * t_out..(c + 1) * t_out].iter().sum::<f64>();
        }
    }
    Ok(Tensor::from_parts(vec![c_x, t_in], dx))
}

// ---------------------------------------------------------------------------
// activations

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        let data = match self {
            Activation::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            Activation::Tanh => x.data().iter().map(|&v| v.tanh()).collect(),
            Activation::Identity => x.data().to_vec(),
        };
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    /// Gradient through the activation given its *output* `y`.
    pub fn backward(self, y: &Tensor, grad_y: &Tensor) -> Tensor {
        let data = match self {
            Activation::Relu => y
                .data()
                .iter()
                .zip(grad_y.data())
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Tanh => y
                .data()
                .iter()
                .zip(grad_y.data())
                .map(|(&v, &g)| g * (1.0 - v * v))
                .collect(),
            Activation::Identity => grad_y.data().to_vec(),
        };
        Tensor::from_parts(y.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_and_hand_case() {
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let y = dense(&x, &t(&[3, 3], &eye), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());

        let y = dense(
            &Tensor::vector(vec![1.0, 2.0]),
            &t(&[1, 2], &[1.0, 1.0]),
            &Tensor::vector(vec![0.5]),
        )
        .unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn dense_rejects_bad_shapes() {
        let r = dense(&Tensor::vector(vec![1.0; 3]), &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2]));
        assert!(matches!(r, Err(NnError::ShapeMismatch { op: "dense", .. })));
    }

    #[test]
    fn conv1d_hand_cases() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let geom = ConvGeometry::symmetric(1, 0);
        let y = conv1d(&x, &t(&[1, 1, 2], &[1.0, 1.0]), None, geom).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0, 7.0]);

        let y = conv1d(&x, &t(&[1, 1, 1], &[1.0]), None, geom).unwrap();
        assert_eq!(y.data(), x.data());

        // padding 1, stride 2: windows [0,1], [2,3], [4,0]
        let y = conv1d(&x, &t(&[1, 1, 2], &[1.0, 10.0]), None, ConvGeometry::symmetric(2, 1))
            .unwrap();
        assert_eq!(y.data(), &[10.0, 32.0, 4.0]);

        // left-only padding: windows [0,1], [2,3]
        let geom = ConvGeometry { stride: 2, pad_left: 1, pad_right: 0 };
        let y = conv1d(&x, &t(&[1, 1, 2], &[1.0, 10.0]), None, geom).unwrap();
        assert_eq!(y.data(), &[10.0, 32.0]);
    }

    #[test]
    fn conv1d_too_short_is_error() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let r = conv1d(&x, &Tensor::zeros(&[1, 1, 3]), None, ConvGeometry::symmetric(1, 0));
        assert!(matches!(r, Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn transpose_k1_is_scaled_input() {
        let x = t(&[1, 3], &[1.0, -2.0, 3.0]);
        let y = conv1d_transpose(&x, &t(&[1, 1, 1], &[2.5]), None, ConvGeometry::symmetric(1, 0), 0)
            .unwrap();
        assert_eq!(y.data(), &[2.5, -5.0, 7.5]);
    }

    #[test]
    fn transpose_length_formula_enumerated() {
        // Oracle: count positions touched by scattering each input sample.
        for t_in in 1..6 {
            for k in 1..5 {
                for s in 1..4 {
                    for (pl, pr) in [(0, 0), (1, 1), (1, 0), (0, 2)] {
                        let touched_max = (t_in - 1) * s + k; // exclusive end before cropping
                        let expected = touched_max as isize - (pl + pr) as isize;
                        let geom = ConvGeometry { stride: s, pad_left: pl, pad_right: pr };
                        let got = conv1d_transpose_out_len(t_in, k, geom);
                        if expected > 0 {
                            assert_eq!(got, Some(expected as usize));
                        } else {
                            assert_eq!(got, None);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn activation_backward() {
        let y = Activation::Relu.apply(&Tensor::vector(vec![-1.0, 2.0]));
        let g = Activation::Relu.backward(&y, &Tensor::vector(vec![5.0, 5.0]));
        assert_eq!(g.data(), &[0.0, 5.0]);
    }
}
