//! Same-padded, stride-1 2-D convolution over `[B, H, W, C]` tensors.
//!
//! Kernels are laid out `[Kh, Kw, Cin, Cout]`, which flattened row-major is
//! exactly the `[Kh*Kw*Cin, Cout]` matrix that multiplies an im2col patch
//! matrix. Both passes are im2col followed by a single-threaded sgemm, so
//! results are bit-reproducible for identical inputs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients of a convolution with respect to its three inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    height: usize,
    width: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn check(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Self> {
        let [batch, height, width, cin] = input.dims4()?;
        let [kh, kw, kcin, cout] = kernel.dims4().map_err(|_| {
            Error::Shape(format!(
                "conv2d: kernel must be [Kh,Kw,Cin,Cout], got {:?}",
                kernel.shape()
            ))
        })?;
        if kcin != cin {
            return Err(Error::Shape(format!(
                "conv2d: input {:?} has {cin} channels but kernel {:?} expects {kcin}",
                input.shape(),
                kernel.shape()
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d: kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        if let Some(bias) = bias {
            if bias.shape() != [cout] {
                return Err(Error::Shape(format!(
                    "conv2d: bias {:?} does not match kernel {:?}",
                    bias.shape(),
                    kernel.shape()
                )));
            }
        }
        Ok(Geometry {
            batch,
            height,
            width,
            cin,
            cout,
            kh,
            kw,
        })
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

fn im2col(g: &Geometry, sample: &[f32], cols: &mut [f32]) {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let plen = g.patch_len();
    for y in 0..g.height {
        for x in 0..g.width {
            let row = &mut cols[(y * g.width + x) * plen..][..plen];
            for ky in 0..g.kh {
                let iy = y as isize + ky as isize - ph as isize;
                for kx in 0..g.kw {
                    let ix = x as isize + kx as isize - pw as isize;
                    let dst = &mut row[(ky * g.kw + kx) * g.cin..][..g.cin];
                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                        dst.fill(0.0);
                    } else {
                        let src = (iy as usize * g.width + ix as usize) * g.cin;
                        dst.copy_from_slice(&sample[src..src + g.cin]);
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &Geometry, cols: &[f32], sample: &mut [f32]) {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let plen = g.patch_len();
    for y in 0..g.height {
        for x in 0..g.width {
            let row = &cols[(y * g.width + x) * plen..][..plen];
            for ky in 0..g.kh {
                let iy = y as isize + ky as isize - ph as isize;
                if iy < 0 || iy >= g.height as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = x as isize + kx as isize - pw as isize;
                    if ix < 0 || ix >= g.width as isize {
                        continue;
                    }
                    let src = &row[(ky * g.kw + kx) * g.cin..][..g.cin];
                    let dst = (iy as usize * g.width + ix as usize) * g.cin;
                    for (d, s) in sample[dst..dst + g.cin].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `c[m×n] = beta·c + a·b` with explicit strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() >= (m - 1) * a_strides.0 + (k - 1) * a_strides.1 + 1);
    debug_assert!(k == 0 || n == 0 || b.len() >= (k - 1) * b_strides.0 + (n - 1) * b_strides.1 + 1);
    // SAFETY: the slice bounds above cover every element addressed through
    // the given dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = Geometry::check(input, kernel, Some(bias))?;
    let (hw, plen) = (g.pixels(), g.patch_len());
    let mut out = vec![0f32; g.batch * hw * g.cout];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0f32; hw * plen]
    };
    for b in 0..g.batch {
        let sample = &input.data()[b * hw * g.cin..][..hw * g.cin];
        let dst = &mut out[b * hw * g.cout..][..hw * g.cout];
        for row in dst.chunks_exact_mut(g.cout) {
            row.copy_from_slice(bias.data());
        }
        let a = if g.is_pointwise() {
            sample
        } else {
            im2col(&g, sample, &mut cols);
            &cols
        };
        gemm(hw, plen, g.cout, a, (plen, 1), kernel.data(), (g.cout, 1), 1.0, dst);
    }
    Tensor::new(vec![g.batch, g.height, g.width, g.cout], out)
}

/// Exact adjoint of [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward(grad_out: &Tensor, input: &Tensor, kernel: &Tensor) -> Result<ConvGrads> {
    let g = Geometry::check(input, kernel, None)?;
    let expected = [g.batch, g.height, g.width, g.cout];
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!(
            "conv2d_backward: grad_out {:?} does not match forward output {expected:?}",
            grad_out.shape()
        )));
    }
    let (hw, plen) = (g.pixels(), g.patch_len());
    let mut grad_input = vec![0f32; g.batch * hw * g.cin];
    let mut grad_kernel = vec![0f32; plen * g.cout];
    let mut grad_bias = vec![0f32; g.cout];
    let mut cols = vec![0f32; if g.is_pointwise() { 0 } else { hw * plen }];
    let mut grad_cols = vec![0f32; if g.is_pointwise() { 0 } else { hw * plen }];

    for b in 0..g.batch {
        let sample = &input.data()[b * hw * g.cin..][..hw * g.cin];
        let go = &grad_out.data()[b * hw * g.cout..][..hw * g.cout];
        for row in go.chunks_exact(g.cout) {
            for (acc, v) in grad_bias.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let gi = &mut grad_input[b * hw * g.cin..][..hw * g.cin];
        if g.is_pointwise() {
            gemm(g.cin, hw, g.cout, sample, (1, g.cin), go, (g.cout, 1), 1.0, &mut grad_kernel);
            gemm(hw, g.cout, g.cin, go, (g.cout, 1), kernel.data(), (1, g.cout), 0.0, gi);
        } else {
            im2col(&g, sample, &mut cols);
            gemm(plen, hw, g.cout, &cols, (1, plen), go, (g.cout, 1), 1.0, &mut grad_kernel);
            gemm(hw, g.cout, plen, go, (g.cout, 1), kernel.data(), (1, g.cout), 0.0, &mut grad_cols);
            col2im_add(&g, &grad_cols, gi);
        }
    }

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        kernel: Tensor::new(kernel.shape().to_vec(), grad_kernel)?,
        bias: Tensor::new(vec![g.cout], grad_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_is_scalar_multiply() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d_forward(&x, &k, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn zero_padding_window_sums() {
        let x = Tensor::filled(&[1, 3, 3, 1], 1.0);
        let k = Tensor::filled(&[3, 3, 1, 1], 1.0);
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 1]);
        assert_eq!(y.data()[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(y.data()[corner], 4.0);
        }
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        let err = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 4, 4, 2]") && msg.contains("[3, 3, 3, 1]"), "{msg}");
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::zeros(&[1, 4, 4, 1]);
        let k = Tensor::zeros(&[2, 2, 1, 1]);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = Tensor::filled(&[2, 4, 4, 2], 0.7);
        let k = Tensor::filled(&[3, 3, 2, 3], -0.2);
        let g = conv2d_backward(&Tensor::zeros(&[2, 4, 4, 3]), &x, &k).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_kernel_grad_is_input_dot_upstream() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let go = Tensor::new(vec![1, 2, 2, 1], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.5]).unwrap();
        let g = conv2d_backward(&go, &x, &k).unwrap();
        let expected: f32 = x.data().iter().zip(go.data()).map(|(a, b)| a * b).sum();
        assert_eq!(g.kernel.data(), &[expected]);
        assert_eq!(g.bias.data(), &[1.75]);
        let gi: Vec<f32> = go.data().iter().map(|v| v * 1.5).collect();
        assert_eq!(g.input.data(), gi.as_slice());
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 2, 3]);
        assert!(conv2d_backward(&Tensor::zeros(&[1, 4, 4, 2]), &x, &k).is_err());
    }
}
