//! 2×2 max pooling and 2× nearest-neighbour upsampling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output of [`maxpool2_forward`]: pooled tensor plus, for every output
/// element, the flat index of the input element that produced it.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<u32>,
    input_shape: [usize; 4],
}

/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool2_forward(input: &Tensor) -> Result<Pooled> {
    let [b, h, w, c] = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2: spatial extents must be even, got {h}x{w}"
        )));
    }
    if input.len() > u32::MAX as usize {
        return Err(Error::Shape("maxpool2: tensor too large".into()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut argmax = Vec::with_capacity(b * oh * ow * c);
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((n * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = x[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((n * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx as u32);
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![b, oh, ow, c], out)?,
        argmax,
        input_shape: [b, h, w, c],
    })
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool2_backward(grad_out: &Tensor, pooled: &Pooled) -> Result<Tensor> {
    pooled.output.check_same_shape(grad_out, "maxpool2_backward")?;
    let mut grad = Tensor::zeros(&pooled.input_shape);
    let gi = grad.data_mut();
    for (&idx, &g) in pooled.argmax.iter().zip(grad_out.data()) {
        gi[idx as usize] += g;
    }
    Ok(grad)
}

pub fn upsample2_nearest(input: &Tensor) -> Result<Tensor> {
    let [b, h, w, c] = input.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0f32; b * oh * ow * c];
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((n * h + oy / 2) * w + ox / 2) * c;
                let dst = ((n * oh + oy) * ow + ox) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    Tensor::new(vec![b, oh, ow, c], out)
}

/// Sums the gradients of each replicated 2×2 block.
pub fn upsample2_backward(grad_out: &Tensor) -> Result<Tensor> {
    let [b, oh, ow, c] = grad_out.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::Shape(format!(
            "upsample2_backward: extents {oh}x{ow} are not an upsampled shape"
        )));
    }
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.data();
    let mut out = vec![0f32; b * h * w * c];
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((n * oh + oy) * ow + ox) * c;
                let dst = ((n * h + oy / 2) * w + ox / 2) * c;
                for ch in 0..c {
                    out[dst + ch] += g[src + ch];
                }
            }
        }
    }
    Tensor::new(vec![b, h, w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_takes_window_max() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool2_forward(&x).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn pool_of_constant_is_constant() {
        let x = Tensor::filled(&[2, 4, 6, 3], 1.25);
        let p = maxpool2_forward(&x).unwrap();
        assert_eq!(p.output.shape(), &[2, 2, 3, 3]);
        assert!(p.output.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn pool_rejects_odd_extent() {
        assert!(maxpool2_forward(&Tensor::zeros(&[1, 3, 4, 1])).is_err());
        assert!(maxpool2_forward(&Tensor::zeros(&[1, 4, 5, 1])).is_err());
    }

    #[test]
    fn pool_backward_routes_to_argmax_only() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 5.0, 3.0, 4.0]).unwrap();
        let p = maxpool2_forward(&x).unwrap();
        let g = maxpool2_backward(&Tensor::scalar(2.0), &p);
        assert!(g.is_err(), "shape [1] must not match [1,1,1,1]");
        let g = maxpool2_backward(&Tensor::filled(&[1, 1, 1, 1], 2.0), &p).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        let y = upsample2_nearest(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[5.0; 4]);
    }

    #[test]
    fn pool_after_upsample_of_constant_is_identity() {
        let x = Tensor::filled(&[1, 3, 3, 2], -0.5);
        let round = maxpool2_forward(&upsample2_nearest(&x).unwrap()).unwrap().output;
        assert_eq!(round, x);
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let g = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(upsample2_backward(&g).unwrap().data(), &[10.0]);
    }
}
