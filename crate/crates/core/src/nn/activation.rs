use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of `relu` given its forward output. The subgradient at zero is zero.
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    output.check_same_shape(grad_out, "relu_backward")?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient of `sigmoid` given its forward output `s`: `g·s·(1−s)`.
pub fn sigmoid_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    output.check_same_shape(grad_out, "sigmoid_backward")?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &s)| g * s * (1.0 - s))
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn relu_backward_masks_inactive() {
        let y = Tensor::new(vec![3], vec![0.0, 1.0, 2.0]).unwrap();
        let g = Tensor::new(vec![3], vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(relu_backward(&g, &y).unwrap().data(), &[0.0, 6.0, 7.0]);
    }
}
