//! Recurrent convolutional unit.
//!
//! ```text
//! a   = conv_f(x)
//! z_0 = relu(a)
//! z_k = relu(a + conv_r(z_{k-1}))      k = 1..=t_steps
//! ```
//!
//! `conv_f` is evaluated once and `conv_r` is shared across all steps.

use crate::error::{Error, Result};
use crate::nn::{conv2d_backward, conv2d_forward, relu, relu_backward, Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RcuSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub t_steps: usize,
}

impl RcuSpec {
    pub fn new(in_channels: usize, out_channels: usize, t_steps: usize) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::InvalidArgument(
                "recurrent unit needs t_steps >= 1".into(),
            ));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument(
                "recurrent unit channel counts must be positive".into(),
            ));
        }
        Ok(RcuSpec {
            in_channels,
            out_channels,
            t_steps,
        })
    }

    /// `(name suffix, shape)` for each of the unit's four tensors.
    pub fn param_shapes(&self) -> [(&'static str, Vec<usize>); 4] {
        let (ci, co) = (self.in_channels, self.out_channels);
        [
            ("f.w", vec![3, 3, ci, co]),
            ("f.b", vec![co]),
            ("r.w", vec![3, 3, co, co]),
            ("r.b", vec![co]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Borrowed view of one unit's weights inside a [`ParamStore`].
pub struct RcuParams<'a> {
    pub spec: RcuSpec,
    pub prefix: &'a str,
    pub wf: &'a Tensor,
    pub bf: &'a Tensor,
    pub wr: &'a Tensor,
    pub br: &'a Tensor,
}

impl<'a> RcuParams<'a> {
    pub fn from_store(store: &'a ParamStore, prefix: &'a str, spec: RcuSpec) -> Result<Self> {
        let get = |suffix: &str| store.weight(&format!("{prefix}.{suffix}"));
        let p = RcuParams {
            spec,
            prefix,
            wf: get("f.w")?,
            bf: get("f.b")?,
            wr: get("r.w")?,
            br: get("r.b")?,
        };
        for ((suffix, shape), t) in spec.param_shapes().iter().zip([p.wf, p.bf, p.wr, p.br]) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{prefix}.{suffix}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        Ok(p)
    }
}

/// Activations retained by a training-mode forward pass.
pub struct RcuCache {
    input: Tensor,
    /// `z_0 ..= z_t`
    states: Vec<Tensor>,
}

fn check_input(p: &RcuParams<'_>, x: &Tensor) -> Result<()> {
    let [_, _, _, c] = x.dims4()?;
    if c != p.spec.in_channels {
        return Err(Error::Shape(format!(
            "{}: input {:?} has {c} channels, unit expects {}",
            p.prefix,
            x.shape(),
            p.spec.in_channels
        )));
    }
    Ok(())
}

pub fn rcu_forward(p: &RcuParams<'_>, x: &Tensor) -> Result<Tensor> {
    check_input(p, x)?;
    let a = conv2d_forward(x, p.wf, p.bf)?;
    let mut z = relu(&a);
    for _ in 0..p.spec.t_steps {
        let mut s = conv2d_forward(&z, p.wr, p.br)?;
        s.add_assign(&a)?;
        z = relu(&s);
    }
    Ok(z)
}

pub fn rcu_forward_train(p: &RcuParams<'_>, x: Tensor) -> Result<(Tensor, RcuCache)> {
    check_input(p, &x)?;
    let a = conv2d_forward(&x, p.wf, p.bf)?;
    let mut states = Vec::with_capacity(p.spec.t_steps + 1);
    states.push(relu(&a));
    for k in 0..p.spec.t_steps {
        let mut s = conv2d_forward(&states[k], p.wr, p.br)?;
        s.add_assign(&a)?;
        states.push(relu(&s));
    }
    let out = states.last().expect("at least z_0").clone();
    Ok((out, RcuCache { input: x, states }))
}

/// Backpropagates through the unrolled recurrence; parameter gradients are
/// accumulated into `grads` under the unit's prefix. Returns `dL/dx`.
pub fn rcu_backward(
    p: &RcuParams<'_>,
    cache: &RcuCache,
    grad_out: &Tensor,
    grads: &mut Gradients,
) -> Result<Tensor> {
    let t = p.spec.t_steps;
    let mut g = grad_out.clone();
    let mut grad_a: Option<Tensor> = None;
    let mut grad_wr = Tensor::zeros(p.wr.shape());
    let mut grad_br = Tensor::zeros(p.br.shape());
    for k in (1..=t).rev() {
        let gs = relu_backward(&g, &cache.states[k])?;
        match grad_a.as_mut() {
            Some(acc) => acc.add_assign(&gs)?,
            None => grad_a = Some(gs.clone()),
        }
        let cg = conv2d_backward(&gs, &cache.states[k - 1], p.wr)?;
        grad_wr.add_assign(&cg.kernel)?;
        grad_br.add_assign(&cg.bias)?;
        g = cg.input;
    }
    let gs0 = relu_backward(&g, &cache.states[0])?;
    let grad_a = match grad_a {
        Some(mut acc) => {
            acc.add_assign(&gs0)?;
            acc
        }
        None => gs0,
    };
    let cf = conv2d_backward(&grad_a, &cache.input, p.wf)?;

    accumulate(grads, format!("{}.f.w", p.prefix), cf.kernel)?;
    accumulate(grads, format!("{}.f.b", p.prefix), cf.bias)?;
    accumulate(grads, format!("{}.r.w", p.prefix), grad_wr)?;
    accumulate(grads, format!("{}.r.b", p.prefix), grad_br)?;
    Ok(cf.input)
}

pub(crate) fn accumulate(grads: &mut Gradients, name: String, g: Tensor) -> Result<()> {
    match grads.get_mut(&name) {
        Some(acc) => acc.add_assign(&g),
        None => {
            grads.insert(name, g);
            Ok(())
        }
    }
}
