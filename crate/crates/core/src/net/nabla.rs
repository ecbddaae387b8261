use crate::error::{Error, Result};
use crate::net::arch::NablaArchitecture;
use crate::net::rcu::{
    accumulate, rcu_backward, rcu_forward, rcu_forward_train, RcuCache, RcuParams, RcuSpec,
};
use crate::nn::{
    bce_logit_grad, bce_loss, bias_init, conv2d_backward, conv2d_forward, count_parameters,
    he_init, maxpool2_backward, maxpool2_forward, mix_seed, sigmoid_scalar, upsample2_backward,
    upsample2_nearest, Gradients, ParamStore, Pooled, BCE_CLAMP,
};
use crate::tensor::Tensor;

const HEAD_W: &str = "head.w";
const HEAD_B: &str = "head.b";

/// Lower/upper bounds applied to output probabilities so they stay strictly in `(0, 1)`.
pub const PROB_FLOOR: f32 = BCE_CLAMP as f32;
pub const PROB_CEIL: f32 = 1.0 - BCE_CLAMP as f32;

pub fn encoder_prefix(level: usize) -> String {
    format!("enc{level}")
}

pub fn decoder_prefix(stream: usize, stage: usize) -> String {
    format!("dec{stream}.{stage}")
}

/// Named units of `arch` in construction order.
fn units(arch: &NablaArchitecture) -> Vec<(String, RcuSpec)> {
    let mut out: Vec<(String, RcuSpec)> = arch
        .encoder_units()
        .into_iter()
        .enumerate()
        .map(|(l, s)| (encoder_prefix(l), s))
        .collect();
    for (j, stream) in arch.decode_streams().into_iter().enumerate() {
        for (k, s) in stream.stages.into_iter().enumerate() {
            out.push((decoder_prefix(j, k), s));
        }
    }
    out
}

/// Every parameter name and shape `arch` requires.
pub fn expected_shapes(arch: &NablaArchitecture) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (prefix, spec) in units(arch) {
        for (suffix, shape) in spec.param_shapes() {
            out.push((format!("{prefix}.{suffix}"), shape));
        }
    }
    out.push((
        HEAD_W.to_string(),
        vec![1, 1, arch.fused_channels(), arch.output_channels],
    ));
    out.push((HEAD_B.to_string(), vec![arch.output_channels]));
    out
}

/// He-initialised weights and zero biases. Each tensor draws from its own
/// stream derived from `seed` and its construction index.
///
/// The output head starts at zero: without normalisation layers each
/// recurrent unit roughly triples activation variance, and a He head would
/// saturate every sigmoid before the first step.
pub fn build_network(arch: &NablaArchitecture, seed: u64) -> Result<ParamStore> {
    arch.validate()?;
    let mut store = ParamStore::new();
    for (i, (name, shape)) in expected_shapes(arch).into_iter().enumerate() {
        let t = if name == HEAD_W {
            Tensor::zeros(&shape)
        } else if shape.len() == 1 {
            bias_init(shape[0])
        } else {
            he_init(&shape, mix_seed(seed, i as u64))
        };
        store.insert(name, t)?;
    }
    Ok(store)
}

/// Checks that `store` holds exactly the tensors `arch` requires.
pub fn check_store(arch: &NablaArchitecture, store: &ParamStore) -> Result<()> {
    let expected = expected_shapes(arch);
    if expected.len() != store.len() {
        return Err(Error::Shape(format!(
            "architecture needs {} tensors, store holds {}",
            expected.len(),
            store.len()
        )));
    }
    for (name, shape) in &expected {
        let w = store.weight(name)?;
        if w.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "{name}: architecture expects {shape:?}, store holds {:?}",
                w.shape()
            )));
        }
    }
    Ok(())
}

fn check_batch(arch: &NablaArchitecture, batch: &Tensor) -> Result<()> {
    let [_, h, w, c] = batch.dims4()?;
    let side = arch.patch_side;
    if h != side || w != side || c != arch.input_channels {
        return Err(Error::Shape(format!(
            "network input must be [B, {side}, {side}, {}], got {:?}",
            arch.input_channels,
            batch.shape()
        )));
    }
    Ok(())
}

fn head_probabilities(logits: &Tensor) -> Tensor {
    logits.map(|z| sigmoid_scalar(z).clamp(PROB_FLOOR, PROB_CEIL))
}

/// Per-pixel probabilities `[B, side, side, 1]` for a batch `[B, side, side, 3]`.
pub fn network_forward(
    arch: &NablaArchitecture,
    store: &ParamStore,
    batch: &Tensor,
) -> Result<Tensor> {
    check_batch(arch, batch)?;
    let enc_specs = arch.encoder_units();
    let mut encoded: Vec<Tensor> = Vec::with_capacity(enc_specs.len());
    for (l, spec) in enc_specs.iter().enumerate() {
        let prefix = encoder_prefix(l);
        let p = RcuParams::from_store(store, &prefix, *spec)?;
        let x = match l {
            0 => rcu_forward(&p, batch)?,
            _ => rcu_forward(&p, &maxpool2_forward(&encoded[l - 1])?.output)?,
        };
        encoded.push(x);
    }

    let mut fused: Option<Tensor> = None;
    for (j, stream) in arch.decode_streams().iter().enumerate() {
        let mut h = encoded[stream.origin_level].clone();
        for (k, spec) in stream.stages.iter().enumerate() {
            let prefix = decoder_prefix(j, k);
            let p = RcuParams::from_store(store, &prefix, *spec)?;
            h = rcu_forward(&p, &upsample2_nearest(&h)?)?;
        }
        match fused.as_mut() {
            Some(acc) => acc.add_assign(&h)?,
            None => fused = Some(h),
        }
    }
    let fused = fused.expect("n_decode_levels >= 1");
    let logits = conv2d_forward(&fused, store.weight(HEAD_W)?, store.weight(HEAD_B)?)?;
    Ok(head_probabilities(&logits))
}

/// Loss, predictions and exact parameter gradients for one batch.
pub struct Backprop {
    pub loss: f64,
    pub pred: Tensor,
    pub grads: Gradients,
}

/// Forward pass with cached activations, mean BCE against `target`
/// (`[B, side, side, 1]`, values in {0, 1}) and backward pass.
pub fn network_backprop(
    arch: &NablaArchitecture,
    store: &ParamStore,
    batch: &Tensor,
    target: &Tensor,
) -> Result<Backprop> {
    check_batch(arch, batch)?;
    let enc_specs = arch.encoder_units();
    let levels = enc_specs.len();

    let mut enc_out: Vec<Tensor> = Vec::with_capacity(levels);
    let mut enc_cache: Vec<RcuCache> = Vec::with_capacity(levels);
    let mut pools: Vec<Option<Pooled>> = Vec::with_capacity(levels);
    for (l, spec) in enc_specs.iter().enumerate() {
        let prefix = encoder_prefix(l);
        let p = RcuParams::from_store(store, &prefix, *spec)?;
        let (input, pool) = if l == 0 {
            (batch.clone(), None)
        } else {
            let pooled = maxpool2_forward(&enc_out[l - 1])?;
            (pooled.output.clone(), Some(pooled))
        };
        let (y, cache) = rcu_forward_train(&p, input)?;
        enc_out.push(y);
        enc_cache.push(cache);
        pools.push(pool);
    }

    let streams = arch.decode_streams();
    let mut stream_caches: Vec<Vec<RcuCache>> = Vec::with_capacity(streams.len());
    let mut fused: Option<Tensor> = None;
    for (j, stream) in streams.iter().enumerate() {
        let mut h = enc_out[stream.origin_level].clone();
        let mut caches = Vec::with_capacity(stream.stages.len());
        for (k, spec) in stream.stages.iter().enumerate() {
            let prefix = decoder_prefix(j, k);
            let p = RcuParams::from_store(store, &prefix, *spec)?;
            let (y, cache) = rcu_forward_train(&p, upsample2_nearest(&h)?)?;
            caches.push(cache);
            h = y;
        }
        stream_caches.push(caches);
        match fused.as_mut() {
            Some(acc) => acc.add_assign(&h)?,
            None => fused = Some(h),
        }
    }
    let fused = fused.expect("n_decode_levels >= 1");
    let head_w = store.weight(HEAD_W)?;
    let logits = conv2d_forward(&fused, head_w, store.weight(HEAD_B)?)?;
    let pred = head_probabilities(&logits);
    let loss = bce_loss(&pred, target)?;

    let mut grads = Gradients::new();
    let head = conv2d_backward(&bce_logit_grad(&pred, target)?, &fused, head_w)?;
    accumulate(&mut grads, HEAD_W.into(), head.kernel)?;
    accumulate(&mut grads, HEAD_B.into(), head.bias)?;
    let grad_fused = head.input;

    let mut enc_grads: Vec<Option<Tensor>> = vec![None; levels];
    for (j, stream) in streams.iter().enumerate().rev() {
        let mut g = grad_fused.clone();
        for (k, spec) in stream.stages.iter().enumerate().rev() {
            let prefix = decoder_prefix(j, k);
            let p = RcuParams::from_store(store, &prefix, *spec)?;
            g = rcu_backward(&p, &stream_caches[j][k], &g, &mut grads)?;
            g = upsample2_backward(&g)?;
        }
        add_into(&mut enc_grads[stream.origin_level], g)?;
    }

    for l in (0..levels).rev() {
        let g = enc_grads[l]
            .take()
            .expect("every encoder level feeds a stream or the level above");
        let prefix = encoder_prefix(l);
        let p = RcuParams::from_store(store, &prefix, enc_specs[l])?;
        let gx = rcu_backward(&p, &enc_cache[l], &g, &mut grads)?;
        if let Some(pool) = &pools[l] {
            let g_prev = maxpool2_backward(&gx, pool)?;
            add_into(&mut enc_grads[l - 1], g_prev)?;
        }
    }

    Ok(Backprop { loss, pred, grads })
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot.as_mut() {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// A network layout together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct NablaNet {
    pub arch: NablaArchitecture,
    pub params: ParamStore,
    pub seed: u64,
}

impl NablaNet {
    pub fn build(arch: NablaArchitecture, seed: u64) -> Result<Self> {
        let params = build_network(&arch, seed)?;
        Ok(NablaNet { arch, params, seed })
    }

    /// Wraps an existing store after checking it matches `arch`.
    pub fn from_parts(arch: NablaArchitecture, params: ParamStore, seed: u64) -> Result<Self> {
        arch.validate()?;
        check_store(&arch, &params)?;
        Ok(NablaNet { arch, params, seed })
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        network_forward(&self.arch, &self.params, batch)
    }

    pub fn backprop(&self, batch: &Tensor, target: &Tensor) -> Result<Backprop> {
        network_backprop(&self.arch, &self.params, batch, target)
    }

    pub fn parameter_count(&self) -> usize {
        count_parameters(&self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NablaArchitecture {
        NablaArchitecture::with_base_width(2, 3, 3).with_patch_side(8)
    }

    #[test]
    fn counted_parameters_match_layout() {
        for arch in [toy(), NablaArchitecture::with_base_width(4, 4, 2).with_patch_side(16)] {
            let store = build_network(&arch, 1).unwrap();
            assert_eq!(count_parameters(&store), arch.param_count());
        }
    }

    #[test]
    fn same_seed_same_store() {
        let a = build_network(&toy(), 42).unwrap();
        let b = build_network(&toy(), 42).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&build_network(&toy(), 43).unwrap()));
    }

    #[test]
    fn wrong_patch_side_rejected_with_shapes() {
        let net = NablaNet::build(toy(), 0).unwrap();
        let err = net.forward(&Tensor::zeros(&[1, 16, 16, 3])).unwrap_err().to_string();
        assert!(err.contains("[B, 8, 8, 3]") && err.contains("[1, 16, 16, 3]"), "{err}");
    }

    #[test]
    fn backprop_prediction_equals_forward() {
        let net = NablaNet::build(toy(), 3).unwrap();
        let x = he_init(&[2, 8, 8, 3], 9).map(|v| v.abs().min(1.0));
        let t = Tensor::new(vec![2, 8, 8, 1], (0..128).map(|i| (i % 5 == 0) as u8 as f32).collect())
            .unwrap();
        let bp = net.backprop(&x, &t).unwrap();
        assert!(bp.pred.bit_eq(&net.forward(&x).unwrap()));
        assert_eq!(bp.grads.len(), net.params.len());
    }

    #[test]
    fn from_parts_rejects_foreign_store() {
        let store = build_network(&toy(), 0).unwrap();
        let other = NablaArchitecture::with_base_width(4, 3, 3).with_patch_side(8);
        assert!(NablaNet::from_parts(other, store, 0).is_err());
    }
}
