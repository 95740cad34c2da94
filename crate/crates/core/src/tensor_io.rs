//! Named f32 tensors to and from safetensors bytes.

use std::collections::BTreeMap;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use srseg_autograd::Tensor;

pub type NamedTensors = BTreeMap<String, Tensor<f32>>;

pub fn encode(tensors: &NamedTensors) -> Vec<u8> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, t)| (k.clone(), t.shape().to_vec(), t.to_le_bytes()))
        .collect();
    let views = bytes.iter().map(|(k, shape, data)| {
        let view =
            TensorView::new(Dtype::F32, shape.clone(), data).expect("shape matches byte length");
        (k.clone(), view)
    });
    safetensors::serialize(views, &None).expect("f32 tensors serialize")
}

pub fn decode(bytes: &[u8]) -> Result<NamedTensors, String> {
    let file = SafeTensors::deserialize(bytes).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for (name, view) in file.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(format!("{name} has dtype {:?}, expected F32", view.dtype()));
        }
        let t = Tensor::from_le_bytes(view.shape(), view.data())
            .ok_or_else(|| format!("{name}: truncated data"))?;
        out.insert(name, t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = NamedTensors::new();
        m.insert(
            "a.weight".into(),
            Tensor::from_vec(
                &[2, 3],
                vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25, 1e-30, -7.0],
            ),
        );
        m.insert("b".into(), Tensor::scalar(0.1));
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back.len(), 2);
        for (k, t) in &m {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back[k]), bits(t));
            assert_eq!(back[k].shape(), t.shape());
        }
        assert!(decode(b"garbage").is_err());
    }
}
