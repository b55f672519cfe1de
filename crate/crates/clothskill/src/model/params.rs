//! Named parameter tensors, their shapes, and initialization.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::{ModelConfig, ModelError};

/// An ordered map of named tensors. Parameters, gradients, and Adam moments
/// all use this shape; ordering is stable so checkpoints and updates are
/// deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorMap {
    map: BTreeMap<String, Tensor>,
}

pub type AffordanceParams = TensorMap;

impl TensorMap {
    pub fn new() -> TensorMap {
        TensorMap::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.map.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing tensor {name:?}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// A map with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> TensorMap {
        TensorMap {
            map: self.map.iter().map(|(n, t)| (n.clone(), Tensor::zeros(&t.dims))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    pub fn quantize_f32(&mut self) {
        for t in self.map.values_mut() {
            t.quantize_f32();
        }
    }
}

/// The expected (name, shape) pairs for a config, in map order.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.embed_dim;
    let mut shapes: Vec<(String, Vec<usize>)> = vec![
        ("token_embedding".into(), vec![config.vocab_size, d]),
        ("patch_proj_w".into(), vec![config.patch_size * config.patch_size, d]),
        ("patch_proj_b".into(), vec![d]),
        ("img_pos".into(), vec![config.patch_count(), d]),
        ("txt_pos".into(), vec![config.max_text_len, d]),
        ("img_stream".into(), vec![d]),
        ("txt_stream".into(), vec![d]),
        ("modal_img".into(), vec![d]),
        ("modal_txt".into(), vec![d]),
        ("ln_f_scale".into(), vec![d]),
        ("ln_f_offset".into(), vec![d]),
    ];
    for l in 0..config.layers {
        for (suffix, dims) in [
            ("ln1_scale", vec![d]),
            ("ln1_offset", vec![d]),
            ("attn_q_w", vec![d, d]),
            ("attn_q_b", vec![d]),
            ("attn_k_w", vec![d, d]),
            ("attn_k_b", vec![d]),
            ("attn_v_w", vec![d, d]),
            ("attn_v_b", vec![d]),
            ("attn_o_w", vec![d, d]),
            ("attn_o_b", vec![d]),
            ("ln2_scale", vec![d]),
            ("ln2_offset", vec![d]),
            ("mlp_w1", vec![d, config.mlp_hidden]),
            ("mlp_b1", vec![config.mlp_hidden]),
            ("mlp_w2", vec![config.mlp_hidden, d]),
            ("mlp_b2", vec![d]),
        ] {
            shapes.push((format!("layer{l}.{suffix}"), dims));
        }
    }
    let channels = config.decoder_channels();
    for s in 0..config.decoder_stages {
        shapes.push((format!("decoder{s}_w"), vec![3, 3, channels[s], channels[s + 1]]));
        shapes.push((format!("decoder{s}_b"), vec![channels[s + 1]]));
    }
    let last = *channels.last().expect("at least one channel");
    shapes.push(("head_w".into(), vec![3, 3, last, 1]));
    shapes.push(("head_b".into(), vec![1]));
    shapes
}

/// Fresh parameters: Gaussian weights scaled by fan-in, zero biases, unit
/// layer-norm scales. Deterministic for a given seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<AffordanceParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = TensorMap::new();
    for (name, dims) in parameter_shapes(config) {
        let tensor = if name.ends_with("_b") || name.ends_with("_offset") {
            Tensor::zeros(&dims)
        } else if name.ends_with("_scale") {
            Tensor::full(&dims, 1.0)
        } else if name.ends_with("_w") && dims.len() == 2 {
            let fan_in = dims[0] as f64;
            Tensor::randn(&dims, 1.0 / fan_in.sqrt(), &mut rng)
        } else if name.ends_with("_w") && dims.len() == 4 {
            let fan_in = (dims[0] * dims[1] * dims[2]) as f64;
            Tensor::randn(&dims, 1.0 / fan_in.sqrt(), &mut rng)
        } else {
            // Embedding-style tensors.
            Tensor::randn(&dims, 0.02, &mut rng)
        };
        params.insert(name, tensor);
    }
    Ok(params)
}

/// Checks a tensor map against the shapes a config implies.
pub fn validate_shapes(params: &TensorMap, config: &ModelConfig) -> Result<(), ModelError> {
    let expected = parameter_shapes(config);
    if params.len() != expected.len() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{} tensors", expected.len()),
            actual: format!("{} tensors", params.len()),
        });
    }
    for (name, dims) in &expected {
        match params.try_get(name) {
            Some(t) if &t.dims == dims => {}
            Some(t) => {
                return Err(ModelError::ShapeMismatch {
                    expected: format!("{name} {dims:?}"),
                    actual: format!("{name} {:?}", t.dims),
                })
            }
            None => {
                return Err(ModelError::ShapeMismatch {
                    expected: format!("{name} {dims:?}"),
                    actual: "missing".to_string(),
                })
            }
        }
    }
    Ok(())
}
