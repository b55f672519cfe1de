//! A minimal dense f64 tensor: shape plus flat row-major data.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        Tensor { dims: dims.to_vec(), data: vec![0.0; dims.iter().product()] }
    }

    pub fn full(dims: &[usize], value: f64) -> Tensor {
        Tensor { dims: dims.to_vec(), data: vec![value; dims.iter().product()] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { dims: dims.to_vec(), data }
    }

    /// Gaussian init via Box–Muller on the shared deterministic generator.
    pub fn randn(dims: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        while data.len() < len {
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            let radius = (-2.0 * u1.ln()).sqrt();
            let angle = 2.0 * std::f64::consts::PI * u2;
            data.push(radius * angle.cos() * std);
            if data.len() < len {
                data.push(radius * angle.sin() * std);
            }
        }
        Tensor { dims: dims.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rounds every value to its nearest f32, staying in f64 storage.
    /// Training applies this at epoch boundaries so that the f32 checkpoint
    /// format round-trips bit-exactly and resumed runs match continuous
    /// ones.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn randn_is_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(Tensor::randn(&[4, 3], 0.1, &mut a), Tensor::randn(&[4, 3], 0.1, &mut b));
    }

    #[test]
    fn randn_has_roughly_requested_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::randn(&[10_000], 0.5, &mut rng);
        let var = t.data.iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.02, "std was {}", var.sqrt());
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut t = Tensor::from_vec(&[3], vec![0.1, 1.0 / 3.0, -7.25]);
        t.quantize_f32();
        let once = t.clone();
        t.quantize_f32();
        assert_eq!(t, once);
    }
}
