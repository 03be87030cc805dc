use rand::Rng;

use super::Tensor;

/// Fan-in and fan-out of a kernel shaped `(..receptive field.., in, out)`.
pub(crate) fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], shape[0]),
        n => {
            let rf: usize = shape[..n - 2].iter().product();
            (rf * shape[n - 2], rf * shape[n - 1])
        }
    }
}

pub(crate) fn glorot_bound(shape: &[usize]) -> f32 {
    let (fan_in, fan_out) = fans(shape);
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

/// Glorot (Xavier) uniform initialization on `[-b, b]`, `b = √(6 / (fan_in + fan_out))`.
pub fn glorot_uniform_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    assert!(!shape.is_empty(), "glorot init needs a non-empty shape");
    let b = glorot_bound(shape);
    Tensor::from_fn(shape, |_| rng.random_range(-b..=b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_for_wide_conv_kernel() {
        let b = glorot_bound(&[3, 3, 3, 64, 64]);
        let expected = (6.0f64 / (27.0 * 64.0 * 2.0)).sqrt();
        assert!((b as f64 - expected).abs() < 1e-7);
        assert!((b - 0.0417).abs() < 1e-4);
    }

    #[test]
    fn samples_respect_bound_and_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = [3, 3, 3, 16, 16];
        let t = glorot_uniform_init(&shape, &mut rng);
        let b = glorot_bound(&shape);
        assert!(t.data().iter().all(|v| v.abs() <= b));
        let n = t.len() as f64;
        let mean = t.sum_f64() / n;
        // std of U(-b, b) is b/√3; the sample mean has std b/√(3n).
        let sigma = b as f64 / (3.0 * n).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3σ {}", 3.0 * sigma);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = glorot_uniform_init(&[4, 5], &mut ChaCha8Rng::seed_from_u64(1));
        let b = glorot_uniform_init(&[4, 5], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }
}
