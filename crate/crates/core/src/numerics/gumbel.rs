use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Tape, Tensor, Var};

const U_MIN: f64 = 1e-10;
const U_MAX: f64 = 1.0 - 1e-10;

/// Standard Gumbel noise `-log(-log(u))`, with `u` clamped away from 0 and 1.
pub fn gumbel_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(U_MIN, U_MAX);
            -(-u.ln()).ln()
        })
        .collect()
}

impl Tape {
    /// Gumbel-softmax drawing its noise from `rng`.
    pub fn gumbel_softmax<R: Rng + ?Sized>(
        &mut self,
        logits: Var,
        temperature: f64,
        hard: bool,
        rng: &mut R,
    ) -> Result<Var, NumericsError> {
        if !(temperature > 0.0) {
            return Err(NumericsError::Temperature(temperature));
        }
        let noise = gumbel_noise(self.value(logits).numel(), rng);
        self.gumbel_softmax_with_noise(logits, &noise, temperature, hard)
    }
}

/// One-shot Gumbel-softmax of a vector of logits under a fixed seed.
pub fn gumbel_softmax(logits: &Tensor, temperature: f64, hard: bool, seed: u64) -> Result<Tensor, NumericsError> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = tape.gumbel_softmax(l, temperature, hard, &mut rng)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_logit_at_low_temperature() {
        let logits = Tensor::vector(vec![10.0, 0.0, 0.0]).unwrap();
        for seed in 0..20 {
            let y = gumbel_softmax(&logits, 0.1, false, seed).unwrap();
            // Noise occasionally overcomes a 10-nat gap; the fixed seeds here do not.
            assert!((y.data()[0] - 1.0).abs() < 1e-3, "seed {seed}: {:?}", y.data());
        }
    }

    #[test]
    fn hard_sample_is_one_hot() {
        let logits = Tensor::vector(vec![0.3, -1.2, 0.8, 0.1]).unwrap();
        for seed in 0..50 {
            let y = gumbel_softmax(&logits, 0.7, true, seed).unwrap();
            assert_eq!(y.data().iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(y.data().iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn soft_sample_is_probability_vector() {
        let logits = Tensor::vector(vec![0.3, -1.2, 0.8, 0.1]).unwrap();
        let y = gumbel_softmax(&logits, 1.3, false, 9).unwrap();
        assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn seeded_output_is_bit_identical() {
        let logits = Tensor::vector(vec![0.5, 0.25, -0.5]).unwrap();
        let a = gumbel_softmax(&logits, 0.5, false, 42).unwrap();
        let b = gumbel_softmax(&logits, 0.5, false, 42).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let logits = Tensor::vector(vec![0.0, 1.0]).unwrap();
        assert!(matches!(gumbel_softmax(&logits, 0.0, false, 1), Err(NumericsError::Temperature(_))));
        assert!(gumbel_softmax(&logits, -1.0, true, 1).is_err());
    }
}
