//! Count-sketch hashes for compact bilinear pooling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Fixed random index/sign hashes for sketching a pair of feature vectors,
/// drawn once per model and stored in the checkpoint.
///
/// For channel vectors `a`, `b` of length `input_dim`, the sketched bilinear
/// feature is the circular convolution of the two count sketches; its inner
/// products are unbiased estimates of those of the full outer product.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSketch {
    pub input_dim: usize,
    pub dim: usize,
    pub seed: u64,
    pub h1: Vec<u32>,
    pub s1: Vec<i8>,
    pub h2: Vec<u32>,
    pub s2: Vec<i8>,
}

impl CountSketch {
    /// Draw the four hash tables from `seed`. `dim` must be a power of two.
    pub fn new(input_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if !dim.is_power_of_two() {
            return Err(Error::invalid(format!(
                "sketch dimension {dim} must be a power of two"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> (Vec<u32>, Vec<i8>) {
            let h = (0..n).map(|_| rng.gen_range(0..dim as u32)).collect();
            let s = (0..n).map(|_| if rng.gen::<bool>() { 1i8 } else { -1 }).collect();
            (h, s)
        };
        let (h1, s1) = draw(input_dim);
        let (h2, s2) = draw(input_dim);
        Ok(CountSketch {
            input_dim,
            dim,
            seed,
            h1,
            s1,
            h2,
            s2,
        })
    }

    /// Rebuild from checkpointed tables.
    pub fn from_tables(
        dim: usize,
        seed: u64,
        h1: Vec<u32>,
        s1: Vec<i8>,
        h2: Vec<u32>,
        s2: Vec<i8>,
    ) -> Result<Self> {
        if !dim.is_power_of_two() {
            return Err(Error::invalid(format!(
                "sketch dimension {dim} must be a power of two"
            )));
        }
        if h1.len() != s1.len() || h2.len() != s2.len() || h1.len() != h2.len() {
            return Err(Error::invalid("sketch hash tables have inconsistent lengths"));
        }
        Ok(CountSketch {
            input_dim: h1.len(),
            dim,
            seed,
            h1,
            s1,
            h2,
            s2,
        })
    }

    /// Sum over spatial positions of the circular convolution of the two
    /// per-position count sketches. `a`, `b` are channel-major `C×P`.
    ///
    /// The sketches have at most `C` nonzero entries, so the convolution is
    /// evaluated directly over nonzero pairs: for channels `i`, `j` the
    /// product lands at index `(h1[i] + h2[j]) mod dim` with sign
    /// `s1[i]·s2[j]`.
    pub fn fuse_forward<T: Scalar>(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, p) = self.check_pair(a, b)?;
        let mask = self.dim - 1;
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![T::zero(); self.dim];
        for i in 0..c {
            let si = T::from_f64(self.s1[i] as f64);
            let ar = &ad[i * p..(i + 1) * p];
            for j in 0..c {
                let idx = (self.h1[i] as usize + self.h2[j] as usize) & mask;
                let s = si * T::from_f64(self.s2[j] as f64);
                let br = &bd[j * p..(j + 1) * p];
                let mut acc = T::zero();
                for q in 0..p {
                    acc += ar[q] * br[q];
                }
                out[idx] += s * acc;
            }
        }
        Tensor::from_vec(&[self.dim], out)
    }

    /// Gradients of [`CountSketch::fuse_forward`] for both inputs.
    pub fn fuse_backward<T: Scalar>(
        &self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        grad_out: &[T],
    ) -> (Tensor<T>, Tensor<T>) {
        let (c, p) = (a.shape()[0], a.shape()[1]);
        let mask = self.dim - 1;
        let (ad, bd) = (a.data(), b.data());
        let mut ga = vec![T::zero(); c * p];
        let mut gb = vec![T::zero(); c * p];
        for i in 0..c {
            let si = T::from_f64(self.s1[i] as f64);
            for j in 0..c {
                let idx = (self.h1[i] as usize + self.h2[j] as usize) & mask;
                let g = grad_out[idx];
                if g == T::zero() {
                    continue;
                }
                let s = si * T::from_f64(self.s2[j] as f64);
                let w = s * g;
                let ar = &ad[i * p..(i + 1) * p];
                let br = &bd[j * p..(j + 1) * p];
                for q in 0..p {
                    ga[i * p + q] += w * br[q];
                    gb[j * p + q] += w * ar[q];
                }
            }
        }
        (
            Tensor::from_vec(&[c, p], ga).unwrap(),
            Tensor::from_vec(&[c, p], gb).unwrap(),
        )
    }

    fn check_pair<T: Scalar>(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
        if a.shape().len() != 2 || a.shape() != b.shape() {
            return Err(Error::shape(
                "compact_bilinear",
                format!("need matching C×P inputs, got {:?} and {:?}", a.shape(), b.shape()),
            ));
        }
        if a.shape()[0] != self.input_dim {
            return Err(Error::shape(
                "compact_bilinear",
                format!(
                    "input channels {} != sketch input dim {}",
                    a.shape()[0],
                    self.input_dim
                ),
            ));
        }
        Ok((a.shape()[0], a.shape()[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(CountSketch::new(8, 100, 1).is_err());
        assert!(CountSketch::new(8, 128, 1).is_ok());
    }

    #[test]
    fn zero_inputs_give_zero_output() {
        let sk = CountSketch::new(4, 64, 9).unwrap();
        let a = Tensor::<f32>::zeros(&[4, 3]);
        let b = Tensor::<f32>::zeros(&[4, 3]);
        let out = sk.fuse_forward(&a, &b).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = CountSketch::new(16, 256, 42).unwrap();
        let b = CountSketch::new(16, 256, 42).unwrap();
        assert_eq!(a, b);
        let c = CountSketch::new(16, 256, 43).unwrap();
        assert_ne!(a, c);
    }
}
