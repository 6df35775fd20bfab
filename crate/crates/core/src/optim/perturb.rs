use rand::Rng;
use rand_distr::StandardNormal;

use super::config::GaussianNeighborhood;
use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Per-parameter displacement, shape-congruent with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    tensors: Vec<Tensor>,
}

impl Perturbation {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    /// Wrap values given in [`ParamSet`] flatten order.
    pub fn from_flat(like: &ParamSet, flat: &[f64]) -> Result<Self> {
        Ok(Self::new(like.unflatten(flat)?.tensors().to_vec()))
    }

    pub fn zeros_like(params: &ParamSet) -> Self {
        Self::new(params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn k(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        self.tensors.len() == params.len()
            && self
                .tensors
                .iter()
                .zip(params.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub(crate) fn check(&self, params: &ParamSet) -> Result<()> {
        if self.matches(params) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "perturbation",
                shapes: format!("{:?} vs {:?}", self.tensors.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>(), params.shapes()),
            })
        }
    }
}

/// Clamp a raw `N(0, sigma^2)` draw to `[-c, c]` and scale by the radius.
pub fn scale_draw(draw: f64, nb: &GaussianNeighborhood) -> f64 {
    nb.radius * draw.clamp(-nb.clamp, nb.clamp)
}

/// One clamped Gaussian entry scaled by the radius.
pub fn sample_entry<R: Rng + ?Sized>(nb: &GaussianNeighborhood, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    scale_draw(nb.sigma * z, nb)
}

/// Draw `radius * clamp(N(0, sigma^2), -c, c)` for every parameter entry.
///
/// Only `rng` is consumed, so with a dedicated stream the draw at each step is
/// the same whatever batch the step trains on.
pub fn sample_gaussian_perturbation<R: Rng + ?Sized>(shapes: &[Vec<usize>], nb: &GaussianNeighborhood, rng: &mut R) -> Perturbation {
    let tensors = shapes
        .iter()
        .map(|shape| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| sample_entry(nb, rng)).collect();
            Tensor::new(shape.clone(), data).expect("perturbation shape")
        })
        .collect();
    Perturbation::new(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn nb(radius: f64) -> GaussianNeighborhood {
        GaussianNeighborhood {
            radius,
            sigma: 1.0 / 3.0,
            clamp: 1.0,
        }
    }

    #[test]
    fn zero_radius_is_zero() {
        let mut rng = stream(1, Stream::Perturbation);
        let p = sample_gaussian_perturbation(&[vec![3, 4], vec![1, 4]], &nb(0.0), &mut rng);
        assert!(p.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(p.k(), 16);
    }

    #[test]
    fn clamp_boundary() {
        let n = nb(0.1 * 0.05);
        assert!((scale_draw(1.7, &n) - 0.005).abs() < 1e-18);
        assert!((scale_draw(-4.0, &n) + 0.005).abs() < 1e-18);
        assert_eq!(scale_draw(0.5, &n), 0.5 * n.radius);
    }

    #[test]
    fn entries_bounded() {
        let mut rng = stream(7, Stream::Perturbation);
        let n = GaussianNeighborhood {
            radius: 0.3,
            sigma: 2.0,
            clamp: 1.0,
        };
        let p = sample_gaussian_perturbation(&[vec![50, 50]], &n, &mut rng);
        assert!(p.max_abs() <= 0.3);
        // sigma = 2 puts most draws on the clamp
        assert_eq!(p.max_abs(), 0.3);
    }

    #[test]
    fn same_stream_same_draw() {
        let shapes = [vec![2, 3], vec![1, 3]];
        let a = sample_gaussian_perturbation(&shapes, &nb(0.005), &mut stream(3, Stream::Perturbation));
        let b = sample_gaussian_perturbation(&shapes, &nb(0.005), &mut stream(3, Stream::Perturbation));
        assert_eq!(a, b);
    }
}
