use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named, ordered collection of tensors. Iteration order is insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar dimension.
    pub fn k(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Copy of `self` with values taken from `flat`, in iteration order.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        let mut out = self.clone();
        out.assign_flat(flat)?;
        Ok(out)
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.k() {
            return Err(Error::ShapeMismatch {
                op: "unflatten",
                shapes: format!("flat length {} vs k = {}", flat.len(), self.k()),
            });
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Register every tensor as a differentiable leaf on `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.param(t.clone())).collect()
    }

    /// Register every tensor as a constant on `graph`.
    pub fn bind_constant(&self, graph: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.constant(t.clone())).collect()
    }

    /// `self + scale * delta`, tensor by tensor. Zero entries of `scale * delta`
    /// leave the parameter bits untouched.
    pub fn displaced(&self, delta: &[Tensor], scale: f64) -> ParamSet {
        let mut out = self.clone();
        if scale == 0.0 {
            return out;
        }
        for (p, d) in out.tensors.iter_mut().zip(delta) {
            for (pv, &dv) in p.data_mut().iter_mut().zip(d.data()) {
                let step = scale * dv;
                if step != 0.0 {
                    *pv += step;
                }
            }
        }
        out
    }

    /// FNV-1a over the bit patterns of every value; detects any drift.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sq_norm).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(p.insert("w", Tensor::scalar(2.0)), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(p.unflatten(&[1.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_is_identity(
            shapes in proptest::collection::vec((1usize..5, 1usize..5), 1..5),
            seed in any::<u64>(),
        ) {
            let mut p = ParamSet::new();
            let mut s = seed;
            for (i, (r, c)) in shapes.iter().enumerate() {
                let data = (0..r * c).map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits((s >> 2) | 0x3ff0_0000_0000_0000) - 1.5
                }).collect();
                p.insert(format!("p{i}"), Tensor::matrix(*r, *c, data).unwrap()).unwrap();
            }
            let flat = p.flatten();
            prop_assert_eq!(flat.len(), p.k());
            let q = p.unflatten(&flat).unwrap();
            prop_assert_eq!(q.checksum(), p.checksum());
            prop_assert_eq!(q, p);
        }
    }
}
