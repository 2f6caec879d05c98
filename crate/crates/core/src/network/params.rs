//! Flat parameter storage with named tensors.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All trainable tensors of a model, stored contiguously in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    metas: Vec<TensorMeta>,
    data: Vec<f64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelParams {
    pub fn new() -> Self {
        Self {
            metas: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> ParamId {
        let len: usize = shape.iter().product();
        assert_eq!(values.len(), len, "initial values do not match shape");
        let offset = self.data.len();
        self.data.extend(values);
        self.metas.push(TensorMeta {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        ParamId(self.metas.len() - 1)
    }

    /// He-normal initialized tensor with the given fan-in.
    pub fn add_he(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut RngStream,
    ) -> ParamId {
        let len: usize = shape.iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        let values = (0..len).map(|_| rng.normal() * std).collect();
        self.add(name, shape, values)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let len = shape.iter().product();
        self.add(name, shape, vec![0.0; len])
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        let m = &self.metas[id.0];
        &self.data[m.offset..m.offset + m.len]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let m = &self.metas[id.0];
        &mut self.data[m.offset..m.offset + m.len]
    }

    pub fn tensors(&self) -> &[TensorMeta] {
        &self.metas
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Total number of scalars (sum of tensor sizes).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Name of the tensor holding flat index `i` and the offset within it.
    pub fn locate(&self, i: usize) -> Option<(&str, usize)> {
        self.metas
            .iter()
            .find(|m| i >= m.offset && i < m.offset + m.len)
            .map(|m| (m.name.as_str(), i - m.offset))
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            data: vec![0.0; self.data.len()],
            metas: self.metas.clone(),
        }
    }

    /// Add Gaussian noise with standard deviation `std` to every scalar.
    pub fn jitter(&mut self, std: f64, rng: &mut RngStream) {
        for v in &mut self.data {
            *v += std * rng.normal();
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite("parameters", &self.data, &self.metas)
    }

    /// Overwrite values from another parameter set of identical layout.
    pub fn copy_from(&mut self, other: &ModelParams) -> Result<()> {
        if self.metas != other.metas {
            return Err(Error::ArchitectureMismatch(
                "parameter layouts differ".into(),
            ));
        }
        self.data.copy_from_slice(&other.data);
        Ok(())
    }
}

fn check_finite(what: &str, data: &[f64], metas: &[TensorMeta]) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        let name = metas
            .iter()
            .find(|m| i >= m.offset && i < m.offset + m.len)
            .map_or("?", |m| m.name.as_str());
        return Err(Error::NonFinite {
            what: format!("{what} ({name})"),
            index: i,
        });
    }
    Ok(())
}

/// Gradient buffer with the same layout as a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    data: Vec<f64>,
    metas: Vec<TensorMeta>,
}

impl Gradients {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        let m = &self.metas[id.0];
        &self.data[m.offset..m.offset + m.len]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let m = &self.metas[id.0];
        &mut self.data[m.offset..m.offset + m.len]
    }

    /// Mutable views of two distinct tensors at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        let (ma, mb) = (&self.metas[a.0], &self.metas[b.0]);
        assert!(
            ma.offset + ma.len <= mb.offset,
            "tensors must be in declaration order"
        );
        let (lo, hi) = self.data.split_at_mut(mb.offset);
        (&mut lo[ma.offset..ma.offset + ma.len], &mut hi[..mb.len])
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite("gradients", &self.data, &self.metas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_layout() {
        let mut p = ModelParams::new();
        let a = p.add("a", &[2, 3], vec![1.0; 6]);
        let b = p.add_zeros("b", &[4]);
        assert_eq!(p.len(), 10);
        assert_eq!(p.get(a).len(), 6);
        assert_eq!(p.get(b), &[0.0; 4]);
        assert_eq!(p.locate(7), Some(("b", 1)));
        p.flat_mut()[9] = f64::NAN;
        assert!(matches!(
            p.check_finite(),
            Err(Error::NonFinite { index: 9, .. })
        ));
        let mut g = p.zeros_like();
        let (ga, gb) = g.pair_mut(a, b);
        ga[0] = 1.0;
        gb[3] = 2.0;
        assert_eq!(g.flat()[0], 1.0);
        assert_eq!(g.flat()[9], 2.0);
    }
}
