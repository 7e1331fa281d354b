//! Dense row-major tensors over `f64`, real or complex.
//!
//! Complex tensors store interleaved `(re, im)` pairs, so `data.len()` is
//! twice the element count. Arithmetic never broadcasts implicitly; the only
//! mixed-shape operations are the scalar ones.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Real,
    Complex,
}

impl Kind {
    fn width(self) -> usize {
        match self {
            Kind::Real => 1,
            Kind::Complex => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    kind: Kind,
}

/// Splits a shape around `axis` into `(outer, len, inner)` extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::with_kind(shape, data, Kind::Real)
    }

    pub fn from_complex(shape: Vec<usize>, values: &[Complex64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len() * 2);
        for v in values {
            data.push(v.re);
            data.push(v.im);
        }
        Self::with_kind(shape, data, Kind::Complex)
    }

    pub fn with_kind(shape: Vec<usize>, data: Vec<f64>, kind: Kind) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel * kind.width() != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} ({kind:?}) needs {} values, got {}",
                numel * kind.width(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data, kind })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            kind: Kind::Real,
        }
    }

    pub fn zeros_complex(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; 2 * n],
            kind: Kind::Complex,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            kind: Kind::Real,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            kind: Kind::Real,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn is_complex(&self) -> bool {
        self.kind == Kind::Complex
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn complex_at(&self, flat: usize) -> Complex64 {
        debug_assert!(self.is_complex());
        Complex64::new(self.data[2 * flat], self.data[2 * flat + 1])
    }

    pub fn to_complex_vec(&self) -> Vec<Complex64> {
        match self.kind {
            Kind::Complex => self
                .data
                .chunks_exact(2)
                .map(|c| Complex64::new(c[0], c[1]))
                .collect(),
            Kind::Real => self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    /// Promotes a real tensor to complex with zero imaginary part.
    pub fn to_complex(&self) -> Tensor {
        match self.kind {
            Kind::Complex => self.clone(),
            Kind::Real => {
                let mut data = Vec::with_capacity(self.data.len() * 2);
                for &x in &self.data {
                    data.push(x);
                    data.push(0.0);
                }
                Tensor {
                    shape: self.shape.clone(),
                    data,
                    kind: Kind::Complex,
                }
            }
        }
    }

    pub fn real_part(&self) -> Tensor {
        self.component(0)
    }

    pub fn imag_part(&self) -> Tensor {
        self.component(1)
    }

    fn component(&self, offset: usize) -> Tensor {
        let data = match self.kind {
            Kind::Complex => self.data.iter().skip(offset).step_by(2).copied().collect(),
            Kind::Real if offset == 0 => self.data.clone(),
            Kind::Real => vec![0.0; self.data.len()],
        };
        Tensor {
            shape: self.shape.clone(),
            data,
            kind: Kind::Real,
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::with_kind(shape.to_vec(), self.data.clone(), self.kind)
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_same(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape || self.kind != other.kind {
            return Err(Error::shape(format!(
                "{op}: {:?}/{:?} vs {:?}/{:?}",
                self.shape, self.kind, other.shape, other.kind
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    /// Elementwise product; complex tensors multiply as complex numbers.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "mul")?;
        match self.kind {
            Kind::Real => Ok(self.zip_map(other, |a, b| a * b)),
            Kind::Complex => {
                let mut data = Vec::with_capacity(self.data.len());
                for (a, b) in self.data.chunks_exact(2).zip(other.data.chunks_exact(2)) {
                    data.push(a[0] * b[0] - a[1] * b[1]);
                    data.push(a[0] * b[1] + a[1] * b[0]);
                }
                Ok(Tensor {
                    shape: self.shape.clone(),
                    data,
                    kind: Kind::Complex,
                })
            }
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    /// Adds a scalar to every real component (real part only for complex).
    pub fn add_scalar(&self, value: f64) -> Tensor {
        let mut out = self.clone();
        let step = self.kind.width();
        for x in out.data.iter_mut().step_by(step) {
            *x += value;
        }
        out
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            kind: self.kind,
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            kind: self.kind,
        }
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(Error::shape(format!(
                "permutation {perm:?} for rank {rank}"
            )));
        }
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(Error::invalid(format!("not a permutation: {perm:?}")));
            }
            seen[p] = true;
        }
        let width = self.kind.width();
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * self.shape[i + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let numel = self.numel();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..numel {
            data.extend_from_slice(&self.data[src * width..(src + 1) * width]);
            // odometer increment over the output index
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                src += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                src -= strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
            kind: self.kind,
        })
    }

    /// Concatenates tensors of identical shape and kind along a new leading
    /// axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.data.len() * parts.len());
        for p in parts {
            first.check_same(p, "stack")?;
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor {
            shape,
            data,
            kind: first.kind,
        })
    }
}

/// Subtracts the per-fiber mean along `axis` (complex mean for complex
/// tensors).
pub fn center_along(t: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_extents(t.shape(), axis)?;
    let w = t.kind.width();
    let mut out = t.clone();
    let inv = 1.0 / len as f64;
    for o in 0..outer {
        for j in 0..inner {
            for c in 0..w {
                let at = |i: usize| ((o * len + i) * inner + j) * w + c;
                let mean: f64 = (0..len).map(|i| t.data[at(i)]).sum::<f64>() * inv;
                for i in 0..len {
                    out.data[at(i)] -= mean;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_lengths() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::with_kind(vec![2], vec![0.0; 2], Kind::Complex).is_err());
        assert!(Tensor::from_vec(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn no_implicit_broadcast() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
        assert!(a.add(&a.to_complex()).is_err());
    }

    #[test]
    fn centering_constant_and_alternating_fibers() {
        let t = Tensor::from_vec(vec![1, 4], vec![5.0; 4]).unwrap();
        assert_eq!(center_along(&t, 1).unwrap().data(), &[0.0; 4]);
        let alt = Tensor::from_vec(vec![4], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(center_along(&alt, 0).unwrap(), alt);
    }

    #[test]
    fn centering_complex_removes_complex_mean() {
        let vals = [
            Complex64::new(1.0, 2.0),
            Complex64::new(3.0, -1.0),
            Complex64::new(-2.0, 0.5),
        ];
        let t = Tensor::from_complex(vec![3, 1], &vals).unwrap();
        let c = center_along(&t, 0).unwrap();
        let mean: Complex64 = c.to_complex_vec().iter().sum();
        assert!(mean.norm() < 1e-12);
        assert!(center_along(&t, 2).is_err());
    }

    #[test]
    fn permute_matches_index_arithmetic() {
        let t = Tensor::from_vec(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    let src = t.data()[(a * 3 + b) * 4 + c];
                    let dst = p.data()[(c * 2 + a) * 3 + b];
                    assert_eq!(src, dst);
                }
            }
        }
        assert!(t.permute(&[0, 0, 1]).is_err());
    }
}
