//! Flat parameter vectors with named sub-ranges, and gradients over them.
//!
//! A `ParamVector` is the unit of everything that moves through the system:
//! gradients, perturbations, SGD updates, and federated aggregation. Its
//! `Layout` names contiguous sub-ranges (e.g. `F.w0`, `T.b0`, `D.w1`) so that
//! range-restricted operations (gradient reversal, coherence over shared
//! parameters) can address blocks by name.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Named, contiguous, non-overlapping sub-ranges covering a flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    ranges: Vec<(String, usize, usize)>, // (name, offset, len), sorted by offset
    total: usize,
}

impl Layout {
    /// Builds a layout from `(name, len)` pairs laid out back to back.
    pub fn new(parts: &[(&str, usize)]) -> Layout {
        let mut ranges = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for (name, len) in parts {
            ranges.push((name.to_string(), offset, *len));
            offset += len;
        }
        Layout {
            ranges,
            total: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn ranges(&self) -> &[(String, usize, usize)] {
        &self.ranges
    }

    /// Offset and length of the named range.
    pub fn range(&self, name: &str) -> Option<(usize, usize)> {
        self.ranges
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, o, l)| (*o, *l))
    }

    /// All ranges whose name starts with `prefix`, e.g. `"F."`.
    pub fn ranges_with_prefix(&self, prefix: &str) -> Vec<(usize, usize)> {
        self.ranges
            .iter()
            .filter(|(n, _, _)| n.starts_with(prefix))
            .map(|(_, o, l)| (*o, *l))
            .collect()
    }
}

/// A flat vector of f64 parameters addressed through a shared `Layout`.
#[derive(Debug, Clone)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<ParamVector> {
        if values.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(ParamVector { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> ParamVector {
        let n = layout.len();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        let (o, l) = self.layout.range(name)?;
        Some(&self.values[o..o + l])
    }

    /// Errors if any entry is NaN or Inf. Called after library updates.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteParams {
                context: context.to_string(),
            })
        }
    }

    /// `self + direction`, leaving `self` untouched.
    pub fn perturbed(&self, direction: &Gradient) -> Result<ParamVector> {
        self.check_len(direction.len())?;
        let mut out = self.clone();
        for (p, d) in out.values.iter_mut().zip(direction.values()) {
            *p += d;
        }
        Ok(out)
    }

    /// In-place `self += alpha * g`.
    pub fn add_scaled(&mut self, alpha: f64, g: &Gradient) -> Result<()> {
        self.check_len(g.len())?;
        for (p, v) in self.values.iter_mut().zip(g.values()) {
            *p += alpha * v;
        }
        Ok(())
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got,
            });
        }
        Ok(())
    }
}

/// A gradient (or any tangent vector) with the same length and layout as its
/// `ParamVector`.
#[derive(Debug, Clone)]
pub struct Gradient {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl Gradient {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Gradient> {
        if values.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(Gradient { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Gradient {
        let n = layout.len();
        Gradient {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Inner product, fixed left-to-right summation order.
    pub fn dot(&self, other: &Gradient) -> Result<f64> {
        self.check_len(other.len())?;
        Ok(dot_slices(&self.values, &other.values))
    }

    /// Euclidean norm.
    pub fn norm2(&self) -> f64 {
        dot_slices(&self.values, &self.values).sqrt()
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Gradient) -> Result<()> {
        self.check_len(other.len())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// In-place `self *= alpha`.
    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// Returns `alpha * self` as a new vector.
    pub fn scaled(&self, alpha: f64) -> Gradient {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// Zeroes every entry outside the given `(offset, len)` ranges.
    pub fn masked_to(&self, ranges: &[(usize, usize)]) -> Gradient {
        let mut out = Gradient::zeros(self.layout.clone());
        for (o, l) in ranges {
            out.values[*o..*o + *l].copy_from_slice(&self.values[*o..*o + *l]);
        }
        out
    }

    /// Inner product restricted to the given ranges.
    pub fn masked_dot(&self, other: &Gradient, ranges: &[(usize, usize)]) -> Result<f64> {
        self.check_len(other.len())?;
        let mut acc = 0.0;
        for (o, l) in ranges {
            acc += dot_slices(&self.values[*o..*o + *l], &other.values[*o..*o + *l]);
        }
        Ok(acc)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got,
            });
        }
        Ok(())
    }
}

fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lay(n: usize) -> Arc<Layout> {
        Arc::new(Layout::new(&[("w", n)]))
    }

    #[test]
    fn dot_and_norm() {
        let a = Gradient::new(lay(2), vec![1.0, 2.0]).unwrap();
        let b = Gradient::new(lay(2), vec![3.0, 4.0]).unwrap();
        assert_eq!(a.dot(&b).unwrap(), 11.0);
        assert_eq!(b.norm2(), 5.0);
    }

    #[test]
    fn axpy_matches_hand_computation() {
        let a = Gradient::new(lay(2), vec![1.0, 1.0]).unwrap();
        let mut b = Gradient::new(lay(2), vec![0.0, 1.0]).unwrap();
        b.axpy(2.0, &a).unwrap();
        assert_eq!(b.values(), &[2.0, 3.0]);
    }

    #[test]
    fn dot_norm_consistency() {
        let g = Gradient::new(lay(3), vec![0.3, -1.7, 2.2]).unwrap();
        let n = g.norm2();
        let d = g.dot(&g).unwrap();
        assert!((d - n * n).abs() <= 1e-12 * d.abs());
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = Gradient::new(lay(2), vec![1.0, 2.0]).unwrap();
        let b = Gradient::new(lay(3), vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(a.dot(&b), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn layout_prefix_selection() {
        let layout = Layout::new(&[("F.w0", 4), ("F.b0", 2), ("T.w0", 3), ("D.w0", 5)]);
        let f: Vec<_> = layout.ranges_with_prefix("F.");
        assert_eq!(f, vec![(0, 4), (4, 2)]);
        assert_eq!(layout.range("T.w0"), Some((6, 3)));
        assert_eq!(layout.len(), 14);
    }

    #[test]
    fn masked_dot_restricts_to_ranges() {
        let layout = Arc::new(Layout::new(&[("F.w", 2), ("D.w", 2)]));
        let a = Gradient::new(layout.clone(), vec![1.0, 2.0, 10.0, 10.0]).unwrap();
        let b = Gradient::new(layout.clone(), vec![3.0, 1.0, 10.0, 10.0]).unwrap();
        let f = layout.ranges_with_prefix("F.");
        assert_eq!(a.masked_dot(&b, &f).unwrap(), 5.0);
    }
}
