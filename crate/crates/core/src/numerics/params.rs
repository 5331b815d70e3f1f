//! Named parameter segments laid out in one flat vector.

use super::{NumericsError, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector with an ordered list of named segments that tile
/// it exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    segments: Vec<Segment>,
    data: Vec<f64>,
}

impl ParamVector {
    /// Lays out the given named tensors back to back, in order.
    pub fn from_tensors<S: Into<String>>(
        tensors: impl IntoIterator<Item = (S, Tensor)>,
    ) -> Result<Self, NumericsError> {
        let mut segments = Vec::new();
        let mut data = Vec::new();
        for (name, t) in tensors {
            let name = name.into();
            if segments.iter().any(|s: &Segment| s.name == name) {
                return Err(NumericsError::DuplicateSegment(name));
            }
            segments.push(Segment {
                name,
                offset: data.len(),
                shape: t.shape().to_vec(),
            });
            data.extend_from_slice(t.data());
        }
        Ok(Self { segments, data })
    }

    /// A single 1-D segment holding `values`.
    pub fn from_flat(name: &str, values: Vec<f64>) -> Self {
        let shape = vec![values.len()];
        Self {
            segments: vec![Segment {
                name: name.to_string(),
                offset: 0,
                shape,
            }],
            data: values,
        }
    }

    /// Same layout as `self`, new data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != self.data.len() {
            return Err(NumericsError::LayoutMismatch);
        }
        Ok(Self {
            segments: self.segments.clone(),
            data,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self.segments.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.data[s.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.segment(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let seg = self.segment(name)?;
        Some(Tensor::new(seg.shape.clone(), self.data[seg.range()].to_vec()).expect("segment"))
    }

    /// Splits the flat vector into its named tensors.
    pub fn unflatten(&self) -> Vec<(String, Tensor)> {
        self.segments
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    Tensor::new(s.shape.clone(), self.data[s.range()].to_vec()).expect("segment"),
                )
            })
            .collect()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.segments == other.segments
    }

    /// `self += alpha * other`; layouts must match.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<(), NumericsError> {
        if !self.same_layout(other) {
            return Err(NumericsError::LayoutMismatch);
        }
        super::tensor::axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64, NumericsError> {
        if !self.same_layout(other) {
            return Err(NumericsError::LayoutMismatch);
        }
        Ok(super::tensor::dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        super::tensor::dot(&self.data, &self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamVector {
        ParamVector::from_tensors([
            ("w", Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap()),
            ("b", Tensor::vector(&[5., 6.])),
        ])
        .unwrap()
    }

    #[test]
    fn segments_tile_the_vector() {
        let p = sample();
        let mut next = 0;
        for s in p.segments() {
            assert_eq!(s.offset, next);
            next += s.len();
        }
        assert_eq!(next, p.len());
        assert_eq!(p.slice("b").unwrap(), &[5., 6.]);
    }

    #[test]
    fn unflatten_round_trip() {
        let p = sample();
        let back = ParamVector::from_tensors(p.unflatten()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = ParamVector::from_tensors([("a", Tensor::scalar(1.0)), ("a", Tensor::scalar(2.0))]);
        assert!(matches!(r, Err(NumericsError::DuplicateSegment(_))));
    }
}
