use super::array::RealArray;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// All trainable parameters of a model, stored as one flat vector with
/// named, shaped segments.
///
/// The flat storage makes the per-parameter arithmetic of the consolidation
/// penalties and gradient projection plain slice operations, while the
/// segments give the model named matrices to bind onto a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    segments: Vec<Segment>,
    data: Vec<f64>,
}

/// Tape handles for every segment of a [`ParameterVector`], in segment order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }
}

impl ParameterVector {
    pub fn new() -> Self {
        Self {
            segments: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Appends a named segment. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, array: RealArray) -> Result<usize> {
        let name = name.into();
        if self.segments.iter().any(|s| s.name == name) {
            return Err(Error::LayoutMismatch(format!("duplicate segment name {name}")));
        }
        let seg = Segment {
            name,
            shape: array.shape().to_vec(),
            offset: self.data.len(),
            len: array.len(),
        };
        self.data.extend_from_slice(array.data());
        self.segments.push(seg);
        Ok(self.segments.len() - 1)
    }

    pub fn total_len(&self) -> usize {
        self.data.len()
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Same layout, new values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.data.len() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} values, got {}",
                self.data.len(),
                flat.len()
            )));
        }
        Ok(Self {
            segments: self.segments.clone(),
            data: flat.to_vec(),
        })
    }

    /// Zero-valued copy with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self.segments.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        self.segments == other.segments
    }

    pub fn check_layout(&self, other: &ParameterVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch("parameter segments differ".into()))
        }
    }

    pub fn segment_names(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|s| s.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn segment(&self, index: usize) -> RealArray {
        let s = &self.segments[index];
        RealArray::new(s.shape.clone(), self.data[s.offset..s.offset + s.len].to_vec())
            .expect("segment shape matches its length")
    }

    pub fn segment_by_name(&self, name: &str) -> Option<RealArray> {
        self.index_of(name).map(|i| self.segment(i))
    }

    pub fn segment_shape(&self, index: usize) -> &[usize] {
        &self.segments[index].shape
    }

    /// Flat index range occupied by a segment.
    pub fn segment_range(&self, index: usize) -> std::ops::Range<usize> {
        let s = &self.segments[index];
        s.offset..s.offset + s.len
    }

    pub fn segments(&self) -> impl Iterator<Item = (&str, RealArray)> + '_ {
        (0..self.segments.len()).map(move |i| (self.segments[i].name.as_str(), self.segment(i)))
    }

    /// Records every segment on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: (0..self.segments.len()).map(|i| tape.leaf(self.segment(i))).collect(),
        }
    }

    /// Gathers the gradients of the bound leaves into a flat vector laid out
    /// like `self`. Segments the output never reached contribute zeros.
    pub fn collect_gradient(&self, grads: &Gradients, bound: &BoundParams) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for (seg, var) in self.segments.iter().zip(&bound.vars) {
            if grads.reached(*var) {
                out[seg.offset..seg.offset + seg.len].copy_from_slice(grads.get(*var).data());
            }
        }
        out
    }
}

impl Default for ParameterVector {
    fn default() -> Self {
        Self::new()
    }
}
