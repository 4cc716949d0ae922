use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

/// A fixed linear map with an explicit adjoint.
pub trait LinearMap {
    fn in_len(&self) -> usize;
    fn out_len(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut Vec<f64>);
    /// Transpose (real inner product) applied to `g`.
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>);
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }
}

impl LinearMap for DenseMatrix {
    fn in_len(&self) -> usize {
        self.cols
    }
    fn out_len(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.data
                .chunks(self.cols)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()),
        );
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.cols, 0.0);
        for (row, gi) in self.data.chunks(self.cols).zip(g) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * gi;
            }
        }
    }
}

/// Elementwise scaling by fixed coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagScale(pub Vec<f64>);

impl LinearMap for DiagScale {
    fn in_len(&self) -> usize {
        self.0.len()
    }
    fn out_len(&self) -> usize {
        self.0.len()
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(x.iter().zip(&self.0).map(|(a, b)| a * b));
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        self.apply(g, out)
    }
}

/// Composition `maps[n-1] ∘ ... ∘ maps[0]`.
#[derive(Clone)]
pub struct Chain(pub Vec<Rc<dyn LinearMap>>);

impl LinearMap for Chain {
    fn in_len(&self) -> usize {
        self.0.first().map_or(0, |m| m.in_len())
    }
    fn out_len(&self) -> usize {
        self.0.last().map_or(0, |m| m.out_len())
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for m in &self.0 {
            m.apply(&cur, &mut next);
            core::mem::swap(&mut cur, &mut next);
        }
        *out = cur;
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        let mut cur = g.to_vec();
        let mut next = vec![];
        for m in self.0.iter().rev() {
            m.adjoint(&cur, &mut next);
            core::mem::swap(&mut cur, &mut next);
        }
        *out = cur;
    }
}

/// Contiguous window `x[start..start + len]` of an input of length `total`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub total: usize,
    pub start: usize,
    pub len: usize,
}

impl LinearMap for Slice {
    fn in_len(&self) -> usize {
        self.total
    }
    fn out_len(&self) -> usize {
        self.len
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        *out = x[self.start..self.start + self.len].to_vec();
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.total, 0.0);
        out[self.start..self.start + self.len].copy_from_slice(g);
    }
}
