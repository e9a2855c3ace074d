use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "Tensor::new",
                expected: vec![numel],
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `(rows.len(), width)` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or(Error::Empty("rows"))?;
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::Dimension {
                    op: "Tensor::from_rows",
                    expected: vec![width],
                    got: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(Error::Dimension {
                op: "reshape",
                expected: self.shape,
                got: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `a*self + b*other`.
    pub fn axpby(&self, a: f64, other: &Tensor, b: f64) -> Result<Self> {
        self.check_same(other, "axpby")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.axpby(1.0, other, -1.0)
    }

    pub(crate) fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Concatenates two 2-D tensors with equal row counts along columns.
    pub fn hcat(&self, other: &Tensor) -> Result<Self> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.rows() != other.rows() {
            return Err(Error::Dimension {
                op: "hcat",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let (n, a, b) = (self.rows(), self.cols(), other.cols());
        let mut data = Vec::with_capacity(n * (a + b));
        for i in 0..n {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self {
            shape: vec![n, a + b],
            data,
        })
    }

    /// Selects rows of a 2-D tensor by index.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), c],
            data,
        }
    }
}

/// `x (n×k) · w (k×m)`. Each output row depends only on the matching input
/// row, so results are bit-identical across batch sizes.
pub(crate) fn matmul(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if x.shape.len() != 2 || w.shape.len() != 2 || x.shape[1] != w.shape[0] {
        return Err(Error::Dimension {
            op: "matmul",
            expected: vec![x.shape.get(1).copied().unwrap_or(0), w.shape[w.shape.len() - 1]],
            got: w.shape.clone(),
        });
    }
    let (n, k, m) = (x.shape[0], x.shape[1], w.shape[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        let xrow = &x.data[i * k..(i + 1) * k];
        for (p, &xv) in xrow.iter().enumerate() {
            let wrow = &w.data[p * m..(p + 1) * m];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![n, m],
        data: out,
    })
}

/// `dy (n×m) · wᵀ` where `w` is `k×m`.
pub(crate) fn matmul_bt(dy: &Tensor, w: &Tensor) -> Tensor {
    let (n, m, k) = (dy.shape[0], dy.shape[1], w.shape[0]);
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let drow = &dy.data[i * m..(i + 1) * m];
        for p in 0..k {
            let wrow = &w.data[p * m..(p + 1) * m];
            out[i * k + p] = drow.iter().zip(wrow).map(|(a, b)| a * b).sum();
        }
    }
    Tensor {
        shape: vec![n, k],
        data: out,
    }
}

/// `xᵀ · dy` accumulated into `acc` (`k×m`).
pub(crate) fn matmul_at_acc(x: &Tensor, dy: &Tensor, acc: &mut Tensor) {
    let (n, k, m) = (x.shape[0], x.shape[1], dy.shape[1]);
    for i in 0..n {
        let xrow = &x.data[i * k..(i + 1) * k];
        let drow = &dy.data[i * m..(i + 1) * m];
        for (p, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let arow = &mut acc.data[p * m..(p + 1) * m];
            for (a, &d) in arow.iter_mut().zip(drow) {
                *a += xv * d;
            }
        }
    }
}

/// Adds a length-`m` bias to every row of an `n×m` tensor.
pub(crate) fn add_row(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let m = x.cols();
    if b.len() != m {
        return Err(Error::Dimension {
            op: "add_bias",
            expected: vec![m],
            got: b.shape.clone(),
        });
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(m) {
        for (o, &bv) in row.iter_mut().zip(&b.data) {
            *o += bv;
        }
    }
    Ok(out)
}
