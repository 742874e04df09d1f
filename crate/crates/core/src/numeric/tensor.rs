use std::fmt;

use crate::error::{Error, Result};
use crate::exec::Exec;

// Below this many multiply-adds a product stays on the calling thread.
const PARALLEL_WORK_THRESHOLD: usize = 1 << 16;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("from_vec", (rows, cols), (data.len(), 1)));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. Panics on ragged input, which
    /// is a programming error at every call site.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor2) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim("add_assign", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor2) -> Result<Self> {
        self.matmul_with(other, Exec::default())
    }

    /// `self · other`. Each output element accumulates over the inner
    /// dimension in ascending order whatever the execution mode.
    pub fn matmul_with(&self, other: &Tensor2, exec: Exec) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim("matmul", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Tensor2::zeros(n, m);
        let exec = pick(exec, n * k * m);
        exec.for_each_row(&mut out.data, m, |i, row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (p, &aip) in a.iter().enumerate() {
                let b = &other.data[p * m..(p + 1) * m];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += aip * bv;
                }
            }
        });
        Ok(out)
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_bt(&self, other: &Tensor2) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::dim("matmul_bt", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Tensor2::zeros(n, m);
        pick(Exec::default(), n * k * m).for_each_row(&mut out.data, m, |i, row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (j, o) in row.iter_mut().enumerate() {
                let b = &other.data[j * k..(j + 1) * k];
                *o = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        });
        Ok(out)
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn matmul_at(&self, other: &Tensor2) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim("matmul_at", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Tensor2::zeros(k, m);
        pick(Exec::default(), n * k * m).for_each_row(&mut out.data, m, |p, row| {
            for i in 0..n {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b = &other.data[i * m..(i + 1) * m];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        });
        Ok(out)
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat_cols(parts: &[&Tensor2]) -> Result<Self> {
        let rows = parts.first().map_or(0, |t| t.rows);
        for p in parts {
            if p.rows != rows {
                return Err(Error::dim("concat", (rows, 0), p.shape()));
            }
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Gathers the given rows into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

fn pick(exec: Exec, work: usize) -> Exec {
    if work < PARALLEL_WORK_THRESHOLD {
        Exec::Sequential
    } else {
        exec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_product() {
        let a = Tensor2::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let i = Tensor2::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(a.matmul(&i).unwrap(), a);
    }

    #[test]
    fn row_by_column() {
        let a = Tensor2::from_rows(&[[1.0, 2.0]]);
        let b = Tensor2::from_rows(&[[3.0], [4.0]]);
        assert_eq!(a.matmul(&b).unwrap().item(), 11.0);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor2::zeros(2, 3);
        let b = Tensor2::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = Tensor2::from_rows(&[[1.0, -2.0, 0.5], [3.0, 4.0, -1.0]]);
        let b = Tensor2::from_rows(&[[0.25, 2.0, 1.0], [-3.0, 1.5, 2.0]]);
        assert_eq!(a.matmul_bt(&b).unwrap(), a.matmul(&b.transpose()).unwrap());
        assert_eq!(a.matmul_at(&b).unwrap(), a.transpose().matmul(&b).unwrap());
    }

    #[test]
    fn parallel_product_is_bit_identical() {
        let a = Tensor2::from_vec(
            300,
            70,
            (0..21000).map(|i| ((i * 37) % 101) as f64 / 7.0 - 5.0).collect(),
        )
        .unwrap();
        let b = Tensor2::from_vec(70, 90, (0..6300).map(|i| ((i * 11) % 53) as f64 / 3.0 - 8.0).collect()).unwrap();
        let s = a.matmul_with(&b, Exec::Sequential).unwrap();
        let p = a.matmul_with(&b, Exec::Parallel).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn concat_and_select() {
        let a = Tensor2::from_rows(&[[1.0], [2.0]]);
        let b = Tensor2::from_rows(&[[3.0, 4.0], [5.0, 6.0]]);
        let c = Tensor2::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c, Tensor2::from_rows(&[[1.0, 3.0, 4.0], [2.0, 5.0, 6.0]]));
        assert_eq!(c.select_rows(&[1, 1]).row(1), &[2.0, 5.0, 6.0]);
    }
}
