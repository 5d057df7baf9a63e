//! Dense 64-bit arrays used by every other module.
//!
//! Two carriers exist: [`FeatureMap`], a rank-5 `(streams, views, height,
//! width, channels)` array, and [`Matrix`], a plain row-major 2-D array.
//! [`TokenMatrix`] is the token view of a feature map: one row per
//! `(stream, view, row, column)` position, in that nesting order, so the
//! flattening is a reinterpretation of the same row-major buffer.
//!
//! All reductions run left to right in index order. Nothing here
//! parallelizes, so results are bit-reproducible.

mod io;
mod rng;

use std::fmt;
use std::ops::Deref;

pub use io::{read_feature_map, write_feature_map, FEATURE_MAP_MAGIC};
pub use rng::{derive_seed, SeededRng};

use crate::error::{Error, Result};

/// Extents of a [`FeatureMap`]: streams × views × height × width × channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub streams: usize,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(
        streams: usize,
        views: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        let shape = Shape {
            streams,
            views,
            height,
            width,
            channels,
        };
        if shape.extents().contains(&0) {
            return Err(Error::shape(format!("zero extent in {shape}")));
        }
        Ok(shape)
    }

    pub fn extents(&self) -> [usize; 5] {
        [
            self.streams,
            self.views,
            self.height,
            self.width,
            self.channels,
        ]
    }

    /// Spatial positions per view.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Token count `S·N·H·W`.
    pub fn tokens(&self) -> usize {
        self.streams * self.views * self.pixels()
    }

    pub fn len(&self) -> usize {
        self.tokens() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row of token `(s, n, y, x)` in the flattened token matrix.
    pub fn token_index(&self, s: usize, n: usize, y: usize, x: usize) -> usize {
        ((s * self.views + n) * self.height + y) * self.width + x
    }

    pub fn with_streams(self, streams: usize) -> Self {
        Shape { streams, ..self }
    }

    pub fn with_views(self, views: usize) -> Self {
        Shape { views, ..self }
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape { channels, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {})",
            self.streams, self.views, self.height, self.width, self.channels
        )
    }
}

/// Rank-5 feature array stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    shape: Shape,
    data: Vec<f64>,
}

impl FeatureMap {
    /// Builds a map, rejecting length mismatches and non-finite entries.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Shape::new(
            shape.streams,
            shape.views,
            shape.height,
            shape.width,
            shape.channels,
        )?;
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "feature map {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                "FeatureMap::new",
                format!("non-finite entry {} at offset {i}", data[i]),
            ));
        }
        Ok(FeatureMap { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        FeatureMap {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for s in 0..shape.streams {
            for n in 0..shape.views {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        for c in 0..shape.channels {
                            data.push(f(s, n, y, x, c));
                        }
                    }
                }
            }
        }
        FeatureMap::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, s: usize, n: usize, y: usize, x: usize, c: usize) -> usize {
        self.shape.token_index(s, n, y, x) * self.shape.channels + c
    }

    pub fn get(&self, s: usize, n: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.offset(s, n, y, x, c)]
    }

    /// Copies one stream out as an `S = 1` map.
    pub fn stream(&self, s: usize) -> Result<FeatureMap> {
        if s >= self.shape.streams {
            return Err(Error::shape(format!(
                "stream {s} out of range for {}",
                self.shape
            )));
        }
        let block = self.shape.views * self.shape.pixels() * self.shape.channels;
        let data = self.data[s * block..(s + 1) * block].to_vec();
        Ok(FeatureMap {
            shape: self.shape.with_streams(1),
            data,
        })
    }

    /// Copies one view (all streams) out as an `N = 1` map.
    pub fn view(&self, n: usize) -> Result<FeatureMap> {
        if n >= self.shape.views {
            return Err(Error::shape(format!(
                "view {n} out of range for {}",
                self.shape
            )));
        }
        let block = self.shape.pixels() * self.shape.channels;
        let mut data = Vec::with_capacity(self.shape.streams * block);
        for s in 0..self.shape.streams {
            let start = (s * self.shape.views + n) * block;
            data.extend_from_slice(&self.data[start..start + block]);
        }
        Ok(FeatureMap {
            shape: self.shape.with_views(1),
            data,
        })
    }

    /// Applies `f` element-wise, keeping the shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<FeatureMap> {
        FeatureMap::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Same shape, every entry zero.
    pub fn zeros_like(&self) -> FeatureMap {
        FeatureMap::zeros(self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    fn dims(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    /// `self · other`, each output accumulated over the inner index in order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul {} by {}",
                self.dims(),
                other.dims()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul {} by transpose of {}",
                self.dims(),
                other.dims()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn transposed_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "matmul transpose of {} by {}",
                self.dims(),
                other.dims()
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "{op} of {} and {}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "add of {} and {}",
                self.dims(),
                other.dims()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.cols {
            return Err(Error::shape(format!(
                "row bias of length {} on {}",
                bias.len(),
                self.dims()
            )));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Column sums, accumulated top to bottom.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn column_block(&self, start: usize, width: usize) -> Result<Matrix> {
        if start + width > self.cols {
            return Err(Error::shape(format!(
                "column block {start}..{} of {}",
                start + width,
                self.dims()
            )));
        }
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        Ok(out)
    }

    /// Writes `block` into columns starting at `start`.
    pub fn set_column_block(&mut self, start: usize, block: &Matrix) -> Result<()> {
        if block.rows != self.rows || start + block.cols > self.cols {
            return Err(Error::shape(format!(
                "cannot place {} at column {start} of {}",
                block.dims(),
                self.dims()
            )));
        }
        for r in 0..self.rows {
            let w = block.cols;
            self.row_mut(r)[start..start + w].copy_from_slice(block.row(r));
        }
        Ok(())
    }

    /// Stacks the listed rows, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Vertical concatenation; all parts must share the column count.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(Error::shape("vstack with mismatched column counts"));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Left-to-right dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if let Some(i) = m.data.iter().position(|v| v.is_nan()) {
        return Err(Error::numeric(
            "softmax_rows",
            format!("NaN at row {}", i / m.cols.max(1)),
        ));
    }
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

/// Token view of a [`FeatureMap`]; remembers the originating shape.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    shape: Shape,
    matrix: Matrix,
}

impl TokenMatrix {
    /// Wraps a matrix produced from tokens of `shape` (channel count may differ).
    pub fn from_matrix(shape: Shape, matrix: Matrix) -> Result<Self> {
        if matrix.rows != shape.tokens() {
            return Err(Error::shape(format!(
                "{} rows cannot come from {shape}",
                matrix.rows
            )));
        }
        let shape = shape.with_channels(matrix.cols);
        Ok(TokenMatrix { shape, matrix })
    }

    pub fn source_shape(&self) -> Shape {
        self.shape
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

impl Deref for TokenMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.matrix
    }
}

/// One row per `(stream, view, row, column)`, stream-major.
pub fn flatten_tokens(f: &FeatureMap) -> TokenMatrix {
    let shape = f.shape;
    TokenMatrix {
        shape,
        matrix: Matrix {
            rows: shape.tokens(),
            cols: shape.channels,
            data: f.data.clone(),
        },
    }
}

/// Inverse of [`flatten_tokens`].
pub fn unflatten_tokens(t: &TokenMatrix) -> Result<FeatureMap> {
    FeatureMap::new(t.shape, t.matrix.data.clone())
}

/// Standard-normal samples from [`SeededRng`], filled in storage order.
pub fn seeded_normal(shape: Shape, seed: u64) -> Result<FeatureMap> {
    let shape = Shape::new(
        shape.streams,
        shape.views,
        shape.height,
        shape.width,
        shape.channels,
    )?;
    let mut rng = SeededRng::new(seed);
    let data = (0..shape.len()).map(|_| rng.normal()).collect();
    FeatureMap::new(shape, data)
}

/// Random matrix with entries `N(0, 1)·scale`.
pub fn seeded_matrix(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Matrix {
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.normal() * scale).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&b).unwrap(), b);

        let c = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let expected = brute_matmul(&b, &c);
        assert_eq!(expected.data(), &[17.0, 39.0]);
        assert_eq!(b.matmul(&c).unwrap(), expected);
    }

    #[test]
    fn matmul_zero_and_mismatch() {
        let z = Matrix::zeros(3, 2);
        let m = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!(z.matmul(&m).unwrap().data().iter().all(|&v| v == 0.0));

        let err = m.matmul(&m).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("2x3"), "{err}");
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let mut rng = SeededRng::new(3);
        let a = seeded_matrix(4, 3, 1.0, &mut rng);
        let b = seeded_matrix(5, 3, 1.0, &mut rng);
        let c = seeded_matrix(4, 2, 1.0, &mut rng);
        assert_eq!(
            a.matmul_transposed(&b).unwrap(),
            brute_matmul(&a, &b.transpose())
        );
        assert_eq!(
            a.transposed_matmul(&c).unwrap(),
            brute_matmul(&a.transpose(), &c)
        );
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0f64.ln(), 3.0f64.ln()],
            vec![1000.0, 1000.0],
        ])
        .unwrap();
        let s = softmax_rows(&m).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        // exp(ln 1) / (1 + 3) and exp(ln 3) / (1 + 3)
        assert!((s.get(1, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(1, 1) - 0.75).abs() < 1e-15);
        assert_eq!(s.row(2), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_nan() {
        let m = Matrix::from_rows(&[vec![0.0, f64::NAN]]).unwrap();
        assert!(matches!(softmax_rows(&m), Err(Error::Numeric { .. })));
    }

    #[test]
    fn flatten_orders_streams_first() {
        let shape = Shape::new(2, 1, 1, 1, 3).unwrap();
        let f = FeatureMap::new(shape, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = flatten_tokens(&f);
        assert_eq!((t.rows(), t.cols()), (2, 3));
        assert_eq!(t.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);

        let single = FeatureMap::new(Shape::new(1, 1, 1, 1, 3).unwrap(), vec![7.0, 8.0, 9.0]).unwrap();
        assert_eq!(flatten_tokens(&single).data(), single.data());
    }

    #[test]
    fn flatten_round_trip_random_map() {
        let f = seeded_normal(Shape::new(2, 3, 2, 2, 4).unwrap(), 11).unwrap();
        let t = flatten_tokens(&f);
        assert_eq!(t.rows(), 2 * 3 * 2 * 2);
        let back = unflatten_tokens(&t).unwrap();
        assert_eq!(back, f);
        assert_eq!(t.row(f.shape().token_index(1, 2, 1, 0)), &f.data()[(12 + 2 * 4 + 2) * 4..][..4]);
    }

    #[test]
    fn seeded_normal_determinism_and_moments() {
        let shape = Shape::new(1, 1, 4, 4, 2).unwrap();
        assert_eq!(seeded_normal(shape, 7).unwrap(), seeded_normal(shape, 7).unwrap());
        assert_ne!(seeded_normal(shape, 7).unwrap(), seeded_normal(shape, 8).unwrap());

        let big = seeded_normal(Shape::new(1, 1, 1, 1, 100_000).unwrap(), 1).unwrap();
        let n = big.data().len() as f64;
        let mean = big.data().iter().sum::<f64>() / n;
        let var = big.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn zero_extent_is_a_shape_error() {
        assert!(matches!(
            seeded_normal(Shape { streams: 1, views: 0, height: 1, width: 1, channels: 1 }, 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_entries_rejected() {
        let shape = Shape::new(1, 1, 1, 1, 2).unwrap();
        assert!(FeatureMap::new(shape, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn stream_and_view_slices() {
        let f = seeded_normal(Shape::new(2, 3, 2, 2, 2).unwrap(), 5).unwrap();
        let back = f.stream(1).unwrap();
        assert_eq!(back.get(0, 2, 1, 1, 0), f.get(1, 2, 1, 1, 0));
        let v = f.view(2).unwrap();
        assert_eq!(v.shape().views, 1);
        assert_eq!(v.get(1, 0, 0, 1, 1), f.get(1, 2, 0, 1, 1));
    }
}
