use crate::error::{Error, Result};

/// Dense row-major matrix of `f32` values.
///
/// This is deliberately minimal: the crate needs products, transposes and
/// row-wise access, not a general linear algebra library.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from a flat row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Matrix::from_vec",
                detail: format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from per-row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty { op: "Matrix::from_rows" });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "Matrix::from_rows",
                    detail: format!("row 0 has {} cols but row {} has {}", cols, i, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    /// Appends one row; amortized O(cols) via `Vec`'s geometric growth.
    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::Dimension {
                op: "Matrix::push_row",
                detail: format!("matrix has {} cols, row has {}", self.cols, row.len()),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
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

    /// Standard product; accumulates in `f32`, row/axpy order so the inner
    /// loop stays contiguous.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                detail: format!("{}x{} × {}x{}", self.rows, self.cols, other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Logistic function 1/(1+exp(−x)).
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// SGD-with-momentum optimizer state for one parameter matrix.
#[derive(Clone, Debug)]
pub struct SgdState {
    velocity: Matrix,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl SgdState {
    pub fn new(rows: usize, cols: usize, learning_rate: f32, momentum: f32, weight_decay: f32) -> Self {
        SgdState { velocity: Matrix::zeros(rows, cols), learning_rate, momentum, weight_decay }
    }

    pub fn velocity(&self) -> &Matrix {
        &self.velocity
    }
}

/// One SGD step, classic (non-Nesterov) momentum with the weight decay folded
/// into the gradient:
///
/// ```text
/// v ← momentum·v + (grad + weight_decay·params)
/// params ← params − learning_rate·v
/// ```
pub fn sgd_step(params: &mut Matrix, grad: &Matrix, state: &mut SgdState) -> Result<()> {
    if params.rows != grad.rows || params.cols != grad.cols {
        return Err(Error::Dimension {
            op: "sgd_step",
            detail: format!(
                "params {}x{} vs grad {}x{}",
                params.rows, params.cols, grad.rows, grad.cols
            ),
        });
    }
    if params.rows != state.velocity.rows || params.cols != state.velocity.cols {
        return Err(Error::Dimension {
            op: "sgd_step",
            detail: format!(
                "params {}x{} vs velocity {}x{}",
                params.rows, params.cols, state.velocity.rows, state.velocity.cols
            ),
        });
    }
    for ((p, &g), v) in params
        .data
        .iter_mut()
        .zip(grad.data.iter())
        .zip(state.velocity.data.iter_mut())
    {
        *v = state.momentum * *v + (g + state.weight_decay * *p);
        *p -= state.learning_rate * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &Matrix, b: &Matrix, tol: f32) {
        assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol, "{} vs {}", x, y);
        }
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[vec![1.5, -2.0, 0.25], vec![0.0, 3.0, 7.0]]).unwrap();
        let c = a.matmul(&Matrix::identity(3)).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(50.0) >= 1.0 - 1e-6 && sigmoid(50.0) <= 1.0);
        for &x in &[-3.0f32, -0.7, 0.1, 2.5, 11.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sgd_single_step() {
        let mut p = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let g = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let mut st = SgdState::new(1, 1, 0.1, 0.0, 0.0);
        sgd_step(&mut p, &g, &mut st).unwrap();
        assert!((p.at(0, 0) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn sgd_two_steps_with_momentum() {
        // v1 = 1, p1 = -0.1; v2 = 1.9, p2 = -0.1 - 0.19 = -0.29
        let mut p = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let g = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut st = SgdState::new(1, 1, 0.1, 0.9, 0.0);
        sgd_step(&mut p, &g, &mut st).unwrap();
        sgd_step(&mut p, &g, &mut st).unwrap();
        assert!((p.at(0, 0) - (-0.29)).abs() < 1e-6);
    }

    #[test]
    fn sgd_fixed_point() {
        let mut p = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let before = p.clone();
        let g = Matrix::zeros(2, 2);
        let mut st = SgdState::new(2, 2, 0.1, 0.9, 0.0);
        sgd_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 3);
        let mut st = SgdState::new(2, 2, 0.1, 0.9, 0.0);
        assert!(matches!(sgd_step(&mut p, &g, &mut st), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sgd_deterministic() {
        let run = || {
            let mut p = Matrix::from_vec(1, 3, vec![0.3, -1.2, 0.9]).unwrap();
            let g = Matrix::from_vec(1, 3, vec![0.11, 0.5, -0.7]).unwrap();
            let mut st = SgdState::new(1, 3, 0.05, 0.9, 1e-6);
            for _ in 0..10 {
                sgd_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-10.0f32..10.0, rows * cols)
            .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_distributes_over_addition(
            a in small_matrix(3, 4),
            b in small_matrix(4, 2),
            c in small_matrix(4, 2),
        ) {
            let mut bc = b.clone();
            for (x, y) in bc.data_mut().iter_mut().zip(c.data()) {
                *x += y;
            }
            let lhs = a.matmul(&bc).unwrap();
            let ab = a.matmul(&b).unwrap();
            let ac = a.matmul(&c).unwrap();
            let mut rhs = ab.clone();
            for (x, y) in rhs.data_mut().iter_mut().zip(ac.data()) {
                *x += y;
            }
            assert_close(&lhs, &rhs, 1e-3);
        }

        #[test]
        fn matmul_identity_left_right(a in small_matrix(4, 4)) {
            prop_assert_eq!(a.matmul(&Matrix::identity(4)).unwrap(), a.clone());
            prop_assert_eq!(Matrix::identity(4).matmul(&a).unwrap(), a);
        }

        #[test]
        fn transpose_involution(a in small_matrix(3, 5)) {
            prop_assert_eq!(a.transpose().transpose(), a);
        }
    }
}
