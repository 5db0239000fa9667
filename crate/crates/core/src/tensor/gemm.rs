/// Borrowed strided matrix operand for [`Scalar::gemm`](super::Scalar::gemm).
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows × cols` matrix.
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix whose rows have `cols` entries.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> Option<usize> {
        if rows == 0 || cols == 0 {
            return Some(0);
        }
        if self.row_stride < 0 || self.col_stride < 0 {
            return None;
        }
        Some((rows - 1) * self.row_stride as usize + (cols - 1) * self.col_stride as usize)
    }
}

pub(super) fn check<T>(m: usize, k: usize, n: usize, a: &MatRef<'_, T>, b: &MatRef<'_, T>, c: &[T]) {
    let in_bounds = |mat: &MatRef<'_, T>, rows, cols| match mat.max_offset(rows, cols) {
        Some(off) => rows == 0 || cols == 0 || off < mat.data.len(),
        None => false,
    };
    assert!(in_bounds(a, m, k), "gemm: lhs operand out of bounds");
    assert!(in_bounds(b, k, n), "gemm: rhs operand out of bounds");
    assert!(c.len() >= m * n, "gemm: output too small");
}
