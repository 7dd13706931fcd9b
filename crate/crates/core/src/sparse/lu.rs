//! Left-looking sparse LU (Gilbert-Peierls) with threshold partial pivoting.
//!
//! Columns are visited in approximate-minimum-degree order computed on the
//! pattern of `A + A^T`. Within each column the pivot is the diagonal entry
//! when its magnitude is at least `DIAGONAL_PREFERENCE` times the largest
//! candidate, otherwise the largest candidate.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::amd;
use faer::sparse::SymbolicSparseColMatRef;
use thiserror::Error;

use super::{norm2, CsrMatrix, Scalar};

/// Pivots smaller than this times `max |a_ij|` are treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-14;
const DIAGONAL_PREFERENCE: f64 = 0.1;
const NONE: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("matrix is not square ({0} x {1})")]
    NotSquare(usize, usize),
    #[error("right-hand side has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is singular: pivot {pivot} (column {column}) has magnitude {magnitude:e}")]
    Singular {
        pivot: usize,
        column: usize,
        magnitude: f64,
    },
    #[error("fill-reducing ordering failed: {0}")]
    Ordering(String),
}

/// Factors `P A Q = L U` with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct SparseLu<T> {
    n: usize,
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<T>,
    u_ptr: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<T>,
    /// Row `i` of `A` is pivot row `row_pivot[i]`.
    row_pivot: Vec<usize>,
    /// Column `k` of `L U` is column `col_order[k]` of `A`.
    col_order: Vec<usize>,
}

fn amd_order(
    n: usize,
    col_ptr: &[usize],
    row_idx: &[usize],
) -> Result<Vec<usize>, LinearSolveError> {
    let pattern = SymbolicSparseColMatRef::new_checked(n, n, col_ptr, None, row_idx);
    let mut perm = vec![0usize; n];
    let mut perm_inv = vec![0usize; n];
    let mut buf = MemBuffer::new(amd::order_scratch::<usize>(n, row_idx.len()));
    amd::order(
        &mut perm,
        &mut perm_inv,
        pattern,
        amd::Control::default(),
        MemStack::new(&mut buf),
    )
    .map_err(|e| LinearSolveError::Ordering(format!("{e:?}")))?;
    Ok(perm)
}

impl<T: Scalar> SparseLu<T> {
    pub fn factorize(a: &CsrMatrix<T>) -> Result<Self, LinearSolveError> {
        if a.nrows() != a.ncols() {
            return Err(LinearSolveError::NotSquare(a.nrows(), a.ncols()));
        }
        let n = a.nrows();
        // rows of the transpose are the columns of `a`
        let at = a.transpose();
        let (ap, ai, ax) = (at.row_ptr(), at.col_idx(), at.values());
        let col_order = amd_order(n, ap, ai)?;
        let tiny = PIVOT_TOLERANCE * a.max_abs();

        let mut row_pivot = vec![NONE; n];
        let mut l_ptr = Vec::with_capacity(n + 1);
        let mut u_ptr = Vec::with_capacity(n + 1);
        let nnz_guess = 4 * a.nnz();
        let (mut l_idx, mut l_val) = (Vec::with_capacity(nnz_guess), Vec::with_capacity(nnz_guess));
        let (mut u_idx, mut u_val) = (Vec::with_capacity(nnz_guess), Vec::with_capacity(nnz_guess));

        let mut x = vec![T::zero(); n];
        let mut pattern = vec![0usize; n];
        let mut resume = vec![0usize; n];
        let mut mark = vec![NONE; n];
        let mut stack: Vec<usize> = Vec::with_capacity(n);

        for k in 0..n {
            l_ptr.push(l_idx.len());
            u_ptr.push(u_idx.len());
            let col = col_order[k];

            // Symbolic: rows reachable from the column's nonzeros in the graph
            // of the finished L columns, stored in topological order in
            // pattern[top..n].
            let mut top = n;
            for &start in &ai[ap[col]..ap[col + 1]] {
                if mark[start] == k {
                    continue;
                }
                mark[start] = k;
                stack.clear();
                stack.push(start);
                resume[start] = match row_pivot[start] {
                    NONE => 0,
                    j => l_ptr[j],
                };
                while let Some(&node) = stack.last() {
                    let end = match row_pivot[node] {
                        NONE => 0,
                        j => l_ptr[j + 1],
                    };
                    let mut descended = false;
                    while resume[node] < end {
                        let child = l_idx[resume[node]];
                        resume[node] += 1;
                        if mark[child] != k {
                            mark[child] = k;
                            resume[child] = match row_pivot[child] {
                                NONE => 0,
                                j => l_ptr[j],
                            };
                            stack.push(child);
                            descended = true;
                            break;
                        }
                    }
                    if !descended {
                        stack.pop();
                        top -= 1;
                        pattern[top] = node;
                    }
                }
            }

            // Numeric: sparse triangular solve x = L \ A(:, col).
            for &i in &pattern[top..n] {
                x[i] = T::zero();
            }
            for p in ap[col]..ap[col + 1] {
                x[ai[p]] = ax[p];
            }
            for &j in &pattern[top..n] {
                let jp = row_pivot[j];
                if jp == NONE {
                    continue;
                }
                let xj = x[j];
                for p in l_ptr[jp] + 1..l_ptr[jp + 1] {
                    let v = l_val[p] * xj;
                    x[l_idx[p]] -= v;
                }
            }

            let mut pivot_row = NONE;
            let mut largest = -1.0;
            for &i in &pattern[top..n] {
                if row_pivot[i] == NONE {
                    let m = x[i].modulus();
                    if m > largest {
                        largest = m;
                        pivot_row = i;
                    }
                } else {
                    u_idx.push(row_pivot[i]);
                    u_val.push(x[i]);
                }
            }
            if pivot_row == NONE || !(largest > tiny) {
                return Err(LinearSolveError::Singular {
                    pivot: k,
                    column: col,
                    magnitude: largest.max(0.0),
                });
            }
            if row_pivot[col] == NONE
                && mark[col] == k
                && x[col].modulus() >= DIAGONAL_PREFERENCE * largest
            {
                pivot_row = col;
            }

            let pivot = x[pivot_row];
            u_idx.push(k);
            u_val.push(pivot);
            row_pivot[pivot_row] = k;
            l_idx.push(pivot_row);
            l_val.push(T::one());
            for &i in &pattern[top..n] {
                if row_pivot[i] == NONE {
                    l_idx.push(i);
                    l_val.push(x[i] / pivot);
                }
                x[i] = T::zero();
            }
        }
        l_ptr.push(l_idx.len());
        u_ptr.push(u_idx.len());
        for r in l_idx.iter_mut() {
            *r = row_pivot[*r];
        }

        Ok(Self {
            n,
            l_ptr,
            l_idx,
            l_val,
            u_ptr,
            u_idx,
            u_val,
            row_pivot,
            col_order,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of `L` and `U` together.
    pub fn factor_nnz(&self) -> usize {
        self.l_val.len() + self.u_val.len()
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinearSolveError> {
        if b.len() != self.n {
            return Err(LinearSolveError::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let mut y = vec![T::zero(); self.n];
        for (i, &bi) in b.iter().enumerate() {
            y[self.row_pivot[i]] = bi;
        }
        for j in 0..self.n {
            let yj = y[j];
            for p in self.l_ptr[j] + 1..self.l_ptr[j + 1] {
                let v = self.l_val[p] * yj;
                y[self.l_idx[p]] -= v;
            }
        }
        for j in (0..self.n).rev() {
            let diag = self.u_ptr[j + 1] - 1;
            y[j] /= self.u_val[diag];
            let yj = y[j];
            for p in self.u_ptr[j]..diag {
                let v = self.u_val[p] * yj;
                y[self.u_idx[p]] -= v;
            }
        }
        let mut x = vec![T::zero(); self.n];
        for (k, &c) in self.col_order.iter().enumerate() {
            x[c] = y[k];
        }
        Ok(x)
    }

    /// Solves with up to two steps of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &CsrMatrix<T>, b: &[T]) -> Result<Vec<T>, LinearSolveError> {
        let mut x = self.solve(b)?;
        let bnorm = norm2(b);
        for _ in 0..2 {
            let ax = a.mul_vec(&x);
            let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &axi)| bi - axi).collect();
            if norm2(&r) <= 1e-13 * bnorm {
                break;
            }
            let dx = self.solve(&r)?;
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di;
            }
        }
        Ok(x)
    }
}
