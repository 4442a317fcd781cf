//! Dense tensors with row-major storage.
//!
//! A [`Tensor`] stores either real or complex elements. Real storage is used
//! whenever every imaginary part is exactly zero, and operations between real
//! tensors stay real. Mixed operations promote to complex.

use crate::error::{Error, Result};
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};
use num_complex::Complex64 as C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

/// Dense multi-index array in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Storage,
}

/// Result of [`svd_truncate`].
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    /// Row indices of the input followed by the kept-rank index.
    pub u: Tensor,
    /// Kept singular values, descending.
    pub s: Vec<f64>,
    /// Kept-rank index followed by the column indices of the input.
    pub v: Tensor,
    /// Squared weight of the dropped singular values relative to the total.
    pub discarded_weight: f64,
    /// Set when a degenerate multiplet straddled the cut and could not be kept whole.
    pub degeneracy_split: bool,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "zero extent in shape {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::ExtentMismatch(format!(
            "shape {shape:?} needs {n} elements, got {len}"
        )));
    }
    Ok(())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_slice<T: Copy>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    // Fuse runs of axes that stay adjacent after the permutation.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &p in perm {
        match groups.last_mut() {
            Some(g) if *g.last().unwrap() + 1 == p => g.push(p),
            _ => groups.push(vec![p]),
        }
    }
    if groups.len() <= 1 {
        return src.to_vec();
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&i| groups[i][0]);
    let mut fused_shape = vec![0usize; groups.len()];
    for (k, &gi) in order.iter().enumerate() {
        fused_shape[k] = groups[gi].iter().map(|&a| shape[a]).product();
    }
    let mut fused_perm = vec![0usize; groups.len()];
    for (k, &gi) in order.iter().enumerate() {
        fused_perm[gi] = k;
    }
    let old_strides = strides(&fused_shape);
    let new_shape: Vec<usize> = fused_perm.iter().map(|&p| fused_shape[p]).collect();
    let new_strides: Vec<usize> = fused_perm.iter().map(|&p| old_strides[p]).collect();
    let r = new_shape.len();
    let inner = new_shape[r - 1];
    let inner_stride = new_strides[r - 1];
    let outer = src.len() / inner;
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..outer {
        if inner_stride == 1 {
            out.extend_from_slice(&src[off..off + inner]);
        } else {
            for j in 0..inner {
                out.push(src[off + j * inner_stride]);
            }
        }
        let mut ax = r - 1;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            off += new_strides[ax];
            if idx[ax] < new_shape[ax] {
                break;
            }
            off -= new_strides[ax] * new_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn gemm_real(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let lhs = MatRef::from_row_major_slice(a, m, k);
    let rhs = MatRef::from_row_major_slice(b, k, n);
    let dst = MatMut::from_row_major_slice_mut(&mut out, m, n);
    matmul(dst, Accum::Replace, lhs, rhs, 1.0, Par::Seq);
    out
}

fn gemm_complex(a: &[C64], b: &[C64], m: usize, k: usize, n: usize) -> Vec<C64> {
    let mut out = vec![ZERO; m * n];
    let lhs = MatRef::from_row_major_slice(a, m, k);
    let rhs = MatRef::from_row_major_slice(b, k, n);
    let dst = MatMut::from_row_major_slice_mut(&mut out, m, n);
    matmul(dst, Accum::Replace, lhs, rhs, ONE, Par::Seq);
    out
}

impl Tensor {
    /// Real tensor from row-major elements.
    pub fn from_real(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self {
            shape,
            data: Storage::Real(data),
        })
    }

    /// Complex tensor from row-major elements; stored as real when every imaginary part is zero.
    pub fn from_complex(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if data.iter().all(|z| z.im == 0.0) {
            let re = data.iter().map(|z| z.re).collect();
            return Ok(Self {
                shape,
                data: Storage::Real(re),
            });
        }
        Ok(Self {
            shape,
            data: Storage::Complex(data),
        })
    }

    /// Complex tensor that keeps complex storage even when the imaginary parts vanish.
    pub fn from_complex_raw(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self {
            shape,
            data: Storage::Complex(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_real(shape, vec![0.0; n]).expect("positive extents")
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![],
            data: Storage::Real(vec![x]),
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        Self::from_real(vec![n, n], d).expect("square identity")
    }

    /// Real tensor filled by a function of the multi-index.
    pub fn from_fn_real(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Self::from_real(shape, data).expect("positive extents")
    }

    /// Complex tensor filled by a function of the multi-index.
    pub fn from_fn_complex(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Self::from_complex(shape, data).expect("positive extents")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        match &self.data {
            Storage::Real(v) => v.len(),
            Storage::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the tensor uses real storage.
    pub fn is_real(&self) -> bool {
        matches!(self.data, Storage::Real(_))
    }

    pub fn real_data(&self) -> Option<&[f64]> {
        match &self.data {
            Storage::Real(v) => Some(v),
            Storage::Complex(_) => None,
        }
    }

    pub fn complex_data(&self) -> Option<&[C64]> {
        match &self.data {
            Storage::Real(_) => None,
            Storage::Complex(v) => Some(v),
        }
    }

    /// Elements as complex numbers.
    pub fn to_complex_vec(&self) -> Vec<C64> {
        match &self.data {
            Storage::Real(v) => v.iter().map(|&x| C64::new(x, 0.0)).collect(),
            Storage::Complex(v) => v.clone(),
        }
    }

    /// Same values with complex storage.
    pub fn to_complex(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Storage::Complex(self.to_complex_vec()),
        }
    }

    /// Demote to real storage when all imaginary parts are exactly zero.
    pub fn compact(self) -> Tensor {
        match self.data {
            Storage::Complex(v) => Tensor::from_complex(self.shape, v).expect("valid shape"),
            real => Tensor {
                shape: self.shape,
                data: real,
            },
        }
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&x, &e)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(x < e, "index {x} out of range for axis {i} of extent {e}");
            off = off * e + x;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        let off = self.flat_index(idx);
        match &self.data {
            Storage::Real(v) => C64::new(v[off], 0.0),
            Storage::Complex(v) => v[off],
        }
    }

    /// Set an element, promoting to complex storage if needed.
    pub fn set(&mut self, idx: &[usize], value: C64) {
        let off = self.flat_index(idx);
        if value.im != 0.0 {
            if let Storage::Real(v) = &self.data {
                self.data = Storage::Complex(v.iter().map(|&x| C64::new(x, 0.0)).collect());
            }
        }
        match &mut self.data {
            Storage::Real(v) => v[off] = value.re,
            Storage::Complex(v) => v[off] = value,
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        check_shape(&shape, self.len())?;
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Reorder axes: axis `i` of the result is axis `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        if perm.len() != r {
            return Err(Error::IndexOutOfRange(format!(
                "permutation {perm:?} for rank {r}"
            )));
        }
        let mut seen = vec![false; r];
        for &p in perm {
            if p >= r || seen[p] {
                return Err(Error::IndexOutOfRange(format!(
                    "invalid permutation {perm:?}"
                )));
            }
            seen[p] = true;
        }
        let shape = perm.iter().map(|&p| self.shape[p]).collect();
        let data = match &self.data {
            Storage::Real(v) => Storage::Real(permute_slice(v, &self.shape, perm)),
            Storage::Complex(v) => Storage::Complex(permute_slice(v, &self.shape, perm)),
        };
        Ok(Tensor { shape, data })
    }

    pub fn conj(&self) -> Tensor {
        match &self.data {
            Storage::Real(_) => self.clone(),
            Storage::Complex(v) => Tensor {
                shape: self.shape.clone(),
                data: Storage::Complex(v.iter().map(|z| z.conj()).collect()),
            },
        }
    }

    pub fn scale(&self, alpha: C64) -> Tensor {
        if alpha.im == 0.0 {
            return self.scale_real(alpha.re);
        }
        let v: Vec<C64> = self
            .to_complex_vec()
            .into_iter()
            .map(|z| z * alpha)
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data: Storage::Complex(v),
        }
    }

    pub fn scale_real(&self, alpha: f64) -> Tensor {
        let data = match &self.data {
            Storage::Real(v) => Storage::Real(v.iter().map(|x| x * alpha).collect()),
            Storage::Complex(v) => Storage::Complex(v.iter().map(|z| z * alpha).collect()),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Elementwise `self + alpha * other`.
    pub fn axpy(&self, alpha: C64, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ExtentMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        if let (Storage::Real(a), Storage::Real(b), true) =
            (&self.data, &other.data, alpha.im == 0.0)
        {
            let v = a.iter().zip(b).map(|(x, y)| x + alpha.re * y).collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data: Storage::Real(v),
            });
        }
        let a = self.to_complex_vec();
        let b = other.to_complex_vec();
        let v = a.iter().zip(&b).map(|(x, y)| x + alpha * y).collect();
        Tensor::from_complex(self.shape.clone(), v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.axpy(ONE, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.axpy(-ONE, other)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        match &self.data {
            Storage::Real(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Storage::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    /// Largest element modulus.
    pub fn max_abs(&self) -> f64 {
        match &self.data {
            Storage::Real(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Storage::Complex(v) => v.iter().fold(0.0, |m, z| m.max(z.norm())),
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.data {
            Storage::Real(v) => v.iter().all(|x| x.is_finite()),
            Storage::Complex(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    pub fn max_imag(&self) -> f64 {
        match &self.data {
            Storage::Real(_) => 0.0,
            Storage::Complex(v) => v.iter().fold(0.0, |m, z| m.max(z.im.abs())),
        }
    }

    /// Sum of the products of diagonal entries over the given axis pairs; the
    /// remaining axes keep their order.
    pub fn trace(&self, pairs: &[(usize, usize)]) -> Result<Tensor> {
        let r = self.rank();
        let mut used = vec![false; r];
        for &(i, j) in pairs {
            if i >= r || j >= r || i == j || used[i] || used[j] {
                return Err(Error::IndexOutOfRange(format!(
                    "trace pairs {pairs:?} for rank {r}"
                )));
            }
            if self.shape[i] != self.shape[j] {
                return Err(Error::ExtentMismatch(format!("trace over axes {i},{j}")));
            }
            used[i] = true;
            used[j] = true;
        }
        let free: Vec<usize> = (0..r).filter(|a| !used[*a]).collect();
        let mut perm = free.clone();
        for &(i, j) in pairs {
            perm.push(i);
            perm.push(j);
        }
        let t = self.permute(&perm)?;
        let free_shape: Vec<usize> = free.iter().map(|&a| self.shape[a]).collect();
        let nfree: usize = free_shape.iter().product();
        let tdims: Vec<usize> = pairs.iter().map(|&(i, _)| self.shape[i]).collect();
        let block: usize = tdims.iter().map(|d| d * d).product();
        let ntr: usize = tdims.iter().product();
        // Offsets of the diagonal inside one trailing block.
        let mut diag = Vec::with_capacity(ntr);
        let mut idx = vec![0usize; tdims.len()];
        for _ in 0..ntr {
            let mut off = 0;
            for (k, &d) in tdims.iter().enumerate() {
                off = off * d * d + idx[k] * d + idx[k];
            }
            diag.push(off);
            increment(&mut idx, &tdims);
        }
        let data = match &t.data {
            Storage::Real(v) => Storage::Real(
                (0..nfree)
                    .map(|f| diag.iter().map(|&o| v[f * block + o]).sum())
                    .collect(),
            ),
            Storage::Complex(v) => Storage::Complex(
                (0..nfree)
                    .map(|f| diag.iter().map(|&o| v[f * block + o]).sum())
                    .collect(),
            ),
        };
        Ok(Tensor {
            shape: free_shape,
            data,
        })
    }

    /// View a rank-2 tensor as a faer matrix (complex).
    pub fn to_mat_complex(&self) -> Result<Mat<C64>> {
        let (m, n) = self.matrix_dims()?;
        let v = self.to_complex_vec();
        Ok(Mat::from_fn(m, n, |i, j| v[i * n + j]))
    }

    /// View a rank-2 real tensor as a faer matrix.
    pub fn to_mat_real(&self) -> Result<Mat<f64>> {
        let (m, n) = self.matrix_dims()?;
        match &self.data {
            Storage::Real(v) => Ok(Mat::from_fn(m, n, |i, j| v[i * n + j])),
            Storage::Complex(_) => Err(Error::InvalidArgument("tensor is not real".into())),
        }
    }

    pub fn from_mat_real(m: MatRef<'_, f64>) -> Tensor {
        let (r, c) = (m.nrows(), m.ncols());
        Tensor::from_fn_real(vec![r, c], |ix| m[(ix[0], ix[1])])
    }

    pub fn from_mat_complex(m: MatRef<'_, C64>) -> Tensor {
        let (r, c) = (m.nrows(), m.ncols());
        Tensor::from_fn_complex(vec![r, c], |ix| m[(ix[0], ix[1])])
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "expected matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Group axes into a matrix with the listed row and column axes.
    pub fn matricize(&self, rows: &[usize], cols: &[usize]) -> Result<Tensor> {
        let mut perm = rows.to_vec();
        perm.extend_from_slice(cols);
        let t = self.permute(&perm)?;
        let m = rows.iter().map(|&a| self.shape[a]).product();
        let n = cols.iter().map(|&a| self.shape[a]).product();
        t.reshape(vec![m, n])
    }
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for ax in (0..shape.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < shape[ax] {
            return;
        }
        idx[ax] = 0;
    }
}

/// Sum over the paired axes of `a` and `b`.
///
/// The result carries the free axes of `a` followed by the free axes of `b`,
/// each in original order.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    let (ra, rb) = (a.rank(), b.rank());
    let mut used_a = vec![false; ra];
    let mut used_b = vec![false; rb];
    for &(i, j) in pairs {
        if i >= ra || j >= rb {
            return Err(Error::IndexOutOfRange(format!(
                "pair ({i},{j}) for ranks ({ra},{rb})"
            )));
        }
        if used_a[i] || used_b[j] {
            return Err(Error::IndexOutOfRange(format!(
                "repeated index in pairs {pairs:?}"
            )));
        }
        if a.shape[i] != b.shape[j] {
            return Err(Error::ExtentMismatch(format!(
                "axis {i} (extent {}) vs axis {j} (extent {})",
                a.shape[i], b.shape[j]
            )));
        }
        used_a[i] = true;
        used_b[j] = true;
    }
    let free_a: Vec<usize> = (0..ra).filter(|x| !used_a[*x]).collect();
    let free_b: Vec<usize> = (0..rb).filter(|x| !used_b[*x]).collect();
    let mut perm_a = free_a.clone();
    perm_a.extend(pairs.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    perm_b.extend(free_b.iter().copied());
    let m: usize = free_a.iter().map(|&x| a.shape[x]).product();
    let k: usize = pairs.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&x| b.shape[x]).product();
    let mut shape: Vec<usize> = free_a.iter().map(|&x| a.shape[x]).collect();
    shape.extend(free_b.iter().map(|&x| b.shape[x]));

    let pa = a.permute(&perm_a)?;
    let pb = b.permute(&perm_b)?;
    let data = match (&pa.data, &pb.data) {
        (Storage::Real(x), Storage::Real(y)) => Storage::Real(gemm_real(x, y, m, k, n)),
        _ => {
            let x = pa.to_complex_vec();
            let y = pb.to_complex_vec();
            Storage::Complex(gemm_complex(&x, &y, m, k, n))
        }
    };
    let out = Tensor { shape, data };
    if !out.is_finite() {
        return Err(Error::NonFinite("contraction result".into()));
    }
    Ok(out)
}

/// Outer product: axes of `a` followed by axes of `b`.
pub fn outer(a: &Tensor, b: &Tensor) -> Tensor {
    contract(a, b, &[]).expect("outer product has no pairs")
}

fn degeneracy_tol(s: f64) -> f64 {
    1e-8 * s.max(f64::MIN_POSITIVE)
}

/// Truncated singular value decomposition of `t` grouped as (rows, cols).
///
/// Each left singular vector is gauge-fixed so its largest-modulus entry is
/// real and positive. A degenerate multiplet crossing the `max_rank` cut is
/// kept whole when it fits within `max_rank + 4`.
pub fn svd_truncate(
    t: &Tensor,
    rows: &[usize],
    cols: &[usize],
    max_rank: usize,
    rel_cutoff: f64,
) -> Result<TruncatedSvd> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::InvalidArgument("empty index set".into()));
    }
    if max_rank == 0 || rel_cutoff.is_nan() || rel_cutoff < 0.0 {
        return Err(Error::InvalidArgument(
            "max_rank must be positive, rel_cutoff nonnegative".into(),
        ));
    }
    let mut cover = vec![0usize; t.rank()];
    for &x in rows.iter().chain(cols) {
        if x >= t.rank() {
            return Err(Error::IndexOutOfRange(format!("axis {x}")));
        }
        cover[x] += 1;
    }
    if cover.iter().any(|&c| c != 1) {
        return Err(Error::InvalidArgument(
            "row and column axes must partition the tensor".into(),
        ));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let mat = t.matricize(rows, cols)?;
    let (m, n) = (mat.shape[0], mat.shape[1]);
    let row_shape: Vec<usize> = rows.iter().map(|&a| t.shape[a]).collect();
    let col_shape: Vec<usize> = cols.iter().map(|&a| t.shape[a]).collect();

    // Full factorization in complex or real arithmetic, as column-major faer matrices.
    enum Factors {
        Real(Mat<f64>, Vec<f64>, Mat<f64>),
        Complex(Mat<C64>, Vec<f64>, Mat<C64>),
    }
    let factors = match &mat.data {
        Storage::Real(v) => {
            let a = MatRef::from_row_major_slice(v, m, n);
            let svd = a
                .thin_svd()
                .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
            let s = svd.S().column_vector().iter().copied().collect();
            Factors::Real(svd.U().to_owned(), s, svd.V().to_owned())
        }
        Storage::Complex(v) => {
            let a = MatRef::from_row_major_slice(v, m, n);
            let svd = a
                .thin_svd()
                .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
            let s = svd.S().column_vector().iter().map(|z| z.re).collect();
            Factors::Complex(svd.U().to_owned(), s, svd.V().to_owned())
        }
    };
    let s_all: Vec<f64> = match &factors {
        Factors::Real(_, s, _) | Factors::Complex(_, s, _) => s.clone(),
    };
    let s0 = s_all[0];
    let above = s_all
        .iter()
        .take_while(|&&x| x > rel_cutoff * s0 && x > 0.0)
        .count()
        .max(1);
    let mut keep = above.min(max_rank);
    let mut degeneracy_split = false;
    if keep < above {
        let last = s_all[keep - 1];
        let mut end = keep;
        while end < above && (last - s_all[end]).abs() <= degeneracy_tol(last) {
            end += 1;
        }
        if end > keep {
            if end <= max_rank + 4 {
                keep = end;
            } else {
                degeneracy_split = true;
            }
        }
    }
    let total: f64 = s_all.iter().map(|x| x * x).sum();
    let dropped: f64 = s_all[keep..].iter().map(|x| x * x).sum();
    let discarded_weight = if total > 0.0 { dropped / total } else { 0.0 };

    let mut ushape = row_shape;
    ushape.push(keep);
    let mut vshape = vec![keep];
    vshape.extend(col_shape);
    let (u, v) = match factors {
        Factors::Real(um, _, vm) => {
            let mut ud = vec![0.0; m * keep];
            let mut vd = vec![0.0; keep * n];
            for j in 0..keep {
                let mut best = 0;
                for i in 0..m {
                    if um[(i, j)].abs() > um[(best, j)].abs() {
                        best = i;
                    }
                }
                let sign = if um[(best, j)] < 0.0 { -1.0 } else { 1.0 };
                for i in 0..m {
                    ud[i * keep + j] = sign * um[(i, j)];
                }
                for c in 0..n {
                    vd[j * n + c] = sign * vm[(c, j)];
                }
            }
            (
                Tensor::from_real(ushape, ud)?,
                Tensor::from_real(vshape, vd)?,
            )
        }
        Factors::Complex(um, _, vm) => {
            let mut ud = vec![ZERO; m * keep];
            let mut vd = vec![ZERO; keep * n];
            for j in 0..keep {
                let mut best = 0;
                for i in 0..m {
                    if um[(i, j)].norm() > um[(best, j)].norm() {
                        best = i;
                    }
                }
                let z = um[(best, j)];
                let phase = if z.norm() > 0.0 { z / z.norm() } else { ONE };
                for i in 0..m {
                    ud[i * keep + j] = um[(i, j)] * phase.conj();
                }
                for c in 0..n {
                    vd[j * n + c] = vm[(c, j)].conj() * phase;
                }
            }
            (
                Tensor::from_complex_raw(ushape, ud)?,
                Tensor::from_complex_raw(vshape, vd)?,
            )
        }
    };
    Ok(TruncatedSvd {
        u,
        s: s_all[..keep].to_vec(),
        v,
        discarded_weight,
        degeneracy_split,
    })
}

/// Maximum of |m_ij - m_ji| for a square matrix tensor.
pub fn asymmetry(m: &Tensor) -> Result<f64> {
    let (r, c) = m.matrix_dims()?;
    if r != c {
        return Err(Error::NotSquare(r, c));
    }
    let mut dev: f64 = 0.0;
    for i in 0..r {
        for j in (i + 1)..r {
            dev = dev.max((m.get(&[i, j]) - m.get(&[j, i])).norm());
        }
    }
    Ok(dev)
}

/// Eigendecomposition of a real symmetric matrix.
///
/// Returns ascending eigenvalues and a matrix whose columns are the
/// orthonormal eigenvectors.
pub fn eigh_sym(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let (r, c) = m.matrix_dims()?;
    if r != c {
        return Err(Error::NotSquare(r, c));
    }
    if m.max_imag() > 0.0 {
        return Err(Error::InvalidArgument(
            "eigh_sym requires a real matrix".into(),
        ));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("eigh_sym input".into()));
    }
    let dev = asymmetry(m)?;
    if dev >= 1e-10 {
        return Err(Error::NotSymmetric(dev));
    }
    let a = m.to_mat_real()?;
    let (vals, vecs) = eigh_real_mat(a.as_ref())?;
    Ok((vals, Tensor::from_mat_real(vecs.as_ref())))
}

/// Symmetric eigendecomposition of a faer matrix (lower triangle is read).
pub fn eigh_real_mat(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let vals = evd.S().column_vector().iter().copied().collect();
    Ok((vals, evd.U().to_owned()))
}

/// Hermitian eigendecomposition of a faer matrix (lower triangle is read).
pub fn eigh_complex_mat(a: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let vals = evd.S().column_vector().iter().map(|z| z.re).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Tensor with named axes, contracted over shared names.
#[derive(Clone, Debug)]
pub struct Labeled {
    pub t: Tensor,
    pub labels: Vec<String>,
}

impl Labeled {
    pub fn new<S: AsRef<str>>(t: Tensor, labels: &[S]) -> Self {
        assert_eq!(t.rank(), labels.len(), "label count must equal tensor rank");
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, l) in labels.iter().enumerate() {
            assert!(!labels[..i].contains(l), "duplicate label {l}");
        }
        Self { t, labels }
    }

    pub fn axis(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Contract all shared labels.
    pub fn contract(&self, other: &Labeled) -> Result<Labeled> {
        let mut pairs = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(j) = other.axis(l) {
                pairs.push((i, j));
            }
        }
        let t = contract(&self.t, &other.t, &pairs)?;
        let mut labels: Vec<String> = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if !pairs.iter().any(|p| p.0 == i) {
                labels.push(l.clone());
            }
        }
        for (j, l) in other.labels.iter().enumerate() {
            if !pairs.iter().any(|p| p.1 == j) {
                labels.push(l.clone());
            }
        }
        Ok(Labeled { t, labels })
    }

    /// Rename one label.
    pub fn relabel(mut self, from: &str, to: &str) -> Self {
        if let Some(i) = self.axis(from) {
            self.labels[i] = to.to_string();
        }
        self
    }

    /// Trace over pairs of labels within this tensor.
    pub fn trace_labels(&self, pairs: &[(&str, &str)]) -> Result<Labeled> {
        let mut ix = Vec::new();
        for &(a, b) in pairs {
            let i = self
                .axis(a)
                .ok_or_else(|| Error::InvalidArgument(format!("no label {a}")))?;
            let j = self
                .axis(b)
                .ok_or_else(|| Error::InvalidArgument(format!("no label {b}")))?;
            ix.push((i, j));
        }
        let t = self.t.trace(&ix)?;
        let labels = self
            .labels
            .iter()
            .enumerate()
            .filter(|(i, _)| !ix.iter().any(|p| p.0 == *i || p.1 == *i))
            .map(|(_, l)| l.clone())
            .collect();
        Ok(Labeled { t, labels })
    }

    /// Permute axes into the given label order.
    pub fn ordered<S: AsRef<str>>(&self, order: &[S]) -> Result<Tensor> {
        if order.len() != self.labels.len() {
            return Err(Error::InvalidArgument(format!(
                "order has {} labels, tensor has {:?}",
                order.len(),
                self.labels
            )));
        }
        let perm: Vec<usize> = order
            .iter()
            .map(|l| {
                self.axis(l.as_ref())
                    .ok_or_else(|| Error::InvalidArgument(format!("no label {}", l.as_ref())))
            })
            .collect::<Result<_>>()?;
        self.t.permute(&perm)
    }
}

/// Contract a list of labeled tensors left to right.
pub fn contract_all(items: &[Labeled]) -> Result<Labeled> {
    let mut it = items.iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty network".into()))?
        .clone();
    it.try_fold(first, |acc, x| acc.contract(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_real(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_complex(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_complex(
            shape,
            (0..n)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    /// Nested-loop reference for a single contraction.
    fn naive_contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Tensor {
        let fa: Vec<usize> = (0..a.rank())
            .filter(|i| !pairs.iter().any(|p| p.0 == *i))
            .collect();
        let fb: Vec<usize> = (0..b.rank())
            .filter(|i| !pairs.iter().any(|p| p.1 == *i))
            .collect();
        let mut shape: Vec<usize> = fa.iter().map(|&i| a.shape()[i]).collect();
        shape.extend(fb.iter().map(|&i| b.shape()[i]));
        let kshape: Vec<usize> = pairs.iter().map(|p| a.shape()[p.0]).collect();
        let kn: usize = kshape.iter().product();
        Tensor::from_fn_complex(shape, |ix| {
            let mut ia = vec![0; a.rank()];
            let mut ib = vec![0; b.rank()];
            for (k, &i) in fa.iter().enumerate() {
                ia[i] = ix[k];
            }
            for (k, &i) in fb.iter().enumerate() {
                ib[i] = ix[fa.len() + k];
            }
            let mut kidx = vec![0; kshape.len()];
            let mut acc = ZERO;
            for _ in 0..kn {
                for (k, p) in pairs.iter().enumerate() {
                    ia[p.0] = kidx[k];
                    ib[p.1] = kidx[k];
                }
                acc += a.get(&ia) * b.get(&ib);
                increment(&mut kidx, &kshape);
            }
            acc
        })
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.sub(b).unwrap().max_abs()
    }

    #[test]
    fn matrix_product_with_permutation() {
        let a = Tensor::from_real(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_real(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let c = contract(&a, &b, &[(1, 0)]).unwrap();
        assert_eq!(c.real_data().unwrap(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn identity_contraction_reorders() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_real(vec![2, 3, 4], &mut rng);
        let c = contract(&a, &Tensor::eye(3), &[(1, 0)]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 3]);
        assert_eq!(c, a.permute(&[0, 2, 1]).unwrap());
    }

    #[test]
    fn contraction_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_complex(vec![3, 2, 4], &mut rng);
        let b = random_real(vec![4, 5, 3], &mut rng);
        let pairs = [(2, 0), (0, 2)];
        let fast = contract(&a, &b, &pairs).unwrap();
        let slow = naive_contract(&a, &b, &pairs);
        assert!(max_diff(&fast, &slow) < 1e-13);
    }

    #[test]
    fn contraction_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_complex(vec![3, 4, 2], &mut rng);
        let b = random_complex(vec![4, 5, 3], &mut rng);
        let c = random_complex(vec![5, 2, 6], &mut rng);
        // A_{i j k} B_{j l m} C_{l n o}: contract j and l.
        let ab = contract(&a, &b, &[(1, 0)]).unwrap(); // i k l m
        let ab_c = contract(&ab, &c, &[(2, 0)]).unwrap(); // i k m n o
        let bc = contract(&b, &c, &[(1, 0)]).unwrap(); // j m n o
        let a_bc = contract(&a, &bc, &[(1, 0)]).unwrap(); // i k m n o
        assert!(max_diff(&ab_c, &a_bc) < 1e-12);
    }

    #[test]
    fn contraction_errors() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            contract(&a, &b, &[(1, 0)]),
            Err(Error::ExtentMismatch(_))
        ));
        assert!(matches!(
            contract(&a, &b, &[(2, 0)]),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(matches!(
            contract(&a, &b, &[(0, 0), (0, 1)]),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn real_and_complex_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_real(vec![4, 6, 3], &mut rng);
        let b = random_real(vec![3, 6, 2], &mut rng);
        let real = contract(&a, &b, &[(1, 1), (2, 0)]).unwrap();
        let cplx = contract(&a.to_complex(), &b.to_complex(), &[(1, 1), (2, 0)]).unwrap();
        assert!(real.is_real());
        assert!(max_diff(&real, &cplx) < 1e-13);
    }

    #[test]
    fn complex_construction_with_zero_imaginary_is_real() {
        let t =
            Tensor::from_complex(vec![2], vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)]).unwrap();
        assert!(t.is_real());
        let t =
            Tensor::from_complex(vec![2], vec![C64::new(1.0, 0.0), C64::new(2.0, 1.0)]).unwrap();
        assert!(!t.is_real());
    }

    #[test]
    fn permutation_matches_indexing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_complex(vec![2, 3, 4, 5], &mut rng);
        let p = a.permute(&[2, 0, 3, 1]).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    for l in 0..5 {
                        assert_eq!(p.get(&[k, i, l, j]), a.get(&[i, j, k, l]));
                    }
                }
            }
        }
    }

    #[test]
    fn trace_of_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_real(vec![3, 4, 3, 2], &mut rng);
        let t = a.trace(&[(0, 2)]).unwrap();
        for j in 0..4 {
            for l in 0..2 {
                let want: C64 = (0..3).map(|i| a.get(&[i, j, i, l])).sum();
                assert!((t.get(&[j, l]) - want).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn svd_rank_one() {
        let u = [0.6, 0.8];
        let v = [0.0, 1.0, 0.0];
        let t = Tensor::from_fn_real(vec![2, 3], |ix| u[ix[0]] * v[ix[1]]);
        let r = svd_truncate(&t, &[0], &[1], 3, 1e-12).unwrap();
        assert_eq!(r.s.len(), 1);
        assert!((r.s[0] - 1.0).abs() < 1e-14);
        assert!(r.discarded_weight < 1e-28);
    }

    #[test]
    fn svd_identity() {
        let r = svd_truncate(&Tensor::eye(4), &[0], &[1], 4, 0.0).unwrap();
        assert_eq!(r.s.len(), 4);
        for s in &r.s {
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(r.discarded_weight, 0.0);
    }

    fn reconstruct(r: &TruncatedSvd) -> Tensor {
        let k = r.s.len();
        let sdiag = Tensor::from_fn_real(
            vec![k, k],
            |ix| if ix[0] == ix[1] { r.s[ix[0]] } else { 0.0 },
        );
        let us = contract(&r.u, &sdiag, &[(r.u.rank() - 1, 0)]).unwrap();
        contract(&us, &r.v, &[(us.rank() - 1, 0)]).unwrap()
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_real(vec![8, 8], &mut rng);
        let r = svd_truncate(&t, &[0], &[1], 8, 0.0).unwrap();
        assert!(max_diff(&reconstruct(&r), &t) < 1e-12);
        for w in r.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn svd_truncation_weight_and_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_complex(vec![3, 4, 5], &mut rng);
        let full = svd_truncate(&t, &[0, 2], &[1], 10, 0.0).unwrap();
        let cut = svd_truncate(&t, &[0, 2], &[1], 2, 0.0).unwrap();
        let total: f64 = full.s.iter().map(|x| x * x).sum();
        let dropped: f64 = full.s[2..].iter().map(|x| x * x).sum();
        assert!((cut.discarded_weight - dropped / total).abs() < 1e-14);
        assert_eq!(cut.u.shape(), &[3, 5, 2]);
        assert_eq!(cut.v.shape(), &[2, 4]);
        // Reconstruction of the permuted input.
        let back = reconstruct(&full).permute(&[0, 2, 1]).unwrap();
        assert!(max_diff(&back, &t) < 1e-12);
        // Largest-modulus entry of every left vector is real positive.
        let um = cut.u.reshape(vec![15, 2]).unwrap();
        for j in 0..2 {
            let best = (0..15)
                .max_by(|&a, &b| um.get(&[a, j]).norm().total_cmp(&um.get(&[b, j]).norm()))
                .unwrap();
            let z = um.get(&[best, j]);
            assert!(z.im.abs() < 1e-14 && z.re > 0.0);
        }
    }

    #[test]
    fn svd_keeps_degenerate_multiplet() {
        let d = [3.0, 2.0, 2.0, 2.0, 1.0];
        let t = Tensor::from_fn_real(vec![5, 5], |ix| if ix[0] == ix[1] { d[ix[0]] } else { 0.0 });
        let r = svd_truncate(&t, &[0], &[1], 2, 0.0).unwrap();
        assert_eq!(r.s.len(), 4);
        assert!(!r.degeneracy_split);
        let r = svd_truncate(&Tensor::eye(10), &[0], &[1], 2, 0.0).unwrap();
        assert_eq!(r.s.len(), 2);
        assert!(r.degeneracy_split);
    }

    #[test]
    fn svd_rel_cutoff() {
        let d = [1.0, 1e-3, 1e-9];
        let t = Tensor::from_fn_real(vec![3, 3], |ix| if ix[0] == ix[1] { d[ix[0]] } else { 0.0 });
        let r = svd_truncate(&t, &[0], &[1], 3, 1e-6).unwrap();
        assert_eq!(r.s.len(), 2);
    }

    #[test]
    fn svd_errors() {
        let t = Tensor::eye(3);
        assert!(svd_truncate(&t, &[], &[0, 1], 2, 0.0).is_err());
        let bad = Tensor::from_real(vec![2], vec![f64::NAN, 1.0])
            .unwrap()
            .reshape(vec![1, 2])
            .unwrap();
        assert!(matches!(
            svd_truncate(&bad, &[0], &[1], 2, 0.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn eigh_diag_and_pauli_z() {
        let m = Tensor::from_real(
            vec![3, 3],
            vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0],
        )
        .unwrap();
        let (vals, _) = eigh_sym(&m).unwrap();
        assert!(
            (vals[0] - 1.0).abs() < 1e-14
                && (vals[1] - 2.0).abs() < 1e-14
                && (vals[2] - 3.0).abs() < 1e-14
        );
        let z = Tensor::from_real(vec![2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let (vals, _) = eigh_sym(&z).unwrap();
        assert_eq!(vals, vec![-1.0, 1.0]);
    }

    #[test]
    fn eigh_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_real(vec![50, 50], &mut rng);
        let m = a.add(&a.permute(&[1, 0]).unwrap()).unwrap();
        let (vals, vecs) = eigh_sym(&m).unwrap();
        let n = 50;
        let scaled = Tensor::from_fn_real(vec![n, n], |ix| vecs.get(ix).re * vals[ix[1]]);
        let back = contract(&scaled, &vecs, &[(1, 1)]).unwrap();
        assert!(max_diff(&back, &m) < 1e-10 * m.max_abs().max(1.0));
        let gram = contract(&vecs, &vecs, &[(0, 0)]).unwrap();
        assert!(max_diff(&gram, &Tensor::eye(n)) < 1e-12);
    }

    #[test]
    fn eigh_rejects_bad_input() {
        let m = Tensor::from_real(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(eigh_sym(&m), Err(Error::NotSymmetric(_))));
        let m = Tensor::zeros(vec![2, 3]);
        assert!(matches!(eigh_sym(&m), Err(Error::NotSquare(2, 3))));
    }

    #[test]
    fn labeled_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_real(vec![2, 3, 4], &mut rng);
        let b = random_real(vec![4, 2, 5], &mut rng);
        let la = Labeled::new(a.clone(), &["i", "j", "k"]);
        let lb = Labeled::new(b.clone(), &["k", "i", "m"]);
        let c = la.contract(&lb).unwrap();
        assert_eq!(c.labels, vec!["j", "m"]);
        let want = contract(&a, &b, &[(0, 1), (2, 0)]).unwrap();
        assert!(max_diff(&c.t, &want) < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn contraction_is_bilinear(seed in 0u64..1000, re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_complex(vec![3, 4], &mut rng);
            let b = random_complex(vec![4, 2], &mut rng);
            let alpha = C64::new(re, im);
            let lhs = contract(&a.scale(alpha), &b, &[(1, 0)]).unwrap();
            let rhs = contract(&a, &b, &[(1, 0)]).unwrap().scale(alpha);
            prop_assert!(max_diff(&lhs, &rhs) < 1e-13);
        }

        #[test]
        fn full_rank_svd_reconstructs(seed in 0u64..1000, m in 1usize..7, n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_complex(vec![m, n], &mut rng);
            let r = svd_truncate(&t, &[0], &[1], m.min(n), 0.0).unwrap();
            prop_assert!(max_diff(&reconstruct(&r), &t) <= 1e-12 * t.max_abs());
        }

        #[test]
        fn eigh_is_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 7;
            let a = random_real(vec![n, n], &mut rng);
            let m = a.add(&a.permute(&[1, 0]).unwrap()).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let pm = Tensor::from_fn_real(vec![n, n], |ix| m.get(&[perm[ix[0]], perm[ix[1]]]).re);
            let (v1, _) = eigh_sym(&m).unwrap();
            let (v2, _) = eigh_sym(&pm).unwrap();
            for (x, y) in v1.iter().zip(&v2) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
