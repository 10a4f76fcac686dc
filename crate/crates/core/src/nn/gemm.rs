//! Row-major matrix products on top of `matrixmultiply`.

/// `C = A·B + beta·C` with `A: m×k`, `B: k×n`, optionally transposed views
/// of row-major storage (`ta`: A is stored `k×m`; `tb`: B is stored `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Strided view of a matrix inside a slice: element `(r, c)` is at
/// `offset + r * rs + c * cs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C = A·B + beta·C` on strided views; panics if a view leaves its slice.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_view(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    va: View,
    b: &[f64],
    vb: View,
    beta: f64,
    c: &mut [f64],
    vc: View,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(va.last(m, k) < a.len() && vb.last(k, n) < b.len() && vc.last(m, n) < c.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(va.offset),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.offset),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.offset),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}
