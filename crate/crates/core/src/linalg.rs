//! Thin safe wrapper over the f64 GEMM kernel used by conv and dense layers.

/// C = alpha * A(m x k) * B(k x n) + beta * C(m x n), with explicit strides
/// (in elements) so transposed views need no copies.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    debug_assert!(max_flat_index(m, k, rsa, csa) < a.len());
    debug_assert!(max_flat_index(k, n, rsb, csb) < b.len());
    debug_assert!(max_flat_index(m, n, rsc, csc) < c.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn max_flat_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize
}

/// Row-major matmul convenience: C(m x n) = A(m x k) * B(k x n).
pub(crate) fn matmul_rm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    dgemm(
        m, k, n, 1.0, a, k as isize, 1, b, n as isize, 1, 0.0, c, n as isize, 1,
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_hand_case() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        matmul_rm(2, 2, 2, &a, &b, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_view_via_strides() {
        // A^T * B where A is stored 2x3 row-major: strides swap.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // A = [1 2 3; 4 5 6]
        let b = [1.0, 0.0, 0.0, 1.0]; // identity 2x2
        let mut c = [0.0; 6]; // A^T (3x2)
        dgemm(3, 2, 2, 1.0, &a, 1, 3, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn accumulate_with_beta_one() {
        let a = [2.0];
        let b = [3.0];
        let mut c = [10.0];
        dgemm(1, 1, 1, 1.0, &a, 1, 1, &b, 1, 1, 1.0, &mut c, 1, 1);
        assert_eq!(c, [16.0]);
    }
}
