/// `c = a · b + beta · c` for row-major `a: [m, k]`, `b: [k, n]`, `c: [m, n]`.
///
/// `a_t` / `b_t` mean the operand is stored transposed (`[k, m]` / `[n, k]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertions above guarantee every strided access
    // stays inside the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
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

/// Row-major `c = a · b` in double precision, no transposes.
pub(crate) fn dgemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    // SAFETY: as for `sgemm`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool) -> Vec<f32> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    let av = if a_t { a[p * m + i] } else { a[i * k + p] };
                    let bv = if b_t { b[j * k + p] } else { b[p * n + j] };
                    s += av * bv;
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn all_transpose_combinations() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| 1.0 - i as f32 * 0.25).collect();
        for a_t in [false, true] {
            for b_t in [false, true] {
                let mut c = vec![0.0; m * n];
                sgemm(m, k, n, &a, a_t, &b, b_t, 0.0, &mut c);
                assert_eq!(c, naive(m, k, n, &a, a_t, &b, b_t), "a_t={a_t} b_t={b_t}");
            }
        }
    }

    #[test]
    fn double_precision_product() {
        let (m, k, n) = (2, 3, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 + 0.5).collect();
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 - i as f64).collect();
        let mut c = vec![0.0; m * n];
        dgemm(m, k, n, &a, &b, &mut c);
        let af: Vec<f32> = a.iter().map(|&v| v as f32).collect();
        let bf: Vec<f32> = b.iter().map(|&v| v as f32).collect();
        let want = naive(m, k, n, &af, false, &bf, false);
        assert_eq!(c.iter().map(|&v| v as f32).collect::<Vec<_>>(), want);
    }
}
