use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of a network. `f32` is the production type;
/// `f64` exists so gradients can be checked against finite differences.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + 'static {
    /// `c <- alpha * a * b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given shape and strides must lie
    /// inside the corresponding allocation.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn to_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f32(self) -> f32 {
        self
    }

    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f32(self) -> f32 {
        self as f32
    }

    fn from_f32(v: f32) -> Self {
        v as f64
    }
}

/// `z[batch x out] = x[batch x in] * w[out x in]^T`
pub(crate) fn matmul_xwt<T: Scalar>(
    x: &[T],
    w: &[T],
    z: &mut [T],
    batch: usize,
    inputs: usize,
    outputs: usize,
) {
    assert!(x.len() >= batch * inputs && w.len() >= outputs * inputs);
    assert!(z.len() >= batch * outputs);
    // SAFETY: shapes checked above; w^T is read through swapped strides.
    unsafe {
        T::gemm_raw(
            batch,
            inputs,
            outputs,
            x.as_ptr(),
            inputs as isize,
            1,
            w.as_ptr(),
            1,
            inputs as isize,
            T::zero(),
            z.as_mut_ptr(),
            outputs as isize,
            1,
        );
    }
}

/// `dw[out x in] = dz[batch x out]^T * x[batch x in]`
pub(crate) fn matmul_dztx<T: Scalar>(
    dz: &[T],
    x: &[T],
    dw: &mut [T],
    batch: usize,
    inputs: usize,
    outputs: usize,
) {
    assert!(dz.len() >= batch * outputs && x.len() >= batch * inputs);
    assert!(dw.len() >= outputs * inputs);
    // SAFETY: shapes checked above; dz^T is read through swapped strides.
    unsafe {
        T::gemm_raw(
            outputs,
            batch,
            inputs,
            dz.as_ptr(),
            1,
            outputs as isize,
            x.as_ptr(),
            inputs as isize,
            1,
            T::zero(),
            dw.as_mut_ptr(),
            inputs as isize,
            1,
        );
    }
}

/// `dx[batch x in] = dz[batch x out] * w[out x in]`
pub(crate) fn matmul_dzw<T: Scalar>(
    dz: &[T],
    w: &[T],
    dx: &mut [T],
    batch: usize,
    inputs: usize,
    outputs: usize,
) {
    assert!(dz.len() >= batch * outputs && w.len() >= outputs * inputs);
    assert!(dx.len() >= batch * inputs);
    // SAFETY: shapes checked above.
    unsafe {
        T::gemm_raw(
            batch,
            outputs,
            inputs,
            dz.as_ptr(),
            outputs as isize,
            1,
            w.as_ptr(),
            inputs as isize,
            1,
            T::zero(),
            dx.as_mut_ptr(),
            inputs as isize,
            1,
        );
    }
}
