use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network.
///
/// `f32` uses branch-free exponential approximations that vectorize;
/// `f64` uses the exact library functions and is what gradient checks run in.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` with arbitrary strides (row, column).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn sigmoid_in_place(xs: &mut [Self]);
    fn tanh_in_place(xs: &mut [Self]);

    fn tanh_scalar(x: Self) -> Self {
        let mut v = [x];
        Self::tanh_in_place(&mut v);
        v[0]
    }

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize, what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand {what} out of bounds"
    );
}

macro_rules! gemm_impl {
    ($kernel:path) => {
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            alpha: Self,
            a: &[Self],
            rsa: isize,
            csa: isize,
            b: &[Self],
            rsb: isize,
            csb: isize,
            beta: Self,
            c: &mut [Self],
            rsc: isize,
            csc: isize,
        ) {
            check_extent(a.len(), m, k, rsa, csa, "a");
            check_extent(b.len(), k, n, rsb, csb, "b");
            check_extent(c.len(), m, n, rsc, csc, "c");
            if m == 0 || n == 0 {
                return;
            }
            // SAFETY: all three operands were bounds-checked against their
            // strides above, and `c` is uniquely borrowed.
            unsafe {
                $kernel(
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
    };
}

impl Real for f64 {
    gemm_impl!(matrixmultiply::dgemm);

    fn sigmoid_in_place(xs: &mut [Self]) {
        for x in xs {
            *x = 1.0 / (1.0 + (-*x).exp());
        }
    }

    fn tanh_in_place(xs: &mut [Self]) {
        for x in xs {
            *x = x.tanh();
        }
    }
}

impl Real for f32 {
    gemm_impl!(matrixmultiply::sgemm);

    fn sigmoid_in_place(xs: &mut [Self]) {
        #[cfg(target_arch = "x86_64")]
        if simd::available() {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { simd::sigmoid(xs) };
        }
        sigmoid_f32(xs)
    }

    fn tanh_in_place(xs: &mut [Self]) {
        #[cfg(target_arch = "x86_64")]
        if simd::available() {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { simd::tanh(xs) };
        }
        tanh_f32(xs)
    }
}

#[inline(always)]
fn sigmoid_f32(xs: &mut [f32]) {
    for x in xs {
        *x = 1.0 / (1.0 + fast_exp(-*x));
    }
}

#[inline(always)]
fn tanh_f32(xs: &mut [f32]) {
    for x in xs {
        // tanh(x) = 1 - 2 / (1 + e^{2x})
        *x = 1.0 - 2.0 / (1.0 + fast_exp(2.0 * *x));
    }
}

/// The same loops compiled for wider vector units. Rust never contracts
/// `a * b + c` into an FMA, so results are bit-identical to the scalar path.
#[cfg(target_arch = "x86_64")]
mod simd {
    pub fn available() -> bool {
        is_x86_feature_detected!("avx2")
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn sigmoid(xs: &mut [f32]) {
        super::sigmoid_f32(xs)
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn tanh(xs: &mut [f32]) {
        super::tanh_f32(xs)
    }
}

/// `e^x` for f32 with about 2 ulp relative error, written without branches so
/// that loops over it vectorize. Inputs are clamped to the finite range.
#[inline(always)]
pub fn fast_exp(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // 1.5 * 2^23: adding it rounds to the nearest integer, which then sits in
    // the low mantissa bits.
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.3, 88.3);
    let shifted = x * LOG2E + ROUND;
    let n = shifted - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    // Minimax polynomial for e^r on [-ln2/2, ln2/2] (cephes expf).
    let mut p = 1.987_569_1e-4_f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let er = p * r * r + r + 1.0;
    let bits = shifted
        .to_bits()
        .wrapping_sub(ROUND.to_bits())
        .wrapping_add(127)
        << 23;
    er * f32::from_bits(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_matches_std() {
        let mut worst = 0.0f64;
        let mut x = -80.0f32;
        while x < 80.0 {
            let a = fast_exp(x) as f64;
            let b = (x as f64).exp();
            worst = worst.max(((a - b) / b).abs());
            x += 0.0137;
        }
        assert!(worst < 5e-7, "worst relative error {worst}");
    }

    #[test]
    fn fast_activations_close_to_exact() {
        let xs: Vec<f32> = (-400..=400).map(|i| i as f32 * 0.05).collect();
        let mut s = xs.clone();
        let mut t = xs.clone();
        f32::sigmoid_in_place(&mut s);
        f32::tanh_in_place(&mut t);
        for (i, &x) in xs.iter().enumerate() {
            let xe = x as f64;
            assert!((s[i] as f64 - 1.0 / (1.0 + (-xe).exp())).abs() < 1e-6);
            assert!((t[i] as f64 - xe.tanh()).abs() < 1e-6);
        }
        let mut extreme = [-1e30f32, 1e30, f32::MAX, f32::MIN];
        f32::sigmoid_in_place(&mut extreme);
        assert!(extreme.iter().all(|v| v.is_finite()));
        assert!(extreme[0] < 1e-30 && extreme[3] < 1e-30);
        assert_eq!([extreme[1], extreme[2]], [1.0, 1.0]);
    }

    #[test]
    fn gemm_strided_transpose() {
        // a (2x3) times b^T where b is stored 2x3 row-major.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, -1.0, 2.0, 1.0, 0.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, 3, 1, &b, 1, 3, 0.0, &mut c, 2, 1);
        assert_eq!(c, [-2.0, 4.0, -2.0, 13.0]);
    }
}
