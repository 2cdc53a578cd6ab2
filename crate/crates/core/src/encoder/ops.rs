//! Forward/backward pairs for the primitive operations of the encoder.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::Scalar;

#[inline]
pub(crate) fn scalar<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

/// `x W + b`, with `W` stored as in x out.
pub(crate) fn linear<T: Scalar>(x: &ArrayView2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub(crate) fn linear_backward<T: Scalar>(
    x: &ArrayView2<T>,
    w: &Array2<T>,
    dy: &Array2<T>,
    dw: &mut Array2<T>,
    db: &mut Array1<T>,
) -> Array2<T> {
    ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh form of GELU.
pub(crate) fn gelu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let c: T = scalar(GELU_C);
    let a: T = scalar(GELU_A);
    let half: T = scalar(0.5);
    x.mapv(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
}

pub(crate) fn gelu_backward<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let c: T = scalar(GELU_C);
    let a: T = scalar(GELU_A);
    let half: T = scalar(0.5);
    let three: T = scalar(3.0);
    let mut dx = Array2::zeros(x.raw_dim());
    Zip::from(&mut dx).and(x).and(dy).for_each(|d, &v, &g| {
        let t = (c * (v + a * v * v * v)).tanh();
        let dt = (T::one() - t * t) * c * (T::one() + three * a * v * v);
        *d = g * (half * (T::one() + t) + half * v * dt);
    });
    dx
}

pub(crate) struct LayerNormCache<T> {
    pub normalized: Array2<T>,
    pub inv_std: Array1<T>,
}

/// Row-wise layer normalization; returns the output and the normalized
/// pre-affine rows.
pub(crate) fn layer_norm<T: Scalar>(
    x: &Array2<T>,
    gain: &Array1<T>,
    bias: &Array1<T>,
    eps: T,
) -> (Array2<T>, LayerNormCache<T>) {
    let n = T::from_usize(x.ncols()).unwrap();
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * r);
        *s = r;
    }
    let mut y = &normalized * gain;
    y += bias;
    (y, LayerNormCache { normalized, inv_std })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &Array1<T>,
    dy: &Array2<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    *dgain += &(dy * &cache.normalized).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let n = T::from_usize(dy.ncols()).unwrap();
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.normalized.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / n;
        let mean_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / n;
        Zip::from(&mut out).and(&g).and(&xh).for_each(|o, &gi, &xi| {
            *o = r * (gi - mean_g - xi * mean_gx);
        });
    }
    dx
}

/// Softmax over the entries of `row` where `valid` is set; other entries get 0.
pub(crate) fn masked_softmax_inplace<T: Scalar>(row: &mut ndarray::ArrayViewMut1<T>, valid: &[bool]) {
    let mut max = T::neg_infinity();
    for (&v, &ok) in row.iter().zip(valid) {
        if ok && v > max {
            max = v;
        }
    }
    let mut total = T::zero();
    for (v, &ok) in row.iter_mut().zip(valid) {
        if ok {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = T::zero();
        }
    }
    if total > T::zero() {
        row.mapv_inplace(|v| v / total);
    }
}

/// Backward of a row softmax given its output `p` and upstream gradient `dp`.
pub(crate) fn softmax_backward<T: Scalar>(p: &Array2<T>, dp: &Array2<T>) -> Array2<T> {
    let mut ds = Array2::zeros(p.raw_dim());
    for ((mut out, pr), gr) in ds.rows_mut().into_iter().zip(p.rows()).zip(dp.rows()) {
        let dot = pr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum::<T>();
        Zip::from(&mut out).and(&pr).and(&gr).for_each(|o, &pi, &gi| *o = pi * (gi - dot));
    }
    ds
}

pub(crate) fn log_sum_exp<T: Scalar>(v: &ArrayView1<T>) -> T {
    let max = v.fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
    if max == T::neg_infinity() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

pub(crate) fn all_finite<T: Scalar>(a: &Array2<T>) -> bool {
    a.iter().all(|v| v.is_finite())
}
