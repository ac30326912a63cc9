//! Scalar abstraction shared by plain `f64` evaluation and the reverse-mode
//! tape in [`crate::autodiff`].
//!
//! The deformation, field and loss kernels are written once against
//! [`Real`] so that the value the fitter differentiates is bit-for-bit the
//! value the public API reports.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

pub type V3<T> = [T; 3];

#[inline]
pub fn v3<T: Real>(v: [f64; 3]) -> V3<T> {
    [T::cst(v[0]), T::cst(v[1]), T::cst(v[2])]
}

#[inline]
pub fn vals<T: Real>(v: &V3<T>) -> [f64; 3] {
    [v[0].val(), v[1].val(), v[2].val()]
}

#[inline]
pub fn add<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: V3<T>, s: T) -> V3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: V3<T>, b: V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm_sq<T: Real>(a: V3<T>) -> T {
    dot(a, a)
}

/// Row-major 3x3 matrix.
pub type M3<T> = [[T; 3]; 3];

#[inline]
pub fn mat_vec<T: Real>(m: &M3<T>, v: V3<T>) -> V3<T> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn mat_mul<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_cst<T: Real>(m: &[[f64; 3]; 3]) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = T::cst(m[i][j]);
        }
    }
    out
}

/// Quaternion stored as `[w, x, y, z]`.
pub type Q<T> = [T; 4];

#[inline]
pub fn qmul<T: Real>(a: Q<T>, b: Q<T>) -> Q<T> {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

#[inline]
pub fn qconj<T: Real>(a: Q<T>) -> Q<T> {
    [a[0], -a[1], -a[2], -a[3]]
}

#[inline]
pub fn qdot<T: Real>(a: Q<T>, b: Q<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Rotate `v` by the unit quaternion `q`.
#[inline]
pub fn qrotate<T: Real>(q: Q<T>, v: V3<T>) -> V3<T> {
    // v' = v + 2w (u x v) + 2 u x (u x v)
    let u = [q[1], q[2], q[3]];
    let t = scale(cross(u, v), T::cst(2.0));
    add(add(v, scale(t, q[0])), cross(u, t))
}

/// Rotation matrix (row-major) of a unit quaternion.
pub fn qmat<T: Real>(q: Q<T>) -> M3<T> {
    let [w, x, y, z] = q;
    let two = 2.0;
    [
        [
            T::one() - (y * y + z * z) * two,
            (x * y - w * z) * two,
            (x * z + w * y) * two,
        ],
        [
            (x * y + w * z) * two,
            T::one() - (x * x + z * z) * two,
            (y * z - w * x) * two,
        ],
        [
            (x * z - w * y) * two,
            (y * z + w * x) * two,
            T::one() - (x * x + y * y) * two,
        ],
    ]
}

/// Unit quaternion of the rotation vector `w` (axis times angle).
///
/// Uses a Taylor expansion near zero so the derivative at the origin is
/// exact and finite.
pub fn quat_from_rotvec<T: Real>(w: V3<T>) -> Q<T> {
    let th2 = norm_sq(w);
    let t2 = th2.val();
    // half-angle: c = cos(th/2), s = sin(th/2)/th
    let (c, s) = if t2 < 1e-8 {
        let q = th2 * 0.25; // (th/2)^2
        (
            T::one() - q * 0.5 + q * q * (1.0 / 24.0),
            (T::one() - q * (1.0 / 6.0) + q * q * (1.0 / 120.0)) * 0.5,
        )
    } else {
        let th = th2.sqrt();
        let h = th * 0.5;
        (h.cos(), h.sin() / th)
    };
    [c, w[0] * s, w[1] * s, w[2] * s]
}

/// Rotation vector of a unit quaternion (shortest arc).
pub fn rotvec_from_quat<T: Real>(q: Q<T>) -> V3<T> {
    let (w, u) = if q[0].val() < 0.0 {
        (-q[0], [-q[1], -q[2], -q[3]])
    } else {
        (q[0], [q[1], q[2], q[3]])
    };
    let s2 = norm_sq(u);
    // angle = 2 atan2(s, w); factor = angle / s
    let factor = if s2.val() < 1e-12 {
        // 2 atan(s/w)/s = (2/w)(1 - s^2/(3 w^2) + ...)
        let inv_w = T::one() / w;
        inv_w * 2.0 * (T::one() - s2 * inv_w * inv_w * (1.0 / 3.0))
    } else {
        let s = s2.sqrt();
        s.atan2(w) * 2.0 / s
    };
    scale(u, factor)
}

/// Unit dual quaternion as (real, dual) parts.
#[derive(Clone, Copy, Debug)]
pub struct Dq<T> {
    pub real: Q<T>,
    pub dual: Q<T>,
}

impl<T: Real> Dq<T> {
    pub fn identity() -> Self {
        Dq {
            real: [T::one(), T::zero(), T::zero(), T::zero()],
            dual: [T::zero(); 4],
        }
    }

    pub fn from_rt(real: Q<T>, t: V3<T>) -> Self {
        let tq = [T::zero(), t[0], t[1], t[2]];
        let dual = qmul(tq, real);
        Dq {
            real,
            dual: [dual[0] * 0.5, dual[1] * 0.5, dual[2] * 0.5, dual[3] * 0.5],
        }
    }

    pub fn translation(&self) -> V3<T> {
        let t = qmul(self.dual, qconj(self.real));
        [t[1] * 2.0, t[2] * 2.0, t[3] * 2.0]
    }

    pub fn apply(&self, p: V3<T>) -> V3<T> {
        add(qrotate(self.real, p), self.translation())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let r = qmul(self.real, other.real);
        let a = qmul(self.real, other.dual);
        let b = qmul(self.dual, other.real);
        Dq {
            real: r,
            dual: [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]],
        }
    }

    pub fn inverse(&self) -> Self {
        Dq {
            real: qconj(self.real),
            dual: qconj(self.dual),
        }
    }

    pub fn from_f64(d: &Dq<f64>) -> Self {
        Dq {
            real: d.real.map(T::cst),
            dual: d.dual.map(T::cst),
        }
    }

    pub fn value(&self) -> Dq<f64> {
        Dq {
            real: self.real.map(|v| v.val()),
            dual: self.dual.map(|v| v.val()),
        }
    }
}

/// Increment dual quaternion for a 6-vector tangent `(rotation vector,
/// translation)`.
pub fn dq_from_tangent<T: Real>(xi: [T; 6]) -> Dq<T> {
    let q = quat_from_rotvec([xi[0], xi[1], xi[2]]);
    Dq::from_rt(q, [xi[3], xi[4], xi[5]])
}

/// Dual-quaternion blend with hemisphere alignment against the max-weight
/// pivot, followed by normalisation and re-orthogonalisation of the dual
/// part. Returns `None` when the blended real part nearly vanishes.
pub fn dq_blend<T: Real>(weights: &[T], dqs: &[Dq<T>]) -> Option<Dq<T>> {
    let pivot = argmax(weights.iter().map(|w| w.val()));
    let piv = dqs[pivot].real;
    let mut real = [T::zero(); 4];
    let mut dual = [T::zero(); 4];
    for (w, d) in weights.iter().zip(dqs) {
        let flip = qdot(d.real, piv).val() < 0.0;
        let w = if flip { -*w } else { *w };
        for k in 0..4 {
            real[k] = real[k] + d.real[k] * w;
            dual[k] = dual[k] + d.dual[k] * w;
        }
    }
    let n2 = qdot(real, real);
    if n2.val().sqrt() < 1e-8 {
        return None;
    }
    let inv = T::one() / n2.sqrt();
    let real = real.map(|v| v * inv);
    let dual = dual.map(|v| v * inv);
    let proj = qdot(real, dual);
    let dual = [
        dual[0] - real[0] * proj,
        dual[1] - real[1] * proj,
        dual[2] - real[2] * proj,
        dual[3] - real[3] * proj,
    ];
    Some(Dq { real, dual })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits
        .iter()
        .map(|l| l.val())
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let mut z = T::zero();
    for &v in &e {
        z = z + v;
    }
    let inv = T::one() / z;
    e.into_iter().map(|v| v * inv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotvec_roundtrip() {
        for w in [[0.3, -0.2, 0.9], [1e-7, 0.0, 2e-7], [0.0, 0.0, 0.0], [2.5, 1.0, -0.5]] {
            let q = quat_from_rotvec::<f64>(w);
            let back = rotvec_from_quat(q);
            for k in 0..3 {
                assert!((back[k] - w[k]).abs() < 1e-12, "{w:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn softmax_reference_values() {
        let s = softmax(&[0.0, -1.0, -2.0]);
        assert!((s[0] - 0.6652).abs() < 1e-3);
        assert!((s[1] - 0.2447).abs() < 1e-3);
        assert!((s[2] - 0.0900).abs() < 1e-3);
    }

    #[test]
    fn dq_inverse_composes_to_identity() {
        let d = Dq::from_rt(quat_from_rotvec([0.4, -1.1, 0.3]), [0.5, 2.0, -1.0]);
        let id = d.compose(&d.inverse());
        let p = id.apply([0.3, 0.7, -0.2]);
        assert!((p[0] - 0.3).abs() < 1e-12 && (p[1] - 0.7).abs() < 1e-12);
    }
}
