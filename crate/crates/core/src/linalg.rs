//! Minimal fixed-size 3-vector and 3×3 matrix algebra.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<F>(pub [F; 3]);

impl<F: Scalar> Vec3<F> {
    #[inline]
    pub fn new(x: F, y: F, z: F) -> Self {
        Self([x, y, z])
    }

    #[inline]
    pub fn zero() -> Self {
        Self([F::zero(); 3])
    }

    #[inline]
    pub fn x(&self) -> F {
        self.0[0]
    }

    #[inline]
    pub fn y(&self) -> F {
        self.0[1]
    }

    #[inline]
    pub fn z(&self) -> F {
        self.0[2]
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> F {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        let [a1, a2, a3] = self.0;
        let [b1, b2, b3] = o.0;
        Self([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1])
    }

    #[inline]
    pub fn norm(&self) -> F {
        self.dot(self).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n > F::zero() {
            *self * (F::one() / n)
        } else {
            *self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> Vec3<G> {
        Vec3(self.0.map(|v| G::lit(v.as_f64())))
    }
}

impl<F: Scalar> Add for Vec3<F> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<F: Scalar> AddAssign for Vec3<F> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<F: Scalar> Sub for Vec3<F> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<F: Scalar> Neg for Vec3<F> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self(self.0.map(|v| -v))
    }
}

impl<F: Scalar> Mul<F> for Vec3<F> {
    type Output = Self;
    #[inline]
    fn mul(self, s: F) -> Self {
        Self(self.0.map(|v| v * s))
    }
}

impl<F> Index<usize> for Vec3<F> {
    type Output = F;
    #[inline]
    fn index(&self, i: usize) -> &F {
        &self.0[i]
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<F>(pub [[F; 3]; 3]);

impl<F: Scalar> Mat3<F> {
    pub fn identity() -> Self {
        let (o, z) = (F::one(), F::zero());
        Self([[o, z, z], [z, o, z], [z, z, o]])
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vec3<F>) -> Vec3<F> {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    /// `selfᵀ · v`
    #[inline]
    pub fn tr_mul_vec(&self, v: &Vec3<F>) -> Vec3<F> {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[1][0] * v.0[1] + m[2][0] * v.0[2],
            m[0][1] * v.0[0] + m[1][1] * v.0[1] + m[2][1] * v.0[2],
            m[0][2] * v.0[0] + m[1][2] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = [[F::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).fold(F::zero(), |acc, k| acc + self.0[i][k] * o.0[k][j]);
            }
        }
        Self(out)
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(&self) -> F {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Column `j` as a vector.
    pub fn col(&self, j: usize) -> Vec3<F> {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn max_abs_diff(&self, o: &Self) -> F {
        let mut d = F::zero();
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        d
    }

    pub fn row_major(&self) -> [F; 9] {
        let m = &self.0;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_row_major(v: [F; 9]) -> Self {
        Self([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn cast<G: Scalar>(&self) -> Mat3<G> {
        Mat3(self.0.map(|r| r.map(|v| G::lit(v.as_f64()))))
    }
}
