//! Small fixed-size linear algebra: vectors, 3×3 matrices and the
//! quaternion parametrization of rotations used by every Gaussian.

use std::ops::{Add, AddAssign, Div, Index, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 3-vector of `f64`. Used for points, directions and RGB triples alike.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const ONE: Vec3 = Vec3::new(1.0, 1.0, 1.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Canonical basis vector along `axis` (0, 1 or 2).
    pub fn unit(axis: usize) -> Self {
        let mut a = [0.0; 3];
        a[axis] = 1.0;
        Self::from_array(a)
    }

    #[inline]
    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Self {
        self / self.norm()
    }

    /// Componentwise product.
    #[inline]
    pub fn mul_elem(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn min_elem(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_elem(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn sum(self) -> f64 {
        self.x + self.y + self.z
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl MulAssign<f64> for Vec3 {
    #[inline]
    fn mul_assign(&mut self, s: f64) {
        *self = *self * s;
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Default for Mat3 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };
    pub const ZERO: Mat3 = Mat3 { rows: [[0.0; 3]; 3] };

    pub const fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Self { rows }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Self::from_rows([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn from_diagonal(d: Vec3) -> Self {
        Self::from_rows([[d.x, 0.0, 0.0], [0.0, d.y, 0.0], [0.0, 0.0, d.z]])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows[r][c]
    }

    pub fn row(&self, r: usize) -> Vec3 {
        Vec3::from_array(self.rows[r])
    }

    pub fn col(&self, c: usize) -> Vec3 {
        Vec3::new(self.rows[0][c], self.rows[1][c], self.rows[2][c])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.rows;
        Self::from_rows([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.rows;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `selfᵀ · v` without materializing the transpose.
    #[inline]
    pub fn transpose_mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.rows;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.rows[r][k] * o.rows[k][c]).sum();
            }
        }
        Mat3::from_rows(out)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = self.rows;
        out.iter_mut().flatten().for_each(|v| *v *= s);
        Mat3::from_rows(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.rows;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec3 {
        Vec3::new(self.row(0).norm(), self.row(1).norm(), self.row(2).norm())
    }

    pub fn max_abs_diff(&self, o: &Mat3) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(o.rows.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        self.mul_mat(&o)
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.mul_vec(v)
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut out = self.rows;
        for (a, b) in out.iter_mut().flatten().zip(o.rows.iter().flatten()) {
            *a += b;
        }
        Mat3::from_rows(out)
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        self + o.scale(-1.0)
    }
}

/// Rotation quaternion `(r, i, j, k)`. Not required to be unit length; the
/// rotation it describes is that of `q / ‖q‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub r: f64,
    pub i: f64,
    pub j: f64,
    pub k: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(r: f64, i: f64, j: f64, k: f64) -> Self {
        Self { r, i, j, k }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.i, self.j, self.k]
    }

    pub fn norm_squared(self) -> f64 {
        self.r * self.r + self.i * self.i + self.j * self.j + self.k * self.k
    }

    pub fn normalized(self) -> Self {
        let n = self.norm_squared().sqrt();
        Self::new(self.r / n, self.i / n, self.j / n, self.k / n)
    }

    /// Quaternion of the rotation by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized() * (0.5 * angle).sin();
        Self::new((0.5 * angle).cos(), a.x, a.y, a.z)
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn checked_scale(self) -> Result<f64> {
        let n2 = self.norm_squared();
        if n2 > 0.0 && n2.is_finite() {
            Ok(2.0 / n2)
        } else {
            Err(Error::InvalidInput(format!(
                "quaternion {:?} has zero or non-finite norm",
                self.to_array()
            )))
        }
    }

    /// Rotation matrix with the `s = 2/‖q‖²` normalization folded in.
    pub fn rotation_matrix(self) -> Result<Mat3> {
        let s = self.checked_scale()?;
        Ok(rotation_with_scale(self, s))
    }

    /// The four derivatives `∂Rᵀ/∂q_r, ∂Rᵀ/∂q_i, ∂Rᵀ/∂q_j, ∂Rᵀ/∂q_k`.
    pub fn rotation_transpose_derivatives(self) -> Result<[Mat3; 4]> {
        let s = self.checked_scale()?;
        Ok(rotation_derivatives_with_scale(self, s).map(|m| m.transpose()))
    }
}

#[inline]
pub(crate) fn rotation_with_scale(q: Quaternion, s: f64) -> Mat3 {
    let (a, b, c, d) = (q.r, q.i, q.j, q.k);
    let (bs, cs, ds) = (b * s, c * s, d * s);
    let (ab, ac, ad) = (a * bs, a * cs, a * ds);
    let (bb, bc, bd) = (b * bs, b * cs, b * ds);
    let (cc, cd, dd) = (c * cs, c * ds, d * ds);
    Mat3::from_rows([
        [1.0 - cc - dd, bc - ad, bd + ac],
        [bc + ad, 1.0 - bb - dd, cd - ab],
        [bd - ac, cd + ab, 1.0 - bb - cc],
    ])
}

/// `∂R/∂q` for the four quaternion components, in closed form.
#[inline]
pub(crate) fn rotation_derivatives_with_scale(q: Quaternion, s: f64) -> [Mat3; 4] {
    let (a, b, c, d) = (q.r, q.i, q.j, q.k);
    let (bs, cs, ds) = (b * s, c * s, d * s);
    let ab = a * bs;
    let (bb, cc, cd, dd) = (b * bs, c * cs, c * ds, d * ds);
    let aa = a * a * s;
    let (ia, ib, ic, id) = (1.0 - aa, 1.0 - bb, 1.0 - cc, 1.0 - dd);

    let dr = Mat3::from_rows([
        [s * a * (ia + ib), s * (-d * ia - ab * c), s * (c * ia - ab * d)],
        [s * (d * ia - ab * c), s * a * (ia + ic), s * (-b * ia - a * cd)],
        [s * (-c * ia - ab * d), s * (b * ia - a * cd), s * a * (ia + id)],
    ]);
    let di = Mat3::from_rows([
        [s * b * (ib + ia), s * (c * ib + ab * d), s * (d * ib - ab * c)],
        [s * (c * ib - ab * d), -s * b * (ib + id), s * (-a * ib - b * cd)],
        [s * (d * ib + ab * c), s * (a * ib - b * cd), -s * b * (ib + ic)],
    ]);
    let dj = Mat3::from_rows([
        [-s * c * (ic + id), s * (b * ic + a * cd), s * (a * ic - b * cd)],
        [s * (b * ic - a * cd), s * c * (ic + ia), s * (d * ic + ab * c)],
        [s * (-a * ic - b * cd), s * (d * ic - ab * c), -s * c * (ic + ib)],
    ]);
    let dk = Mat3::from_rows([
        [-s * d * (id + ic), s * (-a * id - b * cd), s * (b * id - a * cd)],
        [s * (a * id - b * cd), -s * d * (id + ib), s * (c * id + ab * d)],
        [s * (b * id + a * cd), s * (c * id - ab * d), s * d * (id + ia)],
    ]);
    [dr, di, dj, dk]
}

/// Rotation matrix of a (possibly non-unit) quaternion.
pub fn rotation_from_quaternion(q: Quaternion) -> Result<Mat3> {
    q.rotation_matrix()
}

/// `∂Rᵀ/∂q_{r,i,j,k}` of [`rotation_from_quaternion`].
pub fn drotation_t_dq(q: Quaternion) -> Result<[Mat3; 4]> {
    q.rotation_transpose_derivatives()
}
