//! Planar vectors and the rectangular arena.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector pointing along `angle` (radians, counter-clockwise from +x).
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Vec2 { x: c, y: s }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2 { x: a[0], y: a[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return angle;
    }
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Axis-aligned rectangle in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Which axes a reflection flipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Reflection {
    pub flip_x: bool,
    pub flip_y: bool,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let b = Bounds {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Square `[-half, half]²`.
    pub fn square(half: f64) -> Result<Self> {
        Bounds::new(-half, half, -half, half)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x_min, self.x_max, self.y_min, self.y_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("bounds must be finite"));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::domain("bounds must satisfy min < max on both axes"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, z: Vec2) -> bool {
        z.x >= self.x_min && z.x <= self.x_max && z.y >= self.y_min && z.y <= self.y_max
    }

    /// Fold a point back into the rectangle by mirror reflection at the walls.
    /// Reports which axes were flipped an odd number of times so callers can
    /// mirror the heading as well.
    pub fn reflect(&self, z: Vec2) -> (Vec2, Reflection) {
        let (x, flip_x) = reflect_axis(z.x, self.x_min, self.x_max);
        let (y, flip_y) = reflect_axis(z.y, self.y_min, self.y_max);
        (Vec2::new(x, y), Reflection { flip_x, flip_y })
    }

    /// Cell-midpoint grid of `rows × cols` points covering the rectangle,
    /// row-major with y increasing by row.
    pub fn midpoint_grid(&self, rows: usize, cols: usize) -> Vec<Vec2> {
        let dx = self.width() / cols as f64;
        let dy = self.height() / rows as f64;
        let mut pts = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                pts.push(Vec2::new(
                    self.x_min + (j as f64 + 0.5) * dx,
                    self.y_min + (i as f64 + 0.5) * dy,
                ));
            }
        }
        pts
    }

    /// Row-major cell index of `z` on a `rows × cols` grid, clamping points on
    /// the upper walls into the last cell.
    pub fn cell_index(&self, z: Vec2, rows: usize, cols: usize) -> Option<usize> {
        if !self.contains(z) {
            return None;
        }
        let j = (((z.x - self.x_min) / self.width()) * cols as f64) as usize;
        let i = (((z.y - self.y_min) / self.height()) * rows as f64) as usize;
        Some(i.min(rows - 1) * cols + j.min(cols - 1))
    }
}

fn reflect_axis(mut v: f64, lo: f64, hi: f64) -> (f64, bool) {
    if !v.is_finite() {
        return (v, false);
    }
    let span = hi - lo;
    let mut flipped = false;
    // Fold by whole periods first so huge excursions stay O(1).
    if v < lo - 2.0 * span || v > hi + 2.0 * span {
        let period = 2.0 * span;
        let m = (v - lo).rem_euclid(period);
        let (folded, odd) = if m > span {
            (hi - (m - span), true)
        } else {
            (lo + m, false)
        };
        return (folded, odd);
    }
    loop {
        if v < lo {
            v = 2.0 * lo - v;
            flipped = !flipped;
        } else if v > hi {
            v = 2.0 * hi - v;
            flipped = !flipped;
        } else {
            return (v, flipped);
        }
    }
}
