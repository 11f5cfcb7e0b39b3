//! Lattice geometry: points, rectangles, unit steps.

use serde::{Deserialize, Serialize};

/// A point of Z^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub x: i64,
    pub y: i64,
}

pub const E1: LatticePoint = LatticePoint { x: 1, y: 0 };
pub const E2: LatticePoint = LatticePoint { x: 0, y: 1 };

impl LatticePoint {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub const ORIGIN: LatticePoint = LatticePoint { x: 0, y: 0 };

    /// Componentwise partial order.
    pub fn leq(self, other: LatticePoint) -> bool {
        self.x <= other.x && self.y <= other.y
    }

    pub fn l1_norm(self) -> i64 {
        self.x.abs() + self.y.abs()
    }

    /// l-infinity distance to another point.
    pub fn linf_dist(self, other: LatticePoint) -> i64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

impl std::ops::Add for LatticePoint {
    type Output = LatticePoint;
    fn add(self, rhs: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(self, rhs: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Neg for LatticePoint {
    type Output = LatticePoint;
    fn neg(self) -> LatticePoint {
        LatticePoint::new(-self.x, -self.y)
    }
}

impl std::fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Closed axis-aligned rectangle [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: LatticePoint,
    pub hi: LatticePoint,
}

impl Rect {
    pub fn new(lo: LatticePoint, hi: LatticePoint) -> Option<Self> {
        if lo.leq(hi) {
            Some(Self { lo, hi })
        } else {
            None
        }
    }

    pub fn width(&self) -> usize {
        (self.hi.x - self.lo.x) as usize + 1
    }

    pub fn height(&self) -> usize {
        (self.hi.y - self.lo.y) as usize + 1
    }

    pub fn contains(&self, p: LatticePoint) -> bool {
        self.lo.leq(p) && p.leq(self.hi)
    }

    /// Row-major linear index of a contained point.
    pub fn index(&self, p: LatticePoint) -> usize {
        debug_assert!(self.contains(p));
        (p.y - self.lo.y) as usize * self.width() + (p.x - self.lo.x) as usize
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Iterate all points, row by row from lo.
    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        let r = *self;
        (r.lo.y..=r.hi.y).flat_map(move |y| (r.lo.x..=r.hi.x).map(move |x| LatticePoint::new(x, y)))
    }

    /// Sites on the northeast boundary (x = hi.x or y = hi.y), ordered from
    /// (hi.x, lo.y) counterclockwise to (lo.x, hi.y).
    pub fn ne_boundary(&self) -> Vec<LatticePoint> {
        let mut out = Vec::with_capacity(self.width() + self.height() - 1);
        for y in self.lo.y..=self.hi.y {
            out.push(LatticePoint::new(self.hi.x, y));
        }
        for x in (self.lo.x..self.hi.x).rev() {
            out.push(LatticePoint::new(x, self.hi.y));
        }
        out
    }
}
