//! Axis-aligned boxes, IoU / GIoU overlap and the normalised localisation error.
//!
//! Gradients are analytic. At measure-zero kinks (a predicted edge exactly
//! aligned with a ground-truth edge, or an intersection of exactly zero width)
//! the two one-sided derivatives are averaged, which is the value central finite
//! differences converge to, and the result is flagged as non-smooth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Axis-aligned box in corner form. Serialised as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Real + Serialize> Serialize for BBox<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for BBox<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[T; 4]>::deserialize(d)?;
        BBox::from_array(a).map_err(serde::de::Error::custom)
    }
}

impl<T: Real> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(a: [T; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.to_array().iter().all(|v| v.is_finite());
        if !finite || self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::InvalidBox {
                x1: self.x1.as_f64(),
                y1: self.y1.as_f64(),
                x2: self.x2.as_f64(),
                y2: self.y2.as_f64(),
            });
        }
        Ok(())
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    /// Smallest box enclosing both.
    pub fn hull(&self, other: &Self) -> Self {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let iw = self.x2.min(other.x2) - self.x1.max(other.x1);
        let ih = self.y2.min(other.y2) - self.y1.max(other.y1);
        iw.max(T::zero()) * ih.max(T::zero())
    }

    /// Union area, summed smaller-area-first so that nested boxes give an exact union.
    pub fn union_area(&self, other: &Self) -> T {
        let inter = self.intersection_area(other);
        union_from(self.area(), other.area(), inter)
    }
}

#[inline]
fn union_from<T: Real>(a: T, b: T, inter: T) -> T {
    (a.min(b) - inter) + a.max(b)
}

/// Intersection over union. Errors when both boxes have zero area.
pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> Result<T> {
    let inter = a.intersection_area(b);
    let union = union_from(a.area(), b.area(), inter);
    if union <= T::zero() {
        return Err(Error::DegenerateUnion);
    }
    Ok(inter / union)
}

/// Generalised IoU: `iou - (hull - union) / hull`.
pub fn giou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> Result<T> {
    let hull = a.hull(b).area();
    if hull <= T::zero() {
        return Err(Error::DegenerateHull);
    }
    let inter = a.intersection_area(b);
    let union = union_from(a.area(), b.area(), inter);
    Ok(inter / union - (hull - union) / hull)
}

/// Overlap measure and true-positive threshold used for the localisation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum LocErrorKind<T> {
    /// `E = (1 - IoU) / (1 - tau)`, only defined for `IoU >= tau`.
    Iou { tau: T },
    /// GIoU mapped to `[0, 1]` by `(1 + GIoU) / 2`, then `E = (1 - o) / (1 - tau)`.
    Giou { tau: T },
}

impl<T: Real> LocErrorKind<T> {
    pub fn iou() -> Self {
        LocErrorKind::Iou { tau: lit(0.5) }
    }

    pub fn giou() -> Self {
        LocErrorKind::Giou { tau: T::zero() }
    }

    pub fn tau(&self) -> T {
        match *self {
            LocErrorKind::Iou { tau } | LocErrorKind::Giou { tau } => tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tau = self.tau();
        if !(tau >= T::zero() && tau < T::one()) {
            return Err(Error::param("tau", format!("must lie in [0, 1), got {tau}")));
        }
        Ok(())
    }

    /// The overlap value compared against `tau` (IoU, or renormalised GIoU).
    pub fn overlap(&self, pred: &BBox<T>, gt: &BBox<T>) -> Result<T> {
        match self {
            LocErrorKind::Iou { .. } => iou(pred, gt),
            LocErrorKind::Giou { .. } => Ok((T::one() + giou(pred, gt)?) / lit(2.0)),
        }
    }
}

impl<T: Real> Default for LocErrorKind<T> {
    fn default() -> Self {
        Self::iou()
    }
}

/// Normalised localisation error of a true positive, in `[0, 1]`.
pub fn loc_error<T: Real>(pred: &BBox<T>, gt: &BBox<T>, kind: LocErrorKind<T>) -> Result<T> {
    let tau = kind.tau();
    let overlap = kind.overlap(pred, gt)?;
    if overlap < tau {
        return Err(Error::NotATruePositive { overlap: overlap.as_f64(), tau: tau.as_f64() });
    }
    let e = (T::one() - overlap) / (T::one() - tau);
    Ok(e.max(T::zero()).min(T::one()))
}

/// Gradient of [`loc_error`] with respect to `(x1, y1, x2, y2)` of the prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocGrad<T> {
    pub grad: [T; 4],
    /// Set when some edge coincidence made the function non-differentiable;
    /// `grad` then holds the mean of the one-sided derivatives.
    pub nonsmooth: bool,
}

// Derivative helpers for min/max/relu. A tie yields 1/2 and raises the flag.
struct Kinks<T> {
    hit: bool,
    half: T,
}

impl<T: Real> Kinks<T> {
    fn new() -> Self {
        Kinks { hit: false, half: lit(0.5) }
    }

    /// d max(a, b) / da
    fn dmax(&mut self, a: T, b: T) -> T {
        if a > b {
            T::one()
        } else if a < b {
            T::zero()
        } else {
            self.hit = true;
            self.half
        }
    }

    /// d min(a, b) / da
    fn dmin(&mut self, a: T, b: T) -> T {
        if a < b {
            T::one()
        } else if a > b {
            T::zero()
        } else {
            self.hit = true;
            self.half
        }
    }

    fn drelu(&mut self, z: T) -> T {
        self.dmax(z, T::zero())
    }
}

/// Partial derivatives of the overlap measure (IoU or raw GIoU) wrt the prediction.
fn overlap_grad<T: Real>(p: &BBox<T>, g: &BBox<T>, generalized: bool) -> Result<([T; 4], bool)> {
    let mut k = Kinks::new();
    let zero = T::zero();

    let iw = p.x2.min(g.x2) - p.x1.max(g.x1);
    let ih = p.y2.min(g.y2) - p.y1.max(g.y1);
    let (rw, rh) = (iw.max(zero), ih.max(zero));
    let inter = rw * rh;

    let diw = [-k.dmax(p.x1, g.x1), zero, k.dmin(p.x2, g.x2), zero];
    let dih = [zero, -k.dmax(p.y1, g.y1), zero, k.dmin(p.y2, g.y2)];
    let (dw, dh) = (k.drelu(iw), k.drelu(ih));
    let d_inter: [T; 4] = std::array::from_fn(|c| dw * diw[c] * rh + rw * dh * dih[c]);

    let (pw, ph) = (p.width(), p.height());
    let d_area = [-ph, -pw, ph, pw];
    let union = union_from(p.area(), g.area(), inter);
    if union <= zero {
        return Err(Error::DegenerateUnion);
    }
    let d_union: [T; 4] = std::array::from_fn(|c| d_area[c] - d_inter[c]);
    let u2 = union * union;
    let mut grad: [T; 4] = std::array::from_fn(|c| (d_inter[c] * union - inter * d_union[c]) / u2);

    if generalized {
        let cw = p.x2.max(g.x2) - p.x1.min(g.x1);
        let ch = p.y2.max(g.y2) - p.y1.min(g.y1);
        let hull = cw * ch;
        if hull <= zero {
            return Err(Error::DegenerateHull);
        }
        let dcw = [-k.dmin(p.x1, g.x1), zero, k.dmax(p.x2, g.x2), zero];
        let dch = [zero, -k.dmin(p.y1, g.y1), zero, k.dmax(p.y2, g.y2)];
        let h2 = hull * hull;
        for c in 0..4 {
            let d_hull = dcw[c] * ch + cw * dch[c];
            grad[c] = grad[c] + (d_union[c] * hull - union * d_hull) / h2;
        }
    }
    Ok((grad, k.hit))
}

/// Analytic gradient of the localisation error.
///
/// Errors under the same conditions as [`loc_error`].
pub fn loc_error_grad<T: Real>(
    pred: &BBox<T>,
    gt: &BBox<T>,
    kind: LocErrorKind<T>,
) -> Result<LocGrad<T>> {
    // Validates the true-positive condition.
    loc_error(pred, gt, kind)?;
    let tau = kind.tau();
    let (g, nonsmooth) = match kind {
        LocErrorKind::Iou { .. } => {
            let (g, hit) = overlap_grad(pred, gt, false)?;
            let s = -T::one() / (T::one() - tau);
            (g.map(|v| v * s), hit)
        }
        LocErrorKind::Giou { .. } => {
            let (g, hit) = overlap_grad(pred, gt, true)?;
            let s = -T::one() / (lit::<T>(2.0) * (T::one() - tau));
            (g.map(|v| v * s), hit)
        }
    };
    Ok(LocGrad { grad: g, nonsmooth })
}
