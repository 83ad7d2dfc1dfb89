//! Axis-aligned bounding boxes in absolute pixel coordinates and the
//! intersection-over-union measure used by the localization reward.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvalidBox {
    #[error("bbox must have exactly 4 coordinates, got {0}")]
    Arity(usize),
    #[error("bbox coordinate {0} is not a finite number")]
    NotFinite(&'static str),
    #[error("bbox coordinate {0} is negative")]
    Negative(&'static str),
    #[error("bbox requires x_min < x_max")]
    XOrder,
    #[error("bbox requires y_min < y_max")]
    YOrder,
}

/// Axis-aligned rectangle with `x_min < x_max`, `y_min < y_max`, all
/// coordinates finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<F> {
    x_min: F,
    y_min: F,
    x_max: F,
    y_max: F,
}

impl<F: Scalar> BoundingBox<F> {
    pub fn new(x_min: F, y_min: F, x_max: F, y_max: F) -> Result<Self, InvalidBox> {
        let named = [
            ("x_min", x_min),
            ("y_min", y_min),
            ("x_max", x_max),
            ("y_max", y_max),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(InvalidBox::NotFinite(name));
            }
            if v < F::zero() {
                return Err(InvalidBox::Negative(name));
            }
        }
        if x_min >= x_max {
            return Err(InvalidBox::XOrder);
        }
        if y_min >= y_max {
            return Err(InvalidBox::YOrder);
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_array(coords: &[F]) -> Result<Self, InvalidBox> {
        if coords.len() != 4 {
            return Err(InvalidBox::Arity(coords.len()));
        }
        Self::new(coords[0], coords[1], coords[2], coords[3])
    }

    pub fn x_min(&self) -> F {
        self.x_min
    }

    pub fn y_min(&self) -> F {
        self.y_min
    }

    pub fn x_max(&self) -> F {
        self.x_max
    }

    pub fn y_max(&self) -> F {
        self.y_max
    }

    pub fn to_array(&self) -> [F; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn area(&self) -> F {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn intersection_area(&self, other: &Self) -> F {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= F::zero() || h <= F::zero() {
            F::zero()
        } else {
            w * h
        }
    }
}

/// Intersection area over union area. Zero for disjoint boxes and for boxes
/// touching only along an edge.
pub fn iou<F: Scalar>(a: &BoundingBox<F>, b: &BoundingBox<F>) -> F {
    let inter = a.intersection_area(b);
    if inter <= F::zero() {
        return F::zero();
    }
    let union = a.area() + b.area() - inter;
    inter / union
}

impl<F: Scalar + Serialize> Serialize for BoundingBox<F> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de, F: Scalar + Deserialize<'de>> Deserialize<'de> for BoundingBox<F> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let coords = <[F; 4]>::deserialize(deserializer)?;
        BoundingBox::from_array(&coords).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox<f64> {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn rejects_invalid_boxes() {
        assert_eq!(
            BoundingBox::new(400.0, 300.0, 150.0, 600.0).unwrap_err(),
            InvalidBox::XOrder
        );
        assert_eq!(
            BoundingBox::new(0.0, 5.0, 1.0, 5.0).unwrap_err(),
            InvalidBox::YOrder
        );
        assert_eq!(
            BoundingBox::new(-1.0, 0.0, 1.0, 1.0).unwrap_err(),
            InvalidBox::Negative("x_min")
        );
        assert_eq!(
            BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).unwrap_err(),
            InvalidBox::NotFinite("x_min")
        );
        assert_eq!(
            BoundingBox::<f64>::from_array(&[1.0, 2.0, 3.0]).unwrap_err(),
            InvalidBox::Arity(3)
        );
    }

    #[test]
    fn iou_identity_is_one() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        assert_eq!(iou(&bb(0.0, 0.0, 1.0, 1.0), &bb(5.0, 5.0, 6.0, 6.0)), 0.0);
    }

    #[test]
    fn iou_edge_touch_is_zero() {
        assert_eq!(iou(&bb(0.0, 0.0, 1.0, 1.0), &bb(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        let v: f64 = iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(5.0, 5.0, 15.0, 15.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn iou_works_in_f32() {
        let a = BoundingBox::<f32>::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BoundingBox::<f32>::new(5.0, 5.0, 15.0, 15.0).unwrap();
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn serde_round_trip() {
        let a = bb(1.0, 2.0, 3.5, 4.25);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[1.0,2.0,3.5,4.25]");
        let back: BoundingBox<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<BoundingBox<f64>>("[4.0,0.0,1.0,2.0]").is_err());
    }
}
