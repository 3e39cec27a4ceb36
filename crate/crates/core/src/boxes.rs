use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Road-user classes, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    Sedan,
    BusOrTruck,
    Pedestrian,
    Motorcycle,
    Bicycle,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] = [
        ObjectClass::Sedan,
        ObjectClass::BusOrTruck,
        ObjectClass::Pedestrian,
        ObjectClass::Motorcycle,
        ObjectClass::Bicycle,
    ];
    pub const COUNT: usize = 5;

    /// Heatmap channel of this class.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ObjectClass::Sedan => "Sedan",
            ObjectClass::BusOrTruck => "Bus or Truck",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Motorcycle => "Motorcycle",
            ObjectClass::Bicycle => "Bicycle",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "sedan" => Ok(ObjectClass::Sedan),
            "busortruck" => Ok(ObjectClass::BusOrTruck),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "motorcycle" => Ok(ObjectClass::Motorcycle),
            "bicycle" => Ok(ObjectClass::Bicycle),
            _ => Err(format!("unknown object class '{s}'")),
        }
    }
}

/// Rotated 3D box in the ego frame (x forward, y left, z up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    /// (length, width, height); length runs along the heading.
    pub dims: [f64; 3],
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64, class: ObjectClass) -> Self {
        Box3D {
            center,
            dims,
            yaw: normalize_angle(yaw),
            class,
            score: 1.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.center.iter().chain(self.dims.iter()).all(|v| v.is_finite())
            && self.dims.iter().all(|&d| d > 0.0)
            && self.yaw > -PI
            && self.yaw <= PI
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.dims[0] / 2.0;
        let hw = self.dims[1] / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            [
                self.center[0] + c * lx - s * ly,
                self.center[1] + s * lx + c * ly,
            ]
        })
    }

    pub fn z_range(&self) -> (f64, f64) {
        let h = self.dims[2] / 2.0;
        (self.center[2] - h, self.center[2] + h)
    }
}

/// Maps an angle onto (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_normalization_hits_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(0.25)).abs() - 0.25 < 1e-15);
    }

    #[test]
    fn class_names_parse_back() {
        for c in ObjectClass::ALL {
            assert_eq!(c.display_name().parse::<ObjectClass>().unwrap(), c);
            assert_eq!(ObjectClass::from_index(c.index()), Some(c));
        }
        assert!("tram".parse::<ObjectClass>().is_err());
    }

    #[test]
    fn corners_of_axis_aligned_box() {
        let b = Box3D::new([1.0, 2.0, 0.0], [4.0, 2.0, 1.5], 0.0, ObjectClass::Sedan);
        let c = b.bev_corners();
        assert_eq!(c[0], [3.0, 3.0]);
        assert_eq!(c[2], [-1.0, 1.0]);
    }
}
