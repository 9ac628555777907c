//! 2D map layout: road polylines and building footprints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub points: Vec<[f64; 2]>,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub polygon: Vec<[f64; 2]>,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapLayout {
    #[serde(default)]
    pub roads: Vec<Road>,
    #[serde(default)]
    pub buildings: Vec<Building>,
    /// `[xmin, ymin, xmax, ymax]` in meters.
    pub extent: [f64; 4],
}

impl MapLayout {
    pub fn empty(extent: [f64; 4]) -> Self {
        Self {
            roads: Vec::new(),
            buildings: Vec::new(),
            extent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.extent;
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite() && x0 < x1 && y0 < y1) {
            return Err(Error::invalid(format!("map extent {:?} is empty or not finite", self.extent)));
        }
        for (i, r) in self.roads.iter().enumerate() {
            if !(r.width > 0.0 && r.width.is_finite()) {
                return Err(Error::invalid(format!("road {i} has non-positive width")));
            }
            if r.points.is_empty() || r.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("road {i} needs finite points")));
            }
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if !(b.height > 0.0 && b.height.is_finite()) {
                return Err(Error::invalid(format!("building {i} has non-positive height")));
            }
            if b.polygon.len() < 3 || b.polygon.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("building {i} needs at least three finite vertices")));
            }
            if !is_simple_polygon(&b.polygon) {
                return Err(Error::invalid(format!("building {i} footprint self-intersects")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("map layout: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map layout serializes")
    }

    pub fn width(&self) -> f64 {
        self.extent[2] - self.extent[0]
    }

    pub fn depth(&self) -> f64 {
        self.extent[3] - self.extent[1]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [x0, y0, x1, y1] = self.extent;
        p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1
    }

    /// Whether `p` lies within half a road width of any road centerline.
    pub fn on_road(&self, p: [f64; 2]) -> bool {
        self.roads.iter().any(|r| {
            let half = 0.5 * r.width;
            if r.points.len() == 1 {
                return dist2(p, r.points[0]) <= half * half;
            }
            r.points
                .windows(2)
                .any(|s| segment_distance2(p, s[0], s[1]) <= half * half)
        })
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// Squared distance from `p` to segment `ab`.
pub fn segment_distance2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist2(p, [a[0] + t * abx, a[1] + t * aby])
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// No two non-adjacent edges touch and no edge is degenerate.
pub fn is_simple_polygon(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let edge = |i: usize| (poly[i], poly[(i + 1) % n]);
    for i in 0..n {
        let (a, b) = edge(i);
        if a == b {
            return false;
        }
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (c, d) = edge(j);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_format() {
        let text = r#"{
            "roads": [{"points": [[0, 5], [20, 5]], "width": 6}],
            "buildings": [{"polygon": [[2, 10], [8, 10], [8, 16], [2, 16]], "height": 9.5}],
            "extent": [0, 0, 20, 20]
        }"#;
        let map = MapLayout::from_json(text).unwrap();
        assert_eq!(map.roads[0].width, 6.0);
        assert_eq!(map.buildings[0].height, 9.5);
        assert!(map.on_road([10.0, 7.9]));
        assert!(!map.on_road([10.0, 8.1]));
        assert_eq!(MapLayout::from_json(&map.to_json()).unwrap(), map);
    }

    #[test]
    fn rejects_bow_tie_and_bad_sizes() {
        assert!(!is_simple_polygon(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]));
        assert!(is_simple_polygon(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]));
        let mut map = MapLayout::empty([0.0, 0.0, 10.0, 10.0]);
        map.roads.push(Road {
            points: vec![[0.0, 0.0]],
            width: 0.0,
        });
        assert!(map.validate().is_err());
        assert!(MapLayout::empty([0.0, 0.0, 0.0, 1.0]).validate().is_err());
    }

    #[test]
    fn polygon_membership() {
        let sq = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
        assert!(point_in_polygon([0.5, 9.5], &sq));
        assert!(!point_in_polygon([10.5, 5.0], &sq));
    }
}
