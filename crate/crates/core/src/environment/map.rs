use serde::{Deserialize, Serialize};

use super::{Bounds, EnvError, MdpState};
use crate::automata::LabelSet;

const EDGE_EPS: f64 = 1e-9;

/// Region geometry in map coordinates. All shapes are closed sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Circle { center: [f64; 2], diameter: f64 },
    Rect { min: [f64; 2], max: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Shape {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Circle { center, diameter } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                (dx * dx + dy * dy).sqrt() <= diameter / 2.0
            }
            Shape::Rect { min, max } => p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1],
            Shape::Polygon { vertices } => polygon_contains(vertices, p),
        }
    }

    fn extent(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Shape::Circle { center, diameter } => {
                let r = diameter / 2.0;
                ([center[0] - r, center[1] - r], [center[0] + r, center[1] + r])
            }
            Shape::Rect { min, max } => (*min, *max),
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Shape::Circle { center, diameter } => {
                if !(diameter.is_finite() && *diameter > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err("circle needs a finite center and positive diameter".into());
                }
            }
            Shape::Rect { min, max } => {
                if !(min[0] <= max[0] && min[1] <= max[1]) {
                    return Err("rect min must not exceed max".into());
                }
            }
            Shape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err("polygon needs at least three vertices".into());
                }
            }
        }
        Ok(())
    }
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return apx.abs() <= EDGE_EPS && apy.abs() <= EDGE_EPS;
    }
    let t = ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0);
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt() <= EDGE_EPS
}

fn polygon_contains(vertices: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(flatten)]
    pub shape: Shape,
    pub label: LabelSet,
}

/// A rectangular map `[0, width] × [0, height]` whose regions carry labels.
/// The first region containing a point determines its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledMap {
    #[serde(default)]
    pub name: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub default_label: LabelSet,
    /// Suggested starting location.
    #[serde(default)]
    pub landing: Option<[f64; 2]>,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(skip, default = "empty_bounds")]
    bounds: Bounds,
}

fn empty_bounds() -> Bounds {
    Bounds::new(vec![0.0, 0.0], vec![0.0, 0.0])
}

impl LabelledMap {
    pub fn new(width: f64, height: f64, regions: Vec<Region>, default_label: LabelSet) -> Result<Self, EnvError> {
        let mut map = Self {
            name: String::new(),
            width,
            height,
            default_label,
            landing: None,
            regions,
            bounds: empty_bounds(),
        };
        map.finish()?;
        Ok(map)
    }

    /// Reads a map document (TOML).
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut map: Self = toml::from_str(text).map_err(|e| EnvError::InvalidMap(e.to_string()))?;
        map.finish()?;
        Ok(map)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("map serializes")
    }

    fn finish(&mut self) -> Result<(), EnvError> {
        if !(self.width.is_finite() && self.width > 0.0 && self.height.is_finite() && self.height > 0.0) {
            return Err(EnvError::InvalidMap("width and height must be positive".into()));
        }
        self.bounds = Bounds::new(vec![0.0, 0.0], vec![self.width, self.height]);
        for (i, r) in self.regions.iter().enumerate() {
            r.shape
                .validate()
                .map_err(|e| EnvError::InvalidMap(format!("region {i}: {e}")))?;
            let (lo, hi) = r.shape.extent();
            if lo[0] < -EDGE_EPS || lo[1] < -EDGE_EPS || hi[0] > self.width + EDGE_EPS || hi[1] > self.height + EDGE_EPS
            {
                return Err(EnvError::InvalidMap(format!(
                    "region {i} extends outside the {}x{} bounding box",
                    self.width, self.height
                )));
            }
        }
        if let Some(l) = self.landing {
            if !self.bounds.contains(&MdpState(l.to_vec())) {
                return Err(EnvError::InvalidMap("landing location outside the map".into()));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn label_at(&self, s: &MdpState) -> Result<&LabelSet, EnvError> {
        if s.dim() != 2 || !self.bounds.contains(s) {
            return Err(EnvError::OutOfBounds(s.0.clone()));
        }
        let p = [s.0[0], s.0[1]];
        Ok(self
            .regions
            .iter()
            .find(|r| r.shape.contains(p))
            .map(|r| &r.label)
            .unwrap_or(&self.default_label))
    }

    pub fn builtin_melas() -> Self {
        Self::parse(include_str!("../../assets/melas.map")).expect("bundled melas map is valid")
    }

    pub fn builtin_coprates() -> Self {
        Self::parse(include_str!("../../assets/coprates.map")).expect("bundled coprates map is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lbl(p: &[&str]) -> LabelSet {
        LabelSet::new(p.iter().copied()).unwrap()
    }

    #[test]
    fn circle_center_and_boundary() {
        let map = LabelledMap::new(
            100.0,
            100.0,
            vec![Region {
                shape: Shape::Circle {
                    center: [50.0, 50.0],
                    diameter: 20.0,
                },
                label: lbl(&["t1"]),
            }],
            LabelSet::empty(),
        )
        .unwrap();
        assert_eq!(map.label_at(&MdpState(vec![50.0, 50.0])).unwrap(), &lbl(&["t1"]));
        // exactly on the radius: closed region
        assert_eq!(map.label_at(&MdpState(vec![60.0, 50.0])).unwrap(), &lbl(&["t1"]));
        assert_eq!(map.label_at(&MdpState(vec![50.0, 40.0])).unwrap(), &lbl(&["t1"]));
        assert!(map.label_at(&MdpState(vec![60.0 + 1e-9, 50.0])).unwrap().is_empty());
        assert!(map.label_at(&MdpState(vec![5.0, 5.0])).unwrap().is_empty());
        assert!(map.label_at(&MdpState(vec![-1.0, 5.0])).is_err());
    }

    #[test]
    fn first_region_wins() {
        let map = LabelledMap::new(
            10.0,
            10.0,
            vec![
                Region {
                    shape: Shape::Rect {
                        min: [0.0, 0.0],
                        max: [5.0, 5.0],
                    },
                    label: lbl(&["a"]),
                },
                Region {
                    shape: Shape::Rect {
                        min: [5.0, 0.0],
                        max: [10.0, 5.0],
                    },
                    label: lbl(&["b"]),
                },
            ],
            LabelSet::empty(),
        )
        .unwrap();
        assert_eq!(map.label_at(&MdpState(vec![5.0, 2.0])).unwrap(), &lbl(&["a"]));
        assert_eq!(map.label_at(&MdpState(vec![5.1, 2.0])).unwrap(), &lbl(&["b"]));
    }

    #[test]
    fn polygon_boundary_is_inside() {
        let tri = Shape::Polygon {
            vertices: vec![[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]],
        };
        assert!(tri.contains([1.0, 1.0]));
        assert!(tri.contains([2.0, 2.0]));
        assert!(tri.contains([0.0, 2.0]));
        assert!(tri.contains([4.0, 0.0]));
        assert!(!tri.contains([2.1, 2.1]));
    }

    #[test]
    fn region_outside_box_rejected() {
        let r = LabelledMap::new(
            10.0,
            10.0,
            vec![Region {
                shape: Shape::Circle {
                    center: [9.0, 5.0],
                    diameter: 4.0,
                },
                label: lbl(&["t"]),
            }],
            LabelSet::empty(),
        );
        assert!(matches!(r, Err(EnvError::InvalidMap(_))));
    }

    #[test]
    fn bundled_maps_match_stated_geometry() {
        let melas = LabelledMap::builtin_melas();
        assert_eq!((melas.width, melas.height), (456.98, 322.58));
        let coprates = LabelledMap::builtin_coprates();
        assert_eq!((coprates.width, coprates.height), (323.47, 215.05));
        for map in [&melas, &coprates] {
            for r in &map.regions {
                if let Shape::Circle { diameter, .. } = r.shape {
                    assert_eq!(diameter, 19.12);
                }
            }
            let landing = MdpState(map.landing.unwrap().to_vec());
            assert!(map.label_at(&landing).unwrap().is_empty());
        }
        assert_eq!(melas.landing, Some([118.0, 85.0]));
        assert_eq!(coprates.landing, Some([194.0, 74.0]));
    }

    #[test]
    fn toml_round_trip() {
        let melas = LabelledMap::builtin_melas();
        let again = LabelledMap::parse(&melas.to_toml()).unwrap();
        assert_eq!(melas, again);
    }
}
