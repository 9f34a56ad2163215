//! Bird's-eye-view footprints on the camera X–Z plane.

use std::fmt::Write;

use cos3d::curation::CanonicalLine;
use cos3d::geometry::Box3D;
use serde::Serialize;

/// Pixels per metre in the SVG plot.
const SCALE: f64 = 20.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Footprint {
    pub category: String,
    pub depth: f64,
    /// Box center as `[x, z]`.
    pub center: [f64; 2],
    /// Counter-clockwise convex hull of the corners, `[x, z]` in metres.
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BevScene {
    pub image_path: String,
    pub footprints: Vec<Footprint>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain convex hull, counter-clockwise, no repeated end point.
pub fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Ground-plane footprint of a box: hull of its corners projected to X–Z.
pub fn footprint(b: &Box3D<f64>) -> Vec<[f64; 2]> {
    convex_hull(b.corners().iter().map(|c| [c.x(), c.z()]).collect())
}

impl BevScene {
    pub fn from_lines(image_path: &str, lines: &[CanonicalLine]) -> Self {
        let footprints = lines
            .iter()
            .flat_map(|l| {
                l.instances.iter().map(|r| Footprint {
                    category: l.category.clone(),
                    depth: r.depth,
                    center: [r.box3d.center.x(), r.box3d.center.z()],
                    polygon: footprint(&r.box3d),
                })
            })
            .collect();
        Self { image_path: image_path.to_string(), footprints }
    }

    /// Plot with the camera at the bottom, +Z pointing up the page and a 1 m grid.
    pub fn to_svg(&self) -> String {
        let pts = self.footprints.iter().flat_map(|f| f.polygon.iter()).chain(std::iter::once(&[0.0, 0.0]));
        let (mut x0, mut x1, mut z0, mut z1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            z0 = z0.min(p[1]);
            z1 = z1.max(p[1]);
        }
        let (x0, x1, z0, z1) = ((x0 - 1.0).floor(), (x1 + 1.0).ceil(), (z0 - 1.0).floor(), (z1 + 1.0).ceil());
        let px = |x: f64| (x - x0) * SCALE;
        let py = |z: f64| (z1 - z) * SCALE;
        let (w, h) = ((x1 - x0) * SCALE, (z1 - z0) * SCALE);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r##"<g stroke="#dddddd" stroke-width="1">"##);
        for i in 0..=((x1 - x0) as i64) {
            let x = px(x0 + i as f64);
            let _ = writeln!(s, r#"<line x1="{x:.1}" y1="0" x2="{x:.1}" y2="{h:.1}"/>"#);
        }
        for i in 0..=((z1 - z0) as i64) {
            let y = py(z0 + i as f64);
            let _ = writeln!(s, r#"<line x1="0" y1="{y:.1}" x2="{w:.1}" y2="{y:.1}"/>"#);
        }
        s.push_str("</g>\n");
        let (cx, cy) = (px(0.0), py(0.0));
        let _ = writeln!(
            s,
            r#"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" fill="black"/>"#,
            cx,
            cy - 6.0,
            cx - 5.0,
            cy + 4.0,
            cx + 5.0,
            cy + 4.0
        );
        let mut categories: Vec<&str> = self.footprints.iter().map(|f| f.category.as_str()).collect();
        categories.sort_unstable();
        categories.dedup();
        for f in &self.footprints {
            let color = PALETTE[categories.binary_search(&f.category.as_str()).unwrap_or(0) % PALETTE.len()];
            let points: Vec<String> = f.polygon.iter().map(|p| format!("{:.1},{:.1}", px(p[0]), py(p[1]))).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.25" stroke="{color}" stroke-width="1.5"/>"#, points.join(" "));
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif" fill="{color}">{}</text>"#,
                px(f.center[0]) + 4.0,
                py(f.center[1]),
                xml_escape(&f.category)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
