//! Mask outlines as integer polygons: Moore-neighbor boundary tracing,
//! Douglas-Peucker simplification, rasterization, and the length-prefixed
//! binary encoding carried on the control channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Mask, MaskSet};

/// Minimum share of a component's pixels its simplified outline must cover.
pub const MIN_COVERAGE: f64 = 0.98;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polygon {
    pub label: u16,
    /// Vertices at pixel centers, implicitly closed.
    pub vertices: Vec<(u16, u16)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolygonSet {
    pub polygons: Vec<Polygon>,
}

// 8-neighborhood, clockwise in image coordinates (y down), starting west.
const DIRS: [(i32, i32); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn dir_index(dx: i32, dy: i32) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("offset is an 8-neighbor step")
}

/// Outer boundary of the 8-connected component containing `start`, which
/// must be its first pixel in raster order.
fn moore_trace(inside: &impl Fn(i32, i32) -> bool, start: (i32, i32)) -> Vec<(i32, i32)> {
    let mut contour = vec![start];
    let mut p = start;
    let mut back = 0usize; // west of the first pixel is never inside
    let mut first_move = None;
    let limit = 8 * 1024 * 1024;
    for _ in 0..limit {
        let mut found = None;
        for k in 1..=8 {
            let d = (back + k) % 8;
            let q = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
            if inside(q.0, q.1) {
                found = Some((d, q));
                break;
            }
        }
        let Some((d, q)) = found else {
            break; // isolated pixel
        };
        if p == start {
            match first_move {
                Some(fm) if fm == d => break,
                None => first_move = Some(d),
                _ => {}
            }
        }
        let prev = DIRS[(d + 7) % 8];
        let b = (p.0 + prev.0, p.1 + prev.1);
        back = dir_index(b.0 - q.0, b.1 - q.1);
        p = q;
        contour.push(p);
    }
    if contour.len() > 1 && contour.last() == contour.first() {
        contour.pop();
    }
    contour
}

fn seg_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Douglas-Peucker on an open polyline; endpoints are always kept.
fn douglas_peucker(pts: &[(i32, i32)], eps: f64) -> Vec<(i32, i32)> {
    if pts.len() <= 2 {
        return pts.to_vec();
    }
    let f = |p: (i32, i32)| (p.0 as f64, p.1 as f64);
    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;
    let mut stack = vec![(0usize, pts.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (f(pts[lo]), f(pts[hi]));
        let (mut worst, mut idx) = (-1.0, lo);
        for (i, &p) in pts.iter().enumerate().take(hi).skip(lo + 1) {
            let d = seg_distance(f(p), a, b);
            if d > worst {
                worst = d;
                idx = i;
            }
        }
        if worst > eps {
            keep[idx] = true;
            stack.push((lo, idx));
            stack.push((idx, hi));
        }
    }
    pts.iter()
        .zip(keep)
        .filter_map(|(&p, k)| k.then_some(p))
        .collect()
}

/// Douglas-Peucker on a closed ring, split at the vertex farthest from the
/// first one.
fn simplify_closed(ring: &[(i32, i32)], eps: f64) -> Vec<(i32, i32)> {
    if ring.len() <= 3 {
        return ring.to_vec();
    }
    let d2 = |p: (i32, i32)| {
        let (dx, dy) = ((p.0 - ring[0].0) as i64, (p.1 - ring[0].1) as i64);
        dx * dx + dy * dy
    };
    let far = (1..ring.len()).max_by_key(|&i| (d2(ring[i]), std::cmp::Reverse(i))).unwrap();
    let first = douglas_peucker(&ring[..=far], eps);
    let mut second_in: Vec<(i32, i32)> = ring[far..].to_vec();
    second_in.push(ring[0]);
    let second = douglas_peucker(&second_in, eps);
    let mut out = first;
    out.pop();
    out.extend_from_slice(&second[..second.len() - 1]);
    out
}

fn orient(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> i64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_touch(a: (i64, i64), b: (i64, i64), c: (i64, i64), d: (i64, i64)) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1.signum() * o2.signum() < 0 && o3.signum() * o4.signum() < 0 {
        return true;
    }
    (o1 == 0 && on_segment(a, b, c))
        || (o2 == 0 && on_segment(a, b, d))
        || (o3 == 0 && on_segment(c, d, a))
        || (o4 == 0 && on_segment(c, d, b))
}

impl Polygon {
    /// True for a closed ring of at least three vertices whose edges meet
    /// only at shared endpoints of consecutive edges.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let v: Vec<(i64, i64)> = self
            .vertices
            .iter()
            .map(|&(x, y)| (x as i64, y as i64))
            .collect();
        let edge = |i: usize| (v[i], v[(i + 1) % n]);
        for i in 0..n {
            let (a, b) = edge(i);
            if a == b {
                return false;
            }
            // consecutive edges may only share their joint
            let (_, c) = edge((i + 1) % n);
            if orient(a, b, c) == 0 {
                let back = (b.0 - a.0) * (c.0 - b.0) + (b.1 - a.1) * (c.1 - b.1);
                if back < 0 {
                    return false;
                }
            }
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = edge(j);
                if segments_touch(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Pixels whose centers lie inside or on the polygon.
    pub fn rasterize(&self, width: u32, height: u32) -> Mask {
        let mut out = Mask::empty(width, height, self.label.max(1)).expect("nonzero label");
        self.rasterize_into(&mut out);
        out
    }

    fn rasterize_into(&self, out: &mut Mask) {
        let (width, height) = out.dims();
        let n = self.vertices.len();
        if n == 0 {
            return;
        }
        let v: Vec<(i64, i64)> = self
            .vertices
            .iter()
            .map(|&(x, y)| (x as i64, y as i64))
            .collect();
        let mut points = Vec::new();
        let put = |x: i64, y: i64, pts: &mut Vec<(u32, u32)>| {
            if x >= 0 && y >= 0 && (x as u32) < width && (y as u32) < height {
                pts.push((x as u32, y as u32));
            }
        };
        // boundary lattice points
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let g = gcd(dx.unsigned_abs(), dy.unsigned_abs()).max(1) as i64;
            let (sx, sy) = (dx / g, dy / g);
            for k in 0..=g {
                put(a.0 + k * sx, a.1 + k * sy, &mut points);
            }
        }
        // interior spans, even-odd with half-open edge rule
        if n >= 3 {
            let ymin = v.iter().map(|p| p.1).min().unwrap().max(0);
            let ymax = v.iter().map(|p| p.1).max().unwrap().min(height as i64 - 1);
            let mut xs: Vec<f64> = Vec::new();
            for y in ymin..=ymax {
                xs.clear();
                for i in 0..n {
                    let (a, b) = (v[i], v[(i + 1) % n]);
                    if a.1 == b.1 {
                        continue;
                    }
                    let (lo, hi) = if a.1 < b.1 { (a, b) } else { (b, a) };
                    if y >= lo.1 && y < hi.1 {
                        let t = (y - lo.1) as f64 / (hi.1 - lo.1) as f64;
                        xs.push(lo.0 as f64 + t * (hi.0 - lo.0) as f64);
                    }
                }
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for pair in xs.chunks_exact(2) {
                    let x0 = (pair[0] - 1e-9).ceil() as i64;
                    let x1 = (pair[1] + 1e-9).floor() as i64;
                    for x in x0..=x1 {
                        put(x, y, &mut points);
                    }
                }
            }
        }
        let raster = Mask::from_points(width, height, out.label(), points).expect("clipped points");
        out.union_with(&raster).expect("same raster");
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl PolygonSet {
    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    /// A single polygon around the whole raster.
    pub fn full_frame(width: u32, height: u32) -> Self {
        let (x1, y1) = ((width - 1) as u16, (height - 1) as u16);
        PolygonSet {
            polygons: vec![Polygon {
                label: 1,
                vertices: vec![(0, 0), (x1, 0), (x1, y1), (0, y1)],
            }],
        }
    }

    /// Union of all polygon rasters: the region the receiver treats as
    /// transmitted foreground.
    pub fn rasterize(&self, width: u32, height: u32) -> Mask {
        let mut out = Mask::empty(width, height, 1).expect("nonzero label");
        for p in &self.polygons {
            p.rasterize_into(&mut out);
        }
        out
    }

    /// `count u16 | { label u16 | n u16 | n × (x u16, y u16) }`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.polygons.len() as u16).to_le_bytes());
        for p in &self.polygons {
            out.extend_from_slice(&p.label.to_le_bytes());
            out.extend_from_slice(&(p.vertices.len() as u16).to_le_bytes());
            for &(x, y) in &p.vertices {
                out.extend_from_slice(&x.to_le_bytes());
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
    }

    pub fn encoded_len(&self) -> usize {
        2 + self
            .polygons
            .iter()
            .map(|p| 4 + 4 * p.vertices.len())
            .sum::<usize>()
    }

    /// Parses one set from the front of `bytes`, returning it and the number
    /// of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(PolygonSet, usize)> {
        let mut pos = 0usize;
        let take_u16 = |pos: &mut usize| -> Result<u16> {
            let b = bytes
                .get(*pos..*pos + 2)
                .ok_or_else(|| Error::Malformed("truncated polygon set".into()))?;
            *pos += 2;
            Ok(u16::from_le_bytes([b[0], b[1]]))
        };
        let count = take_u16(&mut pos)?;
        let mut polygons = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let label = take_u16(&mut pos)?;
            let n = take_u16(&mut pos)?;
            let mut vertices = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let x = take_u16(&mut pos)?;
                let y = take_u16(&mut pos)?;
                vertices.push((x, y));
            }
            polygons.push(Polygon { label, vertices });
        }
        Ok((PolygonSet { polygons }, pos))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PolygonSet> {
        let (set, used) = PolygonSet::read_from(bytes)?;
        if used != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after polygon set",
                bytes.len() - used
            )));
        }
        Ok(set)
    }
}

/// 8-connected components of a mask, each as a list of pixels, ordered by
/// their first pixel in raster order.
pub fn components_8(mask: &Mask) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w as usize * h as usize];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for (sx, sy) in mask.iter_set() {
        let si = (sy * w + sx) as usize;
        if seen[si] {
            continue;
        }
        seen[si] = true;
        stack.push((sx, sy));
        let mut comp = Vec::new();
        while let Some((x, y)) = stack.pop() {
            comp.push((x, y));
            for (dx, dy) in DIRS {
                let (nx, ny) = (x as i64 + dx as i64, y as i64 + dy as i64);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as u32, ny as u32);
                let ni = (ny * w + nx) as usize;
                if !seen[ni] && mask.get(nx, ny) {
                    seen[ni] = true;
                    stack.push((nx, ny));
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Outline of one 8-connected component, simplified with `epsilon` and
/// tightened where needed so the outline stays simple and covers
/// [`MIN_COVERAGE`] of the component.
pub fn outline_component(component: &[(u32, u32)], width: u32, height: u32, label: u16, epsilon: f64) -> Polygon {
    let comp_mask = Mask::from_points(width, height, label.max(1), component.iter().copied())
        .expect("component lies on the raster");
    let start = component
        .iter()
        .copied()
        .min_by_key(|&(x, y)| (y, x))
        .expect("non-empty component");
    let inside = |x: i32, y: i32| {
        x >= 0 && y >= 0 && (x as u32) < width && (y as u32) < height && comp_mask.get(x as u32, y as u32)
    };
    let ring = moore_trace(&inside, (start.0 as i32, start.1 as i32));
    let to_poly = |pts: Vec<(i32, i32)>| Polygon {
        label,
        vertices: pts.into_iter().map(|(x, y)| (x as u16, y as u16)).collect(),
    };

    let mut eps = epsilon;
    loop {
        let candidate = to_poly(simplify_closed(&ring, eps));
        let covered = candidate
            .rasterize(width, height)
            .intersection_area(&comp_mask)
            .expect("same raster");
        let coverage = covered as f64 / comp_mask.area() as f64;
        let simple_enough = candidate.vertices.len() < 3 || candidate.is_simple();
        if (coverage >= MIN_COVERAGE && simple_enough) || eps <= 0.0 {
            return candidate;
        }
        eps = if eps > 0.125 { eps / 2.0 } else { 0.0 };
    }
}

/// One outline per 8-connected component of every mask, labeled with the
/// mask's label.
pub fn extract_polygons(masks: &MaskSet, epsilon: f64) -> PolygonSet {
    let (w, h) = masks.dims();
    let mut polygons = Vec::new();
    for mask in masks.masks() {
        for comp in components_8(mask) {
            polygons.push(outline_component(&comp, w, h, mask.label(), epsilon));
        }
    }
    PolygonSet { polygons }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, MaskSource};

    fn set_of(mask: Mask) -> MaskSet {
        let (w, h) = mask.dims();
        MaskSet::new(w, h, vec![mask], MaskSource::Delta).unwrap()
    }

    #[test]
    fn rectangle_simplifies_to_four_corners() {
        let m = Mask::rect(
            32,
            32,
            7,
            BBox {
                x0: 4,
                y0: 6,
                x1: 27,
                y1: 17,
            },
        )
        .unwrap();
        let polys = extract_polygons(&set_of(m.clone()), 1.0);
        assert_eq!(polys.len(), 1);
        let p = &polys.polygons[0];
        assert_eq!(p.label, 7);
        assert_eq!(p.vertices, vec![(4, 6), (27, 6), (27, 17), (4, 17)]);
        assert!(p.is_simple());
        assert_eq!(p.rasterize(32, 32).iter_set().collect::<Vec<_>>(), m.iter_set().collect::<Vec<_>>());
    }

    #[test]
    fn empty_set_gives_no_polygons() {
        let set = MaskSet::empty(16, 16, MaskSource::Delta);
        assert!(extract_polygons(&set, 1.0).is_empty());
    }

    #[test]
    fn l_shape_has_six_vertices() {
        // Hand-built L: a 10×4 bar along the bottom, a 4×10 bar on the left.
        let m = Mask::from_fn(16, 16, 1, |x, y| {
            (2..12).contains(&x) && (8..12).contains(&y) || (2..6).contains(&x) && (2..12).contains(&y)
        })
        .unwrap();
        let p = &extract_polygons(&set_of(m.clone()), 1.0).polygons[0];
        // The 8-connected trace cuts the concave corner diagonally, so the
        // inner vertex lands on (6, 8) rather than (5, 8).
        assert_eq!(p.vertices.len(), 6);
        for corner in [(2, 2), (5, 2), (11, 8), (11, 11), (2, 11)] {
            assert!(p.vertices.contains(&corner), "missing {corner:?}");
        }
        assert!(p.is_simple());
        assert_eq!(p.rasterize(16, 16), m.clone().with_label(1).unwrap());
    }

    #[test]
    fn moore_trace_visits_boundary_clockwise() {
        let m = Mask::rect(8, 8, 1, BBox { x0: 1, y0: 1, x1: 3, y1: 2 }).unwrap();
        let inside = |x: i32, y: i32| x >= 0 && y >= 0 && x < 8 && y < 8 && m.get(x as u32, y as u32);
        let ring = moore_trace(&inside, (1, 1));
        assert_eq!(ring, vec![(1, 1), (2, 1), (3, 1), (3, 2), (2, 2), (1, 2)]);
    }

    #[test]
    fn single_pixel_component() {
        let m = Mask::from_points(8, 8, 3, [(4, 4)]).unwrap();
        let p = &extract_polygons(&set_of(m.clone()), 1.0).polygons[0];
        assert_eq!(p.vertices, vec![(4, 4)]);
        assert_eq!(p.rasterize(8, 8).area(), 1);
    }

    #[test]
    fn binary_layout_is_exact() {
        let set = PolygonSet {
            polygons: vec![Polygon {
                label: 0x0102,
                vertices: vec![(1, 2), (3, 4)],
            }],
        };
        let bytes = set.to_bytes();
        assert_eq!(bytes, vec![1, 0, 2, 1, 2, 0, 1, 0, 2, 0, 3, 0, 4, 0]);
        assert_eq!(bytes.len(), set.encoded_len());
        assert_eq!(PolygonSet::from_bytes(&bytes).unwrap(), set);
        assert!(PolygonSet::from_bytes(&bytes[..5]).is_err());
    }

    #[test]
    fn self_intersection_is_detected() {
        let bow = Polygon {
            label: 1,
            vertices: vec![(0, 0), (4, 4), (4, 0), (0, 4)],
        };
        assert!(!bow.is_simple());
        let spike = Polygon {
            label: 1,
            vertices: vec![(0, 0), (4, 0), (2, 0), (2, 3)],
        };
        assert!(!spike.is_simple());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn blob() -> impl Strategy<Value = Mask> {
            proptest::collection::vec((0u32..40, 0u32..28, 3u32..14, 3u32..10), 1..5).prop_map(|rects| {
                Mask::from_fn(48, 32, 1, |x, y| {
                    rects
                        .iter()
                        .any(|&(x0, y0, w, h)| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
                })
                .unwrap()
            })
        }

        proptest! {
            #[test]
            fn outlines_cover_their_masks(m in blob()) {
                let polys = extract_polygons(&set_of(m.clone()), 1.0);
                let covered = polys.rasterize(48, 32).intersection_area(&m).unwrap();
                prop_assert!(covered as f64 >= MIN_COVERAGE * m.area() as f64);
            }

            #[test]
            fn serialization_round_trips(polys in proptest::collection::vec(
                (1u16.., proptest::collection::vec(any::<(u16, u16)>(), 0..20)), 0..6)) {
                let set = PolygonSet {
                    polygons: polys.into_iter().map(|(label, vertices)| Polygon { label, vertices }).collect(),
                };
                prop_assert_eq!(PolygonSet::from_bytes(&set.to_bytes()).unwrap(), set);
            }
        }
    }
}
