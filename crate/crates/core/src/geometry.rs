//! Triangle primitives and exact scanline rasterization.
//!
//! Pixel `(px, py)` is covered by a triangle when its center
//! `(px + 0.5, py + 0.5)` lies inside the triangle or on its boundary.
//! All coverage arithmetic is done on doubled integer coordinates, so the
//! test is exact: no epsilon, no tie-breaking rule.
//!
//! Zero-area triangles (coincident or collinear vertices) cover nothing.

use rand::Rng;

/// Offset radius used when spawning a fresh triangle around its first vertex.
pub const SPAWN_RADIUS: i32 = 15;
/// Offset radius of a single mutation step; also the clamp margin around the image.
pub const MUTATE_RADIUS: i32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triangle {
    pub v0: Point,
    pub v1: Point,
    pub v2: Point,
}

impl Triangle {
    pub const fn new(v0: Point, v1: Point, v2: Point) -> Self {
        Triangle { v0, v1, v2 }
    }

    pub fn vertices(&self) -> [Point; 3] {
        [self.v0, self.v1, self.v2]
    }

    fn vertex_mut(&mut self, index: usize) -> &mut Point {
        match index {
            0 => &mut self.v0,
            1 => &mut self.v1,
            2 => &mut self.v2,
            _ => panic!("triangle vertex index {index} out of range"),
        }
    }

    /// Twice the signed area; positive for counter-clockwise winding in a
    /// y-up frame (clockwise on screen).
    pub fn doubled_signed_area(&self) -> i64 {
        let (a, b, c) = (self.v0, self.v1, self.v2);
        (i64::from(b.x) - i64::from(a.x)) * (i64::from(c.y) - i64::from(a.y))
            - (i64::from(b.y) - i64::from(a.y)) * (i64::from(c.x) - i64::from(a.x))
    }

    pub fn is_degenerate(&self) -> bool {
        self.doubled_signed_area() == 0
    }
}

/// One horizontal run of covered pixels, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scanline {
    pub y: u32,
    pub x_start: u32,
    pub x_end: u32,
}

impl Scanline {
    pub fn len(&self) -> usize {
        (self.x_end - self.x_start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Number of pixels covered by a set of scanlines.
pub fn coverage_area(lines: &[Scanline]) -> usize {
    lines.iter().map(Scanline::len).sum()
}

/// Inclusive pixel bounds. [`BoundingBox::EMPTY`] marks "no pixels".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x_min: i32,
    pub y_min: i32,
    pub x_max: i32,
    pub y_max: i32,
}

impl BoundingBox {
    pub const EMPTY: BoundingBox = BoundingBox {
        x_min: i32::MAX,
        y_min: i32::MAX,
        x_max: i32::MIN,
        y_max: i32::MIN,
    };

    pub fn is_empty(&self) -> bool {
        self.x_min > self.x_max || self.y_min > self.y_max
    }
}

/// Random triangle: first vertex uniform over the image, the other two offset
/// from it by independent uniform draws in `[-SPAWN_RADIUS, SPAWN_RADIUS]`.
pub fn random_triangle<R: Rng + ?Sized>(rng: &mut R, width: u32, height: u32) -> Triangle {
    random_triangle_with(rng, width, height, SPAWN_RADIUS)
}

pub fn random_triangle_with<R: Rng + ?Sized>(
    rng: &mut R,
    width: u32,
    height: u32,
    radius: i32,
) -> Triangle {
    assert!(width >= 1 && height >= 1, "image must be at least 1x1");
    let v0 = Point::new(
        rng.random_range(0..width) as i32,
        rng.random_range(0..height) as i32,
    );
    let mut offset = |p: Point| {
        Point::new(
            p.x + rng.random_range(-radius..=radius),
            p.y + rng.random_range(-radius..=radius),
        )
    };
    let v1 = offset(v0);
    let v2 = offset(v0);
    Triangle::new(v0, v1, v2)
}

/// Move one uniformly chosen vertex by a uniform offset in
/// `[-MUTATE_RADIUS, MUTATE_RADIUS]` per axis, clamped to the window that
/// extends `MUTATE_RADIUS` pixels beyond every image edge.
pub fn mutate_triangle<R: Rng + ?Sized>(
    tri: Triangle,
    rng: &mut R,
    width: u32,
    height: u32,
) -> Triangle {
    mutate_triangle_with(tri, rng, width, height, MUTATE_RADIUS)
}

pub fn mutate_triangle_with<R: Rng + ?Sized>(
    tri: Triangle,
    rng: &mut R,
    width: u32,
    height: u32,
    radius: i32,
) -> Triangle {
    let index = rng.random_range(0..3usize);
    let dx = rng.random_range(-radius..=radius);
    let dy = rng.random_range(-radius..=radius);
    move_vertex(tri, index, dx, dy, width, height, radius)
}

/// Deterministic core of a mutation: offset vertex `index` by `(dx, dy)` and
/// clamp it to `[-margin, width - 1 + margin] x [-margin, height - 1 + margin]`.
pub fn move_vertex(
    tri: Triangle,
    index: usize,
    dx: i32,
    dy: i32,
    width: u32,
    height: u32,
    margin: i32,
) -> Triangle {
    let mut out = tri;
    let v = out.vertex_mut(index);
    let max_x = width as i32 - 1 + margin;
    let max_y = height as i32 - 1 + margin;
    v.x = v.x.saturating_add(dx).clamp(-margin, max_x);
    v.y = v.y.saturating_add(dy).clamp(-margin, max_y);
    out
}

fn floor_div(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    a.div_euclid(b)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    -(-a).div_euclid(b)
}

/// Rasterize a triangle into per-row pixel runs clipped to the image.
///
/// Rows come out sorted by `y` with at most one run per row.
pub fn rasterize_triangle(tri: &Triangle, width: u32, height: u32) -> Vec<Scanline> {
    let mut out = Vec::new();
    rasterize_into(tri, width, height, &mut out);
    out
}

/// Same as [`rasterize_triangle`] but reuses the caller's buffer.
pub fn rasterize_into(tri: &Triangle, width: u32, height: u32, out: &mut Vec<Scanline>) {
    out.clear();
    if width == 0 || height == 0 {
        return;
    }
    let area = tri.doubled_signed_area();
    if area == 0 {
        return;
    }
    let sign = area.signum();

    // Doubled coordinates: pixel centers become odd integers.
    let verts = tri.vertices().map(|p| (2 * i64::from(p.x), 2 * i64::from(p.y)));
    let edges = [(verts[0], verts[1]), (verts[1], verts[2]), (verts[2], verts[0])];

    let min_y = verts.iter().map(|v| v.1).min().unwrap_or(0) / 2;
    let max_y = verts.iter().map(|v| v.1).max().unwrap_or(0) / 2;
    // Center 2py+1 must lie in [2*min_y, 2*max_y], i.e. py in [min_y, max_y - 1].
    let row_lo = min_y.max(0);
    let row_hi = (max_y - 1).min(i64::from(height) - 1);

    let last_col = i64::from(width) - 1;
    for py in row_lo..=row_hi {
        let cy = 2 * py + 1;
        let mut lo = 0i64;
        let mut hi = last_col;
        for &((ax, ay), (bx, by)) in &edges {
            // Edge function along this row: c0 + c1 * X, X = 2px + 1.
            let c1 = -(by - ay);
            let c0 = (bx - ax) * (cy - ay) + (by - ay) * ax;
            let (m, k) = (sign * c0, sign * c1);
            if k > 0 {
                lo = lo.max(ceil_div(-m - k, 2 * k));
            } else if k < 0 {
                hi = hi.min(floor_div(m + k, -2 * k));
            } else if m < 0 {
                hi = -1;
            }
            if lo > hi {
                break;
            }
        }
        if lo <= hi {
            out.push(Scanline {
                y: py as u32,
                x_start: lo as u32,
                x_end: hi as u32,
            });
        }
    }
}

/// Tightest box around all pixels of the given runs.
pub fn bounding_box(scanlines: &[Scanline]) -> BoundingBox {
    scanlines.iter().fold(BoundingBox::EMPTY, |b, s| BoundingBox {
        x_min: b.x_min.min(s.x_start as i32),
        y_min: b.y_min.min(s.y as i32),
        x_max: b.x_max.max(s.x_end as i32),
        y_max: b.y_max.max(s.y as i32),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::collections::BTreeSet;

    /// Independent oracle: test every pixel center with floating-point half-plane signs.
    fn brute_force(tri: &Triangle, width: u32, height: u32) -> BTreeSet<(u32, u32)> {
        let [a, b, c] = tri.vertices().map(|p| (p.x as f64, p.y as f64));
        let cross = |o: (f64, f64), p: (f64, f64), q: (f64, f64)| {
            (p.0 - o.0) * (q.1 - o.1) - (p.1 - o.1) * (q.0 - o.0)
        };
        let orient = cross(a, b, c);
        let mut set = BTreeSet::new();
        if orient == 0.0 {
            return set;
        }
        for py in 0..height {
            for px in 0..width {
                let p = (px as f64 + 0.5, py as f64 + 0.5);
                let e = [cross(a, b, p), cross(b, c, p), cross(c, a, p)];
                if e.iter().all(|&v| v * orient.signum() >= 0.0) {
                    set.insert((px, py));
                }
            }
        }
        set
    }

    fn pixel_set(lines: &[Scanline]) -> BTreeSet<(u32, u32)> {
        lines
            .iter()
            .flat_map(|s| (s.x_start..=s.x_end).map(move |x| (x, s.y)))
            .collect()
    }

    fn tri(a: (i32, i32), b: (i32, i32), c: (i32, i32)) -> Triangle {
        Triangle::new(Point::new(a.0, a.1), Point::new(b.0, b.1), Point::new(c.0, c.1))
    }

    #[test]
    fn point_triangle_is_empty() {
        assert!(rasterize_triangle(&tri((0, 0), (0, 0), (0, 0)), 8, 8).is_empty());
    }

    #[test]
    fn collinear_triangle_is_empty() {
        assert!(rasterize_triangle(&tri((0, 0), (2, 2), (4, 4)), 8, 8).is_empty());
    }

    #[test]
    fn right_triangle_matches_oracle() {
        let t = tri((0, 0), (8, 0), (0, 8));
        let lines = rasterize_triangle(&t, 8, 8);
        assert_eq!(pixel_set(&lines), brute_force(&t, 8, 8));
        // Centers on the hypotenuse x + y = 8 count as inside.
        assert_eq!(coverage_area(&lines), 36);
    }

    #[test]
    fn both_windings_agree() {
        let a = tri((1, 1), (20, 5), (7, 18));
        let b = tri((1, 1), (7, 18), (20, 5));
        assert_eq!(rasterize_triangle(&a, 32, 32), rasterize_triangle(&b, 32, 32));
    }

    #[test]
    fn outside_image_is_empty() {
        assert!(rasterize_triangle(&tri((-30, -30), (-10, -30), (-20, -5)), 16, 16).is_empty());
        assert!(rasterize_triangle(&tri((40, 0), (60, 0), (50, 10)), 16, 16).is_empty());
    }

    #[test]
    fn fuzzed_triangles_match_oracle() {
        let mut rng = stream(11);
        for _ in 0..300 {
            let t = random_triangle_with(&mut rng, 24, 24, 20);
            let lines = rasterize_triangle(&t, 24, 24);
            assert_eq!(pixel_set(&lines), brute_force(&t, 24, 24), "{t:?}");
            for w in lines.windows(2) {
                assert!(w[0].y < w[1].y);
            }
        }
    }

    #[test]
    fn bounding_box_examples() {
        assert!(bounding_box(&[]).is_empty());
        assert_eq!(bounding_box(&[]), BoundingBox::EMPTY);
        let one = [Scanline { y: 2, x_start: 1, x_end: 4 }];
        assert_eq!(
            bounding_box(&one),
            BoundingBox { x_min: 1, y_min: 2, x_max: 4, y_max: 2 }
        );
        let two = [
            Scanline { y: 0, x_start: 0, x_end: 0 },
            Scanline { y: 3, x_start: 5, x_end: 7 },
        ];
        assert_eq!(
            bounding_box(&two),
            BoundingBox { x_min: 0, y_min: 0, x_max: 7, y_max: 3 }
        );
    }

    #[test]
    fn random_triangle_is_deterministic() {
        let a = random_triangle(&mut stream(5), 64, 64);
        let b = random_triangle(&mut stream(5), 64, 64);
        assert_eq!(a, b);
    }

    #[test]
    fn random_triangle_on_single_pixel() {
        let mut rng = stream(3);
        for _ in 0..100 {
            let t = random_triangle(&mut rng, 1, 1);
            assert_eq!(t.v0, Point::new(0, 0));
            for v in [t.v1, t.v2] {
                assert!((-15..=15).contains(&v.x) && (-15..=15).contains(&v.y));
            }
        }
    }

    #[test]
    fn first_vertex_is_uniform() {
        // Pearson chi-square over 64 bins, 63 dof. The 0.999 quantile is ~103.4.
        let mut rng = stream(2024);
        let mut bins = [0u32; 64];
        let draws = 10_000;
        for _ in 0..draws {
            bins[random_triangle(&mut rng, 64, 64).v0.x as usize] += 1;
        }
        let expected = draws as f64 / 64.0;
        let chi2: f64 = bins
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 103.4, "chi-square {chi2}");
    }

    #[test]
    fn zero_offset_mutation_is_identity() {
        let t = tri((3, 4), (10, 0), (0, 10));
        for i in 0..3 {
            assert_eq!(move_vertex(t, i, 0, 0, 32, 32, MUTATE_RADIUS), t);
        }
    }

    #[test]
    fn mutation_changes_one_vertex() {
        let t = tri((0, 0), (10, 0), (0, 10));
        let m = mutate_triangle(t, &mut stream(1), 32, 32);
        let changed = t
            .vertices()
            .iter()
            .zip(m.vertices().iter())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 1);
    }

    #[test]
    fn mutation_stays_in_clamp_window() {
        let (w, h) = (20u32, 12u32);
        let mut rng = stream(77);
        let mut t = random_triangle(&mut rng, w, h);
        for _ in 0..10_000 {
            let before = t;
            t = mutate_triangle(t, &mut rng, w, h);
            let changed = before
                .vertices()
                .iter()
                .zip(t.vertices().iter())
                .filter(|(a, b)| a != b)
                .count();
            assert!(changed <= 1);
            // Spawned vertices start inside the window too, so every vertex must stay there.
            for v in t.vertices() {
                assert!((-16..=w as i32 + 15).contains(&v.x), "{v:?}");
                assert!((-16..=h as i32 + 15).contains(&v.y), "{v:?}");
            }
        }
    }
}
