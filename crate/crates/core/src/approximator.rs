//! Greedy triangle approximation of a target image.
//!
//! The canvas starts as the target's mean color. Each round proposes a batch
//! of random triangles, keeps the best one (each scored with its
//! least-squares fill color), refines it by hill climbing on its vertices and
//! commits it only if the canvas RMSE strictly drops.
//!
//! The sum of squared errors is tracked as an exact integer, so incremental
//! scores and from-scratch recomputation agree bit for bit.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{mutate_triangle, random_triangle, rasterize_into, Scanline, Triangle};
use crate::raster::{Color, Raster};
use crate::rng::{derive_seed, stream, SeedStream};

pub use crate::raster::RasterError;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ApproxError {
    #[error("raster dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("shape covers no pixels")]
    EmptyCoverage,
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// One committed triangle and its fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacedShape {
    pub triangle: Triangle,
    pub color: Color,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApproxConfig {
    /// Number of triangles to place.
    pub shape_count: usize,
    /// Random proposals per round.
    pub candidates: usize,
    /// Vertex mutations tried on the best proposal.
    pub climb_steps: usize,
    /// Consecutive rejected mutations before the climb stops.
    pub max_stall: usize,
    /// Blend weight of every triangle, out of 255.
    pub alpha: u8,
    pub seed: u64,
    /// Extra hill climbs allowed when a round fails to improve.
    pub max_retries: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            shape_count: 50,
            candidates: 200,
            climb_steps: 100,
            max_stall: 30,
            alpha: 128,
            seed: 0,
            max_retries: 3,
        }
    }
}

impl ApproxConfig {
    pub fn validate(&self) -> Result<(), ApproxError> {
        if self.candidates == 0 {
            return Err(ApproxError::InvalidConfig("candidates must be at least 1"));
        }
        if self.max_stall == 0 {
            return Err(ApproxError::InvalidConfig("max_stall must be at least 1"));
        }
        if self.alpha == 0 {
            return Err(ApproxError::InvalidConfig("alpha must be in 1..=255"));
        }
        Ok(())
    }
}

/// Evolving approximation of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxState {
    pub target: Raster,
    pub canvas: Raster,
    pub shapes: Vec<PlacedShape>,
    /// RMSE between `target` and `canvas`.
    pub score: f64,
    /// Score after each accepted shape.
    pub trace: Vec<f64>,
    sse: u64,
}

impl ApproxState {
    /// Flat canvas of the target's mean color, no shapes yet.
    pub fn new(target: Raster) -> Self {
        let bg = average_color(&target);
        let canvas = Raster::filled(target.width(), target.height(), bg.rgb())
            .expect("target dimensions are non-zero");
        let sse = sum_squared_error(&target, &canvas);
        ApproxState {
            score: rmse_from_sse(sse, &target),
            target,
            canvas,
            shapes: Vec::new(),
            trace: Vec::new(),
            sse,
        }
    }

    /// Exact integer sum of squared channel errors.
    pub fn sse(&self) -> u64 {
        self.sse
    }

    pub fn background(&self) -> Color {
        average_color(&self.target)
    }

    /// Blend `shape` onto the canvas and record it.
    pub fn commit(&mut self, shape: PlacedShape) {
        let mut lines = Vec::new();
        let (w, h) = self.target.dimensions();
        rasterize_into(&shape.triangle, w, h, &mut lines);
        self.sse = sse_with_shape(self, &lines, shape.color);
        draw_shape_in_place(&mut self.canvas, &lines, shape.color);
        self.score = rmse_from_sse(self.sse, &self.target);
        self.shapes.push(shape);
        self.trace.push(self.score);
    }

    /// CSV with header `shape_index,score`, one row per accepted shape.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("shape_index,score\n");
        for (i, s) in self.trace.iter().enumerate() {
            let _ = writeln!(out, "{i},{s}");
        }
        out
    }

    pub fn to_svg(&self) -> String {
        export_svg(&self.shapes, self.target.width(), self.target.height(), self.background())
    }
}

/// Per-channel mean, rounded half up; alpha is opaque.
pub fn average_color(img: &Raster) -> Color {
    let n = img.pixel_count() as u64;
    let mut sums = [0u64; 3];
    for px in img.as_bytes().chunks_exact(3) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += u64::from(v);
        }
    }
    let mean = |s: u64| ((2 * s + n) / (2 * n)) as u8;
    Color::new(mean(sums[0]), mean(sums[1]), mean(sums[2]), 255)
}

fn check_dims(a: &Raster, b: &Raster) -> Result<(), ApproxError> {
    if a.dimensions() != b.dimensions() {
        return Err(ApproxError::DimensionMismatch(a.dimensions(), b.dimensions()));
    }
    Ok(())
}

fn sum_squared_error(target: &Raster, canvas: &Raster) -> u64 {
    target
        .as_bytes()
        .iter()
        .zip(canvas.as_bytes())
        .map(|(&t, &c)| {
            let d = i64::from(t) - i64::from(c);
            (d * d) as u64
        })
        .sum()
}

fn rmse_from_sse(sse: u64, img: &Raster) -> f64 {
    (sse as f64 / (3 * img.pixel_count()) as f64).sqrt()
}

/// Root-mean-square error over all pixels and the three channels.
pub fn score_rmse(target: &Raster, canvas: &Raster) -> Result<f64, ApproxError> {
    check_dims(target, canvas)?;
    Ok(rmse_from_sse(sum_squared_error(target, canvas), target))
}

/// `round((src * alpha + dst * (255 - alpha)) / 255)`; exact in integers
/// because the quotient can never land on a half.
#[inline]
pub fn blend_channel(src: u8, dst: u8, alpha: u8) -> u8 {
    let a = u32::from(alpha);
    ((u32::from(src) * a + u32::from(dst) * (255 - a) + 127) / 255) as u8
}

/// Least-squares fill color for blending over `canvas` at `alpha` on the
/// covered pixels: per channel the mean of `(t - c * (1 - a)) / a`, rounded
/// and clamped to `[0, 255]`.
pub fn compute_optimal_color(
    target: &Raster,
    canvas: &Raster,
    coverage: &[Scanline],
    alpha: u8,
) -> Result<Color, ApproxError> {
    check_dims(target, canvas)?;
    if alpha == 0 {
        return Err(ApproxError::InvalidConfig("alpha must be in 1..=255"));
    }
    let mut sum_t = [0u64; 3];
    let mut sum_c = [0u64; 3];
    let mut n = 0u64;
    let (t, c) = (target.as_bytes(), canvas.as_bytes());
    for line in coverage {
        let start = target.offset(line.x_start, line.y);
        let end = target.offset(line.x_end, line.y) + 3;
        for (tp, cp) in t[start..end].chunks_exact(3).zip(c[start..end].chunks_exact(3)) {
            for k in 0..3 {
                sum_t[k] += u64::from(tp[k]);
                sum_c[k] += u64::from(cp[k]);
            }
        }
        n += line.len() as u64;
    }
    if n == 0 {
        return Err(ApproxError::EmptyCoverage);
    }
    let a = f64::from(alpha) / 255.0;
    let solve = |k: usize| {
        let v = (sum_t[k] as f64 - sum_c[k] as f64 * (1.0 - a)) / (a * n as f64);
        v.round().clamp(0.0, 255.0) as u8
    };
    Ok(Color::new(solve(0), solve(1), solve(2), alpha))
}

pub fn draw_shape_in_place(canvas: &mut Raster, coverage: &[Scanline], color: Color) {
    let rgb = color.rgb();
    for line in coverage {
        let start = canvas.offset(line.x_start, line.y);
        let end = canvas.offset(line.x_end, line.y) + 3;
        for px in canvas.data_mut()[start..end].chunks_exact_mut(3) {
            for k in 0..3 {
                px[k] = blend_channel(rgb[k], px[k], color.a);
            }
        }
    }
}

/// Blend `color` over the covered pixels of a copy of `canvas`.
pub fn draw_shape(canvas: &Raster, coverage: &[Scanline], color: Color) -> Raster {
    let mut out = canvas.clone();
    draw_shape_in_place(&mut out, coverage, color);
    out
}

fn sse_with_shape(state: &ApproxState, coverage: &[Scanline], color: Color) -> u64 {
    let rgb = color.rgb();
    let (t, c) = (state.target.as_bytes(), state.canvas.as_bytes());
    let mut delta: i64 = 0;
    for line in coverage {
        let start = state.target.offset(line.x_start, line.y);
        let end = state.target.offset(line.x_end, line.y) + 3;
        for (tp, cp) in t[start..end].chunks_exact(3).zip(c[start..end].chunks_exact(3)) {
            for k in 0..3 {
                let tv = i64::from(tp[k]);
                let old = tv - i64::from(cp[k]);
                let new = tv - i64::from(blend_channel(rgb[k], cp[k], color.a));
                delta += new * new - old * old;
            }
        }
    }
    (state.sse as i64 + delta) as u64
}

/// RMSE the canvas would have after drawing `color` over `coverage`,
/// computed by adjusting the running error over the covered pixels only.
pub fn score_with_shape(state: &ApproxState, coverage: &[Scanline], color: Color) -> f64 {
    rmse_from_sse(sse_with_shape(state, coverage, color), &state.target)
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    shape: PlacedShape,
    sse: u64,
}

fn evaluate(state: &ApproxState, tri: Triangle, alpha: u8, buf: &mut Vec<Scanline>) -> Scored {
    let (w, h) = state.target.dimensions();
    rasterize_into(&tri, w, h, buf);
    match compute_optimal_color(&state.target, &state.canvas, buf, alpha) {
        Ok(color) => Scored {
            shape: PlacedShape { triangle: tri, color },
            sse: sse_with_shape(state, buf, color),
        },
        // Nothing covered: drawing it leaves the canvas as is.
        Err(_) => Scored {
            shape: PlacedShape { triangle: tri, color: Color::new(0, 0, 0, alpha) },
            sse: state.sse,
        },
    }
}

/// Best-of-N random proposals followed by strict-improvement hill climbing.
///
/// Proposal `i` draws from its own stream seeded by `(round seed, i)`, where
/// the round seed is the next value of `rng`; the outcome does not depend on
/// the size of the rayon pool running it.
pub fn hill_climb<R: Rng + ?Sized>(
    state: &ApproxState,
    config: &ApproxConfig,
    rng: &mut R,
) -> (PlacedShape, f64) {
    let (w, h) = state.target.dimensions();
    let round_seed: u64 = rng.random();
    let proposals: Vec<Scored> = (0..config.candidates.max(1))
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut r: SeedStream = stream(derive_seed(round_seed, i as u64));
            evaluate(state, random_triangle(&mut r, w, h), config.alpha, buf)
        })
        .collect();
    // First minimum wins ties.
    let mut best = proposals
        .iter()
        .copied()
        .reduce(|a, b| if b.sse < a.sse { b } else { a })
        .expect("at least one proposal");

    let mut buf = Vec::new();
    let mut stall = 0;
    for _ in 0..config.climb_steps {
        let tri = mutate_triangle(best.shape.triangle, rng, w, h);
        let cand = evaluate(state, tri, config.alpha, &mut buf);
        if cand.sse < best.sse {
            best = cand;
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.max_stall {
                break;
            }
        }
    }
    (best.shape, rmse_from_sse(best.sse, &state.target))
}

/// Run the full approximation of `target` under `config`.
pub fn approximate(target: &Raster, config: &ApproxConfig) -> Result<ApproxState, ApproxError> {
    approximate_with_progress(target, config, |_| {})
}

/// Like [`approximate`], calling `on_accept` after every committed shape.
pub fn approximate_with_progress(
    target: &Raster,
    config: &ApproxConfig,
    mut on_accept: impl FnMut(&ApproxState),
) -> Result<ApproxState, ApproxError> {
    config.validate()?;
    let mut state = ApproxState::new(target.clone());
    let mut rng = stream(config.seed);
    'rounds: for _ in 0..config.shape_count {
        let mut attempts = 0;
        loop {
            let (shape, score) = hill_climb(&state, config, &mut rng);
            if score < state.score {
                state.commit(shape);
                on_accept(&state);
                break;
            }
            attempts += 1;
            if attempts > config.max_retries {
                break 'rounds;
            }
        }
    }
    Ok(state)
}

fn svg_rgb(c: Color) -> String {
    format!("rgb({},{},{})", c.r, c.g, c.b)
}

/// SVG document: background rectangle, then one polygon per shape in order.
pub fn export_svg(shapes: &[PlacedShape], width: u32, height: u32, background: Color) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="{}"/>"#,
        svg_rgb(background)
    );
    for s in shapes {
        let t = s.triangle;
        let _ = writeln!(
            out,
            r#"<polygon points="{},{} {},{} {},{}" fill="{}" fill-opacity="{:.6}"/>"#,
            t.v0.x,
            t.v0.y,
            t.v1.x,
            t.v1.y,
            t.v2.x,
            t.v2.y,
            svg_rgb(s.color),
            f64::from(s.color.a) / 255.0
        );
    }
    out.push_str("</svg>\n");
    out
}
