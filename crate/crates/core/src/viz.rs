//! Side-by-side match drawings.

use crate::error::Result;
use crate::geometry::Point;
use crate::image_core::{to_grayscale, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VizMode {
    /// Every brute-force match; outliers dashed.
    Pre,
    /// Inliers only.
    Post,
}

pub type Rgb = [f32; 3];

const INLIER: Rgb = [0.1, 0.9, 0.2];
const OUTLIER: Rgb = [0.95, 0.2, 0.15];
const KEYPOINT: Rgb = [1.0, 0.85, 0.1];

/// A match to draw: endpoints in their own image frames.
#[derive(Debug, Clone, Copy)]
pub struct DrawnMatch {
    pub a: Point,
    pub b: Point,
    pub scale_a: f64,
    pub scale_b: f64,
    pub inlier: bool,
}

/// RGB canvas of width `wa + wb` with `a` on the left and `b` on the right.
pub fn side_by_side(a: &Image, b: &Image) -> Result<Image> {
    let (ga, gb) = (to_grayscale(a)?, to_grayscale(b)?);
    let w = ga.width() + gb.width();
    let h = ga.height().max(gb.height());
    let mut data = vec![0f32; w * h * 3];
    for (img, x0) in [(&ga, 0), (&gb, ga.width())] {
        for y in 0..img.height() {
            for x in 0..img.width() {
                let v = img.get(x, y);
                let i = (y * w + x0 + x) * 3;
                data[i..i + 3].copy_from_slice(&[v, v, v]);
            }
        }
    }
    Image::from_vec(w, h, 3, data)
}

fn put(canvas: &mut Image, x: i64, y: i64, c: Rgb) {
    if x < 0 || y < 0 || x as usize >= canvas.width() || y as usize >= canvas.height() {
        return;
    }
    let w = canvas.width();
    let i = (y as usize * w + x as usize) * 3;
    canvas.data_mut()[i..i + 3].copy_from_slice(&c);
}

/// Bresenham line; `dash` > 0 leaves gaps of that many pixels.
pub fn draw_line(canvas: &mut Image, p: Point, q: Point, c: Rgb, dash: usize) {
    let (mut x, mut y) = (p[0].round() as i64, p[1].round() as i64);
    let (x1, y1) = (q[0].round() as i64, q[1].round() as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut step = 0usize;
    loop {
        if dash == 0 || (step / dash) % 2 == 0 {
            put(canvas, x, y, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
        step += 1;
    }
}

pub fn draw_circle(canvas: &mut Image, center: Point, radius: f64, c: Rgb) {
    let r = radius.max(1.0);
    let n = ((2.0 * std::f64::consts::PI * r).ceil() as usize).max(8);
    for k in 0..n {
        let t = k as f64 / n as f64 * 2.0 * std::f64::consts::PI;
        put(
            canvas,
            (center[0] + r * t.cos()).round() as i64,
            (center[1] + r * t.sin()).round() as i64,
            c,
        );
    }
}

/// Draws keypoint circles and match lines onto a fresh side-by-side canvas.
pub fn render_matches(a: &Image, b: &Image, matches: &[DrawnMatch], mode: VizMode) -> Result<Image> {
    let mut canvas = side_by_side(a, b)?;
    let offset = a.width() as f64;
    for m in matches.iter().filter(|m| mode == VizMode::Pre || m.inlier) {
        let q = [m.b[0] + offset, m.b[1]];
        draw_circle(&mut canvas, m.a, m.scale_a, KEYPOINT);
        draw_circle(&mut canvas, q, m.scale_b, KEYPOINT);
        if m.inlier {
            draw_line(&mut canvas, m.a, q, INLIER, 0);
        } else {
            draw_line(&mut canvas, m.a, q, OUTLIER, 4);
        }
    }
    Ok(canvas)
}
