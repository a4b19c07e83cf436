//! Procedural map-like imagery for the synthetic benchmark.
//!
//! The generator layers smooth multi-octave value noise (terrain), rotated
//! rectangles (fields and buildings), straight roads and small dark blobs
//! (trees), then applies a light anti-aliasing blur and 8-bit quantization.

use crate::image_core::{gaussian_blur, Image};
use crate::rng::XorShift64Star;

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(size: usize, cell: usize, rng: &mut XorShift64Star) -> Vec<f32> {
    let n = size / cell + 2;
    let lattice: Vec<f32> = (0..n * n).map(|_| rng.next_f64() as f32).collect();
    let mut out = vec![0f32; size * size];
    for y in 0..size {
        let (gy, fy) = (y / cell, smoothstep((y % cell) as f32 / cell as f32));
        for x in 0..size {
            let (gx, fx) = (x / cell, smoothstep((x % cell) as f32 / cell as f32));
            let at = |i: usize, j: usize| lattice[j * n + i];
            let top = at(gx, gy) + (at(gx + 1, gy) - at(gx, gy)) * fx;
            let bottom = at(gx, gy + 1) + (at(gx + 1, gy + 1) - at(gx, gy + 1)) * fx;
            out[y * size + x] = top + (bottom - top) * fy;
        }
    }
    out
}

fn fill_rotated_rect(data: &mut [f32], size: usize, rect: (f64, f64, f64, f64, f64), value: f32) {
    let (cx, cy, hw, hh, angle) = rect;
    let (s, c) = angle.sin_cos();
    let reach = (hw * hw + hh * hh).sqrt().ceil() as isize;
    let (x0, y0) = (cx as isize - reach, cy as isize - reach);
    for y in y0.max(0)..(y0 + 2 * reach + 1).min(size as isize) {
        for x in x0.max(0)..(x0 + 2 * reach + 1).min(size as isize) {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
            if u.abs() <= hw && v.abs() <= hh {
                data[y as usize * size + x as usize] = value;
            }
        }
    }
}

fn draw_road(data: &mut [f32], size: usize, from: (f64, f64), to: (f64, f64), half_width: f64, value: f32) {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let len2 = dx * dx + dy * dy;
    let (xmin, xmax) = (from.0.min(to.0) - half_width, from.0.max(to.0) + half_width);
    let (ymin, ymax) = (from.1.min(to.1) - half_width, from.1.max(to.1) + half_width);
    for y in (ymin.floor().max(0.0) as usize)..(ymax.ceil().min(size as f64 - 1.0) as usize + 1) {
        for x in (xmin.floor().max(0.0) as usize)..(xmax.ceil().min(size as f64 - 1.0) as usize + 1) {
            let (px, py) = (x as f64 - from.0, y as f64 - from.1);
            let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
            let (ex, ey) = (px - t * dx, py - t * dy);
            if ex * ex + ey * ey <= half_width * half_width {
                data[y * size + x] = value;
            }
        }
    }
}

/// Square grayscale texture of side `size`, deterministic in `seed`, with
/// values already quantized to 8 bits.
pub fn synthetic_base(size: usize, seed: u64) -> Image {
    assert!(size >= 16, "texture side must be at least 16");
    let mut rng = XorShift64Star::new(seed);
    let mut data = vec![0.35f32; size * size];

    let mut amplitude = 0.3f32;
    let mut cell = 64usize;
    while cell >= 4 {
        let layer = value_noise(size, cell, &mut rng);
        for (d, l) in data.iter_mut().zip(&layer) {
            *d += amplitude * (l - 0.5);
        }
        amplitude *= 0.6;
        cell /= 2;
    }

    let area = (size * size) as f64 / (1024.0 * 1024.0);
    let n_fields = (220.0 * area).ceil() as usize;
    for _ in 0..n_fields {
        let rect = (
            rng.uniform(0.0, size as f64),
            rng.uniform(0.0, size as f64),
            rng.uniform(6.0, 40.0),
            rng.uniform(4.0, 28.0),
            rng.uniform(0.0, std::f64::consts::PI),
        );
        let value = rng.uniform(0.1, 0.9) as f32;
        fill_rotated_rect(&mut data, size, rect, value);
    }
    let n_buildings = (900.0 * area).ceil() as usize;
    for _ in 0..n_buildings {
        let rect = (
            rng.uniform(0.0, size as f64),
            rng.uniform(0.0, size as f64),
            rng.uniform(1.5, 6.0),
            rng.uniform(1.5, 6.0),
            rng.uniform(0.0, std::f64::consts::PI),
        );
        let value = if rng.next_f64() < 0.5 {
            rng.uniform(0.7, 1.0)
        } else {
            rng.uniform(0.0, 0.25)
        } as f32;
        fill_rotated_rect(&mut data, size, rect, value);
    }
    let n_roads = (30.0 * area).ceil() as usize;
    for _ in 0..n_roads {
        let from = (rng.uniform(0.0, size as f64), rng.uniform(0.0, size as f64));
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let len = rng.uniform(0.2, 0.8) * size as f64;
        let to = (from.0 + len * angle.cos(), from.1 + len * angle.sin());
        let value = rng.uniform(0.6, 0.85) as f32;
        draw_road(&mut data, size, from, to, rng.uniform(1.0, 3.0), value);
    }
    let n_trees = (2500.0 * area).ceil() as usize;
    for _ in 0..n_trees {
        let (cx, cy) = (rng.uniform(0.0, size as f64), rng.uniform(0.0, size as f64));
        let r = rng.uniform(1.0, 3.5);
        let depth = rng.uniform(0.1, 0.3) as f32;
        let reach = (2.0 * r).ceil() as isize;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (cx as isize + dx, cy as isize + dy);
                if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
                    continue;
                }
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let fall = (-d2 / (2.0 * r * r)).exp() as f32;
                data[y as usize * size + x as usize] -= depth * fall;
            }
        }
    }

    let img = Image::from_vec(size, size, 1, data).expect("square buffer");
    gaussian_blur(&img, 0.7).expect("positive sigma").quantized()
}
