//! Procedural training images: a color gradient with soft ellipses and
//! pen-like strokes on top.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Image;

fn color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn blend(px: &mut [f32], c: &[f32; 3], alpha: f32) {
    for (p, v) in px.iter_mut().zip(c) {
        *p += alpha * (v - *p);
    }
}

/// Coverage from a signed distance (negative inside), about 1.5 px soft.
fn coverage(d: f32) -> f32 {
    let t = (0.5 - d / 1.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

pub fn render(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let s = size as f32;
    let (c0, c1) = (color(rng), color(rng));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (ux, uy) = (angle.cos(), angle.sin());
    let mut img = Image::filled(size, size, 3, 0.0);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = ((x as f32 + 0.5) / s - 0.5, (y as f32 + 0.5) / s - 0.5);
            let t = ((px * ux + py * uy) / std::f32::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            let i = (y * size + x) * 3;
            for c in 0..3 {
                img.data[i + c] = c0[c] + t * (c1[c] - c0[c]);
            }
        }
    }

    for _ in 0..rng.random_range(1..=4) {
        let col = color(rng);
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let (rx, ry) = (rng.random_range(0.08..0.35) * s, rng.random_range(0.08..0.35) * s);
        let rot: f32 = rng.random_range(0.0..std::f32::consts::PI);
        let (cr, sr) = (rot.cos(), rot.sin());
        let alpha: f32 = rng.random_range(0.5..1.0);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let (u, v) = ((dx * cr + dy * sr) / rx, (-dx * sr + dy * cr) / ry);
                // radial distance scaled back to pixels
                let d = ((u * u + v * v).sqrt() - 1.0) * rx.min(ry);
                let a = alpha * coverage(d);
                if a > 0.0 {
                    let i = (y * size + x) * 3;
                    blend(&mut img.data[i..i + 3], &col, a);
                }
            }
        }
    }

    for _ in 0..rng.random_range(1..=3) {
        let col = color(rng);
        let width: f32 = rng.random_range(0.01..0.04) * s + 0.5;
        let mut p = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        for _ in 0..rng.random_range(2..=4) {
            let q = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            for y in 0..size {
                for x in 0..size {
                    let d = segment_distance((x as f32 + 0.5, y as f32 + 0.5), p, q) - width;
                    let a = coverage(d);
                    if a > 0.0 {
                        let i = (y * size + x) * 3;
                        blend(&mut img.data[i..i + 3], &col, a);
                    }
                }
            }
            p = q;
        }
    }
    for v in &mut img.data {
        *v = v.clamp(0.0, 1.0);
    }
    img
}
