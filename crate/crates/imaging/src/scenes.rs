//! Deterministic synthetic clean scenes for toy datasets and tests.

use crate::buffer::ImageBuffer;
use crate::rng::Stream;

enum Shape {
    Disk { cy: f32, cx: f32, r: f32 },
    Rect { y0: f32, x0: f32, y1: f32, x1: f32 },
}

/// Smooth colour gradient with a gentle ripple and a handful of flat shapes.
pub fn procedural_scene(h: usize, w: usize, seed: u64) -> ImageBuffer {
    let mut rng = Stream::new(seed);
    let mut draw = |lo: f32, hi: f32| lo + (hi - lo) * rng.next_f64() as f32;
    let top: [f32; 3] = [draw(0.1, 0.6), draw(0.1, 0.6), draw(0.1, 0.6)];
    let bottom: [f32; 3] = [draw(0.1, 0.6), draw(0.1, 0.6), draw(0.1, 0.6)];
    let (fy, fx, phase) = (draw(1.0, 4.0), draw(1.0, 4.0), draw(0.0, std::f32::consts::TAU));
    let (hf, wf) = (h as f32, w as f32);
    let shapes: Vec<(Shape, [f32; 3])> = (0..6)
        .map(|i| {
            let colour = [draw(0.0, 0.8), draw(0.0, 0.8), draw(0.0, 0.8)];
            let (cy, cx) = (draw(0.0, hf), draw(0.0, wf));
            let size = draw(0.05, 0.25) * hf.min(wf);
            let shape = if i % 2 == 0 {
                Shape::Disk { cy, cx, r: size }
            } else {
                Shape::Rect { y0: cy - size, x0: cx - size * 0.7, y1: cy + size * 0.6, x1: cx + size }
            };
            (shape, colour)
        })
        .collect();
    ImageBuffer::from_fn(h, w, 3, |y, x, c| {
        let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
        let t = yf / hf;
        let ripple = 0.05 * (fy * std::f32::consts::TAU * t + fx * std::f32::consts::TAU * xf / wf + phase).sin();
        let mut v = top[c] * (1.0 - t) + bottom[c] * t + ripple;
        for (shape, colour) in &shapes {
            let inside = match *shape {
                Shape::Disk { cy, cx, r } => (yf - cy).powi(2) + (xf - cx).powi(2) <= r * r,
                Shape::Rect { y0, x0, y1, x1 } => (y0..y1).contains(&yf) && (x0..x1).contains(&xf),
            };
            if inside {
                v = colour[c];
            }
        }
        v.clamp(0.0, 1.0)
    })
}
