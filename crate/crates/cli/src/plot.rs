//! Minimal line plot: actual RUL in black, prediction in red, on a light
//! grid with the unit interval as the y range.

use std::path::Path;

use gmfe::Result;
use image::{Rgb, RgbImage};

const W: u32 = 640;
const H: u32 = 360;
const MARGIN: u32 = 30;

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
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
    }
}

pub fn rul_curve(xs: &[f64], actual: &[f64], predicted: &[f64], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let (left, right) = (MARGIN as f64, (W - MARGIN) as f64);
    let (top, bottom) = (MARGIN as f64, (H - MARGIN) as f64);
    let x_min = xs.first().copied().unwrap_or(0.0);
    let x_span = (xs.last().copied().unwrap_or(1.0) - x_min).max(1.0);
    let px = |x: f64| (left + (x - x_min) / x_span * (right - left)).round() as i64;
    let py = |y: f64| (bottom - y.clamp(0.0, 1.0) * (bottom - top)).round() as i64;

    let grid = Rgb([225, 225, 225]);
    for k in 0..=4 {
        let y = py(k as f64 / 4.0);
        line(&mut img, (px(x_min), y), (px(x_min + x_span), y), grid);
    }
    let axis = Rgb([120, 120, 120]);
    line(&mut img, (px(x_min), py(0.0)), (px(x_min + x_span), py(0.0)), axis);
    line(&mut img, (px(x_min), py(0.0)), (px(x_min), py(1.0)), axis);

    for (series, color) in [(actual, Rgb([0, 0, 0])), (predicted, Rgb([200, 30, 30]))] {
        for (i, w) in series.windows(2).enumerate() {
            line(&mut img, (px(xs[i]), py(w[0])), (px(xs[i + 1]), py(w[1])), color);
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
