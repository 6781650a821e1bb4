use image::{Rgb, RgbImage};

use latticefind::io::to_gray8;
use latticefind::{Image, Site};

const CIRCLE: Rgb<u8> = Rgb([0, 200, 0]);
const CROSS: Rgb<u8> = Rgb([230, 0, 0]);

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn circle(img: &mut RgbImage, s: Site, r: f64) {
    let (cx, cy) = (s.n as i64 - 1, s.m as i64 - 1);
    let k = r.ceil() as i64 + 1;
    for dy in -k..=k {
        for dx in -k..=k {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if (d - r).abs() < 0.5 {
                put(img, cx + dx, cy + dy, CIRCLE);
            }
        }
    }
}

fn cross(img: &mut RgbImage, s: Site, r: i64) {
    let (cx, cy) = (s.n as i64 - 1, s.m as i64 - 1);
    for d in -r..=r {
        put(img, cx + d, cy + d, CROSS);
        put(img, cx + d, cy - d, CROSS);
    }
}

/// Input image in gray with circles on detections and crosses on false positives.
pub fn render(y: &Image, detected: &[Site], false_positives: &[Site], radius: f64) -> RgbImage {
    let gray = to_gray8(y);
    let mut img = RgbImage::from_fn(gray.width(), gray.height(), |x, z| {
        let v = gray.get_pixel(x, z).0[0];
        Rgb([v, v, v])
    });
    for &s in detected {
        if false_positives.contains(&s) {
            cross(&mut img, s, radius.round() as i64);
        } else {
            circle(&mut img, s, radius);
        }
    }
    img
}
