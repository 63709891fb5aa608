//! HSV on the half-degree hue scale: hue in `[0, 180)`, saturation and value in `[0, 1]`.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(rgb: [f64; 3]) -> Hsv {
    let [r, g, b] = rgb.map(|c| c / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let deg = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    Hsv { h: (deg / 2.0) % 180.0, s, v: max }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let deg = (hsv.h * 2.0).rem_euclid(360.0);
    let c = hsv.v * hsv.s;
    let x = c * (1.0 - ((deg / 60.0) % 2.0 - 1.0).abs());
    let m = hsv.v - c;
    let (r, g, b) = match (deg / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Per-channel `alpha * top + (1 - alpha) * bottom`, rounded.
pub fn blend(top: [u8; 3], bottom: [u8; 3], alpha: f64) -> [u8; 3] {
    let mut out = [0u8; 3];
    for i in 0..3 {
        out[i] = (alpha * top[i] as f64 + (1.0 - alpha) * bottom[i] as f64).round().clamp(0.0, 255.0) as u8;
    }
    out
}
