use image::{Rgb, RgbImage};

/// One curve with a lower/upper band drawn as error bars.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

const W: u32 = 720;
const H: u32 = 460;
const LEFT: i64 = 70;
const RIGHT: i64 = 700;
const TOP: i64 = 30;
const BOTTOM: i64 = 400;
const SCALE: i64 = 2;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// 3×5 glyphs, one row per 3 bits, top row first.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '-' => [0, 0, 7, 0, 0],
        '.' => [0, 0, 0, 0, 2],
        _ => [0; 5],
    }
}

struct Canvas(RgbImage);

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && x < W as i64 && y < H as i64 {
            self.0.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3], thick: i64) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps;
            let y = y0 + (y1 - y0) * s / steps;
            self.rect(x, y, x + thick - 1, y + thick - 1, c);
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: [u8; 3]) {
        for (k, ch) in s.chars().enumerate() {
            let g = glyph(ch);
            let ox = x + k as i64 * 4 * SCALE;
            for (row, bits) in g.iter().enumerate() {
                for col in 0..3 {
                    if bits >> (2 - col) & 1 == 1 {
                        let (px, py) = (ox + col * SCALE, y + row as i64 * SCALE);
                        self.rect(px, py, px + SCALE - 1, py + SCALE - 1, c);
                    }
                }
            }
        }
    }

    fn text_width(s: &str) -> i64 {
        s.chars().count() as i64 * 4 * SCALE - SCALE
    }
}

/// Mean curves with error bars on a log-scaled x axis and a linear y axis
/// over [0, 1], plus a colour-swatch legend.
pub fn render_curves(series: &[CurveSeries], x_label: &str, y_label: &str) -> RgbImage {
    let mut cv = Canvas(RgbImage::from_pixel(W, H, Rgb([255, 255, 255])));
    let xs: Vec<f64> = series.iter().flat_map(|s| s.x.iter().copied()).filter(|v| *v > 0.0).collect();
    let (mut lo, mut hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (1.0, 10.0);
    }
    let (llo, lhi) = (lo.ln() - 0.1, hi.ln().max(lo.ln() + 1e-9) + 0.1);
    let px = |x: f64| LEFT + ((x.ln() - llo) / (lhi - llo) * (RIGHT - LEFT) as f64).round() as i64;
    let py = |y: f64| BOTTOM - (y.clamp(0.0, 1.0) * (BOTTOM - TOP) as f64).round() as i64;

    let grey = [200, 200, 200];
    let black = [0, 0, 0];
    for k in 0..=10 {
        let y = py(k as f64 / 10.0);
        cv.line((LEFT, y), (RIGHT, y), grey, 1);
        if k % 2 == 0 {
            let label = format!("{:.1}", k as f64 / 10.0);
            cv.text(LEFT - 8 - Canvas::text_width(&label), y - 5, &label, black);
        }
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    let mut last_end = i64::MIN;
    for &t in &ticks {
        let x = px(t);
        cv.line((x, BOTTOM), (x, BOTTOM + 5), black, 1);
        let label = format!("{}", t.round() as i64);
        let start = x - Canvas::text_width(&label) / 2;
        if start > last_end + 6 {
            cv.text(start, BOTTOM + 10, &label, black);
            last_end = start + Canvas::text_width(&label);
        }
    }
    cv.line((LEFT, TOP), (LEFT, BOTTOM), black, 2);
    cv.line((LEFT, BOTTOM), (RIGHT, BOTTOM), black, 2);
    cv.text((LEFT + RIGHT) / 2 - Canvas::text_width(x_label) / 2, BOTTOM + 32, x_label, black);
    cv.text(8, TOP - 20, y_label, black);

    for (k, s) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let dx = (k as i64 - series.len() as i64 / 2) * 3;
        let pts: Vec<(i64, i64)> = s.x.iter().zip(&s.mean).filter(|(x, _)| **x > 0.0).map(|(&x, &m)| (px(x) + dx, py(m))).collect();
        for w in pts.windows(2) {
            cv.line(w[0], w[1], c, 2);
        }
        for (i, &(x, y)) in pts.iter().enumerate() {
            if let (Some(&l), Some(&h)) = (s.low.get(i), s.high.get(i)) {
                cv.line((x, py(l)), (x, py(h)), c, 1);
                cv.line((x - 3, py(l)), (x + 3, py(l)), c, 1);
                cv.line((x - 3, py(h)), (x + 3, py(h)), c, 1);
            }
            cv.rect(x - 2, y - 2, x + 2, y + 2, c);
        }
        let ly = TOP + 10 + k as i64 * 18;
        let lx = RIGHT - 200;
        cv.rect(lx, ly, lx + 14, ly + 9, c);
        cv.text(lx + 22, ly, &s.label, black);
    }
    cv.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_series_colours() {
        let s = CurveSeries {
            label: "two-step full".into(),
            x: vec![25.0, 100.0, 1000.0],
            mean: vec![0.5, 0.7, 0.9],
            low: vec![0.4, 0.6, 0.85],
            high: vec![0.6, 0.8, 0.95],
        };
        let img = render_curves(&[s], "NPOS", "F1");
        assert_eq!(img.dimensions(), (W, H));
        assert!(img.pixels().any(|p| p.0 == PALETTE[0]));
    }

    #[test]
    fn empty_input_still_renders() {
        let img = render_curves(&[], "X", "Y");
        assert_eq!(img.dimensions(), (W, H));
    }
}
