//! Area-average (images) and nearest-neighbour (labels) resampling.

/// Area-average resampling of a single `h×w` plane. Pixels where `valid`
/// returns false do not contribute; an output pixel with no valid coverage
/// gets `fallback`.
pub fn area_resize_plane(
    src: &[f64],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    valid: impl Fn(f64) -> bool,
    fallback: f64,
) -> Vec<f64> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let ys = spans(h, oh);
    let xs = spans(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for ycov in &ys {
        for xcov in &xs {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for &(sy, wy) in ycov {
                for &(sx, wx) in xcov {
                    let v = src[sy * w + sx];
                    if valid(v) {
                        acc += v * wy * wx;
                        wsum += wy * wx;
                    }
                }
            }
            out.push(if wsum > 0.0 { acc / wsum } else { fallback });
        }
    }
    out
}

// For each output cell, the source cells it overlaps and the overlap length.
fn spans(n: usize, on: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / on as f64;
    (0..on)
        .map(|o| {
            let a = o as f64 * scale;
            let b = (o + 1) as f64 * scale;
            let mut v = Vec::new();
            let mut s = a.floor() as usize;
            while (s as f64) < b && s < n {
                let lo = a.max(s as f64);
                let hi = b.min((s + 1) as f64);
                if hi > lo {
                    v.push((s, hi - lo));
                }
                s += 1;
            }
            v
        })
        .collect()
}

/// Nearest-neighbour resampling of any per-pixel value.
pub fn nearest_resize<T: Copy>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        // sample at the output pixel centre
        let sy = (((y as f64 + 0.5) * h as f64 / oh as f64) as usize).min(h - 1);
        for x in 0..ow {
            let sx = (((x as f64 + 0.5) * w as f64 / ow as f64) as usize).min(w - 1);
            out.push(src[sy * w + sx]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_averages_blocks() {
        let src = [1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0];
        let out = area_resize_plane(&src, 2, 4, 1, 2, |_| true, 0.0);
        assert_eq!(out, vec![2.0, 6.0]);
    }

    #[test]
    fn invalid_pixels_are_skipped() {
        let src = [0.0, 4.0, 0.0, 0.0];
        let out = area_resize_plane(&src, 2, 2, 1, 1, |v| v > 0.0, 0.0);
        assert_eq!(out, vec![4.0]);
        let none = area_resize_plane(&[0.0; 4], 2, 2, 1, 1, |v| v > 0.0, 0.0);
        assert_eq!(none, vec![0.0]);
    }

    #[test]
    fn non_integer_ratio_preserves_constant() {
        let src = vec![0.25; 7 * 5];
        let out = area_resize_plane(&src, 7, 5, 3, 4, |_| true, 0.0);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn nearest_only_returns_source_values() {
        let src = [0u8, 85, 255, 0];
        let out = nearest_resize(&src, 2, 2, 5, 3);
        assert!(out.iter().all(|v| src.contains(v)));
        assert_eq!(nearest_resize(&src, 2, 2, 2, 2), src.to_vec());
    }
}
