use crate::geometry::BoundingBox;

/// Half-width of the window around the peak excluded from the sidelobe.
pub const PSR_EXCLUSION: usize = 5;
pub const PSR_EPSILON: f64 = 1e-6;
/// Raw ratios are squashed by `s / (s + PSR_SQUASH)`.
pub const PSR_SQUASH: f64 = 5.0;

/// Symmetric Hann window of length `n`; entries `i` and `n - 1 - i` are bit-identical.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let v = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
        w[i] = v;
        w[n - 1 - i] = v;
    }
    w
}

/// Row-major `n x n` outer product of [`hann`] with itself.
pub fn cosine_window(n: usize) -> Vec<f64> {
    let h = hann(n);
    h.iter()
        .flat_map(|a| h.iter().map(move |b| a * b))
        .collect()
}

/// The padded scale `sqrt((w + p)(h + p))`, `p = (w + h) / 2`.
pub fn padded_scale(w: f64, h: f64) -> f64 {
    let p = (w + h) / 2.0;
    ((w + p) * (h + p)).sqrt()
}

fn change(r: f64) -> f64 {
    r.max(1.0 / r)
}

/// Multiplicative down-weight for a candidate whose aspect ratio or scale
/// differs from the previous box; 1 when both match.
pub fn shape_penalty(candidate: &BoundingBox, prev: &BoundingBox, k: f64) -> f64 {
    let r = change((candidate.w / candidate.h) / (prev.w / prev.h));
    let s = change(padded_scale(candidate.w, candidate.h) / padded_scale(prev.w, prev.h));
    (-k * (r * s - 1.0)).exp()
}

/// Squashed peak-to-sidelobe ratio of an `n x n` row-major map, in `[0, 1)`.
/// The sidelobe excludes an 11x11 window around the first maximum; an empty
/// or constant map gives 0.
pub fn peak_to_sidelobe(map: &[f64], n: usize) -> f64 {
    assert_eq!(map.len(), n * n, "score map must be {n}x{n}");
    let (peak_idx, peak) =
        map.iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
    let (pr, pc) = (peak_idx / n, peak_idx % n);
    let side: Vec<f64> = (0..n * n)
        .filter(|&i| (i / n).abs_diff(pr) > PSR_EXCLUSION || (i % n).abs_diff(pc) > PSR_EXCLUSION)
        .map(|i| map[i])
        .collect();
    if side.is_empty() {
        return 0.0;
    }
    let mean = side.iter().sum::<f64>() / side.len() as f64;
    let var = side.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / side.len() as f64;
    let raw = (peak - mean) / (var.sqrt() + PSR_EPSILON);
    if raw <= 0.0 {
        return 0.0;
    }
    raw / (raw + PSR_SQUASH)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_is_symmetric_with_central_maximum() {
        for n in [1, 2, 7, 8, 12] {
            let h = hann(n);
            for i in 0..n {
                assert_eq!(h[i], h[n - 1 - i]);
            }
            let top = h.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(h[(n - 1) / 2], top);
        }
    }

    #[test]
    fn identical_shape_has_no_penalty() {
        let b = BoundingBox::new(10.0, 10.0, 6.0, 4.0).unwrap();
        let moved = BoundingBox::new(30.0, 2.0, 6.0, 4.0).unwrap();
        assert_eq!(shape_penalty(&moved, &b, 0.04), 1.0);
        let wide = BoundingBox::new(10.0, 10.0, 12.0, 4.0).unwrap();
        assert!(shape_penalty(&wide, &b, 0.04) < 1.0);
    }

    #[test]
    fn psr_cases() {
        let n = 32;
        let mut spike = vec![0.0; n * n];
        spike[10 * n + 12] = 1.0;
        let single = peak_to_sidelobe(&spike, n);
        assert!(single > 0.7);
        assert_eq!(peak_to_sidelobe(&vec![0.3; n * n], n), 0.0);
        let mut two = spike.clone();
        two[28 * n + 29] = 1.0;
        assert!(peak_to_sidelobe(&two, n) < single);
        assert_eq!(peak_to_sidelobe(&spike[..64], 8), 0.0);
    }
}
