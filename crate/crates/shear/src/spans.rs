//! Sliding-window span enumeration and span-to-point-cloud extraction.
//!
//! A rollout of `T` tokens is cut into windows `[a_k, b_k]` with
//! `a_k = 1 + (k-1)s` and `b_k = min(a_k + w - 1, T)`; enumeration stops at
//! the first window that reaches `T`, so every token is covered and no
//! degenerate trailing windows are produced. The final window may be shorter
//! than `w` when `T` is not aligned with the stride pattern.

use crate::error::{Result, ShearError};
use crate::model::{HiddenStateMatrix, Span, SpanConfig};
use crate::transport::PointCloud;

/// Enumerate the spans of a `T`-token rollout.
pub fn decompose(tokens: usize, cfg: &SpanConfig) -> Vec<Span> {
    debug_assert!(tokens >= 1);
    let mut spans = Vec::new();
    let mut k = 0usize;
    loop {
        let a = 1 + k * cfg.stride;
        let b = (a + cfg.window - 1).min(tokens);
        spans.push(Span { a, b });
        if b == tokens {
            return spans;
        }
        k += 1;
    }
}

/// For each token `t` in `1..=T`, the 0-based indices of the spans that
/// cover it. Index `t-1` of the result holds token `t`'s cover.
pub fn token_cover(tokens: usize, cfg: &SpanConfig) -> Vec<Vec<usize>> {
    let spans = decompose(tokens, cfg);
    let mut cover = vec![Vec::new(); tokens];
    for (k, s) in spans.iter().enumerate() {
        for entry in cover.iter_mut().take(s.b).skip(s.a - 1) {
            entry.push(k);
        }
    }
    cover
}

/// Drop spans that overlap the trailing region starting at 1-based token
/// `excluded_from` (e.g. a final-answer region). With `None` this is
/// exactly [`decompose`]. Note the remaining spans may no longer cover
/// every token; this is a diagnostic filter, not part of the weighting path.
pub fn decompose_excluding(
    tokens: usize,
    cfg: &SpanConfig,
    excluded_from: Option<usize>,
) -> Vec<Span> {
    let spans = decompose(tokens, cfg);
    match excluded_from {
        None => spans,
        Some(cut) => spans.into_iter().filter(|s| s.b < cut).collect(),
    }
}

/// Extract the uniform point cloud over the hidden states of a span,
/// widening to `f64`.
pub fn span_cloud(hidden: &HiddenStateMatrix, span: &Span) -> Result<PointCloud> {
    if span.a < 1 || span.b > hidden.tokens() || span.a > span.b {
        return Err(ShearError::Bounds(format!(
            "span [{}, {}] out of range for rollout of {} tokens",
            span.a,
            span.b,
            hidden.tokens()
        )));
    }
    let n = span.len();
    let d = hidden.dim();
    let mut points = Vec::with_capacity(n * d);
    for t in span.a..=span.b {
        points.extend(hidden.row(t).iter().map(|&v| v as f64));
    }
    PointCloud::from_flat(points, n, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(w: usize, s: usize) -> SpanConfig {
        SpanConfig::new(w, s).unwrap()
    }

    #[test]
    fn decompose_follows_the_window_formula() {
        let spans = decompose(10, &cfg(4, 3));
        let expect: Vec<(usize, usize)> = vec![(1, 4), (4, 7), (7, 10)];
        assert_eq!(
            spans.iter().map(|s| (s.a, s.b)).collect::<Vec<_>>(),
            expect
        );
    }

    #[test]
    fn short_rollout_yields_single_span() {
        assert_eq!(decompose(5, &cfg(100, 25)), vec![Span { a: 1, b: 5 }]);
        assert_eq!(decompose(100, &cfg(100, 25)), vec![Span { a: 1, b: 100 }]);
        assert_eq!(decompose(1, &cfg(4, 2)), vec![Span { a: 1, b: 1 }]);
    }

    #[test]
    fn coverage_overlap_and_monotonicity_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t = rng.gen_range(1..=200);
            let w = rng.gen_range(1..=40);
            let s = rng.gen_range(1..=w);
            let c = cfg(w, s);
            let spans = decompose(t, &c);
            // strictly increasing starts and ends
            for pair in spans.windows(2) {
                assert!(pair[0].a < pair[1].a && pair[0].b < pair[1].b);
            }
            // full coverage, bounded overlap
            let cover = token_cover(t, &c);
            let max_overlap = w.div_ceil(s);
            for (i, covering) in cover.iter().enumerate() {
                assert!(!covering.is_empty(), "token {} uncovered", i + 1);
                assert!(covering.len() <= max_overlap);
                for &k in covering {
                    assert!(spans[k].contains(i + 1));
                }
            }
            // span lengths within [1, w]
            for s in &spans {
                assert!(s.len() >= 1 && s.len() <= w);
            }
        }
    }

    #[test]
    fn token_cover_matches_worked_example() {
        let cover = token_cover(10, &cfg(4, 3));
        assert_eq!(cover[4 - 1], vec![0, 1]); // token 4 sits in spans 1 and 2
        assert_eq!(cover[1 - 1], vec![0]);
        assert_eq!(cover[10 - 1], vec![2]);
    }

    #[test]
    fn token_cover_single_span_case() {
        let cover = token_cover(7, &cfg(50, 10));
        assert!(cover.iter().all(|c| c == &vec![0]));
    }

    #[test]
    fn exclusion_filter_drops_tail_spans() {
        let c = cfg(4, 3);
        assert_eq!(decompose_excluding(10, &c, None), decompose(10, &c));
        let kept = decompose_excluding(10, &c, Some(7));
        assert_eq!(kept, vec![Span { a: 1, b: 4 }]);
    }

    #[test]
    fn span_cloud_extracts_rows() {
        let m = HiddenStateMatrix::new((0..12).map(|v| v as f32).collect(), 4, 3).unwrap();
        let one = span_cloud(&m, &Span { a: 1, b: 1 }).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.point(0).to_vec(), vec![0.0, 1.0, 2.0]);
        let all = span_cloud(&m, &Span { a: 1, b: 4 }).unwrap();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn span_cloud_mean_matches_row_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t = rng.gen_range(1..=12);
            let d = rng.gen_range(1..=5);
            let vals: Vec<f32> = (0..t * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let m = HiddenStateMatrix::new(vals, t, d).unwrap();
            let a = rng.gen_range(1..=t);
            let b = rng.gen_range(a..=t);
            let cloud = span_cloud(&m, &Span { a, b }).unwrap();
            let mean = cloud.mean();
            for j in 0..d {
                let direct: f64 =
                    (a..=b).map(|t| m.row(t)[j] as f64).sum::<f64>() / (b - a + 1) as f64;
                assert!((mean[j] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_span_is_bounds_error() {
        let m = HiddenStateMatrix::new(vec![0.0; 6], 2, 3).unwrap();
        assert!(span_cloud(&m, &Span { a: 1, b: 3 }).is_err());
    }
}
