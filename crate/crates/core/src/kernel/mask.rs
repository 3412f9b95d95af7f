//! Chunk-wise attention masks for streaming encoders.

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Visibility rule for self-attention over a frame sequence.
///
/// Frames are grouped into fixed-size chunks. A frame may attend to every
/// frame of its own chunk (including frames later than itself, which is what
/// buys the chunk its latency) plus `left_context` frames before the chunk
/// start. `chunk_frames: None` means offline full attention and
/// `left_context: None` means unlimited history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    chunk_frames: Option<usize>,
    left_context: Option<usize>,
}

impl MaskSpec {
    pub fn unbounded() -> Self {
        MaskSpec { chunk_frames: None, left_context: None }
    }

    /// Panics when `chunk_frames` is zero.
    pub fn chunked(chunk_frames: usize, left_context: Option<usize>) -> Self {
        assert!(chunk_frames > 0, "chunk size must be positive");
        MaskSpec { chunk_frames: Some(chunk_frames), left_context }
    }

    pub fn chunk_frames(&self) -> Option<usize> {
        self.chunk_frames
    }

    pub fn left_context(&self) -> Option<usize> {
        self.left_context
    }

    /// Half-open range of key frames visible from query frame `t` in a
    /// sequence of `total` frames. The query frame is always inside its own
    /// window.
    pub fn window(&self, t: usize, total: usize) -> Range<usize> {
        debug_assert!(t < total);
        let (chunk_start, chunk_end) = match self.chunk_frames {
            None => (0, total),
            Some(c) => {
                let start = (t / c) * c;
                (start, (start + c).min(total))
            }
        };
        let lo = match self.left_context {
            None => 0,
            Some(l) => chunk_start.saturating_sub(l),
        };
        lo..chunk_end
    }

    pub fn is_visible(&self, t: usize, s: usize, total: usize) -> bool {
        self.window(t, total).contains(&s)
    }

    /// Index one past the last frame visible from `t`; every later frame is
    /// guaranteed to leave activations at `t` untouched.
    pub fn horizon(&self, t: usize, total: usize) -> usize {
        self.window(t, total).end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_inside_own_window() {
        for spec in [
            MaskSpec::unbounded(),
            MaskSpec::chunked(1, None),
            MaskSpec::chunked(4, Some(0)),
            MaskSpec::chunked(16, Some(8)),
        ] {
            for t in 0..40 {
                assert!(spec.window(t, 40).contains(&t), "t={t} spec={spec:?}");
            }
        }
    }

    #[test]
    fn chunked_window_shape() {
        let spec = MaskSpec::chunked(4, Some(4));
        assert_eq!(spec.window(0, 16), 0..4);
        assert_eq!(spec.window(3, 16), 0..4);
        assert_eq!(spec.window(4, 16), 0..8);
        assert_eq!(spec.window(7, 16), 0..8);
        assert_eq!(spec.window(9, 16), 4..12);
        assert_eq!(spec.window(15, 16), 8..16);
    }

    #[test]
    fn zero_left_context_sees_only_own_chunk() {
        let spec = MaskSpec::chunked(4, Some(0));
        assert_eq!(spec.window(9, 16), 8..12);
    }

    #[test]
    fn unbounded_equals_full_attention() {
        let spec = MaskSpec::unbounded();
        for t in 0..12 {
            assert_eq!(spec.window(t, 12), 0..12);
        }
    }

    #[test]
    fn chunk_of_one_is_pure_causal_plus_self() {
        let spec = MaskSpec::chunked(1, None);
        for t in 0..8 {
            assert_eq!(spec.window(t, 8), 0..t + 1);
        }
    }

    #[test]
    fn partial_last_chunk_is_clamped() {
        let spec = MaskSpec::chunked(4, Some(0));
        assert_eq!(spec.window(13, 14), 12..14);
    }
}
