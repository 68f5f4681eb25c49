use super::AttentionScheme;
use crate::error::{Error, Result};

/// Which tokens a query may attend to within one attention step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeyPolicy {
    /// Same spatial position across all frames, plus the classification token.
    Temporal,
    /// Same frame, plus the classification token (shared or per-frame copy).
    Spatial,
    /// Every token of the clip.
    Joint,
}

impl KeyPolicy {
    /// The attention steps one block of `scheme` performs, in order.
    pub fn steps(scheme: AttentionScheme) -> &'static [KeyPolicy] {
        match scheme {
            AttentionScheme::SpaceOnly => &[KeyPolicy::Spatial],
            AttentionScheme::JointSpaceTime => &[KeyPolicy::Joint],
            AttentionScheme::DividedSpaceTime => &[KeyPolicy::Temporal, KeyPolicy::Spatial],
        }
    }
}

/// Row layout of a token grid.
///
/// Classification tokens come first (one shared token, or one copy per frame
/// under space-only attention), followed by patch tokens frame-major:
/// patch `p` of frame `t` (both 0-based) sits at row `cls_count + t·N + p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridLayout {
    pub frames: usize,
    pub patches: usize,
    pub per_frame_cls: bool,
}

impl GridLayout {
    pub fn new(frames: usize, patches: usize, scheme: AttentionScheme) -> Self {
        Self {
            frames,
            patches,
            per_frame_cls: scheme == AttentionScheme::SpaceOnly,
        }
    }

    pub fn cls_count(&self) -> usize {
        if self.per_frame_cls {
            self.frames
        } else {
            1
        }
    }

    pub fn tokens(&self) -> usize {
        self.cls_count() + self.frames * self.patches
    }

    /// Row of the classification token seen by frame `t`.
    pub fn cls(&self, t: usize) -> usize {
        if self.per_frame_cls {
            t
        } else {
            0
        }
    }

    pub fn patch(&self, t: usize, p: usize) -> usize {
        self.cls_count() + t * self.patches + p
    }

    pub fn patch_rows(&self) -> Vec<usize> {
        (self.cls_count()..self.tokens()).collect()
    }

    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.cls_count()).collect()
    }
}

/// Per-query key lists in compressed-row form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySets {
    tokens: usize,
    queries: Vec<usize>,
    offsets: Vec<usize>,
    keys: Vec<usize>,
}

impl KeySets {
    /// Build from explicit `(query row, key rows)` pairs.
    pub fn from_lists(tokens: usize, lists: Vec<(usize, Vec<usize>)>) -> Result<Self> {
        let mut queries = Vec::with_capacity(lists.len());
        let mut offsets = vec![0];
        let mut keys = Vec::new();
        for (q, ks) in lists {
            if q >= tokens || ks.is_empty() || ks.iter().any(|&k| k >= tokens) {
                return Err(Error::dim(
                    "key_sets",
                    format!("query {q} with keys {ks:?} over {tokens} tokens"),
                ));
            }
            queries.push(q);
            keys.extend(ks);
            offsets.push(keys.len());
        }
        Ok(Self {
            tokens,
            queries,
            offsets,
            keys,
        })
    }

    /// Key sets of one attention step on a grid with the given layout.
    ///
    /// Under the temporal policy the classification token issues no query;
    /// its row is left to the spatial step.
    pub fn build(layout: GridLayout, policy: KeyPolicy) -> Result<Self> {
        let GridLayout {
            frames, patches, ..
        } = layout;
        let mut lists = Vec::new();
        match policy {
            KeyPolicy::Temporal => {
                if layout.per_frame_cls {
                    return Err(Error::Contract(
                        "temporal attention needs a shared classification token".into(),
                    ));
                }
                for t in 0..frames {
                    for p in 0..patches {
                        let mut ks = vec![layout.cls(t)];
                        ks.extend((0..frames).map(|t2| layout.patch(t2, p)));
                        lists.push((layout.patch(t, p), ks));
                    }
                }
            }
            KeyPolicy::Spatial => {
                if layout.per_frame_cls {
                    for t in 0..frames {
                        let mut ks = vec![layout.cls(t)];
                        ks.extend((0..patches).map(|p| layout.patch(t, p)));
                        lists.push((layout.cls(t), ks));
                    }
                } else {
                    lists.push((0, (0..layout.tokens()).collect()));
                }
                for t in 0..frames {
                    let mut ks = vec![layout.cls(t)];
                    ks.extend((0..patches).map(|p| layout.patch(t, p)));
                    for p in 0..patches {
                        lists.push((layout.patch(t, p), ks.clone()));
                    }
                }
            }
            KeyPolicy::Joint => {
                if layout.per_frame_cls {
                    return Err(Error::Contract(
                        "joint attention needs a shared classification token".into(),
                    ));
                }
                let all: Vec<usize> = (0..layout.tokens()).collect();
                for q in 0..layout.tokens() {
                    lists.push((q, all.clone()));
                }
            }
        }
        Self::from_lists(layout.tokens(), lists)
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Query rows, in output order.
    pub fn queries(&self) -> &[usize] {
        &self.queries
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// Keys of the `i`-th query (not the query row).
    pub fn keys_of(&self, i: usize) -> &[usize] {
        &self.keys[self.offsets[i]..self.offsets[i + 1]]
    }

    pub(crate) fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Total number of (query, key) pairs.
    pub fn pairs(&self) -> usize {
        self.keys.len()
    }

    /// Dense `queries × tokens` boolean mask: `true` where attention is allowed.
    pub fn dense_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.queries.len() * self.tokens];
        for i in 0..self.queries.len() {
            for &k in self.keys_of(i) {
                mask[i * self.tokens + k] = true;
            }
        }
        mask
    }
}
