//! Dynamic time warping between source and target feature sequences.

use crate::error::{Error, Result};

/// Per-frame feature vectors with their frame start indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Vec<Vec<f64>>,
    pub timing: Vec<usize>,
    pub voiced: Vec<bool>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Vec<f64>>, timing: Vec<usize>, voiced: Vec<bool>) -> Result<Self> {
        if frames.len() != timing.len() || frames.len() != voiced.len() {
            return Err(Error::Shape("frames, timing and voicing lengths differ".into()));
        }
        if let Some(d) = frames.first().map(|f| f.len()) {
            if frames.iter().any(|f| f.len() != d) {
                return Err(Error::Shape("feature vectors differ in dimension".into()));
            }
        }
        if timing.windows(2).any(|t| t[1] <= t[0]) {
            return Err(Error::Ordering("frame timings must increase".into()));
        }
        Ok(Self {
            frames,
            timing,
            voiced,
        })
    }

    /// All frames voiced, timing = index.
    pub fn from_vectors(frames: Vec<Vec<f64>>) -> Result<Self> {
        let n = frames.len();
        Self::new(frames, (0..n).collect(), vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwConfig {
    /// Added to the local distance when a voiced frame meets an unvoiced one.
    pub voicing_penalty: f64,
    /// Optional Sakoe-Chiba radius around the rescaled diagonal.
    pub band: Option<usize>,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            voicing_penalty: 1.0,
            band: None,
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Local cost between source frame `i` and target frame `j`.
pub fn local_cost(src: &FeatureSequence, tgt: &FeatureSequence, i: usize, j: usize, cfg: &DtwConfig) -> f64 {
    let d = euclidean(&src.frames[i], &tgt.frames[j]);
    if src.voiced[i] != tgt.voiced[j] {
        d + cfg.voicing_penalty
    } else {
        d
    }
}

/// DTW with the default configuration.
pub fn dtw_align(src: &FeatureSequence, tgt: &FeatureSequence) -> Result<WarpPath> {
    dtw_align_with(src, tgt, &DtwConfig::default())
}

/// Minimum-cost monotone path from `(0,0)` to `(N-1,M-1)` with steps
/// `(1,0)`, `(0,1)`, `(1,1)`.
///
/// Costs accumulate along the path in order. On ties the diagonal
/// predecessor wins, then `(i-1, j)`, then `(i, j-1)`.
pub fn dtw_align_with(src: &FeatureSequence, tgt: &FeatureSequence, cfg: &DtwConfig) -> Result<WarpPath> {
    let (n, m) = (src.len(), tgt.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput("DTW needs nonempty sequences".into()));
    }
    if src.dim() != tgt.dim() {
        return Err(Error::Shape(format!(
            "source dimension {} vs target dimension {}",
            src.dim(),
            tgt.dim()
        )));
    }
    let inside = |i: usize, j: usize| match cfg.band {
        None => true,
        Some(r) => {
            let diag = if n > 1 {
                i as f64 * (m - 1) as f64 / (n - 1) as f64
            } else {
                0.0
            };
            (j as f64 - diag).abs() <= r as f64 + 0.5
        }
    };
    let idx = |i: usize, j: usize| i * m + j;
    let mut acc = vec![f64::INFINITY; n * m];
    // 0 = diagonal, 1 = from (i-1, j), 2 = from (i, j-1)
    let mut step = vec![0u8; n * m];
    for i in 0..n {
        for j in 0..m {
            if !inside(i, j) && !(i == 0 && j == 0) && !(i == n - 1 && j == m - 1) {
                continue;
            }
            let d = local_cost(src, tgt, i, j, cfg);
            if i == 0 && j == 0 {
                acc[0] = 0.0 + d;
                continue;
            }
            let mut best = f64::INFINITY;
            let mut from = 0u8;
            if i > 0 && j > 0 && acc[idx(i - 1, j - 1)] < best {
                best = acc[idx(i - 1, j - 1)];
                from = 0;
            }
            if i > 0 && acc[idx(i - 1, j)] < best {
                best = acc[idx(i - 1, j)];
                from = 1;
            }
            if j > 0 && acc[idx(i, j - 1)] < best {
                best = acc[idx(i, j - 1)];
                from = 2;
            }
            acc[idx(i, j)] = best + d;
            step[idx(i, j)] = from;
        }
    }
    let total_cost = acc[idx(n - 1, m - 1)];
    if !total_cost.is_finite() {
        return Err(Error::Config("DTW band too narrow to connect the endpoints".into()));
    }
    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        match step[idx(i, j)] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(WarpPath { pairs, total_cost })
}

/// Stacked `[x; y]` vectors, one per path pair.
pub fn paired_vectors(src: &FeatureSequence, tgt: &FeatureSequence, path: &WarpPath) -> Vec<Vec<f64>> {
    path.pairs
        .iter()
        .map(|&(i, j)| {
            let mut z = src.frames[i].clone();
            z.extend_from_slice(&tgt.frames[j]);
            z
        })
        .collect()
}
