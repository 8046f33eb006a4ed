//! Cross-model feature similarity (tap-by-tap cosine, scaled by 100).

use serde::{Deserialize, Serialize};

use crate::adapters::{pooled_features, LayeredImageMetric, VideoQualityMetric};
use crate::error::{Error, Result};
use crate::media::VideoClip;
use crate::tensor::cosine;

/// Averages `v` into `len` bins with adaptive-pooling boundaries.
pub fn adaptive_avg_pool(v: &[f64], len: usize) -> Vec<f64> {
    let n = v.len();
    (0..len)
        .map(|i| {
            let start = i * n / len;
            let end = ((i + 1) * n).div_ceil(len);
            v[start..end].iter().sum::<f64>() / (end - start) as f64
        })
        .collect()
}

/// Brings two feature vectors to a common length by pooling the longer one.
pub fn align(a: Vec<f64>, b: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Alignment(format!(
            "cannot compare feature vectors of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Greater => (adaptive_avg_pool(&a, b.len()), b),
        std::cmp::Ordering::Less => {
            let n = a.len();
            (a, adaptive_avg_pool(&b, n))
        }
        std::cmp::Ordering::Equal => (a, b),
    })
}

/// An image-metric tap used as a matrix column.
pub struct IqaTap<'m> {
    pub label: String,
    pub metric: &'m dyn LayeredImageMetric,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `values[p][q]`, in `[−100, 100]`.
    pub values: Vec<Vec<f64>>,
}

/// Spatially pooled tap features averaged over the clip's frames.
pub fn iqa_clip_features(metric: &dyn LayeredImageMetric, clip: &VideoClip, layer: usize) -> Result<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    for i in 0..clip.num_frames() {
        let f = pooled_features(metric, clip.frame(i).tensor(), layer)?;
        if acc.is_empty() {
            acc = f;
        } else {
            acc.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
        }
    }
    let n = clip.num_frames() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Entry `(p, q)` is 100 × the mean over videos of the cosine between VQA
/// tap `vqa_taps[p]` and image tap `iqa[q]`.
pub fn feature_correlation_matrix(
    vqa: &dyn VideoQualityMetric,
    vqa_taps: &[usize],
    iqa: &[IqaTap<'_>],
    videos: &[VideoClip],
) -> Result<FeatureMatrix> {
    if videos.is_empty() {
        return Err(Error::Config("feature correlation needs at least one video".into()));
    }
    if vqa_taps.is_empty() || iqa.is_empty() {
        return Err(Error::Config("feature correlation needs at least one tap on each side".into()));
    }
    let mut values = vec![vec![0.0; iqa.len()]; vqa_taps.len()];
    for clip in videos {
        let rows: Vec<Vec<f64>> = vqa_taps
            .iter()
            .map(|&p| vqa.tap_features(clip, p))
            .collect::<Result<_>>()?;
        for (q, col) in iqa.iter().enumerate() {
            let feat = iqa_clip_features(col.metric, clip, col.layer)?;
            for (p, row) in rows.iter().enumerate() {
                let (a, b) = align(row.clone(), feat.clone())?;
                values[p][q] += cosine(&a, &b);
            }
        }
    }
    let scale = 100.0 / videos.len() as f64;
    for row in &mut values {
        for v in row.iter_mut() {
            *v = (*v * scale).clamp(-100.0, 100.0);
        }
    }
    Ok(FeatureMatrix {
        rows: vqa_taps.iter().map(|p| format!("{}:{p}", vqa.name())).collect(),
        columns: iqa.iter().map(|c| c.label.clone()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_pool_bins() {
        assert_eq!(adaptive_avg_pool(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 3.5]);
        assert_eq!(adaptive_avg_pool(&[1.0, 2.0, 3.0], 2), vec![1.5, 2.5]);
        assert_eq!(adaptive_avg_pool(&[1.0, 2.0], 2), vec![1.0, 2.0]);
    }

    #[test]
    fn align_pools_the_longer_vector() {
        let (a, b) = align(vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(a, vec![1.5, 3.5]);
        assert_eq!(b.len(), 2);
        assert!(matches!(align(vec![], vec![1.0]), Err(Error::Alignment(_))));
    }
}
