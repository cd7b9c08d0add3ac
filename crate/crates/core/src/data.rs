//! In-memory keypoint datasets.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::heatmap::KeypointSet;
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub image: Image,
    pub keypoints: KeypointSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    split: Split,
}

impl Dataset {
    /// All images must share one size and every sample the same joint count.
    pub fn new(samples: Vec<Sample>, split: Split) -> Result<Self> {
        if let Some(first) = samples.first() {
            let (h, w) = (first.image.height(), first.image.width());
            let j = first.keypoints.joints.len();
            for s in &samples {
                ensure!(
                    (s.image.height(), s.image.width()) == (h, w),
                    Validation,
                    "sample {} is {}x{}, dataset is {h}x{w}",
                    s.id,
                    s.image.height(),
                    s.image.width()
                );
                ensure!(
                    s.keypoints.joints.len() == j,
                    Validation,
                    "sample {} has {} joints, dataset has {j}",
                    s.id,
                    s.keypoints.joints.len()
                );
            }
        }
        Ok(Self { samples, split })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(height, width)` of the images, if any.
    pub fn image_hw(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.image.height(), s.image.width()))
    }

    pub fn joints(&self) -> Option<usize> {
        self.samples.first().map(|s| s.keypoints.joints.len())
    }

    /// First `n` samples as a new dataset.
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            samples: self.samples.iter().take(n).cloned().collect(),
            split: self.split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::Keypoint;

    fn sample(id: u64, h: usize, j: usize) -> Sample {
        Sample {
            id,
            image: Image::filled(3, h, 8, 0.0),
            keypoints: KeypointSet {
                joints: vec![Keypoint::visible(1.0, 1.0); j],
                head_size: 2.0,
                bbox: [0.0, 0.0, 4.0, 4.0],
            },
        }
    }

    #[test]
    fn rejects_mixed_sizes_and_joint_counts() {
        assert!(Dataset::new(vec![sample(0, 8, 5), sample(1, 8, 5)], Split::Train).is_ok());
        assert!(Dataset::new(vec![sample(0, 8, 5), sample(1, 12, 5)], Split::Train).is_err());
        assert!(Dataset::new(vec![sample(0, 8, 5), sample(1, 8, 4)], Split::Val).is_err());
    }
}
