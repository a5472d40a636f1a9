//! Feature-space splicing of the root/knee/foot dimensions.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::features::{pos_cols, rot_cols, vel_cols, FEATURE_DIM, ROOT_DIM, ROOT_OFFSET};

/// Which of the 259 feature dimensions belong to the root and the
/// knee/foot joints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMask {
    editable: Vec<bool>,
}

impl FeatureMask {
    pub fn new(knee_feet: &[usize]) -> Result<Self> {
        let mut editable = vec![false; FEATURE_DIM];
        editable[ROOT_OFFSET..ROOT_OFFSET + ROOT_DIM].fill(true);
        for &j in knee_feet {
            if j == 0 || j >= crate::motion::NUM_JOINTS {
                return Err(Error::config("knee_feet", format!("joint {j} must lie in 1..22")));
            }
            for r in [vel_cols(j), pos_cols(j), rot_cols(j)] {
                editable[r].fill(true);
            }
        }
        Ok(FeatureMask { editable })
    }

    pub fn is_editable(&self, dim: usize) -> bool {
        self.editable[dim]
    }

    pub fn editable_dims(&self) -> impl Iterator<Item = usize> + '_ {
        (0..FEATURE_DIM).filter(|&d| self.editable[d])
    }

    pub fn count(&self) -> usize {
        self.editable.iter().filter(|&&e| e).count()
    }

    pub fn as_f64(&self) -> Array1<f64> {
        self.editable.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect()
    }

    /// Root and knee/foot dims from `source`, everything else from `keep`.
    pub fn merge(&self, source: ArrayView2<f64>, keep: ArrayView2<f64>) -> Result<Array2<f64>> {
        if source.dim() != keep.dim() || source.ncols() != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "cannot merge {:?} into {:?}",
                source.dim(),
                keep.dim()
            )));
        }
        let mut out = keep.to_owned();
        self.merge_into(source, &mut out);
        Ok(out)
    }

    /// In-place variant of [`merge`](Self::merge): overwrite the editable dims of `keep`.
    pub fn merge_into(&self, source: ArrayView2<f64>, keep: &mut Array2<f64>) {
        for (mut row, src) in keep.axis_iter_mut(Axis(0)).zip(source.axis_iter(Axis(0))) {
            for d in 0..FEATURE_DIM {
                if self.editable[d] {
                    row[d] = src[d];
                }
            }
        }
    }
}

/// Per-dimension affine normalization fitted on a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Dimensions whose spread falls below this are left unscaled around their mean.
const MIN_STD: f64 = 1e-4;

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer {
            mean: vec![0.0; FEATURE_DIM],
            std: vec![1.0; FEATURE_DIM],
        }
    }

    pub fn fit<'a>(frames: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<Self> {
        let mut sum = vec![0.0; FEATURE_DIM];
        let mut sq = vec![0.0; FEATURE_DIM];
        let mut n = 0usize;
        for f in frames {
            if f.ncols() != FEATURE_DIM {
                return Err(Error::Shape(format!("expected {FEATURE_DIM} features, got {}", f.ncols())));
            }
            for row in f.rows() {
                for (d, v) in row.iter().enumerate() {
                    sum[d] += v;
                    sq[d] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyInput("cannot fit normalization on an empty corpus".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / nf - m * m).max(0.0).sqrt().max(MIN_STD))
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != FEATURE_DIM || self.std.len() != FEATURE_DIM {
            return Err(Error::Shape("normalizer must cover 259 dims".into()));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("normalizer", "non-finite or non-positive statistics"));
        }
        Ok(())
    }

    pub fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[d]) / self.std[d];
            }
        }
        out
    }

    pub fn denormalize(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let mut out = z.to_owned();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[d] + self.mean[d];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::skeleton::Skeleton;

    #[test]
    fn merge_idempotent_and_partitioned() {
        let mask = FeatureMask::new(&Skeleton::smpl().knee_feet).unwrap();
        let x = Array2::from_shape_fn((3, FEATURE_DIM), |(t, d)| (t * 1000 + d) as f64);
        assert_eq!(mask.merge(x.view(), x.view()).unwrap(), x);

        let zeros = Array2::zeros((3, FEATURE_DIM));
        let ones = Array2::ones((3, FEATURE_DIM));
        let m = mask.merge(zeros.view(), ones.view()).unwrap();
        let zeroed = m.row(0).iter().filter(|v| **v == 0.0).count();
        // root 4 + six joints with velocity, position and rotation blocks
        assert_eq!(zeroed, 4 + 6 * (3 + 3 + 6));
        assert_eq!(mask.count(), zeroed);
        assert!(m.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn merge_shape_errors() {
        let mask = FeatureMask::new(&[4]).unwrap();
        let a = Array2::zeros((3, FEATURE_DIM));
        let b = Array2::zeros((4, FEATURE_DIM));
        assert!(mask.merge(a.view(), b.view()).is_err());
        assert!(FeatureMask::new(&[0]).is_err());
    }

    #[test]
    fn normalizer_round_trip() {
        let x = Array2::from_shape_fn((5, FEATURE_DIM), |(t, d)| (t as f64 * 0.3 + d as f64).sin());
        let n = Normalizer::fit([x.view()]).unwrap();
        let back = n.denormalize(n.normalize(x.view()).view());
        assert!((&back - &x).iter().all(|d| d.abs() < 1e-12));
    }
}
