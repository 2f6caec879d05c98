//! Point clouds, batches, and per-layer feature batches.

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub type Point = [f64; 3];

/// `N` points with an optional object class and optional per-point part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    class_label: Option<usize>,
    point_labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(
        points: Vec<Point>,
        class_label: Option<usize>,
        point_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid(
                "point cloud must contain at least one point",
            ));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!(
                "non-finite coordinate at point {i}"
            )));
        }
        if let Some(labels) = &point_labels {
            if labels.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} part labels for {} points",
                    labels.len(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            class_label,
            point_labels,
        })
    }

    pub fn unlabeled(points: Vec<Point>) -> Result<Self> {
        Self::new(points, None, None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn class_label(&self) -> Option<usize> {
        self.class_label
    }

    pub fn point_labels(&self) -> Option<&[usize]> {
        self.point_labels.as_deref()
    }

    pub fn with_class_label(mut self, label: Option<usize>) -> Self {
        self.class_label = label;
        self
    }

    /// Replace coordinates, keeping labels. The new set must have the same size.
    pub fn with_points(&self, points: Vec<Point>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::invalid("replacement point set changes N"));
        }
        Self::new(points, self.class_label, self.point_labels.clone())
    }

    /// Keep the points at `indices` (in the given order) with their labels.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let labels = self
            .point_labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(points, self.class_label, labels)
    }

    /// Coordinates as an N x 3 matrix.
    pub fn to_mat(&self) -> Mat {
        let data = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        Mat::from_vec(self.points.len(), 3, data).expect("shape is consistent")
    }

    pub fn from_mat(
        m: &Mat,
        class_label: Option<usize>,
        point_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if m.cols() != 3 {
            return Err(Error::invalid("coordinate matrix must have 3 columns"));
        }
        let points = (0..m.rows())
            .map(|i| {
                let r = m.row(i);
                [r[0], r[1], r[2]]
            })
            .collect();
        Self::new(points, class_label, point_labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Train,
    Test,
}

/// `B` clouds sharing the same point count.
#[derive(Debug, Clone)]
pub struct Batch {
    clouds: Vec<PointCloud>,
    purpose: Purpose,
}

impl Batch {
    pub fn new(clouds: Vec<PointCloud>, purpose: Purpose) -> Result<Self> {
        let Some(first) = clouds.first() else {
            return Err(Error::invalid("batch must contain at least one cloud"));
        };
        let n = first.len();
        if let Some(bad) = clouds.iter().position(|c| c.len() != n) {
            return Err(Error::invalid(format!(
                "cloud {bad} has {} points, expected {n}",
                clouds[bad].len()
            )));
        }
        Ok(Self { clouds, purpose })
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.clouds[0].len()
    }
}

/// Per-point hidden representations of a batch at layer `layer_id` (B x N x d).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    values: Vec<Mat>,
    layer_id: usize,
}

impl FeatureBatch {
    pub fn new(values: Vec<Mat>, layer_id: usize) -> Result<Self> {
        if let Some(first) = values.first() {
            let (n, d) = (first.rows(), first.cols());
            if d == 0 {
                return Err(Error::invalid("feature dimension must be at least 1"));
            }
            for (b, v) in values.iter().enumerate() {
                if (v.rows(), v.cols()) != (n, d) {
                    return Err(Error::invalid(format!(
                        "feature block {b} is {}x{}, expected {n}x{d}",
                        v.rows(),
                        v.cols()
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::invalid(format!("non-finite features in block {b}")));
                }
            }
        }
        Ok(Self { values, layer_id })
    }

    /// Raw input coordinates as layer-0 features.
    pub fn from_batch(batch: &Batch) -> Self {
        Self {
            values: batch.clouds().iter().map(PointCloud::to_mat).collect(),
            layer_id: 0,
        }
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Mat> {
        self.values
    }

    pub fn layer_id(&self) -> usize {
        self.layer_id
    }

    pub fn batch_size(&self) -> usize {
        self.values.len()
    }

    pub fn num_points(&self) -> usize {
        self.values.first().map_or(0, Mat::rows)
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Mat::cols)
    }
}
