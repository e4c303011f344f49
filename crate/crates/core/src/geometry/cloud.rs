use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `M` points in model space with optional class and per-point part labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<[T; 3]>,
    pub class_label: Option<usize>,
    pub part_labels: Option<Vec<usize>>,
    pub id: String,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<[T; 3]>) -> Result<Self> {
        let cloud = Self { points, class_label: None, part_labels: None, id: String::new() };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_class(mut self, class: usize) -> Self {
        self.class_label = Some(class);
        self
    }

    pub fn with_parts(mut self, parts: Vec<usize>) -> Result<Self> {
        if parts.len() != self.points.len() {
            return Err(Error::Data(format!("{} part labels for {} points", parts.len(), self.points.len())));
        }
        self.part_labels = Some(parts);
        Ok(self)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Data("point cloud is empty".into()));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("cloud '{}' has non-finite coordinates", self.id)));
        }
        if let Some(parts) = &self.part_labels {
            if parts.len() != self.points.len() {
                return Err(Error::Data(format!("cloud '{}': part label count mismatch", self.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [T; 3] {
        let n = T::of_usize(self.points.len());
        let mut c = [T::zero(); 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / n)
    }

    /// Points `indices` in the given order, labels carried along.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            class_label: self.class_label,
            part_labels: self.part_labels.as_ref().map(|p| indices.iter().map(|&i| p[i]).collect()),
            id: self.id.clone(),
        }
    }

    /// `M×3` coordinate matrix.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.points.len(), 3], self.points.iter().flatten().copied().collect())
            .expect("non-empty cloud")
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud {
            points: self.points.iter().map(|p| p.map(|v| U::of(v.as_f64()))).collect(),
            class_label: self.class_label,
            part_labels: self.part_labels.clone(),
            id: self.id.clone(),
        }
    }

    /// Centers on the centroid and scales so the farthest point has norm 1.
    pub fn normalize_unit_sphere(&self) -> Result<Self> {
        let c = self.centroid();
        let mut points: Vec<[T; 3]> =
            self.points.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
        let radius = points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(T::zero(), T::max);
        if !(radius > T::zero()) {
            return Err(Error::DegenerateCloud);
        }
        for p in &mut points {
            for v in p.iter_mut() {
                *v /= radius;
            }
        }
        Ok(Self { points, ..self.clone() })
    }
}
