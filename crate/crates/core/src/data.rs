use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Images `(N, H, W, C)` with pixels in `[0, 1]` and integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.shape().len() != 4 {
            return Err(Error::InvalidDataset(format!(
                "images must be (N, H, W, C), got {:?}",
                images.shape()
            )));
        }
        if images.batch() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::InvalidDataset(format!("class count {classes} < 2")));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let (lo, hi) = (T::zero(), T::one());
        if images.data().iter().any(|&v| !(v >= lo && v <= hi)) {
            return Err(Error::InvalidDataset("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    /// `(H, W, C)`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> &[T] {
        self.images.row(i)
    }

    /// Batched images and labels for the given indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let rows: Vec<&[T]> = indices.iter().map(|&i| self.image(i)).collect();
        let images = Tensor::stack(self.image_shape(), &rows).expect("rows share the image shape");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (images, labels) = self.batch(indices);
        Ok(Self {
            images,
            labels,
            classes: self.classes,
        })
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.image_shape() != other.image_shape() || self.classes != other.classes {
            return Err(Error::InvalidDataset(
                "datasets differ in image shape or class count".into(),
            ));
        }
        let mut data = self.images.data().to_vec();
        data.extend_from_slice(other.images.data());
        let mut shape = self.images.shape().to_vec();
        shape[0] += other.len();
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            images: Tensor::new(shape, data)?,
            labels,
            classes: self.classes,
        })
    }

    /// Number of inputs per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            classes: self.classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset<f32> {
        let images = Tensor::from_fn(vec![3, 1, 2, 1], |i| i as f32 / 6.0);
        Dataset::new(images, vec![0, 1, 1], 2).unwrap()
    }

    #[test]
    fn validation() {
        let images = Tensor::<f32>::zeros(vec![2, 1, 1, 1]);
        assert!(matches!(
            Dataset::new(images.clone(), vec![0, 2], 2),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
        assert!(Dataset::new(images.clone(), vec![0], 2).is_err());
        let bright = Tensor::<f32>::filled(vec![1, 1, 1, 1], 1.5);
        assert!(Dataset::new(bright, vec![0], 2).is_err());
    }

    #[test]
    fn subset_and_concat() {
        let d = tiny();
        let s = d.subset(&[2, 0]).unwrap();
        assert_eq!(s.labels(), &[1, 0]);
        assert_eq!(s.image(0), d.image(2));
        let c = d.concat(&s).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.image(3), d.image(2));
        assert_eq!(c.class_counts(), vec![2, 3]);
    }
}
