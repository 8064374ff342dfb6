//! Dense row-major `f32` tensors and channel-last feature maps.

use crate::error::{Error, Result};

/// Dense row-major tensor of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let len = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterprets the same data under a new shape with equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::Shape(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn relu(&self) -> Tensor {
        relu(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor shape must be non-empty".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Shape(format!("dimension {pos} of {shape:?} is zero")));
    }
    Ok(())
}

/// Elementwise `max(0, x)`.
pub fn relu(t: &Tensor) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

/// A rank-3 tensor laid out as height x width x channels, channel index last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![height, width, channels], data).map(Self)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Tensor::zeros(vec![height, width, channels]).map(Self)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::Shape(format!(
                "feature map must be rank 3 (H, W, C), got shape {:?}",
                t.shape()
            )));
        }
        Ok(Self(t))
    }

    pub fn height(&self) -> usize {
        self.0.shape[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape[1]
    }

    pub fn channels(&self) -> usize {
        self.0.shape[2]
    }

    pub fn get(&self, h: usize, w: usize, c: usize) -> f32 {
        self.0.data[(h * self.width() + w) * self.channels() + c]
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// The `H x W` plane of channel `j`.
    pub fn channel_slice(&self, j: usize) -> Result<Tensor> {
        let c = self.channels();
        if j >= c {
            return Err(Error::Index { index: j, len: c });
        }
        let plane = self.0.data.iter().skip(j).step_by(c).copied().collect();
        Tensor::new(vec![self.height(), self.width()], plane)
    }
}

/// Free-function form of [`FeatureMap::channel_slice`].
pub fn channel_slice(fm: &FeatureMap, j: usize) -> Result<Tensor> {
    fm.channel_slice(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relu_sign_cases() {
        let t = Tensor::from_vec(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let z = Tensor::zeros(vec![2, 3]).unwrap();
        assert_eq!(relu(&z), z);
        let one = Tensor::from_vec(vec![3.5]).unwrap();
        assert_eq!(relu(&one).data(), &[3.5]);
    }

    #[test]
    fn relu_maps_negative_zero_to_positive_zero() {
        let t = Tensor::from_vec(vec![-0.0]).unwrap();
        assert_eq!(relu(&t).data()[0].to_bits(), 0.0f32.to_bits());
    }

    #[test]
    fn shape_invariants_are_enforced() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(FeatureMap::from_tensor(Tensor::zeros(vec![2, 2]).unwrap()).is_err());
    }

    #[test]
    fn channel_slice_examples() {
        // channel 0 = [[1,2],[3,4]], channel 1 = [[0,0],[0,9]]
        let fm = FeatureMap::new(2, 2, 2, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 9.0]).unwrap();
        assert_eq!(fm.channel_slice(0).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(fm.channel_slice(1).unwrap().shape(), &[2, 2]);

        let thin = FeatureMap::new(1, 1, 3, vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(thin.channel_slice(2).unwrap().data(), &[7.0]);

        assert!(matches!(
            fm.channel_slice(2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    proptest! {
        #[test]
        fn relu_is_idempotent_and_nonnegative(v in prop::collection::vec(-1e3f32..1e3, 1..64)) {
            let t = Tensor::from_vec(v).unwrap();
            let once = relu(&t);
            let twice = relu(&once);
            prop_assert!(once.data().iter().all(|&x| x >= 0.0));
            let a: Vec<u32> = once.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = twice.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn channel_slices_reassemble_the_map(h in 1usize..5, w in 1usize..5, c in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f32> = (0..h * w * c)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32 * 0.5)
                .collect();
            let fm = FeatureMap::new(h, w, c, data.clone()).unwrap();
            let mut rebuilt = vec![0.0f32; h * w * c];
            for j in 0..c {
                let plane = fm.channel_slice(j).unwrap();
                for (p, &v) in plane.data().iter().enumerate() {
                    rebuilt[p * c + j] = v;
                }
            }
            prop_assert_eq!(rebuilt, data);
        }
    }
}
