use crate::error::{Error, Result};
use crate::grid::{Grid, Volume};

/// Dense `batch × height × width × channels` array, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Stacks single-channel planes into `[n, h, w, 1]`.
    pub fn from_planes(planes: &[&Grid<f64>]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidInput("no planes to stack".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            first.same_dims(p, "stacked plane")?;
            data.extend_from_slice(p.as_slice());
        }
        Ok(Tensor {
            shape: [planes.len(), h, w, 1],
            data,
        })
    }

    /// Stacks equally shaped volumes into `[n, h, w, c]`.
    pub fn from_volumes(volumes: &[&Volume]) -> Result<Self> {
        let first = volumes
            .first()
            .ok_or_else(|| Error::InvalidInput("no volumes to stack".into()))?;
        let dims = (first.height(), first.width(), first.channels());
        let mut data = Vec::with_capacity(volumes.len() * first.as_slice().len());
        for v in volumes {
            if (v.height(), v.width(), v.channels()) != dims {
                return Err(Error::DimensionMismatch("stacked volumes differ in shape".into()));
            }
            data.extend_from_slice(v.as_slice());
        }
        Ok(Tensor {
            shape: [volumes.len(), dims.0, dims.1, dims.2],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of values in one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn index(&self, n: usize, i: usize, j: usize, c: usize) -> usize {
        ((n * self.shape[1] + i) * self.shape[2] + j) * self.shape[3] + c
    }

    #[inline]
    pub fn at(&self, n: usize, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(n, i, j, c)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Channel `c` of batch item `n` as a plane.
    pub fn plane(&self, n: usize, c: usize) -> Grid<f64> {
        Grid::from_fn(self.shape[1], self.shape[2], |i, j| self.at(n, i, j, c))
    }

    pub fn volume(&self, n: usize) -> Volume {
        Volume::from_vec(self.shape[1], self.shape[2], self.shape[3], self.item(n).to_vec())
            .expect("item length matches shape")
    }

    pub fn reshaped(mut self, shape: [usize; 4]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("non-finite values in {what}")))
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn round_to_f32(&mut self) {
        for x in &mut self.data {
            *x = *x as f32 as f64;
        }
    }
}
