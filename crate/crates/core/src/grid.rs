//! Dense row-major planes and channel volumes shared by every module.

use crate::error::{Error, Result};

/// An `height × width` plane in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}x{} grid",
                data.len(),
                height,
                width
            )));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.width + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.width + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// An `height × width × channels` volume, channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Volume {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Volume {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width}x{channels} volume",
                data.len()
            )));
        }
        Ok(Volume {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_grid(grid: &Grid<f64>) -> Self {
        Volume {
            height: grid.height(),
            width: grid.width(),
            channels: 1,
            data: grid.as_slice().to_vec(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.data[(i * self.width + j) * self.channels + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Extracts one channel as a plane.
    pub fn channel(&self, c: usize) -> Grid<f64> {
        Grid::from_fn(self.height, self.width, |i, j| self.get(i, j, c))
    }
}
