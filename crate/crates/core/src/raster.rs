//! Dense row-major rasters shared by every stage.

use crate::error::{Error, Result};

/// A dense row-major image of `T` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel class ids; 0 is void.
pub type LabelImage = Raster<u16>;

/// Per-pixel depth in meters along the optical axis; 0 is invalid.
pub type DepthImage = Raster<f64>;

/// Binary mask.
pub type Mask = Raster<bool>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(
                "raster",
                format!("{} values for a {width}x{height} raster", data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = y * self.width + x;
        self.data[i] = value;
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

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Errors with [`Error::DimensionMismatch`] naming `layer` when `other`
    /// does not share this raster's size.
    pub fn check_same_dims<U>(&self, other: &Raster<U>, layer: &str) -> Result<()> {
        check_dims(layer, (self.width, self.height), other.dims())
    }
}

impl Mask {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box `[x, y, w, h]` of the set pixels, if any.
    pub fn bbox(&self) -> Option<[u32; 4]> {
        let mut min_x = usize::MAX;
        let mut min_y = usize::MAX;
        let mut max_x = 0;
        let mut max_y = 0;
        let mut any = false;
        for (i, &b) in self.data.iter().enumerate() {
            if b {
                let (x, y) = (i % self.width, i / self.width);
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
                any = true;
            }
        }
        any.then(|| {
            [
                min_x as u32,
                min_y as u32,
                (max_x - min_x + 1) as u32,
                (max_y - min_y + 1) as u32,
            ]
        })
    }
}

pub(crate) fn check_dims(layer: &str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            layer: layer.to_string(),
            expected_w: expected.0,
            expected_h: expected.1,
            found_w: found.0,
            found_h: found.1,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_is_tight() {
        let mut m = Mask::filled(5, 4, false);
        m.set(1, 2, true);
        m.set(3, 1, true);
        assert_eq!(m.bbox(), Some([1, 1, 3, 2]));
        assert_eq!(Mask::filled(2, 2, false).bbox(), None);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Raster::from_vec(2, 2, vec![0u16; 3]).is_err());
        let r = Raster::from_vec(2, 1, vec![4u16, 5]).unwrap();
        assert_eq!(*r.get(1, 0), 5);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let a = LabelImage::filled(2, 2, 0);
        let b = DepthImage::filled(3, 2, 0.0);
        let err = a.check_same_dims(&b, "depth").unwrap_err();
        assert!(err.to_string().contains("depth"));
    }
}
