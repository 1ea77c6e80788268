//! Dense row-major 2D maps used for renders, G-buffer channels, and loss
//! inputs.

use glam::DVec3;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type ScalarGrid = Grid<f64>;
pub type ColorGrid = Grid<DVec3>;

impl<T: Copy + Default> Grid<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Grid {
            width,
            height,
            data: vec![T::default(); width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    pub fn same_shape<U: Copy + PartialEq>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl Grid<f64> {
    /// Bilinear sample at continuous pixel coordinates, where integer
    /// coordinates address pixel centers. Clamped at the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let (taps, _) = self.bilinear_taps(x, y);
        taps.iter().map(|&(i, w)| self.data[i] * w).sum()
    }

    /// The four (index, weight) taps of a clamped bilinear sample.
    /// Also returns `(fx, fy)` fractional offsets for adjoint code that needs
    /// the spatial derivative of the sample.
    pub fn bilinear_taps(&self, x: f64, y: f64) -> ([(usize, f64); 4], (f64, f64)) {
        let cx = x.clamp(0.0, (self.width - 1) as f64);
        let cy = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = cx.floor() as usize;
        let y0 = cy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = cx - x0 as f64;
        let fy = cy - y0 as f64;
        (
            [
                (self.idx(x0, y0), (1.0 - fx) * (1.0 - fy)),
                (self.idx(x1, y0), fx * (1.0 - fy)),
                (self.idx(x0, y1), (1.0 - fx) * fy),
                (self.idx(x1, y1), fx * fy),
            ],
            (fx, fy),
        )
    }
}
