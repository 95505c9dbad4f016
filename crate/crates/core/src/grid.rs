//! Row-major 2D containers shared by depth maps, flow fields, masks and images.

use nalgebra::Vector2;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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
    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel coordinates of a linear index.
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
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
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Per-pixel inverse depth. Non-positive or non-finite entries are invalid.
pub type InvDepthMap = Grid<f64>;

/// Binary static mask: `true` marks static (usable) pixels.
pub type Mask = Grid<bool>;

/// Grayscale image with intensities nominally in [0, 1].
pub type Image = Grid<f32>;

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Low-resolution dimension for a full-resolution size (one low-res pixel per 8x8 block).
pub fn low_res_dim(full: usize) -> usize {
    full.div_ceil(crate::LOW_RES_FACTOR)
}

/// Dense optical flow with per-pixel confidence weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub flow: Grid<Vector2<f64>>,
    pub weight: Grid<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            flow: Grid::new(width, height, Vector2::zeros()),
            weight: Grid::new(width, height, 0.0),
        }
    }

    pub fn width(&self) -> usize {
        self.flow.width()
    }

    pub fn height(&self) -> usize {
        self.flow.height()
    }

    pub fn is_consistent(&self) -> bool {
        self.flow.same_shape(&self.weight) && self.weight.iter().all(|w| w.is_finite() && *w >= 0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }
}

/// Bilinear sample of an image at a continuous position (integer = pixel center).
/// Returns `None` outside the convex hull of pixel centers.
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> Option<f32> {
    if !(x >= 0.0 && y >= 0.0) {
        return None;
    }
    let w = img.width();
    let h = img.height();
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    if x0 >= w || y0 >= h || (x0 + 1 >= w && x > x0 as f64) || (y0 + 1 >= h && y > y0 as f64) {
        return None;
    }
    let ax = (x - x0 as f64) as f32;
    let ay = (y - y0 as f64) as f32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let top = img.get(x0, y0) * (1.0 - ax) + img.get(x1, y0) * ax;
    let bottom = img.get(x0, y1) * (1.0 - ax) + img.get(x1, y1) * ax;
    Some(top * (1.0 - ay) + bottom * ay)
}

/// Bilinear sample clamped to the image border.
pub fn sample_clamped(img: &Image, x: f64, y: f64) -> f32 {
    let xc = x.clamp(0.0, (img.width() - 1) as f64);
    let yc = y.clamp(0.0, (img.height() - 1) as f64);
    sample_bilinear(img, xc, yc).unwrap_or(0.0)
}
