use nalgebra::Vector2;

use super::Intrinsics;
use crate::grid::{sample_bilinear, Grid, Image};

/// Per-target-pixel source coordinates; `None` marks pixels with no valid source.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapTable {
    pub map: Grid<Option<Vector2<f64>>>,
}

impl RemapTable {
    pub fn valid_fraction(&self) -> f64 {
        self.map.iter().filter(|m| m.is_some()).count() as f64 / self.map.len() as f64
    }

    pub fn apply(&self, source: &Image) -> Grid<Option<f32>> {
        self.map
            .map(|m| m.and_then(|p| sample_bilinear(source, p.x, p.y)))
    }
}

/// Maps every pixel of a `target` camera to where the same ray lands in `source`.
pub fn rectify_unified_to_pinhole(source: &Intrinsics, target: &Intrinsics) -> RemapTable {
    let map = Grid::from_fn(target.width as usize, target.height as usize, |x, y| {
        let px = Vector2::new(x as f64, y as f64);
        let ray = target.ray(&px).ok()?;
        let src = source.project(&ray).ok()?;
        source.contains(&src).then_some(src)
    });
    RemapTable { map }
}
