//! Binary pixel mask with the boundary-extraction rule shared by the
//! segmentation metrics.

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Mask {
        Mask { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Mask {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Set pixels that touch an unset pixel through 4-adjacency, or the
    /// image border.
    pub fn boundary_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let on_border =
                    x == 0 || y == 0 || x == self.width - 1 || y == self.height - 1;
                if on_border
                    || !self.get(x - 1, y)
                    || !self.get(x + 1, y)
                    || !self.get(x, y - 1)
                    || !self.get(x, y + 1)
                {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Tight bounding box `(x, y, w, h)` of the set pixels, `None` when empty.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut min_x = usize::MAX;
        let mut min_y = usize::MAX;
        let mut max_x = 0usize;
        let mut max_y = 0usize;
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    min_x = min_x.min(x);
                    min_y = min_y.min(y);
                    max_x = max_x.max(x);
                    max_y = max_y.max(y);
                }
            }
        }
        any.then(|| (min_x, min_y, max_x - min_x + 1, max_y - min_y + 1))
    }

    /// 8-bit rendering: 255 inside, 0 outside.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| if v { 255 } else { 0 }).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Mask {
        assert_eq!(bytes.len(), width * height);
        Mask { width, height, data: bytes.iter().map(|&b| b >= 128).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_of_solid_block() {
        let m = Mask::from_fn(6, 6, |x, y| (1..5).contains(&x) && (1..5).contains(&y));
        let boundary = m.boundary_pixels();
        // 4×4 block: all but the 2×2 interior are boundary.
        assert_eq!(boundary.len(), 12);
        assert!(!boundary.contains(&(2, 2)));
    }

    #[test]
    fn border_pixels_are_boundary() {
        let m = Mask::from_fn(3, 3, |_, _| true);
        assert_eq!(m.boundary_pixels().len(), 8);
    }

    #[test]
    fn bounding_box_is_tight() {
        let mut m = Mask::new(10, 8);
        m.set(2, 3, true);
        m.set(7, 5, true);
        assert_eq!(m.bounding_box(), Some((2, 3, 6, 3)));
        assert_eq!(Mask::new(4, 4).bounding_box(), None);
    }
}
