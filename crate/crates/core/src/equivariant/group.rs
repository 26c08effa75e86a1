//! The dihedral group `D_N` and its action on square pixel grids.

use crate::{Error, Result, Tensor};

/// `D_N`: `N` rotations by `2*pi*r/N` and `N` reflections.
///
/// Element `e = s * N + r` stands for `R(r) F^s`, where `F` mirrors the
/// x axis (`(x, y) -> (-x, y)`) and `R(r)` rotates counter-clockwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DihedralGroup {
    n: usize,
    cayley: Vec<usize>,
    inverse: Vec<usize>,
}

impl DihedralGroup {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("dihedral group order N must be at least 1".into()));
        }
        let order = 2 * n;
        let compose = |a: usize, b: usize| {
            let (s1, r1) = (a / n, a % n);
            let (s2, r2) = (b / n, b % n);
            let r = if s1 == 0 { (r1 + r2) % n } else { (r1 + n - r2) % n };
            (s1 ^ s2) * n + r
        };
        let mut cayley = vec![0; order * order];
        for a in 0..order {
            for b in 0..order {
                cayley[a * order + b] = compose(a, b);
            }
        }
        let inverse = (0..order)
            .map(|a| (0..order).find(|&b| cayley[a * order + b] == 0).expect("group has inverses"))
            .collect();
        Ok(Self { n, cayley, inverse })
    }

    /// Rotation order `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Group order `2N`.
    pub fn order(&self) -> usize {
        2 * self.n
    }

    pub fn element(&self, rotation: usize, reflect: bool) -> usize {
        (reflect as usize) * self.n + rotation % self.n
    }

    pub fn rotation(&self, e: usize) -> usize {
        e % self.n
    }

    pub fn is_reflection(&self, e: usize) -> bool {
        e >= self.n
    }

    /// `a * b` (apply `b` first).
    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.cayley[a * self.order() + b]
    }

    pub fn inverse(&self, e: usize) -> usize {
        self.inverse[e]
    }

    pub fn cayley_table(&self) -> &[usize] {
        &self.cayley
    }

    /// Whether element `e` maps the square pixel grid onto itself.
    pub fn is_grid_exact_element(&self, e: usize) -> bool {
        (4 * self.rotation(e)) % self.n == 0
    }

    /// Whether every element acts on the pixel grid by a permutation.
    pub fn is_grid_exact(&self) -> bool {
        (0..self.order()).all(|e| self.is_grid_exact_element(e))
    }

    /// Elements that act on the grid by permutation (a subgroup).
    pub fn grid_exact_elements(&self) -> Vec<usize> {
        (0..self.order()).filter(|&e| self.is_grid_exact_element(e)).collect()
    }

    /// Image of the point `(x, y)` under `e`.
    pub fn act(&self, e: usize, x: f64, y: f64) -> (f64, f64) {
        let x = if self.is_reflection(e) { -x } else { x };
        let (s, c) = exact_sin_cos(self.rotation(e), self.n);
        (c * x - s * y, s * x + c * y)
    }

    /// For a `size x size` grid, `map[dst] = src` such that the transformed
    /// image is `out[dst] = img[src]`, i.e. `[g f](u) = f(g^-1 u)`.
    /// `None` if `e` does not permute the grid.
    pub fn grid_permutation(&self, e: usize, size: usize) -> Option<Vec<usize>> {
        if !self.is_grid_exact_element(e) {
            return None;
        }
        let inv = self.inverse(e);
        let c = (size as f64 - 1.0) / 2.0;
        let mut map = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let (x, y) = self.act(inv, j as f64 - c, c - i as f64);
                let sj = (x + c).round() as usize;
                let si = (c - y).round() as usize;
                map.push(si * size + sj);
            }
        }
        Some(map)
    }

    /// Bilinear sampling weights realising `[g f](u) = f(g^-1 u)` on a
    /// `size x size` grid: for each destination pixel a list of
    /// `(source index, weight)`. Samples outside the grid read zero. For
    /// grid-exact elements this reduces to the permutation.
    pub fn grid_resampling(&self, e: usize, size: usize) -> Vec<Vec<(usize, f64)>> {
        if let Some(map) = self.grid_permutation(e, size) {
            return map.into_iter().map(|s| vec![(s, 1.0)]).collect();
        }
        let inv = self.inverse(e);
        let c = (size as f64 - 1.0) / 2.0;
        let mut out = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let (x, y) = self.act(inv, j as f64 - c, c - i as f64);
                out.push(bilinear_taps(c - y, x + c, size));
            }
        }
        out
    }

    /// Applies `e` to every channel plane of a `(B, C, H, W)` tensor with
    /// `H == W`.
    pub fn transform_image(&self, e: usize, x: &Tensor) -> Result<Tensor> {
        let size = square_size(x)?;
        let taps = self.grid_resampling(e, size);
        let plane = size * size;
        let mut out = Tensor::zeros(x.shape());
        for (src, dst) in x.data().chunks(plane).zip(out.data_mut().chunks_mut(plane)) {
            for (d, t) in dst.iter_mut().zip(&taps) {
                *d = t.iter().map(|&(s, w)| src[s] as f64 * w).sum::<f64>() as f32;
            }
        }
        Ok(out)
    }

    /// Regular-field action on `(B, F * 2N, H, W)`:
    /// `[g f](x, h) = f(g^-1 x, g^-1 h)`.
    pub fn transform_regular(&self, e: usize, x: &Tensor) -> Result<Tensor> {
        let size = square_size(x)?;
        let order = self.order();
        if x.dim(1) % order != 0 {
            return Err(Error::Config(format!(
                "regular field needs a multiple of {order} channels, got {}",
                x.dim(1)
            )));
        }
        let spatial = self.transform_image(e, x)?;
        let inv = self.inverse(e);
        let plane = size * size;
        let mut out = Tensor::zeros(x.shape());
        let fields = x.dim(0) * x.dim(1) / order;
        let src = spatial.data();
        let dst = out.data_mut();
        for f in 0..fields {
            for h in 0..order {
                let from = self.compose(inv, h);
                let d = (f * order + h) * plane;
                let s = (f * order + from) * plane;
                dst[d..d + plane].copy_from_slice(&src[s..s + plane]);
            }
        }
        Ok(out)
    }

    /// Orbits of grid positions under the grid-exact elements.
    pub fn grid_orbits(&self, size: usize) -> Vec<Vec<usize>> {
        let maps: Vec<Vec<usize>> = self
            .grid_exact_elements()
            .into_iter()
            .map(|e| self.grid_permutation(e, size).expect("exact element"))
            .collect();
        let mut seen = vec![false; size * size];
        let mut orbits = Vec::new();
        for p in 0..size * size {
            if seen[p] {
                continue;
            }
            let mut orbit: Vec<usize> = maps.iter().map(|m| m[p]).collect();
            orbit.sort_unstable();
            orbit.dedup();
            for &q in &orbit {
                seen[q] = true;
            }
            orbits.push(orbit);
        }
        orbits
    }
}

fn square_size(x: &Tensor) -> Result<usize> {
    if x.ndim() != 4 || x.dim(2) != x.dim(3) {
        return Err(Error::Shape(format!("expected square (B, C, S, S) input, got {:?}", x.shape())));
    }
    Ok(x.dim(2))
}

/// `sin`/`cos` of `2*pi*r/n`, exact at multiples of a quarter turn.
fn exact_sin_cos(r: usize, n: usize) -> (f64, f64) {
    if (4 * r) % n == 0 {
        match (4 * r / n) % 4 {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        (2.0 * std::f64::consts::PI * r as f64 / n as f64).sin_cos()
    }
}

/// Bilinear taps for continuous grid position `(row, col)`.
pub(crate) fn bilinear_taps(row: f64, col: f64, size: usize) -> Vec<(usize, f64)> {
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let mut taps = Vec::with_capacity(4);
    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            let (r, c) = (r0 + dr, c0 + dc);
            let w = wr * wc;
            if w > 1e-12 && r >= 0.0 && c >= 0.0 && r < size as f64 && c < size as f64 {
                taps.push((r as usize * size + c as usize, w));
            }
        }
    }
    taps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cayley_table_is_latin_square_with_inverses() {
        for n in [1, 2, 3, 4, 8] {
            let g = DihedralGroup::new(n).unwrap();
            let o = g.order();
            for a in 0..o {
                let mut row: Vec<usize> = (0..o).map(|b| g.compose(a, b)).collect();
                let mut col: Vec<usize> = (0..o).map(|b| g.compose(b, a)).collect();
                row.sort_unstable();
                col.sort_unstable();
                assert_eq!(row, (0..o).collect::<Vec<_>>());
                assert_eq!(col, (0..o).collect::<Vec<_>>());
                assert_eq!(g.compose(a, g.inverse(a)), 0);
            }
        }
    }

    #[test]
    fn composition_matches_point_action() {
        let g = DihedralGroup::new(8).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                let (x1, y1) = g.act(b, 0.3, -1.2);
                let (x1, y1) = g.act(a, x1, y1);
                let (x2, y2) = g.act(g.compose(a, b), 0.3, -1.2);
                assert!((x1 - x2).abs() < 1e-12 && (y1 - y2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exactness_by_order() {
        for (n, exact) in [(1, true), (2, true), (4, true), (8, false), (3, false)] {
            assert_eq!(DihedralGroup::new(n).unwrap().is_grid_exact(), exact);
        }
        assert_eq!(DihedralGroup::new(8).unwrap().grid_exact_elements().len(), 8);
    }

    #[test]
    fn quarter_turn_moves_top_left_to_bottom_left() {
        let g = DihedralGroup::new(4).unwrap();
        let map = g.grid_permutation(1, 3).unwrap();
        // Counter-clockwise: the pixel at the top-left lands at the bottom-left.
        assert_eq!(map[6], 0);
    }

    #[test]
    fn d4_orbits_on_4x4() {
        let g = DihedralGroup::new(4).unwrap();
        let mut sizes: Vec<usize> = g.grid_orbits(4).iter().map(|o| o.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![4, 4, 8]);
    }
}
