//! Weight-tied lifting and group convolutions.
//!
//! Both are ordinary [`Conv2d`] layers whose full filter bank is generated
//! from base filters by the group action, so forward/backward are shared
//! with the plain convolution and only the tying map is group specific.

use super::group::DihedralGroup;
use crate::nn::{Conv2d, TieEntry, Tying};
use crate::rng::Rng;
use crate::{Error, Result};

/// How group elements act on filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    /// Only index permutations; groups that need interpolation are rejected.
    Exact,
    /// Bilinear resampling for rotations that are not multiples of 90 degrees.
    Resampled,
}

fn check_mode(group: &DihedralGroup, mode: GridMode) -> Result<()> {
    if mode == GridMode::Exact && !group.is_grid_exact() {
        return Err(Error::Config(format!(
            "D{} does not act exactly on a square grid; use resampled mode",
            group.n()
        )));
    }
    Ok(())
}

/// Tying for a lifting convolution from `c_in` plain channels to `f_out`
/// regular fields: output channel `fo * 2N + g` uses the base filter
/// `K[fo]` transformed by `g`.
pub fn lift_tying(group: &DihedralGroup, f_out: usize, c_in: usize, k: usize, mode: GridMode) -> Result<Tying> {
    check_mode(group, mode)?;
    let order = group.order();
    let kk = k * k;
    let mut entries = Vec::new();
    for g in 0..order {
        let taps = group.grid_resampling(g, k);
        for fo in 0..f_out {
            for ci in 0..c_in {
                let full_base = ((fo * order + g) * c_in + ci) * kk;
                let base_base = (fo * c_in + ci) * kk;
                for (u, t) in taps.iter().enumerate() {
                    for &(src, w) in t {
                        entries.push(TieEntry {
                            full: (full_base + u) as u32,
                            base: (base_base + src) as u32,
                            coeff: w as f32,
                        });
                    }
                }
            }
        }
    }
    Ok(Tying {
        entries,
        bias_index: (0..f_out * order).map(|c| c / order).collect(),
        base_shape: vec![f_out, c_in, k, k],
        num_bias: f_out,
    })
}

/// Tying for a group convolution between regular fields:
/// `W[(fo, g)][(fi, h)](u) = K[fo, fi, g^-1 h](g^-1 u)`.
pub fn group_tying(group: &DihedralGroup, f_out: usize, f_in: usize, k: usize, mode: GridMode) -> Result<Tying> {
    check_mode(group, mode)?;
    let order = group.order();
    let kk = k * k;
    let c_in = f_in * order;
    let mut entries = Vec::new();
    for g in 0..order {
        let taps = group.grid_resampling(g, k);
        let gi = group.inverse(g);
        for fo in 0..f_out {
            for fi in 0..f_in {
                for h in 0..order {
                    let rel = group.compose(gi, h);
                    let full_base = ((fo * order + g) * c_in + fi * order + h) * kk;
                    let base_base = ((fo * f_in + fi) * order + rel) * kk;
                    for (u, t) in taps.iter().enumerate() {
                        for &(src, w) in t {
                            entries.push(TieEntry {
                                full: (full_base + u) as u32,
                                base: (base_base + src) as u32,
                                coeff: w as f32,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(Tying {
        entries,
        bias_index: (0..f_out * order).map(|c| c / order).collect(),
        base_shape: vec![f_out, f_in, order, k, k],
        num_bias: f_out,
    })
}

/// Lifting convolution: `(B, c_in, H, W) -> (B, f_out * 2N, H', W')`.
pub fn lift_conv(
    group: &DihedralGroup,
    c_in: usize,
    f_out: usize,
    kernel: usize,
    padding: usize,
    mode: GridMode,
    rng: &mut Rng,
) -> Result<Conv2d> {
    let tying = lift_tying(group, f_out, c_in, kernel, mode)?;
    Conv2d::tied(c_in, f_out * group.order(), kernel, padding, tying, rng)
}

/// Group convolution: `(B, f_in * 2N, H, W) -> (B, f_out * 2N, H', W')`.
pub fn group_conv(
    group: &DihedralGroup,
    f_in: usize,
    f_out: usize,
    kernel: usize,
    padding: usize,
    mode: GridMode,
    rng: &mut Rng,
) -> Result<Conv2d> {
    let tying = group_tying(group, f_out, f_in, kernel, mode)?;
    Conv2d::tied(f_in * group.order(), f_out * group.order(), kernel, padding, tying, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_mode_rejects_d8() {
        let g = DihedralGroup::new(8).unwrap();
        assert!(matches!(lift_tying(&g, 1, 1, 3, GridMode::Exact), Err(Error::Config(_))));
        assert!(lift_tying(&g, 1, 1, 3, GridMode::Resampled).is_ok());
    }

    #[test]
    fn d4_shares_filters_eightfold() {
        let g = DihedralGroup::new(4).unwrap();
        let lift = lift_tying(&g, 3, 2, 5, GridMode::Exact).unwrap();
        let base: usize = lift.base_shape.iter().product();
        assert_eq!(base * 8, (3 * 8) * 2 * 25);
        let gc = group_tying(&g, 3, 2, 3, GridMode::Exact).unwrap();
        let base: usize = gc.base_shape.iter().product();
        assert_eq!(base * 8, (3 * 8) * (2 * 8) * 9);
    }
}
