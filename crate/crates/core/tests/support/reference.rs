//! Naive f64 reference implementations used as test oracles.
//!
//! These are written directly from the layer definitions with plain loops
//! and share no code with the library.

#![allow(dead_code)]

/// Zero-padded stride-1 cross-correlation of `(b, c, h, w)` with
/// `(o, c, k, k)` weights.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    o: usize,
    k: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = h + 2 * pad + 1 - k;
    let wo = w + 2 * pad + 1 - k;
    let mut y = vec![0.0; b * o * ho * wo];
    for n in 0..b {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = bias[oc];
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ii = i as isize + ki as isize - pad as isize;
                                let jj = j as isize + kj as isize - pad as isize;
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                    continue;
                                }
                                s += x[((n * c + ic) * h + ii as usize) * w + jj as usize]
                                    * weight[((oc * c + ic) * k + ki) * k + kj];
                            }
                        }
                    }
                    y[((n * o + oc) * ho + i) * wo + j] = s;
                }
            }
        }
    }
    (y, ho, wo)
}

/// `y = x W^T + b` for `x: (b, i)`, `W: (o, i)`.
pub fn dense(x: &[f64], b: usize, i: usize, weight: &[f64], bias: &[f64], o: usize) -> Vec<f64> {
    let mut y = vec![0.0; b * o];
    for n in 0..b {
        for r in 0..o {
            y[n * o + r] = bias[r] + (0..i).map(|q| x[n * i + q] * weight[r * i + q]).sum::<f64>();
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Training-mode batch norm on `(b, f * group, spatial)` with statistics
/// pooled over batch, spatial positions and the `group` channels of each
/// feature (biased variance).
pub fn batch_norm(x: &[f64], b: usize, f: usize, group: usize, spatial: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for feat in 0..f {
        let mut vals = Vec::new();
        for n in 0..b {
            for g in 0..group {
                for s in 0..spatial {
                    vals.push(((n * f + feat) * group + g) * spatial + s);
                }
            }
        }
        let m = vals.iter().map(|&i| x[i]).sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>() / vals.len() as f64;
        for &i in &vals {
            y[i] = gamma[feat] * (x[i] - m) / (v + eps).sqrt() + beta[feat];
        }
    }
    y
}

pub fn layer_norm(x: &[f64], l: usize, eps: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks(l) {
        let m = row.iter().sum::<f64>() / l as f64;
        let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / l as f64;
        y.extend(row.iter().map(|a| (a - m) / (v + eps).sqrt()));
    }
    y
}

/// 2x2 stride-2 max pooling over `(planes, h, w)`.
pub fn max_pool(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        for i in 0..ho {
            for j in 0..wo {
                let at = |a: usize, b: usize| x[(p * h + a) * w + b];
                y.push(
                    at(2 * i, 2 * j)
                        .max(at(2 * i, 2 * j + 1))
                        .max(at(2 * i + 1, 2 * j))
                        .max(at(2 * i + 1, 2 * j + 1)),
                );
            }
        }
    }
    y
}

/// Max over fibres: `(b, f * group, spatial) -> (b, f, spatial)`.
pub fn group_pool(x: &[f64], b: usize, f: usize, group: usize, spatial: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(b * f * spatial);
    for n in 0..b {
        for feat in 0..f {
            for s in 0..spatial {
                let v = (0..group)
                    .map(|g| x[((n * f + feat) * group + g) * spatial + s])
                    .fold(f64::NEG_INFINITY, f64::max);
                y.push(v);
            }
        }
    }
    y
}

/// Orbit means: `(planes, spatial) -> (planes * orbits)`.
pub fn orbit_pool(x: &[f64], planes: usize, spatial: usize, orbits: &[Vec<usize>]) -> Vec<f64> {
    let mut y = Vec::new();
    for p in 0..planes {
        for o in orbits {
            y.push(o.iter().map(|&s| x[p * spatial + s]).sum::<f64>() / o.len() as f64);
        }
    }
    y
}

/// Rotates a `size x size` plane by `quarter` counter-clockwise quarter
/// turns, optionally mirroring left-right first. Written with explicit
/// index formulas rather than group machinery.
pub fn rot_flip(plane: &[f32], size: usize, quarter: usize, mirror: bool) -> Vec<f32> {
    let mut cur: Vec<f32> = if mirror {
        (0..size * size)
            .map(|idx| {
                let (i, j) = (idx / size, idx % size);
                plane[i * size + (size - 1 - j)]
            })
            .collect()
    } else {
        plane.to_vec()
    };
    for _ in 0..quarter % 4 {
        // out[i][j] = in[j][size-1-i]  (counter-clockwise)
        cur = (0..size * size)
            .map(|idx| {
                let (i, j) = (idx / size, idx % size);
                cur[j * size + (size - 1 - i)]
            })
            .collect();
    }
    cur
}

/// Relative error `|a - b| / max(|b|, floor)` in the L2 sense.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_grad(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + step;
            let up = f(&xp);
            xp[i] = orig - step;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}
