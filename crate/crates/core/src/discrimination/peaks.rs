//! Mode finding on a coarse 2D histogram, used to seed the projection fit.

use super::histogram::{min_max, quantile_in_place};

const GRID: usize = 64;
/// A secondary peak counts as resolved only if the density between it and
/// every higher peak dips below it by this many noise standard deviations
/// and by at least `MIN_DIP` of its height.
const PROMINENCE_SIGMAS: f64 = 4.0;
const MIN_DIP: f64 = 0.05;
/// Passes of the separable `[1 2 1] / 4` kernel applied to the raw counts.
const SMOOTH_PASSES: usize = 4;
/// Peaks lower than this fraction of the highest one are ignored.
const MIN_RELATIVE_HEIGHT: f64 = 2e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub center: [f64; 2],
    pub sigma: [f64; 2],
    /// Rough count estimate from height × Gaussian volume.
    pub amplitude: f64,
    pub height: f64,
}

struct Grid {
    lo: [f64; 2],
    width: [f64; 2],
    density: Vec<f64>,
}

impl Grid {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.density[i * GRID + j]
    }

    fn position(&self, i: f64, j: f64) -> [f64; 2] {
        [
            self.lo[0] + (i + 0.5) * self.width[0],
            self.lo[1] + (j + 0.5) * self.width[1],
        ]
    }

    /// Minimum density on the straight segment between two cells.
    fn min_along(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let steps = (a.0.abs_diff(b.0)).max(a.1.abs_diff(b.1)).max(1) * 2;
        (0..=steps)
            .map(|s| {
                let t = s as f64 / steps as f64;
                let i = (a.0 as f64 + t * (b.0 as f64 - a.0 as f64)).round() as usize;
                let j = (a.1 as f64 + t * (b.1 as f64 - a.1 as f64)).round() as usize;
                self.at(i, j)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance (in cells) from a peak to where density first falls below
    /// `e^{-1/2}` of the peak height, averaged over both directions of an axis.
    fn half_width(&self, i: usize, j: usize, axis: usize) -> f64 {
        let h = self.at(i, j) * (-0.5f64).exp();
        let walk = |dir: isize| {
            let mut steps = 0usize;
            let (mut x, mut y) = (i as isize, j as isize);
            loop {
                if axis == 0 {
                    x += dir;
                } else {
                    y += dir;
                }
                if x < 0 || y < 0 || x >= GRID as isize || y >= GRID as isize {
                    break;
                }
                steps += 1;
                if self.at(x as usize, y as usize) < h {
                    break;
                }
            }
            steps as f64
        };
        0.5 * (walk(-1) + walk(1)).max(1.0)
    }
}

fn build_grid(points: &[[f64; 2]]) -> Grid {
    let mut lo = [0.0; 2];
    let mut width = [0.0; 2];
    for axis in 0..2 {
        let mut vals: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        let a = quantile_in_place(&mut vals, 0.0005);
        let b = quantile_in_place(&mut vals, 0.9995);
        let (mn, mx) = min_max(&vals);
        let pad = 0.1 * (b - a);
        let (a, b) = ((a - pad).max(mn), (b + pad).min(mx));
        let span = (b - a).max(1e-12);
        lo[axis] = a;
        width[axis] = span / GRID as f64;
    }
    let mut raw = vec![0.0; GRID * GRID];
    for p in points {
        let i = (p[0] - lo[0]) / width[0];
        let j = (p[1] - lo[1]) / width[1];
        if i >= 0.0 && j >= 0.0 && (i as usize) < GRID && (j as usize) < GRID {
            raw[i as usize * GRID + j as usize] += 1.0;
        }
    }
    let mut density = raw;
    for _ in 0..SMOOTH_PASSES {
        density = smooth(&density);
    }
    Grid { lo, width, density }
}

fn smooth(src: &[f64]) -> Vec<f64> {
    let k = [0.25, 0.5, 0.25];
    let mut tmp = vec![0.0; src.len()];
    for i in 0..GRID {
        for j in 0..GRID {
            let mut acc = 0.0;
            for (d, w) in k.iter().enumerate() {
                let jj = j as isize + d as isize - 1;
                if (0..GRID as isize).contains(&jj) {
                    acc += w * src[i * GRID + jj as usize];
                }
            }
            tmp[i * GRID + j] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for i in 0..GRID {
        for j in 0..GRID {
            let mut acc = 0.0;
            for (d, w) in k.iter().enumerate() {
                let ii = i as isize + d as isize - 1;
                if (0..GRID as isize).contains(&ii) {
                    acc += w * tmp[ii as usize * GRID + j];
                }
            }
            out[i * GRID + j] = acc;
        }
    }
    out
}

/// Variance of a smoothed cell per unit Poisson count: the squared norm of
/// the 2D kernel, a product of two binomial rows.
fn smoothed_variance() -> f64 {
    let mut row = vec![1.0];
    for _ in 0..2 * SMOOTH_PASSES {
        let mut next = vec![0.0; row.len() + 1];
        for (k, w) in row.iter().enumerate() {
            next[k] += 0.5 * w;
            next[k + 1] += 0.5 * w;
        }
        row = next;
    }
    row.iter().map(|w| w * w).sum::<f64>().powi(2)
}

/// Resolved modes of the point cloud, highest first.
pub fn find_peaks(points: &[[f64; 2]]) -> Vec<Peak> {
    if points.is_empty() {
        return Vec::new();
    }
    let grid = build_grid(points);
    let mut maxima = Vec::new();
    for i in 0..GRID {
        for j in 0..GRID {
            let v = grid.at(i, j);
            if v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (x, y) = (i as isize + di, j as isize + dj);
                    if x < 0 || y < 0 || x >= GRID as isize || y >= GRID as isize {
                        continue;
                    }
                    let w = grid.at(x as usize, y as usize);
                    // ties resolve toward the lexicographically first cell
                    if w > v || (w == v && (di < 0 || (di == 0 && dj < 0))) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                maxima.push((v, i, j));
            }
        }
    }
    maxima.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = maxima.first().map_or(0.0, |m| m.0);
    let mut accepted: Vec<(f64, usize, usize)> = Vec::new();
    for &(v, i, j) in &maxima {
        if v < MIN_RELATIVE_HEIGHT * top {
            break;
        }
        let noise = (v * smoothed_variance()).sqrt();
        let resolved = accepted.iter().all(|&(_, ai, aj)| {
            let dip = v - grid.min_along((i, j), (ai, aj));
            dip > PROMINENCE_SIGMAS * noise && dip > MIN_DIP * v
        });
        if resolved {
            accepted.push((v, i, j));
        }
    }
    accepted
        .into_iter()
        .map(|(v, i, j)| {
            let si = grid.half_width(i, j, 0) * grid.width[0];
            let sj = grid.half_width(i, j, 1) * grid.width[1];
            let cell_area = grid.width[0] * grid.width[1];
            Peak {
                center: grid.position(i as f64, j as f64),
                sigma: [si, sj],
                amplitude: v * 2.0 * std::f64::consts::PI * si * sj / cell_area,
                height: v,
            }
        })
        .collect()
}
