//! Maximization of a function over the unit sphere of `R^d`.
//!
//! Circles get a dense angular scan with golden-section polishing, `S^2` a
//! Fibonacci scan with Nelder-Mead polishing, and higher dimensions seeded
//! multistart Nelder-Mead. Candidate evaluation runs on the rayon pool but the
//! final selection is sequential, so results do not depend on thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::quadrature::golden_section_min;

/// Minimum number of scan points used for `d = 2, 3`.
pub const MIN_SCAN: usize = 10_000;
/// Minimum number of multistart seeds used for `d >= 4`.
pub const MIN_STARTS: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct SphereOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for SphereOptions {
    fn default() -> Self {
        Self { samples: MIN_SCAN, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereOptimum {
    pub value: f64,
    pub point: Vec<f64>,
}

/// Points of the circle at equally spaced angles.
pub fn circle_grid(count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            vec![th.cos(), th.sin()]
        })
        .collect()
}

/// Nearly uniform points on `S^2` along a Fibonacci spiral.
pub fn fibonacci_sphere(count: usize) -> Vec<Vec<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            vec![rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect()
}

/// Seeded points uniformly distributed on `S^{d-1}`.
pub fn random_sphere(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Scan points appropriate for dimension `d` (used by the optimizer and by
/// dense-scan cross-checks).
pub fn scan_points(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match d {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => circle_grid(count),
        3 => fibonacci_sphere(count),
        _ => random_sphere(d, count, seed),
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.total_cmp(&values[best]) == std::cmp::Ordering::Greater {
            best = i;
        }
    }
    best
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Indices of the `k` best scan points that are mutually at least `sep` apart.
fn spread_top(points: &[Vec<f64>], values: &[f64], k: usize, sep: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for i in order {
        if !values[i].is_finite() {
            continue;
        }
        let far = chosen.iter().all(|&j| {
            let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= sep
        });
        if far {
            chosen.push(i);
            if chosen.len() == k {
                break;
            }
        }
    }
    chosen
}

/// Maximizes `f` over the unit sphere of `R^d`.
pub fn maximize<F>(d: usize, f: &F, opts: SphereOptions) -> SphereOptimum
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert!(d >= 1, "sphere dimension must be positive");
    match d {
        1 => {
            let a = f(&[1.0]);
            let b = f(&[-1.0]);
            if b > a {
                SphereOptimum { value: b, point: vec![-1.0] }
            } else {
                SphereOptimum { value: a, point: vec![1.0] }
            }
        }
        2 => maximize_circle(f, opts),
        _ => maximize_multistart(d, f, opts),
    }
}

fn maximize_circle<F>(f: &F, opts: SphereOptions) -> SphereOptimum
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let count = opts.samples.max(MIN_SCAN);
    let h = 2.0 * std::f64::consts::PI / count as f64;
    let at = |th: f64| f(&[th.cos(), th.sin()]);
    let values: Vec<f64> = (0..count).into_par_iter().map(|i| at(h * i as f64)).collect();
    let mut peaks: Vec<usize> = (0..count)
        .filter(|&i| {
            let l = values[(i + count - 1) % count];
            let r = values[(i + 1) % count];
            values[i].is_finite() && values[i] >= l && values[i] >= r
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    peaks.truncate(8);
    if peaks.is_empty() {
        peaks.push(argmax(&values));
    }
    let refined: Vec<(f64, f64)> = peaks
        .par_iter()
        .map(|&i| {
            let th0 = h * i as f64;
            let th = golden_section_min(&|th: f64| -at(th), th0 - h, th0 + h);
            let v = at(th);
            if v >= values[i] {
                (v, th)
            } else {
                (values[i], th0)
            }
        })
        .collect();
    let vals: Vec<f64> = refined.iter().map(|r| r.0).collect();
    let (value, th) = refined[argmax(&vals)];
    SphereOptimum { value, point: vec![th.cos(), th.sin()] }
}

fn maximize_multistart<F>(d: usize, f: &F, opts: SphereOptions) -> SphereOptimum
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (points, starts, step) = if d == 3 {
        let count = opts.samples.max(MIN_SCAN);
        let spacing = (4.0 * std::f64::consts::PI / count as f64).sqrt();
        (fibonacci_sphere(count), 8, 2.0 * spacing)
    } else {
        let starts = opts.samples.max(MIN_STARTS);
        (random_sphere(d, 16 * starts, opts.seed), starts, 0.2)
    };
    let values: Vec<f64> = points.par_iter().map(|p| f(p)).collect();
    let sep = if d == 3 { 4.0 * step } else { 0.0 };
    let mut chosen = spread_top(&points, &values, starts, sep);
    if chosen.is_empty() {
        chosen.push(argmax(&values));
    }
    let refined: Vec<SphereOptimum> = chosen
        .par_iter()
        .map(|&i| {
            let polished = polish(f, &points[i], step);
            if polished.value >= values[i] {
                polished
            } else {
                SphereOptimum { value: values[i], point: points[i].clone() }
            }
        })
        .collect();
    let vals: Vec<f64> = refined.iter().map(|r| r.value).collect();
    refined[argmax(&vals)].clone()
}

/// Orthonormal basis of the tangent space at the unit vector `z`.
fn tangent_basis(z: &[f64]) -> Vec<Vec<f64>> {
    let d = z.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    for e in 0..d {
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        let dot: f64 = z[e];
        v.iter_mut().zip(z).for_each(|(vi, zi)| *vi -= dot * zi);
        for b in &basis {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= c * bi);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
            if basis.len() == d - 1 {
                break;
            }
        }
    }
    basis
}

/// Nelder-Mead ascent in tangent-plane coordinates around `z0`.
fn polish<F: Fn(&[f64]) -> f64>(f: &F, z0: &[f64], step: f64) -> SphereOptimum {
    let basis = tangent_basis(z0);
    let lift = |y: &[f64]| {
        let mut z = z0.to_vec();
        for (b, &c) in basis.iter().zip(y) {
            z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += c * bi);
        }
        normalize(&mut z);
        z
    };
    let objective = |y: &[f64]| {
        let v = f(&lift(y));
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let y0 = vec![0.0; basis.len()];
    let (y, fy) = nelder_mead(&objective, &y0, step, 400 * (basis.len() + 1));
    SphereOptimum { value: -fy, point: lift(&y) }
}

/// Plain Nelder-Mead minimization from `x0` with initial simplex edge `step`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let k = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..k {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let combine =
        |a: &[f64], b: &[f64], w: f64| -> Vec<f64> { a.iter().zip(b).map(|(ai, bi)| ai + w * (bi - ai)).collect() };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[k].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < 1e-12 || (worst - best).abs() <= 1e-15 * best.abs().max(1e-300) && size < 1e-6 {
            break;
        }
        let mut centroid = vec![0.0; k];
        for (x, _) in &simplex[..k] {
            centroid.iter_mut().zip(x).for_each(|(c, xi)| *c += xi / k as f64);
        }
        let reflected = combine(&centroid, &simplex[k].0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &simplex[k].0, -2.0);
            let fe = f(&expanded);
            simplex[k] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (reflected, fr);
        } else {
            let (toward, ft) = if fr < simplex[k].1 { (&reflected, fr) } else { (&simplex[k].0, simplex[k].1) };
            let contracted = combine(&centroid, toward, 0.5);
            let fc = f(&contracted);
            if fc < ft {
                simplex[k] = (contracted, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x = combine(&x0, &item.0, 0.5);
                    let fx = f(&x);
                    *item = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_finds_a_sharp_maximum() {
        let target = [0.3f64.cos(), 0.3f64.sin()];
        let f = |z: &[f64]| -((z[0] - target[0]).powi(2) + (z[1] - target[1]).powi(2)) * 1e4;
        let opt = maximize(2, &f, SphereOptions::default());
        assert!(opt.value > -1e-16);
        assert!((opt.point[0] - target[0]).abs() < 1e-8);
    }

    #[test]
    fn three_sphere_finds_the_dominant_axis() {
        let f = |z: &[f64]| 3.0 * z[0] * z[0] + 2.0 * z[1] * z[1] + z[2] * z[2] - 0.5 * z[0] * z[2];
        let m = nalgebra::Matrix3::new(3.0, 0.0, -0.25, 0.0, 2.0, 0.0, -0.25, 0.0, 1.0);
        let top: f64 = m.symmetric_eigen().eigenvalues.max();
        let opt = maximize(3, &f, SphereOptions::default());
        assert!((opt.value - top).abs() < 1e-12, "{} vs {top}", opt.value);
    }

    #[test]
    fn higher_dimensions_find_the_top_eigenvalue() {
        let d = 5;
        let a = nalgebra::DMatrix::from_fn(d, d, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let m = &a + a.transpose();
        let f = |z: &[f64]| {
            let v = nalgebra::DVector::from_column_slice(z);
            (v.transpose() * &m * &v)[0]
        };
        let top = m.clone().symmetric_eigen().eigenvalues.max();
        let opt = maximize(d, &f, SphereOptions { samples: 64, seed: 5 });
        assert!((opt.value - top).abs() < 1e-9, "{} vs {top}", opt.value);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let f = |z: &[f64]| (3.0 * z[0]).sin() * z[1] + z[3];
        let a = maximize(4, &f, SphereOptions { samples: 64, seed: 9 });
        let b = maximize(4, &f, SphereOptions { samples: 64, seed: 9 });
        assert_eq!(a, b);
    }
}
