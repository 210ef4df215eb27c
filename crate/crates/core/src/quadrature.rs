//! Gauss-Legendre rules, a globally adaptive integrator with kink detection,
//! and a composite tensor rule for low-dimensional integrals.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on the three-term Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, a: f64, b: f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared, lazily built rule of order `n`.
pub fn gauss_legendre(n: usize) -> Arc<GaussLegendre> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    map.entry(n).or_insert_with(|| Arc::new(GaussLegendre::new(n))).clone()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveResult {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    /// Order of the fine rule; the embedded coarse rule has half as many nodes.
    pub order: usize,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { order: 64, rel_tol: 1e-13, max_panels: 400 }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss-Legendre integration over consecutive intervals
/// `breaks[0] < breaks[1] < ...`. The panel error estimate is the difference
/// between the `order`-point and `order/2`-point rules; the worst panel is
/// bisected until the summed estimate drops below `rel_tol * |I|`.
pub fn integrate_adaptive<F: Fn(f64) -> f64 + ?Sized>(f: &F, breaks: &[f64], opts: AdaptiveOptions) -> AdaptiveResult {
    let fine = gauss_legendre(opts.order.max(2));
    let coarse = gauss_legendre((opts.order / 2).max(1));
    let eval = |a: f64, b: f64| {
        let hi = fine.integrate(f, a, b);
        let lo = coarse.integrate(f, a, b);
        Panel { a, b, value: hi, error: (hi - lo).abs() }
    };

    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(eval(w[0], w[1]));
        }
    }
    let span = breaks.last().copied().unwrap_or(0.0) - breaks.first().copied().unwrap_or(0.0);
    let totals = |heap: &BinaryHeap<Panel>| heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    loop {
        let (value, error) = totals(&heap);
        let done = error <= opts.rel_tol * value.abs() || error == 0.0;
        if done || heap.len() >= opts.max_panels {
            return AdaptiveResult { value, error, panels: heap.len(), converged: done };
        }
        let worst = heap.pop().expect("non-empty panel set");
        if worst.b - worst.a <= 1e-15 * span {
            heap.push(worst);
            let (value, error) = totals(&heap);
            return AdaptiveResult { value, error, panels: heap.len(), converged: false };
        }
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(eval(worst.a, mid));
        heap.push(eval(mid, worst.b));
    }
}

/// Minimizes a unimodal function on `[a, b]` by golden-section search,
/// returning the abscissa.
pub fn golden_section_min<F: Fn(f64) -> f64 + ?Sized>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let width = (b - a).abs();
    for _ in 0..200 {
        if (b - a).abs() <= 1e-16 * width.max(a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Interior points of `[a, b]` where a nonnegative magnitude `g` has a
/// near-zero local minimum, located to roundoff. Functions like `g^p` with
/// non-integer `p` lose smoothness there, so they make good panel breaks.
pub fn near_zero_minima<F: Fn(f64) -> f64 + ?Sized>(g: &F, a: f64, b: f64) -> Vec<f64> {
    const SAMPLES: usize = 33;
    let h = (b - a) / (SAMPLES - 1) as f64;
    let xs: Vec<f64> = (0..SAMPLES).map(|i| a + h * i as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let max = vals.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    let mut out: Vec<f64> = Vec::new();
    for i in 0..SAMPLES {
        let left = if i > 0 { vals[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < SAMPLES { vals[i + 1] } else { f64::INFINITY };
        if vals[i] <= left && vals[i] <= right && vals[i] < 0.05 * max {
            let lo = xs[i.saturating_sub(1)];
            let hi = xs[(i + 1).min(SAMPLES - 1)];
            let x = golden_section_min(g, lo, hi);
            let interior = x > a + 1e-14 * (b - a) && x < b - 1e-14 * (b - a);
            if interior && out.iter().all(|&y| (y - x).abs() > 1e-12 * (b - a)) {
                out.push(x);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// `int_a^b (norm_sq(x))^{p/2} dx` for a squared norm `norm_sq`, splitting at
/// near-zeros of the norm when `p` is not an even integer.
pub fn integrate_norm_power<F: Fn(f64) -> f64 + ?Sized>(
    norm_sq: &F,
    p: f64,
    a: f64,
    b: f64,
    opts: AdaptiveOptions,
) -> AdaptiveResult {
    let half = 0.5 * p;
    let smooth = half.fract() == 0.0;
    let mut breaks = vec![a];
    if !smooth {
        let g = |x: f64| norm_sq(x).max(0.0).sqrt();
        breaks.extend(near_zero_minima(&g, a, b));
    }
    breaks.push(b);
    let integrand = |x: f64| {
        let v = norm_sq(x).max(0.0);
        if smooth {
            v.powi(half as i32)
        } else {
            v.powf(half)
        }
    };
    integrate_adaptive(&integrand, &breaks, opts)
}

/// Composite tensor Gauss-Legendre rule on `[-r, r]^d`: `panels` equal panels
/// per axis, `order` nodes per panel. Returns `(points, weights)` as flat
/// vectors (points row-major, `d` coordinates each).
pub fn tensor_rule(d: usize, r: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let axis = graded_axis(r, panels, order, None);
    tensor_product(&vec![axis; d])
}

const GRADING_RATIO: f64 = 0.15;
const GRADING_LEVELS: usize = 6;
const GRADED_ORDER: usize = 6;

/// Composite Gauss-Legendre nodes on `[-r, r]` with `panels` equal panels.
/// When `focus` lies inside, the panel containing it is split geometrically
/// towards it, for integrands with an algebraic cusp there.
pub fn graded_axis(r: f64, panels: usize, order: usize, focus: Option<f64>) -> Vec<(f64, f64)> {
    let gl = gauss_legendre(order);
    let fine = gauss_legendre(GRADED_ORDER);
    let h = 2.0 * r / panels as f64;
    let mut axis = Vec::new();
    for p in 0..panels {
        let a = -r + h * p as f64;
        let b = a + h;
        match focus {
            Some(c) if c > a && c < b => {
                let mut cuts = Vec::with_capacity(2 * GRADING_LEVELS + 3);
                for j in 0..=GRADING_LEVELS {
                    cuts.push(c - (c - a) * GRADING_RATIO.powi(j as i32));
                }
                cuts.push(c);
                for j in (0..=GRADING_LEVELS).rev() {
                    cuts.push(c + (b - c) * GRADING_RATIO.powi(j as i32));
                }
                for w in cuts.windows(2) {
                    axis.extend(fine.mapped(w[0], w[1]));
                }
            }
            _ => axis.extend(gl.mapped(a, b)),
        }
    }
    axis
}

/// Tensor product of one-dimensional rules: flattened points and weights.
pub fn tensor_product(axes: &[Vec<(f64, f64)>]) -> (Vec<f64>, Vec<f64>) {
    let d = axes.len();
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut points = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let mut w = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            points.push(axes[k][i].0);
            w *= axes[k][i].1;
        }
        weights.push(w);
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    (points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_polynomials() {
        for n in [1usize, 2, 5, 16, 64] {
            let gl = GaussLegendre::new(n);
            assert!((gl.weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for k in 0..(2 * n) {
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                let got = gl.integrate(&|x: f64| x.powi(k as i32), -1.0, 1.0);
                assert!((got - exact).abs() < 1e-13, "n={n} k={k} got={got}");
            }
        }
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let gl = GaussLegendre::new(33);
        for w in gl.nodes.windows(2) {
            assert!(w[0] < w[1]);
        }
        for i in 0..33 {
            assert!((gl.nodes[i] + gl.nodes[32 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn adaptive_handles_an_interior_kink() {
        let f = |x: f64| (x - 0.3141).abs().powf(0.6);
        let exact = (0.3141f64.powf(1.6) + 0.6859f64.powf(1.6)) / 1.6;
        let r = integrate_norm_power(&|x: f64| (x - 0.3141).powi(2), 0.6, 0.0, 1.0, AdaptiveOptions::default());
        assert!(r.converged);
        assert!((r.value - exact).abs() < 1e-13, "{} vs {exact}", r.value);
        let plain = integrate_adaptive(&f, &[0.0, 1.0], AdaptiveOptions::default());
        assert!((plain.value - exact).abs() < 1e-9);
    }

    #[test]
    fn kink_location_is_resolved_to_roundoff() {
        let pts = near_zero_minima(&|x: f64| (x - 0.123456789).abs(), 0.0, 1.0);
        assert_eq!(pts.len(), 1);
        assert!((pts[0] - 0.123456789).abs() < 1e-14);
        assert!(near_zero_minima(&|x: f64| 1.0 + x, 0.0, 1.0).is_empty());
    }

    #[test]
    fn smooth_integrand_converges_in_one_panel() {
        let r = integrate_adaptive(&|x: f64| x.exp(), &[0.0, 1.0], AdaptiveOptions::default());
        assert_eq!(r.panels, 1);
        assert!((r.value - (1f64.exp() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn tensor_rule_integrates_a_gaussian() {
        let (pts, w) = tensor_rule(2, 8.0, 8, 12);
        let total: f64 = pts.chunks(2).zip(&w).map(|(p, w)| w * (-(p[0] * p[0] + p[1] * p[1])).exp()).sum();
        assert!((total - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn graded_axis_resolves_a_cusp() {
        // int_{-1}^{1} |x - 0.3|^{0.4} dx
        let exact = (0.7f64.powf(1.4) + 1.3f64.powf(1.4)) / 1.4;
        let f = |x: f64| (x - 0.3).abs().powf(0.4);
        let sum = |axis: &[(f64, f64)]| axis.iter().map(|(x, w)| w * f(*x)).sum::<f64>();
        let plain = sum(&graded_axis(1.0, 4, 10, None));
        let graded = sum(&graded_axis(1.0, 4, 10, Some(0.3)));
        assert!((graded - exact).abs() < 1e-5 * exact);
        assert!((graded - exact).abs() < 0.01 * (plain - exact).abs());
        assert_eq!(graded_axis(1.0, 4, 10, Some(3.0)), graded_axis(1.0, 4, 10, None));
    }
}
