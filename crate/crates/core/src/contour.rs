//! Active-contour segmentation: an edge-energy map drives a diffused
//! gradient-vector-flow field, and a closed snake seeded from the
//! localization box evolves under that field until it locks onto the
//! nerve boundary.

use crate::detector::Frame;
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Per-pixel scalar field; used for edge energy and probability maps.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<EdgeMap> {
        if values.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "edge map {}×{} needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        Ok(EdgeMap { width, height, values })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Dense 2-D vector field over the image grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl VectorField {
    /// Bilinear sample with coordinates clamped into the grid.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let idx = |xx: usize, yy: usize| yy * self.width + xx;
        let lerp2 = |f: &[f64]| {
            let top = f[idx(x0, y0)] * (1.0 - fx) + f[idx(x1, y0)] * fx;
            let bot = f[idx(x0, y1)] * (1.0 - fx) + f[idx(x1, y1)] * fx;
            top * (1.0 - fy) + bot * fy
        };
        (lerp2(&self.u), lerp2(&self.v))
    }
}

/// Closed polygonal contour.
#[derive(Debug, Clone)]
pub struct Snake {
    pub points: Vec<(f64, f64)>,
}

impl Snake {
    /// Places `n` vertices evenly along the perimeter of an axis-aligned box.
    pub fn from_box(x: f64, y: f64, w: f64, h: f64, n: usize) -> Snake {
        let corners = [(x, y), (x + w, y), (x + w, y + h), (x, y + h)];
        let perimeter = 2.0 * (w + h);
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let mut s = perimeter * i as f64 / n as f64;
            let mut side = 0usize;
            loop {
                let len = if side % 2 == 0 { w } else { h };
                if s <= len || side == 3 {
                    break;
                }
                s -= len;
                side += 1;
            }
            let (cx, cy) = corners[side];
            let (nx, ny) = corners[(side + 1) % 4];
            let len = if side % 2 == 0 { w } else { h };
            let t = (s / len).min(1.0);
            points.push((cx + (nx - cx) * t, cy + (ny - cy) * t));
        }
        Snake { points }
    }

    /// Signed area via the shoelace formula (positive for counterclockwise
    /// in image coordinates).
    pub fn area(&self) -> f64 {
        let n = self.points.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (x0, y0) = self.points[i];
            let (x1, y1) = self.points[(i + 1) % n];
            acc += x0 * y1 - x1 * y0;
        }
        acc.abs() * 0.5
    }

    fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let (x0, y0) = self.points[i];
                let (x1, y1) = self.points[(i + 1) % n];
                ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
            })
            .sum()
    }

    /// Redistributes vertices uniformly by arc length at roughly `spacing`
    /// pixels apart, never dropping below 8 vertices.
    fn resampled(&self, spacing: f64) -> Snake {
        let perimeter = self.perimeter();
        let m = ((perimeter / spacing).round() as usize).max(8);
        let n = self.points.len();
        let mut points = Vec::with_capacity(m);
        let step = perimeter / m as f64;
        let mut seg = 0usize;
        let mut seg_start = 0.0;
        let seg_len = |i: usize| {
            let (x0, y0) = self.points[i];
            let (x1, y1) = self.points[(i + 1) % n];
            ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
        };
        let mut cur_len = seg_len(0);
        for k in 0..m {
            let target = step * k as f64;
            while target > seg_start + cur_len && seg + 1 < n {
                seg_start += cur_len;
                seg += 1;
                cur_len = seg_len(seg);
            }
            let t = if cur_len > 0.0 { ((target - seg_start) / cur_len).clamp(0.0, 1.0) } else { 0.0 };
            let (x0, y0) = self.points[seg];
            let (x1, y1) = self.points[(seg + 1) % n];
            points.push((x0 + (x1 - x0) * t, y0 + (y1 - y0) * t));
        }
        Snake { points }
    }

    fn distinct_points(&self) -> usize {
        let mut count = 0;
        let mut last: Option<(f64, f64)> = None;
        for &p in &self.points {
            match last {
                Some(q) if (p.0 - q.0).abs() < 1e-6 && (p.1 - q.1).abs() < 1e-6 => {}
                _ => {
                    count += 1;
                    last = Some(p);
                }
            }
        }
        count
    }
}

#[derive(Debug, Clone)]
pub struct SnakeParams {
    /// Tension weight (first-derivative smoothing).
    pub tension: f64,
    /// Rigidity weight (second-derivative smoothing).
    pub rigidity: f64,
    /// Time step of the semi-implicit evolution.
    pub step: f64,
    /// Scale applied to the sampled field force.
    pub field_weight: f64,
    /// Smoothness of the diffused field.
    pub gvf_mu: f64,
    pub gvf_iters: usize,
    pub evolve_iters: usize,
    /// Target vertex spacing (px) when the contour is resampled.
    pub resample_spacing: f64,
    /// Mean vertex displacement (px/iteration) below which the snake stops.
    pub converge_tol: f64,
}

impl Default for SnakeParams {
    fn default() -> Self {
        SnakeParams {
            tension: 0.1,
            rigidity: 0.1,
            step: 1.0,
            field_weight: 3.0,
            gvf_mu: 0.2,
            gvf_iters: 400,
            evolve_iters: 500,
            resample_spacing: 2.0,
            converge_tol: 0.05,
        }
    }
}

impl SnakeParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tension", self.tension),
            ("rigidity", self.rigidity),
            ("step", self.step),
            ("field_weight", self.field_weight),
            ("gvf_mu", self.gvf_mu),
            ("resample_spacing", self.resample_spacing),
            ("converge_tol", self.converge_tol),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be finite")));
            }
        }
        if self.tension < 0.0 || self.rigidity < 0.0 {
            return Err(Error::InvalidInput("tension and rigidity must be ≥ 0".into()));
        }
        if self.step <= 0.0 || self.field_weight <= 0.0 || self.gvf_mu <= 0.0 {
            return Err(Error::InvalidInput(
                "step, field_weight and gvf_mu must be positive".into(),
            ));
        }
        if self.resample_spacing <= 0.0 {
            return Err(Error::InvalidInput("resample_spacing must be positive".into()));
        }
        if self.gvf_iters == 0 || self.evolve_iters == 0 {
            return Err(Error::InvalidInput("iteration counts must be positive".into()));
        }
        Ok(())
    }
}

/// Edge-energy map: `(1−weight)·|∇(G_σ∗I)|²` normalized to [0,1], blended
/// with an optional probability map at `weight`.
pub fn edge_map(
    frame: &Frame,
    smoothing_sigma: f64,
    prob_map: Option<&EdgeMap>,
    weight: f64,
) -> Result<EdgeMap> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidInput("blend weight must be in [0, 1]".into()));
    }
    if prob_map.is_none() && weight != 0.0 {
        return Err(Error::InvalidInput(
            "blend weight must be 0 when no probability map is given".into(),
        ));
    }
    if !(smoothing_sigma >= 0.0 && smoothing_sigma.is_finite()) {
        return Err(Error::InvalidInput("smoothing sigma must be ≥ 0".into()));
    }
    if let Some(p) = prob_map {
        if p.width != frame.width || p.height != frame.height {
            return Err(Error::InvalidInput(format!(
                "probability map {}×{} does not match frame {}×{}",
                p.width, p.height, frame.width, frame.height
            )));
        }
    }
    let (w, h) = (frame.width, frame.height);
    let gray: Vec<f64> = frame.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let smooth = gaussian_smooth(&gray, w, h, smoothing_sigma);
    let (gx, gy) = central_gradient(&smooth, w, h);
    let mut energy: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).collect();
    let max = energy.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for e in &mut energy {
            *e /= max;
        }
    }
    if let Some(p) = prob_map {
        for (e, &pv) in energy.iter_mut().zip(&p.values) {
            *e = (1.0 - weight) * *e + weight * pv;
        }
    }
    EdgeMap::new(w, h, energy)
}

/// Separable Gaussian blur with replicated borders; sigma 0 is the identity.
fn gaussian_smooth(img: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + ki as isize - radius, w);
                acc += k * img[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + ki as isize - radius, h);
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Central differences with replicated borders.
fn central_gradient(img: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx[y * w + x] = (img[y * w + xp] - img[y * w + xm]) / 2.0;
            gy[y * w + x] = (img[yp * w + x] - img[ym * w + x]) / 2.0;
        }
    }
    (gx, gy)
}

/// Diffuses the edge gradient into a gradient-vector-flow field with the
/// default stable time step; returns the field and the per-iteration update
/// residual (max absolute component change).
pub fn gvf_field(e: &EdgeMap, mu: f64, iters: usize) -> Result<(VectorField, Vec<f64>)> {
    // max |∇e|² bounds the reaction term; folding it into the step keeps the
    // iteration non-expansive so the residual cannot grow.
    let (ex, ey) = central_gradient(&e.values, e.width, e.height);
    let b_max = ex.iter().zip(&ey).map(|(a, b)| a * a + b * b).fold(0.0f64, f64::max);
    let dt = 1.0 / (4.0 * mu + b_max).max(1e-12);
    let dt = dt.min(0.25 / mu);
    gvf_field_with_step(e, mu, iters, dt)
}

/// As [`gvf_field`] with an explicit time step; steps beyond the 1/(4μ)
/// stability bound are rejected.
pub fn gvf_field_with_step(
    e: &EdgeMap,
    mu: f64,
    iters: usize,
    dt: f64,
) -> Result<(VectorField, Vec<f64>)> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidInput("gvf mu must be positive".into()));
    }
    if !(dt > 0.0) || dt > 0.25 / mu + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "unstable gvf time step {dt}: must satisfy dt ≤ 1/(4·mu) = {}",
            0.25 / mu
        )));
    }
    let (w, h) = (e.width, e.height);
    let (ex, ey) = central_gradient(&e.values, w, h);
    let b: Vec<f64> = ex.iter().zip(&ey).map(|(a, b)| a * a + b * b).collect();
    let mut u = ex.clone();
    let mut v = ey.clone();
    let mut u_next = vec![0.0; w * h];
    let mut v_next = vec![0.0; w * h];
    let mut residuals = Vec::with_capacity(iters);
    for _ in 0..iters {
        let mut max_change = 0.0f64;
        for y in 0..h {
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            for x in 0..w {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let i = y * w + x;
                let lap_u = u[y * w + xm] + u[y * w + xp] + u[ym * w + x] + u[yp * w + x]
                    - 4.0 * u[i];
                let lap_v = v[y * w + xm] + v[y * w + xp] + v[ym * w + x] + v[yp * w + x]
                    - 4.0 * v[i];
                let nu = u[i] + dt * (mu * lap_u - (u[i] - ex[i]) * b[i]);
                let nv = v[i] + dt * (mu * lap_v - (v[i] - ey[i]) * b[i]);
                max_change = max_change.max((nu - u[i]).abs()).max((nv - v[i]).abs());
                u_next[i] = nu;
                v_next[i] = nv;
            }
        }
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
        residuals.push(max_change);
    }
    Ok((VectorField { width: w, height: h, u, v }, residuals))
}

/// Dense LU factorization (no pivoting; the snake system is strictly
/// diagonally dominant).
struct LuSolver {
    n: usize,
    lu: Vec<f64>,
}

impl LuSolver {
    fn factor(mut a: Vec<f64>, n: usize) -> LuSolver {
        for k in 0..n {
            let pivot = a[k * n + k];
            for i in (k + 1)..n {
                let m = a[i * n + k] / pivot;
                a[i * n + k] = m;
                for j in (k + 1)..n {
                    a[i * n + j] -= m * a[k * n + j];
                }
            }
        }
        LuSolver { n, lu: a }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 1..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * b[j];
            }
            b[i] = acc / self.lu[i * n + i];
        }
    }
}

/// `I + step·K` for the closed snake, where `K` applies −tension·x″ +
/// rigidity·x⁗ on the cyclic vertex chain.
fn internal_matrix(n: usize, p: &SnakeParams) -> LuSolver {
    let a = p.tension;
    let b = p.rigidity;
    let g = p.step;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        let im2 = (i + n - 2) % n;
        let im1 = (i + n - 1) % n;
        let ip1 = (i + 1) % n;
        let ip2 = (i + 2) % n;
        m[i * n + i] += 1.0 + g * (2.0 * a + 6.0 * b);
        m[i * n + im1] += g * (-a - 4.0 * b);
        m[i * n + ip1] += g * (-a - 4.0 * b);
        m[i * n + im2] += g * b;
        m[i * n + ip2] += g * b;
    }
    LuSolver::factor(m, n)
}

/// Evolves the snake under the field until the mean vertex displacement
/// falls below the convergence tolerance or the iteration cap is reached.
/// Vertices are clamped to the image bounds and resampled to uniform
/// spacing every 10 iterations. Returns the contour and iterations used.
pub fn evolve_snake(s: &Snake, field: &VectorField, p: &SnakeParams) -> Result<(Snake, usize)> {
    p.validate()?;
    if s.points.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "snake needs at least 8 points, got {}",
            s.points.len()
        )));
    }
    let clamp = |pt: (f64, f64)| {
        (
            pt.0.clamp(0.0, (field.width - 1) as f64),
            pt.1.clamp(0.0, (field.height - 1) as f64),
        )
    };
    let mut snake = Snake { points: s.points.iter().map(|&pt| clamp(pt)).collect() };
    let mut solver = internal_matrix(snake.points.len(), p);
    let mut iterations = 0usize;
    for iter in 1..=p.evolve_iters {
        iterations = iter;
        let n = snake.points.len();
        let mut bx = Vec::with_capacity(n);
        let mut by = Vec::with_capacity(n);
        for &(x, y) in &snake.points {
            let (fu, fv) = field.sample(x, y);
            bx.push(x + p.step * p.field_weight * fu);
            by.push(y + p.step * p.field_weight * fv);
        }
        solver.solve(&mut bx);
        solver.solve(&mut by);
        let mut displacement = 0.0;
        for (i, pt) in snake.points.iter_mut().enumerate() {
            let next = clamp((bx[i], by[i]));
            displacement += ((next.0 - pt.0).powi(2) + (next.1 - pt.1).powi(2)).sqrt();
            *pt = next;
        }
        if displacement / n as f64 < p.converge_tol {
            break;
        }
        if iter % 10 == 0 && iter < p.evolve_iters {
            let resampled = snake.resampled(p.resample_spacing);
            if resampled.distinct_points() < 8 {
                return Err(Error::Degenerate(format!(
                    "contour collapsed to {} distinct points at iteration {iter}",
                    resampled.distinct_points()
                )));
            }
            if resampled.points.len() != snake.points.len() {
                solver = internal_matrix(resampled.points.len(), p);
            }
            snake = resampled;
        }
    }
    Ok((snake, iterations))
}

/// Rasterizes the closed polygon: a pixel is set iff its center lies inside
/// under the even-odd rule.
pub fn snake_to_mask(s: &Snake, width: usize, height: usize) -> Mask {
    let mut mask = Mask::new(width, height);
    let n = s.points.len();
    if n < 3 {
        return mask;
    }
    let mut crossings: Vec<f64> = Vec::new();
    for y in 0..height {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (x0, y0) = s.points[i];
            let (x1, y1) = s.points[(i + 1) % n];
            if (y0 <= yc && yc < y1) || (y1 <= yc && yc < y0) {
                crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        if crossings.is_empty() {
            continue;
        }
        for x in 0..width {
            let xc = x as f64 + 0.5;
            let count = crossings.iter().filter(|&&cx| cx > xc).count();
            if count % 2 == 1 {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Burns the contour outline into a copy of the frame at intensity 255.
pub fn overlay_contour(frame: &Frame, s: &Snake) -> Frame {
    let mut out = frame.clone();
    let n = s.points.len();
    for i in 0..n {
        let (x0, y0) = s.points[i];
        let (x1, y1) = s.points[(i + 1) % n];
        draw_line(&mut out, x0, y0, x1, y1);
    }
    out
}

fn draw_line(frame: &mut Frame, x0: f64, y0: f64, x1: f64, y1: f64) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = (x0 + (x1 - x0) * t).round() as isize;
        let y = (y0 + (y1 - y0) * t).round() as isize;
        if x >= 0 && y >= 0 && (x as usize) < frame.width && (y as usize) < frame.height {
            frame.pixels[y as usize * frame.width + x as usize] = 255;
        }
    }
}
