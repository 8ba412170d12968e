//! Monte-Carlo lab for the optimal compensator scale under a Gaussian
//! gradient-moment model.
//!
//! Samples are `g_b = mu_b + sigma_b * z_b` and `g_a = mu_a + sigma_a * z_a`
//! with `mu_b = g_star - delta_b` and independent standard normal `z`. The
//! noise may be isotropic (one sigma for every coordinate) or diagonal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples drawn from one ChaCha stream before moving to the next stream.
pub const STREAM_CHUNK: usize = 4096;
/// Default number of grid points for the brute-force oracle.
pub const DEFAULT_RESOLUTION: usize = 2001;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `<a, b> / (|a| |b|)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let (na, nb) = (norm_sq(a), norm_sq(b));
    if na == 0.0 {
        return Err(Error::ZeroVector("cosine_similarity lhs"));
    }
    if nb == 0.0 {
        return Err(Error::ZeroVector("cosine_similarity rhs"));
    }
    Ok((dot(a, b) / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradMomentModel {
    pub g_star: Vec<f64>,
    pub delta_b: Vec<f64>,
    pub mu_a: Vec<f64>,
    /// Per-coordinate noise standard deviations.
    pub sigma_b: Vec<f64>,
    pub sigma_a: Vec<f64>,
}

impl GradMomentModel {
    pub fn isotropic(g_star: Vec<f64>, delta_b: Vec<f64>, mu_a: Vec<f64>, sigma_b: f64, sigma_a: f64) -> Result<Self> {
        let d = g_star.len();
        Self::diagonal(g_star, delta_b, mu_a, vec![sigma_b; d], vec![sigma_a; d])
    }

    pub fn diagonal(
        g_star: Vec<f64>,
        delta_b: Vec<f64>,
        mu_a: Vec<f64>,
        sigma_b: Vec<f64>,
        sigma_a: Vec<f64>,
    ) -> Result<Self> {
        let d = g_star.len();
        if d == 0 {
            return Err(Error::invalid("moment model needs d >= 1"));
        }
        for (name, v) in [
            ("delta_b", &delta_b),
            ("mu_a", &mu_a),
            ("sigma_b", &sigma_b),
            ("sigma_a", &sigma_a),
        ] {
            if v.len() != d {
                return Err(Error::invalid(format!("{name} has length {}, expected {d}", v.len())));
            }
        }
        let all = g_star
            .iter()
            .chain(&delta_b)
            .chain(&mu_a)
            .chain(&sigma_b)
            .chain(&sigma_a);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::invalid("moment model values must be finite"));
        }
        if sigma_b.iter().chain(&sigma_a).any(|&s| s < 0.0) {
            return Err(Error::invalid("noise standard deviations must be >= 0"));
        }
        Ok(Self {
            g_star,
            delta_b,
            mu_a,
            sigma_b,
            sigma_a,
        })
    }

    pub fn dim(&self) -> usize {
        self.g_star.len()
    }

    pub fn mu_b(&self) -> Vec<f64> {
        self.g_star.iter().zip(&self.delta_b).map(|(g, d)| g - d).collect()
    }

    pub fn trace_var_a(&self) -> f64 {
        norm_sq(&self.sigma_a)
    }

    pub fn trace_var_b(&self) -> f64 {
        norm_sq(&self.sigma_b)
    }

    /// Whether `|delta_b| <= c * sqrt(d)`.
    pub fn check_bias_bound(&self, c: f64) -> Result<()> {
        let norm = norm_sq(&self.delta_b).sqrt();
        let bound = c * (self.dim() as f64).sqrt();
        if norm > bound {
            return Err(Error::invalid(format!(
                "|delta_b| = {norm} exceeds C*sqrt(d) = {bound}"
            )));
        }
        Ok(())
    }

    /// Population error `E|g_b + lambda g_a - g_star|^2`.
    pub fn expected_error_analytic(&self, lambda: f64) -> f64 {
        let bias: f64 = self
            .mu_a
            .iter()
            .zip(&self.delta_b)
            .map(|(a, d)| (lambda * a - d).powi(2))
            .sum();
        bias + self.trace_var_b() + lambda * lambda * self.trace_var_a()
    }
}

/// `<delta_b, mu_a> / (|mu_a|^2 + tr Var(g_a))`.
pub fn lambda_star_analytic(model: &GradMomentModel) -> Result<f64> {
    let denom = norm_sq(&model.mu_a) + model.trace_var_a();
    if denom <= 0.0 {
        return Err(Error::DegenerateCompensator);
    }
    Ok(dot(&model.delta_b, &model.mu_a) / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRatio {
    pub lambda_approx: f64,
    pub eta: f64,
    pub cos_theta: f64,
    pub kappa: f64,
    pub rho: f64,
}

/// Rewrites the optimum as `eta * |mu_b| / |mu_a|` with
/// `eta = kappa * cos_theta / (1 + rho)`.
pub fn norm_ratio_approx(model: &GradMomentModel) -> Result<NormRatio> {
    let mu_b = model.mu_b();
    let nb = norm_sq(&mu_b).sqrt();
    let na = norm_sq(&model.mu_a).sqrt();
    if nb == 0.0 {
        return Err(Error::ZeroVector("mu_b"));
    }
    if na == 0.0 {
        return Err(Error::ZeroVector("mu_a"));
    }
    let nd = norm_sq(&model.delta_b).sqrt();
    // An unbiased baseline has no direction; its projection is zero.
    let cos_theta = if nd == 0.0 {
        0.0
    } else {
        dot(&model.delta_b, &model.mu_a) / (nd * na)
    };
    let kappa = nd / nb;
    let rho = model.trace_var_a() / (na * na);
    let eta = kappa * cos_theta / (1.0 + rho);
    Ok(NormRatio {
        lambda_approx: eta * nb / na,
        eta,
        cos_theta,
        kappa,
        rho,
    })
}

/// Deterministic sample stream; sample `i` always comes from stream
/// `i / STREAM_CHUNK` of a ChaCha8 generator keyed by `seed`, so chunked
/// parallel evaluation reproduces the sequential draws.
pub struct GradientSamples<'a> {
    model: &'a GradMomentModel,
    mu_b: Vec<f64>,
    rng: ChaCha8Rng,
    seed: u64,
    next: usize,
    end: usize,
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

impl<'a> GradientSamples<'a> {
    fn range(model: &'a GradMomentModel, seed: u64, start: usize, end: usize) -> Self {
        debug_assert!(start.is_multiple_of(STREAM_CHUNK));
        Self {
            model,
            mu_b: model.mu_b(),
            rng: chunk_rng(seed, start / STREAM_CHUNK),
            seed,
            next: start,
            end,
        }
    }

    /// Fill `g_b` and `g_a` with the next pair, or return `false` when done.
    pub fn next_into(&mut self, g_b: &mut [f64], g_a: &mut [f64]) -> bool {
        if self.next >= self.end {
            return false;
        }
        if self.next.is_multiple_of(STREAM_CHUNK) {
            self.rng = chunk_rng(self.seed, self.next / STREAM_CHUNK);
        }
        for (out, (m, s)) in g_b.iter_mut().zip(self.mu_b.iter().zip(&self.model.sigma_b)) {
            *out = m + s * self.rng.sample::<f64, _>(StandardNormal);
        }
        for (out, (m, s)) in g_a.iter_mut().zip(self.model.mu_a.iter().zip(&self.model.sigma_a)) {
            *out = m + s * self.rng.sample::<f64, _>(StandardNormal);
        }
        self.next += 1;
        true
    }
}

impl Iterator for GradientSamples<'_> {
    type Item = (Vec<f64>, Vec<f64>);

    fn next(&mut self) -> Option<Self::Item> {
        let d = self.model.dim();
        let (mut b, mut a) = (vec![0.0; d], vec![0.0; d]);
        self.next_into(&mut b, &mut a).then_some((b, a))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.end - self.next;
        (left, Some(left))
    }
}

/// `n` independent `(g_b, g_a)` pairs.
pub fn sample_gradient_pairs(model: &GradMomentModel, n: usize, seed: u64) -> Result<GradientSamples<'_>> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    Ok(GradientSamples::range(model, seed, 0, n))
}

/// Mean over samples of `|g_b + lambda g_a - g_star|^2`.
pub fn expected_error_empirical(samples: &[(Vec<f64>, Vec<f64>)], g_star: &[f64], lambda: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let total: f64 = samples
        .iter()
        .map(|(b, a)| {
            b.iter()
                .zip(a)
                .zip(g_star)
                .map(|((b, a), g)| (b + lambda * a - g).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// Sufficient statistics of the empirical error, which is the quadratic
/// `sq_residual + 2 lambda cross + lambda^2 sq_aux` in lambda.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub n: usize,
    /// mean `|g_b - g_star|^2`
    pub sq_residual: f64,
    /// mean `<g_b - g_star, g_a>`
    pub cross: f64,
    /// mean `|g_a|^2`
    pub sq_aux: f64,
    /// mean `cos(g_b, g_star)` over samples where both are nonzero
    pub cos_b_star: f64,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    n: usize,
    rr: f64,
    ra: f64,
    aa: f64,
    cos: f64,
    cos_n: usize,
}

impl Sums {
    fn push(&mut self, g_b: &[f64], g_a: &[f64], g_star: &[f64], star_norm: f64) {
        let (mut rr, mut ra, mut aa, mut bs, mut bb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((b, a), g) in g_b.iter().zip(g_a).zip(g_star) {
            let r = b - g;
            rr += r * r;
            ra += r * a;
            aa += a * a;
            bs += b * g;
            bb += b * b;
        }
        self.n += 1;
        self.rr += rr;
        self.ra += ra;
        self.aa += aa;
        if bb > 0.0 && star_norm > 0.0 {
            self.cos += bs / (bb.sqrt() * star_norm);
            self.cos_n += 1;
        }
    }

    fn merge(mut self, o: Sums) -> Sums {
        self.n += o.n;
        self.rr += o.rr;
        self.ra += o.ra;
        self.aa += o.aa;
        self.cos += o.cos;
        self.cos_n += o.cos_n;
        self
    }
}

impl ErrorCurve {
    /// Accumulate the statistics from `n` samples of `model`, in parallel
    /// over stream chunks. Chunk sums are combined in index order, so the
    /// result does not depend on the thread count.
    pub fn from_model(model: &GradMomentModel, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("need at least one sample"));
        }
        let d = model.dim();
        let star_norm = norm_sq(&model.g_star).sqrt();
        let chunks = n.div_ceil(STREAM_CHUNK);
        let parts: Vec<Sums> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * STREAM_CHUNK;
                let mut it = GradientSamples::range(model, seed, start, (start + STREAM_CHUNK).min(n));
                let (mut b, mut a) = (vec![0.0; d], vec![0.0; d]);
                let mut s = Sums::default();
                while it.next_into(&mut b, &mut a) {
                    s.push(&b, &a, &model.g_star, star_norm);
                }
                s
            })
            .collect();
        let s = parts.into_iter().fold(Sums::default(), Sums::merge);
        Ok(Self::from_sums(s))
    }

    pub fn from_samples(samples: &[(Vec<f64>, Vec<f64>)], g_star: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no samples"));
        }
        let star_norm = norm_sq(g_star).sqrt();
        let mut s = Sums::default();
        for (b, a) in samples {
            s.push(b, a, g_star, star_norm);
        }
        Ok(Self::from_sums(s))
    }

    fn from_sums(s: Sums) -> Self {
        let n = s.n as f64;
        Self {
            n: s.n,
            sq_residual: s.rr / n,
            cross: s.ra / n,
            sq_aux: s.aa / n,
            cos_b_star: if s.cos_n == 0 { 0.0 } else { s.cos / s.cos_n as f64 },
        }
    }

    pub fn error(&self, lambda: f64) -> f64 {
        self.sq_residual + 2.0 * lambda * self.cross + lambda * lambda * self.sq_aux
    }

    /// `(lambda, error)` at `resolution` evenly spaced points of `[lo, hi]`.
    pub fn sample_grid(&self, lo: f64, hi: f64, resolution: usize) -> Vec<(f64, f64)> {
        grid(lo, hi, resolution).map(|l| (l, self.error(l))).collect()
    }
}

fn grid(lo: f64, hi: f64, resolution: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (resolution - 1) as f64;
    (0..resolution).map(move |i| if i + 1 == resolution { hi } else { lo + step * i as f64 })
}

fn check_grid(lo: f64, hi: f64, resolution: usize) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("invalid lambda range [{lo}, {hi}]")));
    }
    if resolution < 3 {
        return Err(Error::invalid(format!(
            "grid resolution must be >= 3, got {resolution}"
        )));
    }
    Ok(())
}

/// Brute-force arg-min of `error` over an evenly spaced grid. A minimizer on
/// either endpoint means the bracket did not contain the optimum.
pub fn grid_argmin(error: impl Fn(f64) -> f64, lo: f64, hi: f64, resolution: usize) -> Result<f64> {
    check_grid(lo, hi, resolution)?;
    let mut best = (0, lo, f64::INFINITY);
    for (i, l) in grid(lo, hi, resolution).enumerate() {
        let e = error(l);
        if e < best.2 {
            best = (i, l, e);
        }
    }
    if best.0 == 0 || best.0 + 1 == resolution {
        return Err(Error::BracketTooSmall(best.1));
    }
    Ok(best.1)
}

/// Grid arg-min of [`expected_error_empirical`] over explicit samples.
pub fn lambda_star_grid_oracle(
    samples: &[(Vec<f64>, Vec<f64>)],
    g_star: &[f64],
    range: (f64, f64),
    resolution: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    grid_argmin(
        |l| expected_error_empirical(samples, g_star, l).expect("nonempty"),
        range.0,
        range.1,
        resolution,
    )
}

/// Grid arg-min over `[center - 1, center + 1]`, doubling the half-width
/// around the current best guess whenever the minimizer lands on an endpoint.
pub fn adaptive_grid_oracle(curve: &ErrorCurve, center: f64, resolution: usize) -> Result<(f64, (f64, f64))> {
    let mut half = 1.0;
    let mut center = center;
    for _ in 0..64 {
        let range = (center - half, center + half);
        match grid_argmin(|l| curve.error(l), range.0, range.1, resolution) {
            Ok(l) => return Ok((l, range)),
            Err(Error::BracketTooSmall(edge)) => {
                center = edge;
                half *= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::BracketTooSmall(center))
}

/// Random model with an O(1) optimum: `delta_b` is a scaled copy of `mu_a`
/// plus an orthogonal part, and the noise ratio is drawn from `[0.1, 1]`.
pub fn random_model(d: usize, seed: u64) -> Result<GradMomentModel> {
    if d == 0 {
        return Err(Error::invalid("moment model needs d >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal =
        |scale: f64| -> Vec<f64> { (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect() };
    let g_star = normal(1.0);
    let mu_a = normal(1.0);
    let mut orth = normal(0.5);
    let mu_a_sq = norm_sq(&mu_a);
    let proj = dot(&orth, &mu_a) / mu_a_sq;
    for (o, a) in orth.iter_mut().zip(&mu_a) {
        *o -= proj * a;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let scale = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let delta_b = mu_a.iter().zip(&orth).map(|(a, o)| scale * a + o).collect();
    let rho: f64 = rng.gen_range(0.1..1.0);
    let sigma_a = (rho * mu_a_sq / d as f64).sqrt();
    let sigma_b = rng.gen_range(0.0..1.0);
    GradMomentModel::isotropic(g_star, delta_b, mu_a, sigma_b, sigma_a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub model: GradMomentModel,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub lambda_star_analytic: f64,
    pub lambda_star_oracle: f64,
    pub relative_error: f64,
    pub grid_range: (f64, f64),
    pub grid_resolution: usize,
    pub norm_ratio: Option<NormRatio>,
    pub curve: ErrorCurve,
    /// `(lambda, empirical error)` pairs spanning the grid.
    pub mse_curve: Vec<(f64, f64)>,
}

/// Sample `n` pairs from `model`, locate the empirical optimum on a grid and
/// compare it with the closed form.
pub fn run_experiment(model: &GradMomentModel, n: usize, seed: u64, resolution: usize) -> Result<TheoryReport> {
    let analytic = lambda_star_analytic(model)?;
    let curve = ErrorCurve::from_model(model, n, seed)?;
    let (oracle, range) = adaptive_grid_oracle(&curve, analytic, resolution)?;
    Ok(TheoryReport {
        d: model.dim(),
        n,
        seed,
        lambda_star_analytic: analytic,
        lambda_star_oracle: oracle,
        relative_error: (analytic - oracle).abs() / analytic.abs().max(1e-6),
        grid_range: range,
        grid_resolution: resolution,
        norm_ratio: norm_ratio_approx(model).ok(),
        mse_curve: curve.sample_grid(range.0, range.1, 101),
        curve,
        model: model.clone(),
    })
}
