//! Scalar data fidelities s_j(x, y), their proximal maps, and the pointwise
//! projection-space solve for integral-form fidelities.
//!
//! Every fidelity here is of integral form: S(g; p) = Σ_x s(x, p(x))·area,
//! so the projection-space problem min S(p_ref + m·p) + Σ q·p² factorizes
//! into independent scalar problems, each solved by one proximal evaluation
//! prox(s)(y, τ) = argmin_x s(x) + (x−y)²/(2τ).

use crate::error::{GensartError, Result};

/// Per-pixel field or a scalar broadcast over the detector.
#[derive(Debug, Clone)]
pub enum PixelField {
    Scalar(f64),
    Field(Vec<f64>),
}

impl PixelField {
    pub fn at(&self, i: usize) -> f64 {
        match self {
            PixelField::Scalar(v) => *v,
            PixelField::Field(f) => f[i],
        }
    }

    fn check_len(&self, m: usize, name: &str) -> Result<()> {
        if let PixelField::Field(f) = self {
            if f.len() != m {
                return Err(GensartError::config(format!(
                    "{name} field length {} does not match detector size {m}",
                    f.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum FidelityKind {
    /// s(y) = (y − g)²
    L2,
    /// s(y) = (y − g)²/σ², Gaussian noise of per-pixel deviation σ
    WeightedL2 { sigma: PixelField },
    /// Huber: quadratic core of half-width ν, linear tails
    HuberL1 { nu: f64 },
    /// negative Student's-t log-likelihood, ν² ln(1 + (y−g)²/ν²); non-convex
    StudentT { nu: f64 },
    /// dark-field Poisson counts: ω·KL(g_cont; t·I·y)
    PoissonDark { t: f64, intensity: PixelField },
    /// bright-field Poisson counts: ω·(t·I·e^{−y} + g_cont·y)
    PoissonBright { t: f64, intensity: PixelField },
}

/// A fidelity bound to observed data on one detector.
#[derive(Debug, Clone)]
pub struct FidelitySpec {
    pub kind: FidelityKind,
    /// observed data g^obs; count-density for the Poisson kinds
    pub data: Vec<f64>,
    /// sensitivity-sum field ω (Poisson), 1 elsewhere
    pub omega: PixelField,
    /// measure of one detector pixel, used by `eval`
    pub pixel_area: f64,
}

impl FidelitySpec {
    pub fn new(kind: FidelityKind, data: Vec<f64>) -> Self {
        FidelitySpec {
            kind,
            data,
            omega: PixelField::Scalar(1.0),
            pixel_area: 1.0,
        }
    }

    pub fn with_omega(mut self, omega: Vec<f64>) -> Self {
        self.omega = PixelField::Field(omega);
        self
    }

    pub fn with_pixel_area(mut self, area: f64) -> Self {
        self.pixel_area = area;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.data.len();
        self.omega.check_len(m, "omega")?;
        match &self.kind {
            FidelityKind::L2 => {}
            FidelityKind::WeightedL2 { sigma } => {
                sigma.check_len(m, "sigma")?;
                for i in 0..m {
                    if !(sigma.at(i) > 0.0) {
                        return Err(GensartError::config("sigma must be positive"));
                    }
                }
            }
            FidelityKind::HuberL1 { nu } | FidelityKind::StudentT { nu } => {
                if !(*nu > 0.0) {
                    return Err(GensartError::config("nu must be positive"));
                }
            }
            FidelityKind::PoissonDark { t, intensity }
            | FidelityKind::PoissonBright { t, intensity } => {
                intensity.check_len(m, "intensity")?;
                if !(*t > 0.0) {
                    return Err(GensartError::config("exposure t must be positive"));
                }
                for i in 0..m {
                    if intensity.at(i) < 0.0 {
                        return Err(GensartError::config("intensity must be non-negative"));
                    }
                    if self.data[i] < 0.0 {
                        return Err(GensartError::config("Poisson counts must be non-negative"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Default robustness scale: 20% of the standard deviation of the data.
    pub fn default_nu(data: &[f64]) -> f64 {
        let n = data.len().max(1) as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        0.2 * var.sqrt()
    }

    /// Scalar fidelity value s(i, y).
    pub fn scalar(&self, i: usize, y: f64) -> f64 {
        let g = self.data[i];
        match &self.kind {
            FidelityKind::L2 => (y - g) * (y - g),
            FidelityKind::WeightedL2 { sigma } => {
                let s = sigma.at(i);
                (y - g) * (y - g) / (s * s)
            }
            FidelityKind::HuberL1 { nu } => huber(y - g, *nu),
            FidelityKind::StudentT { nu } => {
                let r = y - g;
                nu * nu * (1.0 + r * r / (nu * nu)).ln()
            }
            FidelityKind::PoissonDark { t, intensity } => {
                self.omega.at(i) * kl_divergence(g, t * intensity.at(i) * y)
            }
            FidelityKind::PoissonBright { t, intensity } => {
                self.omega.at(i) * (t * intensity.at(i) * (-y).exp() + g * y)
            }
        }
    }

    /// Total fidelity Σ_i s(i, p_i)·pixel_area; ∞ is a legal value.
    pub fn eval(&self, p: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, &y) in p.iter().enumerate() {
            acc += self.scalar(i, y);
            if acc.is_infinite() {
                return f64::INFINITY;
            }
        }
        acc * self.pixel_area
    }

    /// prox(s(i,·))(y, τ) = argmin_x s(i, x) + (x−y)²/(2τ).
    pub fn prox(&self, i: usize, y: f64, tau: f64) -> f64 {
        debug_assert!(tau > 0.0);
        let g = self.data[i];
        match &self.kind {
            FidelityKind::L2 => (y + 2.0 * tau * g) / (1.0 + 2.0 * tau),
            FidelityKind::WeightedL2 { sigma } => {
                let s2 = sigma.at(i) * sigma.at(i);
                (s2 * y + 2.0 * tau * g) / (s2 + 2.0 * tau)
            }
            FidelityKind::HuberL1 { nu } => {
                // quadratic branch for |y−g| ≤ ν(1+2τ), linear tails beyond
                let r = y - g;
                let m = r.abs().max(nu * (1.0 + 2.0 * tau));
                y - 2.0 * nu * tau * r / m
            }
            FidelityKind::StudentT { nu } => g + prox_student_t(y - g, *nu, tau),
            FidelityKind::PoissonDark { t, intensity } => {
                let c = self.omega.at(i) * tau * t * intensity.at(i);
                if c == 0.0 {
                    // data carries no information on y
                    return y;
                }
                let b = self.omega.at(i) * tau * g;
                let h = y - c;
                0.5 * (h + (h * h + 4.0 * b).sqrt())
            }
            FidelityKind::PoissonBright { t, intensity } => {
                let a = self.omega.at(i) * tau * t * intensity.at(i);
                let b = self.omega.at(i) * tau * g;
                prox_poisson_bright(y, a, b)
            }
        }
    }
}

/// Huber function: r² inside the core, 2ν|r| − ν² outside.
pub fn huber(r: f64, nu: f64) -> f64 {
    if r.abs() <= nu {
        r * r
    } else {
        2.0 * nu * r.abs() - nu * nu
    }
}

/// KL(b; a) = a − b − b·ln(a/b) with the conventions 0·ln(a/0) = 0 and
/// KL = ∞ for negative arguments or a = 0 < b.
pub fn kl_divergence(b: f64, a: f64) -> f64 {
    if a < 0.0 || b < 0.0 {
        return f64::INFINITY;
    }
    if b == 0.0 {
        return a;
    }
    if a == 0.0 {
        return f64::INFINITY;
    }
    a - b - b * (a / b).ln()
}

/// Stationary points of the Student's-t prox: real roots of
/// (x² + ν²)(x − y) + 2τν²x = 0, compared by objective value; ties break
/// toward the root closest to y.
fn prox_student_t(y: f64, nu: f64, tau: f64) -> f64 {
    let nu2 = nu * nu;
    // x³ − y·x² + ν²(1+2τ)·x − ν²·y = 0
    let roots = cubic_roots(-y, nu2 * (1.0 + 2.0 * tau), -nu2 * y);
    let objective = |x: f64| nu2 * (1.0 + x * x / nu2).ln() + (x - y) * (x - y) / (2.0 * tau);
    let mut best = roots[0];
    let mut best_val = objective(best);
    for &r in &roots[1..] {
        let v = objective(r);
        let tol = 1e-13 * best_val.abs().max(1e-300);
        if v < best_val - tol || ((v - best_val).abs() <= tol && (r - y).abs() < (best - y).abs()) {
            best = r;
            best_val = v;
        }
    }
    best
}

/// Real roots of x³ + a·x² + b·x + c (one or three), via the trigonometric /
/// Cardano formulas on the depressed cubic, with one Newton polish per root.
pub fn cubic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    // depress: x = t − a/3  ⇒  t³ + p·t + q = 0
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let shift = -a / 3.0;
    let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        let u = cbrt(-q / 2.0 + s);
        let v = cbrt(-q / 2.0 - s);
        vec![u + v + shift]
    } else if p == 0.0 {
        vec![shift + cbrt(-q)]
    } else {
        // three real roots (counting multiplicity)
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect()
    };
    for r in roots.iter_mut() {
        let f = ((*r + a) * *r + b) * *r + c;
        let df = (3.0 * *r + 2.0 * a) * *r + b;
        if df.abs() > 1e-300 {
            *r -= f / df;
        }
    }
    roots
}

fn cbrt(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(1.0 / 3.0)
    }
}

/// Bright-field prox optimality condition ψ(z) = b − a·e^{−z} + (z − y) = 0
/// (a = ωτtI, b = ωτ·g_cont). ψ is strictly increasing, so Newton from y
/// with a bisection safeguard never fails.
fn prox_poisson_bright(y: f64, a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return y;
    }
    let psi = |z: f64| b - a * (-z).exp() + (z - y);
    let mut lo = y - b;
    let mut hi = y + (a * (-(y - b)).exp()).min(1e12) + 1.0;
    while psi(lo) > 0.0 {
        lo -= (y - lo).abs() + 1.0;
    }
    while psi(hi) < 0.0 {
        hi += (hi - y).abs() + 1.0;
    }
    let mut z = y.clamp(lo, hi);
    for _ in 0..30 {
        let f = psi(z);
        if f.abs() <= 1e-14 * (1.0 + y.abs()) {
            return z;
        }
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let df = a * (-z).exp() + 1.0;
        let mut z_new = z - f / df;
        if !(z_new > lo && z_new < hi) {
            z_new = 0.5 * (lo + hi);
        }
        z = z_new;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if psi(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + y.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Pointwise projection-space solve: Δp(i) = argmin_y s(i, p_ref(i) + m(i)·y)
/// + q(i)·y², zero where the multiplier m(i) vanishes. Substituting
/// z = p_ref + m·y turns each pixel into one proximal evaluation with
/// stepsize τ = m²/(2q).
pub fn solve_scaled(spec: &FidelitySpec, p_ref: &[f64], m: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p_ref.len()];
    for i in 0..p_ref.len() {
        if m[i] != 0.0 && q[i] > 0.0 {
            let tau = m[i] * m[i] / (2.0 * q[i]);
            let z = spec.prox(i, p_ref[i], tau);
            out[i] = (z - p_ref[i]) / m[i];
        }
    }
    out
}

/// Projection-space solve of the L²-penalized problem: per pixel with
/// ũ(x) > 0, Δp(x) = ũ^{-1/2}·(prox(s(x,·))(p_ref(x), ũ(x)/(2α)) − p_ref(x)),
/// zero where ũ vanishes.
pub fn solve_projection_problem(
    spec: &FidelitySpec,
    p_ref: &[f64],
    u_tilde: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(GensartError::config("alpha must be positive"));
    }
    spec.validate()?;
    let m: Vec<f64> = u_tilde
        .iter()
        .map(|&u| if u > 0.0 { u.sqrt() } else { 0.0 })
        .collect();
    let q = vec![alpha; p_ref.len()];
    Ok(solve_scaled(spec, p_ref, &m, &q))
}

/// Turn per-pixel counts with detection sensitivities ω_i into the
/// count-density field g_cont and the sensitivity sum ω:
/// ω = Σ ω_i, g_cont = (Σ counts_i·ω_i/∫ω_i)/ω with 0/0 = 0.
pub fn bin_counts_to_density(
    counts: &[f64],
    sensitivities: &[Vec<f64>],
    pixel_area: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if counts.len() != sensitivities.len() {
        return Err(GensartError::config("one sensitivity field per count required"));
    }
    if counts.iter().any(|&c| c < 0.0) {
        return Err(GensartError::config("counts must be non-negative"));
    }
    let m = sensitivities.first().map(|s| s.len()).unwrap_or(0);
    let mut omega = vec![0.0; m];
    let mut num = vec![0.0; m];
    for (ci, wi) in counts.iter().zip(sensitivities) {
        let integral: f64 = wi.iter().sum::<f64>() * pixel_area;
        for x in 0..m {
            omega[x] += wi[x];
            if integral > 0.0 {
                num[x] += ci * wi[x] / integral;
            }
        }
    }
    let g_cont = num
        .iter()
        .zip(&omega)
        .map(|(&n, &w)| if w > 0.0 { n / w } else { 0.0 })
        .collect();
    Ok((g_cont, omega))
}
