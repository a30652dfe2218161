//! Closed-form GenSART updates: forward-project the reference object, solve a
//! low-dimensional problem in projection space, back-project the increment.
//!
//! Each scheme below computes the minimizer of one regularized Kaczmarz step
//! for its penalty family (up to the stated inner-solver tolerances), using
//! only pointwise detector arithmetic between the forward and backward
//! projector passes.

use crate::cg::conjugate_gradients;
use crate::detgrad::DetectorGradient;
use crate::error::{GensartError, Result};
use crate::fidelity::{solve_scaled, FidelityKind, FidelitySpec};
use crate::geometry::{BeamMode, ProjectionView, ViewKind};
use crate::grid::{omega_contains, VolumeGrid};
use crate::projector::{masked_divide, Projector, UnitProjections};

/// Penalty families admissible for projection-space computation.
#[derive(Debug, Clone)]
pub enum PenaltyFamily {
    /// α‖f − f_ref‖²
    L2,
    /// α‖w^{-1/2}(f − f_ref)‖² with a positive volume weight w
    WeightedL2 { w: Vec<f64> },
    /// α‖f − f_ref‖² with the fidelity applied to P(λ·f)
    WeightedProjector { lambda: Vec<f64> },
    /// α[(1−γ)‖w_P^{1/2}(f−f_ref)‖² + γ‖∇(f−f_ref)‖²]
    SobolevW12 { gamma: f64 },
    /// α‖f − f_ref‖_q^q, parallel beams only
    Lq { q: f64 },
}

#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub alpha: f64,
}

impl PenaltySpec {
    pub fn l2(alpha: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::L2,
            alpha,
        }
    }

    pub fn validate(&self, view: &TomoView) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(GensartError::config("penalty alpha must be positive"));
        }
        let grid = &view.projector.grid;
        let omega = &view.projector.omega;
        let n = grid.len();
        match &self.family {
            PenaltyFamily::L2 => {}
            PenaltyFamily::WeightedL2 { w } => {
                if w.len() != n {
                    return Err(GensartError::config("weight field does not match grid"));
                }
                for (k, &wk) in w.iter().enumerate() {
                    if omega_contains(grid, omega, k) && !(wk > 0.0 && wk.is_finite()) {
                        return Err(GensartError::config("weighted-L2 weight must be positive on Ω"));
                    }
                }
            }
            PenaltyFamily::WeightedProjector { lambda } => {
                if lambda.len() != n {
                    return Err(GensartError::config("lambda field does not match grid"));
                }
                for (k, &lk) in lambda.iter().enumerate() {
                    if omega_contains(grid, omega, k) && !(lk != 0.0 && lk.is_finite()) {
                        return Err(GensartError::config(
                            "weighted-projector lambda must be non-zero on Ω",
                        ));
                    }
                }
            }
            PenaltyFamily::SobolevW12 { gamma } => {
                if !(0.0..=1.0).contains(gamma) {
                    return Err(GensartError::config("gamma must lie in [0, 1]"));
                }
            }
            PenaltyFamily::Lq { q } => {
                if !(*q >= 1.0) {
                    return Err(GensartError::config("Lq penalty requires q >= 1"));
                }
                if view.projector.geometry.mode == BeamMode::Divergent {
                    return Err(GensartError::config(
                        "Lq penalty is only admissible with parallel geometry",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One view bundled with its cached unit-projections and data fidelity.
#[derive(Debug, Clone)]
pub struct TomoView {
    pub projector: Projector,
    pub units: UnitProjections,
    pub fidelity: FidelitySpec,
}

impl TomoView {
    pub fn new(projector: Projector, fidelity: FidelitySpec) -> Result<Self> {
        fidelity.validate()?;
        if fidelity.data.len() != projector.geometry.detector.len() {
            return Err(GensartError::config("fidelity data does not match detector"));
        }
        let units = projector.unit_projections()?;
        Ok(TomoView {
            projector,
            units,
            fidelity,
        })
    }

    pub fn residual_norm(&self, p_ref: &ProjectionView) -> f64 {
        self.fidelity
            .data
            .iter()
            .zip(&p_ref.values)
            .map(|(g, p)| (g - p) * (g - p))
            .sum::<f64>()
            .sqrt()
    }
}

/// Diagnostics of one GenSART step. `objective` is the projection-space
/// surrogate S(p_ref + m·Δp) + penalty(Δp) after the inner solve — the value
/// the step minimizes — so no extra projector evaluations are spent on it.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub residual: f64,
    pub objective: f64,
    pub update_norm: f64,
    pub inner_iterations: usize,
}

fn pow_masked(units: &UnitProjections, source: &[f64], exponent: f64) -> Vec<f64> {
    source
        .iter()
        .zip(&units.mask)
        .map(|(&v, &m)| if m { v.powf(exponent) } else { 0.0 })
        .collect()
}

fn add_increment(f_ref: &VolumeGrid, incr: &VolumeGrid, scale: Option<&[f64]>) -> VolumeGrid {
    let mut f_new = f_ref.clone();
    match scale {
        None => {
            for (o, d) in f_new.values.iter_mut().zip(&incr.values) {
                *o += d;
            }
        }
        Some(s) => {
            for ((o, d), &sk) in f_new.values.iter_mut().zip(&incr.values).zip(s) {
                *o += sk * d;
            }
        }
    }
    f_new.enforce_support();
    f_new
}

fn diff_norm(a: &VolumeGrid, b: &VolumeGrid) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Ray-averaged multiplier P(w_P·c)/ũ for a volume coefficient c, with both
/// projections discretized the same way so that c ≡ 1 gives exactly 1 on the
/// support.
fn ray_average(view: &TomoView, coeff: &[f64]) -> Result<Vec<f64>> {
    let mut num_vol = view.projector.ray_density_volume();
    for (v, &c) in num_vol.values.iter_mut().zip(coeff) {
        *v *= c;
    }
    let num = view.projector.project(&num_vol)?;
    let den = view.projector.project(&view.projector.ray_density_volume())?;
    Ok(masked_divide(&num.values, &den.values, 1.0))
}

/// L²-penalized GenSART: f_new = f_ref + P*(ũ^{-1/2}·Δp) with Δp from the
/// per-pixel proximal solve; reduces to f_ref + P*((g−Pf_ref)/(ũ+α)) for an
/// L² fidelity.
pub fn gensart_l2(f_ref: &VolumeGrid, view: &TomoView, alpha: f64) -> Result<(VolumeGrid, StepInfo)> {
    PenaltySpec::l2(alpha).validate(view)?;
    let p_ref = view.projector.project(f_ref)?;
    let m = pow_masked(&view.units, &view.units.u_tilde, 0.5);
    let q = vec![alpha; m.len()];
    let dp = solve_scaled(&view.fidelity, &p_ref.values, &m, &q);
    let back = masked_divide(&dp, &view.units.u_tilde, 0.5);
    let incr = view.projector.adjoint(&ProjectionView {
        geometry: view.projector.geometry.clone(),
        kind: ViewKind::Increment,
        values: back,
    })?;
    let f_new = add_increment(f_ref, &incr, None);
    let info = quadratic_step_info(view, &p_ref, &m, &dp, &q, f_ref, &f_new, 0);
    Ok((f_new, info))
}

/// GenSART with weighted projector f ↦ P(λ·f): the multiplier
/// λ_P = P(w_P·λ²)/ũ enters both the fidelity argument and the quadratic
/// penalty weight; the update is scaled by λ.
pub fn gensart_weighted_projector(
    f_ref: &VolumeGrid,
    lambda: &[f64],
    view: &TomoView,
    alpha: f64,
) -> Result<(VolumeGrid, StepInfo)> {
    PenaltySpec {
        family: PenaltyFamily::WeightedProjector {
            lambda: lambda.to_vec(),
        },
        alpha,
    }
    .validate(view)?;
    let mut lf = f_ref.clone();
    for (v, &l) in lf.values.iter_mut().zip(lambda) {
        *v *= l;
    }
    lf.enforce_support();
    let p_ref = view.projector.project(&lf)?;

    let lambda_sq: Vec<f64> = lambda.iter().map(|&l| l * l).collect();
    let lambda_p = ray_average(view, &lambda_sq)?;

    let u_sqrt = pow_masked(&view.units, &view.units.u_tilde, 0.5);
    let m: Vec<f64> = lambda_p.iter().zip(&u_sqrt).map(|(a, b)| a * b).collect();
    let q: Vec<f64> = lambda_p.iter().map(|&l| alpha * l).collect();
    let dp = solve_scaled(&view.fidelity, &p_ref.values, &m, &q);

    let back = masked_divide(&dp, &view.units.u_tilde, 0.5);
    let incr = view.projector.adjoint(&ProjectionView {
        geometry: view.projector.geometry.clone(),
        kind: ViewKind::Increment,
        values: back,
    })?;
    let f_new = add_increment(f_ref, &incr, Some(lambda));
    let info = quadratic_step_info(view, &p_ref, &m, &dp, &q, f_ref, &f_new, 0);
    Ok((f_new, info))
}

/// GenSART with weighted L² penalty α‖w^{-1/2}(f−f_ref)‖²: multiplier
/// v_P = P(w·w_P)/ũ, update scaled by w.
pub fn gensart_weighted_l2(
    f_ref: &VolumeGrid,
    w: &[f64],
    view: &TomoView,
    alpha: f64,
) -> Result<(VolumeGrid, StepInfo)> {
    PenaltySpec {
        family: PenaltyFamily::WeightedL2 { w: w.to_vec() },
        alpha,
    }
    .validate(view)?;
    let p_ref = view.projector.project(f_ref)?;
    let v_p = ray_average(view, w)?;
    let u_sqrt = pow_masked(&view.units, &view.units.u_tilde, 0.5);
    let m: Vec<f64> = v_p.iter().zip(&u_sqrt).map(|(a, b)| a * b).collect();
    let q: Vec<f64> = v_p.iter().map(|&v| alpha * v).collect();
    let dp = solve_scaled(&view.fidelity, &p_ref.values, &m, &q);

    let back = masked_divide(&dp, &view.units.u_tilde, 0.5);
    let incr = view.projector.adjoint(&ProjectionView {
        geometry: view.projector.geometry.clone(),
        kind: ViewKind::Increment,
        values: back,
    })?;
    let f_new = add_increment(f_ref, &incr, Some(w));
    let info = quadratic_step_info(view, &p_ref, &m, &dp, &q, f_ref, &f_new, 0);
    Ok((f_new, info))
}

/// Equivalence route for the weighted-L² scheme: substitute f̃ = w^{-1/2}·f
/// and run the weighted-projector scheme with λ = w^{1/2}. Cross-checks
/// `gensart_weighted_l2`.
pub fn weighted_l2_via_substitution(
    f_ref: &VolumeGrid,
    w: &[f64],
    view: &TomoView,
    alpha: f64,
) -> Result<VolumeGrid> {
    let sqrt_w: Vec<f64> = w.iter().map(|&x| if x > 0.0 { x.sqrt() } else { 0.0 }).collect();
    let mut f_tilde = f_ref.clone();
    for (v, &s) in f_tilde.values.iter_mut().zip(&sqrt_w) {
        if s > 0.0 {
            *v /= s;
        }
    }
    f_tilde.enforce_support();
    let (g_tilde, _) = gensart_weighted_projector(&f_tilde, &sqrt_w, view, alpha)?;
    let mut f_new = g_tilde;
    for (v, &s) in f_new.values.iter_mut().zip(&sqrt_w) {
        *v *= s;
    }
    f_new.enforce_support();
    Ok(f_new)
}

/// GenSART with Sobolev-W^{1,2} penalty: the detector-grid gradient term is
/// restricted to neighbor pairs inside the support of u, and the update uses
/// the unweighted back-projection P^B instead of P*.
pub fn gensart_w12(
    f_ref: &VolumeGrid,
    view: &TomoView,
    alpha: f64,
    gamma: f64,
) -> Result<(VolumeGrid, StepInfo)> {
    PenaltySpec {
        family: PenaltyFamily::SobolevW12 { gamma },
        alpha,
    }
    .validate(view)?;
    let p_ref = view.projector.project(f_ref)?;
    let u = &view.units.u;
    let u_sqrt = pow_masked(&view.units, u, 0.5);
    let grad = DetectorGradient::build(view.projector.geometry.detector.counts, u, &view.units.mask);

    let (dp, iters) = if gamma == 0.0 {
        let q = vec![alpha; u.len()];
        (solve_scaled(&view.fidelity, &p_ref.values, &u_sqrt, &q), 0)
    } else {
        // quadratic fidelities only: CG on the SPD normal system
        // (W·U + α(1−γ)I + αγ·U^{-1/2}∇ᵀU_∇∇U^{-1/2}) Δp = U^{1/2}·W·r
        let weight: Vec<f64> = match &view.fidelity.kind {
            FidelityKind::L2 => vec![1.0; u.len()],
            FidelityKind::WeightedL2 { sigma } => (0..u.len())
                .map(|i| {
                    let s = sigma.at(i);
                    1.0 / (s * s)
                })
                .collect(),
            _ => {
                return Err(GensartError::config(
                    "Sobolev penalty with gamma > 0 requires a quadratic fidelity",
                ))
            }
        };
        let b: Vec<f64> = (0..u.len())
            .map(|i| u_sqrt[i] * weight[i] * (view.fidelity.data[i] - p_ref.values[i]))
            .collect();
        let apply = w12_normal_operator(u, &view.units.mask, &grad, &weight, alpha, gamma);
        let sol = conjugate_gradients(apply, &b, 1e-8, 200).map_err(|e| GensartError::Solver {
            step: 0,
            message: format!("W12 projection-space solve failed: {e}"),
        })?;
        (sol.x, sol.iterations)
    };

    let back = masked_divide(&dp, u, 0.5);
    let incr = view.projector.back_project(&ProjectionView {
        geometry: view.projector.geometry.clone(),
        kind: ViewKind::Increment,
        values: back.clone(),
    })?;
    let f_new = add_increment(f_ref, &incr, None);

    let fit: Vec<f64> = (0..u.len())
        .map(|i| p_ref.values[i] + u_sqrt[i] * dp[i])
        .collect();
    let objective = view.fidelity.eval(&fit)
        + alpha * (1.0 - gamma) * dp.iter().map(|x| x * x).sum::<f64>()
        + alpha * gamma * grad.energy(&back);
    let info = StepInfo {
        residual: view.residual_norm(&p_ref),
        objective,
        update_norm: diff_norm(f_ref, &f_new),
        inner_iterations: iters,
    };
    Ok((f_new, info))
}

/// The SPD operator of the W^{1,2} (and XPCT) normal equations without the
/// image-formation part: x ↦ W·U·x + α(1−γ)x + αγ·U^{-1/2}∇ᵀU_∇∇U^{-1/2}x.
pub fn w12_normal_operator<'a>(
    u: &'a [f64],
    mask: &'a [bool],
    grad: &'a DetectorGradient,
    weight: &'a [f64],
    alpha: f64,
    gamma: f64,
) -> impl Fn(&[f64]) -> Vec<f64> + 'a {
    move |x: &[f64]| {
        let mut out: Vec<f64> = (0..x.len())
            .map(|i| weight[i] * u[i] * x[i] + alpha * (1.0 - gamma) * x[i])
            .collect();
        if gamma > 0.0 {
            let t = masked_divide(x, u, 0.5);
            let gt = grad.normal_apply(&t);
            let gsc = masked_divide(&gt, u, 0.5);
            for i in 0..out.len() {
                if mask[i] {
                    out[i] += alpha * gamma * gsc[i];
                }
            }
        }
        out
    }
}

/// GenSART with L^q penalty (parallel beams): per-pixel problems
/// min_y s(x, p_ref + u^{1/2}y) + α·u^{1−q/2}·|y|^q. q = 2 reduces to the
/// quadratic path; q = 1 with an L² fidelity soft-thresholds the residual
/// (one of possibly many minimizers at q = 1); other combinations use a
/// deterministic 1D refinement search.
pub fn gensart_lq(
    f_ref: &VolumeGrid,
    view: &TomoView,
    alpha: f64,
    q: f64,
) -> Result<(VolumeGrid, StepInfo)> {
    PenaltySpec {
        family: PenaltyFamily::Lq { q },
        alpha,
    }
    .validate(view)?;
    let p_ref = view.projector.project(f_ref)?;
    let u = &view.units.u;
    let u_sqrt = pow_masked(&view.units, u, 0.5);

    let dp: Vec<f64> = if q == 2.0 {
        let qw = vec![alpha; u.len()];
        solve_scaled(&view.fidelity, &p_ref.values, &u_sqrt, &qw)
    } else {
        let l2_fid = matches!(view.fidelity.kind, FidelityKind::L2);
        let mut out = vec![0.0; u.len()];
        for i in 0..u.len() {
            if !view.units.mask[i] {
                continue;
            }
            let us = u_sqrt[i];
            if q == 1.0 && l2_fid {
                // min_z (z−g)² + α|z − p_ref|: soft-threshold of the residual
                let r = view.fidelity.data[i] - p_ref.values[i];
                out[i] = soft_threshold(r, alpha / 2.0) / us;
            } else {
                let c = alpha * u[i].powf(1.0 - q / 2.0);
                let obj =
                    |y: f64| view.fidelity.scalar(i, p_ref.values[i] + us * y) + c * y.abs().powf(q);
                // bracket between the penalty minimum (y = 0) and the pull of
                // the fidelity, approximated by a near-unconstrained prox
                let z_star = view.fidelity.prox(i, p_ref.values[i], 1e8);
                let y_star = (z_star - p_ref.values[i]) / us;
                let span = 1.5 * y_star.abs() + 1.0;
                out[i] = refine_minimize(&obj, -span, span);
            }
        }
        out
    };

    let back = masked_divide(&dp, u, 0.5);
    let incr = view.projector.adjoint(&ProjectionView {
        geometry: view.projector.geometry.clone(),
        kind: ViewKind::Increment,
        values: back,
    })?;
    let f_new = add_increment(f_ref, &incr, None);

    let fit: Vec<f64> = (0..u.len())
        .map(|i| p_ref.values[i] + u_sqrt[i] * dp[i])
        .collect();
    let penalty: f64 = (0..u.len())
        .filter(|&i| view.units.mask[i])
        .map(|i| alpha * u[i].powf(1.0 - q / 2.0) * dp[i].abs().powf(q))
        .sum();
    let info = StepInfo {
        residual: view.residual_norm(&p_ref),
        objective: view.fidelity.eval(&fit) + penalty,
        update_norm: diff_norm(f_ref, &f_new),
        inner_iterations: 0,
    };
    Ok((f_new, info))
}

/// Dispatch one Kaczmarz step for the selected penalty family.
pub fn gensart_step(
    f_ref: &VolumeGrid,
    view: &TomoView,
    penalty: &PenaltySpec,
) -> Result<(VolumeGrid, StepInfo)> {
    match &penalty.family {
        PenaltyFamily::L2 => gensart_l2(f_ref, view, penalty.alpha),
        PenaltyFamily::WeightedL2 { w } => gensart_weighted_l2(f_ref, w, view, penalty.alpha),
        PenaltyFamily::WeightedProjector { lambda } => {
            gensart_weighted_projector(f_ref, lambda, view, penalty.alpha)
        }
        PenaltyFamily::SobolevW12 { gamma } => gensart_w12(f_ref, view, penalty.alpha, *gamma),
        PenaltyFamily::Lq { q } => gensart_lq(f_ref, view, penalty.alpha, *q),
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Deterministic coarse-grid + refinement minimizer for per-pixel L^q
/// problems without a closed form.
fn refine_minimize(obj: &dyn Fn(f64) -> f64, lo0: f64, hi0: f64) -> f64 {
    let mut lo = lo0;
    let mut hi = hi0;
    let mut best_x = 0.5 * (lo + hi);
    for _ in 0..6 {
        let n = 400;
        let step = (hi - lo) / n as f64;
        let mut best_v = f64::INFINITY;
        for k in 0..=n {
            let x = lo + k as f64 * step;
            let v = obj(x);
            if v < best_v {
                best_v = v;
                best_x = x;
            }
        }
        lo = best_x - 2.0 * step;
        hi = best_x + 2.0 * step;
    }
    best_x
}

fn quadratic_step_info(
    view: &TomoView,
    p_ref: &ProjectionView,
    m: &[f64],
    dp: &[f64],
    q: &[f64],
    f_ref: &VolumeGrid,
    f_new: &VolumeGrid,
    inner_iterations: usize,
) -> StepInfo {
    let fit: Vec<f64> = (0..dp.len()).map(|i| p_ref.values[i] + m[i] * dp[i]).collect();
    StepInfo {
        residual: view.residual_norm(p_ref),
        objective: view.fidelity.eval(&fit)
            + dp.iter().zip(q).map(|(x, qk)| qk * x * x).sum::<f64>(),
        update_norm: diff_norm(f_ref, f_new),
        inner_iterations,
    }
}
