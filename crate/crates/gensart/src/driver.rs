//! Kaczmarz orchestration: processing order, cycles, per-view GenSART
//! updates, box constraints, static regularizer merging and interlaced
//! splitting steps.

use crate::error::{GensartError, Result};
use crate::grid::{omega_contains, VolumeGrid};
use crate::schemes::{gensart_step, PenaltySpec, TomoView};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderingRule {
    /// views in index order 0..N
    Sequential,
    /// multi-level interleaving: consecutive views maximally separated
    Multilevel,
    /// caller-supplied permutation
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleKind {
    /// one sweep over the data
    Plain,
    /// forward sweep followed by the reversed sweep (j_k = j_{2N−1−k})
    Symmetric,
    /// the plain cycle repeated c times
    Repeated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// proximal step on the extra penalty
    Backward,
    /// explicit (sub)gradient step
    Forward,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitPenalty {
    Zero,
    /// R(f) = weight·‖f‖²
    SquaredL2 { weight: f64 },
    /// R(f) = weight·Σ|∇f|² (forward differences inside Ω)
    GradEnergy { weight: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplittingSpec {
    pub mode: SplitMode,
    pub penalty: SplitPenalty,
    pub sigma: f64,
}

/// Static quadratic regularizer α₂‖f − f_static‖² merged into each step.
#[derive(Debug, Clone)]
pub struct StaticReg {
    pub alpha2: f64,
    pub f_static: VolumeGrid,
}

#[derive(Debug, Clone)]
pub struct IterationPlan {
    pub ordering: OrderingRule,
    pub cycle: CycleKind,
    pub penalty: PenaltySpec,
    pub box_bounds: Option<(f64, f64)>,
    pub static_reg: Option<StaticReg>,
    pub splitting: Option<SplittingSpec>,
    /// fixed iteration budget; defaults to the full expanded order
    pub k_stop: Option<usize>,
}

impl IterationPlan {
    pub fn new(penalty: PenaltySpec) -> Self {
        IterationPlan {
            ordering: OrderingRule::Sequential,
            cycle: CycleKind::Plain,
            penalty,
            box_bounds: None,
            static_reg: None,
            splitting: None,
            k_stop: None,
        }
    }
}

/// Per-iteration log record: residual ‖P_j f_k − g_j‖₂ before the update, the
/// projection-space surrogate objective after the inner solve, and the norm
/// of the applied volume update.
#[derive(Debug, Clone, Copy)]
pub struct IterationMetrics {
    pub iter: usize,
    pub view: usize,
    pub residual: f64,
    pub objective: f64,
    pub update_norm: f64,
}

pub fn metrics_to_csv(metrics: &[IterationMetrics]) -> String {
    let mut s = String::from("iter,view,residual,objective,update_norm\n");
    for m in metrics {
        s.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e}\n",
            m.iter, m.view, m.residual, m.objective, m.update_norm
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub volume: VolumeGrid,
    pub metrics: Vec<IterationMetrics>,
}

/// Multi-level processing order: bit-reversal permutation of the next power
/// of two with out-of-range indices dropped, so consecutive views are
/// maximally separated in angle.
pub fn multilevel_order(n_proj: usize) -> Vec<usize> {
    if n_proj <= 1 {
        return (0..n_proj).collect();
    }
    let size = n_proj.next_power_of_two();
    let bits = size.trailing_zeros();
    let mut out = Vec::with_capacity(n_proj);
    for k in 0..size {
        let mut r = 0usize;
        for b in 0..bits {
            if k & (1 << b) != 0 {
                r |= 1 << (bits - 1 - b);
            }
        }
        if r < n_proj {
            out.push(r);
        }
    }
    out
}

/// Base permutation of the plan over `n_proj` views.
pub fn base_order(ordering: &OrderingRule, n_proj: usize) -> Result<Vec<usize>> {
    let order = match ordering {
        OrderingRule::Sequential => (0..n_proj).collect(),
        OrderingRule::Multilevel => multilevel_order(n_proj),
        OrderingRule::Explicit(o) => o.clone(),
    };
    if order.len() != n_proj {
        return Err(GensartError::config("processing order must cover every view once"));
    }
    let mut seen = vec![false; n_proj];
    for &j in &order {
        if j >= n_proj || seen[j] {
            return Err(GensartError::config("processing order is not a permutation"));
        }
        seen[j] = true;
    }
    Ok(order)
}

/// Expand a base permutation into the executed step sequence.
pub fn expand_cycle(order: &[usize], cycle: CycleKind) -> Vec<usize> {
    match cycle {
        CycleKind::Plain => order.to_vec(),
        CycleKind::Symmetric => {
            let mut seq = order.to_vec();
            seq.extend(order.iter().rev());
            seq
        }
        CycleKind::Repeated(c) => order.iter().cycle().take(order.len() * c).copied().collect(),
    }
}

/// Elementwise clamp to [f_min, f_max] inside Ω; zero outside is preserved.
pub fn apply_box(f: &VolumeGrid, f_min: f64, f_max: f64) -> Result<VolumeGrid> {
    if !(f_min <= f_max) {
        return Err(GensartError::config("box bounds must satisfy f_min <= f_max"));
    }
    let mut out = f.clone();
    for (k, v) in out.values.iter_mut().enumerate() {
        if omega_contains(&f.spec, &f.omega, k) {
            *v = v.clamp(f_min, f_max);
        } else {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Merge a static quadratic regularizer into the step: the combined penalty
/// α₁‖f−f_k‖² + α₂‖f−f_static‖² equals (α₁+α₂)‖f−f_merged‖² up to a constant.
pub fn merge_static_regularizer(
    f_k: &VolumeGrid,
    f_static: &VolumeGrid,
    alpha1: f64,
    alpha2: f64,
) -> (VolumeGrid, f64) {
    if alpha2 == 0.0 {
        return (f_k.clone(), alpha1);
    }
    let total = alpha1 + alpha2;
    let mut merged = f_k.clone();
    for (m, s) in merged.values.iter_mut().zip(&f_static.values) {
        *m = (alpha1 * *m + alpha2 * s) / total;
    }
    merged.enforce_support();
    (merged, total)
}

/// Interlaced penalty step: proximal ("backward") or subgradient ("forward")
/// update for the extra volume-space regularizer.
pub fn splitting_step(f_half: &VolumeGrid, spec: &SplittingSpec) -> Result<VolumeGrid> {
    if !(spec.sigma > 0.0) {
        return Err(GensartError::config("splitting stepsize sigma must be positive"));
    }
    match (&spec.penalty, spec.mode) {
        (SplitPenalty::Zero, _) => Ok(f_half.clone()),
        (SplitPenalty::SquaredL2 { weight }, SplitMode::Backward) => {
            let mut out = f_half.clone();
            let scale = 1.0 / (1.0 + 2.0 * spec.sigma * weight);
            for v in out.values.iter_mut() {
                *v *= scale;
            }
            Ok(out)
        }
        (SplitPenalty::SquaredL2 { weight }, SplitMode::Forward) => {
            let mut out = f_half.clone();
            let scale = 1.0 - 2.0 * spec.sigma * weight;
            for v in out.values.iter_mut() {
                *v *= scale;
            }
            Ok(out)
        }
        (SplitPenalty::GradEnergy { weight }, SplitMode::Forward) => {
            let grad = grad_energy_gradient(f_half);
            let mut out = f_half.clone();
            for (v, g) in out.values.iter_mut().zip(&grad) {
                *v -= spec.sigma * weight * g;
            }
            out.enforce_support();
            Ok(out)
        }
        (SplitPenalty::GradEnergy { .. }, SplitMode::Backward) => Err(GensartError::config(
            "gradient-energy penalty provides no proximal map; use the forward mode",
        )),
    }
}

/// Gradient of Σ|∇f|² with forward differences restricted to voxel pairs
/// inside Ω: 2·∇ᵀ∇f.
fn grad_energy_gradient(f: &VolumeGrid) -> Vec<f64> {
    let spec = &f.spec;
    let dim = spec.dim();
    let mut strides = vec![1usize; dim];
    for a in (0..dim.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * spec.shape[a + 1];
    }
    let mut out = vec![0.0; spec.len()];
    let mut idx = vec![0usize; dim];
    for k in 0..spec.len() {
        if f.in_omega(k) {
            for a in 0..dim {
                if idx[a] + 1 < spec.shape[a] {
                    let k2 = k + strides[a];
                    if f.in_omega(k2) {
                        let d = f.values[k2] - f.values[k];
                        out[k] -= 2.0 * d;
                        out[k2] += 2.0 * d;
                    }
                }
            }
        }
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] < spec.shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

/// Run the Kaczmarz plan: per step, apply the selected GenSART scheme to the
/// current iterate for the next view in the expanded order, then the optional
/// splitting step and box projection. Deterministic given plan and inputs.
pub fn run(plan: &IterationPlan, views: &[TomoView], f0: &VolumeGrid) -> Result<RunResult> {
    if views.is_empty() {
        return Err(GensartError::config("at least one view is required"));
    }
    for v in views {
        if v.projector.grid != f0.spec {
            return Err(GensartError::config("view grid does not match initial volume"));
        }
    }
    if let Some(sr) = &plan.static_reg {
        if !(sr.alpha2 >= 0.0) {
            return Err(GensartError::config("static regularizer weight must be >= 0"));
        }
    }
    let order = base_order(&plan.ordering, views.len())?;
    let seq = expand_cycle(&order, plan.cycle);
    let k_stop = plan.k_stop.unwrap_or(seq.len());
    if k_stop > seq.len() {
        return Err(GensartError::config(format!(
            "k_stop = {k_stop} exceeds the expanded order length {}",
            seq.len()
        )));
    }

    let mut f = f0.clone();
    let mut metrics = Vec::with_capacity(k_stop);
    for (k, &j) in seq.iter().take(k_stop).enumerate() {
        let view = &views[j];
        let (f_ref, alpha_eff) = match &plan.static_reg {
            Some(sr) => merge_static_regularizer(&f, &sr.f_static, plan.penalty.alpha, sr.alpha2),
            None => (f.clone(), plan.penalty.alpha),
        };
        let penalty = PenaltySpec {
            family: plan.penalty.family.clone(),
            alpha: alpha_eff,
        };
        let (mut f_new, info) = gensart_step(&f_ref, view, &penalty).map_err(|e| match e {
            GensartError::Solver { message, .. } => GensartError::Solver { step: k, message },
            other => other,
        })?;
        if let Some(split) = &plan.splitting {
            f_new = splitting_step(&f_new, split)?;
        }
        if let Some((lo, hi)) = plan.box_bounds {
            f_new = apply_box(&f_new, lo, hi)?;
        }
        metrics.push(IterationMetrics {
            iter: k,
            view: j,
            residual: info.residual,
            objective: info.objective,
            update_norm: info.update_norm,
        });
        f = f_new;
    }
    Ok(RunResult { volume: f, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::{FidelityKind, FidelitySpec};
    use crate::geometry::Geometry;
    use crate::grid::{GridSpec, OmegaShape};
    use crate::projector::Projector;
    use crate::schemes::gensart_l2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn make_views(n: usize, n_views: usize, data: Option<&VolumeGrid>) -> Vec<TomoView> {
        let spec = GridSpec::new(&[n, n], 1.0).unwrap();
        let omega = OmegaShape::Ball {
            radius: n as f64 / 2.0 - 1.0,
        };
        (0..n_views)
            .map(|j| {
                let angle = std::f64::consts::PI * j as f64 / n_views as f64;
                let geo = Geometry::parallel_2d(angle, n + n / 2, 1.0);
                let proj = Projector::new(geo, spec.clone(), omega.clone()).unwrap();
                let g = match data {
                    Some(f) => proj.project(f).unwrap().values,
                    None => vec![0.0; n + n / 2],
                };
                TomoView::new(proj, FidelitySpec::new(FidelityKind::L2, g)).unwrap()
            })
            .collect()
    }

    #[test]
    fn multilevel_reference_orders() {
        assert_eq!(multilevel_order(1), vec![0]);
        assert_eq!(multilevel_order(4), vec![0, 2, 1, 3]);
        assert_eq!(multilevel_order(8), vec![0, 4, 2, 6, 1, 5, 3, 7]);
        let o = multilevel_order(13);
        let mut sorted = o.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..13).collect::<Vec<_>>());
    }

    #[test]
    fn symmetric_cycle_is_palindromic() {
        let seq = expand_cycle(&[2, 0, 1], CycleKind::Symmetric);
        let k = seq.len();
        assert_eq!(k, 6);
        for i in 0..k {
            assert_eq!(seq[i], seq[k - 1 - i]);
        }
    }

    #[test]
    fn k_stop_zero_returns_initial() {
        let spec = GridSpec::new(&[12, 12], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 5.0 };
        let f0 = VolumeGrid::constant(spec, omega, 0.7);
        let views = make_views(12, 3, None);
        let mut plan = IterationPlan::new(PenaltySpec::l2(1.0));
        plan.k_stop = Some(0);
        let out = run(&plan, &views, &f0).unwrap();
        assert_eq!(out.volume.values, f0.values);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn single_step_equals_gensart_l2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = GridSpec::new(&[16, 16], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 7.0 };
        let mut truth = VolumeGrid::zeros(spec.clone(), omega.clone());
        for v in truth.values.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        truth.enforce_support();
        let views = make_views(16, 1, Some(&truth));
        let f0 = VolumeGrid::zeros(spec, omega);
        let mut plan = IterationPlan::new(PenaltySpec::l2(2.0));
        plan.k_stop = Some(1);
        let out = run(&plan, &views, &f0).unwrap();
        let (expect, _) = gensart_l2(&f0, &views[0], 2.0).unwrap();
        assert_eq!(out.volume.values, expect.values);
    }

    #[test]
    fn consistent_two_view_residuals_non_increasing() {
        // fixed-seed regression: per-view residuals never grow over the cycle
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = GridSpec::new(&[20, 20], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 9.0 };
        let mut truth = VolumeGrid::zeros(spec.clone(), omega.clone());
        for v in truth.values.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        truth.enforce_support();
        let views = make_views(20, 2, Some(&truth));
        let f0 = VolumeGrid::zeros(spec, omega);
        let plan = IterationPlan {
            cycle: CycleKind::Repeated(2),
            ..IterationPlan::new(PenaltySpec::l2(5.0))
        };
        let out = run(&plan, &views, &f0).unwrap();
        let mut last = [f64::INFINITY; 2];
        for m in &out.metrics {
            assert!(
                m.residual <= last[m.view] * (1.0 + 1e-12),
                "residual grew for view {} at iter {}",
                m.view,
                m.iter
            );
            last[m.view] = m.residual;
        }
    }

    #[test]
    fn apply_box_examples() {
        let spec = GridSpec::new(&[8, 8], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 3.0 };
        let f = VolumeGrid::constant(spec.clone(), omega.clone(), 5.0);
        let clamped = apply_box(&f, 0.0, 1.0).unwrap();
        let ind = VolumeGrid::indicator(spec.clone(), omega.clone());
        assert_eq!(clamped.values, ind.values);
        let g = VolumeGrid::constant(spec.clone(), omega.clone(), 0.5);
        assert_eq!(apply_box(&g, 0.0, 1.0).unwrap().values, g.values);
        let mut h = VolumeGrid::constant(spec, omega, -0.3);
        h.enforce_support();
        let hb = apply_box(&h, 0.0, 1.0).unwrap();
        assert!(hb.values.iter().all(|&x| x == 0.0));
        assert!(apply_box(&g, 1.0, 0.0).is_err());
    }

    #[test]
    fn apply_box_idempotent_and_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = GridSpec::new(&[10, 10], 1.0).unwrap();
        let mut a = VolumeGrid::zeros(spec.clone(), OmegaShape::Box);
        let mut b = VolumeGrid::zeros(spec, OmegaShape::Box);
        for v in a.values.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        for v in b.values.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let pa = apply_box(&a, -0.5, 0.8).unwrap();
        let pb = apply_box(&b, -0.5, 0.8).unwrap();
        assert_eq!(apply_box(&pa, -0.5, 0.8).unwrap().values, pa.values);
        let d_before: f64 = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let d_after: f64 = pa
            .values
            .iter()
            .zip(&pb.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        assert!(d_after <= d_before + 1e-15);
    }

    #[test]
    fn merge_static_regularizer_examples() {
        let spec = GridSpec::new(&[6, 6], 1.0).unwrap();
        let f_k = VolumeGrid::zeros(spec.clone(), OmegaShape::Box);
        let f_static = VolumeGrid::constant(spec.clone(), OmegaShape::Box, 2.0);
        let (m0, a0) = merge_static_regularizer(&f_k, &f_static, 1.5, 0.0);
        assert_eq!(m0.values, f_k.values);
        assert_eq!(a0, 1.5);
        let (m1, a1) = merge_static_regularizer(&f_k, &f_k, 1.0, 3.0);
        assert_eq!(m1.values, f_k.values);
        assert_eq!(a1, 4.0);
        let (m2, a2) = merge_static_regularizer(&f_k, &f_static, 1.0, 1.0);
        assert!(m2.values.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert_eq!(a2, 2.0);
    }

    #[test]
    fn splitting_step_examples() {
        let spec = GridSpec::new(&[6, 6], 1.0).unwrap();
        let f = VolumeGrid::constant(spec, OmegaShape::Box, 3.0);
        let z = splitting_step(
            &f,
            &SplittingSpec {
                mode: SplitMode::Backward,
                penalty: SplitPenalty::Zero,
                sigma: 0.5,
            },
        )
        .unwrap();
        assert_eq!(z.values, f.values);
        let b = splitting_step(
            &f,
            &SplittingSpec {
                mode: SplitMode::Backward,
                penalty: SplitPenalty::SquaredL2 { weight: 1.0 },
                sigma: 0.5,
            },
        )
        .unwrap();
        for v in &b.values {
            assert!((v - 1.5).abs() < 1e-14);
        }
        let g = splitting_step(
            &f,
            &SplittingSpec {
                mode: SplitMode::Forward,
                penalty: SplitPenalty::GradEnergy { weight: 1.0 },
                sigma: 0.1,
            },
        )
        .unwrap();
        assert_eq!(g.values, f.values);
        assert!(splitting_step(
            &f,
            &SplittingSpec {
                mode: SplitMode::Backward,
                penalty: SplitPenalty::GradEnergy { weight: 1.0 },
                sigma: 0.1,
            },
        )
        .is_err());
    }

    #[test]
    fn run_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = GridSpec::new(&[16, 16], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 7.0 };
        let mut truth = VolumeGrid::zeros(spec.clone(), omega.clone());
        for v in truth.values.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        truth.enforce_support();
        let views = make_views(16, 4, Some(&truth));
        let f0 = VolumeGrid::zeros(spec, omega);
        let plan = IterationPlan {
            ordering: OrderingRule::Multilevel,
            cycle: CycleKind::Symmetric,
            box_bounds: Some((0.0, 10.0)),
            ..IterationPlan::new(PenaltySpec::l2(3.0))
        };
        let a = run(&plan, &views, &f0).unwrap();
        let b = run(&plan, &views, &f0).unwrap();
        assert_eq!(a.volume.values, b.volume.values);
    }

    #[test]
    fn metrics_csv_has_header_and_rows() {
        let views = make_views(12, 2, None);
        let f0 =
            VolumeGrid::zeros(views[0].projector.grid.clone(), views[0].projector.omega.clone());
        let plan = IterationPlan::new(PenaltySpec::l2(1.0));
        let out = run(&plan, &views, &f0).unwrap();
        let csv = metrics_to_csv(&out.metrics);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,view,residual,objective,update_norm");
        assert_eq!(lines.len(), 1 + 2);
    }
}
