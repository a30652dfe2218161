//! Discrete projectors, back-projectors and unit-projections.
//!
//! The forward projector is ray-driven with multilinear (Joseph-style)
//! interpolation, step size = half voxel (divided further by `supersample`),
//! and clamp-to-edge at the grid bounding box. The adjoint is the exact
//! transpose of this discrete operator with respect to the voxel-volume and
//! pixel-measure inner products, so ⟨P f, p⟩_𝔻 = ⟨f, P*p⟩_Ω holds to rounding.
//! The back-projector is the adjoint with the ray-density divided out.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{GensartError, Result};
use crate::geometry::{BeamMode, Geometry, ProjectionView, Vec3, ViewKind};
use crate::grid::{GridSpec, OmegaShape, VolumeGrid};

/// Detector samples with `u` below this fraction of max(u) are treated as
/// outside the projection domain 𝔻_P.
pub const SUPPORT_REL_THRESHOLD: f64 = 1e-12;

/// Forward/backward evaluation counters, shared across the views of a set.
#[derive(Debug, Default)]
pub struct ProjectorCounters {
    pub project: AtomicUsize,
    pub backproject: AtomicUsize,
}

impl ProjectorCounters {
    pub fn snapshot(&self) -> (usize, usize) {
        (
            self.project.load(Ordering::Relaxed),
            self.backproject.load(Ordering::Relaxed),
        )
    }

    pub fn reset(&self) {
        self.project.store(0, Ordering::Relaxed);
        self.backproject.store(0, Ordering::Relaxed);
    }
}

/// Weighted unit-projections u_P = P(1_Ω) and ũ_P = P(w_P), with the common
/// support mask {u > 0}.
#[derive(Debug, Clone)]
pub struct UnitProjections {
    pub u: Vec<f64>,
    pub u_tilde: Vec<f64>,
    pub mask: Vec<bool>,
}

impl UnitProjections {
    fn from_raw(mut u: Vec<f64>, mut u_tilde: Vec<f64>) -> Self {
        let max = u.iter().cloned().fold(0.0, f64::max);
        let thr = SUPPORT_REL_THRESHOLD * max;
        let mask: Vec<bool> = u.iter().map(|&x| x > thr).collect();
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                u[i] = 0.0;
                u_tilde[i] = 0.0;
            }
        }
        UnitProjections { u, u_tilde, mask }
    }
}

/// Elementwise p / u^mu where u is positive (relative to its maximum),
/// exactly zero elsewhere. Total by construction.
pub fn masked_divide(p: &[f64], u_pow: &[f64], mu: f64) -> Vec<f64> {
    let max = u_pow.iter().cloned().fold(0.0, f64::max);
    let thr = SUPPORT_REL_THRESHOLD * max;
    p.iter()
        .zip(u_pow)
        .map(|(&pi, &ui)| {
            if ui > thr {
                let d = if mu == 1.0 {
                    ui
                } else if mu == 0.5 {
                    ui.sqrt()
                } else if mu == 2.0 {
                    ui * ui
                } else {
                    ui.powf(mu)
                };
                pi / d
            } else {
                0.0
            }
        })
        .collect()
}

/// One view's discrete projector over a fixed grid and Ω shape.
#[derive(Debug, Clone)]
pub struct Projector {
    pub geometry: Geometry,
    pub grid: GridSpec,
    pub omega: OmegaShape,
    /// Ray sampling refinement: step = voxel/(2·supersample).
    pub supersample: u32,
    counters: Option<Arc<ProjectorCounters>>,
}

struct RayGrid {
    /// ray origin in grid-index coordinates, per grid axis
    o: [f64; 3],
    /// ray direction in grid-index coordinates per unit world arclength
    d: [f64; 3],
    t0: f64,
    t1: f64,
}

impl Projector {
    pub fn new(geometry: Geometry, grid: GridSpec, omega: OmegaShape) -> Result<Self> {
        geometry.validate(&grid)?;
        Ok(Projector {
            geometry,
            grid,
            omega,
            supersample: 1,
            counters: None,
        })
    }

    pub fn with_supersample(mut self, ss: u32) -> Self {
        self.supersample = ss.max(1);
        self
    }

    pub fn with_counters(mut self, counters: Arc<ProjectorCounters>) -> Self {
        self.counters = Some(counters);
        self
    }

    pub fn step(&self) -> f64 {
        self.grid.voxel_size / (2.0 * self.supersample as f64)
    }

    fn check_volume(&self, f: &VolumeGrid) -> Result<()> {
        if f.spec != self.grid {
            return Err(GensartError::config("volume grid does not match projector grid"));
        }
        Ok(())
    }

    fn check_view(&self, p: &ProjectionView) -> Result<()> {
        if p.geometry.detector.counts != self.geometry.detector.counts {
            return Err(GensartError::config("projection detector does not match projector"));
        }
        Ok(())
    }

    /// Clip the ray through pixel `k` against the grid bounding box and
    /// express it in grid-index coordinates. None if the ray misses the box.
    fn clip_ray(&self, k: usize) -> Option<RayGrid> {
        let (o, d) = self.geometry.ray(k);
        let dim = self.grid.dim();
        let h = self.grid.voxel_size;
        let mut t0 = if self.geometry.mode == BeamMode::Divergent {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        let mut t1 = f64::INFINITY;
        // world component for grid axis a is (dim-1-a): grid order is
        // slowest-first [z, y, x] in 3D and [y, x] in 2D
        for a in 0..dim {
            let c = dim - 1 - a;
            let half = self.grid.half_extent(a);
            if d[c].abs() < 1e-14 {
                if o[c].abs() > half {
                    return None;
                }
            } else {
                let ta = (-half - o[c]) / d[c];
                let tb = (half - o[c]) / d[c];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return None;
        }
        let mut og = [0.0; 3];
        let mut dg = [0.0; 3];
        for a in 0..dim {
            let c = dim - 1 - a;
            og[a] = (o[c] + self.grid.half_extent(a)) / h - 0.5;
            dg[a] = d[c] / h;
        }
        Some(RayGrid { o: og, d: dg, t0, t1 })
    }

    /// Forward projection: line integrals of `f` along the rays.
    pub fn project(&self, f: &VolumeGrid) -> Result<ProjectionView> {
        self.check_volume(f)?;
        f.check_finite()?;
        if let Some(c) = &self.counters {
            c.project.fetch_add(1, Ordering::Relaxed);
        }
        let m = self.geometry.detector.len();
        let vals = &f.values;
        let values: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|k| match self.clip_ray(k) {
                None => 0.0,
                Some(ray) => self.integrate(&ray, vals),
            })
            .collect();
        Ok(ProjectionView {
            geometry: self.geometry.clone(),
            kind: ViewKind::Projection,
            values,
        })
    }

    /// Adjoint P*: exact transpose of `project` with pixel-measure and
    /// voxel-volume weights, masked to Ω.
    pub fn adjoint(&self, p: &ProjectionView) -> Result<VolumeGrid> {
        self.scatter(p, false)
    }

    /// Back-projection P^B: `adjoint` with the ray-density w_P divided out;
    /// identical to `adjoint` for parallel beams.
    pub fn back_project(&self, p: &ProjectionView) -> Result<VolumeGrid> {
        self.scatter(p, true)
    }

    fn scatter(&self, p: &ProjectionView, divide_ray_density: bool) -> Result<VolumeGrid> {
        self.check_view(p)?;
        if let Some(c) = &self.counters {
            c.backproject.fetch_add(1, Ordering::Relaxed);
        }
        let m = self.geometry.detector.len();
        let n = self.grid.len();
        let inv_vox = 1.0 / self.grid.voxel_volume();

        // fixed chunking keeps the summation order deterministic
        const CHUNK: usize = 4096;
        let partials: Vec<Vec<f64>> = (0..m)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|pixels| {
                let mut acc = vec![0.0f64; n];
                for &k in pixels {
                    let v = p.values[k];
                    if v == 0.0 {
                        continue;
                    }
                    if let Some(ray) = self.clip_ray(k) {
                        let c = v * self.geometry.pixel_measure(k) * inv_vox;
                        self.deposit(&ray, c, &mut acc);
                    }
                }
                acc
            })
            .collect();

        let mut out = vec![0.0f64; n];
        for part in partials {
            for (o, x) in out.iter_mut().zip(part) {
                *o += x;
            }
        }

        let mut vol = VolumeGrid {
            spec: self.grid.clone(),
            omega: self.omega.clone(),
            values: out,
        };
        if divide_ray_density && self.geometry.mode == BeamMode::Divergent {
            let w = self.ray_density_volume();
            for (v, &wk) in vol.values.iter_mut().zip(&w.values) {
                if wk > 0.0 {
                    *v /= wk;
                } else {
                    *v = 0.0;
                }
            }
        }
        vol.enforce_support();
        Ok(vol)
    }

    /// Unit projections u = P(1_Ω), ũ = P(w_P·1_Ω). For parallel beams over
    /// box/ball/cylinder domains a closed-form intersection length is used;
    /// all other cases project discretized fields.
    pub fn unit_projections(&self) -> Result<UnitProjections> {
        let analytic = self.geometry.mode == BeamMode::Parallel
            && matches!(
                self.omega,
                OmegaShape::Box | OmegaShape::Ball { .. } | OmegaShape::Cylinder { .. }
            );
        if analytic {
            let m = self.geometry.detector.len();
            let u: Vec<f64> = (0..m)
                .into_par_iter()
                .map(|k| {
                    let (o, d) = self.geometry.ray(k);
                    self.analytic_chord(&o, &d)
                })
                .collect();
            let ut = u.clone();
            return Ok(UnitProjections::from_raw(u, ut));
        }
        let ones = VolumeGrid::indicator(self.grid.clone(), self.omega.clone());
        let u = self.project(&ones)?.values;
        let u_tilde = match self.geometry.mode {
            BeamMode::Parallel => u.clone(),
            BeamMode::Divergent => {
                let w = self.ray_density_volume();
                self.project(&w)?.values
            }
        };
        Ok(UnitProjections::from_raw(u, u_tilde))
    }

    /// The ray-density w_P sampled at voxel centers inside Ω: 1 for parallel
    /// beams and |x−s|^{-(d-1)} for divergent beams in d dimensions (t²·dt·dω
    /// polar Jacobian in 3D, t·dt·dφ in 2D), which is what makes the weighted
    /// back-projection the exact adjoint.
    pub fn ray_density_volume(&self) -> VolumeGrid {
        let mut vol = VolumeGrid::indicator(self.grid.clone(), self.omega.clone());
        if self.geometry.mode == BeamMode::Divergent {
            let s = self.geometry.dir_or_source;
            let spec = vol.spec.clone();
            let dim = spec.dim();
            let mut idx = vec![0usize; dim];
            for k in 0..spec.len() {
                let mut r2 = 0.0;
                for a in 0..dim {
                    let w = spec.center(a, idx[a]) - s[dim - 1 - a];
                    r2 += w * w;
                }
                vol.values[k] /= if dim == 2 { r2.sqrt() } else { r2 };
                for a in (0..dim).rev() {
                    idx[a] += 1;
                    if idx[a] < spec.shape[a] {
                        break;
                    }
                    idx[a] = 0;
                }
            }
        }
        vol
    }

    /// Exact length of the intersection of the ray with the Ω solid.
    fn analytic_chord(&self, o: &Vec3, d: &Vec3) -> f64 {
        let dim = self.grid.dim();
        match &self.omega {
            OmegaShape::Box => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..dim {
                    let c = dim - 1 - a;
                    let half = self.grid.half_extent(a);
                    if d[c].abs() < 1e-14 {
                        if o[c].abs() > half {
                            return 0.0;
                        }
                    } else {
                        let ta = (-half - o[c]) / d[c];
                        let tb = (half - o[c]) / d[c];
                        t0 = t0.max(ta.min(tb));
                        t1 = t1.min(ta.max(tb));
                    }
                }
                (t1 - t0).max(0.0)
            }
            OmegaShape::Ball { radius } => {
                let mut oo = 0.0;
                let mut od = 0.0;
                let mut dd = 0.0;
                for c in 0..dim {
                    oo += o[c] * o[c];
                    od += o[c] * d[c];
                    dd += d[c] * d[c];
                }
                let disc = od * od - dd * (oo - radius * radius);
                if disc <= 0.0 {
                    0.0
                } else {
                    2.0 * disc.sqrt() / dd
                }
            }
            OmegaShape::Cylinder { radius } => {
                // circular in world (x, y), full extent along z (grid axis 0)
                let oo = o[0] * o[0] + o[1] * o[1];
                let od = o[0] * d[0] + o[1] * d[1];
                let dd = d[0] * d[0] + d[1] * d[1];
                let half_z = self.grid.half_extent(0);
                let (mut t0, mut t1);
                if dd < 1e-28 {
                    if oo > radius * radius {
                        return 0.0;
                    }
                    t0 = f64::NEG_INFINITY;
                    t1 = f64::INFINITY;
                } else {
                    let disc = od * od - dd * (oo - radius * radius);
                    if disc <= 0.0 {
                        return 0.0;
                    }
                    t0 = (-od - disc.sqrt()) / dd;
                    t1 = (-od + disc.sqrt()) / dd;
                }
                if d[2].abs() < 1e-14 {
                    if o[2].abs() > half_z {
                        return 0.0;
                    }
                } else {
                    let ta = (-half_z - o[2]) / d[2];
                    let tb = (half_z - o[2]) / d[2];
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                (t1 - t0).max(0.0)
            }
            OmegaShape::Mask(_) => 0.0, // not analytic; discrete route is used
        }
    }

    fn steps(&self, ray: &RayGrid) -> (usize, f64) {
        let len = ray.t1 - ray.t0;
        let n = (len / self.step()).ceil().max(1.0) as usize;
        (n, len / n as f64)
    }

    fn integrate(&self, ray: &RayGrid, f: &[f64]) -> f64 {
        match self.grid.dim() {
            2 => self.integrate2(ray, f),
            _ => self.integrate3(ray, f),
        }
    }

    #[inline]
    fn integrate2(&self, ray: &RayGrid, f: &[f64]) -> f64 {
        let (nstep, dt) = self.steps(ray);
        let n0 = self.grid.shape[0];
        let n1 = self.grid.shape[1];
        let mut acc = 0.0;
        for k in 0..nstep {
            let t = ray.t0 + (k as f64 + 0.5) * dt;
            let g0 = clampf(ray.o[0] + t * ray.d[0], n0);
            let g1 = clampf(ray.o[1] + t * ray.d[1], n1);
            let (i0, f0) = split(g0, n0);
            let (i1, f1) = split(g1, n1);
            let base = i0 * n1 + i1;
            let v00 = f[base];
            let v01 = f[base + usize::from(f1 > 0.0)];
            let row2 = base + n1 * usize::from(f0 > 0.0);
            let v10 = f[row2];
            let v11 = f[row2 + usize::from(f1 > 0.0)];
            acc += (1.0 - f0) * ((1.0 - f1) * v00 + f1 * v01) + f0 * ((1.0 - f1) * v10 + f1 * v11);
        }
        acc * dt
    }

    #[inline]
    fn integrate3(&self, ray: &RayGrid, f: &[f64]) -> f64 {
        let (nstep, dt) = self.steps(ray);
        let n0 = self.grid.shape[0];
        let n1 = self.grid.shape[1];
        let n2 = self.grid.shape[2];
        let s0 = n1 * n2;
        let mut acc = 0.0;
        for k in 0..nstep {
            let t = ray.t0 + (k as f64 + 0.5) * dt;
            let g0 = clampf(ray.o[0] + t * ray.d[0], n0);
            let g1 = clampf(ray.o[1] + t * ray.d[1], n1);
            let g2 = clampf(ray.o[2] + t * ray.d[2], n2);
            let (i0, f0) = split(g0, n0);
            let (i1, f1) = split(g1, n1);
            let (i2, f2) = split(g2, n2);
            let d0 = s0 * usize::from(f0 > 0.0);
            let d1 = n2 * usize::from(f1 > 0.0);
            let d2 = usize::from(f2 > 0.0);
            let base = i0 * s0 + i1 * n2 + i2;
            let c00 = (1.0 - f2) * f[base] + f2 * f[base + d2];
            let c01 = (1.0 - f2) * f[base + d1] + f2 * f[base + d1 + d2];
            let c10 = (1.0 - f2) * f[base + d0] + f2 * f[base + d0 + d2];
            let c11 = (1.0 - f2) * f[base + d0 + d1] + f2 * f[base + d0 + d1 + d2];
            acc += (1.0 - f0) * ((1.0 - f1) * c00 + f1 * c01) + f0 * ((1.0 - f1) * c10 + f1 * c11);
        }
        acc * dt
    }

    fn deposit(&self, ray: &RayGrid, c: f64, acc: &mut [f64]) {
        match self.grid.dim() {
            2 => self.deposit2(ray, c, acc),
            _ => self.deposit3(ray, c, acc),
        }
    }

    #[inline]
    fn deposit2(&self, ray: &RayGrid, c: f64, acc: &mut [f64]) {
        let (nstep, dt) = self.steps(ray);
        let n0 = self.grid.shape[0];
        let n1 = self.grid.shape[1];
        let w = c * dt;
        for k in 0..nstep {
            let t = ray.t0 + (k as f64 + 0.5) * dt;
            let g0 = clampf(ray.o[0] + t * ray.d[0], n0);
            let g1 = clampf(ray.o[1] + t * ray.d[1], n1);
            let (i0, f0) = split(g0, n0);
            let (i1, f1) = split(g1, n1);
            let base = i0 * n1 + i1;
            let d1 = usize::from(f1 > 0.0);
            let row2 = base + n1 * usize::from(f0 > 0.0);
            acc[base] += w * (1.0 - f0) * (1.0 - f1);
            acc[base + d1] += w * (1.0 - f0) * f1;
            acc[row2] += w * f0 * (1.0 - f1);
            acc[row2 + d1] += w * f0 * f1;
        }
    }

    #[inline]
    fn deposit3(&self, ray: &RayGrid, c: f64, acc: &mut [f64]) {
        let (nstep, dt) = self.steps(ray);
        let n0 = self.grid.shape[0];
        let n1 = self.grid.shape[1];
        let n2 = self.grid.shape[2];
        let s0 = n1 * n2;
        let w = c * dt;
        for k in 0..nstep {
            let t = ray.t0 + (k as f64 + 0.5) * dt;
            let g0 = clampf(ray.o[0] + t * ray.d[0], n0);
            let g1 = clampf(ray.o[1] + t * ray.d[1], n1);
            let g2 = clampf(ray.o[2] + t * ray.d[2], n2);
            let (i0, f0) = split(g0, n0);
            let (i1, f1) = split(g1, n1);
            let (i2, f2) = split(g2, n2);
            let d0 = s0 * usize::from(f0 > 0.0);
            let d1 = n2 * usize::from(f1 > 0.0);
            let d2 = usize::from(f2 > 0.0);
            let base = i0 * s0 + i1 * n2 + i2;
            acc[base] += w * (1.0 - f0) * (1.0 - f1) * (1.0 - f2);
            acc[base + d2] += w * (1.0 - f0) * (1.0 - f1) * f2;
            acc[base + d1] += w * (1.0 - f0) * f1 * (1.0 - f2);
            acc[base + d1 + d2] += w * (1.0 - f0) * f1 * f2;
            acc[base + d0] += w * f0 * (1.0 - f1) * (1.0 - f2);
            acc[base + d0 + d2] += w * f0 * (1.0 - f1) * f2;
            acc[base + d0 + d1] += w * f0 * f1 * (1.0 - f2);
            acc[base + d0 + d1 + d2] += w * f0 * f1 * f2;
        }
    }
}

/// Clamp a continuous grid coordinate to the valid interpolation range
/// [0, n-1] (clamp-to-edge extension at the bounding box).
#[inline(always)]
fn clampf(g: f64, n: usize) -> f64 {
    g.max(0.0).min(n as f64 - 1.0)
}

/// Split a clamped grid coordinate into base index and fractional part such
/// that base+1 is valid whenever frac > 0.
#[inline(always)]
fn split(g: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let i = (g.floor() as usize).min(n - 2);
    (i, g - i as f64)
}

/// Inner product on the projection domain: Σ p·q·measure(pixel).
pub fn detector_inner(geometry: &Geometry, p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..p.len() {
        s += p[k] * q[k] * geometry.pixel_measure(k);
    }
    s
}

/// Inner product on the volume: Σ f·g·voxel_volume.
pub fn volume_inner(spec: &GridSpec, f: &[f64], g: &[f64]) -> f64 {
    let vv = spec.voxel_volume();
    f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * vv
}

/// ‖·‖_{L²(Ω)}-style norm of w_P·P^B(ũ^{-1/2}·p); isometric to ‖p‖_{L²(𝔻)}
/// in the continuum.
pub fn iso_backprojection_norm(proj: &Projector, units: &UnitProjections, p: &[f64]) -> Result<f64> {
    let scaled = masked_divide(p, &units.u_tilde, 0.5);
    let view = ProjectionView {
        geometry: proj.geometry.clone(),
        kind: ViewKind::Increment,
        values: scaled,
    };
    let b = proj.adjoint(&view)?;
    Ok(volume_inner(&proj.grid, &b.values, &b.values).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dot, Geometry};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ball_volume_2d(n: usize, r: f64) -> VolumeGrid {
        let spec = GridSpec::new(&[n, n], 1.0).unwrap();
        VolumeGrid::indicator(spec, OmegaShape::Ball { radius: r })
    }

    #[test]
    fn project_zero_is_zero() {
        let spec = GridSpec::new(&[16, 16], 1.0).unwrap();
        let f = VolumeGrid::zeros(spec.clone(), OmegaShape::Box);
        let geo = Geometry::parallel_2d(0.4, 24, 1.0);
        let proj = Projector::new(geo, spec, OmegaShape::Box).unwrap();
        let p = proj.project(&f).unwrap();
        assert!(p.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn project_unit_box_gives_thickness() {
        // f = 1 on the box, axis-aligned beam: p = side length inside the
        // footprint, 0 outside
        let n = 32;
        let spec = GridSpec::new(&[n, n], 1.0).unwrap();
        let f = VolumeGrid::constant(spec.clone(), OmegaShape::Box, 1.0);
        let geo = Geometry::parallel_2d(0.0, 48, 1.0);
        let proj = Projector::new(geo, spec, OmegaShape::Box).unwrap();
        let p = proj.project(&f).unwrap();
        for (k, &v) in p.values.iter().enumerate() {
            let off = (k as f64 + 0.5 - 24.0).abs();
            if off < n as f64 / 2.0 - 1.0 {
                assert!((v - n as f64).abs() < 1e-9, "pixel {k}: {v}");
            } else if off > n as f64 / 2.0 + 1.0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn ball_projection_matches_chord_oracle() {
        // chord-length oracle: p(x⊥) = 2·sqrt(r² − x⊥²), within 2% rel. L²
        let n = 256;
        let r = 100.0;
        let f = ball_volume_2d(n, r);
        let geo = Geometry::parallel_2d(0.37, 300, 1.0);
        let proj = Projector::new(geo.clone(), f.spec.clone(), f.omega.clone()).unwrap();
        let p = proj.project(&f).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..p.values.len() {
            let x = (k as f64 + 0.5) - 150.0;
            let oracle = if x.abs() < r { 2.0 * (r * r - x * x).sqrt() } else { 0.0 };
            num += (p.values[k] - oracle).powi(2);
            den += oracle * oracle;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.02, "rel L2 error {rel}");
    }

    #[test]
    fn adjointness_is_exact() {
        // ⟨P f, p⟩_𝔻 = ⟨f, P* p⟩_Ω holds to rounding for the transpose pair
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for geo in [
            Geometry::parallel_2d(0.9, 40, 0.8),
            Geometry::fan_2d(1.3, 80.0, 48, 1.1),
        ] {
            let spec = GridSpec::new(&[24, 24], 1.0).unwrap();
            let omega = OmegaShape::Ball { radius: 11.0 };
            let proj = Projector::new(geo.clone(), spec.clone(), omega.clone()).unwrap();
            let mut f = VolumeGrid::zeros(spec.clone(), omega);
            for v in f.values.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            f.enforce_support();
            let mut p = ProjectionView::zeros(geo.clone(), ViewKind::Data);
            for v in p.values.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let pf = proj.project(&f).unwrap();
            let pstar = proj.adjoint(&p).unwrap();
            let lhs = detector_inner(&geo, &pf.values, &p.values);
            let rhs = volume_inner(&spec, &f.values, &pstar.values);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-30),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn parallel_adjoint_equals_back_project() {
        let geo = Geometry::parallel_2d(0.25, 32, 1.0);
        let spec = GridSpec::new(&[16, 16], 1.0).unwrap();
        let proj = Projector::new(geo.clone(), spec, OmegaShape::Box).unwrap();
        let mut p = ProjectionView::zeros(geo, ViewKind::Data);
        for (i, v) in p.values.iter_mut().enumerate() {
            *v = (i as f64 * 0.3).sin();
        }
        let a = proj.adjoint(&p).unwrap();
        let b = proj.back_project(&p).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn back_project_ones_gives_indicator() {
        let geo = Geometry::parallel_2d(0.0, 48, 1.0);
        let spec = GridSpec::new(&[32, 32], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 14.0 };
        let proj = Projector::new(geo, spec.clone(), omega.clone()).unwrap();
        let mut p = ProjectionView::zeros(proj.geometry.clone(), ViewKind::Data);
        p.values.fill(1.0);
        let b = proj.back_project(&p).unwrap();
        let ind = VolumeGrid::indicator(spec, omega);
        for (k, (&bv, &iv)) in b.values.iter().zip(&ind.values).enumerate() {
            assert!((bv - iv).abs() < 1e-9, "voxel {k}: {bv} vs {iv}");
        }
    }

    #[test]
    fn back_project_ramp_is_constant_along_rays() {
        // p(x⊥) = x⊥: finite differences along the ray axis vanish
        let geo = Geometry::parallel_2d(0.0, 48, 1.0);
        let spec = GridSpec::new(&[32, 32], 1.0).unwrap();
        let proj = Projector::new(geo, spec.clone(), OmegaShape::Box).unwrap();
        let mut p = ProjectionView::zeros(proj.geometry.clone(), ViewKind::Data);
        for (i, v) in p.values.iter_mut().enumerate() {
            *v = i as f64 + 0.5 - 24.0;
        }
        let b = proj.back_project(&p).unwrap();
        // beam along +x: grid axis 1 is the ray axis for angle 0
        for i0 in 0..32 {
            for i1 in 0..31 {
                let a = b.values[i0 * 32 + i1];
                let c = b.values[i0 * 32 + i1 + 1];
                assert!((a - c).abs() < 1e-9, "d/dray at ({i0},{i1}): {a} vs {c}");
            }
        }
    }

    #[test]
    fn divergent_adjoint_of_ones_is_ray_density() {
        let geo = Geometry::fan_2d(0.0, 90.0, 96, 1.0);
        let spec = GridSpec::new(&[24, 24], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 10.0 };
        let proj = Projector::new(geo, spec.clone(), omega.clone()).unwrap();
        let mut p = ProjectionView::zeros(proj.geometry.clone(), ViewKind::Data);
        p.values.fill(1.0);
        let a = proj.adjoint(&p).unwrap();
        let w = proj.ray_density_volume();
        let mut max_rel: f64 = 0.0;
        for k in 0..a.values.len() {
            if w.values[k] > 0.0 && a.values[k] != 0.0 {
                max_rel = max_rel.max((a.values[k] - w.values[k]).abs() / w.values[k]);
            }
        }
        assert!(max_rel < 0.05, "max rel deviation {max_rel}");
    }

    #[test]
    fn cone_adjoint_of_ones_is_inverse_square() {
        // 3D divergent: adjoint(1)(x) ≈ |x−s|^{-2} inside Ω
        let geo = Geometry::cone_3d(0.0, 60.0, [80, 80], 0.5);
        let spec = GridSpec::new(&[16, 16, 16], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 6.0 };
        let proj = Projector::new(geo, spec.clone(), omega.clone()).unwrap();
        let mut p = ProjectionView::zeros(proj.geometry.clone(), ViewKind::Data);
        p.values.fill(1.0);
        let a = proj.adjoint(&p).unwrap();
        let s = [-60.0, 0.0, 0.0];
        let mut max_rel: f64 = 0.0;
        for iz in 0..16 {
            for iy in 0..16 {
                for ix in 0..16 {
                    let k = (iz * 16 + iy) * 16 + ix;
                    if a.values[k] == 0.0 {
                        continue;
                    }
                    let x = [spec.center(2, ix), spec.center(1, iy), spec.center(0, iz)];
                    let r2 = (x[0] - s[0]).powi(2) + (x[1] - s[1]).powi(2) + (x[2] - s[2]).powi(2);
                    let w = 1.0 / r2;
                    max_rel = max_rel.max((a.values[k] - w).abs() / w);
                }
            }
        }
        assert!(max_rel < 0.05, "max rel deviation {max_rel}");
    }

    #[test]
    fn unit_projection_analytic_matches_discrete() {
        let n = 64;
        let spec = GridSpec::new(&[n, n], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 28.0 };
        let geo = Geometry::parallel_2d(1.1, 96, 1.0);
        let proj = Projector::new(geo, spec.clone(), omega.clone()).unwrap();
        let analytic = proj.unit_projections().unwrap();
        let ones = VolumeGrid::indicator(spec, omega);
        let discrete = proj.project(&ones).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..analytic.u.len() {
            num += (analytic.u[k] - discrete.values[k]).powi(2);
            den += analytic.u[k] * analytic.u[k];
        }
        assert!((num / den).sqrt() < 0.02);
    }

    #[test]
    fn divergent_unit_projection_matches_quadrature() {
        // ũ(φ) = ∫ w_P dt over the ray segment through the ball; in the 2D
        // fan geometry the ray density is t^{-1}
        let spec = GridSpec::new(&[64, 64], 1.0).unwrap();
        let omega = OmegaShape::Ball { radius: 28.0 };
        let geo = Geometry::fan_2d(0.7, 200.0, 96, 1.0);
        let proj = Projector::new(geo.clone(), spec, omega).unwrap();
        let units = proj.unit_projections().unwrap();
        for k in (0..96).step_by(7) {
            let (o, d) = geo.ray(k);
            // analytic segment through the ball
            let oo = dot(&o, &o);
            let od = dot(&o, &d);
            let disc = od * od - (oo - 28.0 * 28.0);
            let oracle = if disc <= 0.0 {
                0.0
            } else {
                let t0 = -od - disc.sqrt();
                let t1 = -od + disc.sqrt();
                // numeric quadrature of the ray density over [t0, t1]
                let nq = 20000;
                let dt = (t1 - t0) / nq as f64;
                (0..nq)
                    .map(|i| {
                        let t = t0 + (i as f64 + 0.5) * dt;
                        dt / t
                    })
                    .sum::<f64>()
            };
            if oracle > 1e-6 {
                let rel = (units.u_tilde[k] - oracle).abs() / oracle;
                assert!(rel < 0.02, "pixel {k}: {} vs {oracle}", units.u_tilde[k]);
            }
        }
    }

    #[test]
    fn projection_linearity() {
        let spec = GridSpec::new(&[20, 20], 1.0).unwrap();
        let geo = Geometry::parallel_2d(0.6, 32, 1.0);
        let proj = Projector::new(geo, spec.clone(), OmegaShape::Box).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = VolumeGrid::zeros(spec.clone(), OmegaShape::Box);
        let mut g = VolumeGrid::zeros(spec.clone(), OmegaShape::Box);
        for v in f.values.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in g.values.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut comb = VolumeGrid::zeros(spec, OmegaShape::Box);
        for k in 0..comb.values.len() {
            comb.values[k] = 2.5 * f.values[k] - 1.25 * g.values[k];
        }
        let pf = proj.project(&f).unwrap();
        let pg = proj.project(&g).unwrap();
        let pc = proj.project(&comb).unwrap();
        for k in 0..pc.values.len() {
            let expect = 2.5 * pf.values[k] - 1.25 * pg.values[k];
            assert!((pc.values[k] - expect).abs() < 1e-10 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn masked_divide_edge_cases() {
        let u = vec![0.0, 0.0, 0.0];
        assert_eq!(masked_divide(&[1.0, 2.0, 3.0], &u, 1.0), vec![0.0; 3]);
        let u = vec![2.0, 0.0, 4.0];
        let p = u.clone();
        assert_eq!(masked_divide(&p, &u, 1.0), vec![1.0, 0.0, 1.0]);
        let p2: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert_eq!(masked_divide(&p2, &u, 1.0), u);
    }

    #[test]
    fn counters_track_calls() {
        let spec = GridSpec::new(&[8, 8], 1.0).unwrap();
        let geo = Geometry::parallel_2d(0.0, 12, 1.0);
        let counters = Arc::new(ProjectorCounters::default());
        let proj = Projector::new(geo.clone(), spec.clone(), OmegaShape::Box)
            .unwrap()
            .with_counters(counters.clone());
        let f = VolumeGrid::constant(spec, OmegaShape::Box, 1.0);
        let p = proj.project(&f).unwrap();
        let _ = proj.adjoint(&p).unwrap();
        let _ = proj.back_project(&p).unwrap();
        assert_eq!(counters.snapshot(), (1, 2));
    }
}
