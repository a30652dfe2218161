//! Acquisition geometries: parallel-beam and divergent-beam (fan/cone) views.
//!
//! A [`Geometry`] describes one tomographic view: the incident direction θ or
//! source point s together with the detector sampling. Detector pixels are
//! indexed row-major `[axis1, axis0]` with pixel centers
//! `origin + (i0+0.5-n0/2)·pitch0·axis0 + (i1+0.5-n1/2)·pitch1·axis1`.

use crate::error::{GensartError, Result};
use crate::grid::GridSpec;

pub type Vec3 = [f64; 3];

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn normalize(a: &Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamMode {
    Parallel,
    Divergent,
}

/// Flat detector sampling. For 2D volumes the detector is a line
/// (`counts[1] == 1` and `axes[1]` unused).
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    /// World position of the detector center.
    pub center: Vec3,
    /// Unit vectors along the detector axes.
    pub axes: [Vec3; 2],
    /// Pixel pitch along each axis (length units).
    pub pitch: [f64; 2],
    /// Pixel counts along each axis.
    pub counts: [usize; 2],
}

impl Detector {
    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// World coordinates of the pixel center with linear index `k`
    /// (row-major, axis 1 slowest).
    pub fn pixel_center(&self, k: usize) -> Vec3 {
        let i0 = k % self.counts[0];
        let i1 = k / self.counts[0];
        self.point(i0 as f64 + 0.5 - 0.5 * self.counts[0] as f64, i1 as f64 + 0.5 - 0.5 * self.counts[1] as f64)
    }

    /// World point at continuous detector coordinates (in pixel offsets from
    /// the detector center).
    pub fn point(&self, c0: f64, c1: f64) -> Vec3 {
        add(
            &add(&self.center, &scale(&self.axes[0], c0 * self.pitch[0])),
            &scale(&self.axes[1], c1 * self.pitch[1]),
        )
    }

    /// Continuous pixel coordinates (offsets from the detector center, in
    /// pixels) of a world point projected along `dir` onto the detector plane.
    /// Returns None if the ray is parallel to the plane.
    pub fn coords_along(&self, x: &Vec3, dir: &Vec3) -> Option<[f64; 2]> {
        // plane normal
        let n = if self.counts[1] > 1 {
            cross(&self.axes[0], &self.axes[1])
        } else {
            // 2D case: normal within the plane spanned by axis0 and dir
            let a = &self.axes[0];
            let d = dir;
            // component of dir orthogonal to axis0
            let mut n = sub(d, &scale(a, dot(d, a)));
            if norm(&n) < 1e-14 {
                return None;
            }
            n = normalize(&n);
            n
        };
        let denom = dot(dir, &n);
        if denom.abs() < 1e-14 {
            return None;
        }
        let t = dot(&sub(&self.center, x), &n) / denom;
        let hit = add(x, &scale(dir, t));
        let rel = sub(&hit, &self.center);
        Some([
            dot(&rel, &self.axes[0]) / self.pitch[0],
            if self.counts[1] > 1 {
                dot(&rel, &self.axes[1]) / self.pitch[1]
            } else {
                0.0
            },
        ])
    }
}

/// One tomographic view: beam mode, direction/source, detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub mode: BeamMode,
    /// Volume dimension this view acts on (2 or 3).
    pub dim: usize,
    /// Incident direction θ (Parallel, unit length) or source point s (Divergent).
    pub dir_or_source: Vec3,
    pub detector: Detector,
}

impl Geometry {
    /// 2D parallel-beam view at the given incident angle (radians). θ points
    /// along the rays; the 1D detector is perpendicular to θ through the origin.
    pub fn parallel_2d(angle: f64, det_count: usize, det_pitch: f64) -> Self {
        let theta = [angle.cos(), angle.sin(), 0.0];
        let axis = [-angle.sin(), angle.cos(), 0.0];
        Geometry {
            mode: BeamMode::Parallel,
            dim: 2,
            dir_or_source: theta,
            detector: Detector {
                center: [0.0; 3],
                axes: [axis, [0.0, 0.0, 1.0]],
                pitch: [det_pitch, det_pitch],
                counts: [det_count, 1],
            },
        }
    }

    /// 3D parallel-beam view with incident direction θ in the xy-plane
    /// (tomographic axis z). The 2D detector has axis0 ⊥ θ in-plane and
    /// axis1 = z.
    pub fn parallel_3d(angle: f64, det_counts: [usize; 2], det_pitch: f64) -> Self {
        let theta = [angle.cos(), angle.sin(), 0.0];
        let axis0 = [-angle.sin(), angle.cos(), 0.0];
        let axis1 = [0.0, 0.0, 1.0];
        Geometry {
            mode: BeamMode::Parallel,
            dim: 3,
            dir_or_source: theta,
            detector: Detector {
                center: [0.0; 3],
                axes: [axis0, axis1],
                pitch: [det_pitch, det_pitch],
                counts: det_counts,
            },
        }
    }

    /// 3D parallel-beam view along an arbitrary unit direction.
    pub fn parallel_3d_dir(theta: Vec3, det_counts: [usize; 2], det_pitch: f64) -> Self {
        let theta = normalize(&theta);
        let seed = if theta[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let axis0 = normalize(&cross(&seed, &theta));
        let axis1 = cross(&theta, &axis0);
        Geometry {
            mode: BeamMode::Parallel,
            dim: 3,
            dir_or_source: theta,
            detector: Detector {
                center: [0.0; 3],
                axes: [axis0, axis1],
                pitch: [det_pitch, det_pitch],
                counts: det_counts,
            },
        }
    }

    /// 2D fan-beam view: source on a circle of radius `src_radius` at the
    /// given angle, 1D detector through the origin perpendicular to the
    /// central ray.
    pub fn fan_2d(angle: f64, src_radius: f64, det_count: usize, det_pitch: f64) -> Self {
        let source = [-src_radius * angle.cos(), -src_radius * angle.sin(), 0.0];
        let axis = [-angle.sin(), angle.cos(), 0.0];
        Geometry {
            mode: BeamMode::Divergent,
            dim: 2,
            dir_or_source: source,
            detector: Detector {
                center: [0.0; 3],
                axes: [axis, [0.0, 0.0, 1.0]],
                pitch: [det_pitch, det_pitch],
                counts: [det_count, 1],
            },
        }
    }

    /// 3D cone-beam view: source on a circle in the xy-plane, 2D detector
    /// through the origin perpendicular to the central ray.
    pub fn cone_3d(angle: f64, src_radius: f64, det_counts: [usize; 2], det_pitch: f64) -> Self {
        let source = [-src_radius * angle.cos(), -src_radius * angle.sin(), 0.0];
        let axis0 = [-angle.sin(), angle.cos(), 0.0];
        let axis1 = [0.0, 0.0, 1.0];
        Geometry {
            mode: BeamMode::Divergent,
            dim: 3,
            dir_or_source: source,
            detector: Detector {
                center: [0.0; 3],
                axes: [axis0, axis1],
                pitch: [det_pitch, det_pitch],
                counts: det_counts,
            },
        }
    }

    /// Ray through detector pixel `k`: returns (origin, unit direction).
    /// Parallel rays pass through the pixel center along θ; divergent rays
    /// start at the source.
    pub fn ray(&self, k: usize) -> (Vec3, Vec3) {
        let p = self.detector.pixel_center(k);
        match self.mode {
            BeamMode::Parallel => (p, self.dir_or_source),
            BeamMode::Divergent => {
                let d = normalize(&sub(&p, &self.dir_or_source));
                (self.dir_or_source, d)
            }
        }
    }

    /// Measure weight of pixel `k` on the projection domain 𝔻: Lebesgue pixel
    /// area for parallel beams, the solid-angle (2D: angular) measure of the
    /// pixel for divergent beams.
    pub fn pixel_measure(&self, k: usize) -> f64 {
        let area = if self.dim == 2 {
            self.detector.pitch[0]
        } else {
            self.detector.pitch[0] * self.detector.pitch[1]
        };
        match self.mode {
            BeamMode::Parallel => area,
            BeamMode::Divergent => {
                let p = self.detector.pixel_center(k);
                let d = sub(&p, &self.dir_or_source);
                let dist = norm(&d);
                let n = if self.dim == 2 {
                    // in-plane normal to the detector line
                    let a = &self.detector.axes[0];
                    normalize(&sub(&d, &scale(a, dot(&d, a))))
                } else {
                    cross(&self.detector.axes[0], &self.detector.axes[1])
                };
                let cos = (dot(&d, &n) / dist).abs();
                if self.dim == 2 {
                    area * cos / dist
                } else {
                    area * cos / (dist * dist)
                }
            }
        }
    }

    /// Validate this view against a grid: dimensions match, |θ| = 1 or
    /// s ∉ closure(Ω-bounding box), parallel detector perpendicular to θ,
    /// and the detector covers the projection footprint of the bounding box.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.dim != grid.dim() {
            return Err(GensartError::config(format!(
                "geometry dimension {} does not match grid dimension {}",
                self.dim,
                grid.dim()
            )));
        }
        if self.dim == 2 && self.detector.counts[1] != 1 {
            return Err(GensartError::config("2D geometry requires a 1D detector"));
        }
        let r_grid = (0..self.dim)
            .map(|a| grid.half_extent(a).powi(2))
            .sum::<f64>()
            .sqrt();
        match self.mode {
            BeamMode::Parallel => {
                let th = &self.dir_or_source;
                if (norm(th) - 1.0).abs() > 1e-9 {
                    return Err(GensartError::config("parallel direction must be a unit vector"));
                }
                for a in 0..(if self.dim == 3 { 2 } else { 1 }) {
                    if dot(&self.detector.axes[a], th).abs() > 1e-9 {
                        return Err(GensartError::config(
                            "parallel detector axes must be perpendicular to the beam direction",
                        ));
                    }
                }
                let w0 = self.detector.counts[0] as f64 * self.detector.pitch[0];
                if w0 + 1e-9 < 2.0 * r_grid && self.detector.counts[0] > 0 {
                    // footprint of the circumscribed ball may exceed the detector
                    // only if Ω is smaller than the box diagonal; accept if the
                    // detector at least covers the inscribed extent.
                    let min_ext = (0..self.dim).map(|a| grid.half_extent(a)).fold(f64::MAX, f64::min);
                    if w0 + 1e-9 < 2.0 * min_ext {
                        return Err(GensartError::config(
                            "detector does not cover the projection footprint of the volume",
                        ));
                    }
                }
            }
            BeamMode::Divergent => {
                let s = &self.dir_or_source;
                if norm(s) <= r_grid {
                    return Err(GensartError::config(
                        "divergent source must lie outside the volume bounding sphere",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Samples on the detector of one view, tagged by what they hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    Data,
    Projection,
    Increment,
}

/// One tomographic view's worth of detector samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionView {
    pub geometry: Geometry,
    pub kind: ViewKind,
    pub values: Vec<f64>,
}

impl ProjectionView {
    pub fn zeros(geometry: Geometry, kind: ViewKind) -> Self {
        let n = geometry.detector.len();
        ProjectionView {
            geometry,
            kind,
            values: vec![0.0; n],
        }
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}
