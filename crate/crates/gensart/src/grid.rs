//! Voxel grids and the reconstruction domain Ω.
//!
//! A [`VolumeGrid`] holds samples of the object density on a Cartesian grid of
//! cubic voxels centered on the origin. Values are kept identically zero
//! outside the Ω mask (support constraint).

use crate::error::{GensartError, Result};

/// Shape of the reconstruction domain Ω inside the grid bounding box.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaShape {
    /// The full axis-aligned bounding box of the grid.
    Box,
    /// Centered ball (disk in 2D) of the given radius.
    Ball { radius: f64 },
    /// Centered cylinder with axis along z: circular in (x, y), full z extent.
    /// Only meaningful for 3D grids.
    Cylinder { radius: f64 },
    /// Arbitrary voxel mask, row-major over the grid.
    Mask(Vec<bool>),
}

/// Grid metadata shared by volumes and projectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Voxel counts per axis; `shape.len()` is the dimension (2 or 3).
    pub shape: Vec<usize>,
    /// Cubic voxel edge length.
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn new(shape: &[usize], voxel_size: f64) -> Result<Self> {
        if shape.len() != 2 && shape.len() != 3 {
            return Err(GensartError::config("grid dimension must be 2 or 3"));
        }
        if shape.iter().any(|&n| n == 0) || !(voxel_size > 0.0) {
            return Err(GensartError::config("grid shape and voxel size must be positive"));
        }
        Ok(GridSpec {
            shape: shape.to_vec(),
            voxel_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_size.powi(self.dim() as i32)
    }

    /// Half-extent of the bounding box along axis `a`.
    pub fn half_extent(&self, a: usize) -> f64 {
        0.5 * self.shape[a] as f64 * self.voxel_size
    }

    /// World coordinate of the voxel center with index `idx` along axis `a`.
    pub fn center(&self, a: usize, idx: usize) -> f64 {
        (idx as f64 + 0.5 - 0.5 * self.shape[a] as f64) * self.voxel_size
    }

    /// Row-major linear index; axis 0 is slowest.
    pub fn linear(&self, idx: &[usize]) -> usize {
        let mut k = 0;
        for (a, &i) in idx.iter().enumerate() {
            k = k * self.shape[a] + i;
        }
        k
    }
}

/// Discretized object density f with support in Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    pub spec: GridSpec,
    pub omega: OmegaShape,
    pub values: Vec<f64>,
}

impl VolumeGrid {
    pub fn zeros(spec: GridSpec, omega: OmegaShape) -> Self {
        let n = spec.len();
        VolumeGrid {
            spec,
            omega,
            values: vec![0.0; n],
        }
    }

    /// Constant value inside Ω, zero outside.
    pub fn constant(spec: GridSpec, omega: OmegaShape, value: f64) -> Self {
        let mut v = VolumeGrid::zeros(spec, omega);
        v.values.fill(value);
        v.enforce_support();
        v
    }

    pub fn from_values(spec: GridSpec, omega: OmegaShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(GensartError::config("value buffer does not match grid shape"));
        }
        let mut v = VolumeGrid { spec, omega, values };
        v.enforce_support();
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// True if the voxel center at linear index `k` lies inside Ω.
    pub fn in_omega(&self, k: usize) -> bool {
        in_omega(&self.spec, &self.omega, k)
    }

    /// Zero out all samples whose voxel center lies outside Ω.
    pub fn enforce_support(&mut self) {
        match &self.omega {
            OmegaShape::Box => {}
            _ => {
                let spec = self.spec.clone();
                let omega = self.omega.clone();
                for (k, x) in self.values.iter_mut().enumerate() {
                    if !in_omega(&spec, &omega, k) {
                        *x = 0.0;
                    }
                }
            }
        }
    }

    /// Mask as a 0/1 volume (the indicator 1_Ω).
    pub fn indicator(spec: GridSpec, omega: OmegaShape) -> Self {
        VolumeGrid::constant(spec, omega, 1.0)
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(GensartError::Numerical("volume contains non-finite entries".into()))
        }
    }

    /// Sum of squared forward differences inside Ω (plain differences, no
    /// spacing factor). Used as a smoothness measure.
    pub fn gradient_energy(&self) -> f64 {
        let spec = &self.spec;
        let dim = spec.dim();
        let mut strides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * spec.shape[a + 1];
        }
        let mut e = 0.0;
        let mut idx = vec![0usize; dim];
        for k in 0..spec.len() {
            if self.in_omega(k) {
                for a in 0..dim {
                    if idx[a] + 1 < spec.shape[a] {
                        let k2 = k + strides[a];
                        if self.in_omega(k2) {
                            let d = self.values[k2] - self.values[k];
                            e += d * d;
                        }
                    }
                }
            }
            // advance multi-index
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < spec.shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        e
    }
}

/// True if the voxel center at linear index `k` lies inside Ω.
pub fn omega_contains(spec: &GridSpec, omega: &OmegaShape, k: usize) -> bool {
    in_omega(spec, omega, k)
}

fn in_omega(spec: &GridSpec, omega: &OmegaShape, k: usize) -> bool {
    match omega {
        OmegaShape::Box => true,
        OmegaShape::Mask(m) => m.get(k).copied().unwrap_or(false),
        OmegaShape::Ball { radius } => {
            let c = center_of(spec, k);
            c.iter().map(|x| x * x).sum::<f64>() <= radius * radius
        }
        OmegaShape::Cylinder { radius } => {
            // circular cross-section in the last two axes, full extent along axis 0
            let c = center_of(spec, k);
            let d = spec.dim();
            let r2: f64 = c[d - 2] * c[d - 2] + c[d - 1] * c[d - 1];
            r2 <= radius * radius
        }
    }
}

fn center_of(spec: &GridSpec, k: usize) -> Vec<f64> {
    let dim = spec.dim();
    let mut idx = vec![0usize; dim];
    let mut rem = k;
    for a in (0..dim).rev() {
        idx[a] = rem % spec.shape[a];
        rem /= spec.shape[a];
    }
    (0..dim).map(|a| spec.center(a, idx[a])).collect()
}
