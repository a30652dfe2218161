//! Finite differences on the detector grid, restricted to the support of the
//! unit-projection.
//!
//! The gradient is a list of forward-difference pairs (i, k) of neighboring
//! pixels for which the unit-projection vanishes at neither index; plain
//! differences p[k] − p[i] without a spacing factor, matching the discrete
//! convention of the projection-space solves. Each pair carries a diagonal
//! weight: the average of u at its two pixels.

#[derive(Debug, Clone)]
pub struct DetectorGradient {
    /// neighbor index pairs (i, k), forward differences along each axis
    pub pairs: Vec<(usize, usize)>,
    /// diagonal weights U_∇: mean of u at the pair's pixels
    pub u_nabla: Vec<f64>,
    pub n_pixels: usize,
}

impl DetectorGradient {
    /// Build from the detector shape `[n0, n1]` (n1 = 1 for 1D detectors),
    /// the unit-projection samples and their support mask.
    pub fn build(counts: [usize; 2], u: &[f64], mask: &[bool]) -> Self {
        let (n0, n1) = (counts[0], counts[1]);
        let mut pairs = Vec::new();
        let mut u_nabla = Vec::new();
        let lin = |i0: usize, i1: usize| i1 * n0 + i0;
        for i1 in 0..n1 {
            for i0 in 0..n0 {
                let a = lin(i0, i1);
                if !mask[a] {
                    continue;
                }
                if i0 + 1 < n0 {
                    let b = lin(i0 + 1, i1);
                    if mask[b] {
                        pairs.push((a, b));
                        u_nabla.push(0.5 * (u[a] + u[b]));
                    }
                }
                if i1 + 1 < n1 {
                    let b = lin(i0, i1 + 1);
                    if mask[b] {
                        pairs.push((a, b));
                        u_nabla.push(0.5 * (u[a] + u[b]));
                    }
                }
            }
        }
        DetectorGradient {
            pairs,
            u_nabla,
            n_pixels: u.len(),
        }
    }

    /// ∇p: one difference per pair.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        self.pairs.iter().map(|&(i, k)| p[k] - p[i]).collect()
    }

    /// ∇^T q back onto the pixel grid.
    pub fn apply_transpose(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_pixels];
        for (m, &(i, k)) in self.pairs.iter().enumerate() {
            out[k] += q[m];
            out[i] -= q[m];
        }
        out
    }

    /// The quadratic form ‖U_∇^{1/2} ∇ p‖².
    pub fn energy(&self, p: &[f64]) -> f64 {
        self.pairs
            .iter()
            .zip(&self.u_nabla)
            .map(|(&(i, k), &w)| {
                let d = p[k] - p[i];
                w * d * d
            })
            .sum()
    }

    /// ∇^T U_∇ ∇ p, the SPD core of the gradient penalty.
    pub fn normal_apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_pixels];
        for (m, &(i, k)) in self.pairs.iter().enumerate() {
            let d = self.u_nabla[m] * (p[k] - p[i]);
            out[k] += d;
            out[i] -= d;
        }
        out
    }
}
