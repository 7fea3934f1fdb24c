//! Uniform cubic Hermite meshes on `[0, L]` with pinned end values.

use super::BeamError;

/// Four-point Gauss–Legendre rule on `[0, 1]` as `(point, weight)`.
pub(crate) const GAUSS4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_9, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// Hermite shape functions on the reference element, scaled for an element of
/// length `h`: `(N, dN/dx, d²N/dx²)` at local coordinate `xi ∈ [0, 1]`.
pub(crate) fn shape(xi: f64, h: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let x2 = xi * xi;
    let x3 = x2 * xi;
    let n = [
        1.0 - 3.0 * x2 + 2.0 * x3,
        h * (xi - 2.0 * x2 + x3),
        3.0 * x2 - 2.0 * x3,
        h * (x3 - x2),
    ];
    let dn = [
        (-6.0 * xi + 6.0 * x2) / h,
        1.0 - 4.0 * xi + 3.0 * x2,
        (6.0 * xi - 6.0 * x2) / h,
        3.0 * x2 - 2.0 * xi,
    ];
    let d2n = [
        (-6.0 + 12.0 * xi) / (h * h),
        (-4.0 + 6.0 * xi) / h,
        (6.0 - 12.0 * xi) / (h * h),
        (6.0 * xi - 2.0) / h,
    ];
    (n, dn, d2n)
}

/// Uniform mesh of `m` elements. Each node carries a value and a slope; the
/// value DOFs at `x = 0` and `x = L` are eliminated.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteMesh1D {
    elements: usize,
    length: f64,
}

impl HermiteMesh1D {
    pub fn new(elements: usize, length: f64) -> Result<Self, BeamError> {
        if elements == 0 {
            return Err(BeamError::EmptyMesh);
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(BeamError::InvalidParameter("length must be positive"));
        }
        Ok(Self { elements, length })
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.length / self.elements as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.elements).map(|i| self.node(i)).collect()
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.elements {
            self.length
        } else {
            i as f64 * self.h()
        }
    }

    /// Number of free DOFs: `2(m + 1) − 2`.
    pub fn dofs(&self) -> usize {
        2 * self.elements
    }

    /// Half-bandwidth of any element-assembled matrix on this mesh.
    pub fn bandwidth(&self) -> usize {
        3
    }

    /// Reduced index of the value DOF at `node`, or `None` at the pinned ends.
    pub fn value_dof(&self, node: usize) -> Option<usize> {
        if node == 0 || node == self.elements {
            None
        } else {
            Some(2 * node - 1)
        }
    }

    pub fn slope_dof(&self, node: usize) -> usize {
        match node {
            0 => 0,
            n if n == self.elements => 2 * n - 1,
            n => 2 * n,
        }
    }

    /// Reduced indices of the four local DOFs of element `e`, `None` if pinned.
    pub fn element_dofs(&self, e: usize) -> [Option<usize>; 4] {
        [
            self.value_dof(e),
            Some(self.slope_dof(e)),
            self.value_dof(e + 1),
            Some(self.slope_dof(e + 1)),
        ]
    }

    pub(crate) fn local_values(&self, e: usize, y: &[f64]) -> [f64; 4] {
        self.element_dofs(e).map(|d| d.map_or(0.0, |i| y[i]))
    }

    /// Value and slope of the finite element function `y` at `x`.
    pub fn evaluate(&self, y: &[f64], x: f64) -> (f64, f64) {
        let h = self.h();
        let e = ((x / h).floor().max(0.0) as usize).min(self.elements - 1);
        let xi = (x - self.node(e)) / h;
        let (n, dn, _) = shape(xi, h);
        let c = self.local_values(e, y);
        let value = (0..4).map(|k| c[k] * n[k]).sum();
        let slope = (0..4).map(|k| c[k] * dn[k]).sum();
        (value, slope)
    }

    /// Splits every element in two.
    pub fn refined(&self) -> Self {
        Self {
            elements: 2 * self.elements,
            length: self.length,
        }
    }

    /// Interpolates `y` onto `target` by evaluating values and slopes at its
    /// nodes. Exact when `target` is a nested refinement of `self`.
    pub fn prolong(&self, y: &[f64], target: &HermiteMesh1D) -> Vec<f64> {
        let mut out = vec![0.0; target.dofs()];
        for i in 0..=target.elements {
            let (value, slope) = self.evaluate(y, target.node(i));
            if let Some(d) = target.value_dof(i) {
                out[d] = value;
            }
            out[target.slope_dof(i)] = slope;
        }
        out
    }

    /// Coarsest mesh obtained from `self` by repeated halving with `h ≤ 1/√γ`.
    pub fn refined_for(&self, gamma: f64) -> Self {
        let mut mesh = self.clone();
        while !mesh.resolves(gamma) {
            mesh = mesh.refined();
        }
        mesh
    }

    pub fn resolves(&self, gamma: f64) -> bool {
        self.h() * gamma.sqrt() <= 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dof_layout() {
        let mesh = HermiteMesh1D::new(4, 1.0).unwrap();
        assert_eq!(mesh.dofs(), 8);
        assert_eq!(mesh.element_dofs(0), [None, Some(0), Some(1), Some(2)]);
        assert_eq!(mesh.element_dofs(3), [Some(5), Some(6), None, Some(7)]);
        assert!(HermiteMesh1D::new(0, 1.0).is_err());
    }

    #[test]
    fn gauss_rule_integrates_degree_seven() {
        for p in 0..8 {
            let q: f64 = GAUSS4.iter().map(|(x, w)| w * x.powi(p)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-15, "degree {p}");
        }
    }

    #[test]
    fn shape_derivatives_match_finite_differences() {
        let h = 0.3;
        let eps = 1e-6;
        for &xi in &[0.1, 0.45, 0.8] {
            let (_, dn, d2n) = shape(xi, h);
            let (np, dnp, _) = shape(xi + eps, h);
            let (nm, dnm, _) = shape(xi - eps, h);
            for k in 0..4 {
                assert!(((np[k] - nm[k]) / (2.0 * eps * h) - dn[k]).abs() < 1e-6);
                assert!(((dnp[k] - dnm[k]) / (2.0 * eps * h) - d2n[k]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn prolongation_is_exact_on_nested_meshes() {
        let coarse = HermiteMesh1D::new(5, 2.0).unwrap();
        let y: Vec<f64> = (0..coarse.dofs())
            .map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let fine = coarse.refined().refined();
        let yf = coarse.prolong(&y, &fine);
        for k in 0..=997 {
            let x = 2.0 * k as f64 / 997.0;
            let (a, da) = coarse.evaluate(&y, x);
            let (b, db) = fine.evaluate(&yf, x);
            assert!((a - b).abs() <= 1e-13, "value at {x}: {a} vs {b}");
            assert!((da - db).abs() <= 1e-12, "slope at {x}");
        }
    }

    #[test]
    fn refinement_rule() {
        let mesh = HermiteMesh1D::new(64, 1.0).unwrap();
        assert_eq!(mesh.refined_for(10.0).elements(), 64);
        assert_eq!(mesh.refined_for(4096.0).elements(), 64);
        assert_eq!(mesh.refined_for(5000.0).elements(), 128);
        assert_eq!(mesh.refined_for(1e6).elements(), 1024);
    }
}
