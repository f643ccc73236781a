use nalgebra::Matrix3;

use crate::sketch::SuffStats;

/// Monic cubic `x^3 + c2 x^2 + c1 x + c0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicPoly {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

/// Real-root count of a cubic together with its discriminant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootClass {
    /// 1 or 3.
    pub count: u8,
    pub discriminant: f64,
    /// Discriminant indistinguishable from zero; reported as three roots.
    pub repeated: bool,
}

impl CubicPoly {
    pub fn new(c2: f64, c1: f64, c0: f64) -> Self {
        Self { c2, c1, c0 }
    }

    pub fn is_finite(&self) -> bool {
        self.c2.is_finite() && self.c1.is_finite() && self.c0.is_finite()
    }

    pub fn eval(&self, x: f64) -> f64 {
        ((x + self.c2) * x + self.c1) * x + self.c0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (3.0 * x + 2.0 * self.c2) * x + self.c1
    }

    pub fn discriminant(&self) -> f64 {
        let (b, c, d) = (self.c2, self.c1, self.c0);
        18.0 * b * c * d - 4.0 * b * b * b * d + b * b * c * c - 4.0 * c * c * c - 27.0 * d * d
    }

    /// Natural magnitude of the discriminant: it is homogeneous of degree six
    /// in the root scale.
    fn discriminant_scale(&self) -> f64 {
        let s = self
            .c2
            .abs()
            .max(self.c1.abs().sqrt())
            .max(self.c0.abs().cbrt());
        s.powi(6)
    }

    pub fn classify_roots(&self) -> RootClass {
        let disc = self.discriminant();
        let repeated = disc.abs() <= 1e-12 * self.discriminant_scale();
        RootClass {
            count: if repeated || disc > 0.0 { 3 } else { 1 },
            discriminant: disc,
            repeated,
        }
    }

    /// Real roots from the eigenvalues of the companion matrix, ascending.
    ///
    /// Eigenvalues with imaginary part below `1e-9` times the root scale are
    /// treated as real. Used for diagnostics, not as an estimator.
    pub fn companion_roots(&self) -> Vec<f64> {
        let m = Matrix3::new(
            0.0, 0.0, -self.c0, //
            1.0, 0.0, -self.c1, //
            0.0, 1.0, -self.c2,
        );
        let eig = m.complex_eigenvalues();
        let scale = eig.iter().map(|z| z.norm()).fold(1e-300, f64::max);
        let mut roots: Vec<f64> = eig
            .iter()
            .filter(|z| z.im.abs() <= 1e-9 * scale)
            .map(|z| z.re)
            .collect();
        if roots.is_empty() {
            // a cubic always has a real root; take the least imaginary one
            let z = eig
                .iter()
                .min_by(|a, b| a.im.abs().total_cmp(&b.im.abs()))
                .unwrap();
            roots.push(z.re);
        }
        roots.sort_by(f64::total_cmp);
        roots
    }
}

/// Cubic whose real root is the maximum-likelihood inner product.
///
/// `x^3 - w3 x^2 + (n1 w2 + n2 w1 - n1 n2) x - n1 n2 w3`, where `n1`, `n2` are
/// the known squared norms and `stats` are normalized so `E[w1] = n1`.
pub fn mle_cubic(stats: &SuffStats, n1: f64, n2: f64) -> CubicPoly {
    CubicPoly {
        c2: -stats.w3,
        c1: n1 * stats.w2 + n2 * stats.w1 - n1 * n2,
        c0: -n1 * n2 * stats.w3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_norm_cubic_factorizes() {
        let s = SuffStats {
            w1: 1.0,
            w2: 1.0,
            w3: 0.3,
            k: 10,
        };
        let c = mle_cubic(&s, 1.0, 1.0);
        assert_eq!(c, CubicPoly::new(-0.3, 1.0, -0.3));
        assert!(c.eval(0.3).abs() < 1e-15);
        assert_eq!(c.classify_roots().count, 1);
    }

    #[test]
    fn substitution_example() {
        let s = SuffStats {
            w1: 1.2,
            w2: 0.9,
            w3: 0.5,
            k: 10,
        };
        let c = mle_cubic(&s, 1.0, 1.0);
        assert_eq!(c.c2, -0.5);
        assert!((c.c1 - 1.1).abs() < 1e-15);
        assert_eq!(c.c0, -0.5);
    }

    #[test]
    fn three_real_roots() {
        let c = CubicPoly::new(0.0, -1.0, 0.0);
        let class = c.classify_roots();
        assert_eq!(class.count, 3);
        assert!(!class.repeated);
        assert_eq!(class.discriminant, 4.0);
        let r = c.companion_roots();
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_root_boundary() {
        // (x - 1)^2 (x + 2) = x^3 - 3x + 2
        let class = CubicPoly::new(0.0, -3.0, 2.0).classify_roots();
        assert!(class.repeated);
        assert_eq!(class.count, 3);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let c = CubicPoly::new(-0.7, 1.3, 0.2);
        for &x in &[-2.0, -0.1, 0.0, 0.9, 3.0] {
            let h = 1e-6;
            let fd = (c.eval(x + h) - c.eval(x - h)) / (2.0 * h);
            assert!((fd - c.derivative(x)).abs() < 1e-6);
        }
    }
}
