use nalgebra::{DMatrix, DVector};

use super::ControlError;

/// Decomposition of the coupling block `D_ua = U Λ V^T` in the convention
/// used by the uncontrolled-motion analysis: singular values ascending,
/// `V = [V_rowspace | V_kernel]` a full orthonormal basis of the actuated
/// coordinate space.
#[derive(Debug, Clone)]
pub struct SvdAnalysis {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Ascending singular values (length m).
    pub sigma: DVector<f64>,
    /// Transformed actuated coordinates `V^T q_a`.
    pub p_a: DVector<f64>,
    /// Transformed auxiliary control `V^T v_ext`.
    pub nu_ext: DVector<f64>,
    /// Last `n - m` columns of `V`: basis of `ker(D_ua)`.
    pub kernel_basis: DMatrix<f64>,
}

impl SvdAnalysis {
    pub fn rank_deficient(&self, tol: f64) -> bool {
        self.sigma.len() == 0 || self.sigma[0] < tol
    }

    /// Reconstruction `U Λ V^T` (for invariant checks).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let m = self.sigma.len();
        let n = self.v.nrows();
        let mut lambda = DMatrix::zeros(m, n);
        for i in 0..m {
            lambda[(i, i)] = self.sigma[i];
        }
        &self.u * lambda * self.v.transpose()
    }

    /// Minimum-norm pseudo-inverse `V Λ^+ U^T`.
    pub fn pseudo_inverse(&self, tol: f64) -> Result<DMatrix<f64>, ControlError> {
        let m = self.sigma.len();
        let n = self.v.nrows();
        if self.rank_deficient(tol) {
            return Err(ControlError::RankDeficient {
                sigma_min: if m == 0 { 0.0 } else { self.sigma[0] },
            });
        }
        let mut pinv = DMatrix::zeros(n, m);
        for i in 0..m {
            let vi = self.v.column(i);
            let ui = self.u.column(i);
            for r in 0..n {
                for c in 0..m {
                    pinv[(r, c)] += vi[r] * ui[c] / self.sigma[i];
                }
            }
        }
        Ok(pinv)
    }
}

/// Full-basis SVD of the (m x n) coupling block, built from the symmetric
/// eigendecomposition of `D_ua^T D_ua` so the kernel basis is explicit.
///
/// `prev_v` aligns column signs with the previous analysis so transformed
/// coordinate traces stay continuous across control ticks.
pub fn analyze_svd(
    d_ua: &DMatrix<f64>,
    q_a: &DVector<f64>,
    v_ext: &DVector<f64>,
    prev_v: Option<&DMatrix<f64>>,
) -> SvdAnalysis {
    let m = d_ua.nrows();
    let n = d_ua.ncols();
    debug_assert!(m <= n);

    let gram = d_ua.transpose() * d_ua;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());

    // Kernel directions carry the n-m smallest eigenvalues; the row-space
    // columns follow in ascending singular-value order.
    let mut v = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().skip(n - m).enumerate() {
        v.set_column(dst, &eig.eigenvectors.column(src));
    }
    for (dst, &src) in order.iter().take(n - m).enumerate() {
        v.set_column(m + dst, &eig.eigenvectors.column(src));
    }
    let sigma = DVector::from_fn(m, |i, _| {
        let idx = order[n - m + i];
        eig.eigenvalues[idx].max(0.0).sqrt()
    });

    let mut u = DMatrix::zeros(m, m);
    for i in 0..m {
        if sigma[i] > 1e-14 {
            let col = d_ua * v.column(i) / sigma[i];
            u.set_column(i, &col);
        } else {
            u[(i, i)] = 1.0;
        }
    }

    if let Some(prev) = prev_v {
        if prev.nrows() == n && prev.ncols() == n {
            for j in 0..n {
                if prev.column(j).dot(&v.column(j)) < 0.0 {
                    let flipped = -v.column(j).into_owned();
                    v.set_column(j, &flipped);
                    if j < m {
                        let fu = -u.column(j).into_owned();
                        u.set_column(j, &fu);
                    }
                }
            }
        }
    }

    let p_a = v.transpose() * q_a;
    let nu_ext = v.transpose() * v_ext;
    let kernel_basis = v.columns(m, n - m).into_owned();
    SvdAnalysis { u, v, sigma, p_a, nu_ext, kernel_basis }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_row() {
        let d_ua = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let a = analyze_svd(&d_ua, &DVector::zeros(2), &DVector::zeros(2), None);
        assert_relative_eq!(a.sigma[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(a.v.column(0)[0].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(a.kernel_basis.column(0)[1].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn leg_row_closed_form() {
        let d_ua = DMatrix::from_row_slice(1, 2, &[0.025, 0.05]);
        let a = analyze_svd(&d_ua, &DVector::zeros(2), &DVector::zeros(2), None);
        assert_relative_eq!(a.sigma[0], 0.003125f64.sqrt(), epsilon = 1e-12);
        let v1 = a.v.column(0);
        let expected = [0.4472135954999579, 0.8944271909999159];
        let sign = if v1[0] > 0.0 { 1.0 } else { -1.0 };
        assert_relative_eq!(sign * v1[0], expected[0], epsilon = 1e-10);
        assert_relative_eq!(sign * v1[1], expected[1], epsilon = 1e-10);
    }

    #[test]
    fn reconstruction_and_orthogonality_on_random_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let (m, n) = (1 + rng.gen_range(0..2usize), 2 + rng.gen_range(0..2usize));
            let (m, n) = (m.min(n), n.max(m));
            let d_ua = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0));
            let a = analyze_svd(&d_ua, &DVector::zeros(n), &DVector::zeros(n), None);
            assert!((a.reconstruct() - &d_ua).abs().max() < 1e-10);
            let vtv = a.v.transpose() * &a.v;
            assert!((vtv - DMatrix::identity(n, n)).abs().max() < 1e-10);
            let utu = a.u.transpose() * &a.u;
            assert!((utu - DMatrix::identity(m, m)).abs().max() < 1e-10);
            for i in 1..m {
                assert!(a.sigma[i] >= a.sigma[i - 1]);
            }
        }
    }

    #[test]
    fn pseudo_inverse_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let d_ua = DMatrix::from_fn(1, 2, |_, _| rng.gen_range(-2.0..2.0));
            let a = analyze_svd(&d_ua, &DVector::zeros(2), &DVector::zeros(2), None);
            let pinv = a.pseudo_inverse(1e-10).unwrap();
            let back = &d_ua * &pinv * &d_ua;
            assert!((back - &d_ua).abs().max() < 1e-10);
        }
    }

    #[test]
    fn sign_alignment_keeps_columns_stable() {
        let d1 = DMatrix::from_row_slice(1, 2, &[0.5, 0.2]);
        let a1 = analyze_svd(&d1, &DVector::zeros(2), &DVector::zeros(2), None);
        // Re-analyze a nearby block with flipped eigenvector signs forced by
        // passing a negated previous basis.
        let neg = -a1.v.clone();
        let a2 = analyze_svd(&d1, &DVector::zeros(2), &DVector::zeros(2), Some(&neg));
        for j in 0..2 {
            assert!(neg.column(j).dot(&a2.v.column(j)) > 0.0);
        }
        assert!((a2.reconstruct() - &d1).abs().max() < 1e-12);
    }
}
