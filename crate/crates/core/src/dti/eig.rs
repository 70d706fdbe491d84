/// Eigen-decomposition of a symmetric 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen {
    /// Eigenvalues, descending.
    pub values: [f64; 3],
    /// Unit eigenvectors matching `values`.
    pub vectors: [[f64; 3]; 3],
}

/// Expands `(xx, xy, xz, yy, yz, zz)` into a full matrix.
pub fn sym_matrix(d: &[f64; 6]) -> [[f64; 3]; 3] {
    [[d[0], d[1], d[2]], [d[1], d[3], d[4]], [d[2], d[4], d[5]]]
}

/// Eigenvalues and eigenvectors of the tensor `(Dxx, Dxy, Dxz, Dyy, Dyz, Dzz)`
/// by cyclic Jacobi rotations.
pub fn eig3_sym(d: &[f64; 6]) -> SymEigen {
    let mut a = sym_matrix(d);
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale > 0.0 {
        for _sweep in 0..64 {
            let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
            if off <= scale * 1e-18 {
                break;
            }
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← Jᵀ A J with J the (p, q) rotation.
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    SymEigen {
        values: order.map(|i| a[i][i]),
        vectors: order.map(|i| [v[0][i], v[1][i], v[2][i]]),
    }
}
