//! Factorization of convex quadratic forms into cone rows.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::program::VarId;

/// `x' Q x = ||F x||^2` over the variables touched by the form.
#[derive(Debug, Clone)]
pub struct QuadFactor {
    pub vars: Vec<VarId>,
    /// Rows of `F`, each with one coefficient per entry of `vars`.
    pub rows: Vec<Vec<f64>>,
}

/// Factor `sum(c * x_i * x_j)` as `||F x||^2`; fails if the form is not PSD.
pub fn factor_psd(quad: &[(VarId, VarId, f64)]) -> Result<QuadFactor, String> {
    let mut vars: Vec<VarId> = quad.iter().flat_map(|&(i, j, _)| [i, j]).collect();
    vars.sort();
    vars.dedup();
    let n = vars.len();
    let pos = |v: VarId| vars.binary_search(&v).expect("var collected above");
    let mut q = DMatrix::<f64>::zeros(n, n);
    for &(i, j, c) in quad {
        let (a, b) = (pos(i), pos(j));
        if a == b {
            q[(a, a)] += c;
        } else {
            q[(a, b)] += 0.5 * c;
            q[(b, a)] += 0.5 * c;
        }
    }
    // Diagonal forms are the common case; skip the eigensolver for them.
    let diagonal = (0..n).all(|a| (0..n).all(|b| a == b || q[(a, b)] == 0.0));
    if diagonal {
        let mut rows = Vec::new();
        for a in 0..n {
            let d = q[(a, a)];
            if d < 0.0 {
                return Err(format!("quadratic form is not positive semidefinite (diagonal {d})"));
            }
            if d > 0.0 {
                let mut r = vec![0.0; n];
                r[a] = d.sqrt();
                rows.push(r);
            }
        }
        return Ok(QuadFactor { vars, rows });
    }
    let scale = q.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let eig = SymmetricEigen::new(q);
    let mut rows = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-10 * scale {
            return Err(format!("quadratic form is not positive semidefinite (eigenvalue {lambda})"));
        }
        if lambda > 1e-14 * scale {
            let s = lambda.sqrt();
            rows.push(eig.eigenvectors.column(k).iter().map(|v| v * s).collect());
        }
    }
    Ok(QuadFactor { vars, rows })
}
