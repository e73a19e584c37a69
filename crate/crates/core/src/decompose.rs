use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Splits a symmetric PSD 3×3 covariance into scales and a right-handed
/// rotation with `R · diag(S²) · Rᵀ = Σ`.
///
/// Scales come out sorted descending. Each eigenvector is signed so its first
/// non-negligible component is positive, then the last column is flipped if
/// needed to make `det(R) = +1`. Diagonal input maps to a permutation of the
/// axes (identity when already sorted).
pub fn extract_scale_rotation(sigma: &Matrix3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let scale = sigma.abs().max().max(1.0);
    if (sigma - sigma.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::contract("covariance is not symmetric"));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteParameter("sigma_cond"));
    }

    let is_diagonal = (0..3).all(|i| (0..3).all(|j| i == j || sigma[(i, j)] == 0.0));
    let (values, vectors) = if is_diagonal {
        (sigma.diagonal(), Matrix3::identity())
    } else {
        let eig = sigma.symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    };

    let mut order = [0usize, 1, 2];
    // stable: equal eigenvalues keep their original axis order
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let mut rotation = Matrix3::zeros();
    let mut scales = Vector3::zeros();
    for (col, &src) in order.iter().enumerate() {
        let mut v = vectors.column(src).into_owned();
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        rotation.set_column(col, &v);
        scales[col] = values[src].max(0.0).sqrt();
    }
    if rotation.determinant() < 0.0 {
        let flipped = -rotation.column(2).into_owned();
        rotation.set_column(2, &flipped);
    }
    Ok((scales, rotation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity() {
        let (s, r) = extract_scale_rotation(&Matrix3::identity()).unwrap();
        assert_eq!(s, Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn diagonal_sorted() {
        let (s, r) = extract_scale_rotation(&Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 0.25))).unwrap();
        assert_eq!(s, Vector3::new(2.0, 1.0, 0.5));
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn diagonal_unsorted_is_a_proper_permutation() {
        let sigma = Matrix3::from_diagonal(&Vector3::new(0.25, 4.0, 1.0));
        let (s, r) = extract_scale_rotation(&sigma).unwrap();
        assert_eq!(s, Vector3::new(2.0, 1.0, 0.5));
        assert_eq!(r.determinant(), 1.0);
        let back = r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose();
        assert_eq!(back, sigma);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let sigma = a.transpose() * a;
            let (s, r) = extract_scale_rotation(&sigma).unwrap();
            let back = r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose();
            assert!((back - sigma).abs().max() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
            assert!(s[0] >= s[1] && s[1] >= s[2]);
        }
    }

    #[test]
    fn asymmetric_is_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.5;
        assert!(matches!(extract_scale_rotation(&m), Err(Error::ContractViolation(_))));
    }
}
