//! Orthonormal basis construction: Householder completion of a unit vector
//! and Gram-Schmidt with rank tracking.

use super::{dot, norm, Mat};
use crate::{Error, Result};

/// Relative residual below which an input adds no new basis direction.
pub(crate) const RANK_EPS: f64 = 1e-10;

/// Complete a unit vector `z0` to an orthonormal basis, returning the other
/// `n - 1` vectors.
///
/// Uses the Householder reflector that maps the first standard basis vector
/// onto `±z0`; its remaining columns are exactly orthogonal to `z0` by
/// construction. Deterministic.
pub fn complete_onb(z0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = z0.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let nrm = norm(z0);
    if (nrm - 1.0).abs() > 1e-8 {
        return Err(Error::NotUnitVector { norm: nrm });
    }
    let z: Vec<f64> = z0.iter().map(|x| x / nrm).collect();

    // Reflect e1 onto -sign(z[0]) * z; picking the sign away from e1 keeps
    // the reflector well conditioned when z is close to +-e1.
    let sgn = if z[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = z.clone();
    w[0] += sgn;
    let wnorm_sq = dot(&w, &w);
    // wnorm_sq = 2 (1 + |z[0]|) >= 2, never degenerate.
    let mut out = Vec::with_capacity(n - 1);
    for j in 1..n {
        let mut col = vec![0.0; n];
        col[j] = 1.0;
        let coeff = 2.0 * w[j] / wnorm_sq;
        for i in 0..n {
            col[i] -= coeff * w[i];
        }
        out.push(col);
    }
    Ok(out)
}

/// Output of [`gram_schmidt`].
pub struct GramSchmidt {
    /// Orthonormal basis of the span of the inputs.
    pub onb: Vec<Vec<f64>>,
    /// `coeffs[i][j] = <onb_i, input_j>`, so inputs reconstruct as
    /// `input_j = sum_i coeffs[i][j] * onb_i`.
    pub coeffs: Mat,
    pub effective_rank: usize,
}

/// Modified Gram-Schmidt with re-orthogonalization and a relative rank
/// threshold: inputs whose residual falls below `RANK_EPS` times the largest
/// input norm contribute no basis vector.
pub fn gram_schmidt<V: AsRef<[f64]>>(vectors: &[V]) -> Result<GramSchmidt> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = vectors[0].as_ref().len();
    if vectors.iter().any(|v| v.as_ref().len() != dim) {
        return Err(Error::ShapeMismatch("gram_schmidt inputs differ in dimension".into()));
    }
    let max_norm = vectors.iter().map(|v| norm(v.as_ref())).fold(0.0, f64::max);
    let cutoff = max_norm * RANK_EPS;

    let mut onb: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.as_ref().to_vec();
        for _ in 0..2 {
            for b in &onb {
                let proj = dot(&w, b);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= proj * bi;
                }
            }
        }
        let res = norm(&w);
        if res > cutoff {
            for wi in &mut w {
                *wi /= res;
            }
            onb.push(w);
        }
    }

    let q = onb.len();
    let mut coeffs = Mat::zeros(q, vectors.len());
    for (i, b) in onb.iter().enumerate() {
        for (j, v) in vectors.iter().enumerate() {
            coeffs.set(i, j, dot(b, v.as_ref()));
        }
    }
    Ok(GramSchmidt { onb, coeffs, effective_rank: q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn gram_of(all: &[Vec<f64>]) -> Mat {
        let k = all.len();
        Mat::from_fn(k, k, |i, j| dot(&all[i], &all[j]))
    }

    #[test]
    fn complete_onb_2d_cases() {
        let rest = complete_onb(&[1.0, 0.0]).unwrap();
        assert_eq!(rest.len(), 1);
        assert!(rest[0][0].abs() < 1e-12 && (rest[0][1].abs() - 1.0).abs() < 1e-12);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rest = complete_onb(&[s, s]).unwrap();
        // Forced by orthogonality up to sign.
        assert!((rest[0][0].abs() - s).abs() < 1e-12);
        assert!((rest[0][1].abs() - s).abs() < 1e-12);
        assert!((rest[0][0] + rest[0][1]).abs() < 1e-12);
    }

    #[test]
    fn complete_onb_rejects_non_unit() {
        assert!(matches!(
            complete_onb(&[1.0, 1.0]),
            Err(Error::NotUnitVector { .. })
        ));
    }

    #[test]
    fn complete_onb_gram_is_identity() {
        for seed in 0..200u64 {
            let mut rng = CounterRng::new(seed);
            let n = 2 + rng.below(7) as usize;
            let mut z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let nz = norm(&z);
            for x in &mut z {
                *x /= nz;
            }
            let mut all = vec![z];
            all.extend(complete_onb(&all[0]).unwrap());
            assert_eq!(all.len(), n);
            let g = gram_of(&all);
            assert!(g.sub(&Mat::identity(n)).max_abs() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn gram_schmidt_hand_case() {
        let gs = gram_schmidt(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(gs.effective_rank, 2);
        assert!((gs.onb[0][0] - 1.0).abs() < 1e-12);
        assert!((gs.onb[1][1] - 1.0).abs() < 1e-12);
        assert_eq!(gs.coeffs.rows(), 2);
        assert!((gs.coeffs.at(0, 0) - 1.0).abs() < 1e-12);
        assert!((gs.coeffs.at(0, 1) - 1.0).abs() < 1e-12);
        assert!(gs.coeffs.at(1, 0).abs() < 1e-12);
        assert!((gs.coeffs.at(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_dependent_inputs() {
        let u = vec![3.0, 4.0];
        let gs = gram_schmidt(&[u.clone(), u.clone()]).unwrap();
        assert_eq!(gs.effective_rank, 1);
        assert!((gs.onb[0][0] - 0.6).abs() < 1e-12);
        assert!((gs.onb[0][1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_empty_errors() {
        assert!(matches!(gram_schmidt::<Vec<f64>>(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn gram_schmidt_reconstructs_including_rank_deficient() {
        for seed in 0..200u64 {
            let mut rng = CounterRng::new(seed ^ 0xabc);
            let dim = 1 + rng.below(8) as usize;
            let count = 1 + rng.below(6) as usize;
            let mut inputs: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..dim).map(|_| rng.normal()).collect())
                .collect();
            if count >= 2 && seed % 3 == 0 {
                inputs[count - 1] = inputs[0].iter().map(|x| x * 2.5).collect();
            }
            let max_norm = inputs.iter().map(|v| norm(v)).fold(0.0, f64::max);
            let gs = gram_schmidt(&inputs).unwrap();
            // Basis orthonormal.
            let g = gram_of(&gs.onb);
            assert!(g.sub(&Mat::identity(gs.effective_rank)).max_abs() < 1e-10);
            // Reconstruction within 1e-9 of the largest input norm.
            for (j, v) in inputs.iter().enumerate() {
                let mut back = vec![0.0; dim];
                for (i, b) in gs.onb.iter().enumerate() {
                    let cij = gs.coeffs.at(i, j);
                    for (bk, bv) in back.iter_mut().zip(b) {
                        *bk += cij * bv;
                    }
                }
                let err: f64 = back
                    .iter()
                    .zip(v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(err <= 1e-9 * max_norm.max(1e-300), "seed {seed} input {j}");
            }
        }
    }
}
