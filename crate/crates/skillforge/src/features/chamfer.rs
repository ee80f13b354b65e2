//! Symmetric Chamfer distance between 2D point sets.

use crate::error::{Error, Result};

/// Mean squared nearest-neighbor distance from P to Q plus the same from Q
/// to P.
pub fn chamfer(p: &[[f64; 2]], q: &[[f64; 2]]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("chamfer distance requires nonempty sets"));
    }
    Ok(directed_mean_sq(p, q) + directed_mean_sq(q, p))
}

fn directed_mean_sq(from: &[[f64; 2]], to: &[[f64; 2]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| sq_dist(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

#[inline]
fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Chamfer distance together with its gradient with respect to the points of
/// `q` (the reconstruction); `p` is treated as data. Nearest-neighbor
/// correspondences are held fixed, which is the usual subgradient.
pub fn chamfer_grad_q(p: &[[f64; 2]], q: &[[f64; 2]], grad_q: &mut [[f64; 2]]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("chamfer distance requires nonempty sets"));
    }
    debug_assert_eq!(grad_q.len(), q.len());
    for g in grad_q.iter_mut() {
        *g = [0.0, 0.0];
    }
    let mut loss = 0.0;
    // P -> Q direction: each p pulls its nearest q.
    let wp = 1.0 / p.len() as f64;
    for a in p {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, b) in q.iter().enumerate() {
            let d = sq_dist(a, b);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        loss += wp * best_d;
        grad_q[best][0] += wp * 2.0 * (q[best][0] - a[0]);
        grad_q[best][1] += wp * 2.0 * (q[best][1] - a[1]);
    }
    // Q -> P direction: each q moves toward its nearest p.
    let wq = 1.0 / q.len() as f64;
    for (j, b) in q.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, a) in p.iter().enumerate() {
            let d = sq_dist(b, a);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        loss += wq * best_d;
        grad_q[j][0] += wq * 2.0 * (b[0] - p[best][0]);
        grad_q[j][1] += wq * 2.0 * (b[1] - p[best][1]);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn identical_sets_have_zero_distance() {
        let p = vec![[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]];
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_singletons() {
        // Both directions contribute 3^2 + 4^2 = 25, so 50 in total.
        let p = vec![[0.0, 0.0]];
        let q = vec![[3.0, 4.0]];
        assert_eq!(chamfer(&p, &q).unwrap(), 50.0);
    }

    #[test]
    fn hand_evaluated_asymmetric_sizes() {
        // P -> Q: (0 + 1)/2 = 0.5; Q -> P: 0. Total 0.5.
        let p = vec![[0.0, 0.0], [1.0, 0.0]];
        let q = vec![[0.0, 0.0]];
        assert_eq!(chamfer(&p, &q).unwrap(), 0.5);
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(chamfer(&[], &[[0.0, 0.0]]).is_err());
        assert!(chamfer(&[[0.0, 0.0]], &[]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::rng_from(3);
        let p: Vec<[f64; 2]> = (0..6)
            .map(|_| {
                [
                    rng::uniform(&mut rng, -1.0, 1.0),
                    rng::uniform(&mut rng, -1.0, 1.0),
                ]
            })
            .collect();
        let q: Vec<[f64; 2]> = (0..5)
            .map(|_| {
                [
                    rng::uniform(&mut rng, -1.0, 1.0),
                    rng::uniform(&mut rng, -1.0, 1.0),
                ]
            })
            .collect();
        let mut grad = vec![[0.0, 0.0]; q.len()];
        let loss = chamfer_grad_q(&p, &q, &mut grad).unwrap();
        assert!((loss - chamfer(&p, &q).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for j in 0..q.len() {
            for d in 0..2 {
                let mut qp = q.clone();
                qp[j][d] += h;
                let mut qm = q.clone();
                qm[j][d] -= h;
                let numeric = (chamfer(&p, &qp).unwrap() - chamfer(&p, &qm).unwrap()) / (2.0 * h);
                assert!(
                    (grad[j][d] - numeric).abs() < 1e-5,
                    "q[{j}][{d}]: {} vs {numeric}",
                    grad[j][d]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_under_exchange(seed in 0u64..200) {
            let mut r = rng::rng_from(seed);
            let n = 3 + (seed as usize % 5);
            let p: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng::uniform(&mut r, -2.0, 2.0), rng::uniform(&mut r, -2.0, 2.0)])
                .collect();
            let q: Vec<[f64; 2]> = (0..n + 1)
                .map(|_| [rng::uniform(&mut r, -2.0, 2.0), rng::uniform(&mut r, -2.0, 2.0)])
                .collect();
            prop_assert_eq!(chamfer(&p, &q).unwrap(), chamfer(&q, &p).unwrap());
            prop_assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        }
    }
}
