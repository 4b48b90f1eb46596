use mspbe_core::chain::{
    bellman_apply, msbe, msbe_gradient, mspbe, projection_matrix, td_fixed_point, FeatureMap,
    MarkovRewardProcess, ValueVector,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[derive(Debug)]
struct Chain {
    mrp: MarkovRewardProcess,
    features: FeatureMap,
}

/// Stationary distribution by power iteration on the lazy chain.
fn stationary(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let lazy = (p + DMatrix::identity(n, n)) * 0.5;
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..20_000 {
        v = lazy.transpose() * &v;
    }
    let s = v.sum();
    v.iter().map(|x| x / s).collect()
}

fn chain_strategy() -> impl Strategy<Value = Chain> {
    (2usize..=8, 1usize..=4, 0.0f64..0.95)
        .prop_flat_map(|(n, k, alpha)| {
            let k = k.min(n);
            (
                Just((n, k, alpha)),
                proptest::collection::vec(0.01f64..1.0, n * n),
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(-1.0f64..1.0, n * k),
            )
        })
        .prop_filter_map("ill-conditioned features", |((n, k, alpha), raw, g, f)| {
            let mut p = DMatrix::from_row_slice(n, n, &raw);
            for i in 0..n {
                let s = p.row(i).sum();
                p.row_mut(i).scale_mut(1.0 / s);
            }
            let pi = stationary(&p);
            let mrp =
                MarkovRewardProcess::new(p, DMatrix::from_row_slice(n, n, &g), alpha, &pi).ok()?;
            let features = FeatureMap::with_condition_bound(
                DMatrix::from_row_slice(n, k, &f),
                mrp.weighting(),
                1e6,
            )
            .ok()?;
            Some(Chain { mrp, features })
        })
}

/// `Φ (ΦᵀDΦ)⁻¹ ΦᵀD` by explicit inversion.
fn direct_projection(c: &Chain) -> DMatrix<f64> {
    let phi = c.features.matrix();
    let d = DMatrix::from_diagonal(c.mrp.weighting().weights());
    let gram = phi.transpose() * &d * phi;
    phi * gram.try_inverse().unwrap() * phi.transpose() * d
}

fn theta_strategy() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, 4)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn projection_is_d_orthogonal(c in chain_strategy()) {
        let pi = projection_matrix(&c.features, c.mrp.weighting()).unwrap();
        prop_assert!(max_abs(&(&pi * &pi - &pi)) <= 1e-10);
        let d = DMatrix::from_diagonal(c.mrp.weighting().weights());
        let dp = &d * &pi;
        prop_assert!(max_abs(&(&dp - dp.transpose())) <= 1e-10);
        prop_assert!(max_abs(&(&pi - direct_projection(&c))) <= 1e-8);
    }

    #[test]
    fn fixed_point_zeroes_mspbe(c in chain_strategy()) {
        let r = td_fixed_point(&c.mrp, &c.features).unwrap();
        prop_assert!(mspbe(&c.mrp, &c.features, &r).unwrap() <= 1e-10);
        // ΠT(Φr) = Φr through the explicit projection.
        let t = bellman_apply(&c.mrp, &ValueVector::new(c.features.values(&r)).unwrap()).unwrap();
        let gap = direct_projection(&c) * t.into_inner() - c.features.values(&r);
        prop_assert!(gap.amax() <= 1e-8);
    }

    #[test]
    fn mspbe_bounded_by_msbe(c in chain_strategy(), raw in proptest::collection::vec(theta_strategy(), 50)) {
        let k = c.features.n_features();
        let proj = direct_projection(&c);
        let w = c.mrp.weighting();
        for t in raw {
            let theta = DVector::from_column_slice(&t[..k]);
            let be = msbe(&c.mrp, &c.features, &theta).unwrap();
            let pbe = mspbe(&c.mrp, &c.features, &theta).unwrap();
            prop_assert!(pbe <= be * (1.0 + 1e-12) + 1e-14);

            let j = c.features.values(&theta);
            let t_j = bellman_apply(&c.mrp, &ValueVector::new(j.clone()).unwrap()).unwrap().into_inner();
            let direct_be = w.norm_squared(&(&t_j - &j));
            let direct_pbe = w.norm_squared(&(&proj * &t_j - &j));
            prop_assert!((be - direct_be).abs() <= 1e-9 * direct_be.max(1.0));
            prop_assert!((pbe - direct_pbe).abs() <= 1e-9 * direct_pbe.max(1.0));
        }
    }

    #[test]
    fn msbe_gradient_matches_central_differences(c in chain_strategy(), t in theta_strategy()) {
        let k = c.features.n_features();
        let theta = DVector::from_column_slice(&t[..k]);
        let g = msbe_gradient(&c.mrp, &c.features, &theta).unwrap();
        let h = 1e-4;
        let fd = DVector::from_fn(k, |i, _| {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            (msbe(&c.mrp, &c.features, &up).unwrap() - msbe(&c.mrp, &c.features, &down).unwrap()) / (2.0 * h)
        });
        let scale = g.norm().max(1e-3);
        prop_assert!((&fd - &g).norm() / scale <= 1e-6, "fd {fd} analytic {g}");
    }
}
