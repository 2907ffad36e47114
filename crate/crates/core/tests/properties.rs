use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use eqindex::calculus::{image_index, model_jacobian};
use eqindex::economy::{build_ces_economy, AgentSpec, ExcessDemandModel, ExchangeEconomySpec};
use eqindex::geometry::{
    bordered_determinant, oriented_complement, oriented_sign, project_to_sphere, spherical_distance,
};

fn parity(n: usize) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Laplace expansion along the first row.
fn laplace_det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return m[(0, 0)];
    }
    (0..n)
        .map(|j| {
            let minor = m.clone().remove_row(0).remove_column(j);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[(0, j)] * laplace_det(&minor)
        })
        .sum()
}

fn unit_positive(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
        let v = DVector::from_vec(v);
        &v / v.norm()
    })
}

fn square(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn dim_and<T: Strategy>(f: impl Fn(usize) -> T + Clone) -> impl Strategy<Value = (usize, T::Value)> {
    (2usize..=6).prop_flat_map(move |n| f(n).prop_map(move |x| (n, x)))
}

fn frame_columns(u: &DVector<f64>, vs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = u.len();
    let mut m = DMatrix::zeros(n, n);
    m.set_column(0, u);
    for (j, v) in vs.iter().enumerate() {
        m.set_column(j + 1, v);
    }
    m
}

/// A positively oriented orthonormal basis of `u`-perp obtained by rotating
/// the standard one with the orthogonal factor of `r`.
fn rotated_frame(u: &DVector<f64>, r: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let base = oriented_complement(u);
    let k = base.len();
    let q = r.clone().view((0, 0), (k, k)).into_owned().qr().q();
    let mut out: Vec<DVector<f64>> = (0..k)
        .map(|j| {
            base.iter()
                .enumerate()
                .fold(DVector::zeros(u.len()), |acc, (i, b)| acc + b * q[(i, j)])
        })
        .collect();
    if q.determinant() < 0.0 {
        out[0].neg_mut();
    }
    out
}

fn cd_like_spec() -> impl Strategy<Value = ExchangeEconomySpec> {
    (2usize..=4).prop_flat_map(|n| {
        let agent = (
            prop::collection::vec(0.1f64..2.0, n),
            -3.0f64..0.9,
            prop::collection::vec(0.0f64..2.0, n),
        )
            .prop_map(|(weights, rho, mut endowment)| {
                endowment[0] += 0.1;
                AgentSpec {
                    weights,
                    rho,
                    endowment,
                }
            });
        prop::collection::vec(agent, 1..=3).prop_map(|agents| ExchangeEconomySpec { agents })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn complement_frame_is_orthonormal_and_positive((_, u) in dim_and(unit_positive)) {
        let vs = oriented_complement(&u);
        prop_assert_eq!(vs.len(), u.len() - 1);
        for (i, v) in vs.iter().enumerate() {
            prop_assert!(v.dot(&u).abs() < 1e-12);
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            for w in &vs[i + 1..] {
                prop_assert!(v.dot(w).abs() < 1e-12);
            }
        }
        prop_assert!(laplace_det(&frame_columns(&u, &vs)) > 0.0);
        prop_assert_eq!(oriented_sign(&u, &vs), 1);
    }

    #[test]
    fn oriented_sign_matches_cofactor_expansion(
        (u, vs) in (2usize..=4).prop_flat_map(|n| (unit_positive(n), prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), n - 1)))
    ) {
        let vs: Vec<DVector<f64>> = vs.into_iter().map(DVector::from_vec).collect();
        let det = laplace_det(&frame_columns(&u, &vs));
        prop_assume!(det.abs() > 1e-6);
        prop_assert_eq!(oriented_sign(&u, &vs), det.signum() as i32);
    }

    #[test]
    fn negative_definite_on_complement_fixes_bordered_sign(
        (n, (q, m, a, b)) in dim_and(|n| (unit_positive(n), square(n), prop::collection::vec(-2.0f64..2.0, n), prop::collection::vec(-2.0f64..2.0, n)))
    ) {
        let sym = (&m + m.transpose()) * 0.5;
        let shift = sym.symmetric_eigenvalues().max().max(0.0) + 0.5;
        let proj = DMatrix::identity(n, n) - &q * q.transpose();
        let a = &m - proj * shift + &q * DVector::from_vec(a).transpose() + DVector::from_vec(b) * q.transpose();
        let a_sym = (&a + a.transpose()) * 0.5;
        for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let g = bordered_determinant(&(&a * (1.0 - s) + &a_sym * s), &q).unwrap();
            prop_assert!(parity(n) * g > 0.0, "s = {}, g = {}", s, g);
        }
    }

    #[test]
    fn image_sign_identity_and_frame_independence(
        (n, (p, m, r)) in dim_and(|n| (unit_positive(n), square(n), square(n)))
    ) {
        let a = &m * (DMatrix::identity(n, n) - &p * p.transpose());
        let g = bordered_determinant(&a, &p).unwrap();
        prop_assume!(g.abs() > 1e-6);
        let index = if parity(n) * g > 0.0 { 1 } else { -1 };
        prop_assert_eq!(image_index(&a, &p, &oriented_complement(&p)), index);
        let frame = rotated_frame(&p, &(r + DMatrix::identity(n, n) * 3.0));
        prop_assert_eq!(oriented_sign(&p, &frame), 1);
        prop_assert_eq!(image_index(&a, &p, &frame), index);
    }

    #[test]
    fn projection_is_idempotent_and_distance_symmetric(
        (_, (x, y)) in dim_and(|n| (prop::collection::vec(0.01f64..5.0, n), prop::collection::vec(0.01f64..5.0, n)))
    ) {
        let p = project_to_sphere(&x).unwrap();
        let again = project_to_sphere(p.as_slice()).unwrap();
        prop_assert!((p.coords() - again.coords()).amax() < 1e-15);
        let q = project_to_sphere(&y).unwrap();
        let d = spherical_distance(p.coords(), q.coords());
        prop_assert!((d - spherical_distance(q.coords(), p.coords())).abs() < 1e-15);
        prop_assert!((0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&d));
    }

    #[test]
    fn ces_economies_satisfy_walras_and_homogeneity(
        spec in cd_like_spec(),
        raw in prop::collection::vec(0.05f64..1.0, 4),
        scale in 0.1f64..10.0,
    ) {
        let model = build_ces_economy(&spec).unwrap();
        let n = model.dimension();
        let p = DVector::from_column_slice(&raw[..n]);
        let f = model.eval(&p).unwrap();
        prop_assert!(p.dot(&f).abs() <= 1e-9 * (1.0 + f.norm()));
        let fa = model.eval(&(&p * scale)).unwrap();
        prop_assert!((&fa - &f).amax() <= 1e-9 * (1.0 + f.amax()));
        let jac = model_jacobian(&model, &p).unwrap();
        prop_assert!((jac * &p).amax() <= 1e-8 * (1.0 + f.amax()));
    }
}
