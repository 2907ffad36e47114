//! Built-in models addressable by name.

use std::sync::Arc;

use nalgebra::DVector;

use crate::economy::{build_ces_economy, AgentSpec, ExchangeEconomySpec, FnModel, SharedModel};
use crate::error::{Error, Result};
use crate::geometry::project_to_sphere;
use crate::reference_field::ReferenceField;

pub const COBB_DOUGLAS_2: &str = "cobb-douglas-2";
pub const CES_3EQ: &str = "ces-3eq";
pub const REFERENCE_FIELD: &str = "reference-field";
pub const NEAR_FOLD: &str = "near-fold";
pub const BROKEN_WALRAS: &str = "broken-walras";
pub const BROKEN_HOMOGENEITY: &str = "broken-homogeneity";
pub const BOUNDED_BOUNDARY: &str = "bounded-boundary";

pub const FIXTURE_NAMES: [&str; 7] = [
    COBB_DOUGLAS_2,
    CES_3EQ,
    REFERENCE_FIELD,
    NEAR_FOLD,
    BROKEN_WALRAS,
    BROKEN_HOMOGENEITY,
    BOUNDED_BOUNDARY,
];

/// Off-diagonal preference weight of the mirrored three-equilibrium economy.
pub const CES_3EQ_CROSS_WEIGHT: f64 = 0.0625;
/// The weight at which the two outer equilibria merge into the symmetric one
/// (a pitchfork): `0.6^5`, i.e. `w^sigma = 0.6` with `sigma = 1/5`.
pub const FOLD_CROSS_WEIGHT: f64 = 0.07776;

/// Two agents, two goods, Cobb-Douglas with equal weights; each owns one good.
pub fn cobb_douglas_spec() -> ExchangeEconomySpec {
    ExchangeEconomySpec {
        agents: vec![
            AgentSpec {
                weights: vec![0.5, 0.5],
                rho: 0.0,
                endowment: vec![1.0, 0.0],
            },
            AgentSpec {
                weights: vec![0.5, 0.5],
                rho: 0.0,
                endowment: vec![0.0, 1.0],
            },
        ],
    }
}

/// Mirrored CES economy with strong home bias and `rho = -4`: agent one owns
/// good one and weighs it `(1, w)`, agent two the mirror image.
pub fn mirrored_ces_spec(cross_weight: f64) -> ExchangeEconomySpec {
    ExchangeEconomySpec {
        agents: vec![
            AgentSpec {
                weights: vec![1.0, cross_weight],
                rho: -4.0,
                endowment: vec![1.0, 0.0],
            },
            AgentSpec {
                weights: vec![cross_weight, 1.0],
                rho: -4.0,
                endowment: vec![0.0, 1.0],
            },
        ],
    }
}

pub fn fixture(name: &str) -> Result<SharedModel> {
    let model: SharedModel = match name {
        COBB_DOUGLAS_2 => Arc::new(build_ces_economy(&cobb_douglas_spec())?.with_label(name)),
        CES_3EQ => Arc::new(build_ces_economy(&mirrored_ces_spec(CES_3EQ_CROSS_WEIGHT))?.with_label(name)),
        NEAR_FOLD => Arc::new(build_ces_economy(&mirrored_ces_spec(FOLD_CROSS_WEIGHT))?.with_label(name)),
        REFERENCE_FIELD => Arc::new(
            ReferenceField::new(project_to_sphere(&[1.0, 2.0, 2.0])?).with_label(name),
        ),
        BROKEN_WALRAS => Arc::new(FnModel::new(name, 2, |p| {
            let mut f = DVector::zeros(p.len());
            f[0] = 1.0;
            f
        })),
        BROKEN_HOMOGENEITY => {
            // Walras' law holds and the field agrees with Cobb-Douglas on the
            // sphere, but scales with |p|^2 off it
            let base = build_ces_economy(&cobb_douglas_spec())?;
            Arc::new(FnModel::new(name, 2, move |p| {
                use crate::economy::ExcessDemandModel;
                base.eval(p).expect("positive prices") * p.norm_squared()
            }))
        }
        BOUNDED_BOUNDARY => {
            let v = DVector::from_vec(vec![1.0, 2.0]);
            Arc::new(FnModel::new(name, 2, move |p| {
                &v - p * (v.dot(p) / p.norm_squared())
            }))
        }
        other => {
            return Err(Error::Config(format!(
                "unknown fixture '{other}' (known: {})",
                FIXTURE_NAMES.join(", ")
            )))
        }
    };
    Ok(model)
}

pub fn is_fixture(name: &str) -> bool {
    FIXTURE_NAMES.contains(&name)
}
