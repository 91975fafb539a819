mod common;

use std::collections::BTreeMap;

use autoreparam::effect::make_log_joint;
use autoreparam::reparam::{make_vip, reparameterisable_sites, ParameterisationParams};
use proptest::prelude::*;

fn eight_schools() -> autoreparam::effect::ModelProgram {
    common::zoo_models()
        .into_iter()
        .find(|m| m.0 == "eight_schools")
        .unwrap()
        .1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// `f(f⁻¹(z)) = z` for any per-coordinate λ.
    #[test]
    fn vip_bijection_round_trips(
        lambda in prop::collection::vec(0.0f64..=1.0, 10),
        z in prop::collection::vec(-2.0f64..2.0, 10),
    ) {
        let model = eight_schools();
        let mut flat = lambda.into_iter();
        let map: BTreeMap<String, Vec<f64>> = reparameterisable_sites(&model)
            .unwrap()
            .into_iter()
            .map(|(site, len)| (site, flat.by_ref().take(len).collect()))
            .collect();
        let (_, f) = make_vip(&model, &ParameterisationParams::from_lambda(map)).unwrap();
        let back = f.forward(&f.inverse(&z).unwrap()).unwrap();
        for (a, b) in z.iter().zip(&back) {
            prop_assert!(common::rel_close(*a, *b, 1e-10), "{a} vs {b}");
        }
    }

    /// Every build of every model gives finite log joints near the origin.
    #[test]
    fn log_joints_finite(lambda in 0.0f64..=1.0, seed in 0u64..1000) {
        for (name, model) in common::zoo_models() {
            let params = ParameterisationParams::uniform_for(&model, lambda).unwrap();
            let (vip, _) = make_vip(&model, &params).unwrap();
            let lj = make_log_joint(&vip).unwrap();
            for z in common::random_points(lj.dim(), 2, 1.0, seed) {
                let (v, g) = lj.value_and_grad(&z).unwrap();
                prop_assert!(v.is_finite(), "{name}");
                prop_assert!(g.iter().all(|x| x.is_finite()), "{name}");
            }
        }
    }
}
