use pnc::data::random_assignments;
use pnc::exec::ExecMode;
use pnc::inference;
use pnc::model::{Model, ModelOptions};
use pnc::oracle::{enumerate_joint, log_gap, oracle_conditional, oracle_marginal};
use pnc::persistence::{decode, encode, Config};
use pnc::structure::{build_1d_structure, build_2d_structure, validate_query, LayerKind};
use pnc::training::{loss_and_gradients, Objective};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = LayerKind> {
    prop_oneof![
        Just(LayerKind::PlainSum),
        Just(LayerKind::Quotient),
        Just(LayerKind::Neural)
    ]
}

fn small_model(kind: LayerKind, chain: bool, nc: usize, seed: u64) -> Model {
    let s = if chain {
        build_1d_structure(6, nc, nc, 2, kind).unwrap()
    } else {
        build_2d_structure(2, 3, nc, nc, kind).unwrap()
    };
    let opts = ModelOptions {
        num_categories: 3,
        ..ModelOptions::default()
    };
    Model::randomized(s, opts, seed, 2.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_circuits_normalize(kind in kind(), chain: bool, nc in 1usize..4, seed: u64) {
        let m = small_model(kind, chain, nc, seed);
        prop_assert!(enumerate_joint(&m, 0).unwrap().total().abs() < 1e-9);
    }

    #[test]
    fn suffix_queries_match_enumeration(
        kind in kind(),
        chain: bool,
        seed: u64,
        first in 0usize..=6,
        width in 0usize..=6,
        values in proptest::collection::vec(0u8..3, 6),
    ) {
        let m = small_model(kind, chain, 2, seed);
        let table = enumerate_joint(&m, 0).unwrap();
        let order = &m.structure.variable_order;
        let marg = order.suffix_mask(first);
        let got = inference::log_marginal(&m, &values, &marg).unwrap();
        prop_assert!(log_gap(got, oracle_marginal(&table, &values, &marg)) < 1e-9);

        let end = (first + width).min(6);
        let query: Vec<bool> = (0..6).map(|v| (first..end).contains(&order.rank(v))).collect();
        let rest = order.suffix_mask(end);
        let got = inference::log_conditional(&m, &values, &query, &rest).unwrap();
        prop_assert!(log_gap(got, oracle_conditional(&table, &values, &query, &rest)) < 1e-9);
    }

    #[test]
    fn non_suffix_sets_are_rejected(chain: bool, seed: u64, mask in proptest::collection::vec(any::<bool>(), 6)) {
        let m = small_model(LayerKind::Neural, chain, 2, seed);
        let ranks = m.structure.variable_order.ranks();
        let suffix = (0..6).all(|a| (0..6).all(|b| !(mask[a] && !mask[b] && ranks[a] < ranks[b])));
        prop_assert_eq!(validate_query(&m.structure, &mask).is_ok(), suffix);
    }

    #[test]
    fn parallel_matches_sequential_bitwise(kind in kind(), seed: u64, n in 0usize..40) {
        let m = small_model(kind, false, 3, seed);
        let data = random_assignments(&m, n, seed);
        let samples = data.samples();
        let seq = loss_and_gradients(&m, &samples, Objective::Nll, ExecMode::Sequential);
        let par = loss_and_gradients(&m, &samples, Objective::Nll, ExecMode::Parallel);
        match (seq, par) {
            (Ok((ms, gs)), Ok((mp, gp))) => {
                prop_assert_eq!(ms.loss.to_bits(), mp.loss.to_bits());
                prop_assert_eq!(gs, gp);
            }
            (Err(_), Err(_)) => prop_assert_eq!(n, 0),
            _ => prop_assert!(false, "modes disagree on success"),
        }
    }

    #[test]
    fn checkpoints_round_trip(kind in kind(), seed: u64) {
        let config = Config::parse(&format!(
            "height = 2\nwidth = 3\ncomponents = 2\ncategories = 3\nlayer_kind = {}\n",
            kind.as_str()
        ))
        .unwrap();
        let s = config.build_structure().unwrap();
        let m = Model::randomized(s, config.model_options(), seed, 2.0).unwrap();
        let back = decode(&encode(&config, &m, None)).unwrap();
        prop_assert_eq!(back.model, m);
    }
}
