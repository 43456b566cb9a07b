//! Property tests for the parsing and kernel layers.

use misclass::formula::{parse_formula, ModelSpec};
use misclass::glm::bernoulli_logit_logprob;
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_.]{0,6}".prop_filter("identifiers must be distinct later", |s| !s.is_empty())
}

/// Distinct identifiers: response, three terms, surrogate.
fn name_set() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(ident(), 5).prop_filter("names must be unique", |names| {
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        sorted.len() == names.len()
    })
}

fn spaced(tokens: &[&str], gaps: &[u8]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let pad = gaps.get(i).copied().unwrap_or(1) % 4;
        out.push_str(&" ".repeat(pad as usize));
        out.push_str(t);
    }
    out
}

proptest! {
    #[test]
    fn round_trip_parses_to_equal_spec(names in name_set(), iv in any::<bool>(), with_proxy in any::<bool>()) {
        let (y, a, b, c, w) = (&names[0], &names[1], &names[2], &names[3], &names[4]);
        let formula = match (with_proxy, iv) {
            (false, _) => format!("{y} ~ {a} + {b} + {c}"),
            (true, true) => format!("{y} ~ {a} || {w} + {b} + {c}"),
            (true, false) => format!("{y} || {w} ~ {a} + {b} + {c}"),
        };
        let spec: ModelSpec = parse_formula(&formula).unwrap();
        let printed = spec.to_string();
        let reparsed = parse_formula(&printed).unwrap();
        prop_assert_eq!(spec, reparsed);
    }

    #[test]
    fn whitespace_does_not_change_the_parse(names in name_set(), gaps in proptest::collection::vec(any::<u8>(), 12)) {
        let (y, a, b, w) = (&names[0], &names[1], &names[2], &names[4]);
        let tight = parse_formula(&format!("{y} ~ {a} || {w} + {b}")).unwrap();
        let padded = spaced(&[y, "~", a, "||", w, "+", b], &gaps);
        let reparsed = parse_formula(&padded).unwrap();
        prop_assert_eq!(tight, reparsed);
    }

    #[test]
    fn two_proxy_bindings_always_rejected(names in name_set(), extra in ident()) {
        let (y, a, b, c, w) = (&names[0], &names[1], &names[2], &names[3], &names[4]);
        // place a second binding in every combination of positions
        for formula in [
            format!("{y} || {extra} ~ {a} || {w} + {b}"),
            format!("{y} ~ {a} || {w} + {b} || {extra}"),
            format!("{y} ~ {a} || {w} + {b} + {c} || {extra}"),
        ] {
            prop_assert!(parse_formula(&formula).is_err(), "accepted: {formula}");
        }
    }

    #[test]
    fn logit_logprob_symmetry_and_bounds(eta in -700.0f64..700.0) {
        // exact sigma symmetry
        prop_assert_eq!(
            bernoulli_logit_logprob(eta, 0.0).to_bits(),
            bernoulli_logit_logprob(-eta, 1.0).to_bits()
        );
        // log-probabilities are non-positive and finite over the whole range
        for y in [0.0, 1.0] {
            let lp = bernoulli_logit_logprob(eta, y);
            prop_assert!(lp.is_finite());
            prop_assert!(lp <= 0.0);
        }
        // the two outcomes form a distribution
        let total = bernoulli_logit_logprob(eta, 0.0).exp() + bernoulli_logit_logprob(eta, 1.0).exp();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}
