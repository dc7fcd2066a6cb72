//! Relabeling objects leaves the value unchanged and permutes the policy.

use proptest::prelude::*;
use rddl_transfer::model::EncoderKind;
use rddl_transfer::DomainId;
use rddl_transfer_testkit::checks::permutation_error;
use rddl_transfer_testkit::DOMAINS;

const TOL: f64 = 1e-9;

fn check(domain: DomainId, encoder: EncoderKind, n: usize, seed: u64) -> Result<(), TestCaseError> {
    let err = permutation_error(domain, encoder, n, seed);
    prop_assert!(err <= TOL, "{} n={} seed {}: deviation {:e}", domain, n, seed, err);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gat_value_invariant_policy_equivariant(d in 0usize..3, n in 1usize..=8, seed in any::<u64>()) {
        check(DOMAINS[d], EncoderKind::Gat, n, seed)?;
    }

    #[test]
    fn gcn_value_invariant_policy_equivariant(d in 0usize..3, n in 1usize..=8, seed in any::<u64>()) {
        check(DOMAINS[d], EncoderKind::Gcn, n, seed)?;
    }
}

#[test]
fn fifty_permutations_per_domain() {
    for domain in DOMAINS {
        for case in 0..50u64 {
            let n = 1 + (case as usize % 8);
            check(domain, EncoderKind::Gat, n, 7919 * case + 1).unwrap();
        }
    }
}
