use besm_core::ibp::{ibp_check, CATALOG};

#[test]
fn every_catalog_entry_balances() {
    for delta in [0.5, 1.0, 2.0, 3.0] {
        for (f, g) in CATALOG {
            let rep = ibp_check(2, delta, f, g, 11, 400_000).unwrap();
            let diff = rep.estimate("difference").unwrap();
            println!(
                "delta={delta} f={f} g={g} lhs={:.5} rhs={:.5} diff={:.2e}±{:.1e}",
                rep.value("lhs").unwrap(),
                rep.value("rhs").unwrap(),
                diff.value,
                diff.stderr
            );
            assert!(rep.passed, "{}", rep.to_json_line());
        }
    }
}
