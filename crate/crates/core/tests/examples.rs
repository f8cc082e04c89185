macro_rules! example_test {
    ($name:ident, $file:literal) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $name() {
            $name::run_example().expect(concat!($file, " should run"));
        }
    };
}

example_test!(encrypt_roundtrip, "encrypt_roundtrip.rs");
example_test!(invariants, "invariants.rs");
example_test!(svd_guess, "svd_guess.rs");
example_test!(structure_attack, "structure_attack.rs");
example_test!(setpoint_attack, "setpoint_attack.rs");
example_test!(tracking_attack, "tracking_attack.rs");
example_test!(permutations, "permutations.rs");
example_test!(rank_structure, "rank_structure.rs");
example_test!(closed_loop, "closed_loop.rs");
example_test!(qp_solvers, "qp_solvers.rs");
