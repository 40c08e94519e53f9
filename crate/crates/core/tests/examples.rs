macro_rules! example {
    ($module:ident, $file:literal, $test:ident) => {
        #[allow(dead_code)]
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $test() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(discover, "discover.rs", discover_runs);
example!(annotate_and_resolve, "annotate_and_resolve.rs", annotate_and_resolve_runs);
example!(estimate_p, "estimate_p.rs", estimate_p_runs);
example!(evaluate, "evaluate.rs", evaluate_runs);
example!(robustness, "robustness.rs", robustness_runs);
example!(identity, "identity.rs", identity_runs);
example!(annotation_store, "annotation_store.rs", annotation_store_runs);
example!(load_from_files, "load_from_files.rs", load_from_files_runs);
