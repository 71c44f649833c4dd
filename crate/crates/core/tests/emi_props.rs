use cltest::corpus::TestMode;
use cltest::minikernel::{
    generate_program, inject_dead_code, injected_guards, make_variants, parse, print, reference_checksum,
    thread_state, EvalParams, Expr,
};
use proptest::prelude::*;

const THREADS: [u32; 4] = [1, 2, 16, 64];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dead_code_preserves_checksum(
        seed in any::<u64>(),
        size in 1usize..40,
        mode in 0usize..6,
        t in 0usize..4,
        inject_seed in any::<u64>(),
        blocks in 1usize..5,
    ) {
        let params = EvalParams::new(THREADS[t]).unwrap();
        let base = generate_program(seed, size, TestMode::ALL[mode]);
        let variant = inject_dead_code(&base, &params, inject_seed, blocks);
        prop_assert_eq!(reference_checksum(&base, &params), reference_checksum(&variant, &params));
        // the text the executor sees behaves the same
        let reparsed = parse(&print(&variant)).unwrap();
        prop_assert_eq!(reference_checksum(&reparsed, &params), reference_checksum(&base, &params));
        // per-thread final states agree, not only their combined hash
        for gid in [0, THREADS[t] - 1] {
            prop_assert_eq!(thread_state(&base, gid), thread_state(&variant, gid));
        }
    }

    #[test]
    fn injected_guards_are_false_for_every_thread(
        seed in any::<u64>(),
        size in 1usize..30,
        t in 0usize..4,
        vseed in any::<u64>(),
    ) {
        let params = EvalParams::new(THREADS[t]).unwrap();
        let base = generate_program(seed, size, TestMode::Basic);
        for variant in make_variants(&base, &params, 3, vseed) {
            let guards = injected_guards(&base, &variant);
            prop_assert!(!guards.is_empty());
            for g in guards {
                prop_assert!(g.is_dead_guard_shape());
                let Expr::Lit(bound) = g.rhs else { unreachable!() };
                for gid in 0..params.thread_count {
                    prop_assert!(!g.op.holds(i64::from(gid), bound));
                }
            }
        }
    }
}
