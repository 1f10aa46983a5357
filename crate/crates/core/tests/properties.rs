use difflab_core::circuits::{is_in, k_equals};
use difflab_core::counter_machine::{
    fixtures, run, step, Branch, ExecVerdict, Instruction, MachineState, Program, StepOutcome,
    Verdict,
};
use difflab_core::diffusion::{
    exact_score, forward_marginal, tv_distance, Component, GaussianMixture, NoiseSchedule,
};
use difflab_core::groove::{self, GrooveGraph, GrooveParams, StatePoint};
use difflab_core::sde::{simulate_pinball, SdeParams};
use proptest::prelude::*;

/// Random total program over alphabet {a, b}: `n` CASE instructions
/// followed by an accept and a reject HALT.
fn program_strategy() -> impl Strategy<Value = Program> {
    (0usize..=2, 1usize..=4).prop_flat_map(|(k, n)| {
        let rows = 4usize << k;
        let total = n + 2;
        let branch = (
            prop::collection::vec(-1i8..=1, k),
            -1i8..=1,
            1usize..=total,
        )
            .prop_map(|(deltas, head, next)| Branch { deltas, head, next });
        prop::collection::vec(prop::collection::vec(branch, rows), n).prop_map(move |tables| {
            let mut instrs: Vec<Instruction> = tables.into_iter().map(Instruction::Case).collect();
            instrs.push(Instruction::Halt(Verdict::Accept));
            instrs.push(Instruction::Halt(Verdict::Reject));
            Program::new(instrs, k, vec!['a', 'b']).expect("generated program is valid")
        })
    })
}

fn input_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!['a', 'b']), 0..=5)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn interpreter_is_deterministic(p in program_strategy(), w in input_strategy()) {
        prop_assert_eq!(run(&p, &w, 300), run(&p, &w, 300));
    }

    #[test]
    fn trace_steps_follow_branches(p in program_strategy(), w in input_strategy()) {
        if let Ok(r) = run(&p, &w, 300) {
            for pair in r.trace.windows(2) {
                match step(&p, &pair[0], &w).unwrap() {
                    StepOutcome::Continue(s) => prop_assert_eq!(&s, &pair[1]),
                    StepOutcome::Halted(_) => prop_assert!(false, "halted mid-trace"),
                }
                let regs_moved = pair[0].registers.iter().zip(&pair[1].registers)
                    .all(|(a, b)| (a - b).abs() <= 1);
                prop_assert!(regs_moved);
                prop_assert!((pair[0].head as i64 - pair[1].head as i64).abs() <= 1);
            }
            let last: &MachineState = r.trace.last().unwrap();
            let halted = matches!(p.instruction(last.pc), Some(Instruction::Halt(_)));
            prop_assert_eq!(halted, r.verdict != ExecVerdict::StepLimitExceeded);
        }
    }

    #[test]
    fn groove_walk_equals_trace(p in program_strategy(), w in input_strategy()) {
        let Ok(r) = run(&p, &w, 200) else { return Ok(()) };
        if r.verdict == ExecVerdict::StepLimitExceeded {
            return Ok(());
        }
        let g = match GrooveGraph::compile(&p, &w, 200) {
            Ok(g) => g,
            Err(groove::CompileError::Collision { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let expected: Vec<StatePoint> = r.trace.iter().map(StatePoint::from).collect();
        prop_assert_eq!(g.walk_states().unwrap(), expected);
        prop_assert!(g.successors().is_ok());
        prop_assert_eq!(ExecVerdict::from(g.verdict()), r.verdict);
    }

    #[test]
    fn fixture_grooves_match_interpreter(w in input_strategy(), l in 2.0f64..8.0) {
        for p in [fixtures::anbn(), fixtures::parity()] {
            let w: String = w.chars().filter(|c| p.alphabet().contains(c)).collect();
            let r = run(&p, &w, 200).unwrap();
            let spec = groove::compile(&p, &w, GrooveParams::for_cell_size(l)).unwrap();
            let walked = spec.graph().walk_states().unwrap();
            prop_assert_eq!(walked, r.trace.iter().map(StatePoint::from).collect::<Vec<_>>());
        }
    }

    #[test]
    fn field_is_lipschitz_inside_corridor(
        w in input_strategy(), l in 2.0f64..8.0, u in 0.0f64..1.0, seed in any::<u64>()
    ) {
        let w: String = w.chars().filter(|&c| c == 'a').collect();
        let spec = groove::compile(&fixtures::parity(), &w, GrooveParams::for_cell_size(l)).unwrap();
        let m = (seed % spec.primitive_count() as u64) as usize;
        let (q, _) = spec.centerline_point(m, u);
        let n = q.len();
        let eps = 1e-4 * l;
        let mut dir = vec![0.0; n];
        dir[(seed as usize / 7) % n] = 1.0;
        let local = groove::local_lipschitz(&spec, &q, &dir, eps);
        prop_assert!(local <= spec.params().lipschitz_bound() * 1.05 + 0.5, "{local}");
    }

    #[test]
    fn field_is_c1_along_probe_lines(u in 0.05f64..0.95, off in -0.3f64..0.3, seed in any::<u64>()) {
        // Second differences of the force along a line scale as h², so
        // halving h quarters them; a kink would scale as h.
        let spec = groove::compile(&fixtures::anbn(), "ab", GrooveParams::for_cell_size(6.0)).unwrap();
        let m = (seed % spec.primitive_count() as u64) as usize;
        let (q, t) = spec.centerline_point(m, u);
        let n = q.len();
        let mut normal = vec![0.0; n];
        let axis = (0..n).find(|&i| t[i].abs() < 1e-9).unwrap();
        normal[axis] = 1.0;
        let base: Vec<f64> = q.iter().zip(&normal).map(|(a, b)| a + off * b).collect();
        let second = |h: f64| -> f64 {
            let at = |s: f64| -> Vec<f64> {
                let x: Vec<f64> = base.iter().zip(&normal).map(|(a, b)| a + s * b).collect();
                spec.eval_force(&x)
            };
            let (a, b, c) = (at(-h), at(0.0), at(h));
            (0..n).map(|i| (a[i] - 2.0 * b[i] + c[i]).abs()).fold(0.0, f64::max)
        };
        let (s1, s2) = (second(1e-2), second(5e-3));
        prop_assert!(s2 <= 0.3 * s1 + 1e-9, "{s1} {s2}");
    }

    #[test]
    fn pinball_is_reproducible(seed in any::<u64>()) {
        let spec = groove::compile(&fixtures::parity(), "a", GrooveParams::for_cell_size(3.0)).unwrap();
        let mut p = SdeParams::new(0.01, 500.0, seed);
        p.record_stride = 25;
        prop_assert_eq!(simulate_pinball(&spec, &p).unwrap(), simulate_pinball(&spec, &p).unwrap());
    }

    #[test]
    fn score_matches_finite_differences(
        d in 1usize..=4,
        comps in prop::collection::vec((0.1f64..1.0, prop::collection::vec(-1.5f64..1.5, 4), 0.0f64..0.5), 1..4),
        x in prop::collection::vec(-2.0f64..2.0, 4),
        t in 0.01f64..5.0,
        linear in any::<bool>(),
    ) {
        let total: f64 = comps.iter().map(|c| c.0).sum();
        let mix = GaussianMixture::new(comps.iter().map(|(w, m, v)| Component {
            weight: w / total, mean: m[..d].to_vec(), variance: *v,
        }).collect()).unwrap();
        let sched = if linear { NoiseSchedule::linear_default() } else { NoiseSchedule::default() };
        let t = if linear { t / 5.0 } else { t };
        let x = &x[..d];
        let marg = forward_marginal(&mix, &sched, t).unwrap();
        let s = exact_score(&mix, &sched, x, t).unwrap();
        let h = 1e-5;
        for i in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (marg.log_density(&xp).unwrap() - marg.log_density(&xm).unwrap()) / (2.0 * h);
            let scale = s.iter().map(|v| v.abs()).fold(1.0, f64::max);
            prop_assert!((fd - s[i]).abs() <= 1e-4 * scale, "{} vs {}", fd, s[i]);
        }
    }

    #[test]
    fn tv_is_a_bounded_metric(p in prop::collection::vec(0.0f64..1.0, 1..6), q in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let n = p.len().min(q.len());
        let norm = |v: &[f64]| -> Vec<f64> {
            let s: f64 = v.iter().sum::<f64>().max(1e-12);
            v.iter().map(|a| a / s).collect()
        };
        let (p, q) = (norm(&p[..n]), norm(&q[..n]));
        let a = tv_distance(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        prop_assert!((a - tv_distance(&q, &p)).abs() < 1e-15);
        prop_assert_eq!(tv_distance(&p, &p), 0.0);
    }

    #[test]
    fn counting_circuits_match_popcount(n in 0usize..=10, k in 0usize..=10, set in prop::collection::btree_set(0usize..=10, 0..4), bits in any::<u64>()) {
        let bits = bits & ((1u64 << n) - 1);
        let pop = bits.count_ones() as usize;
        if k <= n {
            prop_assert_eq!(k_equals(n, k).unwrap().eval_bits(bits), pop == k);
        }
        let set: Vec<usize> = set.into_iter().filter(|&s| s <= n).collect();
        prop_assert_eq!(is_in(n, &set).unwrap().eval_bits(bits), set.contains(&pop));
    }
}
