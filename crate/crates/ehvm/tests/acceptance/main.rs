//! Acceptance suite: one test per criterion, each printing a PASS line on
//! success. Run with `cargo test -p ehvm --test acceptance -- --nocapture`.

mod oracle;

use ehvm::cxxrt::{decide, HandlerDecision};
use ehvm::ehpass::{self, run_pass};
use ehvm::explorer::{explore, replay, ChoiceTrace, Decision, ExploreOptions};
use ehvm::ir::{parse_module, validate, ModuleIR};
use ehvm::lsda::{sleb_encode, uleb_encode, ActionEntry, CallSiteRecord, LsdaTable};
use ehvm::machine::{BranchOrder, Machine, MachineOptions, Outcome};
use ehvm::trace::{render, Event};
use oracle::Oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::time::Instant;

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

fn corpus() -> Vec<(String, ModuleIR)> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ehir"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&p).unwrap();
            let m = parse_module(&text)
                .unwrap_or_else(|e| panic!("{name}: parse error {e}"));
            let diags = validate(&m);
            assert!(diags.is_empty(), "{name}: {diags:?}");
            (name, m)
        })
        .collect()
}

fn pipeline_run(m: &ModuleIR) -> ehvm::machine::RunResult {
    let lowered = run_pass(m).unwrap();
    Machine::run(&lowered, &MachineOptions::default()).unwrap()
}

/// Criterion 1: on every corpus program the full pipeline agrees with the
/// dynamic handler-stack oracle on the handler sequence and the final
/// outcome, within the time budget.
#[test]
fn criterion_01_oracle_equivalence() {
    let started = Instant::now();
    let programs = corpus();
    assert!(
        programs.len() >= 30,
        "corpus has {} programs, need at least 30",
        programs.len()
    );
    for (name, m) in &programs {
        let expected = Oracle::run(m);
        let got = pipeline_run(m);

        let got_outcome = match &got.outcome {
            Outcome::Halted(c) => format!("halted({c})"),
            Outcome::Fault(f) => format!("fault({})", f.kind),
        };
        assert_eq!(
            got_outcome,
            oracle::outcome_key(&expected.outcome),
            "{name}: outcomes disagree"
        );

        let got_handlers: Vec<(String, u32, i64)> = got
            .stats
            .handler_log
            .iter()
            .map(|h| (h.function.clone(), h.pad_pc, h.selector))
            .collect();
        let want_handlers: Vec<(String, u32, i64)> = expected
            .handlers
            .iter()
            .map(|h| (h.function.clone(), h.pad_pc, h.selector))
            .collect();
        assert_eq!(got_handlers, want_handlers, "{name}: handler sequences disagree");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "oracle equivalence took {elapsed:?}, budget is 5s"
    );
    println!(
        "criterion 01 oracle equivalence: PASS ({} programs, {:?})",
        programs.len(),
        elapsed
    );
}

/// Criterion 2: a most-derived diamond type is caught by a clause naming the
/// base of both bases.
#[test]
fn criterion_02_diamond() {
    let (_, m) = corpus()
        .into_iter()
        .find(|(n, _)| n.starts_with("c07"))
        .unwrap();
    let r = pipeline_run(&m);
    assert_eq!(r.outcome, Outcome::Halted(4), "diamond catch failed");
    assert_eq!(r.stats.handler_log.len(), 1);
    assert!(r.stats.handler_log[0].selector > 0);
    println!("criterion 02 diamond hierarchy: PASS");
}

const UNCAUGHT_WITH_DTOR: &str = "typeinfo @Err
fn @main() personality @__ehvm_personality_v0 {
entry:
  call @victim()
  ret 0
}
fn @victim() personality @__ehvm_personality_v0 {
entry:
  %g = alloca 1
  store 1, %g
  invoke @thrower() to %ok unwind %cleanup
ok:
  ret
cleanup:
  %lp = landingpad cleanup
  call @observable_dtor(%g)
  resume %lp
}
fn @observable_dtor(%p) {
entry:
  ret
}
fn @thrower() {
entry:
  %e = call @__cxa_allocate_exception(1)
  store 1, %e
  call @__cxa_throw(%e, @Err, 0)
}
";

/// Criterion 3: one uncaught throw plus one observable destructor explores
/// exactly two executions, exactly one of which runs the destructor.
#[test]
fn criterion_03_uncaught_duality() {
    let m = parse_module(UNCAUGHT_WITH_DTOR).unwrap();
    let lowered = run_pass(&m).unwrap();
    let report = explore(&lowered, &ExploreOptions::default()).unwrap();
    assert_eq!(report.executions, 2, "expected exactly 2 executions");
    assert_eq!(report.outcomes.get("fault(terminate)"), Some(&2));

    let mut with_dtor = 0;
    for taken in [0u32, 1u32] {
        let trace = ChoiceTrace {
            decisions: vec![Decision { arity: 2, taken }],
        };
        let r = replay(&lowered, &trace, false).unwrap();
        let ran = r.events.iter().any(
            |e| matches!(e, Event::Step { function, .. } if function == "@observable_dtor"),
        );
        if ran {
            with_dtor += 1;
        }
    }
    assert_eq!(with_dtor, 1, "exactly one branch runs the destructor");
    println!("criterion 03 uncaught-exception duality: PASS");
}

/// Criterion 4: an exception crossing a nounwind frame is a verification
/// fault in every explored branch.
#[test]
fn criterion_04_nounwind() {
    let text = "typeinfo @Err
fn @main() personality @__ehvm_personality_v0 {
entry:
  %r = invoke @shielded() to %ok unwind %lpad
ok:
  ret 0
lpad:
  %lp = landingpad catch any
  ret 1
}
fn @shielded() nounwind {
entry:
  call @thrower()
  ret
}
fn @thrower() {
entry:
  %e = call @__cxa_allocate_exception(1)
  store 1, %e
  call @__cxa_throw(%e, @Err, 0)
}
";
    let m = parse_module(text).unwrap();
    let lowered = run_pass(&m).unwrap();
    let report = explore(&lowered, &ExploreOptions::default()).unwrap();
    let total: u64 = report.outcomes.values().sum();
    assert_eq!(
        report.outcomes.get("fault(nounwind-violation)"),
        Some(&total),
        "nounwind fault must cover 100% of branches"
    );
    println!("criterion 04 nounwind enforcement: PASS ({total} branch(es))");
}

/// Criterion 5: non-throwing programs never enter the unwinder and their
/// traces are identical before and after the pass (the lsda attachment is
/// invisible to execution).
#[test]
fn criterion_05_zero_cost() {
    let mut checked = 0;
    for (name, m) in corpus() {
        let lowered = run_pass(&m).unwrap();
        let post = Machine::run(&lowered, &MachineOptions::default()).unwrap();
        if post.stats.unwinder_entries > 0 {
            continue; // a throwing program; not part of this criterion
        }
        let pre = Machine::run(&m, &MachineOptions::default()).unwrap();
        assert_eq!(pre.outcome, post.outcome, "{name}: outcomes differ");
        assert_eq!(
            render(&pre.events),
            render(&post.events),
            "{name}: traces differ between pre- and post-pass runs"
        );
        assert_eq!(pre.stats.unwinder_entries, 0, "{name}");
        checked += 1;
    }
    assert!(checked >= 3, "need at least 3 non-throwing corpus programs");
    println!("criterion 05 zero-cost: PASS ({checked} non-throwing programs)");
}

/// Criterion 6: LSDA round trips in both directions over randomized tables,
/// and the LEB128 unit vectors are byte-exact.
#[test]
fn criterion_06_lsda_round_trip() {
    let mut buf = Vec::new();
    uleb_encode(0, &mut buf);
    assert_eq!(buf, [0x00]);
    buf.clear();
    uleb_encode(300, &mut buf);
    assert_eq!(buf, [0xAC, 0x02]);
    buf.clear();
    sleb_encode(-1, &mut buf);
    assert_eq!(buf, [0x7F]);

    let seed = std::env::var("EHVM_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0xEB1DA);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for round in 0..1000 {
        let t = random_table(&mut rng);
        t.validate()
            .unwrap_or_else(|e| panic!("round {round}: generated invalid table: {e}"));
        let bytes = t.encode();
        let back = LsdaTable::decode(&bytes)
            .unwrap_or_else(|e| panic!("round {round}: decode failed: {e}"));
        assert_eq!(back, t, "round {round}: decode(encode(t)) != t");
        assert_eq!(back.encode(), bytes, "round {round}: encode(decode(b)) != b");
    }
    println!("criterion 06 lsda round trip: PASS (1000 tables, seed {seed:#x})");
}

fn random_table(rng: &mut ChaCha8Rng) -> LsdaTable {
    let mut t = LsdaTable::default();
    let n_types = rng.gen_range(0..6);
    t.types = (0..n_types).map(|_| rng.gen_range(0..40)).collect();
    let n_specs = rng.gen_range(0..3);
    for _ in 0..n_specs {
        let len = rng.gen_range(0..4);
        t.specs.push((0..len).map(|_| rng.gen_range(1..30)).collect());
    }
    let n_chains = rng.gen_range(0..4usize);
    let mut chain_starts = Vec::new();
    for _ in 0..n_chains {
        chain_starts.push(t.actions.len() as u32 + 1);
        let len = rng.gen_range(1..4);
        for k in 0..len {
            let filter = match rng.gen_range(0..3) {
                0 => 0,
                1 if !t.types.is_empty() => rng.gen_range(0..t.types.len() as i32) + 1,
                2 if !t.specs.is_empty() => -(rng.gen_range(0..t.specs.len() as i32) + 1),
                _ => 0,
            };
            let last = k + 1 == len;
            t.actions.push(ActionEntry {
                type_filter: filter,
                next: if last { 0 } else { 1 },
            });
        }
    }
    let mut pc = 0u32;
    for _ in 0..rng.gen_range(0..8usize) {
        let start = pc + rng.gen_range(0..4);
        let length = rng.gen_range(1..3);
        let landing_pad = rng.gen_range(0..50);
        let action = if landing_pad == 0 || chain_starts.is_empty() {
            0
        } else {
            chain_starts[rng.gen_range(0..chain_starts.len())]
        };
        t.callsites.push(CallSiteRecord {
            start,
            length,
            landing_pad,
            action,
        });
        pc = start + length;
    }
    t
}

/// Criterion 7: the statically substituted typeid value always equals the
/// selector the personality computes from the encoded LSDA bytes when an
/// object of exactly that clause's type arrives.
#[test]
fn criterion_07_selector_agreement() {
    let mut checks = 0;
    for (name, m) in corpus() {
        let lowered = run_pass(&m).unwrap();
        for f in &lowered.functions {
            let Some(lsda_ref) = f.lsda_ref.as_deref() else { continue };
            let bytes = &lowered.global(lsda_ref).unwrap().bytes;
            let table = LsdaTable::decode(bytes).unwrap();
            let info = ehpass::analyze(&lowered, f).unwrap();
            for record in &table.callsites {
                if record.action == 0 {
                    continue;
                }
                for entry in table.chain(record.action) {
                    if entry.type_filter <= 0 {
                        continue;
                    }
                    let tid = table.types[entry.type_filter as usize - 1];
                    if tid == 0 {
                        continue; // catch-all has no exact thrown type
                    }
                    let d = decide(&table, record, tid, false, &lowered.typeinfos);
                    let HandlerDecision::Handler { selector } = d else {
                        panic!("{name}/{}: exact type did not select a handler", f.name)
                    };
                    // Only compare when this clause is the one that matched
                    // (an earlier clause may shadow it).
                    if selector == entry.type_filter {
                        let ty = lowered.typeinfos.name_of(tid).unwrap();
                        let substituted = info.selectors.selector_for(Some(ty)).unwrap();
                        assert_eq!(
                            substituted, selector,
                            "{name}/{}: typeid.for({ty}) vs personality",
                            f.name
                        );
                        checks += 1;
                    }
                }
            }
        }
    }
    assert!(checks > 10, "only {checks} clause checks ran");
    println!("criterion 07 selector agreement: PASS ({checks} clause checks)");
}

/// Criterion 8: every non-faulting execution ends with zero live
/// alloca/exception objects and zero live frames.
#[test]
fn criterion_08_memory_discipline() {
    let mut checked = 0;
    for (name, m) in corpus() {
        let r = pipeline_run(&m);
        if let Outcome::Halted(_) = r.outcome {
            assert_eq!(r.census.alloca, 0, "{name}: live allocas at exit");
            assert_eq!(r.census.exception, 0, "{name}: live exceptions at exit");
            assert_eq!(r.frames_live, 0, "{name}: live frames at exit");
            checked += 1;
        }
    }
    assert!(checked >= 25, "only {checked} non-faulting programs");

    // dios_unwind frees exactly the removed frames' allocas: the three-frame
    // longjmp program reports freed=3 in its single unwind event.
    let (_, m) = corpus()
        .into_iter()
        .find(|(n, _)| n.starts_with("c13"))
        .unwrap();
    let r = pipeline_run(&m);
    let freed: Vec<u32> = r
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Unwind { freed, .. } => Some(*freed),
            _ => None,
        })
        .collect();
    assert_eq!(freed, vec![3]);
    println!("criterion 08 memory discipline: PASS ({checked} clean executions)");
}

const MASKED_THROW: &str = "typeinfo @Err
fn @main() personality @__ehvm_personality_v0 {
entry:
  %prev = call @__vm_mask(1)
  %e = call @__cxa_allocate_exception(1)
  store 8, %e
  invoke @__cxa_throw(%e, @Err, 0) to %unreach unwind %lpad
unreach:
  trap
lpad:
  %lp = landingpad catch @Err
  %off = call @__vm_mask(0)
  %exc = gep %lp, 0
  %p = call @__cxa_begin_catch(%exc)
  %v = load %p
  call @__cxa_end_catch()
  ret %v
}
";

/// Criterion 9: throwing from inside an atomic section with an
/// exception-safe handler preserves the mask discipline; the full event
/// trace matches the golden file exactly.
#[test]
fn criterion_09_mask_discipline() {
    let m = parse_module(MASKED_THROW).unwrap();
    let lowered = run_pass(&m).unwrap();
    let r = Machine::run(&lowered, &MachineOptions::default()).unwrap();
    assert_eq!(r.outcome, Outcome::Halted(8));

    // The property itself: every MASK value between the raise (the guest's
    // own MASK 1) and the handler's MASK 0 equals the pre-raise value (true).
    let masks: Vec<bool> = r
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Mask { value } => Some(*value),
            _ => None,
        })
        .collect();
    assert!(masks.len() >= 4, "expected mask traffic from the unwinder");
    assert_eq!(masks.last(), Some(&false));
    assert!(masks[..masks.len() - 1].iter().all(|&v| v));

    // Exact trace match.
    let golden_path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mask_trace.txt");
    let got = render(&r.events);
    let want = std::fs::read_to_string(&golden_path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", golden_path.display()));
    assert_eq!(got, want, "event trace deviates from the golden file");
    println!("criterion 09 mask discipline: PASS");
}

/// Criterion 10: three independently guarded allocations explore exactly
/// 2^3 executions under fault injection, all of them clean.
#[test]
fn criterion_10_fault_injection() {
    let text = "fn @main() {
entry:
  %a = call @try_alloc()
  %b = call @try_alloc()
  %c = call @try_alloc()
  %s1 = add %a, %b
  %s2 = add %s1, %c
  %ok = lt %s2, 4
  condbr %ok, %good, %bad
good:
  ret 0
bad:
  trap
}
fn @try_alloc() {
entry:
  %p = call @malloc(1)
  %failed = eq %p, 0
  condbr %failed, %bail, %use
use:
  store 1, %p
  call @free(%p)
  ret 0
bail:
  ret 1
}
";
    let m = parse_module(text).unwrap();
    let lowered = run_pass(&m).unwrap();
    let opts = ExploreOptions {
        fault_injection: true,
        ..Default::default()
    };
    let report = explore(&lowered, &opts).unwrap();
    assert_eq!(report.executions, 8, "2^3 allocation outcomes");
    assert_eq!(report.outcomes.get("halted(0)"), Some(&8));
    assert!(!report.fault_found());

    // The same program without fault injection is a single execution.
    let plain = explore(&lowered, &ExploreOptions::default()).unwrap();
    assert_eq!(plain.executions, 1);

    // Order independence: reversing the branch order preserves the outcome
    // multiset.
    let reversed = explore(
        &lowered,
        &ExploreOptions {
            fault_injection: true,
            branch_order: BranchOrder::Descending,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(reversed.outcomes, report.outcomes);
    assert_eq!(reversed.executions, 8);
    println!("criterion 10 fault injection: PASS (8 executions)");
}

/// Execution counts equal the hand-computed choice tree on the corpus: the
/// uncaught program forks once (two behaviors), everything else is
/// deterministic; the guarded-allocation program forks per allocation under
/// fault injection.
#[test]
fn corpus_choice_tree_counts() {
    for (name, m) in corpus() {
        let lowered = run_pass(&m).unwrap();
        let report = explore(&lowered, &ExploreOptions::default()).unwrap();
        let expected = if name.starts_with("c22") { 2 } else { 1 };
        assert_eq!(report.executions, expected, "{name}");
    }
    // One guarded allocation: success path and handled-failure path.
    let (_, m) = corpus()
        .into_iter()
        .find(|(n, _)| n.starts_with("nt03"))
        .unwrap();
    let lowered = run_pass(&m).unwrap();
    let report = explore(
        &lowered,
        &ExploreOptions {
            fault_injection: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(report.executions, 2);
    assert!(!report.fault_found(), "both allocation outcomes are handled");
}

/// Replay reproduces event logs byte-identically, and replaying under the
/// wrong options is a reported mismatch.
#[test]
fn replay_reproduces_event_logs() {
    let m = parse_module(UNCAUGHT_WITH_DTOR).unwrap();
    let lowered = run_pass(&m).unwrap();
    let report = explore(&lowered, &ExploreOptions::default()).unwrap();
    let (trace, events) = report.first_counterexample.unwrap();
    let r = replay(&lowered, &trace, false).unwrap();
    assert_eq!(render(&events), render(&r.events));

    let err = replay(&lowered, &ChoiceTrace { decisions: vec![] }, false);
    assert!(err.is_err());
}
