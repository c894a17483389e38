//! Acceptance criteria, run in sequence so each runtime budget is measured
//! without competition from the others. Every criterion prints one line.

use std::process::Command;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::{One, Pow};
use smallball::discrepancy::{l2_discrepancy, sup_discrepancy, van_der_corput};
use smallball::extremal::{sup_norm_branch_bound, sup_norm_exhaustive};
use smallball::prob::run_lemma_suites;
use smallball::rng::stream;
use smallball::witness2d::{greedy_witness_2d, independence_check, witness_measure};
use smallball::witness3d::{conditional_witness_search, identity_sweep, orlicz_scan, BlockDecomposition, SearchParams};
use smallball::{hyperbolic_shapes, Constraint, ExplicitSigns, HaarField, SignOracle};

use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn oracles(n: u32, d: usize) -> Vec<SignOracle> {
    let family = hyperbolic_shapes(n, d, Constraint::none()).unwrap();
    let minus = ExplicitSigns::from_fn(&family, |_, _| Ok(-1)).unwrap();
    vec![SignOracle::AllPlus, SignOracle::Seeded(11), SignOracle::Seeded(12), SignOracle::Explicit(minus)]
}

fn square_function_identity() -> Outcome {
    let mut cases = 0;
    let mut bad = Vec::new();
    for (n, q) in [(8, 4), (8, 2), (12, 4)] {
        for seed in 0..5 {
            let dec = BlockDecomposition::new(n, 3, q, SignOracle::Seeded(seed)).unwrap();
            for t in 1..=q / 2 {
                let r = identity_sweep(&dec, t).unwrap();
                cases += 1;
                if !r.holds() || r.cells != 1u128 << (3 * (n + 1)) {
                    bad.push(format!("(n={n},q={q},seed={seed},t={t}): {} violations", r.violations));
                }
            }
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("{cases} sweeps, every cell of each grid, failures {bad:?}") }
}

fn two_dimensional_witness() -> Outcome {
    let mut bad = Vec::new();
    for n in [1u32, 8, 64, 1000] {
        for seed in 0..10 {
            let signs = SignOracle::Seeded(seed);
            let w = greedy_witness_2d(n, &signs, None).unwrap();
            let field = HaarField::hyperbolic(n, 2, signs).unwrap();
            let value = field.eval(&w.point).unwrap();
            if w.achieved != n as i64 + 1 || value != n as i64 + 1 || !w.verified {
                bad.push(format!("n={n} seed={seed}: achieved {} field {value}", w.achieved));
            }
        }
    }
    for n in 0..=10u32 {
        let expected = BigRational::one() / BigRational::from_integer(2.into()).pow(n as usize + 1);
        for signs in [SignOracle::AllPlus, SignOracle::Seeded(3), SignOracle::Seeded(4)] {
            let mu = witness_measure(n, &signs).unwrap();
            if mu != expected {
                bad.push(format!("measure n={n} {}: {mu}", signs.label()));
            }
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("40 witnesses, 33 exact measures, failures {bad:?}") }
}

fn independence() -> Outcome {
    let mut bad = Vec::new();
    for n in 0..=8u32 {
        for signs in oracles(n, 2) {
            let r = independence_check(n, &signs).unwrap();
            if !r.uniform {
                bad.push(format!("n={n} {}", signs.label()));
            }
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("n = 0..8, 4 oracles each, non-uniform {bad:?}") }
}

fn sup_norm_oracles() -> Outcome {
    let mut rng = stream(2024, 0);
    let mut bad = Vec::new();
    for i in 0..200 {
        let n = rng.gen_range(0..=6u32);
        let d = rng.gen_range(1..=3usize);
        let signs = if i % 10 == 0 { SignOracle::AllPlus } else { SignOracle::Seeded(rng.gen()) };
        let field = HaarField::hyperbolic(n, d, signs).unwrap();
        let ex = sup_norm_exhaustive(&field, 30).unwrap();
        let bb = sup_norm_branch_bound(&field).unwrap();
        if ex.value != bb.value {
            bad.push(format!("n={n} d={d}: {} vs {}", ex.value, bb.value));
        }
    }
    for n in 0..=8u32 {
        for signs in oracles(n, 2) {
            let field = HaarField::hyperbolic(n, 2, signs.clone()).unwrap();
            let ex = sup_norm_exhaustive(&field, 30).unwrap().value;
            let bb = sup_norm_branch_bound(&field).unwrap().value;
            if ex != n as u64 + 1 || bb != n as u64 + 1 {
                bad.push(format!("d=2 n={n} {}: {ex} / {bb}", signs.label()));
            }
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("200 random instances and 36 planar cases, mismatches {bad:?}") }
}

fn trivial_signed_bound() -> Outcome {
    let mut bad = Vec::new();
    let mut cases = 0;
    for n in 0..=6u32 {
        for signs in oracles(n, 3) {
            let field = HaarField::hyperbolic(n, 3, signs.clone()).unwrap();
            let sup = sup_norm_exhaustive(&field, 30).unwrap().value as u128;
            cases += 1;
            // sup >= sqrt(#family), squared: exact integers
            if sup * sup < field.len() as u128 {
                bad.push(format!("n={n} {}: {sup}^2 < {}", signs.label(), field.len()));
            }
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("{cases} fields, failures {bad:?}") }
}

fn conditional_search() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (n, q) in [(16u32, 2u32), (32, 2), (64, 4)] {
        let mut successes = 0;
        for seed in 0..20u64 {
            let mut params = SearchParams::new(n, 3, q);
            params.seed = seed;
            params.tau = 0.1;
            params.restart_budget = 200;
            let signs = SignOracle::Seeded(seed);
            let r = conditional_witness_search(&params, &signs).unwrap();
            if !r.success {
                continue;
            }
            successes += 1;
            let point = r.point().unwrap();
            let dec = BlockDecomposition::new(n, 3, q, signs).unwrap();
            let again: i64 = (1..=q / 2).map(|t| dec.block_eval(t, &point).unwrap()).sum();
            let floor = params.tau / 2.0 * n as f64 * (q as f64).sqrt();
            if again != r.total || r.verified_total != r.total || !r.verified || (r.total as f64) <= floor {
                pass = false;
                lines.push(format!("(n={n},q={q},seed={seed}) total {} recheck {again}", r.total));
            }
        }
        if successes * 2 < 20 {
            pass = false;
        }
        lines.push(format!("(n={n},q={q}) {successes}/20"));
    }
    Outcome { pass, detail: lines.join(", ") }
}

fn lemma_suites() -> Outcome {
    let r = run_lemma_suites(10_000, 7);
    let detail = r
        .results
        .iter()
        .map(|s| format!("{} {}/{} violations", s.lemma, s.violations, s.fixtures))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome { pass: r.clean() && r.results.iter().all(|s| s.fixtures == 10_000 && s.unmet == 0), detail }
}

fn orlicz_trend() -> Outcome {
    let scan = orlicz_scan(&[32, 64, 128, 256], 3, 2, 1, 2.0 / 3.0, 100_000, 5, &SignOracle::Seeded(3)).unwrap();
    let ratios: Vec<String> = scan.rows.iter().map(|r| format!("n={} {:.4}", r.n, r.ratio)).collect();
    Outcome {
        pass: scan.spread < 4.0,
        detail: format!("K sqrt(q)/n^1.5: {}, spread {:.4}", ratios.join(", "), scan.spread),
    }
}

fn discrepancy_consistency() -> Outcome {
    let mut pass = true;
    let mut rows = Vec::new();
    for k in 4..=14u32 {
        let p = van_der_corput(k).unwrap();
        let log_n = (p.len() as f64).ln();
        let sup = sup_discrepancy(&p).unwrap().value;
        let l2 = l2_discrepancy(&p, 20_000, k as u64).unwrap();
        let a = sup / log_n;
        let b = l2.norm / log_n.sqrt();
        let ok = (0.05..=5.0).contains(&a) && (0.05..=5.0).contains(&b) && sup >= l2.norm - 3.0 * l2.stderr;
        pass &= ok;
        rows.push(format!("k={k} {a:.3}/{b:.3}"));
    }
    Outcome { pass, detail: format!("sup/log N and L2/sqrt(log N): {}", rows.join(" ")) }
}

fn strip_timing(text: &str) -> String {
    text.lines().filter(|l| !l.contains("\"elapsed_ms\"")).collect::<Vec<_>>().join("\n")
}

fn determinism() -> Outcome {
    let runs: &[&[&str]] = &[
        &["eval", "--n", "6", "--d", "3", "--point", "0.3125,0.5,0.75"],
        &["supnorm", "--n", "4", "--d", "3"],
        &["supnorm", "--n", "5", "--d", "3", "--method", "branch-bound"],
        &["witness2d", "--n", "1000", "--seed", "7"],
        &["witness3d", "--n", "32", "--q", "4", "--seed", "3"],
        &["witness3d", "--n", "16", "--q", "2", "--tau", "auto", "--seed", "4"],
        &["identity-check", "--n", "8", "--q", "4", "--d", "3", "--seed", "1"],
        &["lemmas", "--budget", "300", "--seed", "5"],
        &["orlicz-scan", "--ns", "8,16", "--budget", "2000"],
        &["discrepancy", "--vdc", "9", "--budget", "2000"],
        &["discrepancy", "--random", "40", "--d", "3"],
    ];
    let mut bad = Vec::new();
    for args in runs {
        let outputs: Vec<String> = ["1", "2", "4"]
            .iter()
            .map(|w| {
                let out = Command::new(env!("CARGO_BIN_EXE_smallball")).args(*args).args(["--workers", w]).output().unwrap();
                assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
                strip_timing(&String::from_utf8(out.stdout).unwrap())
            })
            .collect();
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            bad.push(args.join(" "));
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("{} commands at 1, 2 and 4 workers, differing {bad:?}", runs.len()) }
}

#[test]
fn acceptance() {
    type Criterion = (u32, &'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        (1, "square function identity", Duration::from_secs(120), square_function_identity),
        (2, "2D witness", Duration::from_secs(60), two_dimensional_witness),
        (3, "independence", Duration::MAX, independence),
        (4, "sup-norm oracle equivalence", Duration::MAX, sup_norm_oracles),
        (5, "trivial signed bound", Duration::MAX, trivial_signed_bound),
        (6, "3D conditional search", Duration::from_secs(300), conditional_search),
        (7, "probability lemma suites", Duration::from_secs(120), lemma_suites),
        (8, "Orlicz trend", Duration::from_secs(600), orlicz_trend),
        (9, "discrepancy consistency", Duration::from_secs(180), discrepancy_consistency),
        (10, "determinism", Duration::MAX, determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("panicked: {:?}", e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string()))),
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = outcome.pass && in_time;
        let limit = if budget == Duration::MAX { String::new() } else { format!(" (limit {}s)", budget.as_secs()) };
        println!(
            "criterion {id:>2} {}: {name} | {:.1}s{limit} | {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            outcome.detail
        );
        if !pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
