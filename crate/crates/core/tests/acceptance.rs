//! Acceptance suite. Runs the case-study sweep once and checks every
//! criterion against it, printing one PASS/FAIL line each.
//!
//! `SLICESIM_ACCEPTANCE_DURATION_S` sets the simulated seconds per run
//! (default 100); `SLICESIM_WORKERS` caps the worker threads.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use slicesim_core::config::paper_case;
use slicesim_core::engine::run;
use slicesim_core::metrics::SliceSelector;
use slicesim_core::model::SliceType;
use slicesim_core::scheduler::Policy;
use slicesim_core::sweep::{run_sweep, AggregateRow, SweepOutput, SweepSpec};

const DURATION_ENV: &str = "SLICESIM_ACCEPTANCE_DURATION_S";

struct Sweep {
    spec: SweepSpec,
    out: SweepOutput,
}

impl Sweep {
    fn row(&self, policy: Policy, load: f64, sel: SliceSelector) -> &AggregateRow {
        self.out
            .aggregate
            .iter()
            .find(|r| r.policy == policy && (r.active_fraction - load).abs() < 1e-9 && r.selector() == Some(sel))
            .unwrap_or_else(|| panic!("no aggregate row for {policy} at {load} ({sel:?})"))
    }

    fn qos(&self, policy: Policy, load: f64) -> f64 {
        self.row(policy, load, SliceType::Emergency.into())
            .qos_met
            .expect("emergency packets measured")
    }

    fn latency(&self, policy: Policy, load: f64) -> f64 {
        self.row(policy, load, SliceType::Emergency.into())
            .mean_latency_ms
            .expect("emergency packets delivered")
    }

    fn pr_avail(&self, policy: Policy, load: f64, sel: SliceSelector) -> f64 {
        self.row(policy, load, sel).pr_A_gt_099.expect("availability measured")
    }
}

type Verdict = Result<String, String>;

fn ordering(s: &Sweep) -> Verdict {
    let mut worst = Vec::new();
    for &load in &s.spec.loads {
        let (e, m, b) = (
            s.qos(Policy::Elastic, load),
            s.qos(Policy::E2e, load),
            s.qos(Policy::Basic, load),
        );
        if !(e >= m && m >= b) {
            worst.push(format!("load {load:.2}: elastic {e:.3}, e2e {m:.3}, basic {b:.3}"));
        }
    }
    if worst.is_empty() {
        Ok(format!("elastic >= e2e >= basic at all {} loads", s.spec.loads.len()))
    } else {
        Err(worst.join("; "))
    }
}

fn elastic_robustness(s: &Sweep) -> Verdict {
    let (q75, q100) = (s.qos(Policy::Elastic, 0.75), s.qos(Policy::Elastic, 1.0));
    let msg = format!("elastic emergency qos {q75:.3} at 75% (>= 0.85), {q100:.3} at 100% (>= 0.70)");
    if q75 >= 0.85 && q100 >= 0.70 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn basic_collapse(s: &Sweep) -> Verdict {
    let q: Vec<f64> = s.spec.loads.iter().map(|&l| s.qos(Policy::Basic, l)).collect();
    let at_full = *q.last().expect("loads not empty");
    let flat: Vec<String> = s
        .spec
        .loads
        .windows(2)
        .zip(q.windows(2))
        .filter(|(_, w)| w[1] >= w[0])
        .map(|(l, w)| format!("{:.2}->{:.2} ({:.3}->{:.3})", l[0], l[1], w[0], w[1]))
        .collect();
    let msg = format!(
        "basic emergency qos {at_full:.3} at 100% (<= 0.30); non-negative steps: [{}]",
        flat.join(", ")
    );
    if at_full <= 0.30 && flat.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn latency_insensitivity(s: &Sweep) -> Verdict {
    let growth = |p| s.latency(p, 0.5) / s.latency(p, 0.3) - 1.0;
    let (e, b) = (growth(Policy::Elastic), growth(Policy::Basic));
    let msg = format!(
        "emergency latency 30%->50%: elastic {:.2}->{:.2} ms ({:+.1}%, <= +20%), basic {:.2}->{:.2} ms ({:+.1}%, >= +50%)",
        s.latency(Policy::Elastic, 0.3),
        s.latency(Policy::Elastic, 0.5),
        e * 100.0,
        s.latency(Policy::Basic, 0.3),
        s.latency(Policy::Basic, 0.5),
        b * 100.0
    );
    if e <= 0.20 && b >= 0.50 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn availability_ordering(s: &Sweep) -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for load in [0.3, 0.5] {
        let a = |p| s.pr_avail(p, load, SliceSelector::Healthcare);
        let (e, m, b) = (a(Policy::Elastic), a(Policy::E2e), a(Policy::Basic));
        ok &= e >= m && m >= b && e >= 0.9;
        parts.push(format!("load {load}: elastic {e:.2}, e2e {m:.2}, basic {b:.2}"));
    }
    let embb = |p| s.pr_avail(p, 0.5, SliceType::Embb.into());
    parts.push(format!(
        "embb at 50% (informational): elastic {:.2}, e2e {:.2}",
        embb(Policy::Elastic),
        embb(Policy::E2e)
    ));
    let msg = format!("healthcare Pr(A>0.99) {}", parts.join("; "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn deadline_invariant(s: &Sweep) -> Verdict {
    let elastic: Vec<_> = s.out.runs.iter().filter(|r| r.policy == Policy::Elastic).collect();
    let late: usize = elastic.iter().map(|r| r.late_deliveries).sum();
    let msg = format!("{late} late elastic deliveries over {} runs", elastic.len());
    if late == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn conservation(s: &Sweep) -> Verdict {
    let bad: Vec<String> = s
        .out
        .runs
        .iter()
        .filter(|r| !r.conserved())
        .map(|r| format!("{} load {:.2} seed {}: {:?}", r.policy, r.load, r.seed, r.stats))
        .collect();
    if bad.is_empty() {
        Ok(format!(
            "identity and grid limits hold in all {} runs",
            s.out.runs.len()
        ))
    } else {
        Err(bad.join("; "))
    }
}

fn oracle_equivalence() -> Verdict {
    common::check_random_instances(8, 1_500);
    let cases = common::check_elastic_scale_exhaustive();
    Ok(format!(
        "1500 random instances in both modes; {cases} elastic_scale cases"
    ))
}

fn determinism(spec: &SweepSpec) -> Verdict {
    for policy in Policy::ALL {
        let scenario = spec.scenario(policy, 0.5, 3);
        let mut bytes: Vec<Vec<u8>> = Vec::new();
        for _ in 0..3 {
            let mut buf = Vec::new();
            run(&scenario)
                .map_err(|e| e.to_string())?
                .trace
                .write_csv(&mut buf)
                .map_err(|e| e.to_string())?;
            bytes.push(buf);
        }
        if bytes.windows(2).any(|w| w[0] != w[1]) {
            return Err(format!("{policy} traces differ between repeats"));
        }
    }
    Ok("3 repeats byte-identical for every policy".into())
}

fn bler_calibration() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (bler, seed) in [(0.1, 21u64), (0.01, 22)] {
        let rate = common::failure_rate(bler, seed, 100_000);
        let rel = (rate - bler).abs() / bler;
        ok &= rel < 0.05;
        parts.push(format!("target {bler}: {rate:.5} ({:.2}% off)", rel * 100.0));
    }
    let msg = parts.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let text = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(text)
    })
}

fn main() -> ExitCode {
    let duration_s: u64 = std::env::var(DURATION_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(100);
    let mut spec = paper_case();
    spec.base.duration_ms = duration_s * 1_000;
    println!(
        "acceptance: {} policies x {} loads x {} seeds, {duration_s} s per run",
        spec.policies.len(),
        spec.loads.len(),
        spec.seeds.len()
    );
    let started = Instant::now();
    let out = run_sweep(&spec, None).expect("case-study sweep runs");
    println!("sweep finished in {:.0} s", started.elapsed().as_secs_f64());
    let sweep = Sweep { spec, out };

    let results = [
        ("1 policy ordering", guarded(|| ordering(&sweep))),
        ("2 elastic robustness", guarded(|| elastic_robustness(&sweep))),
        ("3 basic collapse", guarded(|| basic_collapse(&sweep))),
        ("4 latency insensitivity", guarded(|| latency_insensitivity(&sweep))),
        ("5 availability ordering", guarded(|| availability_ordering(&sweep))),
        ("6 deadline invariant", guarded(|| deadline_invariant(&sweep))),
        ("7 conservation", guarded(|| conservation(&sweep))),
        ("8 oracle equivalence", guarded(oracle_equivalence)),
        ("9 determinism", guarded(|| determinism(&sweep.spec))),
        ("10 BLER calibration", guarded(bler_calibration)),
    ];
    let mut failed = 0;
    for (name, verdict) in &results {
        match verdict {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
