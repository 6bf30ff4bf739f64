use sidmask_bench::spec::{Method, SweepSpec};
use sidmask_bench::suites::{branch_sid_length, latency_cell, run_compliance_suite, run_memory_suite};

fn small() -> SweepSpec {
    SweepSpec {
        vocab: vec![16, 64],
        constraints: vec![300],
        sid_length: 4,
        dense_depth: 1,
        beam: 6,
        trials: 4,
        warmup: 1,
        seed: 9,
        ..SweepSpec::default()
    }
}

#[test]
fn non_timing_fields_are_reproducible() {
    let spec = small();
    assert_eq!(run_compliance_suite(&spec).unwrap().compliance, run_compliance_suite(&spec).unwrap().compliance);
    assert_eq!(run_memory_suite(&spec).unwrap().memory, run_memory_suite(&spec).unwrap().memory);
}

#[test]
fn exact_methods_never_violate() {
    let report = run_compliance_suite(&small()).unwrap();
    for r in &report.compliance {
        let m: Method = r.method.parse().unwrap();
        if m.is_exact() {
            assert_eq!(r.violations, 0, "{}", r.method);
        }
    }
}

#[test]
fn saturated_bitmap_lets_ids_escape() {
    let spec = SweepSpec { methods: vec![Method::HashBitmap], bitmap_bits_per_prefix: 0, trials: 10, ..small() };
    let report = run_compliance_suite(&spec).unwrap();
    assert!(report.compliance.iter().any(|r| r.violation_rate > 0.0));
}

#[test]
fn memory_rows_respect_bounds() {
    for r in run_memory_suite(&small()).unwrap().memory {
        assert!(r.model_ratio <= 1.0);
    }
}

#[test]
fn over_budget_cells_are_recorded_not_fatal() {
    let spec = SweepSpec {
        methods: vec![Method::Static, Method::CpuTrie, Method::Unconstrained],
        memory_budget_bytes: Some(1),
        ..small()
    };
    let rows = latency_cell(&spec, 16, 300).unwrap();
    assert_eq!(rows.iter().filter(|r| r.status == "oom").count(), 2);
    let base = rows.iter().find(|r| r.method == "unconstrained").unwrap();
    assert_eq!(base.status, "ok");
    assert_eq!(base.overhead_ms.mean, 0.0);
}

#[test]
fn branch_length_covers_twice_the_count() {
    assert_eq!(branch_sid_length(64, 1_000_000), 4);
    assert_eq!(branch_sid_length(16384, 1_000_000), 2);
    assert_eq!(branch_sid_length(2, 1_000_000), 21);
}
