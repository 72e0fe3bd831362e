use paradae::harness::run_online;
use paradae_bench::{offline_bases, stokes_experiment};

#[test]
fn benchmark_pipeline_runs_once() {
    let exp = stokes_experiment(3);
    let bases = offline_bases(&exp);
    let (rom, report) = run_online(&exp, &bases, &[1.28]).unwrap();
    assert!(rom.order() > 0);
    assert_eq!(report.full_factorizations, 0);
}
