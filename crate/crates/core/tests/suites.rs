use cglblow_core::simulator::{simulate, MeshConfig, SetComponent, SolverConfig, StopRule};
use cglblow_core::verify::{modulation_suite, rhs_suite, spectral_suite};
use cglblow_core::Parameters;

fn keys(report: &cglblow_core::verify::SuiteReport) -> Vec<&str> {
    report.criteria.iter().map(|c| c.key.as_str()).collect()
}

#[test]
fn spectral_suite_passes_at_defaults() {
    let r = spectral_suite(&Parameters::default()).unwrap();
    assert_eq!(keys(&r), ["ac01_hermite_orthogonality", "ac02_jordan_block"]);
    assert!(r.passed(), "{:#?}", r.criteria);
    assert!(r.plots.iter().any(|p| p.name == "jordan_residuals"));
}

#[test]
fn rhs_suite_passes_at_defaults() {
    let r = rhs_suite(&Parameters::default(), 8.0, 7).unwrap();
    assert_eq!(keys(&r), ["ac11_nonlinearity_order", "ac12_v_term_exactness"]);
    assert!(r.passed(), "{:#?}", r.all().collect::<Vec<_>>());
}

#[test]
fn modulation_suite_passes_at_defaults() {
    let r = modulation_suite(&Parameters::default(), 8.0, 7).unwrap();
    assert_eq!(keys(&r), ["ac05_modulation_jacobian"]);
    assert!(r.passed(), "{:#?}", r.all().collect::<Vec<_>>());
}

#[test]
fn suites_are_seed_deterministic() {
    let p = Parameters::default();
    assert_eq!(rhs_suite(&p, 8.0, 3).unwrap(), rhs_suite(&p, 8.0, 3).unwrap());
}

#[test]
fn short_run_keeps_constraints_and_starts_inside() {
    let params = Parameters::default();
    let cfg = SolverConfig { s_max: 9.0, ds_init: 2e-2, mesh: MeshConfig { nodes: 1024, ..MeshConfig::default() }, ..SolverConfig::default() };
    let trace = simulate(&params, &cfg, &[0.0; 4], StopRule::AtSMax).unwrap();
    assert!(trace.records.len() > 10);
    assert!(trace.records[0].report.max_margin() <= 1.0);
    for r in &trace.records {
        assert!(r.constraint_residual < 1e-8, "s = {}: {}", r.state.s, r.constraint_residual);
        assert!(r.state.s <= cfg.s_max + 1e-12);
    }
    let s: Vec<f64> = trace.records.iter().map(|r| r.state.s).collect();
    assert!(s.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn set_components_have_distinct_names() {
    let names: std::collections::BTreeSet<String> =
        [SetComponent::B, SetComponent::Theta, SetComponent::MinusHat, SetComponent::MinusCheck, SetComponent::Hat(0), SetComponent::Check(1)]
            .iter()
            .map(|c| c.to_string())
            .collect();
    assert_eq!(names.len(), 6);
}
