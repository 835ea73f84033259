//! Simulate the mean design, fit the adaptive estimator, print the interval.

use blockwise::estimators::{run_estimator, CrossFitOptions, EstimatorKind};
use blockwise::simulation::{generate, scenario_bank, BankSpec, DgpConfig, Scenario};
use blockwise::SchemeKind;

fn main() -> blockwise::Result<()> {
    let scenario = Scenario {
        label: "demo".into(),
        dgp: DgpConfig::mean41(500, 2000, false).with_seed(1),
        bank: BankSpec::Trained { train_n: 10_000 },
    };
    let data = generate(&scenario.dgp)?.data;
    let bank = scenario_bank(&scenario, 1)?;
    let opts = CrossFitOptions::new(SchemeKind::Adaptive, 1);
    for kind in [EstimatorKind::Naive, EstimatorKind::IbmAdaptive] {
        let r = run_estimator(kind, &data, &bank, &opts)?;
        println!("{:<13} θ̂ = {:.3}  CI = [{:.3}, {:.3}]", r.estimator, r.theta_hat[0], r.ci[0][0], r.ci[0][1]);
    }
    Ok(())
}
