//! Acceptance run: one pass/fail line per criterion, nonzero exit on any
//! failure.

use std::sync::Arc;
use std::time::Instant;

use blockwise::estfn::{EstimatingFunction, OlsEf, SolveOptions};
use blockwise::estimators::{
    cross_fit, ibm_solve, optimal_alpha, optimal_alpha_raw, AdaptiveProgram, CovarianceBlocks, CrossFitOptions,
    EstimatorKind, GLEstimate, Scalarization, Weights,
};
use blockwise::lattice::{
    alpha_characterization, omega, signed_superset_sum, AdaptiveAlpha, OmegaTable, PatternMask, PatternTable,
    SchemeKind, WeightScheme,
};
use blockwise::predictors::{ols_conditional_moments, JointModel, LinearModel, PredictorBank};
use blockwise::simulation::{
    decomposition_error, generate, mean_bank, moment_bank, quality_sweep, remainder_study, run_replications, BankSpec,
    DgpConfig, DiscreteLaw, McOptions, MetricsTable, RunOptions, Scenario, Term,
};
use blockwise::{seed, Theta};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn random_table(rng: &mut ChaCha8Rng, width: usize) -> PatternTable {
    let full = (1u16 << width) - 1;
    let mut bits: Vec<u16> = (1..full).collect();
    bits.shuffle(rng);
    let k = rng.random_range(1..=bits.len().min(8));
    let mut w = vec![(PatternMask::new(full, width).unwrap(), 0.05 + rng.random::<f64>())];
    for &b in &bits[..k] {
        w.push((PatternMask::new(b, width).unwrap(), 0.05 + rng.random::<f64>()));
    }
    PatternTable::from_proportions(width, w).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = seed::rng(1, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let width = rng.random_range(2..=5);
        let t = random_table(&mut rng, width);
        for ws in [WeightScheme::Ps, WeightScheme::Ray] {
            let om = OmegaTable::new(&ws, &t).unwrap();
            for k in 0..om.augmented.len() {
                let e: f64 = t.proportions().iter().enumerate().map(|(i, p)| p * om.values[(i, k)]).sum();
                worst = worst.max(e.abs());
            }
        }
    }
    let mut sums_ok = true;
    for width in 1..=6 {
        for b in 1u16..(1 << width) {
            let r = PatternMask::new(b, width).unwrap();
            let v = signed_superset_sum(r, width).unwrap();
            sums_ok &= v == if r.is_full() { 1 } else { 0 };
        }
    }
    (worst <= 1e-12 && sums_ok, format!("max |E[ω]| = {worst:.2e}, signed sums exact: {sums_ok}"))
}

fn criterion_2() -> Outcome {
    let mut rng = seed::rng(2, &[]);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let law = DiscreteLaw::random(3, 4, &mut rng).unwrap();
        let mut q: Vec<PatternMask> = (1u16..7).filter(|_| rng.random::<bool>()).map(|b| PatternMask::new(b, 3).unwrap()).collect();
        q.push(PatternMask::full(3).unwrap());
        let f: Vec<f64> = (0..law.len()).map(|_| rng.random::<f64>() * 20.0 - 10.0 + i as f64).collect();
        worst = worst.max(decomposition_error(&law, &f, &q).unwrap());
    }
    (worst <= 1e-12, format!("max |Σ P_s f − f| = {worst:.2e} over 20 functions"))
}

/// Random but internally consistent complete-row moments for `d`-dimensional
/// terms and the table's augmented patterns.
fn random_blocks(rng: &mut ChaCha8Rng, table: &PatternTable, d: usize) -> CovarianceBlocks {
    let aug = table.augmented();
    let k = aug.len();
    let width = d * (1 + k);
    let b = DMatrix::from_fn(width + 3, width, |_, _| rng.random::<f64>() - 0.5);
    let cov = b.transpose() * &b / (width + 3) as f64 + DMatrix::identity(width, width) * 0.01;
    let a_hat = -(DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| 0.2 * (rng.random::<f64>() - 0.5)));
    let a_inv = a_hat.clone().try_inverse().unwrap();
    let block = |a: usize, c: usize| cov.view((a * d, c * d), (d, d)).into_owned();
    CovarianceBlocks {
        augmented: aug,
        a_hat,
        a_inv,
        v_psi: block(0, 0),
        c: (0..k).map(|i| block(0, i + 1)).collect(),
        f: (0..k).map(|i| (0..k).map(|j| block(i + 1, j + 1)).collect()).collect(),
        n_complete: 100,
    }
}

fn criterion_3() -> Outcome {
    let mut rng = seed::rng(3, &[]);
    let mut ray_err: f64 = 0.0;
    let mut ps_resid: f64 = 0.0;
    let mut qp_ok = true;
    let mut qp_resid: f64 = 0.0;
    for _ in 0..200 {
        let w = rng.random_range(2..=5);
        let t = random_table(&mut rng, w);
        let ray_alpha = alpha_characterization(SchemeKind::Ray, &t).unwrap();
        let adaptive = WeightScheme::Adaptive(ray_alpha);
        for &obs in t.patterns() {
            for r in t.augmented() {
                let a = omega(&WeightScheme::Ray, obs, r, &t).unwrap();
                let b = omega(&adaptive, obs, r, &t).unwrap();
                ray_err = ray_err.max((a - b).abs());
            }
        }
        let ps = alpha_characterization(SchemeKind::Ps, &t).unwrap();
        ps_resid = ps.constraint_residuals(&t).iter().fold(ps_resid, |m, r| m.max(r.abs()));
    }
    for _ in 0..50 {
        let w = rng.random_range(2..=4);
        let t = random_table(&mut rng, w);
        let d = rng.random_range(1..=3);
        let blocks = random_blocks(&mut rng, &t, d);
        let scal = Scalarization::Trace;
        let program = AdaptiveProgram::from_blocks(&blocks, &t, &scal).unwrap();
        let sol = program.solve(&t).unwrap();
        qp_resid = qp_resid.max(sol.constraint_residual);
        for scheme in [SchemeKind::Ps, SchemeKind::Ray] {
            let gl = GLEstimate::from_blocks(&blocks, &t, scheme, &scal).unwrap();
            let (alpha, _) = optimal_alpha(&gl).unwrap();
            let embedded = alpha_characterization(scheme, &t).unwrap().scaled_rows(&t, alpha.as_slice());
            let at_embedding = program.objective_at(&embedded);
            qp_ok &= sol.objective <= at_embedding + 1e-10 * at_embedding.abs();
        }
    }
    let ok = ray_err <= 1e-12 && ps_resid == 0.0 && qp_ok && qp_resid <= 1e-10;
    (
        ok,
        format!(
            "RAY ω mismatch {ray_err:.2e}, PS constraint residual {ps_resid:.1e}, QP ≤ embeddings on 50 problems: {qp_ok}, QP residual {qp_resid:.1e}"
        ),
    )
}

fn biased_mean_bank(dgp: &DgpConfig) -> PredictorBank {
    let schema = Arc::new(dgp.schema().unwrap());
    let ef = dgp.estimating_function(&schema).unwrap();
    let mut fc = vec![25.0];
    fc.extend(std::iter::repeat_n(0.5, dgp.p1));
    let mut gc = vec![3.0];
    gc.extend(std::iter::repeat_n(1.2, dgp.p1 + dgp.p2));
    let f = LinearModel::from_coefficients((0..dgp.p1).collect(), vec![30], DMatrix::from_column_slice(dgp.p1 + 1, 1, &fc));
    let g = LinearModel::from_coefficients((0..30).collect(), vec![30], DMatrix::from_column_slice(31, 1, &gc));
    mean_bank(schema, ef, Arc::new(f.unwrap()), Arc::new(g.unwrap())).unwrap()
}

fn criterion_4() -> Outcome {
    let mut dgp = DgpConfig::mean41(20_000, 30_000, false).with_seed(4);
    dgp.multinomial = true;
    let data = generate(&dgp).unwrap().data;
    let bank = biased_mean_bank(&dgp);
    let m = |s: &str| s.parse::<PatternMask>().unwrap();
    let pop = PatternTable::from_proportions(3, vec![(m("111"), 0.2), (m("101"), 0.2), (m("110"), 0.3), (m("100"), 0.3)])
        .unwrap();
    let mut rng = seed::rng(4, &[1]);
    let mut entries = Vec::new();
    for r in pop.augmented() {
        let vars: Vec<(PatternMask, PatternMask)> =
            AdaptiveAlpha::variables(&pop).into_iter().filter(|(a, _)| *a == r).collect();
        let mut sum = 0.0;
        for &(a, s) in &vars {
            if !s.is_full() {
                let v = rng.random::<f64>() * 2.0 - 0.5;
                sum += v;
                entries.push(((a, s), v));
            }
        }
        entries.push(((r, pop.full()), -sum));
    }
    let adaptive = AdaptiveAlpha::new(&pop, entries).unwrap();
    let schemes = [
        ("ps", OmegaTable::new(&WeightScheme::Ps, &pop).unwrap().scaled(&[0.8, 1.3, -0.5])),
        ("ray", OmegaTable::new(&WeightScheme::Ray, &pop).unwrap().scaled(&[1.1, 0.6, 0.9])),
        ("adaptive", OmegaTable::new(&WeightScheme::Adaptive(adaptive), &pop).unwrap()),
    ];
    let theta = Theta::from_element(1, 30.0);
    let ef = bank.ef().clone();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, om) in &schemes {
        let vals: Vec<f64> = data
            .rows()
            .map(|row| {
                let p = pop.index_of(row.mask).unwrap();
                let mut v = 0.0;
                if row.mask.is_full() {
                    v += ef.evaluate(row.values, &theta)[0] / pop.pi_full();
                }
                for (k, &r) in om.augmented.iter().enumerate() {
                    let w = om.values[(p, k)];
                    if w != 0.0 {
                        v += w * bank.evaluate(r, row, &theta).unwrap().0[0];
                    }
                }
                v
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let z = mean / se;
        ok &= z.abs() <= 4.0;
        parts.push(format!("{name} z = {z:+.2}"));
    }
    (ok, format!("{} over {} draws", parts.join(", "), data.len()))
}

fn criterion_5() -> Outcome {
    let mut rng = seed::rng(5, &[]);
    let mut ok = true;
    let mut min_gain = f64::INFINITY;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..20 {
        let w = rng.random_range(2..=4);
        let t = random_table(&mut rng, w);
        let d = rng.random_range(1..=2);
        let blocks = random_blocks(&mut rng, &t, d);
        let scheme = if rng.random::<bool>() { SchemeKind::Ps } else { SchemeKind::Ray };
        let ws = if scheme == SchemeKind::Ps { WeightScheme::Ps } else { WeightScheme::Ray };
        let gl = GLEstimate::from_blocks(&blocks, &t, scheme, &Scalarization::Trace).unwrap();
        let (alpha, gain) = optimal_alpha_raw(&gl.g, &gl.l).unwrap();
        min_gain = min_gain.min(gain);
        let base = OmegaTable::new(&ws, &t).unwrap();
        let trace_at = |a: &[f64]| {
            let (gamma, eta) = base.scaled(a).moments(&t);
            blocks.sandwich(&gamma, &eta, t.pi_full()).trace()
        };
        let at_opt = trace_at(alpha.as_slice());
        for _ in 0..100 {
            let delta = DVector::from_fn(alpha.len(), |_, _| (rng.random::<f64>() - 0.5) * 0.2);
            let pert = &alpha + delta;
            let v = trace_at(pert.as_slice());
            worst_margin = worst_margin.min(v - at_opt);
            ok &= v >= at_opt - 1e-12 * at_opt.abs();
        }
    }
    ok &= min_gain >= 0.0;
    (ok, format!("min ℓ(Σ_α⋆+δ) − ℓ(Σ_α⋆) = {worst_margin:.2e}, min gain = {min_gain:.2e}"))
}

const MEAN_ESTIMATORS: [EstimatorKind; 5] = [
    EstimatorKind::Naive,
    EstimatorKind::PpiPp,
    EstimatorKind::IbmPs,
    EstimatorKind::IbmRay,
    EstimatorKind::IbmAdaptive,
];

fn coverage_runs() -> MetricsTable {
    let mut out: Option<MetricsTable> = None;
    for (i, (label, mis)) in [("correct", false), ("misspecified", true)].into_iter().enumerate() {
        let scenario = Scenario {
            label: label.into(),
            dgp: DgpConfig::mean41(500, 2000, mis),
            bank: BankSpec::Trained { train_n: 10_000 },
        };
        let t = run_replications(&scenario, &MEAN_ESTIMATORS, 500, 600 + i as u64, &RunOptions::default()).unwrap();
        match &mut out {
            Some(o) => o.extend(t),
            None => out = Some(t),
        }
    }
    out.unwrap()
}

fn criterion_6(t: &MetricsTable) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &t.rows {
        ok &= (0.925..=0.975).contains(&r.coverage) && r.failures == 0;
        parts.push(format!("{}/{} {:.3}", r.scenario, r.estimator, r.coverage));
    }
    (ok, format!("coverage {}", parts.join(", ")))
}

/// `MSE_a − MSE_b ≤ 3·sd(e_a² − e_b²)/√n` over replications where both ran.
fn paired_not_worse(t: &MetricsTable, scenario: &str, a: &str, b: &str) -> (bool, f64) {
    let (star, ra) = t.records_for(scenario, a).unwrap();
    let (_, rb) = t.records_for(scenario, b).unwrap();
    let diffs: Vec<f64> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x.ok() && y.ok())
        .map(|(x, y)| x.squared_error(star) - y.squared_error(star))
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let z = if sd > 0.0 { mean / (sd / n.sqrt()) } else { 0.0 };
    (mean <= 3.0 * sd / n.sqrt(), z)
}

fn criterion_7(t: &MetricsTable) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for scenario in ["correct", "misspecified"] {
        let naive = t.row(scenario, "naive").unwrap().mean_ci_width;
        for est in ["ibm_ps", "ibm_ray", "ibm_adaptive"] {
            let w = t.row(scenario, est).unwrap().mean_ci_width;
            ok &= w <= naive;
        }
        for other in ["ibm_ray", "ibm_ps"] {
            let (pass, z) = paired_not_worse(t, scenario, "ibm_adaptive", other);
            ok &= pass;
            parts.push(format!("{scenario} adaptive−{} z = {z:+.2}", other.trim_start_matches("ibm_")));
        }
        let widths: Vec<String> = ["naive", "ibm_ps", "ibm_ray", "ibm_adaptive"]
            .iter()
            .map(|e| format!("{:.3}", t.row(scenario, e).unwrap().mean_ci_width))
            .collect();
        parts.push(format!("{scenario} widths naive/ps/ray/adaptive {}", widths.join("/")));
    }
    (ok, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let scenario = Scenario { label: "ols".into(), dgp: DgpConfig::ols42(800, 2000), bank: BankSpec::Moments };
    let ks = [EstimatorKind::Naive, EstimatorKind::IbmPs, EstimatorKind::IbmRay, EstimatorKind::IbmAdaptive];
    let t = run_replications(&scenario, &ks, 300, 8, &RunOptions::default()).unwrap();
    let naive = t.row("ols", "naive").unwrap().mean_trace;
    let mut ok = true;
    let mut parts = Vec::new();
    for est in &ks[1..] {
        let r = t.row("ols", est.name()).unwrap();
        let ratio = r.mean_trace / naive;
        ok &= ratio <= 0.95 && r.failures == 0;
        parts.push(format!("{} {:.3}", est.name(), ratio));
    }
    (ok, format!("trace ratio to naive: {}", parts.join(", ")))
}

fn criterion_9() -> Outcome {
    let q_grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let opts = RunOptions::default();
    let large = quality_sweep(&q_grid, 1000, 2000, 200, 90, &opts).unwrap();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for q in q_grid {
        let sc = format!("q={q}");
        let naive = large.row(&sc, "naive").unwrap().rmse;
        for est in ["ppi_pp", "ibm_ps", "ibm_ray", "ibm_adaptive"] {
            let ratio = large.row(&sc, est).unwrap().rmse / naive;
            worst = worst.max(ratio);
            ok &= ratio <= 1.05;
        }
    }
    let small = quality_sweep(&q_grid, 100, 2000, 200, 91, &opts).unwrap();
    let mut fracs = Vec::new();
    for q in q_grid {
        let sc = format!("q={q}");
        let (_, ps) = small.records_for(&sc, "ibm_ps").unwrap();
        let (_, ray) = small.records_for(&sc, "ibm_ray").unwrap();
        let pairs: Vec<(f64, f64)> =
            ps.iter().zip(&ray).filter_map(|(a, b)| Some((a.cond_g?, b.cond_g?))).collect();
        let frac = pairs.iter().filter(|(a, b)| a > b).count() as f64 / pairs.len() as f64;
        if q > 0.0 {
            ok &= frac >= 0.9;
        }
        fracs.push(format!("q={q}: {frac:.2}"));
    }
    (
        ok,
        format!(
            "large-labeled max RMSE ratio to naive {worst:.3}; small-labeled share PS cond > RAY cond {} (q=0 reported only)",
            fracs.join(", ")
        ),
    )
}

fn criterion_10() -> Outcome {
    let grid: Vec<f64> = (-4..=8).map(|k| k as f64 / 10.0).collect();
    let m = |s: &str| s.parse::<PatternMask>().unwrap();
    let table =
        PatternTable::from_proportions(3, ["111", "110", "101", "100"].iter().map(|s| (m(s), 0.25)).collect()).unwrap();
    let study = remainder_study(&grid, &table, Some(&McOptions { seed: 10, ..McOptions::default() })).unwrap();
    let zero_ok = ["110", "101", "111"]
        .iter()
        .all(|s| study.row(s, 0.0, Term::Remainder).map(|r| r.variance == 0.0).unwrap_or(false));
    let nonzero_elsewhere = ["110", "101", "111"]
        .iter()
        .all(|s| study.row(s, 0.5, Term::Remainder).map(|r| r.variance > 0.0).unwrap_or(false));
    let sum_max = study.remainder_sums.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    let mut worst_z: f64 = 0.0;
    for r in &study.rows {
        let (mc, se) = (r.mc_variance.unwrap(), r.mc_se.unwrap());
        let diff = (mc - r.variance).abs();
        if diff > 0.0 {
            worst_z = worst_z.max(if se > 0.0 { diff / se } else { f64::INFINITY });
        }
    }
    let ok = zero_ok && nonzero_elsewhere && sum_max <= 1e-14 && worst_z <= 4.0;
    (
        ok,
        format!(
            "Rem variance 0 at ρ=0: {zero_ok}, max |Σ Rem_s| = {sum_max:.1e}, max |MC − exact|/se = {worst_z:.2} over {} rows",
            study.rows.len()
        ),
    )
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn fd_jacobian(f: &dyn Fn(&Theta) -> DVector<f64>, theta: &Theta) -> DMatrix<f64> {
    let d = theta.len();
    let h = 1e-6;
    let cols: Vec<DVector<f64>> = (0..d)
        .map(|j| {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += h;
            tm[j] -= h;
            (f(&tp) - f(&tm)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// Estimating function with a genuinely nonlinear Jacobian.
#[derive(Debug)]
struct Logistic {
    required: PatternMask,
}

impl EstimatingFunction for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }
    fn dim(&self) -> usize {
        2
    }
    fn required(&self) -> PatternMask {
        self.required
    }
    fn evaluate(&self, z: &[f64], t: &Theta) -> DVector<f64> {
        let p = 1.0 / (1.0 + (-(t[0] + t[1] * z[0])).exp());
        DVector::from_vec(vec![z[1] - p, z[0] * (z[1] - p)])
    }
    fn jacobian(&self, z: &[f64], t: &Theta) -> DMatrix<f64> {
        let p = 1.0 / (1.0 + (-(t[0] + t[1] * z[0])).exp());
        let w = p * (1.0 - p);
        DMatrix::from_row_slice(2, 2, &[-w, -w * z[0], -w * z[0], -w * z[0] * z[0]])
    }
}

fn criterion_11() -> Outcome {
    let mut parts = Vec::new();
    // Finite-difference Jacobians.
    let dgp = DgpConfig::ols42(50, 50).with_seed(11);
    let data = generate(&dgp).unwrap().data;
    let schema = data.schema().clone();
    let covs: Vec<&str> = schema.column_names().filter(|&c| c != "y").collect();
    let ols = Arc::new(OlsEf::new(&schema, &covs, "y").unwrap());
    let model = JointModel::Gaussian(dgp.gaussian_spec().unwrap().unwrap());
    let theta = Theta::from_vec(vec![0.3, -1.2, 2.0, 0.7]);
    let mut fd_worst: f64 = 0.0;
    for row in data.rows().take(20) {
        if row.mask.is_full() {
            let f = |t: &Theta| ols.evaluate(row.values, t);
            fd_worst = fd_worst.max(rel_err(&fd_jacobian(&f, &theta), &ols.jacobian(row.values, &theta)));
        }
        let r = row.mask;
        if !r.is_full() {
            let em = ols_conditional_moments(&model, ols.clone(), r, &schema, 0).unwrap();
            let f = |t: &Theta| em.expect(row, t).unwrap().0;
            fd_worst = fd_worst.max(rel_err(&fd_jacobian(&f, &theta), &em.expect(row, &theta).unwrap().1));
        }
    }
    let logistic = Logistic { required: "11".parse().unwrap() };
    let mut rng = seed::rng(11, &[]);
    for _ in 0..50 {
        let z = [rng.random::<f64>() * 4.0 - 2.0, (rng.random::<f64>() < 0.5) as u8 as f64];
        let t = Theta::from_vec(vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]);
        let f = |th: &Theta| logistic.evaluate(&z, th);
        fd_worst = fd_worst.max(rel_err(&fd_jacobian(&f, &t), &logistic.jacobian(&z, &t)));
    }
    parts.push(format!("FD Jacobian rel err {fd_worst:.1e}"));

    // Affine shortcut versus Newton.
    #[derive(Debug)]
    struct Opaque(Arc<OlsEf>);
    impl EstimatingFunction for Opaque {
        fn name(&self) -> &str {
            "opaque"
        }
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn required(&self) -> PatternMask {
            self.0.required()
        }
        fn evaluate(&self, z: &[f64], t: &Theta) -> DVector<f64> {
            self.0.evaluate(z, t)
        }
        fn jacobian(&self, z: &[f64], t: &Theta) -> DMatrix<f64> {
            self.0.jacobian(z, t)
        }
        fn ols_columns(&self) -> Option<(&[usize], usize)> {
            self.0.ols_columns()
        }
    }
    let fast = moment_bank(&dgp, schema.clone(), ols.clone()).unwrap();
    let slow = moment_bank(&dgp, schema.clone(), Arc::new(Opaque(ols.clone()))).unwrap();
    let table = data.pattern_table().unwrap();
    let mut newton_gap: f64 = 0.0;
    for scheme in [SchemeKind::Ps, SchemeKind::Ray] {
        let w = Weights::Tuned { scheme, alpha: vec![0.9, 0.4, -0.3] };
        let a = ibm_solve(&data, &fast, &table, &w, SolveOptions::default()).unwrap();
        let b = ibm_solve(&data, &slow, &table, &w, SolveOptions::default()).unwrap();
        newton_gap = newton_gap.max((a.theta - b.theta).amax());
    }
    parts.push(format!("affine vs Newton {newton_gap:.1e}"));

    // QP feasibility on real cross-fits.
    let mut qp_resid: f64 = 0.0;
    for s in 0..5 {
        let d = generate(&DgpConfig::ols42(200, 300).with_seed(100 + s)).unwrap().data;
        let r = cross_fit(&d, &fast, &CrossFitOptions::new(SchemeKind::Adaptive, s)).unwrap();
        qp_resid = qp_resid.max(r.diagnostics.constraint_residual.unwrap());
    }
    parts.push(format!("QP residual {qp_resid:.1e}"));

    // Byte determinism across thread counts.
    let scenario =
        Scenario { label: "det".into(), dgp: DgpConfig::mean41(60, 150, false), bank: BankSpec::Oracle { q: 0.5 } };
    let mut outputs = Vec::new();
    for jobs in [1, 3, 8] {
        let t = run_replications(&scenario, &MEAN_ESTIMATORS, 12, 77, &RunOptions { jobs, ..RunOptions::default() })
            .unwrap();
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        outputs.push((t.to_json().unwrap(), csv));
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    parts.push(format!("identical outputs across jobs 1/3/8: {same}"));

    let ok = fd_worst < 1e-6 && newton_gap <= 1e-10 && qp_resid <= 1e-10 && same;
    (ok, parts.join(", "))
}

fn report(n: usize, name: &str, start: Instant, outcome: Outcome) -> bool {
    let (ok, detail) = outcome;
    println!(
        "criterion {n:>2} [{name}]: {} ({detail}; {:.1} s)",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    ok
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "lattice identities", t, criterion_1());
    let t = Instant::now();
    all &= report(2, "decomposition oracle", t, criterion_2());
    let t = Instant::now();
    all &= report(3, "class equivalences", t, criterion_3());
    let t = Instant::now();
    all &= report(4, "validity at truth", t, criterion_4());
    let t = Instant::now();
    all &= report(5, "optimal tuning", t, criterion_5());
    let t = Instant::now();
    let runs = coverage_runs();
    all &= report(6, "coverage", t, criterion_6(&runs));
    let t = Instant::now();
    all &= report(7, "efficiency ordering", t, criterion_7(&runs));
    let t = Instant::now();
    all &= report(8, "OLS trace gain", t, criterion_8());
    let t = Instant::now();
    all &= report(9, "safety sweep", t, criterion_9());
    let t = Instant::now();
    all &= report(10, "remainder study", t, criterion_10());
    let t = Instant::now();
    all &= report(11, "numerical plumbing", t, criterion_11());
    if !all {
        std::process::exit(1);
    }
}
