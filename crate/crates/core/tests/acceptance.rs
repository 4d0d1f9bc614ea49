//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (outside the test harness's capture) before asserting.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiked_edgeworth::edgeworth::{
    coefficients, single_spike_coefficients, tilde_kappa2, tilde_kappa3, EdgeworthCoefficients,
    SpikeContext,
};
use spiked_edgeworth::harness::{
    derive_seed, ks_distance, oracle_coefficients, par_replicates, run_density, run_moments,
    run_table, ExperimentKind, ExperimentSpec, Setting,
};
use spiked_edgeworth::inference::{e_pivot, z_pivot, Method};
use spiked_edgeworth::linalg::{
    direct_leave_out_inverse, max_abs, sample_covariance, sym_eigen, DataMatrix, LeaveOut,
};
use spiked_edgeworth::model::{
    build_model, generate_data, sample_entries, table_setting, EntryDistribution, MomentTriple,
    Rotation, VPowerSums,
};
use spiked_edgeworth::output::{write_accuracy_csv, write_moments_csv, write_samples_csv};

fn report(id: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id}: {verdict} ({detail})");
}

// 1. Gaussian moments with an axis eigenvector collapse to the Gaussian case.
#[test]
fn criterion_1_gaussian_reduction() {
    let m = MomentTriple::GAUSSIAN;
    let v = VPowerSums::AXIS;
    let mut worst = 0.0f64;
    let tk2 = tilde_kappa2(m.beta_z, v.s4);
    let tk3 = tilde_kappa3(&m, &v);
    worst = worst.max((tk2 - 2.0).abs()).max((tk3 - 8.0).abs());
    for &(l, g) in &[(4.0, 0.1), (2.5, 0.5), (6.0, 1.0), (10.0, 0.05), (1.8, 0.2)] {
        let c = coefficients(&SpikeContext::single(l, g, 200).unwrap(), &m, &v).unwrap();
        worst = worst
            .max((c.tilde_sigma_sq - c.sigma_sq).abs())
            .max(c.a_cross.abs());
    }
    let pass = worst == 0.0;
    report(1, pass, &format!("max deviation {worst:e}, exact equality required"));
    assert!(pass);
}

// 2. The multi-spike path with one spike equals the single-spike formulas.
#[test]
fn criterion_2_single_multi_consistency() {
    let laws = [
        EntryDistribution::Gaussian,
        EntryDistribution::Uniform,
        EntryDistribution::Ga12,
        EntryDistribution::Chi1,
    ];
    let fields = |c: &EdgeworthCoefficients| {
        [c.rho, c.sigma_sq, c.tilde_sigma_sq, c.kappa2, c.kappa3, c.mu, c.a_cross]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut points = 0;
    for i in 0..10 {
        for j in 0..10 {
            let g = 0.05 + 0.95 * i as f64 / 9.0;
            let l = 1.0 + g.sqrt() + 0.2 + 8.0 * j as f64 / 9.0;
            let n = [50, 100, 200, 400, 1000][(i + j) % 5];
            let m = laws[(i * 10 + j) % 4].population_moments();
            let u: Vec<f64> = (0..20).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v = VPowerSums::from_vector(&u.iter().map(|x| x / norm).collect::<Vec<_>>());
            let multi = coefficients(&SpikeContext::new(vec![l], 0, g, n).unwrap(), &m, &v).unwrap();
            let single = single_spike_coefficients(l, g, &m, &v).unwrap();
            for (a, b) in fields(&multi).into_iter().zip(fields(&single)) {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
            }
            points += 1;
        }
    }
    let pass = points == 100 && worst <= 1e-12;
    report(2, pass, &format!("{points} grid points, max relative gap {worst:e}, tolerance 1e-12"));
    assert!(pass);
}

// 3. Cornish-Fisher quantiles invert the Edgeworth CDF up to O(1/n).
#[test]
fn criterion_3_cornish_fisher_inversion() {
    let gamma = 0.1;
    let alphas = [0.05, 0.5, 0.95];
    let mut grid = Vec::new();
    for id in 1..=9u8 {
        let (spikes, rotation) = table_setting(id).unwrap();
        let model = build_model(&spikes, 20 - spikes.len(), rotation, &mut ChaCha8Rng::seed_from_u64(id as u64)).unwrap();
        for dist in EntryDistribution::ALL {
            for k in 0..spikes.len() {
                grid.push((spikes.clone(), k, dist.population_moments(), model.v_power_sums(k).unwrap()));
            }
        }
    }
    let err_at = |n: usize| -> Vec<f64> {
        let mut out = Vec::new();
        for (spikes, k, m, v) in &grid {
            let ctx = SpikeContext::new(spikes.clone(), *k, gamma, n).unwrap();
            let c = coefficients(&ctx, m, v).unwrap();
            for &a in &alphas {
                out.push((c.cdf_raw(c.quantile(a, n).unwrap(), n) - a).abs());
            }
        }
        out
    };
    let c_hat = err_at(100).iter().fold(0.0f64, |m, e| m.max(e * 100.0));
    let mut pass = c_hat.is_finite();
    let mut detail = format!("{} cases, C = {c_hat:.4} from n = 100", grid.len() * alphas.len());
    for n in [400, 1600] {
        let worst = err_at(n).into_iter().fold(0.0f64, f64::max);
        pass &= worst <= c_hat / n as f64;
        detail += &format!(", n = {n}: max err {worst:.3e} vs C/n {:.3e}", c_hat / n as f64);
    }
    report(3, pass, &detail);
    assert!(pass);
}

// 4. Rank-one leave-out inverses and eigen-decompositions are accurate.
#[test]
fn criterion_4_linear_algebra_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut inv_err, mut eig_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(40..=200);
        let d = rng.random_range(5..=40usize.min(n - 3));
        let x = DataMatrix::new(sample_entries(EntryDistribution::Ga12, n, d, &mut rng)).unwrap();
        let lo = LeaveOut::new(&x).unwrap();
        for _ in 0..3 {
            let j = rng.random_range(0..n);
            let diff = lo.leave_one_out(j).unwrap() - direct_leave_out_inverse(&x, &[j]).unwrap();
            inv_err = inv_err.max(max_abs(&diff));
        }
        let (i, j) = (0, n - 1);
        let diff = lo.leave_two_out(i, j).unwrap() - direct_leave_out_inverse(&x, &[i, j]).unwrap();
        inv_err = inv_err.max(max_abs(&diff));
        let s = sample_covariance(&x);
        let e = sym_eigen(&s, 1e-10).unwrap();
        let lambda = nalgebra::DMatrix::from_diagonal(&e.eigenvalues);
        eig_err = eig_err.max(max_abs(&(&s * &e.eigenvectors - &e.eigenvectors * lambda)));
    }
    let pass = inv_err <= 1e-8 && eig_err <= 1e-10;
    report(4, pass, &format!("inverse gap {inv_err:.2e} (tol 1e-8), eigen residual {eig_err:.2e} (tol 1e-10)"));
    assert!(pass);
}

// 5. Replicate means of the moment estimators sit within 3 SE of the truth.
#[test]
fn criterion_5_moment_calibration() {
    let laws = [
        EntryDistribution::Gaussian,
        EntryDistribution::Uniform,
        EntryDistribution::Ga12,
        EntryDistribution::Chi1,
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, dist) in laws.into_iter().enumerate() {
        let spec = ExperimentSpec::new(ExperimentKind::Moments, Setting::Table(1), dist, 500, 50)
            .with_reps(200)
            .with_seed(500 + i as u64);
        let res = run_moments(&spec).unwrap();
        for (name, s) in [("beta", res.beta_z), ("gamma2", res.gamma_sq), ("delta", res.delta)] {
            let z = if s.se > 0.0 { s.z_score() } else if s.mean == s.truth { 0.0 } else { f64::INFINITY };
            let ok = z <= 3.0;
            pass &= ok;
            detail.push(format!(
                "{} {name} {:.3}±{:.3} vs {} ({})",
                dist.tag(),
                s.mean,
                s.se,
                s.truth,
                if ok { "ok" } else { "out" }
            ));
        }
    }
    report(5, pass, &detail.join("; "));
    assert!(pass, "moment estimator means outside 3 SE");
}

// 6. The Edgeworth CDF fits the standardized top eigenvalue better than Phi.
#[test]
fn criterion_6_density_fit() {
    let mut pass = true;
    let mut detail = Vec::new();
    for setting in [1u8, 2] {
        let spec = ExperimentSpec::new(
            ExperimentKind::Density,
            Setting::Table(setting),
            EntryDistribution::Chi1,
            200,
            20,
        )
        .with_reps(10_000)
        .with_seed(600 + setting as u64);
        let res = run_density(&spec).unwrap();
        let top = &res.spikes[0];
        let ok = top.ks_edgeworth < top.ks_gauss;
        pass &= ok;
        detail.push(format!(
            "setting {setting}: KS edgeworth {:.4} vs gauss {:.4}, {} excluded",
            top.ks_edgeworth, top.ks_gauss, top.excluded
        ));
    }
    report(6, pass, &detail.join("; "));
    assert!(pass);
}

// 7. Exact-recovery rate of JB_E in one accuracy-table cell.
#[test]
fn criterion_7_table_cell() {
    let template = ExperimentSpec::new(
        ExperimentKind::Accuracy,
        Setting::Table(1),
        EntryDistribution::Ga12,
        100,
        10,
    )
    .with_reps(1000)
    .with_seed(7)
    .with_methods(vec![Method::JbE, Method::JbGauss]);
    let cells = run_table(2, Some(&[(10, 100)]), &template).unwrap();
    let res = &cells[0].result;
    let jbe = res.percent(Method::JbE).unwrap();
    let jbg = res.percent(Method::JbGauss).unwrap();
    let target = 95.40;
    let pass = (jbe - target).abs() <= 10.0 && jbe - jbg >= 20.0;
    report(
        7,
        pass,
        &format!("JB_E {jbe:.1}% (target {target} ± 10), JB_Gauss {jbg:.1}%, margin {:.1} pp (need 20)", jbe - jbg),
    );
    assert!(pass);
}

// 8. At the true parameters the E-type pivot is closer to uniform.
#[test]
fn criterion_8_pivot_calibration() {
    let (n, dist, seed) = (200, EntryDistribution::Ga12, 8);
    let model = build_model(&[4.0], 19, Rotation::Identity, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let c = oracle_coefficients(&model, dist, n).unwrap()[0];
    let pivots = par_replicates(10_000, None, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let x = generate_data(&model, dist, n, &mut rng)?;
        let l_hat = sym_eigen(&sample_covariance(&x), 1e-10)?.eigenvalues[0];
        Ok((e_pivot(l_hat, &c, n), z_pivot(l_hat, &c, n)))
    })
    .unwrap();
    let uniform = |u: f64| u.clamp(0.0, 1.0);
    let ks_e = ks_distance(&pivots.iter().map(|p| p.0).collect::<Vec<_>>(), uniform);
    let ks_z = ks_distance(&pivots.iter().map(|p| p.1).collect::<Vec<_>>(), uniform);
    let pass = ks_e <= ks_z;
    report(8, pass, &format!("KS E-pivot {ks_e:.4} vs Z-pivot {ks_z:.4}"));
    assert!(pass);
}

// 9. Output bytes do not depend on the worker count.
#[test]
fn criterion_9_determinism() {
    let csv_for = |workers: usize| {
        let density = ExperimentSpec::new(
            ExperimentKind::Density,
            Setting::Table(5),
            EntryDistribution::Chi1,
            150,
            15,
        )
        .with_reps(300)
        .with_seed(9)
        .with_workers(Some(workers));
        let mut samples = Vec::new();
        write_samples_csv(&mut samples, &run_density(&density).unwrap()).unwrap();

        let accuracy = ExperimentSpec::new(
            ExperimentKind::Accuracy,
            Setting::Table(1),
            EntryDistribution::Uniform,
            100,
            10,
        )
        .with_reps(40)
        .with_seed(9)
        .with_workers(Some(workers));
        let mut table = Vec::new();
        write_accuracy_csv(&mut table, &run_table(3, Some(&[(10, 100), (20, 100)]), &accuracy).unwrap()).unwrap();

        let moments = ExperimentSpec::new(
            ExperimentKind::Moments,
            Setting::Table(1),
            EntryDistribution::Ga12,
            200,
            20,
        )
        .with_reps(50)
        .with_seed(9)
        .with_workers(Some(workers));
        let mut mom = Vec::new();
        write_moments_csv(&mut mom, &run_moments(&moments).unwrap()).unwrap();
        (samples, table, mom)
    };
    let base = csv_for(1);
    let mut pass = true;
    for w in [2, 3, 8] {
        pass &= csv_for(w) == base;
    }
    let bytes = base.0.len() + base.1.len() + base.2.len();
    report(9, pass, &format!("{bytes} bytes compared across 1, 2, 3, 8 workers"));
    assert!(pass);
}
