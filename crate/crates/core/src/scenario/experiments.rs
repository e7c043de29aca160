//! One runner per experiment kind.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentSpec, Family, Sampling, SchemeName};
use crate::calculus::{
    adjointness_defect, b_form_defect, form_identity_defect, SmoothFunction, TestFunction,
};
use crate::error::{LabError, Result};
use crate::inequality::{
    dhstar_poincare, doubling_stability, duality_convergence, gradient_estimate_scan, poincare_ratio,
    sharpness_search, weighted_norm_counterexample, SharpnessOptions,
};
use crate::model::DerivedModel;
use crate::numkit::C64;
use crate::poly::{all_exponents, Polynomial};
use crate::sampling::Evaluation;
use crate::sector::{
    contour_resolvent, convergence_study, run_battery, standard_battery, ContourOptions, SectorialMatrix,
};
use crate::semigroup::{
    chaos_eigencheck, chaos_eigenfunction, decay_scan, intertwining_defect, invariance_defect, ChaosIndex,
    GaussianMeasure,
};

/// Plot-ready rows written next to the report.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// What a runner hands back to the orchestrator.
#[derive(Debug)]
pub struct Outcome {
    pub results: Value,
    /// `None` when no tolerance was declared.
    pub pass: Option<bool>,
    pub scheme: String,
    pub table: Option<Table>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn check(tolerance: Option<f64>, ok: impl FnOnce(f64) -> bool) -> Option<bool> {
    tolerance.map(ok)
}

fn scheme_label(s: &Sampling) -> String {
    match s.scheme {
        SchemeName::Exact => "exact",
        SchemeName::Mc => "mc",
        SchemeName::Qmc => "qmc",
        SchemeName::Quadrature => "quadrature",
    }
    .into()
}

/// Seeded family: random polynomials of degree `1..=degree_cap`, then two
/// bounded ridges when `smooth` is set.
pub fn build_family(d: usize, fam: &Family, seed: u64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = fam.degree_cap.max(1);
    let mut out: Vec<TestFunction> = (0..fam.count)
        .map(|k| Polynomial::random(d, 1 + (k as u32) % cap, &mut rng).into())
        .collect();
    if fam.smooth {
        let mut unit = || {
            let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            u.into_iter().map(|v| v / n).collect::<Vec<f64>>()
        };
        out.push(SmoothFunction::tanh_ridge(unit(), 2.0).into());
        out.push(SmoothFunction::cosine(unit()).into());
    }
    out
}

fn polynomials(fam: &[TestFunction]) -> Vec<Polynomial> {
    fam.iter().filter_map(|f| f.as_polynomial().cloned()).collect()
}

fn labelled(k: usize, f: &TestFunction) -> String {
    format!("f{k}:{}", f.label())
}

/// Exact where the moment algebra applies, Monte Carlo otherwise.
fn evaluation_for(f: &TestFunction, p: f64, s: &Sampling, seed: u64) -> Evaluation {
    let s = s.for_exponent(p);
    if s.scheme == SchemeName::Exact && f.as_polynomial().is_none() {
        Sampling { scheme: SchemeName::Mc, ..s }.evaluation(seed)
    } else {
        s.evaluation(seed)
    }
}

fn stationary_points(dm: &DerivedModel, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mu = GaussianMeasure::stationary(dm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dm.d();
    Ok((0..count)
        .map(|_| {
            let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut x = vec![0.0; d];
            mu.transform(&w, &mut x);
            x
        })
        .collect())
}

fn need(dm: Option<&DerivedModel>) -> Result<&DerivedModel> {
    dm.ok_or_else(|| LabError::InvalidInput("experiment needs a model".into()))
}

/// Dispatches one experiment. `seed` is already resolved.
pub fn run(spec: &ExperimentSpec, dm: Option<&DerivedModel>, seed: u64) -> Result<Outcome> {
    match spec {
        ExperimentSpec::Conditions { tolerance } => conditions(need(dm)?, *tolerance),
        ExperimentSpec::Poincare {
            p,
            family,
            sampling,
            tolerance,
            ..
        } => poincare(need(dm)?, p, family, sampling, *tolerance, seed),
        ExperimentSpec::Sharpness {
            degree_cap,
            random_count,
            tolerance,
            ..
        } => {
            let dm = need(dm)?;
            let opts = SharpnessOptions {
                degree_cap: *degree_cap,
                random_count: *random_count,
                seed,
                tolerance: tolerance.unwrap_or(1e-8),
            };
            let rep = sharpness_search(dm, &opts)?;
            let mut table = Table::new(&["maximizer", "best", "linear_max", "higher_degree_max", "bound", "probes"]);
            table.push(vec![
                rep.best.function_label.clone(),
                num(rep.best.ratio.value),
                num(rep.linear_max),
                num(rep.higher_degree_max),
                num(rep.bound),
                rep.probes.to_string(),
            ]);
            Ok(Outcome {
                pass: check(*tolerance, |_| rep.within_bound && rep.attained_by_linear),
                results: to_value(&rep),
                scheme: "exact".into(),
                table: Some(table),
            })
        }
        ExperimentSpec::FormIdentity { family, tolerance, .. } => form_identity(need(dm)?, family, *tolerance, seed),
        ExperimentSpec::Intertwining {
            times,
            family,
            tolerance,
            ..
        } => intertwining(need(dm)?, times, family, *tolerance, seed),
        ExperimentSpec::Invariance {
            times,
            family,
            tolerance,
            ..
        } => invariance(need(dm)?, times, family, *tolerance, seed),
        ExperimentSpec::Chaos {
            max_degree,
            t,
            tolerance,
            ..
        } => chaos(need(dm)?, *max_degree, *t, *tolerance, seed),
        ExperimentSpec::Decay {
            p,
            times,
            max_degree,
            sampling,
            tolerance,
            ..
        } => decay(need(dm)?, p, times, *max_degree, sampling, *tolerance, seed),
        ExperimentSpec::Duality {
            t,
            steps,
            family,
            tolerance,
            rule,
            min_order,
            ..
        } => {
            let dm = need(dm)?;
            let polys = polynomials(&build_family(dm.d(), family, seed));
            if polys.len() < 2 {
                return Err(LabError::InvalidInput("duality needs at least two polynomials".into()));
            }
            let mut table = Table::new(&["pair", "rule", "steps", "lhs", "rhs", "defect"]);
            let mut reports = Vec::new();
            for k in 0..polys.len() - 1 {
                let rep = duality_convergence(dm, &polys[k], &polys[k + 1], *t, steps, *rule)?;
                for r in &rep.reports {
                    table.push(vec![
                        format!("{k}-{}", k + 1),
                        to_value(rule).as_str().unwrap_or_default().to_string(),
                        r.steps.to_string(),
                        num(r.lhs),
                        num(r.rhs),
                        num(r.defect),
                    ]);
                }
                reports.push(rep);
            }
            let final_defect = reports
                .iter()
                .filter_map(|r| r.reports.last().map(|x| x.defect))
                .fold(0.0, f64::max);
            let min_observed = reports
                .iter()
                .filter_map(|r| r.observed_order)
                .fold(f64::INFINITY, f64::min);
            let order_ok = |r: &crate::inequality::ConvergenceReport| match (r.observed_order, min_order) {
                (Some(o), Some(m)) => o >= *m,
                _ => true,
            };
            let orders_ok = reports.iter().all(order_ok);
            Ok(Outcome {
                pass: check(*tolerance, |tol| final_defect <= tol && orders_ok),
                results: json!({
                    "final_defect": final_defect,
                    "min_observed_order": min_observed.is_finite().then_some(min_observed),
                    "orders_ok": orders_ok,
                    "pairs": reports,
                }),
                scheme: "exact".into(),
                table: Some(table),
            })
        }
        ExperimentSpec::GradientEstimate {
            q,
            times,
            family,
            sampling,
            growth_limit,
            ..
        } => {
            let dm = need(dm)?;
            let fam = build_family(dm.d(), family, seed);
            let mut table = Table::new(&["label", "t", "value", "stderr"]);
            let mut scans = Vec::new();
            for (k, f) in fam.iter().enumerate() {
                let eval = evaluation_for(f, *q, sampling, seed.wrapping_add(k as u64));
                let scan = gradient_estimate_scan(dm, f, *q, times, &eval)?;
                for pt in &scan.points {
                    table.push(vec![labelled(k, f), num(pt.t), num(pt.value.value), num(pt.value.stderr)]);
                }
                scans.push(scan);
            }
            let worst = scans.iter().map(|s| s.small_time_growth).fold(0.0, f64::max);
            let max = scans.iter().map(|s| s.max).fold(0.0, f64::max);
            Ok(Outcome {
                pass: check(*growth_limit, |lim| worst <= lim && max.is_finite()),
                results: json!({"max": max, "worst_small_time_growth": worst, "scans": scans}),
                scheme: scheme_label(sampling),
                table: Some(table),
            })
        }
        ExperimentSpec::Dhstar {
            p,
            family,
            sampling,
            tolerance,
            ..
        } => dhstar(need(dm)?, p, family, sampling, *tolerance, seed),
        ExperimentSpec::LpStability {
            p,
            family,
            samples,
            tolerance,
            ..
        } => {
            let dm = need(dm)?;
            let fam = build_family(dm.d(), family, seed);
            let eval = Evaluation::mc(*samples, seed);
            let mut table = Table::new(&["p", "sup_n", "stderr_n", "sup_2n", "stderr_2n", "relative_change", "stable"]);
            let mut reports = Vec::new();
            for &pv in p {
                let rep = doubling_stability(fam.len(), pv, &eval, |k, e| poincare_ratio(dm, &fam[k], pv, e))?;
                table.push(vec![
                    num(pv),
                    num(rep.sup_n.value),
                    num(rep.sup_n.stderr),
                    num(rep.sup_2n.value),
                    num(rep.sup_2n.stderr),
                    num(rep.relative_change),
                    rep.stable.to_string(),
                ]);
                reports.push(rep);
            }
            let pass = check(*tolerance, |k| {
                reports
                    .iter()
                    .all(|r| r.finite && (r.sup_2n.value - r.sup_n.value).abs() <= k * r.sup_n.stderr)
            });
            Ok(Outcome {
                pass,
                results: json!({"samples": samples, "reports": reports}),
                scheme: "mc".into(),
                table: Some(table),
            })
        }
        ExperimentSpec::Counterexample {
            dim,
            omega,
            t0,
            r_max,
            points,
            tolerance,
        } => {
            let rep = weighted_norm_counterexample(*dim, *omega, *t0, *r_max, *points)?;
            let mut table = Table::new(&["r", "growth"]);
            for s in &rep.sweep {
                table.push(vec![num(s.r), num(s.growth)]);
            }
            Ok(Outcome {
                pass: check(*tolerance, |tol| {
                    rep.exponentially_stable && rep.growth.is_some_and(|g| g > 1.0 + tol)
                }),
                results: to_value(&rep),
                scheme: "deterministic".into(),
                table: Some(table),
            })
        }
        ExperimentSpec::ResolventBattery {
            nodes,
            big_r,
            tolerance,
            identity_tolerance,
            scalar_tolerance,
        } => {
            let opts = ContourOptions {
                nodes_per_segment: *nodes,
                big_r: *big_r,
                ..Default::default()
            };
            let rep = run_battery(&standard_battery(), &opts)?;
            let mut table = Table::new(&["label", "lambda_re", "lambda_im", "relative_error", "residual", "tail_bound"]);
            for r in &rep.rows {
                table.push(vec![
                    r.label.clone(),
                    num(r.lambda[0]),
                    num(r.lambda[1]),
                    num(r.relative_error),
                    num(r.residual),
                    num(r.tail_bound),
                ]);
            }
            let declared = tolerance.is_some() || identity_tolerance.is_some() || scalar_tolerance.is_some();
            let pass = declared.then(|| {
                tolerance.is_none_or(|t| rep.max_relative_error <= t)
                    && identity_tolerance.is_none_or(|t| rep.max_identity_defect <= t)
                    && scalar_tolerance.is_none_or(|t| rep.scalar_error <= t)
            });
            Ok(Outcome {
                pass,
                results: to_value(&rep),
                scheme: "deterministic".into(),
                table: Some(table),
            })
        }
        ExperimentSpec::ConvergenceStudy { nodes, radii, tolerance } => {
            let case = standard_battery()
                .into_iter()
                .find(|c| c.label == "spd-3x2")
                .expect("battery has the spd case");
            let a = SectorialMatrix::new(case.a.clone(), case.theta_a)?;
            let b = SectorialMatrix::new(case.b.clone(), case.theta_b)?;
            let lam = case.lambdas[0];
            let target = tolerance.unwrap_or(crate::sector::DEFAULT_TOLERANCE);
            let study = convergence_study(&a, &b, lam, nodes, radii, target)?;
            let mut table = Table::new(&["nodes", "R", "error", "tail_bound", "runtime_ms"]);
            for r in &study.rows {
                table.push(vec![
                    r.nodes.to_string(),
                    num(r.big_r),
                    num(r.error),
                    num(r.tail_bound),
                    format!("{:.3}", r.runtime_ms),
                ]);
            }
            Ok(Outcome {
                pass: check(*tolerance, |_| study.below_target),
                results: json!({"case": case.label, "lambda": [lam.re, lam.im], "study": study}),
                scheme: "deterministic".into(),
                table: Some(table),
            })
        }
    }
}

/// Condition checklist plus the `B + Bᵀ = -I` defect.
pub fn conditions(dm: &DerivedModel, tolerance: Option<f64>) -> Result<Outcome> {
    let report = dm.check_theorem_conditions();
    let b_defect = b_structure_defect(dm);
    let mut table = Table::new(&["id", "status", "value"]);
    for e in &report.entries {
        table.push(vec![
            e.id.clone(),
            to_value(&e.status).as_str().unwrap_or_default().to_string(),
            opt(e.value),
        ]);
    }
    Ok(Outcome {
        pass: match b_defect {
            Some(v) => check(tolerance, |tol| v <= tol),
            None => None,
        },
        results: json!({"b_structure_defect": b_defect, "conditions": report}),
        scheme: "exact".into(),
        table: Some(table),
    })
}

/// `‖B + Bᵀ + I‖₂`, absent for degenerate noise.
pub fn b_structure_defect(dm: &DerivedModel) -> Option<f64> {
    let b = dm.b.as_ref()?;
    let m = dm.m();
    Some(crate::numkit::spectral_norm(&(b + b.transpose() + crate::numkit::identity(m))))
}

fn poincare(
    dm: &DerivedModel,
    ps: &[f64],
    family: &Family,
    sampling: &Sampling,
    tolerance: Option<f64>,
    seed: u64,
) -> Result<Outcome> {
    let fam = build_family(dm.d(), family, seed);
    let mut table = Table::new(&["label", "p", "ratio", "stderr", "bound", "n_samples", "seed"]);
    let mut per_p = Vec::new();
    let mut ok = true;
    for &p in ps {
        let mut reports = Vec::new();
        for (k, f) in fam.iter().enumerate() {
            let eval = evaluation_for(f, p, sampling, seed.wrapping_add(k as u64));
            let mut rep = poincare_ratio(dm, f, p, &eval)?;
            rep.function_label = labelled(k, f);
            table.push(vec![
                rep.function_label.clone(),
                num(p),
                num(rep.ratio.value),
                num(rep.ratio.stderr),
                opt(rep.bound),
                rep.ratio.n_samples.to_string(),
                rep.ratio.seed.to_string(),
            ]);
            reports.push(rep);
        }
        let sup = reports.iter().map(|r| r.ratio.value).fold(0.0, f64::max);
        let bound = reports.first().and_then(|r| r.bound);
        if let (Some(b), Some(tol)) = (bound, tolerance) {
            // exact ratios are held to the relative tolerance, sampled
            // ones get three standard errors on top
            ok &= reports
                .iter()
                .all(|r| r.ratio.value <= b * (1.0 + tol) + 3.0 * r.ratio.stderr);
        }
        ok &= sup.is_finite();
        per_p.push(json!({"p": p, "sup": sup, "bound": bound, "reports": reports}));
    }
    Ok(Outcome {
        pass: check(tolerance, |_| ok),
        results: json!({"by_p": per_p}),
        scheme: scheme_label(sampling),
        table: Some(table),
    })
}

fn form_identity(dm: &DerivedModel, family: &Family, tolerance: Option<f64>, seed: u64) -> Result<Outcome> {
    let fam: Vec<TestFunction> = polynomials(&build_family(dm.d(), family, seed))
        .into_iter()
        .map(TestFunction::from)
        .collect();
    let square = dm.m() == dm.d();
    let mut table = Table::new(&["f", "g", "form_defect", "b_form_defect"]);
    let (mut worst_form, mut worst_b): (f64, f64) = (0.0, 0.0);
    for (k, f) in fam.iter().enumerate() {
        let g = &fam[(k + 1) % fam.len()];
        let form = form_identity_defect(dm, f, g)?;
        let bf = if square { Some(b_form_defect(dm, f, g)?) } else { None };
        worst_form = worst_form.max(form);
        worst_b = worst_b.max(bf.unwrap_or(0.0));
        table.push(vec![labelled(k, f), labelled((k + 1) % fam.len(), g), num(form), opt(bf)]);
    }
    Ok(Outcome {
        pass: check(tolerance, |tol| worst_form <= tol && worst_b <= tol),
        results: json!({
            "pairs": fam.len(),
            "max_form_defect": worst_form,
            "max_b_form_defect": square.then_some(worst_b),
        }),
        scheme: "exact".into(),
        table: Some(table),
    })
}

fn intertwining(dm: &DerivedModel, times: &[f64], family: &Family, tolerance: Option<f64>, seed: u64) -> Result<Outcome> {
    let polys = polynomials(&build_family(dm.d(), family, seed));
    let points = stationary_points(dm, 8, seed ^ 0x5eed)?;
    let mut table = Table::new(&["label", "t", "max_defect"]);
    let mut worst: f64 = 0.0;
    for (k, g) in polys.iter().enumerate() {
        for &t in times {
            let mut d: f64 = 0.0;
            for x in &points {
                d = d.max(intertwining_defect(dm, t, g, x)?);
            }
            worst = worst.max(d);
            table.push(vec![format!("f{k}:poly(deg={})", g.degree()), num(t), num(d)]);
        }
    }
    Ok(Outcome {
        pass: check(tolerance, |tol| worst <= tol),
        results: json!({"points": points.len(), "max_defect": worst}),
        scheme: "exact".into(),
        table: Some(table),
    })
}

fn invariance(dm: &DerivedModel, times: &[f64], family: &Family, tolerance: Option<f64>, seed: u64) -> Result<Outcome> {
    let fam = build_family(dm.d(), family, seed);
    let mut table = Table::new(&["label", "t", "defect", "stderr"]);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (k, f) in fam.iter().enumerate() {
        let eval = evaluation_for(f, 2.0, &Sampling::default(), seed.wrapping_add(k as u64));
        for &t in times {
            let e = invariance_defect(dm, t, f, &eval)?;
            worst = worst.max(e.value.abs());
            if let Some(tol) = tolerance {
                ok &= e.value.abs() <= tol + 4.0 * e.stderr;
            }
            table.push(vec![labelled(k, f), num(t), num(e.value), num(e.stderr)]);
        }
    }
    Ok(Outcome {
        pass: check(tolerance, |_| ok),
        results: json!({"max_defect": worst}),
        scheme: "exact".into(),
        table: Some(table),
    })
}

fn chaos_indices(d: usize, max_degree: u32) -> Vec<ChaosIndex> {
    all_exponents(d, max_degree)
        .into_iter()
        .map(ChaosIndex::new)
        .filter(|i| i.total_degree() > 0)
        .collect()
}

fn chaos(dm: &DerivedModel, max_degree: u32, t: f64, tolerance: Option<f64>, seed: u64) -> Result<Outcome> {
    let mut table = Table::new(&["multi_index", "total_degree", "exponent", "defect"]);
    let mut worst: f64 = 0.0;
    for idx in chaos_indices(dm.d(), max_degree) {
        let (_, exponent) = chaos_eigenfunction(dm, &idx)?;
        let d = chaos_eigencheck(dm, &idx, t, 32, seed)?;
        worst = worst.max(d);
        table.push(vec![
            format!("{:?}", idx.multi_index),
            idx.total_degree().to_string(),
            num(exponent),
            num(d),
        ]);
    }
    Ok(Outcome {
        pass: check(tolerance, |tol| worst <= tol),
        results: json!({"t": t, "max_defect": worst, "indices": table.rows.len()}),
        scheme: "exact".into(),
        table: Some(table),
    })
}

fn decay(
    dm: &DerivedModel,
    ps: &[f64],
    times: &[f64],
    max_degree: u32,
    sampling: &Sampling,
    tolerance: Option<f64>,
    seed: u64,
) -> Result<Outcome> {
    let mut table = Table::new(&["multi_index", "p", "t", "norm", "stderr"]);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for idx in chaos_indices(dm.d(), max_degree) {
        let (h, exponent) = chaos_eigenfunction(dm, &idx)?;
        let f = TestFunction::from(h);
        let expected = -exponent;
        for &p in ps {
            let eval = evaluation_for(&f, p, sampling, seed);
            let scan = decay_scan(dm, &f, p, times, &eval)?;
            for pt in &scan.points {
                table.push(vec![
                    format!("{:?}", idx.multi_index),
                    num(p),
                    num(pt.t),
                    num(pt.norm.value),
                    num(pt.norm.stderr),
                ]);
            }
            let rel = (scan.rate - expected).abs() / expected;
            worst = worst.max(rel);
            rows.push(json!({
                "multi_index": idx.multi_index,
                "p": p,
                "rate": scan.rate,
                "expected_rate": expected,
                "omega_times_degree": dm.omega * f64::from(idx.total_degree()),
                "relative_error": rel,
                "theta_fit": scan.theta_fit,
                "theta_exists": scan.theta_exists,
            }));
        }
    }
    Ok(Outcome {
        pass: check(tolerance, |tol| worst <= tol),
        results: json!({"max_relative_rate_error": worst, "scans": rows}),
        scheme: scheme_label(sampling),
        table: Some(table),
    })
}

fn dhstar(
    dm: &DerivedModel,
    ps: &[f64],
    family: &Family,
    sampling: &Sampling,
    tolerance: Option<f64>,
    seed: u64,
) -> Result<Outcome> {
    let polys: Vec<Polynomial> = polynomials(&build_family(dm.d(), family, seed))
        .into_iter()
        .filter(|p| p.degree() > 0)
        .collect();
    if polys.is_empty() {
        return Err(LabError::InvalidInput("D_H* check needs non-constant polynomials".into()));
    }
    let m = dm.m();
    let mut table = Table::new(&["label", "p", "ratio", "stderr", "adjointness_defect"]);
    let mut worst_adj: f64 = 0.0;
    let mut sup: f64 = 0.0;
    let mut all = Vec::new();
    for (k, g) in polys.iter().enumerate() {
        // arbitrary polynomial field built from the other members
        let field: Vec<Polynomial> = (0..m)
            .map(|c| polys[(k + c + 1) % polys.len()].clone())
            .collect();
        let adj = adjointness_defect(dm, g, &field)?;
        worst_adj = worst_adj.max(adj);
        for &p in ps {
            let f = TestFunction::from(g.clone());
            let eval = evaluation_for(&f, p, sampling, seed.wrapping_add(k as u64));
            let rep = dhstar_poincare(dm, g, p, &eval)?;
            sup = sup.max(rep.ratio.value);
            table.push(vec![
                format!("f{k}:{}", rep.function_label),
                num(p),
                num(rep.ratio.value),
                num(rep.ratio.stderr),
                num(adj),
            ]);
            all.push(rep);
        }
    }
    Ok(Outcome {
        pass: check(tolerance, |tol| worst_adj <= tol && sup.is_finite()),
        results: json!({"sup_ratio": sup, "max_adjointness_defect": worst_adj, "reports": all}),
        scheme: scheme_label(sampling),
        table: Some(table),
    })
}

/// Contour resolvent for one `λ`, used by the `resolvent-sum` subcommand.
pub fn resolvent_sum(cfg: &super::config::ResolventConfig) -> Result<(Value, Option<bool>)> {
    let a = crate::numkit::matrix_from_row_major(cfg.d_a, cfg.d_a, &cfg.a)?;
    let b = crate::numkit::matrix_from_row_major(cfg.d_b, cfg.d_b, &cfg.b)?;
    let sa = SectorialMatrix::new(a.clone(), cfg.theta_a)?;
    let sb = SectorialMatrix::new(b.clone(), cfg.theta_b)?;
    let lam = C64::new(cfg.lambda[0], cfg.lambda[1]);
    let opts = ContourOptions {
        nodes_per_segment: cfg.nodes,
        r: cfg.r,
        big_r: cfg.big_r,
        tolerance: cfg.tolerance,
    };
    let res = contour_resolvent(&sa, &sb, lam, &opts)?;
    let oracle = crate::sector::kron_sum_resolvent_oracle(&a, &b, lam)?;
    let err = crate::sector::relative_error(&res.x, &oracle);
    let residual = crate::sector::resolvent_residual(&a, &b, lam, &res.x);
    let n = res.x.nrows();
    let x: Vec<[f64; 2]> = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| [res.x[(r, c)].re, res.x[(r, c)].im])
        .collect();
    let pass = cfg.tolerance.map(|t| err <= t);
    Ok((
        json!({
            "lambda": cfg.lambda,
            "dim": n,
            "X": x,
            "relative_error": err,
            "residual": residual,
            "certificate_a": sa.certificate,
            "certificate_b": sb.certificate,
            "contour": res,
            "pass": pass,
        }),
        pass,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::numkit::Matrix;

    fn classical(d: usize) -> DerivedModel {
        DerivedModel::derive(&ModelSpec::new("c", -Matrix::identity(d, d), Matrix::identity(d, d)).unwrap()).unwrap()
    }

    #[test]
    fn family_is_seeded() {
        let fam = Family {
            degree_cap: 3,
            count: 5,
            smooth: true,
        };
        let a = build_family(2, &fam, 11);
        let b = build_family(2, &fam, 11);
        assert_eq!(a.len(), 7);
        let x = [0.3, -0.7];
        for (f, g) in a.iter().zip(&b) {
            assert_eq!(f.value(&x), g.value(&x));
        }
        assert_ne!(build_family(2, &fam, 12)[0].value(&x), a[0].value(&x));
    }

    #[test]
    fn classical_poincare_reaches_the_constant() {
        let dm = classical(2);
        let out = run(
            &serde_json::from_str(r#"{"kind":"poincare","p":[2],"family":{"degree_cap":1,"count":3},"tolerance":1e-8}"#)
                .unwrap(),
            Some(&dm),
            1,
        )
        .unwrap();
        assert_eq!(out.pass, Some(true));
        let sup = out.results["by_p"][0]["sup"].as_f64().unwrap();
        assert!((sup - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn undeclared_tolerance_gives_no_verdict() {
        let dm = classical(1);
        let out = run(&serde_json::from_str(r#"{"kind":"form_identity"}"#).unwrap(), Some(&dm), 0).unwrap();
        assert_eq!(out.pass, None);
        assert!(out.results["max_form_defect"].as_f64().unwrap() < 1e-10);
    }

    #[test]
    fn impossible_tolerance_fails() {
        let dm = classical(2);
        let spec = serde_json::from_str(r#"{"kind":"sharpness","tolerance":1e-8}"#).unwrap();
        assert_eq!(run(&spec, Some(&dm), 0).unwrap().pass, Some(true));
        let spec = serde_json::from_str(r#"{"kind":"invariance","tolerance":-1}"#).unwrap();
        assert_eq!(run(&spec, Some(&dm), 0).unwrap().pass, Some(false));
    }

    #[test]
    fn decay_rates_match_chaos_exponents() {
        let dm = DerivedModel::derive(
            &ModelSpec::new("g", Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -3.0]), Matrix::identity(2, 2)).unwrap(),
        )
        .unwrap();
        let spec = serde_json::from_str(r#"{"kind":"decay","p":[2],"max_degree":2,"tolerance":0.01}"#).unwrap();
        let out = run(&spec, Some(&dm), 0).unwrap();
        assert_eq!(out.pass, Some(true), "{}", out.results);
    }
}
