//! Acceptance checks, run in one test so timings are measured without
//! contention. Prints one PASS/FAIL/SKIP line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsal::config::{Experiment, ExperimentConfig};
use tsal::exec::Rayon;
use tsal::harness;
use tsal_core::activelearn::{certainty, rank_pool, select_batch, SelectedSet};
use tsal_core::adapt::{coral_matrix, fit_coral};
use tsal_core::cluster::{kmeanspp_fit, KMeansParams};
use tsal_core::evaluate::{aggregate_folds, compute_metrics, stratified_kfold, Budget, Confusion};
use tsal_core::forest::{self, ForestParams};
use tsal_core::ingest::PointRef;
use tsal_core::matrix::Matrix;
use tsal_core::parallel::Sequential;
use tsal_core::pipeline::{format_rate, per_point_increase, prepare_fold, run_budget, setup_transfer, PipelineConfig};
use tsal_core::synth::{gaussian_pair, GaussianPairConfig};

type Check = Result<String, String>;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || format!("runtime {:.2}s exceeds {limit_s}s", elapsed.as_secs_f64()))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; independent of the crate's sampler.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn metric_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.gen_range(0..300);
        let rate = rng.gen::<f64>();
        let truth: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < rate)).collect();
        let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < rate)).collect();
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            match (pred[i], truth[i]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r, f) = (ratio(tp, tp + fp), ratio(tp, tp + fn_), ratio(2 * tp, 2 * tp + fp + fn_));
        let (c, m) = compute_metrics(&pred, &truth).map_err(|e| format!("case {case}: {e}"))?;
        ensure(c == Confusion { tp, fp, fn_, tn }, || format!("case {case}: counts {c:?}"))?;
        for (got, want) in [(m.precision, p), (m.recall, r), (m.f1, f)] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max metric deviation {worst:e}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!("1000 vectors, max deviation {worst:e}, {:.3}s", start.elapsed().as_secs_f64()))
}

fn metric_fixture() -> Check {
    let c = Confusion { tp: 2, fp: 1, fn_: 3, tn: 0 };
    let m = c.metrics();
    ensure(m.precision == 2.0 / 3.0 && m.recall == 2.0 / 5.0 && m.f1 == 4.0 / 8.0, || format!("{m:?}"))?;
    let shown = format!("{:.4} {:.4} {:.4}", m.precision, m.recall, m.f1);
    ensure(shown == "0.6667 0.4000 0.5000", || shown.clone())?;
    let pred = [1, 1, 1, 0, 0, 0];
    let truth = [1, 1, 0, 1, 1, 1];
    let (_, m2) = compute_metrics(&pred, &truth).map_err(|e| e.to_string())?;
    ensure(m2 == m, || format!("from vectors {m2:?}"))?;
    Ok(format!("P R F1 = {shown}"))
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn na_power(m: &DMatrix<f64>, power: f64) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(1e-12).powf(power)));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, mix: &DMatrix<f64>, shift: f64) -> Matrix {
    let d = mix.nrows();
    let raw = DMatrix::from_fn(n, d, |_, _| normal(rng));
    let x = raw * mix;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|j| x[(i, j)] + shift).collect()).collect();
    Matrix::from_rows(d, &rows).expect("rectangular")
}

fn coral() -> Check {
    let start = Instant::now();
    let d = 8;
    let a = coral_matrix(&Matrix::identity(d).scale(4.0), &Matrix::identity(d).scale(9.0), 0.0);
    let scalar = a.sub(&Matrix::identity(d).scale(1.5)).max_abs();
    ensure(scalar < 1e-9, || format!("scalar case deviation {scalar:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let mut mixing = || DMatrix::from_fn(d, d, |i, j| f64::from(u8::from(i == j)) + 0.4 * normal(&mut rng));
    let (ms, mt) = (mixing(), mixing());
    let xs = gaussian(&mut rng, 5000, &ms, 1.0);
    let xt = gaussian(&mut rng, 5000, &mt, -2.0);
    let t = fit_coral(&xs, &xt, 0.0).map_err(|e| e.to_string())?;
    let cs = to_na(&xs.covariance());
    let ct = to_na(&xt.covariance());
    let oracle = na_power(&cs, -0.5) * na_power(&ct, 0.5);
    let vs_oracle = (to_na(&t.matrix) - &oracle).amax();
    ensure(vs_oracle < 1e-8, || format!("transform differs from eigen oracle by {vs_oracle:e}"))?;
    let adapted = to_na(&t.apply(&xs).map_err(|e| e.to_string())?.covariance());
    let rel = (&adapted - &ct).norm() / ct.norm();
    ensure(rel < 0.05, || format!("covariance matching error {rel}"))?;

    let same = fit_coral(&xs, &xs, 0.0).map_err(|e| e.to_string())?;
    let ident = same.matrix.sub(&Matrix::identity(d)).max_abs();
    ensure(ident < 1e-9, || format!("identical-data deviation {ident:e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "scalar {scalar:.1e}, cov error {rel:.1e}, identity {ident:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

/// Naive sequential filter: scan the ranking, keep a point unless some kept or
/// previously selected point of the same series is within `alpha`.
fn filter_oracle(order: &[(String, usize)], m: usize, alpha: usize, previous: &[(String, usize)]) -> Vec<usize> {
    let mut kept: Vec<(String, usize)> = previous.to_vec();
    let mut out = Vec::new();
    for (pos, (s, i)) in order.iter().enumerate() {
        if out.len() == m {
            break;
        }
        if kept.iter().any(|(ks, ki)| ks == s && ki.abs_diff(*i) <= alpha) {
            continue;
        }
        kept.push((s.clone(), *i));
        out.push(pos);
    }
    out
}

fn acquisition() -> Check {
    let c05 = certainty(0.5).map_err(|e| e.to_string())?;
    let c09 = certainty(0.9).map_err(|e| e.to_string())?;
    ensure(c05 == 0.0 && (c09 - 0.8).abs() < 1e-12, || format!("certainty(0.5)={c05}, certainty(0.9)={c09}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    for case in 0..200 {
        let n_series = rng.gen_range(1..=4);
        let mut pool = Vec::new();
        for s in 0..n_series {
            let len = rng.gen_range(5..120);
            let mut idx: Vec<usize> = (0..len).collect();
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(rng.gen_range(1..=len)) {
                // Coarse probabilities force certainty ties.
                let p = f64::from(rng.gen_range(0..=20u8)) / 20.0;
                pool.push((PointRef::new(&format!("s{s}"), i), p));
            }
        }
        let mut order: Vec<(f64, String, usize)> =
            pool.iter().map(|(r, p)| ((1.0 - 2.0 * p).abs(), r.series_id.to_string(), r.index)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| (&a.1, a.2).cmp(&(&b.1, b.2))));
        let ranked = rank_pool(&pool).map_err(|e| e.to_string())?;
        let ranked_keys: Vec<(String, usize)> = ranked.iter().map(|c| (c.point.series_id.to_string(), c.point.index)).collect();
        let order_keys: Vec<(String, usize)> = order.into_iter().map(|(_, s, i)| (s, i)).collect();
        ensure(ranked_keys == order_keys, || format!("case {case}: ranking differs"))?;

        let previous: Vec<(String, usize)> = (0..rng.gen_range(0..4))
            .map(|_| (format!("s{}", rng.gen_range(0..n_series)), rng.gen_range(0..120)))
            .collect();
        let mut already = SelectedSet::new();
        for (s, i) in &previous {
            already.insert(&PointRef::new(s, *i));
        }
        let m = rng.gen_range(0..=pool.len() + 2);
        let alpha = rng.gen_range(0..15);
        let got = select_batch(&ranked, m, alpha, &already);
        let want = filter_oracle(&order_keys, m, alpha, &previous);
        ensure(got == want, || format!("case {case}: select_batch {got:?} vs oracle {want:?}"))?;

        let top = select_batch(&ranked, m, 0, &SelectedSet::new());
        ensure(top == (0..m.min(ranked.len())).collect::<Vec<_>>(), || format!("case {case}: alpha=0 is not top-m"))?;
    }
    Ok("certainty ok, 200 fixtures match the sequential-filter oracle, alpha=0 is top-m".into())
}

fn clustering() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    let mut worst_trace = 0.0f64;
    let mut check_trace = |trace: &[f64]| {
        for w in trace.windows(2) {
            worst_trace = worst_trace.max(w[1] - w[0]);
        }
    };

    let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..5).map(|j| 3.0 * normal(&mut rng) + j as f64).collect()).collect();
    let x = Matrix::from_rows(5, &rows).map_err(|e| e.to_string())?;
    let model = kmeanspp_fit(&x, &KMeansParams::new(1, 11)).map_err(|e| e.to_string())?;
    check_trace(&model.inertia_trace);
    let c = model.centroids_unscaled();
    let dev = c.row(0).iter().zip(x.column_means()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(dev <= 1e-12, || format!("k=1 centroid deviates from mean by {dev:e}"))?;

    let centers = [[0.0, 0.0, 0.0], [8.0, 8.0, 0.0], [0.0, 8.0, 8.0]];
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (b, ctr) in centers.iter().enumerate() {
        for _ in 0..300 {
            rows.push(ctr.iter().map(|v| v + normal(&mut rng)).collect::<Vec<_>>());
            truth.push(b);
        }
    }
    let x = Matrix::from_rows(3, &rows).map_err(|e| e.to_string())?;
    let model = kmeanspp_fit(&x, &KMeansParams::new(3, 12)).map_err(|e| e.to_string())?;
    check_trace(&model.inertia_trace);
    let labels = tsal_core::cluster::assign(&model, &x).map_err(|e| e.to_string())?;
    let mut table = [[0usize; 3]; 3];
    for (&l, &t) in labels.iter().zip(&truth) {
        table[l][t] += 1;
    }
    let purity = table.iter().map(|r| r.iter().max().copied().unwrap_or(0)).sum::<usize>() as f64 / truth.len() as f64;
    ensure(purity >= 0.99, || format!("purity {purity}"))?;

    for k in [2, 4, 7] {
        let rows: Vec<Vec<f64>> = (0..250).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();
        let x = Matrix::from_rows(4, &rows).map_err(|e| e.to_string())?;
        let model = kmeanspp_fit(&x, &KMeansParams::new(k, 13 + k as u64)).map_err(|e| e.to_string())?;
        check_trace(&model.inertia_trace);
    }
    ensure(worst_trace <= 0.0, || format!("inertia increased by {worst_trace:e}"))?;
    Ok(format!("centroid deviation {dev:.1e}, purity {purity:.4}, inertia monotone"))
}

fn forest_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..300 {
        let a: f64 = rng.gen_range(-1.0..1.0);
        let a = if a.abs() < 0.05 { a.signum() * 0.05 + a } else { a };
        rows.push(vec![a, rng.gen::<f64>(), rng.gen::<f64>()]);
        y.push(u8::from(a > 0.0));
    }
    let x = Matrix::from_rows(3, &rows).map_err(|e| e.to_string())?;
    let params = ForestParams::default().with_seed(21);
    let model = forest::fit(&x, &y, &params).map_err(|e| e.to_string())?;
    let pred = model.predict(&x, 0.5).map_err(|e| e.to_string())?;
    let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
    ensure(acc == 1.0, || format!("separable training accuracy {acc}"))?;

    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..600 {
        let class = u8::from(i % 2 == 1);
        let c = if class == 1 { 2.5 } else { -2.5 };
        rows.push((0..4).map(|_| c + normal(&mut rng)).collect::<Vec<_>>());
        y.push(class);
    }
    let x = Matrix::from_rows(4, &rows).map_err(|e| e.to_string())?;
    let params = ForestParams { n_trees: 100, ..ForestParams::default() }.with_seed(22);
    let a = forest::fit(&x, &y, &params).map_err(|e| e.to_string())?;
    let oob = a.oob_error.ok_or("no OOB estimate")?;
    ensure(oob <= 0.05, || format!("OOB error {oob}"))?;
    let b = forest::fit(&x, &y, &params).map_err(|e| e.to_string())?;
    let bits = |m: &forest::ForestModel| -> Result<Vec<u64>, String> {
        Ok(m.predict_proba(&x).map_err(|e| e.to_string())?.iter().map(|p| p.to_bits()).collect())
    };
    ensure(bits(&a)? == bits(&b)?, || "same-seed rerun changed predictions".into())?;
    Ok(format!("separable accuracy 1.0, OOB error {oob:.4}, rerun byte-identical"))
}

fn stratification() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    let mut worst = 0.0f64;
    for case in 0..500 {
        let n_folds = rng.gen_range(2..=10);
        let n = rng.gen_range(n_folds..3000);
        let ratio: f64 = rng.gen_range(0.0..0.5);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < ratio)).collect();
        let folds = stratified_kfold(&labels, n_folds, rng.gen()).map_err(|e| format!("case {case}: {e}"))?;
        for class in [0u8, 1] {
            let total = labels.iter().filter(|&&l| l == class).count();
            let share = total as f64 / n_folds as f64;
            for f in 0..n_folds {
                let count = folds.test(f).iter().filter(|&&i| labels[i] == class).count();
                worst = worst.max((count as f64 - share).abs());
            }
        }
    }
    ensure(worst <= 1.0, || format!("per-class deviation {worst}"))?;
    Ok(format!("500 instances, max per-class deviation {worst:.3}"))
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let pair = gaussian_pair(&GaussianPairConfig::default());
    let (target, source) = (&pair.target, &pair.source);
    ensure(target.len() >= 5000, || format!("target has {} points", target.len()))?;
    let cfg = PipelineConfig { seed: 1, ..PipelineConfig::default() };
    let row_of: BTreeMap<&PointRef, usize> = target.refs.iter().enumerate().map(|(i, r)| (r, i)).collect();
    let setup = setup_transfer(target, source, 1, &cfg).map_err(|e| e.to_string())?;
    let (mut f0, mut f160) = (0.0, 0.0);
    let budget = 160;
    for fold in 0..cfg.n_folds {
        let state = prepare_fold(target, source, &setup, fold, &cfg, &Sequential).map_err(|e| e.to_string())?;
        let zero = run_budget(&state, target, 0, &cfg, &Sequential).map_err(|e| e.to_string())?;
        let out = run_budget(&state, target, budget, &cfg, &Sequential).map_err(|e| e.to_string())?;
        f0 += zero.last().f1() / cfg.n_folds as f64;
        f160 += out.last().f1() / cfg.n_folds as f64;

        let log = &out.log;
        ensure(zero.confusions.len() == 1 && zero.log.total() == 0, || format!("fold {fold}: N=0 ran rounds"))?;
        ensure(out.confusions.len() == cfg.rounds + 1, || format!("fold {fold}: {} entries", out.confusions.len()))?;
        for c in out.confusions.iter().chain(&zero.confusions) {
            ensure(c.total() == state.test_rows.len() as u64, || format!("fold {fold}: confusion total {}", c.total()))?;
        }
        let per_round = cfg.acquisition(budget).per_round();
        ensure(per_round.iter().sum::<usize>() == budget, || format!("fold {fold}: split {per_round:?}"))?;
        ensure(per_round.starts_with(&log.requested), || format!("fold {fold}: requested {:?}", log.requested))?;
        ensure(log.total() == budget || log.exhausted_at.is_some(), || format!("fold {fold}: short without exhaustion"))?;
        ensure(out.labeled.last() == Some(&log.total()), || format!("fold {fold}: labeled {:?}", out.labeled))?;
        ensure(out.labeled.windows(2).all(|w| w[0] <= w[1]), || format!("fold {fold}: labeled decreased"))?;
        for (r, cap) in per_round.iter().enumerate() {
            let got = log.in_round(r + 1).count();
            ensure(got <= *cap, || format!("fold {fold}: round {} took {got} > {cap}", r + 1))?;
        }
        let test: BTreeSet<usize> = state.test_rows.iter().copied().collect();
        let mut seen: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for rec in &log.records {
            let row = *row_of.get(&rec.point).ok_or("selected point not in target")?;
            ensure(!test.contains(&row), || format!("fold {fold}: test point {:?} selected", rec.point))?;
            ensure(rec.label == target.labels[row], || "oracle label mismatch".into())?;
            let prior = seen.entry(&rec.point.series_id).or_default();
            ensure(prior.iter().all(|&j| j.abs_diff(rec.point.index) > cfg.alpha), || {
                format!("fold {fold}: {:?} violates the diversity window", rec.point)
            })?;
            prior.push(rec.point.index);
        }
    }
    ensure(f160 >= f0, || format!("mean F1 fell from {f0:.4} (N=0) to {f160:.4} (N=160)"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!("mean F1 {f0:.4} (N=0) -> {f160:.4} (N=160), invariants hold, {:.1}s", start.elapsed().as_secs_f64()))
}

fn exp2_arithmetic() -> Check {
    let table4 = format_rate(per_point_increase(0.5834, 0.7918, 1280));
    ensure(table4 == "0.00016", || format!("printed {table4}"))?;
    let table5 = format_rate(per_point_increase(0.3096, 0.6161, 1280));
    ensure(table5 == "0.00024", || format!("0.3096 -> 0.6161 over 1280 prints {table5}"))?;
    Ok(format!(
        "0.5834->0.7918 over 1280 prints {table4}; discrepancy: 0.3065/1280 = {table5}, published value is 0.00013"
    ))
}

/// Needs a converted catalog (canonical layout) with `aws` and `twitter`
/// datasets under `TSAL_NAB_DATA`.
fn nab_at_scale() -> Option<Check> {
    let root = PathBuf::from(std::env::var_os("TSAL_NAB_DATA")?);
    Some((|| {
        let mut cfg = ExperimentConfig::for_experiment(Experiment::Exp1);
        cfg.data_root = Some(root);
        cfg.targets = vec!["aws".into(), "twitter".into()];
        cfg.k_grid = vec![1];
        cfg.budgets = vec![0, 160, 640, 1280];
        let exec = Rayon::new(0).map_err(|e| e.to_string())?;
        let datasets = harness::load_datasets(&cfg, &exec).map_err(|e| e.to_string())?;
        let table = harness::run(&cfg, &datasets, &exec).map_err(|e| e.to_string())?;
        let agg = aggregate_folds(&table.rows).map_err(|e| e.to_string())?;
        let mut trends = Vec::new();
        for d in &cfg.targets {
            let f1: Vec<f64> = cfg
                .budgets
                .iter()
                .map(|&n| {
                    agg.iter()
                        .filter(|r| &r.dataset == d && r.budget == Budget::Count(n))
                        .max_by_key(|r| r.round)
                        .map_or(f64::NAN, |r| r.metrics.f1)
                })
                .collect();
            trends.push((d.clone(), f1.windows(2).all(|w| w[1] >= w[0]), f1));
        }
        let line = trends.iter().map(|(d, _, f)| format!("{d} {f:.4?}")).collect::<Vec<_>>().join("; ");
        ensure(trends.iter().any(|t| t.1), || format!("no monotone dataset: {line}"))?;
        Ok(line)
    })())
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Option<Check>);
    let checks: [Criterion; 10] = [
        ("metric oracle", || Some(metric_oracle())),
        ("precision/recall/F1 fixture", || Some(metric_fixture())),
        ("CORAL", || Some(coral())),
        ("acquisition", || Some(acquisition())),
        ("clustering", || Some(clustering())),
        ("random forest", || Some(forest_checks())),
        ("stratification", || Some(stratification())),
        ("end-to-end AL benefit", || Some(end_to_end())),
        ("experiment 2 rate arithmetic", || Some(exp2_arithmetic())),
        ("NAB at scale", nab_at_scale),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in checks.iter().enumerate() {
        let outcome = match run() {
            Some(Ok(detail)) => Outcome::Pass(detail),
            Some(Err(detail)) => Outcome::Fail(detail),
            None => Outcome::Skip("TSAL_NAB_DATA not set".into()),
        };
        let (tag, detail) = match &outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
        if matches!(outcome, Outcome::Fail(_)) {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
