use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use asv_core::attribution::{
    asv_global_report, verify_theorems, ReportOptions, TheoremPair, TheoremVerdicts, Verdict, DEFAULT_SLACK_FRACTION,
};
use asv_core::data::{analytic_oracle, generate_synthetic, write_csv, OracleQuantity, SyntheticKind, SyntheticSpec};
use asv_core::ordering::{count_with_limit, load_dag};
use asv_core::variance::{all_pairs, conditional_variance, interaction_scan, lemma1_gap};
use asv_core::{CoalitionKey, Estimator, FeatureGrouping, ModelMode};
use serde_json::json;

use crate::config::Prepared;
use crate::error::CliError;
use crate::svg;

pub const HISTOGRAM_BINS: usize = 40;
pub const DEFAULT_TRAINING_BUDGET: usize = 1000;
/// Lemma 1 gaps above this fraction of σ²(T) are reported as warnings.
pub const LEMMA1_WARN_FRACTION: f64 = 0.05;

/// Every file of a run goes through here, from one thread.
pub struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        fs::write(&p, contents)?;
        log::info!("wrote {}", p.display());
        self.written.push(p.clone());
        Ok(p)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Core(e.into());
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn report_options(prep: &Prepared) -> ReportOptions {
    ReportOptions {
        ordering_cap: prep.config.ordering_cap,
        seed: prep.config.seed,
        ..ReportOptions::default()
    }
}

fn print_verdicts(mode: ModelMode, verdicts: &[Verdict]) {
    for v in verdicts {
        println!(
            "{} {mode} {}: {:.3e} (tolerance {:.3e})",
            if v.passed { "PASS" } else { "FAIL" },
            v.name,
            v.value,
            v.tolerance
        );
    }
}

pub fn attribute(prep: &Prepared) -> Result<(), CliError> {
    let dag = prep.dag()?;
    let wb = prep.workbench();
    let mut out = Output::new(&prep.config.out);
    let names = prep.grouping.names();
    let mut failed = Vec::new();

    println!(
        "{:<13} {:>10} {} {:>9} {:>9}",
        "mode",
        "phi_0",
        names.iter().map(|n| format!("{n:>10}")).collect::<Vec<_>>().join(" "),
        "phi_I",
        "residual"
    );
    for &mode in &prep.config.modes {
        let run = asv_global_report(&wb, &dag, mode, &report_options(prep))?;
        let r = &run.report;
        out.write(&format!("report_{mode}.json"), r.to_json()? + "\n")?;

        let mut rows = vec![vec!["phi_0".to_string(), r.phi_0.to_string(), r.percent(r.phi_0).to_string()]];
        for (g, c) in &r.contributions {
            rows.push(vec![g.clone(), c.value.to_string(), c.percent.to_string()]);
        }
        rows.push(vec!["phi_I".into(), r.phi_i.to_string(), r.percent(r.phi_i).to_string()]);
        rows.push(vec![
            "residual".into(),
            r.residual_variance.to_string(),
            r.percent(r.residual_variance).to_string(),
        ]);
        out.write(&format!("contributions_{mode}.csv"), csv_bytes(&["term", "value", "percent_of_sigma2"], &rows)?)?;
        run.ledger.write_csv(&out.path(&format!("ledger_{mode}.csv")), &prep.grouping)?;

        let mut bars: Vec<(String, f64)> = r.contributions.iter().map(|(g, c)| (g.clone(), c.percent)).collect();
        bars.push(("phi_I".into(), r.percent(r.phi_i)));
        out.write(
            &format!("contributions_{mode}.svg"),
            svg::bar_chart(&bars, &format!("Contributions to variance reduction ({mode}, % of sigma2)")),
        )?;

        println!(
            "{:<13} {:>10.2} {} {:>8.2}% {:>8.2}%",
            mode.as_str(),
            r.phi_0,
            r.contributions
                .iter()
                .map(|(_, c)| format!("{:>9.2}%", c.percent))
                .collect::<Vec<_>>()
                .join(" "),
            r.percent(r.phi_i),
            r.percent(r.residual_variance)
        );
        if !r.identities_hold() {
            print_verdicts(mode, &r.verdicts);
            failed.extend(r.verdicts.iter().filter(|v| !v.passed).map(|v| format!("{mode} {}", v.name)));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("identity checks failed: {}", failed.join(", "))))
    }
}

/// `all`, or comma-separated `a:b` group-name pairs.
pub fn parse_pairs(prep: &Prepared, spec: &str) -> Result<Vec<(usize, usize)>, CliError> {
    if spec == "all" {
        return Ok(all_pairs(prep.grouping.len()));
    }
    let mut pairs = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (a, b) = item
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("pair `{item}` is not of the form a:b")))?;
        let (a, b) = (prep.group_id(a)?, prep.group_id(b)?);
        if a == b {
            return Err(CliError::Config(format!("pair `{item}` repeats a group")));
        }
        pairs.push((a.min(b), a.max(b)));
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

/// Estimators a scan of `pairs` would still have to train.
pub fn pending_trainings(prep: &Prepared, pairs: &[(usize, usize)]) -> usize {
    let wb = prep.workbench();
    let mut keys: BTreeSet<CoalitionKey> = BTreeSet::new();
    for &mode in &prep.config.modes {
        for &(a, b) in pairs {
            for ids in [vec![a], vec![b], vec![a, b]] {
                keys.insert(wb.key(ids, mode));
            }
        }
    }
    keys.iter().filter(|k| !wb.is_cached(k)).count()
}

pub fn interactions(prep: &Prepared, pairs: &str, budget: usize) -> Result<(), CliError> {
    let pairs = parse_pairs(prep, pairs)?;
    let needed = pending_trainings(prep, &pairs);
    if needed > budget {
        return Err(CliError::Budget(format!(
            "{} pairs need {needed} estimator trainings, budget is {budget}",
            pairs.len()
        )));
    }
    let wb = prep.workbench();
    let mut out = Output::new(&prep.config.out);
    for &mode in &prep.config.modes {
        let scan = interaction_scan(&wb, &pairs, mode)?;
        let sigma2 = scan.ledger.sigma2_t();
        let pct = scan.matrix.to_percent(sigma2);
        let mut buf = Vec::new();
        pct.write_csv(&mut buf)?;
        out.write(&format!("interactions_{mode}.csv"), buf)?;

        let names = prep.grouping.names();
        let rows: Vec<Vec<String>> = scan
            .pairs
            .iter()
            .map(|p| {
                let mut r = vec![names[p.a].to_string(), names[p.b].to_string()];
                for v in [p.l_a, p.l_b, p.l_ab, p.w] {
                    r.push(v.to_string());
                    r.push(scan.ledger.percent(v).to_string());
                }
                r
            })
            .collect();
        out.write(
            &format!("pairs_{mode}.csv"),
            csv_bytes(
                &["a", "b", "L_a", "L_a_percent", "L_b", "L_b_percent", "L_ab", "L_ab_percent", "W", "W_percent"],
                &rows,
            )?,
        )?;
        out.write(
            &format!("heatmap_{mode}.svg"),
            svg::heatmap(&pct, &format!("Pairwise interaction W ({mode}, % of sigma2)")),
        )?;
        let w_pct: Vec<f64> = scan.pairs.iter().map(|p| scan.ledger.percent(p.w)).collect();
        out.write(
            &format!("histogram_{mode}.svg"),
            svg::histogram(
                &w_pct,
                HISTOGRAM_BINS,
                &format!("Interactions between pairs ({mode})"),
                "W, % of sigma2",
            ),
        )?;
        println!(
            "{mode}: {} pairs, {} with positive W",
            scan.pairs.len(),
            scan.count_above(0.0)
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct GroupingChoices {
    pub files: Vec<PathBuf>,
    pub random_sizes: Vec<usize>,
    pub features_as_groups: bool,
}

pub fn remaining_variance(prep: &Prepared, choices: &GroupingChoices) -> Result<(), CliError> {
    let train = &prep.splits.train;
    let test = &prep.splits.test;
    let sigma2 = conditional_variance(&Estimator::empty(&prep.splits), test)?;
    if sigma2 <= 0.0 {
        return Err(CliError::Core(asv_core::Error::InvalidDataset("target has zero variance on the test split".into())));
    }

    let mut candidates: Vec<(String, FeatureGrouping, ModelMode)> =
        vec![("Unrestricted model".into(), FeatureGrouping::single(train, "all"), ModelMode::Unrestricted)];
    if let Some(p) = &prep.config.grouping {
        candidates.push((label_for(p), prep.grouping.clone(), ModelMode::Gam));
    }
    for p in &choices.files {
        if !p.is_file() {
            return Err(CliError::Config(format!("grouping file not found: {}", p.display())));
        }
        candidates.push((label_for(p), FeatureGrouping::load(p, train)?, ModelMode::Gam));
    }
    for &s in &choices.random_sizes {
        let g = FeatureGrouping::random(train, s, prep.config.seed)?;
        candidates.push((format!("Random groups of {s}"), g, ModelMode::Gam));
    }
    if choices.features_as_groups || candidates.len() == 1 {
        candidates.push(("Features as groups".into(), FeatureGrouping::singletons(train), ModelMode::Gam));
    }

    let mut rows = Vec::new();
    println!("{:<28} {:>12} {:>20}", "grouping", "# of groups", "remaining fraction");
    for (label, grouping, mode) in &candidates {
        let store = prep.store_for(grouping)?;
        let wb = prep.workbench_for(grouping, &store);
        let key = wb.key((0..grouping.len()).collect(), *mode);
        let model = wb.train(&key)?;
        let cv = conditional_variance(&Estimator::Trained(model), test)?;
        let frac = cv / sigma2;
        println!("{label:<28} {:>12} {frac:>20.4}", grouping.len());
        rows.push(vec![
            label.clone(),
            grouping.len().to_string(),
            frac.to_string(),
            cv.to_string(),
            sigma2.to_string(),
        ]);
    }
    let mut out = Output::new(&prep.config.out);
    out.write(
        "remaining_variance.csv",
        csv_bytes(&["grouping", "groups", "remaining_fraction", "residual_variance", "sigma2_t"], &rows)?,
    )?;
    Ok(())
}

fn label_for(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

pub struct VerifyOptions {
    pub pairs: String,
    pub independent: String,
    pub slack: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            pairs: "all".into(),
            independent: String::new(),
            slack: DEFAULT_SLACK_FRACTION,
        }
    }
}

pub fn verify(prep: &Prepared, opts: &VerifyOptions) -> Result<(), CliError> {
    let dag = prep.dag_or_unordered()?;
    let wb = prep.workbench();
    let mut identities = serde_json::Map::new();
    let mut lemma = serde_json::Map::new();
    let mut failed = Vec::new();

    for &mode in &prep.config.modes {
        let run = asv_global_report(&wb, &dag, mode, &report_options(prep))?;
        print_verdicts(mode, &run.report.verdicts);
        failed.extend(
            run.report
                .verdicts
                .iter()
                .filter(|v| !v.passed)
                .map(|v| format!("{mode} {}", v.name)),
        );
        identities.insert(mode.to_string(), serde_json::to_value(&run.report.verdicts).expect("verdicts serialize"));

        let full = run.full_key(&wb);
        let preds = wb.estimator(&full, &run.trained)?.evaluate(&prep.splits.test)?;
        let gap = lemma1_gap(&preds, prep.splits.test.target())? / run.ledger.sigma2_t();
        if gap > LEMMA1_WARN_FRACTION {
            println!("WARN {mode} lemma1: fitted gap {gap:.4} of sigma2 exceeds {LEMMA1_WARN_FRACTION}");
        } else {
            println!("PASS {mode} lemma1: fitted gap {gap:.4} of sigma2");
        }
        lemma.insert(mode.to_string(), json!(gap));
    }

    let theorems: Option<TheoremVerdicts> = if prep.config.modes.contains(&ModelMode::Gam) && prep.grouping.len() >= 2 {
        let independent: BTreeSet<(usize, usize)> = parse_pairs(prep, &opts.independent)?.into_iter().collect();
        let pairs: Vec<TheoremPair> = parse_pairs(prep, &opts.pairs)?
            .into_iter()
            .map(|(a, b)| TheoremPair {
                a: vec![a],
                b: vec![b],
                independent: independent.contains(&(a, b)),
            })
            .collect();
        let tv = verify_theorems(&wb, &pairs, opts.slack)?;
        for c in &tv.checks {
            if !c.theorem2_pass {
                println!("WARN theorem2 {} {}: W^r {:.4} exceeds -2cov {:.4} by {:.4}", c.a, c.b, c.w_r, c.bound, -c.theorem2_margin);
            }
            if c.theorem1_pass == Some(false) {
                println!(
                    "WARN theorem1 {} {}: |W^r| {:.4} above {:.4}",
                    c.a,
                    c.b,
                    c.theorem1_residual.unwrap_or(f64::NAN),
                    tv.theorem1_tolerance
                );
            }
            if c.anomaly {
                println!("ANOMALY {} {}: W^r {:.4}, cov {:.4}", c.a, c.b, c.w_r, c.covariance);
            }
        }
        println!(
            "theorem1: {}, theorem2: {}, anomalies: {}",
            if tv.theorem1_pass { "pass" } else { "warn" },
            if tv.theorem2_pass { "pass" } else { "warn" },
            tv.anomalies
        );
        Some(tv)
    } else {
        None
    };

    let doc = json!({
        "identities": identities,
        "lemma1_gap_fraction": lemma,
        "theorems": theorems,
        "anomalies": theorems.as_ref().map(|t| t.anomalies),
    });
    let mut out = Output::new(&prep.config.out);
    out.write("verdicts.json", serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("identity checks failed: {}", failed.join(", "))))
    }
}

pub fn count(dag: &Path, limit: usize) -> Result<(), CliError> {
    let dag = load_dag(dag).map_err(|e| match e {
        asv_core::Error::MissingFile(p) => CliError::Config(format!("DAG file not found: {}", p.display())),
        other => CliError::from(other),
    })?;
    let c = count_with_limit(&dag, limit)?;
    println!("orderings: {}", c.orderings);
    println!("prefixes: {}", c.prefixes);
    Ok(())
}

const ORACLE_NAMES: [&str; 6] = ["sigma2_T", "L_X1", "L_X2", "L_X1X2", "Lr_X1X2", "phi_I"];

pub fn synth(kind: &str, n: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let kind: SyntheticKind = kind.parse()?;
    let data = generate_synthetic(&SyntheticSpec { kind, n, seed })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_csv(&data, out)?;
    println!("wrote {n} rows of {kind} to {}", out.display());
    for name in ORACLE_NAMES {
        let q: OracleQuantity = name.parse()?;
        if let Ok(v) = analytic_oracle(kind, q) {
            println!("{name} = {v}");
        }
    }
    Ok(())
}
