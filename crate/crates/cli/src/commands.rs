use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use alloc_lab::asymptotics::{
    analytic_reference, lower_bound, lower_bound_target, table2_variability, worked_examples, AsymptoticSummary,
    LowerBound, VariabilityModel, WorkedExample,
};
use alloc_lab::config::{self, Scenario};
use alloc_lab::designs::{DBCDConfig, DesignSpec};
use alloc_lab::linalg::Matrix;
use alloc_lab::montecarlo::{run_study, StudyReport};
use serde::Serialize;

use crate::{CliError, Format, RunArgs};

type Result<T> = std::result::Result<T, CliError>;

fn load(path: &Path, args: &RunArgs) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut raw = config::parse_raw(&text)?;
    if let Some(seed) = args.seed {
        raw.set("sim.seed", seed.to_string())?;
    }
    if let Some(rate) = args.delay_entry_rate {
        raw.set("delay.entry_rate", rate.to_string())?;
        raw.set("delay.enabled", "true")?;
    }
    if let Some(rates) = &args.delay_response_rate {
        raw.set("delay.response_rates", rates.clone())?;
        raw.set("delay.enabled", "true")?;
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| alloc_lab::Error::invalid(o.clone(), "overrides are written key=value"))?;
        raw.set(k.trim(), v.trim())?;
    }
    Ok(config::scenario_from_raw(&raw)?)
}

fn load_all(args: &RunArgs) -> Result<Vec<Scenario>> {
    args.config.iter().map(|p| load(p, args)).collect()
}

fn stem(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    Ok(path)
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("reports serialize");
    s.push(b'\n');
    s
}

#[derive(Serialize)]
struct VariabilityRow {
    model: VariabilityModel,
    sigma2: Matrix,
}

#[derive(Serialize)]
struct AsymptReport {
    label: String,
    /// Enough to rerun: the scenario in `key = value` form.
    scenario: String,
    seed: u64,
    p: Vec<f64>,
    analytic: Option<AsymptoticSummary>,
    lower_bound: Option<LowerBound>,
    /// SEU, GDL and DBCD sharing this design's target.
    variability: Vec<VariabilityRow>,
    worked_examples: Vec<WorkedExample>,
}

fn asympt_report(sc: &Scenario) -> Result<AsymptReport> {
    let p = sc.arms.p();
    let target = lower_bound_target(&sc.design);
    let mut variability = Vec::new();
    let mut worked = Vec::new();
    if let Some(t) = target {
        let gamma = match sc.design {
            DesignSpec::Dbcd { gamma, .. } => gamma,
            _ => DBCDConfig::default().gamma,
        };
        for model in [VariabilityModel::Seu, VariabilityModel::Gdl, VariabilityModel::Dbcd] {
            variability.push(VariabilityRow {
                model,
                sigma2: table2_variability(model, t, p, Some(gamma))?,
            });
        }
        if p.len() == 2 {
            worked = worked_examples(p, gamma)?;
        }
    }
    Ok(AsymptReport {
        label: sc.label(),
        scenario: sc.to_config_string(),
        seed: sc.seed,
        p: p.to_vec(),
        analytic: analytic_reference(&sc.design, &sc.arms)?,
        lower_bound: target.map(|t| lower_bound(t, p)).transpose()?,
        variability,
        worked_examples: worked,
    })
}

fn matrix_rows(out: &mut Vec<(String, String)>, name: &str, m: &Matrix) {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out.push((format!("{name}[{i}][{j}]"), m[(i, j)].to_string()));
        }
    }
}

fn asympt_csv(r: &AsymptReport) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    if let Some(a) = &r.analytic {
        for (k, v) in a.v.iter().enumerate() {
            rows.push((format!("v[{k}]"), v.to_string()));
        }
        rows.push(("regime".into(), format!("{:?}", a.regime)));
        if let Some(s) = &a.sigma2 {
            matrix_rows(&mut rows, "sigma2", s);
        }
    }
    if let Some(lb) = &r.lower_bound {
        matrix_rows(&mut rows, "lower_bound", &lb.sigma);
    }
    for t in &r.variability {
        matrix_rows(&mut rows, &format!("variability.{:?}", t.model).to_lowercase(), &t.sigma2);
    }
    for w in &r.worked_examples {
        let t = w.target.name();
        rows.push((format!("dbcd.{t}.closed_form"), w.closed_form.to_string()));
        rows.push((format!("dbcd.{t}.general"), w.general.to_string()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["quantity", "value"])?;
    for (q, v) in rows {
        w.write_record([q, v])?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn asympt(args: &RunArgs) -> Result<()> {
    for sc in load_all(args)? {
        let report = asympt_report(&sc)?;
        let name = format!("asympt-{}", stem(&report.label));
        let j = json(&report);
        let c = asympt_csv(&report)?;
        write_file(&args.out_dir, &format!("{name}.json"), &j)?;
        write_file(&args.out_dir, &format!("{name}.csv"), &c)?;
        let mut out = std::io::stdout().lock();
        match args.format {
            Some(Format::Json) | None => out.write_all(&j)?,
            Some(Format::Csv) => out.write_all(&c)?,
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationFile<'a> {
    scenario: String,
    report: &'a StudyReport,
}

fn study_csv(reports: &[StudyReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r.csv_row())?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn summary(sc: &Scenario, r: &StudyReport) -> String {
    let mut s = format!(
        "{}  n={} R={} seed={}{}\n",
        sc.label(),
        sc.n,
        sc.replicates,
        sc.seed,
        if sc.delay.is_some() { "  (delayed)" } else { "" }
    );
    let v = r.analytic.as_ref().map(|a| a.v.clone());
    for (k, m) in r.mean_proportions.iter().enumerate() {
        s += &format!(
            "  arm {k}: N/n {m:.4} ± {:.4}   v {}\n",
            r.proportions_se[k],
            opt(v.as_ref().map(|v| v[k]))
        );
    }
    let sigma = r.analytic.as_ref().and_then(|a| a.scalar());
    s += &format!(
        "  n·Var(N1/n) {:.4} ± {:.4}   analytic {}   ratio {}   lower bound {}\n",
        r.scaled_variance[(0, 0)],
        r.scaled_variance_se[0],
        opt(sigma),
        opt(r.variance_ratio),
        opt(r.lower_bound.as_ref().map(|l| l.scalar()))
    );
    if let Some(note) = r.analytic.as_ref().and_then(|a| a.note.as_ref()) {
        s += &format!("  note: {note}\n");
    }
    if let Some(p) = r.power {
        s += &format!("  power {:.4} ± {:.4}   ", p.value, p.se);
    } else {
        s += "  ";
    }
    s += &format!(
        "failures {:.2} ± {:.2}\n",
        r.expected_failures.value, r.expected_failures.se
    );
    if let Some(d) = &r.delay {
        s += &format!(
            "  terminal pending {:.3} ± {:.3}   |S - S_obs|/√n {:.4} ± {:.4}\n",
            d.terminal_pending.value, d.terminal_pending.se, d.scaled_success_gap.value, d.scaled_success_gap.se
        );
    }
    s
}

fn run(args: &RunArgs) -> Result<Vec<(Scenario, StudyReport)>> {
    let scenarios = load_all(args)?;
    scenarios
        .into_iter()
        .map(|sc| {
            let r = run_study(&sc.sim_config())?;
            Ok((sc, r))
        })
        .collect()
}

pub fn simulate(args: &RunArgs) -> Result<()> {
    for (sc, r) in run(args)? {
        let name = stem(&sc.label());
        let j = json(&SimulationFile {
            scenario: sc.to_config_string(),
            report: &r,
        });
        let c = study_csv(std::slice::from_ref(&r))?;
        write_file(&args.out_dir, &format!("{name}.json"), &j)?;
        write_file(&args.out_dir, &format!("{name}.csv"), &c)?;
        let mut out = std::io::stdout().lock();
        match args.format {
            None => out.write_all(summary(&sc, &r).as_bytes())?,
            Some(Format::Json) => out.write_all(&j)?,
            Some(Format::Csv) => out.write_all(&c)?,
        }
    }
    Ok(())
}

fn table(rows: &[(Scenario, StudyReport)]) -> String {
    let header = ["scenario", "v_hat", "v", "sigma2_hat", "sigma2", "power", "failures"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|(sc, r)| {
            [
                sc.label(),
                format!("{:.4}", r.mean_proportions[0]),
                opt(r.analytic.as_ref().map(|a| a.v[0])),
                format!("{:.4}", r.scaled_variance[(0, 0)]),
                opt(r.analytic.as_ref().and_then(|a| a.scalar())),
                opt(r.power.map(|p| p.value)),
                format!("{:.2}", r.expected_failures.value),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                s += &format!("{c:<w$}", w = width[0]);
            } else {
                s += &format!("  {c:>w$}", w = width[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut s = line(header.to_vec());
    for row in &body {
        s += &line(row.iter().map(String::as_str).collect());
    }
    s
}

#[derive(Serialize)]
struct ComparisonFile<'a> {
    scenarios: Vec<String>,
    reports: Vec<&'a StudyReport>,
}

pub fn compare(args: &RunArgs) -> Result<()> {
    let rows = run(args)?;
    let reports: Vec<StudyReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    let j = json(&ComparisonFile {
        scenarios: rows.iter().map(|(sc, _)| sc.to_config_string()).collect(),
        reports: reports.iter().collect(),
    });
    let c = study_csv(&reports)?;
    write_file(&args.out_dir, "compare.json", &j)?;
    write_file(&args.out_dir, "compare.csv", &c)?;
    let mut out = std::io::stdout().lock();
    match args.format {
        None => out.write_all(table(&rows).as_bytes())?,
        Some(Format::Json) => out.write_all(&j)?,
        Some(Format::Csv) => out.write_all(&c)?,
    }
    Ok(())
}
