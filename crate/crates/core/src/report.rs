//! Learning-curve aggregation across runs, %AUC against the oracle run, and
//! static SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::agent::{AttentionPolicy, Switch};
use crate::config::Config;
use crate::probe::mean_stderr;
use crate::train::{auc_percent, read_metrics};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {msg}")]
    Run { path: PathBuf, msg: String },
    #[error("runs of {task}/{method} use different evaluation grids")]
    GridMismatch { task: String, method: String },
    #[error("no runs given")]
    Empty,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One loaded run directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub task: String,
    pub method: String,
    pub seed: u64,
    /// `(step, eval success rate)`
    pub curve: Vec<(f64, f64)>,
}

/// Display name of a configuration's method, e.g. `load` or
/// `load+policy_att=none`.
pub fn method_name(c: &Config) -> String {
    let mut m = c.net.aux.name().to_string();
    if c.net.attention_policy != AttentionPolicy::Full {
        m.push_str(&format!("+policy_att={}", c.net.attention_policy.name()));
    }
    if c.net.attention_model == Switch::Off {
        m.push_str("+model_att=off");
    }
    m
}

pub fn load_run(dir: &Path) -> Result<Run, ReportError> {
    let err = |msg: String| ReportError::Run {
        path: dir.to_path_buf(),
        msg,
    };
    let cfg = Config::load(&dir.join("config.json")).map_err(|e| err(e.to_string()))?;
    let rows = read_metrics(&dir.join("metrics.csv")).map_err(|e| err(e.to_string()))?;
    if rows.is_empty() {
        return Err(err("metrics.csv has no rows".into()));
    }
    Ok(Run {
        dir: dir.to_path_buf(),
        task: cfg.task.clone(),
        method: method_name(&cfg),
        seed: cfg.seed,
        curve: rows.iter().map(|r| (r.step as f64, r.eval_sr)).collect(),
    })
}

/// Mean and standard error across seeds at each grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub seeds: usize,
}

impl Band {
    pub fn mean_curve(&self) -> Vec<(f64, f64)> {
        self.steps.iter().copied().zip(self.mean.iter().copied()).collect()
    }
}

pub fn band(curves: &[&[(f64, f64)]]) -> Option<Band> {
    let first = curves.first()?;
    if curves
        .iter()
        .any(|c| c.len() != first.len() || c.iter().zip(first.iter()).any(|(a, b)| a.0 != b.0))
    {
        return None;
    }
    let mut out = Band {
        steps: first.iter().map(|p| p.0).collect(),
        mean: Vec::new(),
        stderr: Vec::new(),
        seeds: curves.len(),
    };
    for i in 0..first.len() {
        let v: Vec<f64> = curves.iter().map(|c| c[i].1).collect();
        let (m, se) = mean_stderr(&v);
        out.mean.push(m);
        out.stderr.push(se);
    }
    Some(out)
}

/// Aggregated report: bands per task and method plus %AUC against the
/// oracle method of the same task.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub bands: BTreeMap<String, BTreeMap<String, Band>>,
    pub auc: BTreeMap<String, BTreeMap<String, f64>>,
}

pub const ORACLE_METHOD: &str = "oracle";

pub fn build_report(runs: &[Run]) -> Result<Report, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut grouped: BTreeMap<(String, String), Vec<&Run>> = BTreeMap::new();
    for r in runs {
        grouped
            .entry((r.task.clone(), r.method.clone()))
            .or_default()
            .push(r);
    }
    let mut rep = Report::default();
    for ((task, method), rs) in grouped {
        let curves: Vec<&[(f64, f64)]> = rs.iter().map(|r| r.curve.as_slice()).collect();
        let b = band(&curves).ok_or_else(|| ReportError::GridMismatch {
            task: task.clone(),
            method: method.clone(),
        })?;
        rep.bands.entry(task).or_default().insert(method, b);
    }
    for (task, methods) in &rep.bands {
        let Some(oracle) = methods.get(ORACLE_METHOD) else {
            continue;
        };
        let oc = oracle.mean_curve();
        for (m, b) in methods {
            match auc_percent(&b.mean_curve(), &oc) {
                Ok(v) => {
                    rep.auc.entry(task.clone()).or_default().insert(m.clone(), v);
                }
                Err(crate::train::AucError::GridMismatch) => {
                    return Err(ReportError::GridMismatch {
                        task: task.clone(),
                        method: m.clone(),
                    })
                }
                Err(e) => log::warn!("{task}/{m}: {e}; no %AUC"),
            }
        }
    }
    Ok(rep)
}

impl Report {
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("task,method,seeds,step,mean,stderr\n");
        for (task, methods) in &self.bands {
            for (m, b) in methods {
                for i in 0..b.steps.len() {
                    let _ = writeln!(
                        s,
                        "{task},{m},{},{},{},{}",
                        b.seeds, b.steps[i], b.mean[i], b.stderr[i]
                    );
                }
            }
        }
        s
    }

    pub fn auc_csv(&self) -> String {
        let mut s = String::from("task,method,auc_percent\n");
        for (task, methods) in &self.auc {
            for (m, v) in methods {
                let _ = writeln!(s, "{task},{m},{v}");
            }
        }
        s
    }

    /// Writes `curves.csv`, `auc.csv`, `curves_<task>.svg` and `auc.svg`.
    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
        std::fs::create_dir_all(out)?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<(), ReportError> {
            let p = out.join(name);
            std::fs::write(&p, body)?;
            written.push(p);
            Ok(())
        };
        put("curves.csv".into(), self.curves_csv())?;
        put("auc.csv".into(), self.auc_csv())?;
        for (task, methods) in &self.bands {
            put(format!("curves_{task}.svg"), curves_svg(task, methods))?;
        }
        if !self.auc.is_empty() {
            put("auc.svg".into(), auc_svg(&self.auc))?;
        }
        Ok(written)
    }
}

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn color(method: &str) -> &'static str {
    match method {
        "load" => PALETTE[0],
        "none" => PALETTE[1],
        "oracle" => PALETTE[2],
        "ocn" => PALETTE[3],
        "cobra" => PALETTE[4],
        _ => {
            let h = method.bytes().fold(0usize, |a, b| a.wrapping_mul(31).wrapping_add(b as usize));
            PALETTE[5 + h % 3]
        }
    }
}

/// Success rate against environment steps; shaded band is mean ± stderr,
/// drawn only with more than one seed.
pub fn curves_svg(task: &str, methods: &BTreeMap<String, Band>) -> String {
    let (w, h, l, r, t, b) = (640.0, 400.0, 60.0, 150.0, 40.0, 50.0);
    let max_step = methods
        .values()
        .flat_map(|b| b.steps.iter().copied())
        .fold(1.0f64, f64::max);
    let x = |s: f64| l + s / max_step * (w - l - r);
    let y = |v: f64| t + (1.0 - v.clamp(0.0, 1.0)) * (h - t - b);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="15">{task}</text>"#, l);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{l}" x2="{x2}" y1="{yv}" y2="{yv}" stroke="#ddd"/><text x="{tx}" y="{ty}" text-anchor="end">{v:.2}</text>"##,
            x2 = w - r,
            yv = y(v),
            tx = l - 6.0,
            ty = y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">environment steps (max {max_step})</text>"#,
        (l + w - r) / 2.0,
        h - 14.0
    );
    for (k, (m, band)) in methods.iter().enumerate() {
        let c = color(m);
        if band.seeds > 1 {
            let mut pts: Vec<String> = band
                .steps
                .iter()
                .zip(band.mean.iter().zip(&band.stderr))
                .map(|(&st, (&mu, &se))| format!("{:.2},{:.2}", x(st), y(mu + se)))
                .collect();
            for i in (0..band.steps.len()).rev() {
                pts.push(format!(
                    "{:.2},{:.2}",
                    x(band.steps[i]),
                    y(band.mean[i] - band.stderr[i])
                ));
            }
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{c}" fill-opacity="0.2" stroke="none" class="band"/>"#,
                pts.join(" ")
            );
        }
        let line: Vec<String> = band
            .steps
            .iter()
            .zip(&band.mean)
            .map(|(&st, &mu)| format!("{:.2},{:.2}", x(st), y(mu)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = t + 16.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="3" fill="{c}"/><text x="{}" y="{}">{m} (n={})</text>"#,
            w - r + 10.0,
            ly - 4.0,
            w - r + 26.0,
            ly,
            band.seeds
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of %AUC relative to the oracle run, one group per task.
pub fn auc_svg(auc: &BTreeMap<String, BTreeMap<String, f64>>) -> String {
    let methods: Vec<&String> = {
        let mut v: Vec<&String> = auc.values().flat_map(|m| m.keys()).collect();
        v.sort();
        v.dedup();
        v
    };
    let group = (methods.len() as f64 * 18.0 + 20.0).max(60.0);
    let (l, t, b) = (60.0, 40.0, 70.0);
    let w = l + group * auc.len() as f64 + 160.0;
    let h = 360.0;
    let top = auc
        .values()
        .flat_map(|m| m.values().copied())
        .fold(100.0f64, f64::max);
    let y = |v: f64| t + (1.0 - v.max(0.0) / top) * (h - t - b);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{l}" y="24" font-size="15">% of oracle AUC</text>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{l}" x2="{x2}" y1="{yv}" y2="{yv}" stroke="#999" stroke-dasharray="4"/>"##,
        x2 = w - 160.0,
        yv = y(100.0)
    );
    for (g, (task, vals)) in auc.iter().enumerate() {
        let gx = l + g as f64 * group + 10.0;
        for (k, m) in methods.iter().enumerate() {
            if let Some(&v) = vals.get(*m) {
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="16" height="{:.2}" fill="{}"><title>{task} {m}: {v:.1}</title></rect>"#,
                    gx + 18.0 * k as f64,
                    y(v),
                    y(0.0) - y(v),
                    color(m)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{gx:.2}" y="{ty}" transform="rotate(30 {gx:.2} {ty})">{task}</text>"#,
            ty = h - b + 16.0
        );
    }
    for (k, m) in methods.iter().enumerate() {
        let ly = t + 16.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="8" fill="{}"/><text x="{}" y="{}">{m}</text>"#,
            w - 150.0,
            ly - 8.0,
            color(m),
            w - 134.0,
            ly
        );
    }
    s.push_str("</svg>\n");
    s
}
