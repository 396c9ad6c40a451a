//! Markdown summary of a run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{read_file, PipelineError, Result, RunConfig, Variant};

/// One row of `eval/summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub classifier: String,
    pub ft_at_fs: f64,
    pub auc: f64,
}

pub fn parse_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = read_file(path)?;
    let bad = |line: usize, msg: &str| PipelineError::Parse { path: path.to_path_buf(), line, msg: msg.to_string() };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(i + 1, "expected 3 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        rows.push(SummaryRow { classifier: f[0].to_string(), ft_at_fs: num(f[1])?, auc: num(f[2])? });
    }
    Ok(rows)
}

/// Relative FT reduction of `new` over `old`, in percent. Undefined when
/// `old` is 0.
pub fn relative_reduction(old: f64, new: f64) -> Option<f64> {
    (old > 0.0).then(|| 100.0 * (old - new) / old)
}

fn fmt_reduction(r: Option<f64>) -> String {
    r.map_or("n/a".to_string(), |r| format!("{r:.2}%"))
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn table(s: &mut String, header: &[&str], rows: &[Vec<String>]) {
    writeln!(s, "| {} |", header.join(" | ")).unwrap();
    writeln!(s, "|{}", header.iter().map(|_| "---|").collect::<String>()).unwrap();
    for r in rows {
        writeln!(s, "| {} |", r.join(" | ")).unwrap();
    }
    s.push('\n');
}

/// Stages whose outputs are absent, as `(artifact, command)`.
fn missing(dir: &Path, cfg: &RunConfig) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut need = |rel: &str, cmd: String| {
        if !dir.join(rel).exists() {
            out.push((rel.to_string(), cmd));
        }
    };
    need("config.txt", "ftmkit gen-data".into());
    need("data/manifest.tsv", "ftmkit gen-data".into());
    need("lm/base.nglm", "ftmkit train-lm".into());
    need("lm/chatter.nglm", "ftmkit train-lm".into());
    for v in &cfg.variants {
        need(&format!("models/{v}.ckpt"), format!("ftmkit train-ftm --variant {v}"));
    }
    need("eval/summary.csv", "ftmkit eval".into());
    out
}

fn read_tsv(path: &PathBuf) -> Option<Vec<Vec<String>>> {
    let text = read_file(path).ok()?;
    Some(text.lines().skip(1).map(|l| l.split('\t').map(String::from).collect()).collect())
}

/// Builds `report.md` text from whatever artifacts exist. A pure function of
/// the directory contents.
pub fn report(dir: &Path) -> Result<String> {
    let cfg = match read_file(&dir.join("config.txt")) {
        Ok(t) => RunConfig::from_text(&t)?,
        Err(_) => RunConfig::default(),
    };
    let mut s = String::from("# False trigger mitigation run\n\n");
    writeln!(s, "Seed {}, scale {}, H = {}, {} epochs.\n", cfg.seed, cfg.scale, cfg.hidden, cfg.epochs).unwrap();

    if let Ok(text) = read_file(&dir.join("data/manifest.tsv")) {
        let mut counts = std::collections::BTreeMap::<String, (usize, usize)>::new();
        for line in text.lines() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() >= 3 {
                let e = counts.entry(f[2].to_string()).or_default();
                if f[1] == "TT" {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
        s.push_str("## Data\n\n");
        let rows: Vec<Vec<String>> = ["train", "cv", "dev", "eval"]
            .iter()
            .filter_map(|sp| counts.get(*sp).map(|(tt, ft)| vec![sp.to_string(), tt.to_string(), ft.to_string()]))
            .collect();
        table(&mut s, &["split", "TT", "FT"], &rows);
    }

    let lm_rows: Vec<Vec<String>> = ["base", "chatter"]
        .iter()
        .filter_map(|t| read_tsv(&dir.join(format!("lm/perplexity_{t}.tsv"))))
        .flatten()
        .map(|r| r.iter().map(|x| x.parse::<f64>().map_or(x.clone(), |v| format!("{v:.2}"))).collect())
        .collect();
    if !lm_rows.is_empty() {
        s.push_str("## Language models\n\nHeld-out perplexity.\n\n");
        table(&mut s, &["model", "in-domain", "chatter"], &lm_rows);
    }

    let summary_path = dir.join("eval/summary.csv");
    if summary_path.exists() {
        let rows = parse_summary(&summary_path)?;
        let ft_of = |name: &str| rows.iter().find(|r| r.classifier == name).map(|r| r.ft_at_fs);
        let base = ft_of("base-single");
        s.push_str("## False trigger rate at FS = 0.4% (eval)\n\n");
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let desc = r.classifier.parse::<Variant>().map(|v| v.description()).unwrap_or("");
                vec![
                    r.classifier.clone(),
                    desc.to_string(),
                    pct(r.ft_at_fs),
                    format!("{:.6}", r.auc),
                    base.map_or("".into(), |b| fmt_reduction(relative_reduction(b, r.ft_at_fs))),
                ]
            })
            .collect();
        table(&mut s, &["classifier", "model", "FT", "AUC (FS < 1%)", "rel. FT reduction vs base-single"], &body);

        let pairs = [
            ("chatter-single", "base-single"),
            ("parallel-full-random", "chatter-single"),
            ("parallel-full-random", "base-single"),
            ("parallel-full-pretrained", "parallel-full-random"),
        ];
        let mut lines = String::new();
        for (new, old) in pairs {
            if let (Some(n), Some(o)) = (ft_of(new), ft_of(old)) {
                writeln!(lines, "- {new} vs {old}: FT {} -> {}, relative reduction {}", pct(o), pct(n), fmt_reduction(relative_reduction(o, n)))
                    .unwrap();
            }
        }
        if !lines.is_empty() {
            s.push_str("### Relative reductions\n\n");
            s.push_str(&lines);
            s.push('\n');
        }
    }

    if let Ok(text) = read_file(&dir.join("eval/error_matrix.csv")) {
        s.push_str("## Error analysis (eval)\n\nPer true class, share of samples by correctness of the two single models.\n\n");
        let rows: Vec<Vec<String>> = text
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let mut r = vec![f[0].to_string()];
                r.extend(f[1..].iter().map(|x| x.parse::<f64>().map_or(x.to_string(), |v| format!("{v:.2}%"))));
                r
            })
            .collect();
        table(&mut s, &["class", "base ✓ chatter ✓", "base ✓ chatter ✗", "base ✗ chatter ✓", "base ✗ chatter ✗"], &rows);
    }

    let mut epochs = Vec::new();
    for v in Variant::ALL {
        if let Some(log) = read_tsv(&dir.join(format!("models/{v}.epochs.tsv"))) {
            if let Some(sel) = log.iter().find(|r| r.last().map(String::as_str) == Some("1")) {
                epochs.push(vec![v.to_string(), sel[0].clone(), log.len().to_string(), sel[4].clone()]);
            }
        }
    }
    if !epochs.is_empty() {
        s.push_str("## Training\n\nCheckpoint chosen by the lowest cv FT at the target FS.\n\n");
        table(&mut s, &["variant", "selected epoch", "epochs", "cv FT"], &epochs);
    }

    let miss = missing(dir, &cfg);
    if !miss.is_empty() {
        s.push_str("## Missing artifacts\n\n");
        for (what, cmd) in miss {
            writeln!(s, "- `{what}`: run `{cmd}`").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}
