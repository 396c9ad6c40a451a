use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
# small enough to run in seconds
scale = 0.01
lm_sentences = 300
heldout_sentences = 50
hidden = 4
classifier_hidden = 4
epochs = 1
";

fn ftmkit(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ftmkit"));
    c.args(args);
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("cfg.txt");
    fs::write(&path, format!("{TINY}out = {}\n{extra}", dir.join("run").display())).unwrap();
    path
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

#[test]
fn usage_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(ftmkit(&[], &[]).status.code(), Some(2));
    assert_eq!(ftmkit(&["frobnicate", "--config", cfg], &[]).status.code(), Some(2));
    assert_eq!(ftmkit(&["eval"], &[]).status.code(), Some(2));
    let o = ftmkit(&["train-ftm", "--config", cfg, "--variant", "triple-lrnn"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("triple-lrnn"));
    assert_eq!(ftmkit(&["train-lm", "--config", cfg, "--variant", "both"], &[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.txt");
    assert_eq!(ftmkit(&["gen-data", "--config", missing.to_str().unwrap()], &[]).status.code(), Some(1));

    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "beam = wide\n").unwrap();
    let o = ftmkit(&["gen-data", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("beam"));

    let cfg = config(tmp.path(), "");
    let o = ftmkit(&["decode", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run `ftmkit gen-data` first"), "{}", stderr(&o));
}

#[test]
fn unwritable_output_leaves_no_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = config(tmp.path(), "");
    let out = blocker.join("run");
    let o = ftmkit(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.join("data/manifest.tsv").exists());
}

#[test]
fn gen_data_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&ftmkit(&["gen-data", "--config", config(d.path(), "").to_str().unwrap()], &[]));
    }
    // config.txt records the output directory, which is the one thing allowed to differ
    let strip_out = |t: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        t.into_iter()
            .map(|(p, b)| {
                if p != "config.txt" {
                    return (p, b);
                }
                let s = String::from_utf8(b).unwrap();
                let kept: Vec<&str> = s.lines().filter(|l| !l.starts_with("out =")).collect();
                (p, kept.join("\n").into_bytes())
            })
            .collect()
    };
    let ta = strip_out(tree(&a.path().join("run")));
    let tb = strip_out(tree(&b.path().join("run")));
    assert!(ta.iter().any(|(p, _)| p == "data/manifest.tsv"));
    assert!(ta.iter().any(|(p, _)| p == "config.txt"));
    assert_eq!(ta, tb);
}

#[test]
fn stages_run_in_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "variants = base-single, chatter-single, ratio\n");
    let cfg = cfg.to_str().unwrap();
    let run = tmp.path().join("run");

    let o = ftmkit(&["gen-data", "--config", cfg], &[]);
    ok(&o);
    let manifest = fs::read_to_string(run.join("data/manifest.tsv")).unwrap();
    for split in ["train", "cv", "dev", "eval"] {
        assert!(manifest.lines().any(|l| l.split('\t').nth(2) == Some(split)));
    }

    let o = ftmkit(&["train-lm", "--config", cfg], &[]);
    ok(&o);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.ends_with("\ttrue")).count(), 2, "{out}");

    let lm_before = fs::read(run.join("lm/base.nglm")).unwrap();
    ok(&ftmkit(&["train-lm", "--config", cfg, "--variant", "base"], &[]));
    assert_eq!(fs::read(run.join("lm/base.nglm")).unwrap(), lm_before);

    ok(&ftmkit(&["train-ftm", "--config", cfg], &[]));
    for v in ["base-single", "chatter-single", "ratio"] {
        assert!(run.join(format!("models/{v}.ckpt")).exists());
    }

    ok(&ftmkit(&["eval", "--config", cfg], &[]));
    let summary = fs::read_to_string(run.join("eval/summary.csv")).unwrap();
    assert!(summary.starts_with("classifier,ft_at_fs_0.4pct,auc\n"));
    assert_eq!(summary.lines().count(), 4);
    assert!(run.join("eval/error_matrix.csv").exists());
    assert!(run.join("eval/det.svg").exists());

    ok(&ftmkit(&["eval", "--config", cfg], &[]));
    assert_eq!(fs::read_to_string(run.join("eval/summary.csv")).unwrap(), summary);

    ok(&ftmkit(&["report", "--config", cfg], &[]));
    let md = fs::read_to_string(run.join("report.md")).unwrap();
    assert!(md.contains("chatter-single vs base-single"));
    ok(&ftmkit(&["report", "--config", cfg], &[]));
    assert_eq!(fs::read_to_string(run.join("report.md")).unwrap(), md);
}

#[test]
fn thread_count_does_not_change_checkpoints() {
    let mut ckpts = Vec::new();
    for threads in ["1", "3"] {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(tmp.path(), "");
        let cfg = cfg.to_str().unwrap();
        let env = [("FTMKIT_THREADS", threads)];
        ok(&ftmkit(&["gen-data", "--config", cfg], &env));
        ok(&ftmkit(&["train-ftm", "--config", cfg, "--variant", "parallel-full-random"], &env));
        ckpts.push(fs::read(tmp.path().join("run/models/parallel-full-random.ckpt")).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);
}

#[test]
fn report_names_the_missing_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    ok(&ftmkit(&["gen-data", "--config", cfg], &[]));
    ok(&ftmkit(&["report", "--config", cfg], &[]));
    let md = fs::read_to_string(tmp.path().join("run/report.md")).unwrap();
    assert!(md.contains("ftmkit train-ftm --variant parallel-full-random"));
    assert!(md.contains("ftmkit eval"));
    assert!(!md.contains("ftmkit gen-data"));
}
