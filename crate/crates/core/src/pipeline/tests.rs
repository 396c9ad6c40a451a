use std::fs;

use super::*;

fn tiny(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        scale: 0.01,
        lm_sentences: 300,
        heldout_sentences: 50,
        hidden: 4,
        classifier_hidden: 4,
        epochs: 2,
        ..RunConfig::default()
    }
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn stages_before_their_inputs_report_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let run = Run::new(tiny(1), tmp.path());
    let err = run.decode().unwrap_err().to_string();
    assert!(err.contains("ftmkit gen-data"), "{err}");
    let err = run.train_ftm(Variant::BaseSingle).unwrap_err().to_string();
    assert!(err.contains("ftmkit gen-data"), "{err}");
    let err = run.eval().unwrap_err().to_string();
    assert!(err.contains("ftmkit train-ftm"), "{err}");
}

#[test]
fn merge_variant_without_singles_asks_for_them() {
    let tmp = tempfile::tempdir().unwrap();
    let run = Run::new(tiny(2), tmp.path());
    run.gen_data().unwrap();
    let err = run.train_ftm(Variant::ScoreMerge).unwrap_err().to_string();
    assert!(err.contains("train-ftm --variant base-single"), "{err}");
}

#[test]
fn full_run_is_reproducible_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let rows = Run::new(tiny(3), a.path()).run_all().unwrap();
    Run::new(tiny(3), b.path()).run_all().unwrap();
    assert_eq!(rows.len(), Variant::ALL.len());
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.ft_at_fs));
        assert!(r.auc >= 0.0 && r.auc <= AUC_FS_MAX + 1e-12);
    }
    let mut files = vec!["data/manifest.tsv".to_string(), "eval/summary.csv".into(), "eval/error_matrix.csv".into()];
    files.extend(Variant::ALL.iter().map(|v| format!("models/{v}.ckpt")));
    files.extend(Variant::ALL.iter().map(|v| format!("eval/scores/{v}.tsv")));
    for f in &files {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
    let summary = report::parse_summary(&a.path().join("eval/summary.csv")).unwrap();
    assert_eq!(summary.len(), rows.len());

    // every split is present and ids are unique
    let manifest = read(a.path(), "data/manifest.tsv");
    let mut ids = std::collections::HashSet::new();
    for split in Split::ALL {
        assert!(manifest.lines().any(|l| l.split('\t').nth(2) == Some(split.as_str())));
    }
    for l in manifest.lines() {
        assert!(ids.insert(l.split('\t').next().unwrap().to_string()));
    }

    // report regenerates to the same text
    let md = read(a.path(), "report.md");
    assert_eq!(report(a.path()).unwrap(), md);
    assert!(!md.contains("Missing artifacts"));
    assert!(md.contains("base-single"));
}

#[test]
fn report_lists_missing_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let md = report(tmp.path()).unwrap();
    assert!(md.contains("run `ftmkit gen-data`"));
    assert!(md.contains("run `ftmkit train-ftm --variant moe`"));
    assert!(md.contains("run `ftmkit eval`"));
}

#[test]
fn relative_reduction_is_a_percentage() {
    assert_eq!(report::relative_reduction(0.2, 0.1), Some(50.0));
    assert_eq!(report::relative_reduction(0.1935, 0.1193).map(|r| (r * 100.0).round() / 100.0), Some(38.35));
    assert_eq!(report::relative_reduction(0.0, 0.1), None);
}
