use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SCHEMA: &str = r#"
labels = ["diagnosis"]

[[covariates]]
name = "age"
kind = "continuous"
unit = "years"

[[covariates]]
name = "sex"
kind = "categorical"
levels = ["M", "F"]
"#;

fn harmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harmon"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = harmon(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Reference cohort and the same subjects measured at a distorted site.
fn cohorts(dir: &Path) {
    write(dir, "schema.toml", SCHEMA);
    let population =
        "[population]\nsite_id = \"camcan\"\nn_subjects = 120\nn_features = 6\nseed = 9\n";
    write(dir, "ref.toml", population);
    write(
        dir,
        "mov.toml",
        &format!(
            "{population}\n[bias]\nsite_id = \"modified\"\nadditive_factor = 0.8\nslope_factor = 1.0\nnoise_factor = 1.1\n"
        ),
    );
    ok(&[
        "synth",
        "--spec",
        &p(dir, "ref.toml"),
        "--out",
        &p(dir, "ref.csv"),
    ]);
    ok(&[
        "synth",
        "--spec",
        &p(dir, "mov.toml"),
        "--out",
        &p(dir, "mov.csv"),
        "--latent",
        &p(dir, "latent.csv"),
    ]);
}

#[test]
fn synth_fit_apply_metric_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohorts(d);
    let header = fs::read_to_string(d.join("mov.csv")).unwrap();
    assert!(header.starts_with("subject_id,site,age,sex,diagnosis,feature_01,"));
    assert_eq!(
        fs::read_to_string(d.join("latent.csv"))
            .unwrap()
            .lines()
            .count(),
        121
    );

    ok(&[
        "fit",
        "--reference",
        &p(d, "ref.csv"),
        "--moving",
        &p(d, "mov.csv"),
        "--schema",
        &p(d, "schema.toml"),
        "--out",
        &p(d, "model.toml"),
    ]);
    ok(&[
        "apply",
        "--model",
        &p(d, "model.toml"),
        "--in",
        &p(d, "mov.csv"),
        "--out",
        &p(d, "harm.csv"),
    ]);
    ok(&[
        "metric",
        "--model",
        &p(d, "model.toml"),
        "--reference",
        &p(d, "ref.csv"),
        "--moving",
        &p(d, "mov.csv"),
        "--truth",
        &p(d, "ref.csv"),
        "--out",
        &p(d, "metric.csv"),
    ]);

    let harmonized = fs::read_to_string(d.join("harm.csv")).unwrap();
    assert_eq!(harmonized.lines().count(), 121);
    assert!(harmonized
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("modified")));

    let metric = fs::read_to_string(d.join("metric.csv")).unwrap();
    let mut lines = metric.lines();
    assert_eq!(lines.next(), Some("feature,bd_before,bd_after,mad"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 7);
    for r in &rows {
        assert!(r[1] < r[0] && r[1] < 1e-2, "{r:?}");
        assert!(r[2] < 2e-5, "{r:?}");
    }
}

#[test]
fn reference_rows_pass_through_apply() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohorts(d);
    ok(&[
        "fit",
        "--reference",
        &p(d, "ref.csv"),
        "--moving",
        &p(d, "mov.csv"),
        "--schema",
        &p(d, "schema.toml"),
        "--out",
        &p(d, "model.toml"),
    ]);
    ok(&[
        "apply",
        "--model",
        &p(d, "model.toml"),
        "--in",
        &p(d, "ref.csv"),
        "--out",
        &p(d, "same.csv"),
    ]);
    assert_eq!(
        fs::read(d.join("same.csv")).unwrap(),
        fs::read(d.join("ref.csv")).unwrap()
    );
}

#[test]
fn fit_filter_restricts_estimation_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "schema.toml", SCHEMA);
    write(
        d,
        "ref.toml",
        "[population]\nsite_id = \"r\"\nn_subjects = 80\nn_features = 4\nseed = 1\n",
    );
    write(
        d,
        "mov.toml",
        "[population]\nsite_id = \"r\"\nn_subjects = 80\nn_features = 4\nseed = 2\n\n\
         [bias]\nsite_id = \"m\"\nadditive_factor = 1.0\nslope_factor = 1.0\nnoise_factor = 1.0\n\n\
         [pathology]\nfraction = 0.5\nadditive_factor = 1.4\nmultiplicative_factor = 1.4\nseed = 3\n",
    );
    ok(&[
        "synth",
        "--spec",
        &p(d, "ref.toml"),
        "--out",
        &p(d, "ref.csv"),
    ]);
    ok(&[
        "synth",
        "--spec",
        &p(d, "mov.toml"),
        "--out",
        &p(d, "mov.csv"),
    ]);
    let fit = |out: &str, filter: Option<&str>| {
        let (r, m, s, o) = (
            p(d, "ref.csv"),
            p(d, "mov.csv"),
            p(d, "schema.toml"),
            p(d, out),
        );
        let mut args = vec![
            "fit",
            "--reference",
            &r,
            "--moving",
            &m,
            "--schema",
            &s,
            "--out",
            &o,
        ];
        if let Some(f) = filter {
            args.extend(["--fit-filter", f]);
        }
        ok(&args);
        fs::read_to_string(d.join(out)).unwrap()
    };
    let all = fit("all.toml", None);
    let hc = fit("hc.toml", Some("diagnosis=HC"));
    assert_ne!(all, hc);
    assert!(hc.contains("n_moving = 40"), "{hc}");
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohorts(d);
    write(
        d,
        "bad.csv",
        "subject_id,site,age,sex,diagnosis,feature_01\ns1,a,40,X,HC,1.0\n",
    );

    let missing = harmon(&[
        "apply",
        "--model",
        &p(d, "nope.toml"),
        "--in",
        &p(d, "mov.csv"),
        "--out",
        &p(d, "o.csv"),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_level = harmon(&[
        "fit",
        "--reference",
        &p(d, "bad.csv"),
        "--moving",
        &p(d, "mov.csv"),
        "--schema",
        &p(d, "schema.toml"),
        "--out",
        &p(d, "m.toml"),
    ]);
    assert_eq!(bad_level.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_level.stderr).contains('X'));

    let unknown = harmon(&["experiment", "--id", "exp9", "--out", &p(d, "r.csv")]);
    assert_eq!(unknown.status.code(), Some(2));

    let bad_filter = harmon(&[
        "fit",
        "--reference",
        &p(d, "ref.csv"),
        "--moving",
        &p(d, "mov.csv"),
        "--schema",
        &p(d, "schema.toml"),
        "--out",
        &p(d, "m.toml"),
        "--fit-filter",
        "diagnosis",
    ]);
    assert_eq!(bad_filter.status.code(), Some(2));
}

#[test]
fn confounded_design_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "schema.toml", SCHEMA);
    let male_only = |site: &str, seed: u64| {
        format!(
            "[population]\nsite_id = \"{site}\"\nn_subjects = 30\nn_features = 3\nseed = {seed}\nfemale_fraction = 0.0\n"
        )
    };
    write(d, "r.toml", &male_only("r", 1));
    write(d, "m.toml", &male_only("m", 2));
    ok(&["synth", "--spec", &p(d, "r.toml"), "--out", &p(d, "r.csv")]);
    ok(&["synth", "--spec", &p(d, "m.toml"), "--out", &p(d, "m.csv")]);
    let out = harmon(&[
        "fit",
        "--reference",
        &p(d, "r.csv"),
        "--moving",
        &p(d, "m.csv"),
        "--schema",
        &p(d, "schema.toml"),
        "--out",
        &p(d, "model.toml"),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("sex"));
}

#[test]
fn experiment_writes_report_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "cfg.toml", "[sample_size]\nsizes = [4, 16]\n");
    ok(&[
        "experiment",
        "--id",
        "exp2",
        "--config",
        &p(d, "cfg.toml"),
        "--reps",
        "2",
        "--seed",
        "5",
        "--out",
        &p(d, "r.csv"),
        "--plot-data",
        &p(d, "r.dat"),
    ]);
    let report = fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 4 + 2);
    assert!(report
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("measurement,sample_size,0,N=4,0,"));
    assert_eq!(
        fs::read_to_string(d.join("r.dat")).unwrap().lines().count(),
        3
    );
}
