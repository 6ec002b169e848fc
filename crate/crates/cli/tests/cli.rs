use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{ImageBuffer, Luma, Rgb};

const KINDS: [&str; 5] = ["geometric", "photometric", "feature", "benchmark", "information"];

fn tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests")
}

fn config(name: &str) -> PathBuf {
    tests_dir().join("configs").join(format!("{name}.toml"))
}

fn mvcov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvcov")).args(args).output().unwrap()
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mvcov(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Header plus the distinct (experiment, metric) pairs of a report.
fn schema(report: &str) -> Vec<String> {
    let mut lines = report.lines();
    let header = lines.next().unwrap().to_string();
    let pairs: BTreeSet<String> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 4, "{l}");
            format!("{},{}", f[0], f[2])
        })
        .collect();
    std::iter::once(header).chain(pairs).collect()
}

#[test]
fn report_schema_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in KINDS {
        let out = tmp.path().join(kind);
        let o = run(&config(kind), &out, &[]);
        assert_eq!(code(&o), 0, "{kind}: {}", stderr(&o));
        let report = fs::read_to_string(out.join("report.csv")).unwrap();
        let golden = fs::read_to_string(tests_dir().join("golden").join(format!("{kind}.txt"))).unwrap();
        assert_eq!(schema(&report), golden.lines().map(String::from).collect::<Vec<_>>(), "{kind}");
        for file in ["config.resolved", "summary.txt"] {
            assert!(out.join(file).is_file(), "{kind}: {file}");
        }
        let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
        assert!(summary.ends_with("result: PASS\n"), "{summary}");
    }
}

#[test]
fn resolved_config_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    assert_eq!(code(&run(&config("information"), &first, &["--seed", "4"])), 0);
    let resolved = first.join("config.resolved");
    let second = tmp.path().join("second");
    assert_eq!(code(&run(&resolved, &second, &[])), 0);
    assert_eq!(fs::read(first.join("report.csv")).unwrap(), fs::read(second.join("report.csv")).unwrap());
    let text = fs::read_to_string(second.join("config.resolved")).unwrap();
    assert!(text.contains("seed = 4"));
}

#[test]
fn reports_do_not_depend_on_the_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let reports: Vec<Vec<u8>> = ["1", "3", "0"]
        .iter()
        .map(|t| {
            let out = tmp.path().join(t);
            assert_eq!(code(&run(&config("benchmark"), &out, &["--threads", t])), 0);
            fs::read(out.join("report.csv")).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn seeds_change_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run(&config("photometric"), &a, &["--seed", "1"])), 0);
    assert_eq!(code(&run(&config("photometric"), &b, &["--seed", "2"])), 0);
    assert_ne!(fs::read(a.join("report.csv")).unwrap(), fs::read(b.join("report.csv")).unwrap());
}

#[test]
fn missed_tolerance_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("strict.toml");
    fs::write(&cfg, "[experiment]\nkind = \"validate-geometric\"\n[scene]\nconfigurations = 10\n[validation]\ndraws = 500\ntolerance = 0.0\n").unwrap();
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("FAIL geometric covariance"));
    assert!(out.join("report.csv").is_file());
}

#[test]
fn malformed_configs_exit_with_one_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax", "[experiment\nkind = \"ba-benchmark\"\n"),
        ("unknown_key", "[experiment]\nkind = \"ba-benchmark\"\n[estimator]\nweigting = \"model\"\n"),
        ("unknown_section", "[experiment]\nkind = \"ba-benchmark\"\n[plots]\nshow = true\n"),
        ("unknown_kind", "[experiment]\nkind = \"validate-everything\"\n"),
        ("no_kind", "[scene]\ndepth = 2.0\n"),
        ("wrong_type", "[experiment]\nkind = \"ba-benchmark\"\nseeds = \"twenty\"\n"),
        ("bad_value", "[experiment]\nkind = \"ba-benchmark\"\n[dataset.feature]\nviews = 1\n"),
        ("missing_path", "[experiment]\nkind = \"ba-benchmark\"\n[dataset]\nsequence = \"not/here\"\n"),
    ];
    for (name, text) in cases {
        let cfg = tmp.path().join(format!("{name}.toml"));
        fs::write(&cfg, text).unwrap();
        let out = tmp.path().join(format!("out_{name}"));
        for cmd in ["run", "validate"] {
            let o = mvcov(&[cmd, cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            assert_eq!(code(&o), 1, "{name} {cmd}");
            assert!(stderr(&o).starts_with("error:"), "{name}: {}", stderr(&o));
        }
        assert!(!out.exists(), "{name} left outputs behind");
    }
    let o = mvcov(&["run", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn validate_prints_the_resolved_config_without_running() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = mvcov(&["validate", config("benchmark").to_str().unwrap(), "--out", out.to_str().unwrap(), "--weighting", "uniform"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("weighting = \"uniform\""));
    assert!(text.contains("seeds = 2"));
    assert!(!out.exists());
    let resolved = tmp.path().join("resolved.toml");
    fs::write(&resolved, &text).unwrap();
    assert_eq!(code(&mvcov(&["validate", resolved.to_str().unwrap()])), 0);
}

#[test]
fn info_reports_a_point_gain() {
    let cfg = config("information");
    let o = mvcov(&["info", "--point", "3", cfg.to_str().unwrap(), "--weighting", "uniform"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("point: 3"));
    assert!(text.contains("weighting: uniform"));
    let gain: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("information gain (nats): "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(gain.is_finite() && gain > 0.0);
    let o = mvcov(&["info", "--point", "15", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn configured_sequence_is_ingested() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    fs::create_dir_all(&seq).unwrap();
    for i in 0..3 {
        ImageBuffer::from_pixel(640, 480, Rgb([100u8, 150, 200])).save(seq.join(format!("c{i}.png"))).unwrap();
        ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(640, 480, |x, _| Luma([if x == 0 { 0 } else { 5000 }]))
            .save(seq.join(format!("d{i}.png")))
            .unwrap();
    }
    // The last pair is 0.7 s apart and gets dropped.
    fs::write(seq.join("assoc.txt"), "0.0 c0.png 0.0 d0.png\n0.1 c1.png 0.1 d1.png\n0.2 c2.png 0.9 d2.png\n").unwrap();
    let text = fs::read_to_string(config("information")).unwrap()
        + "[dataset]\nsequence = \"seq\"\nassociation = \"assoc.txt\"\ngroundtruth = \"\"\n";
    let cfg = tmp.path().join("seq.toml");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.contains("sequence,1,frames,2.0"), "{report}");
    assert!(report.contains("sequence,1,frames_dropped,1.0"));
    assert!(report.contains("sequence,1,frames_with_pose,0.0"));
    assert!(report.contains(&format!("sequence,1,valid_depth_pixels,{:?}", (2 * 639 * 480) as f64)));
    // The resolved config points at the sequence from anywhere.
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains(&format!("sequence = {:?}", fs::canonicalize(&seq).unwrap().to_str().unwrap())));
}
