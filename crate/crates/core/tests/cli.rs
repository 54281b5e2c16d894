use std::fs;
use std::path::{Path, PathBuf};

use qabench::benchmark::{parse_results_csv, ResultRow};
use qabench::cli::{run_cli, EXIT_IO, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE};

fn qabench(out: &Path, args: &[&str]) -> i32 {
    let mut full = vec!["qabench", "--out", out.to_str().unwrap(), "--seed", "5"];
    full.extend_from_slice(args);
    run_cli(full)
}

fn json_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("campaign.json");
    fs::write(&path, body).unwrap();
    path
}

fn results(out: &Path) -> Vec<ResultRow> {
    parse_results_csv(&fs::read_to_string(out.join("results.csv")).unwrap()).unwrap()
}

#[test]
fn gen_writes_count_files_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(qabench(out, &["gen", "--m", "2..=3", "--w", "2", "--count", "3"]), EXIT_OK);
    let files = json_files(&out.join("instances"));
    assert_eq!(files.len(), 6);
    assert!(files[0].ends_with("m2_w2_0000.json"));
    let manifest = fs::read_to_string(out.join("instances/manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "file,m,w,n,seed");
    assert_eq!(rows.len(), 7);
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 5));
}

#[test]
fn gen_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(qabench(out, &["gen", "--m", "3", "--w", "3", "--count", "2"]), EXIT_OK);
    }
    for f in json_files(&a.join("instances")) {
        let twin = b.join("instances").join(f.file_name().unwrap());
        assert_eq!(fs::read(&f).unwrap(), fs::read(twin).unwrap());
    }
}

#[test]
fn corrupted_instance_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(qabench(out, &["gen", "--m", "2", "--w", "2"]), EXIT_OK);
    let file = json_files(&out.join("instances")).remove(0);
    let text = fs::read_to_string(&file).unwrap();
    fs::write(&file, &text[..text.len() / 2]).unwrap();
    let code = qabench(out, &["oracle", file.to_str().unwrap()]);
    assert_ne!(code, EXIT_OK);
    assert_ne!(code, EXIT_PARTIAL);

    let missing = out.join("nope.json");
    assert_eq!(qabench(out, &["oracle", missing.to_str().unwrap()]), EXIT_IO);
}

#[test]
fn oracle_writes_spectrum_histogram_and_ground_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(qabench(out, &["gen", "--m", "2", "--w", "3"]), EXIT_OK);
    let file = json_files(&out.join("instances")).remove(0);
    assert_eq!(qabench(out, &["oracle", "--bins", "10", file.to_str().unwrap()]), EXIT_OK);
    let stem = file.file_stem().unwrap().to_str().unwrap();
    let spectrum = fs::read_to_string(out.join(format!("oracle/{stem}.spectrum.csv"))).unwrap();
    assert_eq!(spectrum.lines().filter(|l| !l.starts_with('#')).count(), 1 + 64);
    let hist = fs::read_to_string(out.join(format!("oracle/{stem}.hist.csv"))).unwrap();
    let total: u64 = hist
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 64);
    assert!(out.join(format!("oracle/{stem}.ground.json")).is_file());
}

#[test]
fn dry_run_validates_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(qabench(out, &["gen", "--m", "2", "--w", "1"]), EXIT_OK);
    let cfg = write_config(out, r#"{"instances": ["instances"], "sampler": {"num_samples": 5}, "forward": {}}"#);
    assert_eq!(qabench(out, &["run", "--dry-run", cfg.to_str().unwrap()]), EXIT_OK);
    assert!(!out.join("results.csv").exists());

    let bad = write_config(out, r#"{"instances": ["instances"], "sampler": {"num_samples": 0}, "forward": {}}"#);
    assert_eq!(qabench(out, &["run", "--dry-run", bad.to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn forward_time_grid_gives_one_row_per_size_and_time() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(qabench(out, &["gen", "--m", "2..=3", "--w", "1", "--count", "2"]), EXIT_OK);
    let cfg = write_config(
        out,
        r#"{"instances": ["instances"], "sampler": {"num_samples": 10},
            "forward": {"anneal_times": [1, 20, 100, 1000]}}"#,
    );
    assert_eq!(qabench(out, &["run", cfg.to_str().unwrap()]), EXIT_OK);
    let rows = results(out);
    assert_eq!(rows.len(), 8);
    for n in [2, 3] {
        let times: Vec<&str> = rows.iter().filter(|r| r.n == n).map(|r| r.t_or_schedule.as_str()).collect();
        assert_eq!(times, ["1", "20", "100", "1000"]);
    }
    assert!(rows.iter().all(|r| r.status == "ok" && r.n_p == 2 && r.n_s == 10 && r.mode == "fa"));

    assert_eq!(qabench(out, &["report", out.join("results.csv").to_str().unwrap()]), EXIT_OK);
    assert!(out.join("report.csv").is_file());
}

#[test]
fn default_reverse_grid_gives_sixty_three_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(qabench(out, &["gen", "--m", "2", "--w", "1", "--count", "2"]), EXIT_OK);
    let cfg = write_config(
        out,
        r#"{"instances": ["instances"], "sampler": {"num_samples": 4}, "reverse": {"modes": ["e0"]}}"#,
    );
    assert_eq!(qabench(out, &["run", cfg.to_str().unwrap()]), EXIT_OK);
    let rows = results(out);
    assert_eq!(rows.len(), 63);
    assert!(rows.iter().all(|r| r.mode == "e0" && r.t_or_schedule == "reverse"));
    let reverse = fs::read_to_string(out.join("reverse.csv")).unwrap();
    assert_eq!(reverse.lines().filter(|l| !l.starts_with('#')).count(), 1 + 63);
}

#[test]
fn missing_oracle_record_marks_cells_failed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(qabench(out, &["gen", "--m", "2", "--w", "1"]), EXIT_OK);
    fs::create_dir_all(out.join("oracle")).unwrap();
    let cfg = write_config(
        out,
        r#"{"instances": ["instances"], "oracle_dir": "oracle", "sampler": {"num_samples": 5}, "forward": {}}"#,
    );
    assert_eq!(qabench(out, &["run", cfg.to_str().unwrap()]), EXIT_PARTIAL);
    let rows = results(out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].status, "failed");
    assert!(rows[0].metrics.is_none());
}
