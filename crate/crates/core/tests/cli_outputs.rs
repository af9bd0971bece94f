use std::path::Path;
use std::process::Command;

fn mvtlex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvtlex"))
}

fn first_two_lines(path: &Path) -> (String, String) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    (lines.next().unwrap().to_string(), lines.next().unwrap().to_string())
}

#[test]
fn compare_writes_versioned_files() {
    let dir = tempfile::tempdir().unwrap();
    let status = mvtlex()
        .args([
            "compare",
            "--dataset",
            "friedman1:n=120,noise=0.1",
            "--strategy",
            "d-split",
        ])
        .args([
            "--strategy",
            "mad-semi-dynamic",
            "--seed",
            "1",
            "--seed",
            "2",
            "--gens",
            "3",
            "--pop",
            "12",
        ])
        .arg("--out")
        .arg(dir.path())
        .env("MVTLEX_WORKERS", "2")
        .status()
        .unwrap();
    assert!(status.success());
    let p = dir.path();
    assert_eq!(
        first_two_lines(&p.join("mvt-dynamic_seed1.generations.csv")),
        (
            "# schema: mvtlex.generations.v1".into(),
            "generation,min_validation_loss,min_fit_loss,median_cases_used,wall_time_ms".into()
        )
    );
    assert_eq!(
        first_two_lines(&p.join("mad-semi-dynamic_seed2.selection.csv")).1,
        "generation,strategy,median_cases_used,mean_cases_used,max_cases_used"
    );
    assert_eq!(
        first_two_lines(&p.join("convergence.csv")),
        (
            "# schema: mvtlex.convergence.v1".into(),
            "generation,mvt-dynamic,mad-semi-dynamic".into()
        )
    );
    assert_eq!(
        first_two_lines(&p.join("cases_used.csv")).1,
        "generation,mvt-dynamic,mad-semi-dynamic"
    );
    let scores = std::fs::read_to_string(p.join("final_scores.csv")).unwrap();
    assert_eq!(
        scores.lines().nth(1).unwrap(),
        "strategy,median_test_r2,median_complexity,median_size"
    );
    assert_eq!(scores.lines().count(), 4);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("mvt-dynamic_seed1.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema"], "mvtlex.summary.v1");
    assert_eq!(summary["config"]["pop_size"], 12);
    for key in [
        "test_r2",
        "test_mse",
        "complexity",
        "size",
        "total_wall_time_ms",
        "dataset",
    ] {
        assert!(!summary[key].is_null(), "{key} missing");
    }
    assert!(summary["model"]["features"].is_array());
    assert!(summary["model"]["coefficients"].is_array());
}

#[test]
fn run_reads_a_config_file_and_csv_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("line.csv");
    let mut body = String::from("a,b,y\n");
    for i in 0..60 {
        let (a, b) = (i as f64 / 10.0, (i % 7) as f64);
        body.push_str(&format!("{a},{b},{}\n", 3.0 * a - b));
    }
    std::fs::write(&csv, body).unwrap();
    let config = dir.path().join("suite.cfg");
    std::fs::write(
        &config,
        format!(
            "dataset = {}\nseeds = 4\ngens = 2\npop = 10\nbatch = none\n",
            csv.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = mvtlex()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--strategy", "s-split", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let gens = std::fs::read_to_string(out.join("mvt-static_seed4.generations.csv")).unwrap();
    assert_eq!(gens.lines().count(), 4);
}

#[test]
fn scaling_emits_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let status = mvtlex()
        .args([
            "scaling",
            "--strategy",
            "mvt-static",
            "--samples",
            "60,90",
            "--features",
            "5,6",
        ])
        .args(["--gens", "2", "--pop", "10", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# schema: mvtlex.scaling.v1");
    assert_eq!(lines[1], "strategy,n_samples,n_features,wall_time_ms");
    assert_eq!(lines.len(), 6);
    for row in &lines[2..] {
        let ms: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(ms > 0.0);
    }
}

#[test]
fn config_errors_name_the_field_and_fail() {
    let out = mvtlex()
        .args(["run", "--dataset", "friedman1:n=50", "--pop", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pop_size"));

    let out = mvtlex()
        .args(["run", "--dataset", "friedman1:n=50", "--strategy", "tournament"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("strategy"));
}
