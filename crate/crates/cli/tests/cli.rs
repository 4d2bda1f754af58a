use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gle_avf_cli::output::{read_rows, read_trajectory, write_rows, ErrorTableRow, SeriesRow, TrajectoryRow};

fn cli(dir: &Path, config: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_gle-avf"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    (o, out)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn single_level_rejected() {
    let t = tempfile::tempdir().unwrap();
    let (o, _) = cli(t.path(), "experiment = \"converge\"\n[converge]\nlevels = [0.01]\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("need ≥ 3 levels"));
}

#[test]
fn empty_time_list_rejected() {
    let t = tempfile::tempdir().unwrap();
    let (o, _) = cli(t.path(), "experiment = \"distribution\"\n[distribution]\ntimes = []\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty time list"));
}

#[test]
fn unknown_key_reports_line() {
    let t = tempfile::tempdir().unwrap();
    let (o, _) = cli(t.path(), "experiment = \"simulate\"\n\n[simulate]\nnsteps = 3\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("nsteps") && e.contains("line 4"), "{e}");
}

#[test]
fn step_above_threshold_needs_override() {
    let t = tempfile::tempdir().unwrap();
    let text = "experiment = \"simulate\"\n[simulate]\nh = 0.5\nn_steps = 4\n";
    let (o, _) = cli(t.path(), text, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("h*"));
    let (o, _) = cli(t.path(), text, &["--override-hstar"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn simulate_row_count_and_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let (o, out) = cli(t.path(), "experiment = \"simulate\"\n[simulate]\nn_steps = 10\nstride = 1\n", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_trajectory(&out.join("trajectory.csv")).unwrap();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0].t, 0.0);
    assert_eq!(rows[0].values.as_ref().unwrap().0, vec![1.0; 5]);
    assert_eq!(rows[10].step, 10);
}

#[test]
fn zero_noise_equilibrium_is_constant() {
    let t = tempfile::tempdir().unwrap();
    let text = "experiment = \"simulate\"\n[simulate]\nn_steps = 20\ninitial_state = [0.0, 0.0, 0.0, 0.0, 0.0]\n";
    let (o, out) = cli(t.path(), text, &["--zero-noise"]);
    assert!(o.status.success());
    let rows = read_trajectory(&out.join("trajectory.csv")).unwrap();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r.values.as_ref().unwrap().0.iter().all(|&c| c == 0.0)));
}

#[test]
fn euler_maruyama_blow_up_is_marked() {
    let t = tempfile::tempdir().unwrap();
    let text = "experiment = \"simulate\"\n[simulate]\nscheme = \"em\"\nn_steps = 200\ninitial_state = [0.0, 0.0, 0.0, 0.0, 10.0]\n";
    let (o, out) = cli(t.path(), text, &[]);
    assert!(o.status.success());
    let rows = read_trajectory(&out.join("trajectory.csv")).unwrap();
    let last = rows.last().unwrap();
    assert!(last.values.is_none());
    assert!(last.step < 200);
    // The AVF scheme stays finite from the same start.
    let (o, out) = cli(t.path(), &text.replace("\"em\"", "\"avf\""), &[]);
    assert!(o.status.success());
    let rows = read_trajectory(&out.join("trajectory.csv")).unwrap();
    assert_eq!(rows.len(), 201);
    assert!(rows.iter().all(|r| r.values.is_some()));
}

#[test]
fn trajectory_csv_round_trips() {
    let t = tempfile::tempdir().unwrap();
    let rows = vec![
        TrajectoryRow { path: 0, step: 0, t: 0.0, values: Some((vec![0.1, -2.5e-17, 3.0], 1.0 / 3.0)) },
        TrajectoryRow { path: 0, step: 1, t: 0.125, values: None },
    ];
    let p = t.path().join("traj.csv");
    gle_avf_cli::output::write_trajectory(&p, 1, &rows).unwrap();
    assert_eq!(read_trajectory(&p).unwrap(), rows);
}

#[test]
fn converge_outputs_round_trip_and_check() {
    let t = tempfile::tempdir().unwrap();
    let text = "experiment = \"converge\"\n[converge]\nlevels = [0.0625, 0.03125, 0.015625, 0.0078125]\nn_paths = 200\n";
    let (o, out) = cli(t.path(), text, &["--check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = out.join("error_table.csv");
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("h,strong_error,strong_order,weak_error,weak_order,n_effective\n"));
    let rows: Vec<ErrorTableRow> = read_rows(&path).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].strong_order.is_none() && rows[0].strong_order.is_some());
    let again = t.path().join("again.csv");
    write_rows(&again, &rows).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    // Resolved config reproduces the run.
    let resolved = out.join("resolved_config.toml");
    let (o2, out2) = {
        let text = std::fs::read_to_string(&resolved).unwrap();
        let d = t.path().join("second");
        std::fs::create_dir_all(&d).unwrap();
        cli(&d, &text, &[])
    };
    assert!(o2.status.success());
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(out2.join("error_table.csv")).unwrap());

    // An impossible order window fails the self-check.
    let strict = format!("{text}order_window = [5.0, 6.0]\n");
    let d = t.path().join("strict");
    std::fs::create_dir_all(&d).unwrap();
    let (o3, _) = cli(&d, &strict, &["--check"]);
    assert_eq!(o3.status.code(), Some(4));
}

#[test]
fn seed_flag_changes_output_and_is_echoed() {
    let t = tempfile::tempdir().unwrap();
    let text = "experiment = \"simulate\"\nseed = 1\n[simulate]\nn_steps = 5\n";
    let (_, a) = cli(t.path(), text, &[]);
    let first = std::fs::read(a.join("trajectory.csv")).unwrap();
    let (_, b) = cli(t.path(), text, &["--seed", "2"]);
    assert_ne!(first, std::fs::read(b.join("trajectory.csv")).unwrap());
    assert!(std::fs::read_to_string(b.join("resolved_config.toml")).unwrap().contains("seed = 2"));
}

#[test]
fn fully_diverged_level_is_numerical_failure() {
    let t = tempfile::tempdir().unwrap();
    let text = "experiment = \"converge\"\n[solver]\nnewton_max_iter = 2\nfixed_point_max_iter = 2\n\
                [converge]\nt_end = 16.0\nlevels = [4.0, 2.0, 1.0]\nn_paths = 100\ninitial_state = [50.0, 0.0, 0.0, 0.0, 50.0]\n";
    let (o, _) = cli(t.path(), text, &["--override-hstar"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn ergodic_constant_observable_and_series_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let text = "experiment = \"ergodic\"\n[ergodic]\nt_end = 4.0\nn_paths = 16\nobservables = [\"one\", \"cos_norm2\"]\n\
                reference_samples = 10000\n";
    let (o, out) = cli(t.path(), text, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<SeriesRow> = read_rows(&out.join("temporal_averages.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 4 * 4);
    assert!(rows.iter().filter(|r| r.g_name == "one").all(|r| r.running_mean == 1.0));
    let header = std::fs::read_to_string(out.join("temporal_averages.csv")).unwrap();
    assert!(header.starts_with("t,g_name,initial_label,running_mean,std_error\n"));
}

#[test]
fn zero_noise_converge_has_no_spread() {
    let t = tempfile::tempdir().unwrap();
    let text = "experiment = \"converge\"\n[converge]\nlevels = [0.0625, 0.03125, 0.015625, 0.0078125]\nn_paths = 100\n";
    let (o, out) = cli(t.path(), text, &["--zero-noise"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<ErrorTableRow> = read_rows(&out.join("error_table.csv")).unwrap();
    assert!(rows.iter().all(|r| r.strong_error > 0.0));
    let se = std::fs::read_to_string(out.join("error_se.csv")).unwrap();
    assert!(se.lines().skip(1).all(|l| l.split(',').nth(1).and_then(|v| v.parse::<f64>().ok()) == Some(0.0)), "{se}");
}
