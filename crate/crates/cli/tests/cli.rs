use std::process::Command;

fn mobal(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mobal")).args(args).output().unwrap()
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("mobal-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn writes_requested_file() {
    let dir = scratch("out");
    let out = dir.join("nested").join("counts.csv");
    let status = mobal(&["lattice-count", "--n", "3", "--r", "2", "--out", out.to_str().unwrap()]);
    assert!(status.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, "# schema=lattice-count-v1\nn,r,count\n3,2,6\n");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(mobal(&["lattice-count", "--n", "0"]).status.code(), Some(2));
    assert_eq!(mobal(&["filter-eval", "--n", "3"]).status.code(), Some(2));
    assert_eq!(mobal(&["bound-eval", "--r", "x"]).status.code(), Some(2));
    let dir = scratch("bad");
    let path = dir.join("scenario.json");
    std::fs::write(&path, r#"{"resolutoin": 5}"#).unwrap();
    assert_eq!(mobal(&["run-loop", "--config", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(mobal(&["run-loop", "--config", "/nonexistent/file.json"]).status.code(), Some(2));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn capacity_guard_exits_with_three() {
    let dir = scratch("big");
    let path = dir.join("scenario.json");
    let adjacency: Vec<Vec<u8>> =
        (0..5usize).map(|i| (0..5usize).map(|j| u8::from(i.abs_diff(j) == 1)).collect()).collect();
    let adjacency = format!("{adjacency:?}");
    std::fs::write(
        &path,
        format!(
            r#"{{"system": {{"n_components": 5, "adjacency": {adjacency}, "p_attack": 0.2, "max_alerts": 7,
                "betabin_compromised": {{"trials": 7, "alpha": 1.0, "beta": 0.7}},
                "betabin_safe": {{"trials": 7, "alpha": 0.7, "beta": 3.0}}}}}}"#
        ),
    )
    .unwrap();
    let out = mobal(&["run-loop", "--config", path.to_str().unwrap(), "--seeds", "0..2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_mobal"))
        .args(["obs-dist"])
        .env("MOBAL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_loop_writes_episode_logs() {
    let dir = scratch("logs");
    let out = mobal(&["run-loop", "--seeds", "3..5", "--steps", "12", "--logs", dir.to_str().unwrap()]);
    assert!(out.status.success());
    for seed in [3, 4] {
        let csv = std::fs::read_to_string(dir.join(format!("episode-{seed}.csv"))).unwrap();
        assert!(csv.starts_with("# schema=episode-v1\n"));
        assert_eq!(csv.lines().count(), 14);
        assert!(dir.join(format!("episode-{seed}.json")).exists());
    }
    std::fs::remove_dir_all(dir).ok();
}
