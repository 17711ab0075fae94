use std::path::Path;
use std::process::{Command, Output};

use patchcast::data::load_dataset;

const TINY: &[&str] = &[
    "--set", "synth.points=12",
    "--set", "synth.days=6",
    "--set", "synth.slice_minutes=60",
    "--set", "input_width=4",
    "--set", "week_width=2",
    "--set", "day_width=2",
    "--set", "spatial_width=4",
    "--set", "heads=2",
    "--set", "layers=1",
    "--set", "leaves_per_patch=2",
    "--set", "batch_size=4",
];

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchcast"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny(extra: &[&str]) -> Vec<&'static str> {
    let mut v: Vec<&'static str> = TINY.to_vec();
    for e in extra {
        v.push(Box::leak(e.to_string().into_boxed_str()));
    }
    v
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--points", "10", "--days", "2", "--slice-minutes", "30", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!((ds.n_points(), ds.n_slices(), ds.slices_per_day()), (10, 96, 48));
}

#[test]
fn partition_reports_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["partition", "--set", "synth.points=8", "--set", "synth.days=2", "--capacity", "2", "--leaves-per-patch", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("R=2 P=4 M=8 pads=0"), "{}", stdout(&o));
    for f in ["partition.geojson", "leaves.csv", "patches.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn partition_chooses_leaves_per_patch_from_patch_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["partition", "--set", "synth.points=716", "--set", "synth.days=2", "--set", "synth.slice_minutes=60", "--capacity", "2", "--patches", "16"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("N_p=32"), "{text}");
    assert!(text.contains("R=16 P=64 M=1024 pads=308"), "{text}");
    let patches = std::fs::read_to_string(dir.path().join("patches.csv")).unwrap();
    let occupancy: usize = patches.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(occupancy, 1024);
}

#[test]
fn overrides_on_both_sides_of_the_subcommand_all_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--set", "synth.points=12", "--set=synth.days=2", "partition", "--set", "leaves_per_patch=2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("N=12 C=2 N_p=2"), "{}", stdout(&o));
}

#[test]
fn non_power_of_two_leaves_per_patch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["partition", "--set", "synth.points=8", "--set", "synth.days=2", "--leaves-per-patch", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("power of 2"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--set", "no_such_key=1"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["train", "--set", "epochs"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["bench", "--sizes", "64,32"], dir.path()).status.code(), Some(2));
    let missing = dir.path().join("missing.pstg");
    assert_eq!(run(&["eval", "--checkpoint", missing.to_str().unwrap()], dir.path()).status.code(), Some(1));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&tiny(&["train", "--serial", "--seed", "5", "--set", "epochs=5"]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(dir.path().join("checkpoint.pstg").exists());

    let o = run(&["eval", "--split", "val"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o);
    let lines: Vec<&str> = report.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(header, ["horizon", "MAE", "RMSE", "MAPE(%)"]);
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(labels.len(), 4, "{report}");
    assert_eq!(labels[3], "average");
    assert!(dir.path().join("metrics_val.csv").exists());

    let again = run(&["eval", "--split", "val"], dir.path());
    assert_eq!(stdout(&again), report);
}

#[test]
fn serial_training_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&tiny(&["train", "--serial", "--seed", "9", "--set", "epochs=2"]), d.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "checkpoint.pstg"), read(&b, "checkpoint.pstg"));
    assert_eq!(read(&a, "last.pstg"), read(&b, "last.pstg"));
    let strip = |bytes: Vec<u8>| -> Vec<String> {
        String::from_utf8(bytes)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(read(&a, "train_log.csv")), strip(read(&b, "train_log.csv")));
}

#[test]
fn bench_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench", "--sizes", "32,64", "--width", "8", "--leaves-per-patch", "4", "--repeats", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")), "{csv}");
}
