use std::path::Path;
use std::process::Command;

use loadshape::appliance::{assemble_home_polyhedron, ConstraintBlock, RowLabel};
use loadshape::{ComfortWeights, DesiredSchedule, Home, PriceBox, Scenario};
use loadshape_cli::checks::gradcheck;
use loadshape_cli::output::Table;
use nalgebra::DMatrix;

const DETERMINISTIC: [&str; 5] = ["iterations.csv", "prices.csv", "loads.csv", "aggregate.csv", "summary.csv"];

fn loadshape(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_loadshape"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LOADSHAPE_OUT")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn run_writes_all_tables_with_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = loadshape(&["run", "--homes", "4", "--batch", "2", "--kmax", "3", "--out", "r"], dir.path());
    assert_eq!(code, 0, "{err}");
    let r = dir.path().join("r");
    let aggregate = Table::read(&r.join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.header, ["t", "target", "desired_aggregate", "optimal_aggregate"]);
    assert_eq!(aggregate.rows.len(), 96);
    assert_eq!(Table::read(&r.join("prices.csv")).unwrap().rows.len(), 96);
    assert_eq!(Table::read(&r.join("loads.csv")).unwrap().rows.len(), 4 * 4 * 96);
    let it = Table::read(&r.join("iterations.csv")).unwrap();
    assert!(!it.rows.is_empty() && it.rows.len() <= 3);
    assert!(r.join("timings.csv").exists());
}

#[test]
fn csvs_are_byte_identical_across_reruns_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["run", "--homes", "6", "--batch", "3", "--kmax", "4", "--eps", "1e-12", "--seed", "9"];
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let mut args = base.to_vec();
        args.extend(["--workers", workers, "--out", name]);
        let (code, _, err) = loadshape(&args, dir.path());
        assert_eq!(code, 0, "{err}");
    }
    for f in DETERMINISTIC {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        for other in ["b", "c"] {
            assert_eq!(a, std::fs::read(dir.path().join(other).join(f)).unwrap(), "{f} differs in {other}");
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[scenario]\nn_homes = 2\nbogus = 1\n").unwrap();
    let (code, _, err) = loadshape(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("bogus"), "{err}");

    let (code, _, _) = loadshape(&["run", "--homes", "3", "--batch", "4"], dir.path());
    assert_eq!(code, 2);

    let (code, _, err) = loadshape(&["run", "--homes", "3", "--kmax", "4", "--time-budget", "1e-6", "--out", "t"], dir.path());
    assert_eq!(code, 4, "{err}");
    assert!(dir.path().join("t/aggregate.csv").exists());

    let (code, out, _) = loadshape(&["gradcheck", "--flip-sign", "--out", "g"], dir.path());
    assert_eq!(code, 3);
    assert!(out.contains("FAIL") && out.contains("at slot"), "{out}");

    let (code, _, err) = loadshape(&["gradcheck", "--homes", "11"], dir.path());
    assert_eq!(code, 2, "{err}");
}

#[test]
fn gradcheck_passes_on_the_default_small_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = loadshape(&["gradcheck", "--out", "g"], dir.path());
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("PASS"));
    assert_eq!(Table::read(&dir.path().join("g/gradcheck.csv")).unwrap().rows.len(), 8);
}

#[test]
fn gradcheck_in_the_clipped_regime() {
    // p_bar = 0.1 with prices near 1: the home sits at p = 0 in every slot
    let k = 2;
    let mut g = DMatrix::zeros(2 * k, k);
    let mut labels = Vec::new();
    for t in 0..k {
        g[(2 * t, t)] = 1.0;
        g[(2 * t + 1, t)] = -1.0;
        labels.extend([RowLabel::PowerMax(t), RowLabel::PowerMin(t)]);
    }
    let block = ConstraintBlock::new(g, vec![2.0, 0.0, 2.0, 0.0], labels).unwrap();
    let home = Home::custom(
        assemble_home_polyhedron(vec![block]).unwrap(),
        ComfortWeights::new(vec![1.0]).unwrap(),
        DesiredSchedule::new(1, k, vec![0.1, 0.1]).unwrap(),
    );
    let s = Scenario::from_homes(vec![home], vec![10.0; k], PriceBox::default()).unwrap();
    let r = gradcheck(&s, &[0.9, 0.95], false).unwrap();
    assert!(r.passed());
    assert!(r.implicit.iter().chain(&r.finite_difference).all(|v| v.abs() < 1e-6), "{r:?}");
}

#[test]
fn generated_scenario_file_runs_like_inline_generation() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = loadshape(&["generate", "--homes", "3", "--seed", "2", "--out", "gen"], dir.path());
    assert_eq!(code, 0, "{err}");
    std::fs::write(
        dir.path().join("file.toml"),
        "scenario_file = \"gen/scenario.json\"\n[coordinator]\nseed = 2\nk_max = 3\nbatch_size = 2\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("inline.toml"), "[scenario]\nn_homes = 3\nseed = 2\n[coordinator]\nseed = 2\nk_max = 3\nbatch_size = 2\n").unwrap();
    assert_eq!(loadshape(&["run", "--config", "file.toml", "--out", "f"], dir.path()).0, 0);
    assert_eq!(loadshape(&["run", "--config", "inline.toml", "--out", "i"], dir.path()).0, 0);
    for f in DETERMINISTIC {
        assert_eq!(
            std::fs::read(dir.path().join("f").join(f)).unwrap(),
            std::fs::read(dir.path().join("i").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn small_experiment_grid() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("grid.toml"),
        "home_counts = [4]\nseeds = [0, 1]\nk_max = 3\n\
         [scenario]\nhorizon = 12\n\
         [[settings]]\noptimizer = \"adam\"\nlearning_rate = 0.1\nbatch_size = 2\n\
         [[settings]]\noptimizer = \"sgd\"\nlearning_rate = 1e-5\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("base.csv"), "homes,seed,z\n4,0,100.0\n4,1,100.0\n").unwrap();
    let (code, out, err) =
        loadshape(&["experiment", "--grid", "grid.toml", "--baseline", "base.csv", "--out", "x"], dir.path());
    assert_eq!(code, 0, "{out}{err}");
    let x = dir.path().join("x");
    assert_eq!(Table::read(&x.join("runs.csv")).unwrap().rows.len(), 4);
    assert_eq!(Table::read(&x.join("ranks.csv")).unwrap().rows.len(), 2);
    assert_eq!(Table::read(&x.join("improvement.csv")).unwrap().rows.len(), 2);
    assert_eq!(std::fs::read_dir(x.join("cells")).unwrap().count(), 4);
    let ranks = std::fs::read(x.join("ranks.csv")).unwrap();
    let (code, _, err) = loadshape(&["experiment", "--summarize-only", "--baseline", "base.csv", "--out", "x"], dir.path());
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read(x.join("ranks.csv")).unwrap(), ranks);
}
