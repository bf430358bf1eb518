use std::path::Path;
use std::process::{Command, Output};

use interval_markets::{Dyadic, Interval};
use interval_markets_cli::engine::Engine;
use interval_markets_cli::store;
use interval_markets_cli::tradelog::read_log;

fn imm(state: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imm"))
        .arg("--state")
        .arg(state)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(state: &Path, args: &[&str]) -> String {
    let out = imm(state, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

fn code(state: &Path, args: &[&str]) -> i32 {
    imm(state, args).status.code().unwrap()
}

#[test]
fn fresh_lmsr_examples() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("m.json");
    ok(&state, &["new", "--engine", "lmsr-tree", "--b", "1.0"]);
    let snap = store::load_snapshot(&state).unwrap();
    let Engine::LmsrTree { tree, .. } = Engine::from_snapshot(&snap).unwrap() else {
        panic!("wrong engine");
    };
    assert_eq!(tree.node_count(), 1);
    assert_eq!(ok(&state, &["price", "0.25", "1.0"]), "0.750000000000");
    let cost: f64 = ok(&state, &["cost", "0.0", "0.25", "1.0"]).parse().unwrap();
    assert!((cost - (0.75 + 0.25 * 1f64.exp()).ln()).abs() < 1e-11);
    assert!(ok(&state, &["cost", "0.0", "0.25", "1.0"]).starts_with("0.35737"));
}

#[test]
fn loss_bounds_printed() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("m.json");
    let bound: f64 = ok(
        &state,
        &["new", "--engine", "lcmm", "--geometric", "0.5", "0.5"],
    )
    .parse()
    .unwrap();
    assert!((bound - 1.38629).abs() < 1e-5);
    let bound: f64 = ok(
        &state,
        &["new", "--engine", "lmsr-tree", "--b", "2", "--K", "8"],
    )
    .parse()
    .unwrap();
    assert!((bound - 16.0 * 2f64.ln()).abs() < 1e-10);
}

#[test]
fn validation_and_engine_errors() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("m.json");
    assert_eq!(
        code(
            &state,
            &["new", "--engine", "dense", "--b", "1", "--K", "20"]
        ),
        2
    );
    assert_eq!(code(&state, &["price", "0", "1"]), 4, "missing snapshot");
    ok(
        &state,
        &["new", "--engine", "lmsr-tree", "--b", "1", "--K", "4"],
    );
    assert_eq!(code(&state, &["price", "0.1", "0.5"]), 2);
    assert_eq!(code(&state, &["price", "0.5", "0.25"]), 2);
    assert_eq!(
        code(&state, &["price", "1/2^5", "1"]),
        3,
        "finer than the market precision"
    );
    ok(&state, &["new", "--engine", "lcmm", "--levels", "1,1"]);
    assert_eq!(
        code(&state, &["buy", "1/2^3", "1", "1"]),
        3,
        "deeper than the schedule"
    );
}

#[test]
fn buy_logs_and_replays_across_engines() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("m.json");
    ok(
        &state,
        &["new", "--engine", "lmsr-tree", "--b", "1", "--K", "6"],
    );
    let trades = [
        ("1/2^2", "3/4", "2.5"),
        ("0.5", "1", "-1"),
        ("0", "5/2^6", "0.75"),
        ("3/2^3", "7/2^3", "4"),
    ];
    for (lo, hi, s) in trades {
        ok(&state, &["buy", lo, hi, s]);
    }
    let log = store::log_path(&state);
    let records = read_log(&log).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(records[3].seq, 4);
    assert_eq!(records[0].lo, "1/2^2");

    let live: Vec<f64> = records
        .iter()
        .map(|r| ok(&state, &["price", &r.lo, &r.hi]).parse().unwrap())
        .collect();
    // the dense engine replays the same log to the same prices
    let out = ok(
        &state,
        &[
            "replay",
            "--log",
            log.to_str().unwrap(),
            "--engine",
            "dense",
            "--b",
            "1",
            "--K",
            "6",
        ],
    );
    for (line, live) in out.lines().zip(&live) {
        let replayed: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!((replayed - live).abs() < 1e-9);
    }
}

#[test]
fn seq_gap_is_log_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("m.json");
    ok(&state, &["new", "--engine", "lmsr-tree", "--b", "1"]);
    ok(&state, &["buy", "0", "1/2", "1"]);
    ok(&state, &["buy", "0", "1/4", "1"]);
    ok(&state, &["buy", "0", "1/8", "1"]);
    let log = store::log_path(&state);
    let text = std::fs::read_to_string(&log).unwrap();
    let without_second: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, _)| *i != 1)
        .map(|(_, l)| l)
        .collect();
    std::fs::write(&log, without_second.join("\n")).unwrap();
    let out = imm(
        &state,
        &[
            "replay",
            "--log",
            log.to_str().unwrap(),
            "--engine",
            "lmsr-tree",
            "--b",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing seq 2"));
}

#[test]
fn empty_log_replays_to_fresh_market() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.log.jsonl");
    std::fs::write(&log, "").unwrap();
    let state = dir.path().join("r.json");
    let out = ok(
        &state,
        &[
            "replay",
            "--log",
            log.to_str().unwrap(),
            "--engine",
            "lmsr-tree",
            "--b",
            "1",
            "--out",
            state.to_str().unwrap(),
        ],
    );
    assert!(out.is_empty());
    assert_eq!(ok(&state, &["price", "1/2^3", "1"]), "0.875000000000");
}

#[test]
fn snapshot_missing_last_trade_rolls_forward() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("m.json");
    ok(
        &state,
        &["new", "--engine", "lcmm", "--levels", "0.5,0.25,0.125"],
    );
    ok(&state, &["buy", "1/8", "5/8", "1.5"]);
    let before = std::fs::read(&state).unwrap();
    ok(&state, &["buy", "3/8", "1", "-0.5"]);
    let expected = ok(&state, &["price", "1/4", "3/4"]);
    // simulate a crash after the log append but before the snapshot rename
    std::fs::write(&state, before).unwrap();
    assert_eq!(ok(&state, &["price", "1/4", "3/4"]), expected);
    ok(&state, &["buy", "0", "1/2", "0.25"]);
    assert_eq!(read_log(&store::log_path(&state)).unwrap().len(), 3);
}

#[test]
fn lock_blocks_writers() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("m.json");
    ok(&state, &["new", "--engine", "lmsr-tree", "--b", "1"]);
    std::fs::write(store::lock_path(&state), "1").unwrap();
    assert_eq!(code(&state, &["buy", "0", "1/2", "1"]), 4);
    // readers ignore the lock
    assert_eq!(ok(&state, &["price", "0", "1/2"]), "0.500000000000");
}

#[test]
fn simulate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.conf");
    std::fs::write(
        &config,
        "n_traces = 2\nmax_steps = 5\nseed = 3\nmarkets = lmsr:4; lcmm:4=0.5,8=0.5\n",
    )
    .unwrap();
    let csv = dir.path().join("out.csv");
    let state = dir.path().join("unused.json");
    let args = [
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ];
    ok(&state, &args);
    let first = std::fs::read_to_string(&csv).unwrap();
    let mut lines = first.lines();
    assert_eq!(
        lines.next(),
        Some("trace,step,market,level,kl,cumulative_cost")
    );
    // 2 traces x 2 markets x (up to 6 steps) x 2 levels
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() <= 2 * 2 * 6 * 2 && rows.len() >= 2 * 2 * 2);
    ok(&state, &args);
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), first);

    std::fs::write(&config, "budget = zero\n").unwrap();
    let out = imm(&state, &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn dyadic_text_round_trip() {
    let iv = Interval::new(
        Dyadic::parse("3/2^3").unwrap(),
        Dyadic::parse("0.75").unwrap(),
    )
    .unwrap();
    assert_eq!(iv.lo().to_string(), "3/2^3");
    assert_eq!(iv.hi().to_string(), "3/2^2");
}
