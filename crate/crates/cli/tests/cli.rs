// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use afdxnoc::{decode, parse_config, WireFrame};
use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn afdxnoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afdxnoc"))
        .args(args)
        .env_remove("AFDXNOC_LOG")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Parsed trace rows as (cycle, node, event, vlid, seq, drop_reason).
fn trace_rows(p: &Path) -> Vec<(u64, u16, String, String, String, String)> {
    let text = fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cycle,node,port,event,vlid,seq,drop_reason"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 7, "{l}");
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[3].into(), f[4].into(), f[5].into(), f[6].into())
        })
        .collect()
}

#[test]
fn run_writes_stats() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("stats.json");
    let config = scenario("two_es_one_switch.toml");
    let out =
        afdxnoc(&["run", "--config", path_str(&config), "--cycles", "10000", "--stats", path_str(&stats)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&stats);
    assert_eq!(s["cycles"], 10000);
    assert!(s["per_vl"]["5"]["delivered"].as_u64().unwrap() > 0);
}

#[test]
fn cycle_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("stats.json");
    let config = scenario("two_es_one_switch.toml");
    let out =
        afdxnoc(&["run", "--config", path_str(&config), "--cycles", "1200", "--stats", path_str(&stats)]);
    assert_eq!(out.status.code(), Some(0));
    let s = read_json(&stats);
    assert_eq!(s["cycles"], 1200);
    // Periodic VL 5 injects at 0, 500 and 1000 before cycle 1200.
    assert_eq!(s["per_vl"]["5"]["sent"], 3);
}

#[test]
fn stats_default_to_stdout() {
    let config = scenario("broadcast.toml");
    let out = afdxnoc(&["run", "--config", path_str(&config), "--cycles", "1000"]);
    assert_eq!(out.status.code(), Some(0));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["cycles"], 1000);
}

#[test]
fn output_paths_in_config_are_relative_to_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("two_es_one_switch.toml")).unwrap().replacen(
        "seed = 1",
        "seed = 1\nstats = \"out/stats.json\"\ntrace = \"out/trace.csv\"",
        1,
    );
    fs::create_dir(dir.path().join("out")).unwrap();
    let config = dir.path().join("s.toml");
    fs::write(&config, text).unwrap();
    let out = afdxnoc(&["run", "--config", path_str(&config)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("out/stats.json").is_file());
    assert!(dir.path().join("out/trace.csv").is_file());
}

#[test]
fn bad_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[run]\ncycles = \n").unwrap();
    let out = afdxnoc(&["run", "--config", path_str(&config)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml") && err.contains("parse error"), "{err}");

    let missing = afdxnoc(&["run", "--config", path_str(&dir.path().join("absent.toml"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn validate_names_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("zero_bag.toml");
    let text = fs::read_to_string(scenario("two_es_one_switch.toml"))
        .unwrap()
        .replace("bag_cycles = 500", "bag_cycles = 0");
    fs::write(&config, text).unwrap();
    let out = afdxnoc(&["validate", "--config", path_str(&config)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("virtual_links[0].bag_cycles"), "{err}");
}

#[test]
fn shipped_scenarios_validate_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        seen += 1;
        let out = afdxnoc(&["validate", "--config", path_str(&path)]);
        assert_eq!(out.status.code(), Some(0), "{}", path.display());
        let cfg = parse_config(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg, "{}", path.display());
    }
    assert!(seen >= 4);
}

#[test]
fn check_with_bit_flip_drops_exactly_that_frame() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("two_es_one_switch.toml")).unwrap()
        + "\n[[faults]]\nat = 1200\nlink = 0\nfrom = 1\naction = \"bit_flip\"\nbyte = 30\nbit = 6\n";
    let config = dir.path().join("flip.toml");
    fs::write(&config, text).unwrap();
    let stats = dir.path().join("stats.json");
    let trace = dir.path().join("trace.csv");
    let out = afdxnoc(&[
        "run",
        "--config",
        path_str(&config),
        "--cycles",
        "10000",
        "--stats",
        path_str(&stats),
        "--trace",
        path_str(&trace),
        "--check",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let s = read_json(&stats);
    let bad_fcs: u64 =
        s["per_vl"].as_object().unwrap().values().map(|v| v["dropped"]["bad_fcs"].as_u64().unwrap()).sum();
    let all_drops: u64 = s["per_vl"]
        .as_object()
        .unwrap()
        .values()
        .flat_map(|v| v["dropped"].as_object().unwrap().values().map(|d| d.as_u64().unwrap()))
        .sum();
    assert_eq!(bad_fcs, 1);
    assert_eq!(all_drops, 1);

    // The corrupted frame is the one emitted by ES 1 first at or after cycle 1200.
    let rows = trace_rows(&trace);
    let flipped = rows
        .iter()
        .find(|r| r.2 == "tx_start" && r.1 == 1 && r.0 >= 1200)
        .map(|r| (r.3.clone(), r.4.clone()))
        .unwrap();
    let faulted: Vec<_> =
        rows.iter().filter(|r| r.2 == "fault").map(|r| (r.3.clone(), r.4.clone())).collect();
    assert_eq!(faulted, vec![flipped.clone()]);
    let dropped: Vec<_> =
        rows.iter().filter(|r| r.2 == "drop").map(|r| (r.3.clone(), r.4.clone(), r.5.clone())).collect();
    assert_eq!(dropped, vec![(flipped.0.clone(), flipped.1.clone(), "bad_fcs".to_string())]);
    // Every other frame of that VL still reaches ES 2.
    let sent: BTreeSet<_> =
        rows.iter().filter(|r| r.2 == "tx_start" && r.1 == 1).map(|r| r.4.clone()).collect();
    let got: BTreeSet<_> =
        rows.iter().filter(|r| r.2 == "deliver" && r.1 == 2).map(|r| r.4.clone()).collect();
    let lost: Vec<_> = sent.difference(&got).cloned().collect();
    assert_eq!(lost, vec![flipped.1]);
}

#[test]
fn equal_seeds_give_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario("multicast_tree.toml");
    let mut traces = Vec::new();
    for (i, seed) in ["11", "11", "12"].iter().enumerate() {
        let trace = dir.path().join(format!("t{i}.csv"));
        let stats = dir.path().join(format!("s{i}.json"));
        let out = afdxnoc(&[
            "run",
            "--config",
            path_str(&config),
            "--seed",
            seed,
            "--trace",
            path_str(&trace),
            "--stats",
            path_str(&stats),
        ]);
        assert_eq!(out.status.code(), Some(0));
        traces.push(fs::read(&trace).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    assert_ne!(traces[0], traces[2]);
}

#[test]
fn vectors_decode_and_match_known_crc() {
    let out = afdxnoc(&["vectors"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let crcs = v["crc32"].as_array().unwrap();
    let check = crcs.iter().find(|c| c["input_hex"] == hex::encode("123456789")).unwrap();
    assert_eq!(check["crc32"], "cbf43926");
    let empty = crcs.iter().find(|c| c["input_hex"] == "").unwrap();
    assert_eq!(empty["crc32"], "00000000");

    for f in v["frames"].as_array().unwrap() {
        let wire = WireFrame::from_bytes(hex::decode(f["wire_hex"].as_str().unwrap()).unwrap());
        assert_eq!(wire.len() as u64, f["wire_len"].as_u64().unwrap());
        let frame = decode(&wire).unwrap();
        assert_eq!(hex::encode(&frame.payload), f["payload_hex"].as_str().unwrap());
        assert_eq!(u64::from(frame.vlid), f["vlid"].as_u64().unwrap());
        assert_eq!(u64::from(frame.seq), f["seq"].as_u64().unwrap());
        assert_eq!(format!("{:08x}", wire.fcs().unwrap()), f["fcs"].as_str().unwrap());
    }
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(afdxnoc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(afdxnoc_cli::main_with_args(["afdxnoc", "--help"]), 0);
}
