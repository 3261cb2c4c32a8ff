//! End-to-end tests of the `tcdsg` binary.

mod common;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::process::{Command, Output};

use common::{bx, gt_frame, pred_frame, query, triplet};
use tcdsg::schema_io::{write_gt_stream, write_pred_stream, FrameGroundTruth, FramePrediction};

fn tcdsg(args: &[&str], threads_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tcdsg"));
    cmd.args(args);
    match threads_env {
        Some(v) => cmd.env("TCDSG_THREADS", v),
        None => cmd.env_remove("TCDSG_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tcdsg(args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn write_gt(path: &Path, frames: &[FrameGroundTruth]) {
    let mut w = BufWriter::new(File::create(path).unwrap());
    write_gt_stream(&mut w, frames).unwrap();
}

fn write_pred(path: &Path, frames: &[FramePrediction]) {
    let mut w = BufWriter::new(File::create(path).unwrap());
    write_pred_stream(&mut w, frames).unwrap();
}

fn synth_into(dir: &Path, extra: &[&str]) {
    let (gt, pred, vocab) = (
        p(dir, "gt.jsonl"),
        p(dir, "pred.jsonl"),
        p(dir, "vocab.json"),
    );
    let mut args = vec![
        "synth", "--videos", "3", "--frames", "30", "--gt", &gt, "--pred", &pred, "--vocab", &vocab,
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn more_gt_than_queries_exits_three_with_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (s1, o1, s2, o2) = (
        bx(0.1, 0.1, 0.2, 0.2),
        bx(0.3, 0.1, 0.4, 0.2),
        bx(0.5, 0.5, 0.6, 0.6),
        bx(0.7, 0.5, 0.8, 0.6),
    );
    let both = vec![
        triplet((0, 0, s1), Some((1, 0, o1)), 0),
        triplet((2, 0, s2), Some((3, 0, o2)), 0),
    ];
    write_gt(
        &d.join("gt.jsonl"),
        &[
            gt_frame("busy", 0, vec![both[0].clone()]),
            gt_frame("busy", 1, both),
        ],
    );
    let q = |f| pred_frame("busy", f, vec![query(0, 1, 1, (0, 0, 0), s1, o1)]);
    write_pred(&d.join("pred.jsonl"), &[q(0), q(1)]);
    let out = tcdsg(
        &[
            "match",
            "--gt",
            &p(d, "gt.jsonl"),
            "--pred",
            &p(d, "pred.jsonl"),
            "--out",
            &p(d, "m.jsonl"),
        ],
        None,
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(3), "{err}");
    assert!(err.contains("\"busy\"") && err.contains("frame 1"), "{err}");
    assert!(!d.join("m.jsonl").exists(), "failed runs leave no output");
}

#[test]
fn fragmented_query_reports_three_tracklets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (s, o) = (bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7));
    let gt: Vec<_> = (0..10)
        .map(|f| gt_frame("frag", f, vec![triplet((0, 0, s), Some((1, 1, o)), 0)]))
        .collect();
    let preds: Vec<_> = (0..10)
        .map(|f| {
            pred_frame(
                "frag",
                f,
                vec![query(0, 2, 2, (0, 1, u32::from(f == 4)), s, o)],
            )
        })
        .collect();
    write_gt(&d.join("gt.jsonl"), &gt);
    write_pred(&d.join("pred.jsonl"), &preds);
    ok(&[
        "eval",
        "--gt",
        &p(d, "gt.jsonl"),
        "--pred",
        &p(d, "pred.jsonl"),
        "--k",
        "1,5",
        "--out",
        &p(d, "m.json"),
    ]);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(m["counts"]["pred_tracklets_by_query"]["frag"]["0"], 3);
    assert_eq!(m["counts"]["pred_tracklets"], 3);
    assert_eq!(m["counts"]["gt_tracklets"], 1);
    // The [5, 9] piece (score 1, tIoU 0.5) is eligible; [0, 3] is not.
    assert_eq!(m["tR"]["5"], 1.0);

    ok(&[
        "assemble",
        "--pred",
        &p(d, "pred.jsonl"),
        "--out",
        &p(d, "t.json"),
    ]);
    let tracklets = tcdsg::schema_io::read_tracklets(&d.join("t.json")).unwrap();
    let spans: Vec<(u32, u32)> = tracklets
        .iter()
        .map(|t| (t.interval.start(), t.interval.end()))
        .collect();
    assert_eq!(spans, [(0, 3), (4, 4), (5, 9)]);
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d, &["--lanes", "3"]);
    let pred = p(d, "pred.jsonl");
    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, r#"{"topk": 1, "gap": 0}"#).unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    let out = |name: &str| p(d, name);
    let via_config = ok(&[
        "--config",
        &cfg,
        "assemble",
        "--pred",
        &pred,
        "--out",
        &out("a.json"),
    ]);
    let explicit_one = ok(&[
        "assemble",
        "--pred",
        &pred,
        "--topk",
        "1",
        "--out",
        &out("b.json"),
    ]);
    let overridden = ok(&[
        "--config",
        &cfg,
        "assemble",
        "--pred",
        &pred,
        "--topk",
        "20",
        "--out",
        &out("c.json"),
    ]);
    let explicit_twenty = ok(&[
        "assemble",
        "--pred",
        &pred,
        "--topk",
        "20",
        "--out",
        &out("d.json"),
    ]);
    assert_eq!(via_config, explicit_one);
    assert_eq!(overridden, explicit_twenty);
    assert_ne!(via_config, overridden);
    assert_eq!(
        std::fs::read(d.join("a.json")).unwrap(),
        std::fs::read(d.join("b.json")).unwrap()
    );

    std::fs::write(d.join("bad.json"), r#"{"topk": "many"}"#).unwrap();
    let bad = tcdsg(
        &[
            "--config",
            &p(d, "bad.json"),
            "assemble",
            "--pred",
            &pred,
            "--out",
            &out("e.json"),
        ],
        None,
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn pseudo_labeling_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d, &[]);
    ok(&[
        "pseudo-label",
        "--gt",
        &p(d, "gt.jsonl"),
        "--out",
        &p(d, "l1.jsonl"),
    ]);
    ok(&[
        "pseudo-label",
        "--gt",
        &p(d, "l1.jsonl"),
        "--out",
        &p(d, "l2.jsonl"),
    ]);
    assert_eq!(
        std::fs::read(d.join("l1.jsonl")).unwrap(),
        std::fs::read(d.join("l2.jsonl")).unwrap()
    );
}

#[test]
fn full_pipeline_on_clean_synth_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d, &[]);
    let (gt, pred, vocab) = (p(d, "gt.jsonl"), p(d, "pred.jsonl"), p(d, "vocab.json"));
    ok(&[
        "pseudo-label",
        "--gt",
        &gt,
        "--vocab",
        &vocab,
        "--out",
        &p(d, "l.jsonl"),
    ]);
    let m = ok(&[
        "match",
        "--gt",
        &p(d, "l.jsonl"),
        "--pred",
        &pred,
        "--vocab",
        &vocab,
        "--out",
        &p(d, "m.jsonl"),
    ]);
    assert!(m.contains("0 diagnostics"), "{m}");
    ok(&[
        "assemble",
        "--pred",
        &pred,
        "--vocab",
        &vocab,
        "--out",
        &p(d, "t.json"),
    ]);
    let e = ok(&[
        "eval",
        "--gt",
        &gt,
        "--pred",
        &pred,
        "--tracklets",
        &p(d, "t.json"),
        "--vocab",
        &vocab,
        "--out",
        &p(d, "e.json"),
    ]);
    assert!(
        e.contains("R@20=1.0000") && e.contains("tR@20=1.0000"),
        "{e}"
    );
}

#[test]
fn help_documents_every_flag() {
    let top = ok(&["--help"]);
    for word in [
        "--config",
        "--threads",
        "synth",
        "pseudo-label",
        "match",
        "assemble",
        "eval",
        "losses",
    ] {
        assert!(top.contains(word), "top-level help lacks {word}");
    }
    let expected: [(&str, &[&str]); 6] = [
        (
            "synth",
            &[
                "--seed",
                "--videos",
                "--frames",
                "--agents",
                "--queries",
                "--jitter",
                "--flip",
                "--drop",
                "--script",
                "--truth",
            ],
        ),
        ("pseudo-label", &["--gt", "--iou", "--out"]),
        (
            "match",
            &[
                "--gt",
                "--pred",
                "--weights",
                "--penalty",
                "--penalty-scope",
                "--out",
            ],
        ),
        ("assemble", &["--pred", "--topk", "--gap", "--out"]),
        (
            "eval",
            &[
                "--gt",
                "--pred",
                "--tracklets",
                "--k",
                "--iou",
                "--tiou",
                "--frame-avg",
                "--tracklet-avg",
                "--subsample",
            ],
        ),
        ("losses", &["--pairs", "--loss-config", "--out"]),
    ];
    for (cmd, flags) in expected {
        let help = ok(&[cmd, "--help"]);
        for flag in flags {
            assert!(help.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn thread_count_comes_from_flag_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d, &["--jitter", "0.03"]);
    let args = |out: &str| {
        vec![
            "eval".to_owned(),
            "--gt".into(),
            p(d, "gt.jsonl"),
            "--pred".into(),
            p(d, "pred.jsonl"),
            "--out".into(),
            p(d, out),
        ]
    };
    let run = |out: &str, env: Option<&str>, extra: &[&str]| {
        let mut a: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        a.extend(args(out));
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        tcdsg(&a, env)
    };
    assert!(run("one.json", Some("1"), &[]).status.success());
    assert!(run("four.json", Some("4"), &[]).status.success());
    assert!(run("flag.json", Some("garbage"), &["--threads", "2"])
        .status
        .success());
    let one = std::fs::read(d.join("one.json")).unwrap();
    assert_eq!(one, std::fs::read(d.join("four.json")).unwrap());
    assert_eq!(one, std::fs::read(d.join("flag.json")).unwrap());
    assert_eq!(run("x.json", Some("0"), &[]).status.code(), Some(1));
    assert_eq!(run("x.json", Some("garbage"), &[]).status.code(), Some(1));
}

#[test]
fn exit_codes_separate_usage_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(tcdsg(&["eval", "--bogus"], None).status.code(), Some(1));
    assert_eq!(
        tcdsg(
            &[
                "eval",
                "--gt",
                "x",
                "--pred",
                "y",
                "--k",
                "0",
                "--out",
                &p(d, "o")
            ],
            None
        )
        .status
        .code(),
        Some(1)
    );
    let missing = tcdsg(
        &[
            "assemble",
            "--pred",
            &p(d, "absent.jsonl"),
            "--out",
            &p(d, "o.json"),
        ],
        None,
    );
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(d.join("broken.jsonl"), "{not json}\n").unwrap();
    let broken = tcdsg(
        &[
            "assemble",
            "--pred",
            &p(d, "broken.jsonl"),
            "--out",
            &p(d, "o.json"),
        ],
        None,
    );
    assert_eq!(broken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&broken.stderr).contains(":1"));
}
