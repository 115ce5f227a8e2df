use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn liteconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liteconv")).args(args).output().unwrap()
}

fn fixture(name: &str) -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/").to_string() + name
}

fn scratch(name: &str) -> PathBuf {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path().join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('\t'))
}

fn train(cfg: &str, out: &Path) -> Output {
    let o = liteconv(&["train", "--config", &fixture(cfg), "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

#[test]
fn train_eval_bench_export_on_fixture_files() {
    let art = scratch("doc.fcnv");
    let trained = train("docclass.cfg", &art);
    let text = stdout(&trained);
    assert_eq!(value(&text, "task"), Some("doc_class"));
    let acc: f64 = value(&text, "metric.accuracy").unwrap().parse().unwrap();
    assert!(acc >= 0.9, "{text}");
    let bytes: u64 = value(&text, "artifact.bytes").unwrap().parse().unwrap();
    assert_eq!(bytes, std::fs::metadata(&art).unwrap().len());

    let eval = liteconv(&["eval", art.to_str().unwrap(), "--config", &fixture("docclass.cfg")]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert_eq!(value(&stdout(&eval), "metric.accuracy"), value(&text, "metric.accuracy"));

    let bench = liteconv(&["bench", art.to_str().unwrap(), "--input-len", "64"]);
    assert!(bench.status.success(), "{}", stderr(&bench));
    let b = stdout(&bench);
    assert_eq!(value(&b, "latency.runs"), Some("50"));
    assert_eq!(value(&b, "file_size_bytes").unwrap().parse::<u64>().unwrap(), bytes);
    assert!(value(&b, "memory.peak_forward_bytes").unwrap().parse::<u64>().unwrap() > 0);

    let dump = scratch("doc.txt");
    let export = liteconv(&["export", art.to_str().unwrap(), "--out", dump.to_str().unwrap()]);
    assert!(export.status.success(), "{}", stderr(&export));
    let dumped = std::fs::read_to_string(&dump).unwrap();
    assert!(dumped.starts_with("# "));
    assert!(dumped.contains("tokenizer=byte"));
}

#[test]
fn intent_slot_and_nwp_fixtures_train() {
    for (cfg, keys) in [
        ("intent_slot.cfg", &["metric.intent_f1", "metric.slot_f1"][..]),
        ("nwp.cfg", &["metric.ppl", "metric.ks", "metric.wpr", "baseline.unigram_ppl"][..]),
    ] {
        let art = scratch(&cfg.replace(".cfg", ".fcnv"));
        let text = stdout(&train(cfg, &art));
        for k in keys {
            assert!(value(&text, k).is_some(), "{cfg}: {k} missing in\n{text}");
        }
        let eval = liteconv(&["eval", art.to_str().unwrap(), "--config", &fixture(cfg)]);
        assert!(eval.status.success(), "{}", stderr(&eval));
    }
}

#[test]
fn missing_checksum_is_an_integrity_failure() {
    let art = scratch("cut.fcnv");
    train("docclass.cfg", &art);
    let bytes = std::fs::read(&art).unwrap();
    std::fs::write(&art, &bytes[..bytes.len() - 8]).unwrap();
    for cmd in ["bench", "eval", "export"] {
        let o = liteconv(&[cmd, art.to_str().unwrap(), "--config", &fixture("docclass.cfg")][..if cmd == "eval" { 4 } else { 2 }]);
        assert_eq!(o.status.code(), Some(4), "{cmd}: {}", stderr(&o));
        assert!(stderr(&o).contains("cut.fcnv"), "{cmd}: {}", stderr(&o));
        assert!(o.stdout.is_empty());
    }
}

#[test]
fn exit_codes_by_failure_kind() {
    let bad_cfg = scratch("bad.cfg");
    std::fs::write(&bad_cfg, "task = doc_class\nencoder.wings = 2\n").unwrap();
    let o = liteconv(&["analyze", "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));

    assert_eq!(liteconv(&["train", "--task", "doc_class"]).status.code(), Some(2));
    assert_eq!(liteconv(&["nonsense"]).status.code(), Some(2));
    assert_eq!(liteconv(&["--help"]).status.code(), Some(0));

    let o = liteconv(&["bench", scratch("absent.fcnv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let bad_data = scratch("bad_docs.tsv");
    std::fs::write(&bad_data, "1\tfine\nmaybe\tnot a label\n").unwrap();
    let cfg = scratch("bad_data.cfg");
    std::fs::write(&cfg, format!("task = doc_class\ndata.train = {}\n", bad_data.display())).unwrap();
    let o = liteconv(&["train", "--config", cfg.to_str().unwrap(), "--seed", "0", "--out", scratch("x.fcnv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let junk = scratch("junk.fcnv");
    std::fs::write(&junk, b"not an artifact at all").unwrap();
    assert_eq!(liteconv(&["export", junk.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn analyze_reference_docclass() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/ref_docclass.cfg");
    let o = liteconv(&["analyze", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let params = |row: &str| -> u64 { value(&text, &format!("{row}.params")).unwrap().parse().unwrap() };
    let ladder = ["conv_glu", "conv_gelu", "separable_gelu", "separable_bottleneck_gelu"].map(params);
    assert!(ladder.windows(2).all(|w| w[1] < w[0]), "{ladder:?}");
    assert!(params("recurrent") > 0);
}

#[test]
fn ladder_for_one_task() {
    let o = liteconv(&["ladder", "--seed", "3", "--task", "doc_class", "--steps", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.contains(".params\t")).count(), 5);
    assert!(text.lines().all(|l| l.starts_with("ladder.doc_class.")));
}
