use std::path::Path;
use std::process::{Command, Output};

fn convres(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convres"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn toy_workflow_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&convres(&["toy-data", "data"], d));
    let conf = ["--config", "data/toy.conf"];
    let with = |rest: &[&str]| -> Vec<String> { conf.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        convres(&args.iter().map(String::as_str).collect::<Vec<_>>(), d)
    };

    let shown = ok(&run(&["--set", "mu=1000", "show-config"]));
    assert!(shown.contains("mu = 1000\n"), "{shown}");
    assert!(shown.contains("variant = quretec\n"));

    ok(&run(&["--set", "index=idx", "index"]));
    ok(&run(&["--set", "variant=original:cur+prev", "--set", "index=idx", "resolve", "--out", "q.jsonl"]));
    ok(&run(&["--set", "index=idx", "search", "--queries", "q.jsonl", "--out", "a.run"]));
    ok(&run(&["rerank", "--run", "a.run", "--queries", "q.jsonl", "--out", "b.run"]));
    ok(&run(&["fuse", "--run", "a.run", "--run", "b.run", "--out", "c.run"]));
    let printed = ok(&run(&["eval", "--run", "a.run", "--run", "c.run", "--queries", "q.jsonl", "--out", "rep"]));
    assert!(printed.contains("a.run: NDCG@3"), "{printed}");
    let txt = std::fs::read_to_string(d.join("rep.txt")).unwrap();
    assert!(txt.contains("== intrinsic"));
    assert!(d.join("rep.json").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&convres(&["toy-data", "."], d));

    // unknown key, bad value, missing input file
    for args in [
        vec!["--set", "bogus=1", "show-config"],
        vec!["--set", "mu=-3", "show-config"],
        vec!["--config", "toy.conf", "--set", "qrels=absent.txt", "eval", "--run", "x", "--out", "r"],
    ] {
        let out = convres(&args, d);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    assert!(!d.join("r.json").exists());

    // a checkpoint whose content hash no longer matches is rejected as input
    let out = convres(&["--config", "toy.conf", "--set", "model=m.json", "--set", "max_epochs=1", "train"], d);
    ok(&out);
    let raw = std::fs::read_to_string(d.join("m.json")).unwrap();
    std::fs::write(d.join("m.json"), raw.replacen("\"embed_dim\":64", "\"embed_dim\":32", 1)).unwrap();
    let out = convres(&["--config", "toy.conf", "--set", "model=m.json", "resolve", "--out", "q.jsonl"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("q.jsonl").exists());
}
