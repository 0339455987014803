use std::process::{Command, Output};

fn cmrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmrl")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "hp.gamma = 0.9\nhp.lr = 0.1\n").unwrap();
    let ck = dir.path().join("x.ckpt");
    let out = cmrl(&["pretrain", "--config", conf.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("hp.lr"), "{}", stderr(&out));
    assert!(!ck.exists());
}

#[test]
fn missing_checkpoint_and_bad_variant_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let csv = dir.path().join("out.csv");
    let out = cmrl(&["adapt", "--checkpoint", missing.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("none.ckpt"));
    let out = cmrl(&["adapt", "--checkpoint", missing.to_str().unwrap(), "--variant", "maml", "--out", "x.csv"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("maml"));
}

#[test]
fn report_without_post_fault_rows_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("pre.csv");
    std::fs::write(&csv, format!("{}\nr-nominal-s0,nominal,0,pretrain,0,200,-1.000000\n", cmrl::harness::CSV_HEADER)).unwrap();
    let rep = dir.path().join("rep");
    let out = cmrl(&["report", "--csv", csv.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!rep.join("summary.csv").exists());
}

#[test]
fn report_summarizes_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("in.csv");
    let rows = [
        "t-baseline-s0,baseline,0,post_fault,0,200,-1.000000",
        "t-baseline-s1,baseline,1,post_fault,0,200,-3.000000",
        "t-baseline-s0,baseline,0,post_fault,1,400,-2.000000",
        "t-baseline-s1,baseline,1,post_fault,1,400,-2.000000",
    ];
    std::fs::write(&csv, format!("{}\n{}\n", cmrl::harness::CSV_HEADER, rows.join("\n"))).unwrap();
    let rep = dir.path().join("rep");
    let out = cmrl(&["report", "--csv", csv.to_str().unwrap(), "--out", rep.to_str().unwrap(), "--window", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = std::fs::read_to_string(rep.join("summary.csv")).unwrap();
    assert_eq!(
        summary,
        "variant,episode_index,mean_reward,reward_std,n_seeds,smoothed_mean\n\
         baseline,0,-2.000000,1.414214,2,-2.000000\n\
         baseline,1,-2.000000,0.000000,2,-2.000000\n"
    );
}
