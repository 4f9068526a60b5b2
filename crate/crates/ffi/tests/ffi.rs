use std::ffi::{c_char, CStr, CString};
use std::ptr;

use hearsay_ffi::*;

const SCENARIO: &str = r#"{"n":4,"t":1,"seed":7,"agents":[{"id":3,"kind":"BYZ_OVERDRAFT"}],
  "script":[{"tick":0,"agent":0,"action":{"pay":{"to":1,"amount":10}}},
            {"tick":2,"agent":3,"action":{"pay":{"to":0,"amount":1}}}]}"#;

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { hearsay_string_free(s) };
    out
}

fn last_error() -> String {
    let p = hearsay_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_sim(json: &str) -> (HearsayStatus, *mut HearsaySim) {
    let c = CString::new(json).unwrap();
    let mut sim = ptr::null_mut();
    let st = unsafe { hearsay_sim_new_from_json(c.as_ptr(), false, 0, &mut sim) };
    (st, sim)
}

#[test]
fn run_check_and_trace_round_trip() {
    let (st, sim) = new_sim(SCENARIO);
    assert_eq!(st, HearsayStatus::Ok);
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(hearsay_sim_trace_jsonl(sim, &mut s), HearsayStatus::NotRun);
        assert_eq!(hearsay_sim_run(sim), HearsayStatus::Ok);

        let mut report = ptr::null_mut();
        assert_eq!(hearsay_sim_check(sim, &mut report), HearsayStatus::Ok);
        let direct = take(report);
        let v: serde_json::Value = serde_json::from_str(&direct).unwrap();
        assert!(v["checks"].as_array().unwrap().iter().all(|c| c["status"] == "PASS"));

        let mut trace = ptr::null_mut();
        assert_eq!(hearsay_sim_trace_jsonl(sim, &mut trace), HearsayStatus::Ok);
        let trace = CString::new(take(trace)).unwrap();
        let mut offline = ptr::null_mut();
        assert_eq!(hearsay_check_trace(trace.as_ptr(), &mut offline), HearsayStatus::Ok);
        assert_eq!(take(offline), direct);

        // The overdraft is bad: only n*eps leaves the overdrafter.
        let mut b = 0u64;
        assert_eq!(hearsay_sim_balance(sim, 0, 3, &mut b), HearsayStatus::Ok);
        assert_eq!(b, 996);
        assert_eq!(hearsay_sim_balance(sim, 0, 9, &mut b), HearsayStatus::OutOfRange);
        hearsay_sim_free(sim);
    }
}

#[test]
fn explicit_seed_changes_the_run() {
    let c = CString::new(SCENARIO).unwrap();
    let traces: Vec<String> = [1u64, 2]
        .iter()
        .map(|&seed| unsafe {
            let mut sim = ptr::null_mut();
            assert_eq!(hearsay_sim_new_from_json(c.as_ptr(), true, seed, &mut sim), HearsayStatus::Ok);
            assert_eq!(hearsay_sim_run(sim), HearsayStatus::Ok);
            let mut t = ptr::null_mut();
            hearsay_sim_trace_jsonl(sim, &mut t);
            hearsay_sim_free(sim);
            take(t)
        })
        .collect();
    assert_ne!(traces[0], traces[1]);
}

#[test]
fn invalid_inputs_report_status_and_message() {
    let (st, sim) = new_sim(r#"{"n":3,"t":1}"#);
    assert_eq!(st, HearsayStatus::InvalidConfig);
    assert!(sim.is_null());
    assert!(last_error().contains("3t < n"));

    assert_eq!(new_sim("{not json").0, HearsayStatus::Parse);

    unsafe {
        let mut sim = ptr::null_mut();
        assert_eq!(hearsay_sim_new_from_json(ptr::null(), false, 0, &mut sim), HearsayStatus::NullPointer);
        assert_eq!(hearsay_sim_run(ptr::null_mut()), HearsayStatus::NullPointer);
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(
            hearsay_sim_new_from_json(bad.as_ptr().cast(), false, 0, &mut sim),
            HearsayStatus::InvalidUtf8
        );
        let mut r = ptr::null_mut();
        let junk = CString::new("garbage\n").unwrap();
        assert_eq!(hearsay_check_trace(junk.as_ptr(), &mut r), HearsayStatus::Parse);
        hearsay_sim_free(ptr::null_mut());
        hearsay_string_free(ptr::null_mut());
    }
}

#[test]
fn flipped_verdict_trace_fails() {
    let (_, sim) = new_sim(SCENARIO);
    unsafe {
        hearsay_sim_run(sim);
        let mut t = ptr::null_mut();
        hearsay_sim_trace_jsonl(sim, &mut t);
        hearsay_sim_free(sim);
        let text = take(t);
        let mut done = false;
        let flipped: String = text
            .lines()
            .map(|l| {
                let l = if !done && l.contains(r#""kind":"EXECUTE""#) && l.contains(r#""agent":2,"#) {
                    done = true;
                    l.replace(r#""verdict":"committed""#, r#""verdict":"bad""#)
                } else {
                    l.to_owned()
                };
                l + "\n"
            })
            .collect();
        let c = CString::new(flipped).unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(hearsay_check_trace(c.as_ptr(), &mut r), HearsayStatus::CheckFailed);
        assert!(take(r).contains("check_agreement"));
    }
}

#[test]
fn digest_matches_core() {
    let tx = r#"{"initiator":1,"recipient":2,"value":5,"seq":1,"deps":[],"fees":[]}"#;
    let want = serde_json::from_str::<hearsay::types::Transaction>(tx).unwrap().digest().to_hex();
    let c = CString::new(tx).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { hearsay_tx_digest(c.as_ptr(), &mut out) }, HearsayStatus::Ok);
    let got = take(out);
    assert_eq!(got, want);
    assert_eq!(got.len(), 64);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/hearsay.h");
    let src = format!("#include \"{header}\"\nint main(void) {{ return (int)HEARSAY_STATUS_OK; }}\n");
    let dir = std::env::temp_dir().join(format!("hearsay-h-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("t.c");
    std::fs::write(&file, src).unwrap();
    let Ok(o) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&file)
        .output()
    else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
