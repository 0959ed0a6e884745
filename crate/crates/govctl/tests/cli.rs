mod common;

use common::{clone_deployment, govctl, http_exchange, post_request, Server};
use serde_json::Value;
use ssgov_core::attest::ResponseEnvelope;
use ssgov_core::fixtures::{self, who};
use ssgov_core::protocol::paths;
use ssgov_endpoint::demo::Scenario;

const INSERT_EXAM: &str = "INSERT exam_register VALUES (candidate = 'D1', passed_at = 2026-09-01, by = 'PRES')";

fn si() -> Server {
    Server::start(Scenario::Si, fixtures::si_time())
}

#[test]
fn usage_errors_exit_64_and_help_exits_0() {
    assert_eq!(govctl(&["decide"]).code, 64);
    assert_eq!(govctl(&["frobnicate"]).code, 64);
    assert_eq!(govctl(&["decide", "--request", "drive", "--at", "someday"]).code, 64);
    let help = govctl(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("Exit codes"));
}

#[test]
fn unreachable_server_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let demo = ssgov_endpoint::demo::init(dir.path(), Scenario::Si, "127.0.0.1:0".parse().unwrap()).unwrap();
    let run = govctl(&[
        "--server",
        "http://127.0.0.1:9",
        "--identity",
        demo.identity_path(who::DRIVER).to_str().unwrap(),
        "decide",
        "--request",
        "drive",
    ]);
    assert_eq!(run.code, 1, "{run:?}");
}

#[test]
fn sauna_decisions_by_voyage_day() {
    let s = Server::start(Scenario::Ship, fixtures::voyage_day(1));
    let ask = |day: &str| {
        s.govctl(
            who::EVE,
            &["decide", "--request", "enter_sauna", "--at", day, "--companion", "none", "--param", "sauna_session=F"],
        )
    };
    let run = ask("day3");
    assert_eq!(run.code, 0, "{run:?}");
    assert!(run.stdout.starts_with("PERMIT"));
    assert!(run.stdout.contains("sauna_fee_settled"));
    let run = ask("day1");
    assert_eq!(run.code, 2, "{run:?}");
    assert!(run.stdout.contains("missing   enter_sauna_ok"), "{}", run.stdout);
}

#[test]
fn submit_deny_permit_and_execution_failure() {
    let s = si();
    let before = s.service.store().digest();
    let run = s.govctl(who::MEMBER, &["submit", "--text", INSERT_EXAM]);
    assert_eq!(run.code, 2, "{run:?}");
    assert!(run.stdout.contains("exam_entry_ok"));
    assert_eq!(s.service.store().digest(), before);

    let run = s.govctl(who::PRESIDENT, &["submit", "--text", INSERT_EXAM]);
    assert_eq!(run.code, 0, "{run:?}");
    assert!(run.stdout.contains("event"), "{}", run.stdout);

    let run = s.govctl(who::PRESIDENT, &["submit", "--text", INSERT_EXAM]);
    assert_eq!(run.code, 1, "{run:?}");
    assert!(run.stderr.contains("DUPLICATE_KEY"));

    let run = s.govctl(who::PRESIDENT, &["submit", "--text", "SELECT * FROM rc"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("UNKNOWN_KEYWORD"));
}

#[test]
fn submit_reads_command_files() {
    let s = si();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("read.cmd");
    std::fs::write(&file, "READ rc FIELDS nin, adr WHERE nin = 'P1'\n").unwrap();
    let run = s.govctl(who::PARENT_1, &["submit", file.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{run:?}");
    assert!(run.stdout.contains("(1 row)"), "{}", run.stdout);
}

#[test]
fn canonical_json_output_is_the_signed_response() {
    let s = si();
    let run = s.govctl(who::MEMBER, &["--output", "canonical-json", "submit", "--text", INSERT_EXAM]);
    assert_eq!(run.code, 2);
    let raw = run.stdout.strip_suffix('\n').unwrap();
    let resp = ResponseEnvelope::from_json(raw.as_bytes()).unwrap();
    resp.verify(s.service.keys()).unwrap();
    assert_eq!(resp.canonical_bytes(), raw.as_bytes());
}

#[test]
fn receipts_verify_offline_and_tampering_is_caught() {
    let mut s = si();
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("receipt.json");
    let run = s.govctl(who::PRESIDENT, &["submit", "--text", INSERT_EXAM, "--receipt-out", bundle.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{run:?}");
    let keys = s.key_dir().to_path_buf();
    s.stop();

    let run = govctl(&["--keys", keys.to_str().unwrap(), "receipt-verify", bundle.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{run:?}");
    assert!(run.stdout.contains("valid: permit=true"));

    let mut v: Value = serde_json::from_slice(&std::fs::read(&bundle).unwrap()).unwrap();
    let sig = v["receipt"]["signature"].as_str().unwrap().to_string();
    let flipped = match sig.strip_prefix('0') {
        Some(rest) => format!("1{rest}"),
        None => format!("0{}", &sig[1..]),
    };
    v["receipt"]["signature"] = Value::String(flipped);
    std::fs::write(&bundle, serde_json::to_vec(&v).unwrap()).unwrap();
    let run = govctl(&["--keys", keys.to_str().unwrap(), "receipt-verify", bundle.to_str().unwrap()]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("signature invalid"), "{}", run.stderr);

    let run = govctl(&["receipt-verify", bundle.to_str().unwrap()]);
    assert_eq!(run.code, 64, "keys are required");
}

#[test]
fn admin_commands_need_an_official() {
    let s = si();
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("dogs.json");
    std::fs::write(
        &schema,
        r#"{"registry_id":"dog_register","key_field":"tag","fields":[
            {"name":"tag","type":"string","nullable":false},
            {"name":"owner","type":"national_id","nullable":false}]}"#,
    )
    .unwrap();
    let run = s.govctl(who::PRESIDENT, &["define-registry", schema.to_str().unwrap()]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("NOT_AN_OFFICIAL"), "{}", run.stderr);
    let run = s.govctl(who::OFFICIAL, &["define-registry", schema.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{run:?}");

    let run = s.govctl(who::OFFICIAL, &["gazette"]);
    assert_eq!(run.code, 0);
    assert!(run.stdout.contains("registry:dog_register"), "{}", run.stdout);
    assert!(run.stdout.contains("server key sovereign-1"));
}

#[test]
fn keygen_registers_a_usable_key() {
    let s = si();
    let dir = tempfile::tempdir().unwrap();
    let valid_from = ssgov_core::canonical::rfc3339::format(&(s.now() - chrono::Duration::hours(1)));
    let run = s.govctl(
        who::OFFICIAL,
        &["keygen", "--owner", "NEWCOMER", "--out", dir.path().to_str().unwrap(), "--valid-from", &valid_from, "--register"],
    );
    assert_eq!(run.code, 0, "{run:?}");
    let key = dir.path().join("newcomer-1.key.pem");
    assert!(key.exists());
    // the new key authenticates; the newcomer holds no read rights
    let run = govctl(&[
        "--server",
        &s.url(),
        "--identity",
        key.to_str().unwrap(),
        "--timestamp",
        &ssgov_core::canonical::rfc3339::format(&s.now()),
        "submit",
        "--text",
        "READ rc FIELDS nin WHERE TRUE",
    ]);
    assert_eq!(run.code, 2, "{run:?}");
}

#[test]
fn watch_subscribes_and_lists_notices() {
    let s = si();
    let run = s.govctl(who::DRIVER, &["watch", "--request", "drive", "--interval", "1"]);
    assert_eq!(run.code, 0, "{run:?}");
    assert!(run.stdout.starts_with("subscribed "));
    s.service.run_cycle().unwrap();
    s.clock.advance(chrono::Duration::seconds(5));
    assert_eq!(s.govctl(who::PRESIDENT, &["submit", "--text", INSERT_EXAM]).code, 0);
    s.clock.advance(chrono::Duration::seconds(5));
    assert_eq!(s.service.run_cycle().unwrap().len(), 1);

    let run = s.govctl(who::DRIVER, &["watch"]);
    assert_eq!(run.code, 0);
    assert!(run.stdout.contains("permission granted: drive"), "{}", run.stdout);
    let run = s.govctl(who::PARENT_1, &["watch"]);
    assert_eq!(run.stdout, "", "notices are private to their owner");
}

/// The CLI and a raw protocol client get the same bytes for the same
/// request from two identical deployments.
#[test]
fn terminal_equipment_independence() {
    let a = si();
    let dir = tempfile::tempdir().unwrap();
    let b = Server::serve(clone_deployment(&a.demo, dir.path()), a.now());

    let env = a.envelope(who::PRESIDENT, paths::COMMAND, INSERT_EXAM);
    let env_file = dir.path().join("envelope.json");
    std::fs::write(&env_file, env.canonical_bytes()).unwrap();

    let (_, raw_body) = http_exchange(a.addr, &post_request(paths::COMMAND, &env.canonical_bytes())).unwrap();
    let run = b.govctl(who::PRESIDENT, &["--output", "canonical-json", "submit", "--envelope", env_file.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{run:?}");
    assert_eq!(run.stdout.as_bytes(), [raw_body.as_slice(), b"\n"].concat());
    assert_eq!(a.service.store().digest(), b.service.store().digest());
}
