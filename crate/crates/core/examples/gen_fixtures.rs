//! Regenerates the bundled fixture corpora.
//!
//! ```text
//! cargo run -p tracefold-core --example gen_fixtures -- fixtures
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tracefold_core::normalize::RuleSet;
use tracefold_core::optimize::{records_to_jsonl, run_loop, LoopConfig, ScriptedAnalyst};
use tracefold_core::trace::{corpus_to_jsonl, Execution, ToolCall, TraceCorpus};

fn call(tool: &str, args: &[(&str, String)]) -> ToolCall {
    args.iter()
        .fold(ToolCall::new(tool, 0), |c, (k, v)| c.with_arg(*k, v.clone()))
}

fn execution(task_id: String, calls: Vec<ToolCall>) -> Execution {
    let mut e = Execution::from_tools(task_id, std::iter::empty::<String>());
    e.steps = calls
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.index = i;
            c
        })
        .collect();
    e
}

/// `shared` executions open with `prefix`, then 1..=3 random calls; the rest
/// start with a per-user lookup and one of four tails.
fn planted(prefix: &[&str], shared: usize, total: usize, seed: u64) -> TraceCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suffix_tools = ["list_files", "read_file", "write_file", "share", "delete", "rename"];
    let tails = [
        ["get_orders", "refund"],
        ["get_orders", "cancel"],
        ["update_profile", "notify"],
        ["reset_password", "notify"],
    ];
    let mut execs = Vec::new();
    for i in 0..shared {
        let mut calls: Vec<ToolCall> = prefix.iter().map(|t| call(t, &[])).collect();
        for _ in 0..rng.random_range(1..=3) {
            let tool = suffix_tools.choose(&mut rng).unwrap();
            calls.push(call(tool, &[("path", format!("/doc/{}", rng.random_range(0..50)))]));
        }
        execs.push(execution(format!("p{i:03}"), calls));
    }
    for i in shared..total {
        let uid = rng.random_range(1000..10000).to_string();
        let mut calls = vec![call("lookup_user", &[("user_id", uid.clone())])];
        for t in tails.choose(&mut rng).unwrap() {
            calls.push(call(t, &[("user_id", uid.clone())]));
        }
        execs.push(execution(format!("u{i:03}"), calls));
    }
    TraceCorpus::new("planted", execs).unwrap()
}

/// Four workflows run for five users each; user ids are the only difference.
fn uid_corpus() -> TraceCorpus {
    let workflows: [&[&str]; 4] = [
        &["lookup_user", "get_orders", "refund"],
        &["lookup_user", "get_profile", "get_orders", "cancel"],
        &["lookup_user", "update_profile"],
        &["get_profile", "lookup_user", "reset_password", "notify"],
    ];
    let mut execs = Vec::new();
    for (w, tools) in workflows.iter().enumerate() {
        for u in 0..5 {
            let uid = (4100 + 37 * u + w).to_string();
            let calls = tools.iter().map(|t| call(t, &[("user_id", uid.clone())])).collect();
            execs.push(execution(format!("w{w}u{u}"), calls));
        }
    }
    TraceCorpus::new("uid", execs).unwrap()
}

const UID_SCRIPT: [&str; 3] = [
    r#"{"actions":[{"action":"regex_sub","pattern":"user_id=\\d+","replacement":"user_id={UID}","scope":"arg_values"}]}"#,
    r#"{"actions":[{"action":"set_semantic_type","match":"get_*","kind":"accessor"},{"action":"set_domain","match":"re:[","domain":"X"}]}"#,
    r#"{"actions":[]}"#,
];

struct AppWorld {
    rng: ChaCha8Rng,
    users: Vec<(String, String)>,
}

impl AppWorld {
    fn id(&mut self) -> String {
        self.rng.random_range(100..100_000).to_string()
    }

    fn word(&mut self) -> String {
        [
            "jazz",
            "rock",
            "focus",
            "summer",
            "chill",
            "road trip",
            "piano",
            "indie",
        ]
        .choose(&mut self.rng)
        .unwrap()
        .to_string()
    }

    /// Paged listing: the same call with an increasing page index.
    fn paged(&mut self, tool: &str, token: &str, extra: &[(&str, String)], pages: usize) -> Vec<ToolCall> {
        (0..pages)
            .map(|p| {
                let mut args = vec![("access_token", token.to_string()), ("page_index", p.to_string())];
                args.extend(extra.iter().cloned());
                call(tool, &args)
            })
            .collect()
    }

    fn login(&mut self, app: &str, user: usize) -> (Vec<ToolCall>, String) {
        let (name, pwd) = self.users[user].clone();
        let token = format!("tok-{}-{}", app, self.id());
        (
            vec![call(&format!("{app}.login"), &[("username", name), ("password", pwd)])],
            token,
        )
    }

    fn repeat(&mut self, tool: &str, key: &str, token: &str, n: usize) -> Vec<ToolCall> {
        (0..n)
            .map(|_| {
                let id = self.id();
                call(tool, &[("access_token", token.to_string()), (key, id)])
            })
            .collect()
    }

    fn task(&mut self, kind: usize, user: usize) -> Vec<ToolCall> {
        let pages = self.rng.random_range(4..=14);
        let n = self.rng.random_range(6..=18);
        let mut out = vec![
            call("supervisor.show_active_task", &[]),
            call("supervisor.show_profile", &[]),
        ];
        if self.rng.random_bool(0.5) {
            out.swap(0, 1);
        }
        out.push(call("supervisor.show_account_passwords", &[]));
        let app = match kind {
            0..=3 => "spotify",
            4 => "venmo",
            5 => "file_system",
            6 => "phone",
            _ => "simple_note",
        };
        let (login, token) = self.login(app, user);
        out.extend(login);
        let t = token.as_str();
        match kind {
            0 => {
                out.extend(self.paged("spotify.show_playlist_library", t, &[], pages));
                let pl = self.id();
                out.push(call(
                    "spotify.show_playlist",
                    &[("access_token", t.into()), ("playlist_id", pl)],
                ));
                out.extend(self.repeat("spotify.like_song", "song_id", t, n));
            }
            1 => {
                let q = self.word();
                out.extend(self.paged("spotify.search_albums", t, &[("query", q)], pages));
                let album = self.id();
                out.push(call(
                    "spotify.show_album",
                    &[("access_token", t.into()), ("album_id", album)],
                ));
                out.extend(self.repeat("spotify.show_song", "song_id", t, n));
                let song = self.id();
                out.push(call(
                    "spotify.play_music",
                    &[("access_token", t.into()), ("song_id", song)],
                ));
            }
            2 => {
                let q = self.word();
                out.extend(self.paged("spotify.search_artists", t, &[("query", q)], pages));
                out.extend(self.repeat("spotify.follow_artist", "artist_id", t, n));
            }
            3 => {
                out.extend(self.paged("spotify.show_song_library", t, &[], pages));
                // a second app inside the same task
                out.push(call("supervisor.show_account_passwords", &[]));
                let (fs_login, fs_token) = self.login("file_system", user);
                out.extend(fs_login);
                let path = format!("/home/{}/songs.csv", self.id());
                out.push(call(
                    "file_system.create_file",
                    &[("access_token", fs_token), ("file_path", path)],
                ));
            }
            4 => {
                out.extend(self.paged("venmo.show_transactions", t, &[], pages));
                out.extend(self.repeat("venmo.create_transaction", "receiver_id", t, n));
            }
            5 => {
                out.extend(self.paged("file_system.show_directory", t, &[], pages));
                out.extend(self.repeat("file_system.delete_file", "file_id", t, n));
            }
            6 => {
                out.extend(self.paged("phone.search_contacts", t, &[], pages));
                out.extend(self.repeat("phone.send_text_message", "contact_id", t, n));
            }
            _ => {
                out.extend(self.paged("simple_note.search_notes", t, &[], pages));
                let note = self.id();
                out.push(call(
                    "simple_note.show_note",
                    &[("access_token", t.into()), ("note_id", note)],
                ));
                out.extend(self.repeat("simple_note.update_note", "note_id", t, n.min(3)));
            }
        }
        out.push(call("supervisor.complete_task", &[("status", "success".into())]));
        out
    }
}

/// 82 tasks, 2427 calls: 45 spotify (four task kinds), 12 venmo, 8 file
/// system, 8 phone, 9 notes; paging lengths are trimmed to hit the call total.
fn appworld() -> TraceCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    let users = (0..10)
        .map(|u| {
            (
                format!("user{u}@example.com"),
                format!("pw-{}", rng.random_range(10_000..99_999)),
            )
        })
        .collect();
    let mut world = AppWorld { rng, users };
    let mut kinds: Vec<usize> = Vec::new();
    for (kind, count) in [(0, 12), (1, 11), (2, 11), (3, 11), (4, 12), (5, 8), (6, 8), (7, 9)] {
        kinds.extend(std::iter::repeat_n(kind, count));
    }
    let mut tasks: Vec<Vec<ToolCall>> = kinds.iter().enumerate().map(|(i, &k)| world.task(k, i % 10)).collect();

    // adjust paged listings until the corpus has exactly 2427 calls
    let target = 2427usize;
    let mut total: usize = tasks.iter().map(Vec::len).sum();
    let mut i = 0;
    while total != target {
        let len = tasks.len();
        let task = &mut tasks[i % len];
        let pos = task.iter().rposition(|c| c.args.contains_key("page_index")).unwrap();
        if total < target {
            let mut extra = task[pos].clone();
            let page: usize = extra.args["page_index"].parse().unwrap();
            extra.args.insert("page_index".into(), (page + 1).to_string());
            task.insert(pos + 1, extra);
            total += 1;
        } else if task[pos].args["page_index"] != "0" {
            task.remove(pos);
            total -= 1;
        }
        i += 1;
    }
    let execs = tasks
        .into_iter()
        .enumerate()
        .map(|(i, calls)| execution(format!("aw{i:02}"), calls))
        .collect();
    TraceCorpus::new("appworld", execs).unwrap()
}

fn appworld_rules() -> [(&'static str, serde_json::Value); 3] {
    let semantics = json!([
        {"match": "*.show_*", "kind": "accessor"},
        {"match": "*.search_*", "kind": "accessor"}
    ]);
    let regex = json!([
        {"id": "token", "pattern": "access_token=[^,]*", "replacement": "access_token={TOKEN}", "scope": "arg_values"},
        {"id": "user", "pattern": "username=[^,]*", "replacement": "username={USERNAME}", "scope": "arg_values"},
        {"id": "pwd", "pattern": "password=[^,]*", "replacement": "password={PASSWORD}", "scope": "arg_values"},
        {"id": "ids", "pattern": "(\\w+_id)=\\d+", "replacement": "${1}={ID}", "scope": "arg_values"},
        {"id": "page", "pattern": "page_index=\\d+", "replacement": "page_index={PAGE}", "scope": "arg_values"},
        {"id": "query", "pattern": "query=[^,]*", "replacement": "query={QUERY}", "scope": "arg_values"},
        {"id": "path", "pattern": "file_path=[^,]*", "replacement": "file_path={PATH}", "scope": "arg_values"}
    ]);
    let domains = json!([
        {"match": "supervisor.*", "domain": "SUPERVISOR"},
        {"match": "spotify.*", "domain": "SPOTIFY"},
        {"match": "venmo.*", "domain": "VENMO"},
        {"match": "file_system.*", "domain": "FILE_SYSTEM"},
        {"match": "phone.*", "domain": "PHONE"},
        {"match": "simple_note.*", "domain": "SIMPLE_NOTE"}
    ]);
    [
        ("rules_gets.json", json!({"semantics": semantics})),
        (
            "rules_regex.json",
            json!({"regex_rules": regex, "semantics": semantics}),
        ),
        (
            "rules_actions.json",
            json!({"regex_rules": regex, "domains": domains, "semantics": semantics, "collapse_loops": true}),
        ),
    ]
}

fn write(path: PathBuf, text: &str) {
    fs::write(&path, text).unwrap_or_else(|e| panic!("writing {}: {e}", path.display()));
    println!("wrote {}", path.display());
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).unwrap();
    s.push('\n');
    s
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let aw: &Path = &root.join("appworld");
    fs::create_dir_all(aw).unwrap();

    write(root.join("identity.json"), &(RuleSet::identity().to_json() + "\n"));
    write(
        root.join("uid_rule.json"),
        &pretty(&json!({"regex_rules": [
            {"id": "uid", "pattern": "user_id=\\d+", "replacement": "user_id={UID}", "scope": "arg_values"}
        ]})),
    );
    write(
        root.join("planted.jsonl"),
        &corpus_to_jsonl(&planted(&["login", "get_pwd", "open"], 60, 100, 7)),
    );
    write(
        root.join("planted4.jsonl"),
        &corpus_to_jsonl(&planted(&["login", "get_pwd", "open", "sync"], 60, 100, 11)),
    );

    let uid = uid_corpus();
    write(root.join("uid.jsonl"), &corpus_to_jsonl(&uid));
    write(root.join("uid_script.jsonl"), &(UID_SCRIPT.join("\n") + "\n"));
    let cfg = LoopConfig {
        max_iterations: 5,
        sample_size: 4,
        stop_on_empty: true,
        seed: 0,
    };
    let out = run_loop(&uid, &RuleSet::identity(), &mut ScriptedAnalyst::new(UID_SCRIPT), &cfg).unwrap();
    write(root.join("uid_loop_golden.jsonl"), &records_to_jsonl(&out.records));

    write(aw.join("appworld.jsonl"), &corpus_to_jsonl(&appworld()));
    for (name, rules) in appworld_rules() {
        write(aw.join(name), &pretty(&rules));
    }
}
