mod common;

use std::collections::BTreeMap;
use std::process::{Output, Stdio};

use common::{assets, fixture, satbot, temp_config, Server};

fn run(args: &[&str]) -> Output {
    satbot().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn config() -> String {
    assets().join("sat.toml").display().to_string()
}

#[test]
fn chat_transcripts_are_deterministic() {
    let script = assets().join("scripts/happy_path.txt");
    let args = ["--config", &config(), "chat", "--script", script.to_str().unwrap(), "--seed", "11"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("bot> "));
    assert!(text.contains("you> سلام\n"));
    assert!(text.contains("  [E1] "));
    assert!(text.trim_end().ends_with("-- conversation ended --"));
}

#[test]
fn chat_reads_stdin_without_a_script() {
    let mut child = satbot()
        .args(["--config", &config(), "chat"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        use std::io::Write;
        let mut stdin = child.stdin.take().unwrap();
        writeln!(stdin, "سلام\nرسمی").unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).matches("you> ").count() >= 2);
}

#[test]
fn validate_reports_dangling_edges() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("bad.toml");
    std::fs::write(
        &graph,
        "start = \"a\"\n[[node]]\nid = \"a\"\nkind = \"Statement\"\nedges = { default = \"ghost\" }\n\
         [[node]]\nid = \"b\"\nkind = \"Terminal\"\n",
    )
    .unwrap();
    let o = run(&["validate", "--graph", graph.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("ghost") && err.contains("a --default-->"), "{err}");

    let o = run(&["validate", "--graph", assets().join("flow.toml").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("ok: 17 nodes"));
}

#[test]
fn validate_checks_the_whole_deployment() {
    let o = run(&["--config", &config(), "validate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("qa: 30 entries"));
    assert!(text.ends_with("ok\n"));
}

#[test]
fn missing_assets_exit_with_two() {
    let o = run(&["--config", "/nonexistent/sat.toml", "validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing asset: /nonexistent/sat.toml"));

    let o = run(&["validate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["eval-emotion", "--test", "/nonexistent/test.tsv", "--train", &fixture("emotion_separated_train.tsv")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_comes_from_the_environment_and_the_flag_wins() {
    let o = satbot().env("SAT_CONFIG", config()).arg("validate").output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    let o = satbot()
        .env("SAT_CONFIG", "/nonexistent/env.toml")
        .args(["--config", &config(), "validate"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    let o = satbot().env("SAT_CONFIG", "/nonexistent/env.toml").arg("validate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/env.toml"));
}

#[test]
fn help_and_usage_errors() {
    for sub in [
        "serve",
        "chat",
        "validate",
        "build-pools",
        "score-rewrites",
        "eval-teacher",
        "eval-emotion",
        "embed-file",
    ] {
        let o = run(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["chat", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let o = run(&[
        "score-rewrites",
        "--candidates",
        &fixture("candidates.tsv"),
        "--bases",
        &fixture("bases.tsv"),
        "--weights",
        "1,2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_emotion_on_the_separated_fixture_is_perfect() {
    let o = run(&[
        "eval-emotion",
        "--train",
        &fixture("emotion_separated_train.tsv"),
        "--test",
        &fixture("emotion_separated_test.tsv"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("accuracy: 1.000 (600/600)"), "{text}");

    let o = run(&[
        "eval-emotion",
        "--train",
        &fixture("emotion_separated_train.tsv"),
        "--test",
        &fixture("emotion_separated_test.tsv"),
        "--format",
        "machine",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().count() >= 13);
}

#[test]
fn eval_teacher_formats() {
    let o = run(&["--config", &config(), "eval-teacher", "--identity", "--format", "machine"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("accuracy\t1.000000"), "{text}");
    assert!(!text.contains("miss\t"));
}

// Independent reward oracle over the fixture files: whitespace tokens,
// FNV-1a bucket counts for similarity, min-max to [-1, 1].

fn oracle_embed(text: &str, dim: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim as usize];
    for tok in text.split_whitespace() {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in tok.to_lowercase().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        v[(h % dim) as usize] += 1.0;
    }
    v
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn oracle_minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| if hi == lo { 0.0 } else { 2.0 * (x - lo) / (hi - lo) - 1.0 }).collect()
}

fn rows(path: &str) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}

/// Expected `(base, candidate, composite)` in rank order.
fn oracle_ranking(weights: [f64; 4], c_rp: f64) -> Vec<(String, String, f64)> {
    let bases: BTreeMap<String, String> = rows(&fixture("bases.tsv")).into_iter().map(|r| (r[0].clone(), r[3].clone())).collect();
    let mut groups: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for r in rows(&fixture("candidates.tsv")) {
        groups.entry(r[1].clone()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (base, group) in groups {
        let base_vec = oracle_embed(&bases[&base], 256);
        let mut comps: [Vec<f64>; 4] = Default::default();
        for r in &group {
            let tokens: Vec<&str> = r[2].split_whitespace().collect();
            let distinct: std::collections::HashSet<&str> = tokens.iter().copied().collect();
            let rp = c_rp * (tokens.len() - distinct.len()) as f64;
            comps[0].push(1.0 / (r[3].parse::<f64>().unwrap() - rp));
            comps[1].push(r[4].parse().unwrap());
            comps[2].push(r[5].parse().unwrap());
            comps[3].push(oracle_cosine(&oracle_embed(&r[2], 256), &base_vec));
        }
        let norm: Vec<Vec<f64>> = comps.iter().map(|c| oracle_minmax(c)).collect();
        let mut scored: Vec<(String, f64)> = group
            .iter()
            .enumerate()
            .map(|(i, r)| (r[0].clone(), (0..4).map(|k| weights[k] * norm[k][i]).sum()))
            .collect();
        // Brute force: repeatedly take the maximum.
        while !scored.is_empty() {
            let mut best = 0;
            for i in 1..scored.len() {
                let (ref id, s) = scored[i];
                if s > scored[best].1 || (s == scored[best].1 && *id < scored[best].0) {
                    best = i;
                }
            }
            let (id, s) = scored.remove(best);
            out.push((base.clone(), id, s));
        }
    }
    out
}

#[test]
fn score_rewrites_matches_the_oracle() {
    let o = run(&[
        "score-rewrites",
        "--candidates",
        &fixture("candidates.tsv"),
        "--bases",
        &fixture("bases.tsv"),
        "--weights",
        "1,0.5,2,1",
        "--repetition-penalty",
        "1.5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    let expected = oracle_ranking([1.0, 0.5, 2.0, 1.0], 1.5);
    assert_eq!(lines.len(), expected.len());
    for (cols, (base, id, composite)) in lines.iter().zip(&expected) {
        assert_eq!(cols[0], base);
        assert_eq!(cols[2], id);
        let got: f64 = cols[7].parse().unwrap();
        assert!((got - composite).abs() < 1e-6, "{id}: {got} vs {composite}");
    }
}

#[test]
fn build_pools_keeps_the_best_per_base() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pool.tsv");
    let o = run(&[
        "build-pools",
        "--candidates",
        &fixture("candidates.tsv"),
        "--bases",
        &fixture("bases.tsv"),
        "--keep-top",
        "2",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("wrote 6 utterances for 3 bases"));
    let expected = oracle_ranking([1.0; 4], 1.0);
    let mut kept = Vec::new();
    let mut per_base: BTreeMap<&str, usize> = BTreeMap::new();
    for (base, id, _) in &expected {
        let n = per_base.entry(base).or_default();
        if *n < 2 {
            kept.push(id.clone());
        }
        *n += 1;
    }
    let pool = std::fs::read_to_string(&out).unwrap();
    let ids: Vec<String> = pool
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').next().unwrap().to_owned())
        .collect();
    assert_eq!(ids, kept);

    let records = satbot_core::selector::parse_pool_records(&pool).unwrap();
    assert!(records.iter().all(|u| u.composite_reward.is_some()));
}

#[test]
fn embed_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("lines.txt");
    std::fs::write(&input, "alpha beta\ngamma\nalpha beta\n\n").unwrap();
    let output = dir.path().join("lines.emb");
    let o = run(&["embed-file", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap(), "--dimension", "64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("embedded 2 texts (dimension 64)"));
    let bytes = std::fs::read(&output).unwrap();
    assert_eq!(&bytes[..4], b"EMB1");

    let o = run(&["embed-file", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap(), "--dimension", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_answers_health_on_an_ephemeral_port() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&temp_config(dir.path()));
    let url = &server.url;
    let body: serde_json::Value = ureq::get(format!("{url}/api/health"))
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    assert_eq!(body["status"], "ok");
    assert_eq!(body["sessions"], 0);
}
