#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

pub fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").canonicalize().unwrap()
}

pub fn fixture(name: &str) -> String {
    assets().join("fixtures").join(name).display().to_string()
}

pub fn satbot() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_satbot"));
    c.env_remove("SAT_CONFIG").env_remove("RUST_LOG");
    c
}

fn absolutize(line: &str) -> String {
    match line.split_once(" = \"") {
        Some((key, rest)) if !key.starts_with('#') && !["listen_address", "history_speakers", "name_template"].contains(&key) => {
            let value = rest.trim_end_matches('"');
            format!("{key} = \"{}\"", assets().join(value).display())
        }
        _ => line.to_owned(),
    }
}

/// Copy of the reference configuration with absolute asset paths and its
/// session logs under `dir`.
pub fn temp_config(dir: &Path) -> PathBuf {
    let original = std::fs::read_to_string(assets().join("sat.toml")).unwrap();
    let text: Vec<String> = original
        .lines()
        .map(|l| {
            if l.starts_with("persistence_dir") {
                format!("persistence_dir = \"{}\"", dir.join("sessions").display())
            } else {
                absolutize(l)
            }
        })
        .collect();
    let config = dir.join("sat.toml");
    std::fs::write(&config, text.join("\n")).unwrap();
    config
}

/// A running `satbot serve`, killed on drop.
pub struct Server {
    child: Child,
    pub url: String,
}

impl Server {
    pub fn start(config: &Path) -> Server {
        let mut child = satbot()
            .args(["--config", config.to_str().unwrap(), "serve", "--listen", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = match line.trim().strip_prefix("listening on ") {
            Some(u) => u.to_owned(),
            None => {
                let _ = child.kill();
                panic!("server did not start: {line:?}");
            }
        };
        Server { child, url }
    }

    /// SIGKILL, no graceful shutdown.
    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.kill();
    }
}
