#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

pub fn sievebot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sievebot"))
}

pub fn run(args: &[&str]) -> Output {
    sievebot().args(args).output().expect("spawn sievebot")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 stdout")
}

pub struct Server {
    pub child: Child,
    pub base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Starts `sievebot serve` on an ephemeral port and waits for its address.
pub fn serve(store: Option<&Path>) -> Server {
    let mut cmd = sievebot();
    cmd.args(["serve", "--addr", "127.0.0.1:0"]);
    if let Some(p) = store {
        cmd.arg("--store").arg(p);
    }
    let mut child = cmd
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn server");
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected server banner {line:?}"))
        .to_string();
    Server { child, base }
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Runtime::new().unwrap()
}
