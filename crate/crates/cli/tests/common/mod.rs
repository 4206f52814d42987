#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read};
use std::process::{Child, ChildStdout, Command, Output, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

pub fn gloss() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gloss"));
    c.env("GLOSS_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    gloss().args(args).output().expect("gloss runs")
}

/// A background `gloss` process, killed on drop.
pub struct Proc {
    pub child: Child,
    lines: mpsc::Receiver<String>,
}

impl Proc {
    /// Starts `gloss args` and waits for a stdout line starting with
    /// `ready`, returning the rest of that line.
    pub fn spawn(args: &[&str], ready: &str) -> (Proc, String) {
        let mut child = gloss()
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .expect("gloss spawns");
        let stdout: ChildStdout = child.stdout.take().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut p = Proc { child, lines: rx };
        let rest = loop {
            match p.lines.recv_timeout(Duration::from_secs(10)) {
                Ok(line) => {
                    if let Some(rest) = line.strip_prefix(ready) {
                        break rest.trim().to_string();
                    }
                }
                Err(_) => {
                    let _ = p.child.kill();
                    let mut err = String::new();
                    if let Some(mut e) = p.child.stderr.take() {
                        let _ = e.read_to_string(&mut err);
                    }
                    panic!("gloss {args:?} never printed {ready}: {err}");
                }
            }
        };
        (p, rest)
    }

    pub fn next_line(&self, wait: Duration) -> Option<String> {
        self.lines.recv_timeout(wait).ok()
    }

    /// Sends SIGINT and waits for the exit status.
    pub fn interrupt(&mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        Command::new("kill")
            .args(["-INT", &pid])
            .status()
            .expect("kill runs");
        for _ in 0..100 {
            if let Some(s) = self.child.try_wait().unwrap() {
                return s;
            }
            thread::sleep(Duration::from_millis(50));
        }
        panic!("gloss did not stop on interrupt");
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}
