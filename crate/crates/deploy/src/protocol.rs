//! Clients for the thin-server control protocol and the connection
//! manager protocol. Both are LF-framed request/response lines.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::todo::{DocError, TaskReport, TaskType, ToDoList};

pub const CONTROL_TIMEOUT: Duration = Duration::from_secs(30);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("{addr}: {source}")]
    Io {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("{addr} refused: {reply}")]
    Refused { addr: String, reply: String },
    #[error("{addr} sent a bad report: {source}")]
    BadReport {
        addr: String,
        #[source]
        source: DocError,
    },
}

/// Sends one line and reads one line back.
pub fn request(addr: &str, line: &str, timeout: Duration) -> Result<String, ProtocolError> {
    let io_err = |source| ProtocolError::Io {
        addr: addr.to_string(),
        source,
    };
    let sock = addr
        .to_socket_addrs()
        .map_err(io_err)?
        .next()
        .ok_or_else(|| io_err(io::Error::new(io::ErrorKind::NotFound, "no address")))?;
    let mut stream = TcpStream::connect_timeout(&sock, CONNECT_TIMEOUT).map_err(io_err)?;
    stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
    stream
        .write_all(format!("{line}\n").as_bytes())
        .map_err(io_err)?;
    let mut reply = String::new();
    let n = BufReader::new(stream)
        .read_line(&mut reply)
        .map_err(io_err)?;
    if n == 0 {
        return Err(io_err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "connection closed without a reply",
        )));
    }
    Ok(reply.trim_end().to_string())
}

/// Control connection to a thin server.
#[derive(Debug, Clone)]
pub struct ThinClient {
    pub addr: String,
    pub timeout: Duration,
}

impl ThinClient {
    pub fn new(addr: impl Into<String>) -> Self {
        ThinClient {
            addr: addr.into(),
            timeout: CONTROL_TIMEOUT,
        }
    }

    pub fn ping(&self) -> Result<(), ProtocolError> {
        let reply = request(&self.addr, "PING", self.timeout)?;
        if reply == "PONG" {
            Ok(())
        } else {
            Err(ProtocolError::Refused {
                addr: self.addr.clone(),
                reply,
            })
        }
    }

    /// Sends `<VERB> <ToDoList>` and parses the Task Report reply.
    pub fn submit(&self, verb: TaskType, todo: &ToDoList) -> Result<TaskReport, ProtocolError> {
        let reply = request(
            &self.addr,
            &format!("{verb} {}", todo.to_xml()),
            self.timeout,
        )?;
        if reply.starts_with("ERR") {
            return Err(ProtocolError::Refused {
                addr: self.addr.clone(),
                reply,
            });
        }
        TaskReport::from_xml(&reply).map_err(|source| ProtocolError::BadReport {
            addr: self.addr.clone(),
            source,
        })
    }

    pub fn shutdown(&self) -> Result<(), ProtocolError> {
        request(&self.addr, "SHUTDOWN", self.timeout).map(|_| ())
    }
}

/// Connection manager of one machine.
#[derive(Debug, Clone)]
pub struct CmClient {
    pub addr: String,
    pub machine: String,
}

impl CmClient {
    pub fn new(addr: impl Into<String>, machine: impl Into<String>) -> Self {
        CmClient {
            addr: addr.into(),
            machine: machine.into(),
        }
    }

    fn call(&self, verb: &str, rest: &str, wait: Duration) -> Result<String, ProtocolError> {
        let reply = request(&self.addr, &format!("{verb} {} {rest}", self.machine), wait)?;
        if reply.starts_with("ERR") {
            return Err(ProtocolError::Refused {
                addr: self.addr.clone(),
                reply,
            });
        }
        Ok(reply)
    }

    fn bad(&self, reply: String) -> ProtocolError {
        ProtocolError::Refused {
            addr: self.addr.clone(),
            reply,
        }
    }

    pub fn listen(&self, channel: &str) -> Result<u16, ProtocolError> {
        let reply = self.call("LISTEN", channel, CONTROL_TIMEOUT)?;
        reply
            .strip_prefix("PORT ")
            .and_then(|p| p.trim().parse().ok())
            .ok_or_else(|| self.bad(reply.clone()))
    }

    pub fn unlisten(&self, channel: &str) -> Result<(), ProtocolError> {
        self.call("UNLISTEN", channel, CONTROL_TIMEOUT).map(|_| ())
    }

    pub fn connect(&self, channel: &str, host: &str, port: u16) -> Result<(), ProtocolError> {
        self.call(
            "CONNECT",
            &format!("{channel} {host} {port}"),
            CONTROL_TIMEOUT,
        )
        .map(|_| ())
    }

    pub fn write(&self, channel: &str, line: &str) -> Result<(), ProtocolError> {
        self.call("WRITE", &format!("{channel} {line}"), CONTROL_TIMEOUT)
            .map(|_| ())
    }

    /// `None` when nothing arrived within `wait`.
    pub fn read(&self, channel: &str, wait: Duration) -> Result<Option<String>, ProtocolError> {
        let reply = self.call(
            "READ",
            &format!("{channel} {}", wait.as_millis()),
            wait + CONTROL_TIMEOUT,
        )?;
        if reply == "TIMEOUT" {
            return Ok(None);
        }
        reply
            .strip_prefix("LINE ")
            .map(|l| Some(l.to_string()))
            .ok_or_else(|| self.bad(reply.clone()))
    }
}
