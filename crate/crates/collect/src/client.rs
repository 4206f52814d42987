//! Broker client with an ordered retry buffer.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read};
use std::thread;
use std::time::Duration;

use log::warn;
use ureq::Agent;

use crate::ilon::{parse_records, render_update, Ack, DocError};
use crate::store::TransitionRecord;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("broker unreachable: {0}")]
    Unreachable(String),
    #[error("broker answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad broker reply: {0}")]
    BadReply(#[from] DocError),
}

pub struct BrokerClient {
    base: String,
    agent: Agent,
    pending: VecDeque<TransitionRecord>,
}

fn body_of(resp: &mut ureq::http::Response<ureq::Body>) -> Result<String, ClientError> {
    let mut s = String::new();
    resp.body_mut()
        .as_reader()
        .read_to_string(&mut s)
        .map_err(|e| ClientError::Unreachable(e.to_string()))?;
    Ok(s)
}

fn classify(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::StatusCode(status) => ClientError::Status {
            status,
            body: String::new(),
        },
        e => ClientError::Unreachable(e.to_string()),
    }
}

impl BrokerClient {
    pub fn new(base: &str) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(5)))
            .max_idle_connections(0)
            .build()
            .into();
        BrokerClient {
            base: base.trim_end_matches('/').to_string(),
            agent,
            pending: VecDeque::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// Records waiting for a successful upload.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Queues `records` behind anything still pending and tries one
    /// upload. On failure everything stays queued, in order.
    pub fn submit(&mut self, records: &[TransitionRecord]) -> Result<Ack, ClientError> {
        self.pending.extend(records.iter().cloned());
        self.flush()
    }

    pub fn flush(&mut self) -> Result<Ack, ClientError> {
        if self.pending.is_empty() {
            return Ok(Ack::default());
        }
        let batch: Vec<_> = self.pending.iter().cloned().collect();
        let mut resp = self
            .agent
            .post(format!("{}/update", self.base))
            .content_type("application/xml")
            .send(render_update(&batch))
            .map_err(classify)?;
        let ack = Ack::from_xml(&body_of(&mut resp)?)?;
        self.pending.clear();
        Ok(ack)
    }

    /// Flushes, backing off exponentially from `first_delay` (capped at
    /// 2 s) between attempts.
    pub fn flush_with_retry(
        &mut self,
        attempts: usize,
        first_delay: Duration,
    ) -> Result<Ack, ClientError> {
        let mut delay = first_delay;
        let mut last = None;
        for i in 0..attempts.max(1) {
            match self.flush() {
                Ok(ack) => return Ok(ack),
                Err(e @ ClientError::Status { status: 400, .. }) => return Err(e),
                Err(e) => {
                    warn!("upload attempt {} failed: {e}", i + 1);
                    last = Some(e);
                }
            }
            if i + 1 < attempts {
                thread::sleep(delay);
                delay = (delay * 2).min(Duration::from_secs(2));
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn query(&self, from: i64, to: i64) -> Result<Vec<TransitionRecord>, ClientError> {
        let url = format!("{}/query?from={from}&to={to}", self.base);
        let mut resp = self.agent.get(&url).call().map_err(classify)?;
        Ok(parse_records(&body_of(&mut resp)?)?)
    }

    /// Follows `/live`, calling `f` per record until it returns false or
    /// the stream ends.
    pub fn follow(&self, mut f: impl FnMut(TransitionRecord) -> bool) -> Result<(), ClientError> {
        let agent: Agent = Agent::config_builder().timeout_global(None).build().into();
        let mut resp = agent
            .get(format!("{}/live", self.base))
            .call()
            .map_err(classify)?;
        let reader = BufReader::new(resp.body_mut().as_reader());
        for line in reader.lines() {
            let line = line.map_err(|e| ClientError::Unreachable(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let recs = parse_records(&format!("<records>{line}</records>"))?;
            for r in recs {
                if !f(r) {
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}
