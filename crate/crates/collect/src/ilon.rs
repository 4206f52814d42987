//! XML documents exchanged with the iLON device and the broker.

use roxmltree::{Document, Node};

use crate::store::TransitionRecord;

#[derive(Debug, thiserror::Error)]
pub enum DocError {
    #[error("not well-formed: {0}")]
    NotWellFormed(String),
    #[error("{0}")]
    Invalid(String),
}

fn parse(text: &str, root: &str) -> Result<Vec<(String, bool, Option<i64>)>, DocError> {
    let doc = Document::parse(text).map_err(|e| DocError::NotWellFormed(e.to_string()))?;
    let r = doc.root_element();
    if r.tag_name().name() != root {
        return Err(DocError::Invalid(format!("expected <{root}>")));
    }
    let mut out = Vec::new();
    for el in r.children().filter(Node::is_element) {
        let tag = el.tag_name().name();
        if tag != "s" && tag != "r" {
            return Err(DocError::Invalid(format!("unexpected <{tag}>")));
        }
        let name = el
            .attribute("name")
            .ok_or_else(|| DocError::Invalid("sample lacks name".into()))?;
        let on = match el.attribute("value") {
            Some("1") => true,
            Some("0") => false,
            other => return Err(DocError::Invalid(format!("{name}: value {other:?}"))),
        };
        let t = el
            .attribute("t")
            .map(|t| {
                t.parse()
                    .map_err(|_| DocError::Invalid(format!("{name}: t={t:?}")))
            })
            .transpose()?;
        out.push((name.to_string(), on, t));
    }
    Ok(out)
}

fn esc(s: &str) -> String {
    gloss_core::xml::escape(s)
}

/// `(name, raw value)` pairs of an iLON state document.
pub fn ilon_poll(text: &str) -> Result<Vec<(String, bool)>, DocError> {
    Ok(parse(text, "sensors")?
        .into_iter()
        .map(|(n, v, _)| (n, v))
        .collect())
}

pub fn render_ilon(states: &[(String, bool)]) -> String {
    let mut s = String::from("<sensors>");
    for (name, on) in states {
        s.push_str(&format!(
            r#"<s name="{}" value="{}"/>"#,
            esc(name),
            u8::from(*on)
        ));
    }
    s.push_str("</sensors>");
    s
}

pub fn render_update(records: &[TransitionRecord]) -> String {
    let mut s = String::from("<update>");
    for r in records {
        s.push_str(&format!(
            r#"<s name="{}" value="{}" t="{}"/>"#,
            esc(&r.sensor),
            u8::from(r.on),
            r.t
        ));
    }
    s.push_str("</update>");
    s
}

pub fn parse_update(text: &str) -> Result<Vec<TransitionRecord>, DocError> {
    parse(text, "update")?
        .into_iter()
        .map(|(n, v, t)| {
            let t = t.ok_or_else(|| DocError::Invalid(format!("{n}: sample lacks t")))?;
            Ok(TransitionRecord::new(n, t, v))
        })
        .collect()
}

pub fn render_record(r: &TransitionRecord) -> String {
    format!(
        r#"<r name="{}" value="{}" t="{}"/>"#,
        esc(&r.sensor),
        u8::from(r.on),
        r.t
    )
}

pub fn render_records(records: &[TransitionRecord]) -> String {
    let mut s = String::from("<records>");
    for r in records {
        s.push_str(&render_record(r));
    }
    s.push_str("</records>");
    s
}

pub fn parse_records(text: &str) -> Result<Vec<TransitionRecord>, DocError> {
    parse(text, "records")?
        .into_iter()
        .map(|(n, v, t)| {
            let t = t.ok_or_else(|| DocError::Invalid(format!("{n}: record lacks t")))?;
            Ok(TransitionRecord::new(n, t, v))
        })
        .collect()
}

/// Broker acknowledgement: records stored and records refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ack {
    pub stored: usize,
    pub rejected: usize,
}

impl Ack {
    pub fn to_xml(&self) -> String {
        format!(
            r#"<ack stored="{}" rejected="{}"/>"#,
            self.stored, self.rejected
        )
    }

    pub fn from_xml(text: &str) -> Result<Self, DocError> {
        let doc = Document::parse(text).map_err(|e| DocError::NotWellFormed(e.to_string()))?;
        let r = doc.root_element();
        if r.tag_name().name() != "ack" {
            return Err(DocError::Invalid("expected <ack>".into()));
        }
        let num = |a: &str| -> Result<usize, DocError> {
            r.attribute(a)
                .unwrap_or("0")
                .parse()
                .map_err(|_| DocError::Invalid(format!("ack {a}")))
        };
        Ok(Ack {
            stored: num("stored")?,
            rejected: num("rejected")?,
        })
    }
}
