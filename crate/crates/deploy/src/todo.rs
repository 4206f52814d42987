//! To Do Lists and Task Reports: the control documents tools consume and
//! produce.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use gloss_core::xml::{self, XmlBuf};
use rand::Rng;
use roxmltree::Document;

pub const PAYLOAD_REF: &str = "PayloadRef";
pub const PAYLOAD: &str = "Payload";
pub const STORE_GUID: &str = "StoreGuid";
pub const CONNECTOR: &str = "Connector";
pub const DEPLOYMENT: &str = "Deployment";
pub const ERROR: &str = "Error";
pub const MESSAGE: &str = "Message";
pub const ROLE: &str = "Role";
pub const PORT: &str = "Port";

/// Wirer configuration datums, one pair per connection end.
pub const WIRE_DATUMS: [&str; 8] = [
    "PrimaryConnector",
    "SecondaryConnector",
    "PrimaryBinding",
    "SecondaryBinding",
    "PrimaryChannel",
    "SecondaryChannel",
    "PrimaryAddress",
    "SecondaryAddress",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DocError {
    #[error("not well-formed: {0}")]
    NotWellFormed(String),
    #[error("expected <{expected}>, found <{found}>")]
    WrongRoot { expected: String, found: String },
    #[error("bad task type `{0}`")]
    BadType(String),
    #[error("{0}")]
    Invalid(String),
}

const GUID_ALPHABET: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";

/// `urn:gloss:` followed by 12 random base36 characters.
pub fn new_guid() -> String {
    let mut rng = rand::rng();
    let tail: String = (0..12)
        .map(|_| GUID_ALPHABET[rng.random_range(0..GUID_ALPHABET.len())] as char)
        .collect();
    format!("urn:gloss:{tail}")
}

pub fn is_guid(s: &str) -> bool {
    s.strip_prefix("urn:gloss:")
        .is_some_and(|t| t.len() == 12 && t.bytes().all(|b| GUID_ALPHABET.contains(&b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskType {
    Install,
    Run,
    Wire,
}

impl TaskType {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskType::Install => "INSTALL",
            TaskType::Run => "RUN",
            TaskType::Wire => "WIRE",
        }
    }

    fn required(&self) -> &'static [&'static str] {
        match self {
            TaskType::Install => &[PAYLOAD_REF],
            TaskType::Run => &[STORE_GUID],
            TaskType::Wire => &WIRE_DATUMS,
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = DocError;

    fn from_str(s: &str) -> Result<Self, DocError> {
        match s {
            "INSTALL" => Ok(TaskType::Install),
            "RUN" => Ok(TaskType::Run),
            "WIRE" => Ok(TaskType::Wire),
            _ => Err(DocError::BadType(s.into())),
        }
    }
}

/// Ordered `id -> value` bindings.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Datums(pub Vec<(String, String)>);

impl Datums {
    pub fn get(&self, id: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, v)| v.as_str())
    }

    /// Replaces an existing binding or appends a new one.
    pub fn set(&mut self, id: &str, value: impl Into<String>) {
        let value = value.into();
        match self.0.iter_mut().find(|(k, _)| k == id) {
            Some(slot) => slot.1 = value,
            None => self.0.push((id.to_string(), value)),
        }
    }

    pub fn with(mut self, id: &str, value: impl Into<String>) -> Self {
        self.set(id, value);
        self
    }

    fn write(&self, w: &mut XmlBuf) {
        for (id, v) in &self.0 {
            w.leaf_with("datum", &[("id", id)], v);
        }
    }

    fn read(node: roxmltree::Node<'_, '_>) -> Result<Self, DocError> {
        let mut d = Datums::default();
        for n in xml::children(node, "datum") {
            let id = n
                .attribute("id")
                .ok_or_else(|| DocError::Invalid("datum without id".into()))?;
            d.0.push((id.to_string(), n.text().unwrap_or_default().to_string()));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub guid: String,
    pub kind: TaskType,
    pub datums: Datums,
}

impl Task {
    pub fn new(kind: TaskType) -> Self {
        Task {
            guid: new_guid(),
            kind,
            datums: Datums::default(),
        }
    }

    pub fn with(mut self, id: &str, value: impl Into<String>) -> Self {
        self.datums.set(id, value);
        self
    }

    pub fn datum(&self, id: &str) -> Option<&str> {
        self.datums.get(id)
    }

    /// Required datums missing for this task's type.
    pub fn missing_datums(&self) -> Vec<&'static str> {
        self.kind
            .required()
            .iter()
            .copied()
            .filter(|id| self.datum(id).is_none())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ToDoList {
    pub tasks: Vec<Task>,
}

fn parse_root<'i>(text: &'i str, expected: &str) -> Result<Document<'i>, DocError> {
    let doc = Document::parse(text).map_err(|e| DocError::NotWellFormed(e.to_string()))?;
    let found = doc.root_element().tag_name().name();
    if found != expected {
        return Err(DocError::WrongRoot {
            expected: expected.into(),
            found: found.into(),
        });
    }
    Ok(doc)
}

impl ToDoList {
    pub fn new(tasks: Vec<Task>) -> Self {
        ToDoList { tasks }
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    /// Unique guids and required datums present.
    pub fn check(&self) -> Result<(), DocError> {
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.guid.as_str()) {
                return Err(DocError::Invalid(format!("duplicate task guid {}", t.guid)));
            }
            let missing = t.missing_datums();
            if !missing.is_empty() {
                return Err(DocError::Invalid(format!(
                    "{} task {} lacks {}",
                    t.kind,
                    t.guid,
                    missing.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlBuf::new();
        w.open("ToDoList");
        for t in &self.tasks {
            w.open_with("Task", &[("guid", &t.guid), ("type", t.kind.as_str())]);
            t.datums.write(&mut w);
            w.close("Task");
        }
        w.close("ToDoList");
        w.finish()
    }

    pub fn from_xml(text: &str) -> Result<Self, DocError> {
        let doc = parse_root(text, "ToDoList")?;
        let mut tasks = Vec::new();
        for n in xml::children(doc.root_element(), "Task") {
            let guid = n
                .attribute("guid")
                .ok_or_else(|| DocError::Invalid("Task without guid".into()))?;
            let kind = n.attribute("type").unwrap_or_default().parse()?;
            tasks.push(Task {
                guid: guid.to_string(),
                kind,
                datums: Datums::read(n)?,
            });
        }
        Ok(ToDoList { tasks })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOutcome {
    pub guid: String,
    pub success: bool,
    pub datums: Datums,
}

impl TaskOutcome {
    pub fn ok(guid: &str) -> Self {
        TaskOutcome {
            guid: guid.to_string(),
            success: true,
            datums: Datums::default(),
        }
    }

    /// A failed outcome with an `Error` code and a human-readable message.
    pub fn failed(guid: &str, code: u16, message: &str) -> Self {
        TaskOutcome {
            guid: guid.to_string(),
            success: false,
            datums: Datums::default()
                .with(ERROR, code.to_string())
                .with(MESSAGE, message),
        }
    }

    pub fn with(mut self, id: &str, value: impl Into<String>) -> Self {
        self.datums.set(id, value);
        self
    }

    pub fn datum(&self, id: &str) -> Option<&str> {
        self.datums.get(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskReport {
    pub outcomes: Vec<TaskOutcome>,
}

impl TaskReport {
    pub fn outcome(&self, guid: &str) -> Option<&TaskOutcome> {
        self.outcomes.iter().find(|o| o.guid == guid)
    }

    pub fn all_succeeded(&self) -> bool {
        self.outcomes.iter().all(|o| o.success)
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.success).count()
    }

    /// Every task in `todo` has exactly one outcome and nothing else does.
    pub fn covers(&self, todo: &ToDoList) -> bool {
        let want: Vec<&str> = todo.tasks.iter().map(|t| t.guid.as_str()).collect();
        let mut got: Vec<&str> = self.outcomes.iter().map(|o| o.guid.as_str()).collect();
        let mut sorted_want = want.clone();
        sorted_want.sort();
        got.sort();
        got == sorted_want
    }

    /// All-failure report, used when a node cannot be reached at all.
    pub fn all_failed(todo: &ToDoList, code: u16, message: &str) -> Self {
        TaskReport {
            outcomes: todo
                .tasks
                .iter()
                .map(|t| TaskOutcome::failed(&t.guid, code, message))
                .collect(),
        }
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlBuf::new();
        w.open("TaskReport");
        for o in &self.outcomes {
            let success = if o.success { "TRUE" } else { "FALSE" };
            w.open_with("TaskOutcome", &[("guid", &o.guid), ("success", success)]);
            o.datums.write(&mut w);
            w.close("TaskOutcome");
        }
        w.close("TaskReport");
        w.finish()
    }

    pub fn from_xml(text: &str) -> Result<Self, DocError> {
        let doc = parse_root(text, "TaskReport")?;
        let mut outcomes = Vec::new();
        for n in xml::children(doc.root_element(), "TaskOutcome") {
            let guid = n
                .attribute("guid")
                .ok_or_else(|| DocError::Invalid("TaskOutcome without guid".into()))?;
            let success = match n.attribute("success") {
                Some("TRUE") => true,
                Some("FALSE") => false,
                other => return Err(DocError::Invalid(format!("success={other:?}"))),
            };
            outcomes.push(TaskOutcome {
                guid: guid.to_string(),
                success,
                datums: Datums::read(n)?,
            });
        }
        Ok(TaskReport { outcomes })
    }
}
