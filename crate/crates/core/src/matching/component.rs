use crate::pipeline::{Component, ComponentConfig, ComponentError, Context, Envelope, Message};

use super::{parse_patterns, MatchEngine, PatternSpec};

/// Pipeline wrapper around [`MatchEngine`].
///
/// Events arrive on `in`; complex events leave on `out`. The `control`
/// port takes `ADD <pattern statement>` and `REMOVE <pattern name>` lines.
/// Config: `patterns` (statements separated by newlines or `;`) and/or
/// `patterns_file`, plus `cap`.
pub struct MatchingComponent {
    engine: MatchEngine,
}

impl MatchingComponent {
    pub fn new(engine: MatchEngine) -> Self {
        MatchingComponent { engine }
    }

    pub fn from_config(cfg: &ComponentConfig) -> Result<Self, ComponentError> {
        let mut engine = match cfg.parse::<usize>("cap")? {
            Some(cap) => MatchEngine::with_cap(cap),
            None => MatchEngine::new(),
        };
        let mut text = cfg.get("patterns").unwrap_or("").replace(';', "\n");
        if let Some(path) = cfg.get("patterns_file") {
            text.push('\n');
            text.push_str(&std::fs::read_to_string(path)?);
        }
        let bad = |e: super::PatternError| ComponentError::BadConfig {
            key: "patterns".into(),
            reason: e.to_string(),
        };
        for spec in parse_patterns(&text).map_err(bad)? {
            engine.add_pattern(spec).map_err(bad)?;
        }
        Ok(MatchingComponent { engine })
    }

    pub fn engine(&self) -> &MatchEngine {
        &self.engine
    }

    fn control(&mut self, line: &str, ctx: &Context) -> Result<(), ComponentError> {
        let line = line.trim();
        if let Some(stmt) = line.strip_prefix("ADD ") {
            let spec =
                PatternSpec::parse(stmt).map_err(|e| ComponentError::Rejected(e.to_string()))?;
            self.engine
                .add_pattern(spec)
                .map_err(|e| ComponentError::Rejected(e.to_string()))?;
        } else if let Some(name) = line.strip_prefix("REMOVE ") {
            let id = self
                .engine
                .pattern_id(name.trim())
                .ok_or_else(|| ComponentError::Rejected(format!("no pattern `{}`", name.trim())))?;
            self.engine
                .remove_pattern(id)
                .map_err(|e| ComponentError::Rejected(e.to_string()))?;
        } else {
            return Err(ComponentError::Rejected(format!(
                "unknown control line {line:?}"
            )));
        }
        ctx.set_property("patterns", self.engine.patterns().count().to_string());
        Ok(())
    }
}

impl Component for MatchingComponent {
    fn input_ports(&self) -> Vec<String> {
        vec!["in".into(), "control".into()]
    }

    fn output_ports(&self) -> Vec<String> {
        vec!["out".into()]
    }

    fn handle(&mut self, port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        if port == "control" {
            return match &env.message {
                Message::Raw(s) | Message::Xml(s) => self.control(s, ctx),
                _ => Err(ComponentError::Rejected("control expects text".into())),
            };
        }
        let ev = match env.message.to_event() {
            Ok(ev) => ev,
            Err(_) => {
                ctx.count("invalid");
                return Ok(());
            }
        };
        ctx.count("ingested");
        for m in self.engine.ingest(ev) {
            ctx.count("matched");
            ctx.emit(
                "out",
                env.with_message(Message::Complex {
                    name: m.name,
                    detected_at: m.detected_at,
                    constituents: m.constituents,
                }),
            );
        }
        Ok(())
    }
}

/// Registers the engine as component type `MatchingEngine`.
pub fn register_matching(
    reg: &mut crate::pipeline::ComponentRegistry,
) -> Result<(), crate::pipeline::PipelineError> {
    reg.register("MatchingEngine", |c| {
        Ok(Box::new(MatchingComponent::from_config(c)?))
    })
}
