//! The bundled demo applications and their scenarios.

use crate::guest::{Program, ProgramError, ScriptSource};
use crate::host::{Scenario, ScenarioError};

#[derive(Debug, Clone, Copy)]
pub struct Demo {
    pub name: &'static str,
    pub script: &'static str,
    pub scenario: &'static str,
}

pub const DEMOS: [Demo; 5] = [
    Demo { name: "game", script: include_str!("../demos/game.tts"), scenario: include_str!("../demos/game.json") },
    Demo { name: "feed", script: include_str!("../demos/feed.tts"), scenario: include_str!("../demos/feed.json") },
    Demo { name: "todo", script: include_str!("../demos/todo.tts"), scenario: include_str!("../demos/todo.json") },
    Demo {
        name: "gallery",
        script: include_str!("../demos/gallery.tts"),
        scenario: include_str!("../demos/gallery.json"),
    },
    Demo { name: "race", script: include_str!("../demos/race.tts"), scenario: include_str!("../demos/race.json") },
];

pub fn demo(name: &str) -> Option<Demo> {
    DEMOS.iter().copied().find(|d| d.name == name)
}

impl Demo {
    pub fn script_name(&self) -> String {
        format!("{}.tts", self.name)
    }

    pub fn sources(&self) -> Vec<ScriptSource> {
        vec![ScriptSource { name: self.script_name(), text: self.script.to_string() }]
    }

    pub fn program(&self) -> Result<Program, ProgramError> {
        Program::from_sources(self.sources())
    }

    pub fn scenario(&self) -> Result<Scenario, ScenarioError> {
        Scenario::from_json(self.scenario)
    }
}
