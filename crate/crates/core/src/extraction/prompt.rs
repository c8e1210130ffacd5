//! Prompt templates and few-shot fixtures for the extraction stages.

use serde::Deserialize;

use super::backend::FewShotTurn;

pub const TRIPLET_SYSTEM: &str = include_str!("../../prompts/triplet_system.txt");
pub const TRIPLET_USER: &str = include_str!("../../prompts/triplet_user.txt");
pub const ADJUNCT_SYSTEM: &str = include_str!("../../prompts/adjunct_system.txt");
pub const ADJUNCT_USER: &str = include_str!("../../prompts/adjunct_user.txt");
pub const SINGLE_STEP_SYSTEM: &str = include_str!("../../prompts/single_step_system.txt");
pub const SINGLE_STEP_USER: &str = include_str!("../../prompts/single_step_user.txt");

const TRIPLET_FEWSHOT: &str = include_str!("../../prompts/triplet_fewshot.json");
const ADJUNCT_FEWSHOT: &str = include_str!("../../prompts/adjunct_fewshot.json");
const SINGLE_STEP_FEWSHOT: &str = include_str!("../../prompts/single_step_fewshot.json");

/// JSON keys of the three response payloads.
pub const TRIPLET_KEY: &str = "information_triplet";
pub const ADJUNCT_KEY: &str = "detailed_information";
pub const QUADRUPLET_KEY: &str = "information_quadruplet";

/// Values substituted into a template's `{{$name}}` placeholders.
#[derive(Debug, Clone, Default)]
pub struct PromptVars<'a> {
    pub role: &'a str,
    pub context: &'a str,
    pub message: &'a str,
    pub info_list: &'a str,
}

impl PromptVars<'_> {
    fn lookup(&self, name: &str) -> Option<&str> {
        match name {
            "role" => Some(self.role),
            "context" => Some(self.context),
            "message" => Some(self.message),
            "info_list" => Some(self.info_list),
            _ => None,
        }
    }
}

/// Single-pass placeholder substitution: substituted values are never
/// rescanned, and unknown placeholders are left verbatim.
pub fn fill_template(template: &str, vars: &PromptVars<'_>) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{$") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 3..];
        match after.find("}}") {
            Some(end) => match vars.lookup(&after[..end]) {
                Some(value) => {
                    out.push_str(value);
                    rest = &after[end + 2..];
                }
                None => {
                    out.push_str("{{$");
                    rest = after;
                }
            },
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Deserialize)]
struct FewShotFile {
    examples: Vec<FewShotExample>,
}

#[derive(Deserialize)]
struct FewShotExample {
    context: String,
    role: String,
    message: String,
    #[serde(default)]
    info_list: String,
    answer: String,
}

fn load_few_shot(raw: &str, user_template: &str) -> Vec<FewShotTurn> {
    let file: FewShotFile = serde_json::from_str(raw).expect("bundled few-shot fixture is valid JSON");
    file.examples
        .iter()
        .map(|e| FewShotTurn {
            user: fill_template(
                user_template,
                &PromptVars {
                    role: &e.role,
                    context: &e.context,
                    message: &e.message,
                    info_list: &e.info_list,
                },
            ),
            assistant: e.answer.clone(),
        })
        .collect()
}

pub fn triplet_few_shot() -> Vec<FewShotTurn> {
    load_few_shot(TRIPLET_FEWSHOT, TRIPLET_USER)
}

pub fn adjunct_few_shot() -> Vec<FewShotTurn> {
    load_few_shot(ADJUNCT_FEWSHOT, ADJUNCT_USER)
}

pub fn single_step_few_shot() -> Vec<FewShotTurn> {
    load_few_shot(SINGLE_STEP_FEWSHOT, SINGLE_STEP_USER)
}
