//! A scripted stand-in for the teacher model. Replies depend only on the
//! prompt text and on how many times that exact prompt has been seen.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use protochem::llmclient::{ChatRequest, LlmError, Transport, Usage, WireResponse};

/// Wrong answer given by negative traces.
pub const WRONG: &str = "CCN";

/// Gold answers the teacher gets wrong on its first synthesis attempt.
pub const LATE_GOLD: &[&str] = &["CCOC(C)=O"];
/// Gold answers whose first synthesis lacks a think span.
pub const MALFORMED_FIRST: &[&str] = &["c1ccc(-c2ccccc2)cc1"];
/// Gold answers the teacher never reasons to correctly.
pub const NEVER_GOLD: &[&str] = &["CCO.CC(=O)O"];

pub struct ScriptedTeacher {
    /// question text -> gold answer
    golds: HashMap<String, String>,
    never: HashSet<String>,
    late: HashSet<String>,
    seen: Mutex<HashMap<String, u32>>,
}

impl ScriptedTeacher {
    pub fn new<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> ScriptedTeacher {
        ScriptedTeacher {
            golds: pairs.into_iter().map(|(q, g)| (q.to_string(), g.to_string())).collect(),
            never: NEVER_GOLD.iter().map(|s| s.to_string()).collect(),
            late: LATE_GOLD.iter().map(|s| s.to_string()).collect(),
            seen: Mutex::new(HashMap::new()),
        }
    }

    /// Replaces the never-correct and late-correct gold sets.
    pub fn with_scripts(mut self, never: HashSet<String>, late: HashSet<String>) -> ScriptedTeacher {
        self.never = never;
        self.late = late;
        self
    }

    fn count(&self, prompt: &str) -> u32 {
        let mut seen = self.seen.lock().unwrap();
        let n = seen.entry(prompt.to_string()).or_insert(0);
        *n += 1;
        *n - 1
    }

    pub fn reply(&self, prompt: &str) -> String {
        let n = self.count(prompt);
        if prompt.starts_with("Solve the following chemistry problem") {
            let question = prompt.lines().last().unwrap_or_default().trim();
            let gold = self.golds.get(question).map(String::as_str).unwrap_or(WRONG);
            // Three positives out of every five samples.
            let answer = if n % 5 < 3 { gold } else { WRONG };
            return format!("<think>\nLooking at {question}.\n</think>\n<answer>{answer}</answer>");
        }
        if prompt.contains("distil a reusable") {
            return protocol_block(false);
        }
        if prompt.contains("cautionary guidance") {
            return protocol_block(true);
        }
        if prompt.contains("Based solely on the reasoning above") {
            let answer = prompt
                .lines()
                .find_map(|l| l.trim().strip_prefix("Answer: the result is "))
                .unwrap_or("");
            return if answer.is_empty() {
                "I cannot tell.".to_string()
            } else {
                format!("<answer>{answer}</answer>")
            };
        }
        if prompt.contains("Reasoning protocol:") {
            let gold = prompt
                .lines()
                .find_map(|l| {
                    l.strip_prefix("Ground-truth Product: ")
                        .or_else(|| l.strip_prefix("Ground-truth Reactants: "))
                })
                .unwrap_or("")
                .trim()
                .to_string();
            if MALFORMED_FIRST.contains(&gold.as_str()) && n == 0 {
                return format!("<answer>{gold}</answer>");
            }
            let concluded = if self.never.contains(&gold) || (self.late.contains(&gold) && n == 0) {
                WRONG
            } else {
                gold.as_str()
            };
            return format!(
                "<think>\nAnalysis: the structure is inspected.\nTransformation: the bond change is applied.\n\
                 Answer: the result is {concluded}\n</think>\n<answer>{gold}</answer>"
            );
        }
        "unrecognized prompt".to_string()
    }
}

fn protocol_block(cautions: bool) -> String {
    let mut s = String::from("Here is the protocol.\n```protocol\n");
    s.push_str("1. Analysis: Inspect the given molecules and their functional groups.\n");
    if cautions {
        s.push_str("- Count every heavy atom before and after.\n");
    }
    s.push_str("2. Transformation: Apply the bond changes of the reaction class.\n");
    s.push_str("3. Answer: State the resulting SMILES.\n");
    if cautions {
        s.push_str("- Make sure the SMILES parses.\n");
    }
    s.push_str("```\n");
    s
}

impl Transport for ScriptedTeacher {
    fn send(&self, _model: &str, request: &ChatRequest) -> Result<WireResponse, LlmError> {
        let prompt = &request.messages.last().expect("one message").content;
        Ok(WireResponse {
            completions: vec![self.reply(prompt)],
            usage: Usage::default(),
        })
    }
}
