//! Versioned prompt templates with named `{slot}` placeholders.
//!
//! Only the slots a template declares are substituted; any other braces in the
//! text (`{movie_id}`, `{API_KEY}`) are left alone.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub version: u32,
    pub slots: &'static [&'static str],
    pub text: &'static str,
}

pub const TASK_TO_CODE: Template = Template {
    name: "task_to_code",
    version: 1,
    slots: &["question"],
    text: include_str!("../prompts/task_to_code.v1.txt"),
};

pub const SUBTASK_PLANNING: Template = Template {
    name: "subtask_planning",
    version: 1,
    slots: &["toolbox", "question", "pseudo_code_task"],
    text: include_str!("../prompts/subtask_planning.v1.txt"),
};

pub const TOOL_SELECTION: Template = Template {
    name: "tool_selection",
    version: 1,
    slots: &["toolbox", "question", "pseudo_code_task"],
    text: include_str!("../prompts/tool_selection.v1.txt"),
};

pub const CODE_GENERATION: Template = Template {
    name: "code_generation",
    version: 1,
    slots: &["base_url", "question", "code_solution", "api_doc"],
    text: include_str!("../prompts/code_generation.v1.txt"),
};

pub const PLAN_REFORMULATION: Template = Template {
    name: "plan_reformulation",
    version: 1,
    slots: &["invalid_tools", "toolbox", "question", "program"],
    text: include_str!("../prompts/plan_reformulation.v1.txt"),
};

pub const CODE_REVIEW: Template = Template {
    name: "code_review",
    version: 1,
    slots: &["question", "program", "traceback", "api_doc"],
    text: include_str!("../prompts/code_review.v1.txt"),
};

pub const ALL: [Template; 6] = [
    TASK_TO_CODE,
    SUBTASK_PLANNING,
    TOOL_SELECTION,
    CODE_GENERATION,
    PLAN_REFORMULATION,
    CODE_REVIEW,
];

impl Template {
    /// Substitutes declared slots in a single left-to-right pass, so slot-like
    /// text inside substituted values is never expanded again.
    ///
    /// Panics if a declared slot has no value: that is a programming error.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        for slot in self.slots {
            assert!(
                values.iter().any(|(k, _)| k == slot),
                "template {} rendered without slot {{{slot}}}",
                self.name
            );
        }
        let mut out = String::with_capacity(self.text.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open + 1..];
            let hit = tail.find('}').and_then(|close| {
                let name = &tail[..close];
                self.slots
                    .contains(&name)
                    .then(|| values.iter().find(|(k, _)| *k == name).map(|(_, v)| (*v, close)))
                    .flatten()
            });
            match hit {
                Some((value, close)) => {
                    out.push_str(value);
                    rest = &tail[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = tail;
                }
            }
        }
        out.push_str(rest);
        out
    }
}
