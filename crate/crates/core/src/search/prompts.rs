use crate::dataset::DevExample;
use crate::llm::{Bindings, TemplateError, TemplateId};
use crate::scoring::NodeStats;
use crate::bundle::VerifierBundle;

pub const NO_EXAMPLES: &str = "(none)";

/// Renders labeled examples as prompt blocks, one per example.
pub fn format_examples<'a>(examples: impl IntoIterator<Item = &'a DevExample>) -> String {
    let blocks: Vec<String> = examples
        .into_iter()
        .map(|e| format!("[id={} label={}]\nInput x:\n{}\nModel output y:\n{}", e.id, e.label, e.x, e.y))
        .collect();
    if blocks.is_empty() {
        NO_EXAMPLES.to_string()
    } else {
        blocks.join("\n\n")
    }
}

fn ratio(v: f64) -> String {
    format!("{v:.4}")
}

pub fn seed_prompt(task: &str, num_seeds: usize, examples: &[&DevExample]) -> Result<String, TemplateError> {
    Bindings::new()
        .set("task_description", task)
        .set("num_seeds", num_seeds)
        .set("examples", format_examples(examples.iter().copied()))
        .render(TemplateId::Seed)
}

pub struct NodeView<'a> {
    pub bundle: &'a VerifierBundle,
    pub stats: &'a NodeStats,
    pub false_positives: &'a [&'a DevExample],
    pub false_negatives: &'a [&'a DevExample],
}

impl NodeView<'_> {
    fn bindings(&self, task: &str) -> Bindings {
        Bindings::new()
            .set("task_description", task)
            .set("node.program.source_code", self.bundle.source.trim_end())
            .set("node.program.size", self.bundle.size())
            // PP: share of positives accepted, NP: share of negatives rejected
            .set("node.stats.pp", ratio(self.stats.tp_ratio))
            .set("node.stats.np", ratio(self.stats.tn_ratio))
            .set("false_positive_examples", format_examples(self.false_positives.iter().copied()))
            .set("false_negative_examples", format_examples(self.false_negatives.iter().copied()))
    }
}

pub fn critic_prompt(task: &str, node: &NodeView<'_>) -> Result<String, TemplateError> {
    node.bindings(task).render(TemplateId::Critic)
}

pub fn modifier_prompt(task: &str, node: &NodeView<'_>, critic_summary: &str, children: usize) -> Result<String, TemplateError> {
    node.bindings(task)
        .set("critic_summary", critic_summary.trim())
        .set("num_children", children)
        .render(TemplateId::Modifier)
}
