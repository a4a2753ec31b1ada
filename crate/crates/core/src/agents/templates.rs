use std::fmt::Write;

use super::{AgentError, GradientReport, Instruction, ScoredPrompt};

/// The plain refinement instruction used as the starting point and as a baseline.
pub const BASELINE_INSTRUCTION: &str =
    "This is the original prompt that you need to carefully refine, Prompt or subject to refine :{query}";

const QUERY_PLACEHOLDER: &str = "{query}";
const NO_PLACEHOLDER_SUFFIX: &str = ", Prompt or subject to refine is : ";

pub const GRADIENT_FORMAT_REMINDER: &str = "\nRemember to answer strictly in the format \
\"Inference 1: ...\" followed by \"Improvement 1: ...\", one item per line.";

pub const MODIFIER_FORMAT_REMINDER: &str = "\nRemember: answer only with lines beginning \
\"Instruction 1:\", \"Instruction 2:\" and so on.";

pub fn render_generator_prompt(
    instruction: &Instruction,
    query: &str,
) -> Result<String, AgentError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(AgentError::InvalidQuery);
    }
    if instruction.text.contains(QUERY_PLACEHOLDER) {
        Ok(instruction.text.replace(QUERY_PLACEHOLDER, query))
    } else {
        Ok(format!(
            "{}{NO_PLACEHOLDER_SUFFIX}{query}",
            instruction.text
        ))
    }
}

fn check_batch(name: &str, batch: &[ScoredPrompt]) -> Result<(), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::InvalidBatch(format!("{name} batch is empty")));
    }
    if let Some(bad) = batch.iter().find(|p| !p.score.value().is_finite()) {
        return Err(AgentError::InvalidBatch(format!(
            "non-finite score for `{}`",
            bad.query
        )));
    }
    Ok(())
}

/// Gradient Calculator input: answer format, the instruction, then the
/// indexed low-score and high-score groups. Scores print at full precision.
pub fn render_gradient_prompt(
    instruction: &Instruction,
    low_batch: &[ScoredPrompt],
    high_batch: &[ScoredPrompt],
) -> Result<String, AgentError> {
    check_batch("low-score", low_batch)?;
    check_batch("high-score", high_batch)?;

    let mut out = String::new();
    out.push_str(
        "Analyze the following low score and high score batch, each prompt with corresponding scores. \
And infer what's wrong with the instruction generating low score batch prompt to suggest the \
improvement of the instruction:For your answer use the format:\n",
    );
    out.push_str("Inference 1: your inference_1\n");
    out.push_str("Inference 2: your inference_2\n");
    out.push_str("Inference n: your inference_n...\n");
    out.push_str("Improvement 1: you suggested improvement correspond to inference 1\n");
    out.push_str("Improvement 2: you suggested improvement correspond to Inference 2\n");
    out.push_str("Improvement n: you suggested improvement correspond to inference n...\n");
    let _ = writeln!(
        out,
        "This is the generator instruction:{} and first corresponding generated low score prompts group:",
        instruction.text
    );
    for (i, item) in low_batch.iter().enumerate() {
        let _ = writeln!(out, "low_score_object{i}:{},", item.query);
        out.push_str("low_score_generated_prompt:\n");
        let _ = writeln!(out, "{},score:{}", item.prompt, item.score.value());
    }
    out.push_str("below is high score prompts group:\n");
    for (i, item) in high_batch.iter().enumerate() {
        let _ = writeln!(out, "high_score_object{i}:{},", item.query);
        out.push_str("high_score_prompt:\n");
        let _ = writeln!(out, "{},score:", item.prompt);
        let _ = writeln!(out, "{}", item.score.value());
    }
    Ok(out)
}

/// Instruction Modifier input. Improvements come last, one per line, so a
/// reply can be checked against them in order.
pub fn render_modifier_prompt(
    report: &GradientReport,
    instruction: &Instruction,
    n: usize,
) -> Result<String, AgentError> {
    if n == 0 {
        return Err(AgentError::InvalidCount);
    }
    if report.improvements.is_empty() {
        return Err(AgentError::InvalidBatch(
            "gradient report has no improvements".into(),
        ));
    }
    let k = n.min(report.improvements.len());
    let mut out = String::new();
    out.push_str(
        "You revise the instruction given to an assistant that refines short prompts for a text-to-image model.\n",
    );
    out.push_str("Current instruction:\n");
    out.push_str(&instruction.text);
    out.push('\n');
    let _ = writeln!(
        out,
        "Write {k} new instruction(s). Each one rewrites the current instruction to apply exactly one of \
the improvements listed below, in the listed order. Keep the {{query}} placeholder wherever the current \
instruction has one."
    );
    let _ = writeln!(
        out,
        "Answer with exactly {k} line(s), each starting with the label Instruction <number>: followed by the complete new instruction."
    );
    out.push_str("Improvements:\n");
    for (i, improvement) in report.improvements.iter().take(k).enumerate() {
        let _ = writeln!(out, "Improvement {}: {}", i + 1, improvement);
    }
    Ok(out)
}
