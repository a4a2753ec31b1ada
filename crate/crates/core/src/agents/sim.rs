//! Deterministic stand-ins for the three agents, used in sim mode.
//!
//! * Generator: the distinct non-stopword words of the rendered prompt, in
//!   order. Longer instructions produce longer prompts.
//! * Gradient Calculator: suggests quality-vocabulary words the instruction
//!   does not mention yet, two per improvement, favouring words that appear
//!   in the high-score group but not the low-score group.
//! * Instruction Modifier: appends each improvement to the current instruction.

use std::collections::BTreeSet;
use std::fmt::Write;

use sha2::{Digest, Sha256};

use super::{parse_gradient_report, AgentRole, ChatRequest, ChatTransport, TransportError};
use crate::scoring::{is_quality_word, is_stopword, tokens, QUALITY_VOCABULARY};

const MAX_IMPROVEMENTS: usize = 3;

#[derive(Debug, Clone, Copy, Default)]
pub struct SimTransport;

impl ChatTransport for SimTransport {
    fn send(&self, role: AgentRole, request: &ChatRequest) -> Result<String, TransportError> {
        let prompt = request.user_content();
        Ok(match role {
            AgentRole::Generator => sim_generate(prompt),
            AgentRole::GradientCalculator => sim_gradient(prompt),
            AgentRole::InstructionModifier => sim_modify(prompt)?,
        })
    }
}

fn sim_generate(rendered: &str) -> String {
    let mut seen = BTreeSet::new();
    tokens(rendered)
        .into_iter()
        .filter(|t| !is_stopword(t) && seen.insert(t.clone()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let Some(i) = text.find(start) else { return "" };
    let rest = &text[i + start.len()..];
    match rest.find(end) {
        Some(j) => &rest[..j],
        None => rest,
    }
}

/// Prompt lines that follow `label` lines in a rendered gradient prompt.
fn prompts_after(rendered: &str, label: &str) -> Vec<String> {
    let lines: Vec<&str> = rendered.lines().collect();
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim() == label)
        .filter_map(|(i, _)| lines.get(i + 1))
        .map(|l| l.rsplit_once(",score:").map_or(*l, |(p, _)| p).to_string())
        .collect()
}

fn rotation(text: &str) -> usize {
    let digest = Sha256::digest(text.as_bytes());
    digest[0] as usize % QUALITY_VOCABULARY.len()
}

fn sim_gradient(rendered: &str) -> String {
    let instruction = between(
        rendered,
        "This is the generator instruction:",
        " and first corresponding generated low score prompts group:",
    );
    let known: BTreeSet<String> = tokens(instruction).into_iter().collect();
    let words_in = |label: &str| -> BTreeSet<String> {
        prompts_after(rendered, label)
            .iter()
            .flat_map(|p| tokens(p))
            .filter(|t| is_quality_word(t))
            .collect()
    };
    let low = words_in("low_score_generated_prompt:");
    let high = words_in("high_score_prompt:");

    let offset = rotation(rendered);
    let n = QUALITY_VOCABULARY.len();
    let mut missing: Vec<&str> = (0..n)
        .map(|i| QUALITY_VOCABULARY[(i + offset) % n])
        .filter(|w| !known.contains(*w))
        .collect();
    // words the winners use first
    missing.sort_by_key(|w| !(high.contains(*w) && !low.contains(*w)));

    let mut out = String::from("analyze_and_propose: Summary of Reasons for Scores:\n");
    if missing.is_empty() {
        out.push_str("Inference 1: The low score prompts repeat the same descriptive words.\n");
        out.push_str("Improvement 1: Keep the refined prompt concise and drop repeated phrases.\n");
        return out;
    }
    let groups: Vec<&[&str]> = missing.chunks(2).take(MAX_IMPROVEMENTS).collect();
    for (i, group) in groups.iter().enumerate() {
        let _ = writeln!(
            out,
            "Inference {}: The low score prompts lack {} detail that the high score prompts carry.",
            i + 1,
            group.join(" and ")
        );
    }
    for (i, group) in groups.iter().enumerate() {
        let _ = writeln!(
            out,
            "Improvement {}: Ask for {} detail in the scene.",
            i + 1,
            group.join(" and ")
        );
    }
    out
}

fn sim_modify(rendered: &str) -> Result<String, TransportError> {
    let instruction = between(rendered, "Current instruction:\n", "\nWrite ").trim();
    let improvements_block = rendered
        .split_once("\nImprovements:\n")
        .map_or("", |(_, b)| b);
    let report = parse_gradient_report(improvements_block)
        .map_err(|_| TransportError::Fatal("sim modifier: no improvements in prompt".into()))?;
    let mut out = String::new();
    for (i, improvement) in report.improvements.iter().enumerate() {
        let _ = writeln!(
            out,
            "Instruction {}: {} {}",
            i + 1,
            instruction,
            improvement.replace('\n', " ")
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{
        parse_new_instructions, render_gradient_prompt, render_modifier_prompt, IdAllocator,
        Instruction, ScoredPrompt, BASELINE_INSTRUCTION,
    };
    use crate::scoring::ScoreValue;
    use crate::selector::ArmId;

    #[test]
    fn generator_keeps_query_and_drops_repeats() {
        let out = sim_generate(
            "This is the original prompt that you need to carefully refine, Prompt or subject to refine :cactus",
        );
        assert_eq!(out, "original prompt need carefully refine subject cactus");
    }

    #[test]
    fn gradient_then_modifier_adds_vocabulary() {
        let instr = Instruction::initial(ArmId(0), BASELINE_INSTRUCTION).unwrap();
        let item = |p: &str, s: f64| ScoredPrompt {
            query: "cactus".into(),
            prompt: p.into(),
            score: ScoreValue::new(s).unwrap(),
        };
        let g = render_gradient_prompt(
            &instr,
            &[item("plain cactus", 24.0)],
            &[item("vibrant cactus", 26.0)],
        )
        .unwrap();
        let report = parse_gradient_report(&sim_gradient(&g)).unwrap();
        assert_eq!(report.improvements.len(), 3);
        assert_eq!(report.inferences.len(), 3);
        // "vibrant" is in the high group only, so it leads
        assert!(report.improvements[0].contains("vibrant"));

        let m = render_modifier_prompt(&report, &instr, 2).unwrap();
        let reply = sim_modify(&m).unwrap();
        let mut ids = IdAllocator::starting_at(1);
        let children = parse_new_instructions(&reply, &instr, 1, &mut ids).unwrap();
        assert_eq!(children.len(), 2);
        for child in &children {
            assert!(child.text.starts_with(BASELINE_INSTRUCTION));
            assert!(child.text.len() > BASELINE_INSTRUCTION.len());
        }
    }
}
