use super::{AgentError, GradientReport, IdAllocator, Instruction};

/// A `<Label> <number>:` marker at the start of a line, ignoring case,
/// list bullets, markdown emphasis and `\item \textbf{..}` markup. Returns
/// the text after the colon.
fn strip_marker<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let mut line = line.trim_start_matches(|c: char| {
        c.is_whitespace() || matches!(c, '-' | '*' | '•' | '#' | '>')
    });
    if let Some(rest) = line.strip_prefix("\\item") {
        line = rest.trim_start();
    }
    if let Some(rest) = line.strip_prefix("\\textbf{") {
        line = rest.trim_start();
    }
    let head = line.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = line[label.len()..].trim_start();
    let digits = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let rest = rest[digits..]
        .trim_start()
        .trim_start_matches('*')
        .trim_start();
    let body = rest.strip_prefix(':')?;
    Some(body.trim_start_matches(['*', '}']))
}

fn is_environment_line(line: &str) -> bool {
    let line = line.trim();
    line.starts_with("\\begin{") || line.starts_with("\\end{")
}

/// Splits `raw` into `(label index, body)` sections in document order.
/// A body runs until the next marker of any label; blank lines are dropped.
fn sections(raw: &str, labels: &[&str]) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, Vec<&str>)> = Vec::new();
    for line in raw.lines() {
        let hit = labels
            .iter()
            .enumerate()
            .find_map(|(i, label)| strip_marker(line, label).map(|body| (i, body)));
        match hit {
            Some((i, body)) => out.push((i, vec![body.trim()])),
            None => {
                if let Some((_, body)) = out.last_mut().filter(|_| !is_environment_line(line)) {
                    let line = line.trim();
                    if !line.is_empty() {
                        body.push(line);
                    }
                }
            }
        }
    }
    out.into_iter()
        .map(|(i, parts)| {
            let text = parts
                .into_iter()
                .filter(|p| !p.is_empty())
                .collect::<Vec<_>>()
                .join("\n");
            (i, text)
        })
        .collect()
}

/// Extracts `Inference <k>:` and `Improvement <k>:` bodies. Numbering may
/// start at 0 or 1. Fails when no non-empty improvement is found.
pub fn parse_gradient_report(raw: &str) -> Result<GradientReport, AgentError> {
    let mut inferences = Vec::new();
    let mut improvements = Vec::new();
    for (label, body) in sections(raw, &["inference", "improvement"]) {
        if body.is_empty() {
            continue;
        }
        if label == 0 {
            inferences.push(body);
        } else {
            improvements.push(body);
        }
    }
    if improvements.is_empty() {
        return Err(AgentError::ParseFailure {
            what: "gradient report",
            raw: raw.to_string(),
        });
    }
    Ok(GradientReport {
        inferences,
        improvements,
    })
}

/// Extracts `Instruction <k>:` bodies as children of `parent`, dropping
/// duplicates of each other and of the parent text.
pub fn parse_new_instructions(
    raw: &str,
    parent: &Instruction,
    iteration: u32,
    ids: &mut IdAllocator,
) -> Result<Vec<Instruction>, AgentError> {
    let mut seen: Vec<String> = vec![parent.text.trim().to_string()];
    let mut out = Vec::new();
    for (_, body) in sections(raw, &["instruction"]) {
        let text = body.trim().to_string();
        if text.is_empty() || seen.contains(&text) {
            continue;
        }
        seen.push(text.clone());
        out.push(Instruction {
            id: ids.allocate(),
            text,
            parent_id: Some(parent.id),
            created_at: iteration,
        });
    }
    if out.is_empty() {
        return Err(AgentError::ParseFailure {
            what: "new instructions",
            raw: raw.to_string(),
        });
    }
    Ok(out)
}
