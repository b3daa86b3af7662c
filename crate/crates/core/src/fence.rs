//! Markdown code-fence handling.

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Bodies of all fenced blocks, in order. An unterminated fence runs to the end.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        match current.as_mut() {
            None if is_fence(line) => current = Some(Vec::new()),
            None => {}
            Some(_) if is_fence(line) => blocks.push(current.take().unwrap_or_default().join("\n")),
            Some(body) => body.push(line),
        }
    }
    if let Some(body) = current {
        blocks.push(body.join("\n"));
    }
    blocks
}

/// Drop leading and trailing whitespace-only lines; inner text is untouched.
pub fn trim_blank_lines(text: &str) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}
