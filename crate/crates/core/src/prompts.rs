//! Few-shot prompt templates for the extractor and the verifier.
//!
//! Templates are plain text with `{{name}}` placeholders. Substitution is a
//! single pass over the template pieces, so placeholder-like text inside the
//! substituted values is never expanded again.

const EXTRACTION_TEMPLATE: &str = include_str!("prompts/extraction.txt");
const VERIFICATION_TEMPLATE: &str = include_str!("prompts/verification.txt");

/// Marker the extraction prompt places directly before the response chunk.
pub const CHUNK_OPEN: &str = "<SOS>";
/// Marker the extraction prompt places directly after the response chunk.
pub const CHUNK_CLOSE: &str = "<EOS>";

#[derive(Debug)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open..].find("}}") else {
            break;
        };
        out.push(Piece::Text(&rest[..open]));
        out.push(Piece::Slot(&rest[open + 2..open + close]));
        rest = &rest[open + close + 2..];
    }
    out.push(Piece::Text(rest));
    out
}

fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    for piece in pieces(template) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => {
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .unwrap_or_else(|| panic!("template slot `{name}` has no value"));
                out.push_str(value);
            }
        }
    }
    out
}

/// Text before the first slot and after the last slot of a template.
fn frame(template: &str) -> (&str, &str) {
    let p = pieces(template);
    let head = match p.first() {
        Some(Piece::Text(t)) => *t,
        _ => "",
    };
    let tail = match p.last() {
        Some(Piece::Text(t)) => *t,
        _ => "",
    };
    (head, tail)
}

pub fn extraction(question: &str, chunk: &str) -> String {
    render(EXTRACTION_TEMPLATE, &[("question", question), ("chunk", chunk)])
}

pub fn verification(claim: &str, evidence: &str) -> String {
    render(VERIFICATION_TEMPLATE, &[("claim", claim), ("evidence", evidence)])
}

/// Recovers the response chunk from a rendered extraction prompt.
///
/// Mock backends use this to answer by content. Returns `None` for any text
/// that was not produced by the extraction template.
pub fn extraction_prompt_chunk(prompt: &str) -> Option<&str> {
    let (head, tail) = frame(EXTRACTION_TEMPLATE);
    let body = prompt.strip_prefix(head)?.strip_suffix(tail)?;
    let marker = format!("\nResponse: {CHUNK_OPEN}");
    let at = body.find(&marker)?;
    Some(&body[at + marker.len()..])
}

/// Recovers the question from a rendered extraction prompt.
pub fn extraction_prompt_question(prompt: &str) -> Option<&str> {
    let (head, tail) = frame(EXTRACTION_TEMPLATE);
    let body = prompt.strip_prefix(head)?.strip_suffix(tail)?;
    let at = body.find(&format!("\nResponse: {CHUNK_OPEN}"))?;
    Some(&body[..at])
}

/// Recovers the claim text from a rendered verification prompt.
pub fn verification_prompt_claim(prompt: &str) -> Option<&str> {
    let (head, tail) = frame(VERIFICATION_TEMPLATE);
    let body = prompt.strip_prefix(head)?.strip_suffix(tail)?;
    let at = body.find("\nSearched Results: ")?;
    Some(&body[..at])
}

/// Recovers the serialized evidence block from a rendered verification prompt.
pub fn verification_prompt_evidence(prompt: &str) -> Option<&str> {
    let (head, tail) = frame(VERIFICATION_TEMPLATE);
    let body = prompt.strip_prefix(head)?.strip_suffix(tail)?;
    let marker = "\nSearched Results: ";
    let at = body.find(marker)?;
    Some(&body[at + marker.len()..])
}
