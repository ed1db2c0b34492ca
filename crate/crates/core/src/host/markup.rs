//! Toy markup: `<tag a="v">...</tag>`, self-closing `<tag .../>`, and text.
//!
//! The tokenizer works on byte ranges so a document can be fed in arbitrary
//! chunks; a token is produced only once all its bytes have arrived.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Start { name: String, attrs: Vec<(String, String)>, self_closing: bool },
    End { name: String },
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("markup error at byte {offset}: {message}")]
pub struct MarkupError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: &str) -> Result<T, MarkupError> {
    Err(MarkupError { offset, message: message.to_string() })
}

/// Scans complete tokens in `src[from..limit]`. Returns the tokens and the
/// offset where the first incomplete token starts. Text runs are complete
/// only when followed by `<` or when `limit` is the end of the document.
pub fn scan(src: &str, from: usize, limit: usize) -> Result<(Vec<Token>, usize), MarkupError> {
    let bytes = src.as_bytes();
    let at_eof = limit >= bytes.len();
    let limit = limit.min(bytes.len());
    let mut pos = from;
    let mut out = Vec::new();
    while pos < limit {
        if bytes[pos] == b'<' {
            let Some(rel) = bytes[pos..limit].iter().position(|&b| b == b'>') else {
                break;
            };
            let end = pos + rel + 1;
            out.push(parse_tag(&src[pos..end], pos)?);
            pos = end;
        } else {
            let rel = bytes[pos..limit].iter().position(|&b| b == b'<');
            let end = match rel {
                Some(r) => pos + r,
                None if at_eof => limit,
                None => break,
            };
            let text = src[pos..end].trim();
            if !text.is_empty() {
                out.push(Token::Text(text.to_string()));
            }
            pos = end;
        }
    }
    Ok((out, pos))
}

fn is_name(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b':'
}

fn parse_tag(tag: &str, at: usize) -> Result<Token, MarkupError> {
    let inner = &tag[1..tag.len() - 1];
    if let Some(name) = inner.strip_prefix('/') {
        let name = name.trim();
        if name.is_empty() || !name.bytes().all(is_name) {
            return err(at, "bad end tag");
        }
        return Ok(Token::End { name: name.to_string() });
    }
    let (inner, self_closing) = match inner.strip_suffix('/') {
        Some(s) => (s, true),
        None => (inner, false),
    };
    let b = inner.as_bytes();
    let mut i = 0;
    while i < b.len() && is_name(b[i]) {
        i += 1;
    }
    if i == 0 {
        return err(at, "missing tag name");
    }
    let name = inner[..i].to_string();
    let mut attrs = Vec::new();
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= b.len() {
            break;
        }
        let s = i;
        while i < b.len() && is_name(b[i]) {
            i += 1;
        }
        if s == i {
            return err(at + 1 + i, "bad attribute name");
        }
        let key = inner[s..i].to_string();
        if i >= b.len() || b[i] != b'=' {
            attrs.push((key, String::new()));
            continue;
        }
        i += 1;
        if i >= b.len() || b[i] != b'"' {
            return err(at + 1 + i, "attribute value must be quoted");
        }
        i += 1;
        let vs = i;
        while i < b.len() && b[i] != b'"' {
            i += 1;
        }
        if i >= b.len() {
            return err(at + 1 + i, "unterminated attribute value");
        }
        attrs.push((key, inner[vs..i].to_string()));
        i += 1;
    }
    Ok(Token::Start { name, attrs, self_closing })
}

/// Checks a whole document: tokens are well formed and tags balance.
pub fn validate(src: &str) -> Result<(), MarkupError> {
    let (tokens, end) = scan(src, 0, src.len())?;
    if end != src.len() {
        return err(end, "unterminated tag");
    }
    let mut stack: Vec<String> = Vec::new();
    for t in tokens {
        match t {
            Token::Start { name, self_closing: false, .. } => stack.push(name),
            Token::End { name } => match stack.pop() {
                Some(open) if open == name => {}
                _ => return err(0, &format!("unbalanced </{name}>")),
            },
            _ => {}
        }
    }
    if let Some(open) = stack.pop() {
        return err(src.len(), &format!("unclosed <{open}>"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens() {
        let src = r#"<div id="a"><img src="x.png"/>hi</div>"#;
        let (t, end) = scan(src, 0, src.len()).unwrap();
        assert_eq!(end, src.len());
        assert_eq!(t.len(), 4);
        assert_eq!(
            t[0],
            Token::Start { name: "div".into(), attrs: vec![("id".into(), "a".into())], self_closing: false }
        );
        assert!(matches!(&t[1], Token::Start { self_closing: true, .. }));
        assert_eq!(t[2], Token::Text("hi".into()));
        assert_eq!(t[3], Token::End { name: "div".into() });
    }

    #[test]
    fn incomplete_tag_waits_for_closing_byte() {
        let src = r#"<div id="a"><p>"#;
        let (t, end) = scan(src, 0, 8).unwrap();
        assert!(t.is_empty());
        assert_eq!(end, 0);
        let (t, end) = scan(src, 0, 12).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(end, 12);
    }

    #[test]
    fn chunked_equals_whole() {
        let src = r#"<ul><li a="1">one</li><li>two</li></ul>"#;
        let whole = scan(src, 0, src.len()).unwrap().0;
        for step in 1..8 {
            let mut pos = 0;
            let mut got = Vec::new();
            let mut limit = 0;
            while limit < src.len() {
                limit = (limit + step).min(src.len());
                let (t, p) = scan(src, pos, limit).unwrap();
                got.extend(t);
                pos = p;
            }
            assert_eq!(got, whole, "step {step}");
        }
    }

    #[test]
    fn validation() {
        assert!(validate("<a><b></b></a>").is_ok());
        assert!(validate("<a><b></a>").is_err());
        assert!(validate("<a").is_err());
        assert!(validate(r#"<a x=1></a>"#).is_err());
    }
}
