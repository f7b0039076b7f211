use super::ast::Span;
use super::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    /// `@name{...}` or `@name(...)` with the raw text between delimiters.
    Annot(String, String),
    /// `$assert{label}`
    Assert(String),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Annot(n, _) => format!("`@{n}`"),
            Tok::Assert(_) => "`$assert`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

const SYMS: [&str; 22] = [
    "&&", "||", "==", "!=", "<=", ">=", "->", "{", "}", "(", ")", ";", ",", ".", "=", "<", ">",
    "!", "*", ":", "|", "^",
];

pub fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };

    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            advance(&mut i, &mut line, &mut col, 2);
            loop {
                if i + 1 >= chars.len() {
                    return Err(ParseError::at(span, "unterminated comment"));
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    advance(&mut i, &mut line, &mut col, 2);
                    break;
                }
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(&mut i, &mut line, &mut col, 1);
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), span));
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            advance(&mut i, &mut line, &mut col, 1);
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(&mut i, &mut line, &mut col, 1);
            }
            let text: String = chars[start..i].iter().collect();
            let n = text
                .parse()
                .map_err(|_| ParseError::at(span, format!("integer `{text}` out of range")))?;
            out.push((Tok::Int(n), span));
            continue;
        }
        if c == '@' || c == '$' {
            advance(&mut i, &mut line, &mut col, 1);
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(&mut i, &mut line, &mut col, 1);
            }
            let name: String = chars[start..i].iter().collect();
            let (open, close) = match chars.get(i) {
                Some('{') => ('{', '}'),
                Some('(') => ('(', ')'),
                _ => return Err(ParseError::at(span, format!("`{c}{name}` needs a braced argument"))),
            };
            advance(&mut i, &mut line, &mut col, 1);
            let body_start = i;
            let mut depth = 1;
            while i < chars.len() {
                if chars[i] == open {
                    depth += 1;
                } else if chars[i] == close {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                advance(&mut i, &mut line, &mut col, 1);
            }
            if i >= chars.len() {
                return Err(ParseError::at(span, format!("unterminated `{c}{name}` annotation")));
            }
            let body: String = chars[body_start..i].iter().collect();
            advance(&mut i, &mut line, &mut col, 1);
            match (c, name.as_str()) {
                ('$', "assert") => out.push((Tok::Assert(body.trim().to_string()), span)),
                ('$', _) => return Err(ParseError::at(span, format!("unknown keyword `${name}`"))),
                _ => out.push((Tok::Annot(name, body), span)),
            }
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                advance(&mut i, &mut line, &mut col, s.chars().count());
                out.push((Tok::Sym(s), span));
            }
            None => return Err(ParseError::at(span, format!("unexpected character `{c}`"))),
        }
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}
