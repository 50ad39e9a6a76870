//! A small lexical layer over SQL text: tokens with byte spans and paren
//! depth. Enough for the rewrites and checks that only need surface
//! structure (top-level clause detection, identifier footprints, neighbor
//! rewrites); it is not a parser.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    /// Bare word: keyword or identifier.
    Word,
    /// `"..."`, `` `...` `` or `[...]`.
    QuotedIdent,
    StringLit,
    Number,
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Semicolon,
    Op,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
    /// Paren depth at which the token sits (a `(` sits at the outer depth).
    pub depth: usize,
}

impl Token {
    pub fn text<'a>(&self, sql: &'a str) -> &'a str {
        &sql[self.start..self.end]
    }

    pub fn is_word(&self, sql: &str, word: &str) -> bool {
        self.kind == TokenKind::Word && self.text(sql).eq_ignore_ascii_case(word)
    }

    /// Identifier text with quoting removed.
    pub fn ident<'a>(&self, sql: &'a str) -> Option<&'a str> {
        match self.kind {
            TokenKind::Word => Some(self.text(sql)),
            TokenKind::QuotedIdent => {
                let t = self.text(sql);
                Some(&t[1..t.len() - 1])
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub offset: usize,
    pub message: &'static str,
}

pub fn tokenize(sql: &str) -> Result<Vec<Token>, LexError> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut depth = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let kind = match c {
            b'\'' => {
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => {
                            return Err(LexError {
                                offset: start,
                                message: "unterminated string literal",
                            })
                        }
                        Some(b'\'') if bytes.get(i + 1) == Some(&b'\'') => i += 2,
                        Some(b'\'') => {
                            i += 1;
                            break;
                        }
                        Some(_) => i += 1,
                    }
                }
                TokenKind::StringLit
            }
            b'"' | b'`' | b'[' => {
                let close = if c == b'[' { b']' } else { c };
                i += 1;
                while i < bytes.len() && bytes[i] != close {
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(LexError {
                        offset: start,
                        message: "unterminated quoted identifier",
                    });
                }
                i += 1;
                TokenKind::QuotedIdent
            }
            b'(' => {
                i += 1;
                TokenKind::LParen
            }
            b')' => {
                i += 1;
                TokenKind::RParen
            }
            b',' => {
                i += 1;
                TokenKind::Comma
            }
            b'.' if !bytes.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                i += 1;
                TokenKind::Dot
            }
            b'*' => {
                i += 1;
                TokenKind::Star
            }
            b';' => {
                i += 1;
                TokenKind::Semicolon
            }
            c if c.is_ascii_digit() || c == b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
                    i += 1;
                }
                TokenKind::Number
            }
            c if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] >= 0x80)
                {
                    i += 1;
                }
                TokenKind::Word
            }
            _ => {
                i += 1;
                while i < bytes.len() && b"<>=!|".contains(&bytes[i]) && b"<>=!|".contains(&c) {
                    i += 1;
                }
                TokenKind::Op
            }
        };
        if kind == TokenKind::RParen {
            depth = depth.checked_sub(1).ok_or(LexError {
                offset: start,
                message: "unbalanced parenthesis",
            })?;
        }
        out.push(Token {
            kind,
            start,
            end: i,
            depth,
        });
        if kind == TokenKind::LParen {
            depth += 1;
        }
    }
    if depth != 0 {
        return Err(LexError {
            offset: sql.len(),
            message: "unbalanced parenthesis",
        });
    }
    Ok(out)
}

/// Whether the outermost query carries an `ORDER BY`.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let Ok(toks) = tokenize(sql) else {
        return false;
    };
    toks.windows(2)
        .any(|w| w[0].depth == 0 && w[0].is_word(sql, "order") && w[1].is_word(sql, "by"))
}

/// Lowercased identifiers (bare or quoted) mentioned anywhere in the text,
/// plus `*` when a star appears.
pub fn identifier_footprint(sql: &str) -> std::collections::BTreeSet<String> {
    let mut out = std::collections::BTreeSet::new();
    if let Ok(toks) = tokenize(sql) {
        for t in &toks {
            if let Some(id) = t.ident(sql) {
                out.insert(id.to_ascii_lowercase());
            } else if t.kind == TokenKind::Star {
                out.insert("*".into());
            }
        }
    } else {
        // Unlexable text: fall back to a crude word split so pruning stays
        // conservative.
        for w in sql.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
            if !w.is_empty() {
                out.insert(w.to_ascii_lowercase());
            }
        }
        out.insert("*".into());
    }
    out
}
