//! Tokenizer for the `.tm` model language.

use serde::Serialize;

/// A half-open region of the input, 1-based line and column, length in
/// characters. Attached to every parse diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SourceSpan {
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl SourceSpan {
    pub fn point(line: u32, column: u32) -> SourceSpan {
        SourceSpan {
            line,
            column,
            length: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Str(String),
    Int(i64),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Colon,
    Comma,
    Dot,
    Arrow,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("`{s}`"),
            TokenKind::Str(_) => "string literal".to_string(),
            TokenKind::Int(_) => "integer literal".to_string(),
            TokenKind::LBrace => "`{`".to_string(),
            TokenKind::RBrace => "`}`".to_string(),
            TokenKind::LBracket => "`[`".to_string(),
            TokenKind::RBracket => "`]`".to_string(),
            TokenKind::LParen => "`(`".to_string(),
            TokenKind::RParen => "`)`".to_string(),
            TokenKind::Colon => "`:`".to_string(),
            TokenKind::Comma => "`,`".to_string(),
            TokenKind::Dot => "`.`".to_string(),
            TokenKind::Arrow => "`->`".to_string(),
            TokenKind::Eq => "`=`".to_string(),
            TokenKind::Ne => "`!=`".to_string(),
            TokenKind::Lt => "`<`".to_string(),
            TokenKind::Le => "`<=`".to_string(),
            TokenKind::Gt => "`>`".to_string(),
            TokenKind::Ge => "`>=`".to_string(),
            TokenKind::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: SourceSpan,
}

/// A lexing problem; carried forward as a parse diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct LexError {
    pub span: SourceSpan,
    pub message: String,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    column: u32,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Lexer<'a> {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn span_from(&self, line: u32, column: u32) -> SourceSpan {
        let length = if line == self.line && self.column >= column {
            self.column - column
        } else {
            1
        };
        SourceSpan {
            line,
            column,
            length,
        }
    }
}

/// Tokenizes `text`. Always terminates; the token stream ends with `Eof`.
pub fn lex(text: &str) -> Result<Vec<Token>, LexError> {
    let mut lx = Lexer::new(text);
    let mut tokens = Vec::new();
    loop {
        while let Some(c) = lx.peek() {
            if c.is_whitespace() {
                lx.bump();
            } else if c == '#' {
                while let Some(c) = lx.peek() {
                    if c == '\n' {
                        break;
                    }
                    lx.bump();
                }
            } else {
                break;
            }
        }
        let (line, column) = (lx.line, lx.column);
        let Some(c) = lx.peek() else {
            tokens.push(Token {
                kind: TokenKind::Eof,
                span: SourceSpan::point(line, column),
            });
            return Ok(tokens);
        };

        let kind = match c {
            '{' => {
                lx.bump();
                TokenKind::LBrace
            }
            '}' => {
                lx.bump();
                TokenKind::RBrace
            }
            '[' => {
                lx.bump();
                TokenKind::LBracket
            }
            ']' => {
                lx.bump();
                TokenKind::RBracket
            }
            '(' => {
                lx.bump();
                TokenKind::LParen
            }
            ')' => {
                lx.bump();
                TokenKind::RParen
            }
            ':' => {
                lx.bump();
                TokenKind::Colon
            }
            ',' => {
                lx.bump();
                TokenKind::Comma
            }
            '.' => {
                lx.bump();
                TokenKind::Dot
            }
            '=' => {
                lx.bump();
                TokenKind::Eq
            }
            '!' => {
                lx.bump();
                if lx.peek() == Some('=') {
                    lx.bump();
                    TokenKind::Ne
                } else {
                    return Err(LexError {
                        span: lx.span_from(line, column),
                        message: "expected `!=`".to_string(),
                    });
                }
            }
            '<' => {
                lx.bump();
                if lx.peek() == Some('=') {
                    lx.bump();
                    TokenKind::Le
                } else {
                    TokenKind::Lt
                }
            }
            '>' => {
                lx.bump();
                if lx.peek() == Some('=') {
                    lx.bump();
                    TokenKind::Ge
                } else {
                    TokenKind::Gt
                }
            }
            '-' => {
                lx.bump();
                match lx.peek() {
                    Some('>') => {
                        lx.bump();
                        TokenKind::Arrow
                    }
                    Some(d) if d.is_ascii_digit() => lex_int(&mut lx, true, line, column)?,
                    _ => {
                        return Err(LexError {
                            span: lx.span_from(line, column),
                            message: "expected `->` or a digit after `-`".to_string(),
                        })
                    }
                }
            }
            '"' => {
                lx.bump();
                let mut value = String::new();
                loop {
                    match lx.peek() {
                        None | Some('\n') => {
                            return Err(LexError {
                                span: lx.span_from(line, column),
                                message: "unterminated string literal".to_string(),
                            })
                        }
                        Some('"') => {
                            lx.bump();
                            break;
                        }
                        Some('\\') => {
                            lx.bump();
                            match lx.peek() {
                                Some('"') => {
                                    lx.bump();
                                    value.push('"');
                                }
                                Some('\\') => {
                                    lx.bump();
                                    value.push('\\');
                                }
                                other => {
                                    return Err(LexError {
                                        span: lx.span_from(line, column),
                                        message: format!(
                                            "unsupported escape `\\{}` (only \\\" and \\\\)",
                                            other.map(String::from).unwrap_or_default()
                                        ),
                                    })
                                }
                            }
                        }
                        Some(_) => {
                            let c = lx.bump().unwrap();
                            value.push(c);
                        }
                    }
                }
                TokenKind::Str(value)
            }
            c if c.is_ascii_digit() => lex_int(&mut lx, false, line, column)?,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(c) = lx.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        ident.push(c);
                        lx.bump();
                    } else {
                        break;
                    }
                }
                TokenKind::Ident(ident)
            }
            other => {
                lx.bump();
                return Err(LexError {
                    span: lx.span_from(line, column),
                    message: format!("unexpected character `{other}`"),
                });
            }
        };
        let span = lx.span_from(line, column);
        tokens.push(Token { kind, span });
    }
}

fn lex_int(lx: &mut Lexer, negative: bool, line: u32, column: u32) -> Result<TokenKind, LexError> {
    let mut digits = String::new();
    while let Some(c) = lx.peek() {
        if c.is_ascii_digit() {
            digits.push(c);
            lx.bump();
        } else {
            break;
        }
    }
    let text = if negative {
        format!("-{digits}")
    } else {
        digits
    };
    text.parse::<i64>().map(TokenKind::Int).map_err(|_| LexError {
        span: lx.span_from(line, column),
        message: format!("integer literal `{text}` out of range"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(text: &str) -> Vec<TokenKind> {
        lex(text).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn lexes_punctuation_and_idents() {
        let ks = kinds("flow a.b -> c_1 # comment\n{}");
        assert_eq!(
            ks,
            vec![
                TokenKind::Ident("flow".into()),
                TokenKind::Ident("a".into()),
                TokenKind::Dot,
                TokenKind::Ident("b".into()),
                TokenKind::Arrow,
                TokenKind::Ident("c_1".into()),
                TokenKind::LBrace,
                TokenKind::RBrace,
                TokenKind::Eof,
            ]
        );
    }

    #[test]
    fn lexes_strings_with_escapes() {
        let ks = kinds(r#""a\"b\\c""#);
        assert_eq!(ks[0], TokenKind::Str(r#"a"b\c"#.into()));
    }

    #[test]
    fn rejects_bad_escape_and_unterminated() {
        assert!(lex(r#""a\n""#).is_err());
        let err = lex("\"abc").unwrap_err();
        assert!(err.message.contains("unterminated"));
        assert_eq!(err.span.line, 1);
        assert_eq!(err.span.column, 1);
    }

    #[test]
    fn lexes_integers_including_negative() {
        assert_eq!(kinds("42")[0], TokenKind::Int(42));
        assert_eq!(kinds("-7")[0], TokenKind::Int(-7));
        assert!(lex("99999999999999999999").is_err());
    }

    #[test]
    fn comparison_operators() {
        assert_eq!(
            kinds("= != < <= > >=")[..6],
            [
                TokenKind::Eq,
                TokenKind::Ne,
                TokenKind::Lt,
                TokenKind::Le,
                TokenKind::Gt,
                TokenKind::Ge,
            ]
        );
    }

    #[test]
    fn spans_track_lines_and_columns() {
        let toks = lex("a\n  bb").unwrap();
        assert_eq!(toks[0].span, SourceSpan { line: 1, column: 1, length: 1 });
        assert_eq!(toks[1].span, SourceSpan { line: 2, column: 3, length: 2 });
    }
}
