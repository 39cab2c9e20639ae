use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Concept,
    Modality,
    Color,
    Shape,
    Location,
}

impl Var {
    fn parse(name: &str) -> Option<Var> {
        Some(match name {
            "concept" => Var::Concept,
            "modality" => Var::Modality,
            "color" => Var::Color,
            "shape" => Var::Shape,
            "location" => Var::Location,
            _ => return None,
        })
    }

    pub fn is_attribute(self) -> bool {
        matches!(self, Var::Color | Var::Shape | Var::Location)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Var(Var),
    Optional(Vec<Piece>),
}

/// Parsed text template.
///
/// `{name}` substitutes a variable, `[ ... ]` is an optional clause that
/// disappears when any variable inside it has no value, and `{{ }} [[ ]]`
/// are literal characters. Clauses do not nest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(id: &str, source: &str) -> Result<Template, PromptError> {
        let bad = |msg: String| PromptError::BadTemplate {
            id: id.to_string(),
            message: msg,
        };
        let mut top: Vec<Piece> = Vec::new();
        let mut clause: Option<Vec<Piece>> = None;
        let mut text = String::new();
        let mut chars = source.chars().peekable();

        fn flush(text: &mut String, out: &mut Vec<Piece>) {
            if !text.is_empty() {
                out.push(Piece::Text(std::mem::take(text)));
            }
        }

        while let Some(c) = chars.next() {
            match c {
                '{' | '}' | '[' | ']' if chars.peek() == Some(&c) => {
                    chars.next();
                    text.push(c);
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => name.push(ch),
                            None => return Err(bad("unterminated placeholder".into())),
                        }
                    }
                    let var = Var::parse(name.trim()).ok_or_else(|| bad(format!("unknown placeholder {{{name}}}")))?;
                    let out = clause.as_mut().unwrap_or(&mut top);
                    flush(&mut text, out);
                    out.push(Piece::Var(var));
                }
                '[' => {
                    if clause.is_some() {
                        return Err(bad("optional clauses cannot nest".into()));
                    }
                    flush(&mut text, &mut top);
                    clause = Some(Vec::new());
                }
                ']' => {
                    let mut inner = clause.take().ok_or_else(|| bad("unbalanced ']'".into()))?;
                    flush(&mut text, &mut inner);
                    top.push(Piece::Optional(inner));
                }
                '}' => return Err(bad("unbalanced '}'".into())),
                other => text.push(other),
            }
        }
        if clause.is_some() {
            return Err(bad("unterminated optional clause".into()));
        }
        flush(&mut text, &mut top);
        Ok(Template { pieces: top })
    }

    /// Whether `var` appears outside any optional clause.
    pub fn has_required(&self, var: Var) -> bool {
        self.pieces.contains(&Piece::Var(var))
    }

    pub fn uses(&self, pred: impl Fn(Var) -> bool) -> bool {
        fn walk(pieces: &[Piece], pred: &dyn Fn(Var) -> bool) -> bool {
            pieces.iter().any(|p| match p {
                Piece::Var(v) => pred(*v),
                Piece::Optional(inner) => walk(inner, pred),
                Piece::Text(_) => false,
            })
        }
        walk(&self.pieces, &pred)
    }

    /// Single-pass substitution; substituted values are never re-expanded.
    pub fn render(&self, lookup: impl Fn(Var) -> Option<String>) -> String {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(v) => out.push_str(&lookup(*v).unwrap_or_default()),
                Piece::Optional(inner) => {
                    let mut buf = String::new();
                    let mut complete = true;
                    for p in inner {
                        match p {
                            Piece::Text(t) => buf.push_str(t),
                            Piece::Var(v) => match lookup(*v) {
                                Some(val) => buf.push_str(&val),
                                None => complete = false,
                            },
                            Piece::Optional(_) => unreachable!("clauses do not nest"),
                        }
                    }
                    if complete {
                        out.push_str(&buf);
                    }
                }
            }
        }
        out
    }
}
