use serde::{Deserialize, Serialize};

/// Visual attributes extracted from a chat reply.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub color: Option<String>,
    pub shape: Option<String>,
    pub location: Option<String>,
    pub raw_reply: String,
}

impl AttributeSet {
    /// No usable attribute was found (refusal, free prose, empty reply).
    pub fn is_degraded(&self) -> bool {
        self.color.is_none() && self.shape.is_none() && self.location.is_none()
    }
}

#[derive(Clone, Copy)]
enum Field {
    Color,
    Shape,
    Location,
}

fn label_of(s: &str) -> Option<Field> {
    let label: String = s
        .chars()
        .filter(|c| !matches!(c, '*' | '_' | '`'))
        .collect::<String>()
        .trim()
        .to_ascii_lowercase();
    match label.as_str() {
        "color" | "colour" => Some(Field::Color),
        "shape" => Some(Field::Shape),
        "location" => Some(Field::Location),
        _ => None,
    }
}

fn strip_bullet(line: &str) -> &str {
    let mut s = line.trim_start();
    loop {
        let before = s;
        s = s.trim_start_matches(['-', '+', '>', '#', '•']).trim_start();
        // "1." / "2)" numbering
        let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits > 0 && matches!(s[digits..].chars().next(), Some('.') | Some(')')) {
            s = s[digits + 1..].trim_start();
        }
        // a lone leading '*' bullet, but not a "**bold**" marker
        if let Some(rest) = s.strip_prefix("* ") {
            s = rest.trim_start();
        }
        if s == before {
            return s;
        }
    }
}

fn clean_value(v: &str) -> Option<String> {
    let v = v
        .trim()
        .trim_matches(|c: char| matches!(c, '*' | '_' | '`') || c.is_whitespace())
        .trim_end_matches('.')
        .trim();
    (!v.is_empty()).then(|| v.to_string())
}

/// Extracts the first non-empty `color:`, `shape:` and `location:` lines.
///
/// Labels are case-insensitive and may carry markdown bullets, numbering or
/// bold markers. Fields absent from the reply stay absent; this never fails.
pub fn parse_attributes(reply: &str) -> AttributeSet {
    let mut out = AttributeSet {
        raw_reply: reply.to_string(),
        ..Default::default()
    };
    for line in reply.lines() {
        let line = strip_bullet(line);
        let Some((label, value)) = line.split_once(':') else {
            continue;
        };
        let Some(field) = label_of(label) else {
            continue;
        };
        let slot = match field {
            Field::Color => &mut out.color,
            Field::Shape => &mut out.shape,
            Field::Location => &mut out.location,
        };
        if slot.is_none() {
            *slot = clean_value(value);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_parse() {
        let a = parse_attributes("color: dark brown\nshape: irregular oval\nlocation: central region of the skin");
        assert_eq!(a.color.as_deref(), Some("dark brown"));
        assert_eq!(a.shape.as_deref(), Some("irregular oval"));
        assert_eq!(a.location.as_deref(), Some("central region of the skin"));
        assert!(!a.is_degraded());
    }

    #[test]
    fn no_labels_is_degraded() {
        let reply = "Sorry, I cannot analyze medical images.";
        let a = parse_attributes(reply);
        assert!(a.is_degraded());
        assert_eq!(a.raw_reply, reply);
    }

    /// (reply, color, shape, location)
    type Case = (
        &'static str,
        Option<&'static str>,
        Option<&'static str>,
        Option<&'static str>,
    );
    const TABLE: &[Case] = &[
        ("color: red\ncolor: blue", Some("red"), None, None),
        (
            "Color: red\nSHAPE: round\nshape: square",
            Some("red"),
            Some("round"),
            None,
        ),
        ("color:\ncolor: green", Some("green"), None, None),
        (
            "- color: pink\n* shape: flat\n1. location: left",
            Some("pink"),
            Some("flat"),
            Some("left"),
        ),
        (
            "**Color:** pale yellow.\n**Location**: top right",
            Some("pale yellow"),
            None,
            Some("top right"),
        ),
        ("Here you go!\n\n  colour: grey  \nThanks", Some("grey"), None, None),
        ("The color: is not a label line", None, None, None),
        (
            "location: near the edge: lower left",
            None,
            None,
            Some("near the edge: lower left"),
        ),
        ("", None, None, None),
    ];

    #[test]
    fn parser_table() {
        for &(reply, color, shape, location) in TABLE {
            let a = parse_attributes(reply);
            assert_eq!(a.color.as_deref(), color, "color for {reply:?}");
            assert_eq!(a.shape.as_deref(), shape, "shape for {reply:?}");
            assert_eq!(a.location.as_deref(), location, "location for {reply:?}");
        }
    }

    #[test]
    fn never_fabricates() {
        for &(reply, ..) in TABLE {
            let a = parse_attributes(reply);
            for v in [&a.color, &a.shape, &a.location].into_iter().flatten() {
                assert!(reply.contains(v.as_str()), "{v:?} not in {reply:?}");
            }
        }
    }
}
