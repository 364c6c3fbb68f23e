//! Agent actions and their one-line canonical text form.
//!
//! Grammar (no whitespace anywhere except inside quoted text):
//!
//! ```text
//! CLICK(<widget-id>)          widget-id = [A-Za-z0-9_.-]+
//! TYPE("<json string>")
//! HOTKEY(<key>+<key>...)      key = [a-z0-9]+
//! SCROLL(up|down,<amount>)
//! TERMINATE(success|failure)
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse action `{input}`: {reason}")]
pub struct ActionParseError {
    pub input: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermStatus {
    Success,
    Failure,
}

impl TermStatus {
    fn as_str(self) -> &'static str {
        match self {
            TermStatus::Success => "success",
            TermStatus::Failure => "failure",
        }
    }
}

/// A single agent action. Serializes as its canonical string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Action {
    Click(String),
    Type(String),
    Hotkey(Vec<String>),
    Scroll(ScrollDirection, u32),
    Terminate(TermStatus),
}

fn is_widget_id(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

fn is_key(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

impl Action {
    pub fn click(id: impl Into<String>) -> Self {
        Action::Click(id.into())
    }

    pub fn type_text(text: impl Into<String>) -> Self {
        Action::Type(text.into())
    }

    pub fn hotkey<I, S>(keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Action::Hotkey(keys.into_iter().map(Into::into).collect())
    }

    pub fn is_terminate(&self) -> bool {
        matches!(self, Action::Terminate(_))
    }

    pub fn verb(&self) -> &'static str {
        match self {
            Action::Click(_) => "CLICK",
            Action::Type(_) => "TYPE",
            Action::Hotkey(_) => "HOTKEY",
            Action::Scroll(..) => "SCROLL",
            Action::Terminate(_) => "TERMINATE",
        }
    }

    /// The canonical one-line form. `parse(canonical_form())` returns `self`
    /// for every action whose identifiers satisfy the grammar.
    pub fn canonical_form(&self) -> String {
        match self {
            Action::Click(id) => format!("CLICK({id})"),
            Action::Type(text) => {
                let quoted = serde_json::to_string(text).expect("strings always serialize");
                format!("TYPE({quoted})")
            }
            Action::Hotkey(keys) => format!("HOTKEY({})", keys.join("+")),
            Action::Scroll(dir, amount) => {
                let d = match dir {
                    ScrollDirection::Up => "up",
                    ScrollDirection::Down => "down",
                };
                format!("SCROLL({d},{amount})")
            }
            Action::Terminate(status) => format!("TERMINATE({})", status.as_str()),
        }
    }

    pub fn parse(input: &str) -> Result<Self, ActionParseError> {
        let err = |reason| ActionParseError {
            input: input.to_string(),
            reason,
        };
        let open = input.find('(').ok_or_else(|| err("missing `(`"))?;
        if !input.ends_with(')') {
            return Err(err("missing trailing `)`"));
        }
        let verb = &input[..open];
        let args = &input[open + 1..input.len() - 1];
        match verb {
            "CLICK" => {
                if is_widget_id(args) {
                    Ok(Action::Click(args.to_string()))
                } else {
                    Err(err("invalid widget id"))
                }
            }
            "TYPE" => {
                if !args.starts_with('"') {
                    return Err(err("TYPE expects a quoted string"));
                }
                let text: String =
                    serde_json::from_str(args).map_err(|_| err("malformed quoted string"))?;
                // Reject alternative escapings so the text form stays unique.
                if serde_json::to_string(&text).ok().as_deref() != Some(args) {
                    return Err(err("non-canonical string escaping"));
                }
                Ok(Action::Type(text))
            }
            "HOTKEY" => {
                let keys: Vec<&str> = args.split('+').collect();
                if keys.iter().all(|k| is_key(k)) {
                    Ok(Action::Hotkey(keys.into_iter().map(str::to_string).collect()))
                } else {
                    Err(err("invalid hotkey"))
                }
            }
            "SCROLL" => {
                let (dir, amount) = args.split_once(',').ok_or_else(|| err("SCROLL expects two args"))?;
                let dir = match dir {
                    "up" => ScrollDirection::Up,
                    "down" => ScrollDirection::Down,
                    _ => return Err(err("scroll direction must be up or down")),
                };
                if amount.is_empty()
                    || !amount.bytes().all(|b| b.is_ascii_digit())
                    || (amount.len() > 1 && amount.starts_with('0'))
                {
                    return Err(err("scroll amount must be a canonical integer"));
                }
                let amount = amount.parse().map_err(|_| err("scroll amount out of range"))?;
                Ok(Action::Scroll(dir, amount))
            }
            "TERMINATE" => match args {
                "success" => Ok(Action::Terminate(TermStatus::Success)),
                "failure" => Ok(Action::Terminate(TermStatus::Failure)),
                _ => Err(err("terminate status must be success or failure")),
            },
            _ => Err(err("unknown verb")),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_form())
    }
}

impl FromStr for Action {
    type Err = ActionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::parse(s)
    }
}

impl From<Action> for String {
    fn from(a: Action) -> String {
        a.canonical_form()
    }
}

impl TryFrom<String> for Action {
    type Error = ActionParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Action::parse(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_examples() {
        assert_eq!(Action::click("save_btn").canonical_form(), "CLICK(save_btn)");
        assert_eq!(
            Action::type_text("Ada \"L\"").canonical_form(),
            r#"TYPE("Ada \"L\"")"#
        );
        assert_eq!(Action::hotkey(["ctrl", "s"]).canonical_form(), "HOTKEY(ctrl+s)");
        assert_eq!(
            Action::Scroll(ScrollDirection::Down, 2).canonical_form(),
            "SCROLL(down,2)"
        );
        assert_eq!(
            Action::Terminate(TermStatus::Failure).canonical_form(),
            "TERMINATE(failure)"
        );
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "CLICK()",
            "CLICK(a b)",
            "click(a)",
            "TYPE(abc)",
            "TYPE(\"\\u0041\")",
            "SCROLL(left,1)",
            "SCROLL(up,01)",
            "HOTKEY(Ctrl+s)",
            "TERMINATE(done)",
            "CLICK(a",
        ] {
            assert!(Action::parse(bad).is_err(), "{bad} should not parse");
        }
    }

    #[test]
    fn serde_uses_canonical_string() {
        let a = Action::click("ok");
        assert_eq!(serde_json::to_string(&a).unwrap(), "\"CLICK(ok)\"");
        let back: Action = serde_json::from_str("\"CLICK(ok)\"").unwrap();
        assert_eq!(back, a);
    }

    fn arb_action() -> impl Strategy<Value = Action> {
        let id = "[A-Za-z0-9_.-]{1,12}";
        let key = "[a-z0-9]{1,5}";
        prop_oneof![
            id.prop_map(Action::Click),
            any::<String>().prop_map(Action::Type),
            prop::collection::vec(key, 1..4).prop_map(Action::Hotkey),
            (prop_oneof![Just(ScrollDirection::Up), Just(ScrollDirection::Down)], any::<u32>())
                .prop_map(|(d, n)| Action::Scroll(d, n)),
            prop_oneof![Just(TermStatus::Success), Just(TermStatus::Failure)]
                .prop_map(Action::Terminate),
        ]
    }

    proptest! {
        #[test]
        fn canonical_round_trip(a in arb_action()) {
            let text = a.canonical_form();
            let parsed = Action::parse(&text).unwrap();
            prop_assert_eq!(&parsed, &a);
            prop_assert_eq!(parsed.canonical_form(), text);
        }
    }
}
