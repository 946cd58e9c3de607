//! Human-readable key sequences such as `ctrl-x a`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

const ESC: u8 = 0x1b;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeySeqError {
    #[error("empty key sequence")]
    Empty,
    #[error("missing key after modifier in `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{0}` cannot be combined with ctrl")]
    NoControlForm(String),
    #[error("`{0}` is not a letter and cannot be shifted")]
    NoShiftForm(String),
}

/// A key sequence in both its canonical human form and the bytes a terminal
/// delivers to the line editor when the user types it.
///
/// Tokens are separated by whitespace and parsed case-insensitively. A token
/// is an optional chain of modifiers (`ctrl-`/`c-`, `meta-`/`alt-`/`m-`,
/// `shift-`) followed by a single character or one of `esc`, `tab`, `space`,
/// `enter`, `backspace`. `ctrl-<c>` is `c & 0x1f`; meta prefixes ESC.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeySequence {
    human: String,
    wire: Vec<u8>,
}

impl KeySequence {
    pub fn parse(text: &str) -> Result<Self, KeySeqError> {
        let mut human = Vec::new();
        let mut wire = Vec::new();
        for token in text.split_whitespace() {
            let (canonical, bytes) = parse_token(&token.to_lowercase())?;
            human.push(canonical);
            wire.extend(bytes);
        }
        if wire.is_empty() {
            return Err(KeySeqError::Empty);
        }
        Ok(Self {
            human: human.join(" "),
            wire,
        })
    }

    /// The default AI help binding, `ctrl-x a`.
    pub fn default_binding() -> Self {
        Self::parse("ctrl-x a").expect("default binding parses")
    }

    pub fn human(&self) -> &str {
        &self.human
    }

    pub fn wire(&self) -> &[u8] {
        &self.wire
    }

    /// The sequence in the notation accepted by Readline's `rl_bind_keyseq`:
    /// raw bytes, with backslash escaped and NUL spelled `\C-@`.
    pub fn readline_notation(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire.len());
        for &b in &self.wire {
            match b {
                0 => out.extend_from_slice(b"\\C-@"),
                b'\\' => out.extend_from_slice(b"\\\\"),
                _ => out.push(b),
            }
        }
        out
    }
}

impl Default for KeySequence {
    fn default() -> Self {
        Self::default_binding()
    }
}

impl FromStr for KeySequence {
    type Err = KeySeqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for KeySequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.human)
    }
}

#[derive(Default)]
struct Modifiers {
    ctrl: bool,
    meta: bool,
    shift: bool,
}

fn parse_token(token: &str) -> Result<(String, Vec<u8>), KeySeqError> {
    let mut mods = Modifiers::default();
    let mut rest = token;
    loop {
        // A bare "-" or "c" is a key, not a modifier.
        let stripped = [
            ("ctrl-", 0),
            ("control-", 0),
            ("c-", 0),
            ("meta-", 1),
            ("alt-", 1),
            ("m-", 1),
            ("shift-", 2),
        ]
        .iter()
        .find_map(|(prefix, kind)| rest.strip_prefix(prefix).map(|r| (r, *kind)));
        match stripped {
            Some((r, kind)) => {
                match kind {
                    0 => mods.ctrl = true,
                    1 => mods.meta = true,
                    _ => mods.shift = true,
                }
                if r.is_empty() {
                    return Err(KeySeqError::MissingKey(token.to_owned()));
                }
                rest = r;
            }
            None => break,
        }
    }

    let (name, mut byte) = match rest {
        "esc" | "escape" => ("esc".to_owned(), ESC),
        "tab" => ("tab".to_owned(), b'\t'),
        "space" | "spc" => ("space".to_owned(), b' '),
        "enter" | "return" | "ret" => ("enter".to_owned(), b'\r'),
        "backspace" => ("backspace".to_owned(), 0x7f),
        _ => {
            let mut chars = rest.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii() && !c.is_ascii_control() => {
                    (c.to_string(), c as u8)
                }
                _ => return Err(KeySeqError::UnknownKey(rest.to_owned())),
            }
        }
    };

    if mods.shift {
        if !byte.is_ascii_lowercase() {
            return Err(KeySeqError::NoShiftForm(name));
        }
        byte = byte.to_ascii_uppercase();
    }
    if mods.ctrl {
        let ok =
            byte.is_ascii_alphabetic() || matches!(byte, b'@' | b'[' | b'\\' | b']' | b'^' | b'_');
        if !ok || name.len() > 1 {
            return Err(KeySeqError::NoControlForm(name));
        }
        byte &= 0x1f;
    }

    let mut canonical = String::new();
    if mods.ctrl {
        canonical.push_str("ctrl-");
    }
    if mods.meta {
        canonical.push_str("meta-");
    }
    if mods.shift {
        canonical.push_str("shift-");
    }
    canonical.push_str(&name);

    let bytes = if mods.meta {
        vec![ESC, byte]
    } else {
        vec![byte]
    };
    Ok((canonical, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_is_ctrl_x_a() {
        let seq = KeySequence::default_binding();
        assert_eq!(seq.wire(), &[0x18, 0x61]);
        assert_eq!(seq.human(), "ctrl-x a");
    }

    #[test]
    fn case_insensitive() {
        let seq: KeySequence = "Ctrl-X A".parse().unwrap();
        assert_eq!(seq, KeySequence::default_binding());
        assert_eq!(
            "C-x  a".parse::<KeySequence>().unwrap().wire(),
            &[0x18, 0x61]
        );
    }

    #[test]
    fn ctrl_g() {
        assert_eq!(KeySequence::parse("ctrl-g").unwrap().wire(), &[0x07]);
    }

    #[test]
    fn meta_and_named_keys() {
        assert_eq!(KeySequence::parse("alt-a").unwrap().wire(), &[0x1b, b'a']);
        assert_eq!(KeySequence::parse("meta-a").unwrap().human(), "meta-a");
        assert_eq!(
            KeySequence::parse("esc tab space").unwrap().wire(),
            b"\x1b\t "
        );
        assert_eq!(KeySequence::parse("shift-q").unwrap().wire(), b"Q");
        assert_eq!(KeySequence::parse("-").unwrap().wire(), b"-");
        assert_eq!(KeySequence::parse("c").unwrap().wire(), b"c");
    }

    #[test]
    fn malformed() {
        assert_eq!(
            KeySequence::parse("ctrl-"),
            Err(KeySeqError::MissingKey("ctrl-".into()))
        );
        assert_eq!(KeySequence::parse(""), Err(KeySeqError::Empty));
        assert_eq!(KeySequence::parse("   "), Err(KeySeqError::Empty));
        assert!(matches!(
            KeySequence::parse("ctrl-xy"),
            Err(KeySeqError::UnknownKey(_))
        ));
        assert!(matches!(
            KeySequence::parse("ctrl-1"),
            Err(KeySeqError::NoControlForm(_))
        ));
        assert!(matches!(
            KeySequence::parse("ctrl-tab"),
            Err(KeySeqError::NoControlForm(_))
        ));
        assert!(matches!(
            KeySequence::parse("shift-1"),
            Err(KeySeqError::NoShiftForm(_))
        ));
        assert!(matches!(
            KeySequence::parse("é"),
            Err(KeySeqError::UnknownKey(_))
        ));
    }

    #[test]
    fn readline_notation_escapes() {
        assert_eq!(
            KeySequence::parse("ctrl-x a").unwrap().readline_notation(),
            b"\x18a"
        );
        assert_eq!(
            KeySequence::parse("\\").unwrap().readline_notation(),
            b"\\\\"
        );
        assert_eq!(
            KeySequence::parse("ctrl-@").unwrap().readline_notation(),
            b"\\C-@"
        );
        assert_eq!(KeySequence::parse("ctrl-\\").unwrap().wire(), &[0x1c]);
    }

    proptest! {
        #[test]
        fn ctrl_letter_maps_to_low_five_bits(c in proptest::char::range('a', 'z'), upper in any::<bool>()) {
            let text = if upper { format!("CTRL-{}", c.to_ascii_uppercase()) } else { format!("ctrl-{c}") };
            let seq = KeySequence::parse(&text).unwrap();
            prop_assert_eq!(seq.wire(), &[(c as u8) & 0x1f][..]);
        }

        #[test]
        fn human_form_reparses_to_same_wire(text in "((ctrl-|alt-)?[a-z]|esc|tab|[0-9]) ((ctrl-|meta-)?[a-z]|space)?") {
            let seq = KeySequence::parse(&text).unwrap();
            let again = KeySequence::parse(seq.human()).unwrap();
            prop_assert_eq!(seq, again);
        }
    }
}
