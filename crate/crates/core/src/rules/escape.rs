//! Content pattern text codec.
//!
//! Patterns are written as quoted text where `|..|` sections hold
//! whitespace-separated hex byte pairs and everything else is literal
//! printable ASCII: `"|00 01|X"` decodes to `[0x00, 0x01, 0x58]`.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscapeError {
    /// Byte offset of the offending character within the pattern text.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for EscapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at offset {})", self.message, self.offset)
    }
}

impl std::error::Error for EscapeError {}

fn err(offset: usize, message: impl Into<String>) -> EscapeError {
    EscapeError {
        offset,
        message: message.into(),
    }
}

/// Decodes the text between the quotes of a `content:` option.
pub fn decode_pattern(text: &str) -> Result<Vec<u8>, EscapeError> {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'|' => {
                let start = i;
                i += 1;
                let mut pending: Option<u8> = None;
                loop {
                    if i >= bytes.len() {
                        return Err(err(start, "unterminated hex section"));
                    }
                    match bytes[i] {
                        b'|' => {
                            if pending.is_some() {
                                return Err(err(i, "odd number of hex digits"));
                            }
                            i += 1;
                            break;
                        }
                        b' ' | b'\t' => {
                            if pending.is_some() {
                                return Err(err(i, "hex digits must come in pairs"));
                            }
                            i += 1;
                        }
                        c if c.is_ascii_hexdigit() => {
                            let nibble = (c as char).to_digit(16).unwrap() as u8;
                            match pending.take() {
                                Some(hi) => out.push(hi << 4 | nibble),
                                None => pending = Some(nibble),
                            }
                            i += 1;
                        }
                        c => {
                            return Err(err(i, format!("invalid hex character {:?}", c as char)));
                        }
                    }
                }
            }
            b'"' => return Err(err(i, "unescaped quote in pattern")),
            c if (0x20..0x7f).contains(&c) => {
                out.push(c);
                i += 1;
            }
            c => {
                return Err(err(
                    i,
                    format!("non-printable byte 0x{c:02X} must use |hex| escapes"),
                ));
            }
        }
    }
    Ok(out)
}

/// True when the byte can appear literally inside a quoted pattern.
/// Structural characters and anything non-printable go through hex.
fn is_literal(b: u8) -> bool {
    (0x20..0x7f).contains(&b) && !matches!(b, b'|' | b'"' | b';' | b'\\')
}

/// Renders pattern bytes back to quoted-pattern text.
/// Inverse of [`decode_pattern`]: `decode(encode(b)) == b` for all `b`.
pub fn encode_pattern(pattern: &[u8]) -> String {
    let mut out = String::with_capacity(pattern.len() + 2);
    let mut i = 0;
    while i < pattern.len() {
        if is_literal(pattern[i]) {
            out.push(pattern[i] as char);
            i += 1;
        } else {
            out.push('|');
            let mut first = true;
            while i < pattern.len() && !is_literal(pattern[i]) {
                if !first {
                    out.push(' ');
                }
                out.push_str(&format!("{:02X}", pattern[i]));
                first = false;
                i += 1;
            }
            out.push('|');
        }
    }
    out
}
