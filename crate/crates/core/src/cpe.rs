//! CPE 2.3 formatted-string names (`cpe:2.3:part:vendor:product:...`).
//!
//! Component values are kept in their escaped, canonical text form so that
//! `parse` followed by `Display` reproduces the input up to canonicalization.
//! Canonical form drops the redundant escapes `\.`, `\-` and `\_`; every
//! other punctuation character must be escaped with a backslash.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

const PREFIX: &str = "cpe:2.3:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CpePart {
    #[serde(rename = "a")]
    Application,
    #[serde(rename = "o")]
    OperatingSystem,
    #[serde(rename = "h")]
    Hardware,
}

impl CpePart {
    pub fn as_char(self) -> char {
        match self {
            CpePart::Application => 'a',
            CpePart::OperatingSystem => 'o',
            CpePart::Hardware => 'h',
        }
    }
}

/// One attribute value: the logical `*` (ANY) and `-` (NA) markers are kept
/// distinct from literal values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CpeValue {
    Any,
    NotApplicable,
    /// Canonical escaped text; may carry leading/trailing `*` or `?` wildcards.
    Value(String),
}

impl CpeValue {
    /// The value with escapes removed, or `None` for the logical markers.
    pub fn unescaped(&self) -> Option<String> {
        let CpeValue::Value(raw) = self else {
            return None;
        };
        let mut out = String::with_capacity(raw.len());
        let mut chars = raw.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                if let Some(n) = chars.next() {
                    out.push(n);
                }
            } else {
                out.push(c);
            }
        }
        Some(out)
    }

    pub fn as_raw(&self) -> &str {
        match self {
            CpeValue::Any => "*",
            CpeValue::NotApplicable => "-",
            CpeValue::Value(v) => v,
        }
    }
}

impl fmt::Display for CpeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_raw())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cpe23 {
    pub part: CpePart,
    pub vendor: CpeValue,
    pub product: CpeValue,
    pub version: CpeValue,
    pub update: CpeValue,
    pub edition: CpeValue,
    pub language: CpeValue,
    pub sw_edition: CpeValue,
    pub target_sw: CpeValue,
    pub target_hw: CpeValue,
    pub other: CpeValue,
}

/// Parse failure with the byte offset of the first offending character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpeError {
    pub offset: usize,
    pub reason: &'static str,
}

impl fmt::Display for CpeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed CPE at offset {}: {}", self.offset, self.reason)
    }
}

fn err(offset: usize, reason: &'static str) -> CpeError {
    CpeError { offset, reason }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_graphic() && !c.is_ascii_alphanumeric()
}

/// Validate one attribute and return its canonical form. `base` is the byte
/// offset of the component within the whole string.
fn parse_value(raw: &str, base: usize) -> Result<CpeValue, CpeError> {
    match raw {
        "" => return Err(err(base, "empty component")),
        "*" => return Ok(CpeValue::Any),
        "-" => return Ok(CpeValue::NotApplicable),
        _ => {}
    }

    let bytes: Vec<(usize, char)> = raw.char_indices().collect();
    let n = bytes.len();
    let mut out = String::with_capacity(raw.len());
    let mut i = 0;
    // Leading wildcards: a single `*` or a run of `?`.
    if bytes[0].1 == '*' {
        out.push('*');
        i = 1;
    } else {
        while i < n && bytes[i].1 == '?' {
            out.push('?');
            i += 1;
        }
    }
    let body_start = i;
    let mut body_end = n;
    // Trailing wildcards, found from the back without eating escapes.
    let mut trailing = String::new();
    if body_end > body_start && bytes[body_end - 1].1 == '*' && !escaped_at(&bytes, body_end - 1) {
        trailing.push('*');
        body_end -= 1;
    } else {
        while body_end > body_start
            && bytes[body_end - 1].1 == '?'
            && !escaped_at(&bytes, body_end - 1)
        {
            trailing.push('?');
            body_end -= 1;
        }
    }
    if body_start == body_end {
        let at = bytes.get(body_start).map_or(raw.len(), |b| b.0);
        return Err(err(base + at, "wildcard without value"));
    }

    let mut j = body_start;
    while j < body_end {
        let (off, c) = bytes[j];
        match c {
            '\\' => {
                let Some(&(_, next)) = bytes.get(j + 1).filter(|_| j + 1 < body_end) else {
                    return Err(err(base + off, "dangling escape"));
                };
                if !is_punct(next) {
                    return Err(err(base + off, "escape of non-punctuation"));
                }
                if !matches!(next, '.' | '-' | '_') {
                    out.push('\\');
                }
                out.push(next);
                j += 2;
            }
            c if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') => {
                out.push(c);
                j += 1;
            }
            _ => return Err(err(base + off, "unescaped special character")),
        }
    }
    out.push_str(&trailing);
    Ok(CpeValue::Value(out))
}

/// Whether the char at `idx` is preceded by an odd run of backslashes.
fn escaped_at(chars: &[(usize, char)], idx: usize) -> bool {
    let mut k = idx;
    let mut count = 0;
    while k > 0 && chars[k - 1].1 == '\\' {
        count += 1;
        k -= 1;
    }
    count % 2 == 1
}

impl Cpe23 {
    pub fn parse(s: &str) -> Result<Cpe23, CpeError> {
        if !s.starts_with(PREFIX) {
            let at = PREFIX
                .bytes()
                .zip(s.bytes())
                .position(|(a, b)| a != b)
                .unwrap_or(s.len().min(PREFIX.len()));
            return Err(err(at, "missing cpe:2.3: prefix"));
        }

        // Split on unescaped colons.
        let mut fields: Vec<(usize, &str)> = Vec::with_capacity(11);
        let mut start = PREFIX.len();
        let mut escaped = false;
        for (i, c) in s[PREFIX.len()..].char_indices() {
            let i = i + PREFIX.len();
            if escaped {
                escaped = false;
                continue;
            }
            match c {
                '\\' => escaped = true,
                ':' => {
                    fields.push((start, &s[start..i]));
                    start = i + 1;
                }
                _ => {}
            }
        }
        fields.push((start, &s[start..]));
        if fields.len() < 11 {
            return Err(err(s.len(), "too few components"));
        }
        if fields.len() > 11 {
            return Err(err(fields[11].0 - 1, "too many components"));
        }

        let (poff, ptxt) = fields[0];
        let part = match ptxt {
            "a" => CpePart::Application,
            "o" => CpePart::OperatingSystem,
            "h" => CpePart::Hardware,
            _ => return Err(err(poff, "part must be a, o or h")),
        };
        let mut vals = fields[1..]
            .iter()
            .map(|&(off, txt)| parse_value(txt, off))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter();
        let mut next = || vals.next().expect("ten attributes");
        Ok(Cpe23 {
            part,
            vendor: next(),
            product: next(),
            version: next(),
            update: next(),
            edition: next(),
            language: next(),
            sw_edition: next(),
            target_sw: next(),
            target_hw: next(),
            other: next(),
        })
    }

    /// Vendor with escapes removed and lowercased; `None` for `*`/`-`.
    pub fn vendor_token(&self) -> Option<String> {
        self.vendor.unescaped().map(|v| v.to_ascii_lowercase())
    }

    pub fn product_token(&self) -> Option<String> {
        self.product.unescaped().map(|v| v.to_ascii_lowercase())
    }

    fn attributes(&self) -> [&CpeValue; 10] {
        [
            &self.vendor,
            &self.product,
            &self.version,
            &self.update,
            &self.edition,
            &self.language,
            &self.sw_edition,
            &self.target_sw,
            &self.target_hw,
            &self.other,
        ]
    }
}

impl fmt::Display for Cpe23 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{PREFIX}{}", self.part.as_char())?;
        for v in self.attributes() {
            write!(f, ":{v}")?;
        }
        Ok(())
    }
}

impl core::str::FromStr for Cpe23 {
    type Err = CpeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cpe23::parse(s)
    }
}

/// Canonical spelling of a well-formed CPE string.
pub fn canonical(s: &str) -> Result<String, CpeError> {
    Cpe23::parse(s).map(|c| alloc::format!("{c}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn phpmyadmin() {
        let c = Cpe23::parse("cpe:2.3:a:phpmyadmin:phpmyadmin:3.4.0:*:*:*:*:*:*:*").unwrap();
        assert_eq!(c.part, CpePart::Application);
        assert_eq!(c.vendor_token().as_deref(), Some("phpmyadmin"));
        assert_eq!(c.product_token().as_deref(), Some("phpmyadmin"));
        assert_eq!(c.version, CpeValue::Value("3.4.0".into()));
        assert_eq!(c.update, CpeValue::Any);
        assert_eq!(
            c.to_string(),
            "cpe:2.3:a:phpmyadmin:phpmyadmin:3.4.0:*:*:*:*:*:*:*"
        );
    }

    #[test]
    fn too_few_components() {
        let e = Cpe23::parse("cpe:2.3").unwrap_err();
        assert_eq!(e.offset, 7);
        let e = Cpe23::parse("cpe:2.3:a:v:p").unwrap_err();
        assert_eq!(e.reason, "too few components");
    }

    #[test]
    fn any_and_na_are_distinct() {
        let c = Cpe23::parse("cpe:2.3:o:linux:linux_kernel:-:*:*:*:*:*:*:*").unwrap();
        assert_eq!(c.version, CpeValue::NotApplicable);
        assert_eq!(c.update, CpeValue::Any);
        assert_eq!(c.version.unescaped(), None);
    }

    #[test]
    fn escapes_survive() {
        let s = r"cpe:2.3:a:hp:insight_diagnostics:7.4.0.1570:-:*:*:online:win2003:x64:*";
        assert_eq!(canonical(s).unwrap(), s);
        let s = r"cpe:2.3:a:foo\!bar:c\:\\path:1\.0:*:*:*:*:*:*:*";
        let c = Cpe23::parse(s).unwrap();
        assert_eq!(c.vendor.unescaped().unwrap(), "foo!bar");
        assert_eq!(c.product.unescaped().unwrap(), r"c:\path");
        assert_eq!(
            c.to_string(),
            r"cpe:2.3:a:foo\!bar:c\:\\path:1.0:*:*:*:*:*:*:*"
        );
    }

    #[test]
    fn wildcards_at_edges_only() {
        assert!(Cpe23::parse("cpe:2.3:a:v:p:1.*:*:*:*:*:*:*:*").is_ok());
        assert!(Cpe23::parse("cpe:2.3:a:v:p:??1:*:*:*:*:*:*:*").is_ok());
        let e = Cpe23::parse("cpe:2.3:a:v:p:1*2:*:*:*:*:*:*:*").unwrap_err();
        assert_eq!(e.offset, 15);
        assert!(Cpe23::parse("cpe:2.3:a:v:p:**:*:*:*:*:*:*:*").is_err());
    }

    #[test]
    fn illegal_characters_report_offset() {
        let e = Cpe23::parse("cpe:2.3:a:ven dor:p:*:*:*:*:*:*:*:*").unwrap_err();
        assert_eq!(e.offset, 13);
        let e = Cpe23::parse("cpe:2.3:x:v:p:*:*:*:*:*:*:*:*").unwrap_err();
        assert_eq!(e.offset, 8);
        let e = Cpe23::parse("cpe:2.2:a:v:p").unwrap_err();
        assert_eq!(e.offset, 6);
        let e = Cpe23::parse("cpe:2.3:a:v::*:*:*:*:*:*:*:*").unwrap_err();
        assert_eq!((e.offset, e.reason), (12, "empty component"));
        let e = Cpe23::parse("cpe:2.3:a:v:p:*:*:*:*:*:*:*:*:extra").unwrap_err();
        assert_eq!(e.reason, "too many components");
    }
}
