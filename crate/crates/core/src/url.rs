//! Minimal absolute-URL splitting.
//!
//! The std crate validates and resolves URLs with the `url` crate; the core
//! only needs to pull an absolute http(s) URL apart into host, path segments
//! and query, which this module does without allocating more than the
//! lowercased scheme and host.

use alloc::borrow::ToOwned;
use alloc::string::String;

/// Components of an absolute URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UrlParts<'a> {
    /// Lowercased scheme.
    pub scheme: String,
    /// Lowercased host with any `www.` prefix kept.
    pub host: String,
    pub port: Option<u16>,
    /// Path including the leading `/`, or empty.
    pub path: &'a str,
    pub query: Option<&'a str>,
    pub fragment: Option<&'a str>,
}

impl<'a> UrlParts<'a> {
    pub fn is_http(&self) -> bool {
        self.scheme == "http" || self.scheme == "https"
    }

    /// Non-empty path segments, in order.
    pub fn segments(&self) -> impl Iterator<Item = &'a str> + Clone {
        self.path.split('/').filter(|s| !s.is_empty())
    }

    /// Value of the first `key=value` query pair with this key.
    pub fn query_param(&self, key: &str) -> Option<&'a str> {
        self.query?
            .split('&')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }
}

/// Split an absolute URL. Returns `None` when there is no `scheme://host`.
pub fn split(url: &str) -> Option<UrlParts<'_>> {
    let url = url.trim();
    let (scheme, rest) = url.split_once("://")?;
    if scheme.is_empty()
        || !scheme.starts_with(|c: char| c.is_ascii_alphabetic())
        || !scheme
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
    {
        return None;
    }

    let (rest, fragment) = match rest.split_once('#') {
        Some((r, f)) => (r, Some(f)),
        None => (rest, None),
    };
    let (rest, query) = match rest.split_once('?') {
        Some((r, q)) => (r, Some(q)),
        None => (rest, None),
    };
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    let authority = match authority.rsplit_once('@') {
        Some((_, h)) => h,
        None => authority,
    };
    let (host, port_str) = match authority.find(']') {
        Some(end) => (&authority[..=end], authority[end + 1..].strip_prefix(':')),
        None => match authority.rsplit_once(':') {
            Some((h, p)) => (h, Some(p)),
            None => (authority, None),
        },
    };
    let port = match port_str {
        Some(p) if !p.is_empty() => Some(p.parse::<u16>().ok()?),
        _ => None,
    };
    if host.is_empty()
        || !host
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '[' | ']' | ':'))
    {
        return None;
    }

    Some(UrlParts {
        scheme: scheme.to_ascii_lowercase(),
        host: host.trim_end_matches('.').to_ascii_lowercase(),
        port,
        path,
        query,
        fragment,
    })
}

/// Canonical form used for dedup: lowercase scheme and host, default port
/// dropped, fragment dropped, trailing slash removed from non-root paths.
/// Returns the input unchanged if it does not split.
pub fn normalize(url: &str) -> String {
    let Some(parts) = split(url) else {
        return url.to_owned();
    };
    let mut out = String::with_capacity(url.len());
    out.push_str(&parts.scheme);
    out.push_str("://");
    out.push_str(&parts.host);
    let default_port = match parts.scheme.as_str() {
        "http" => Some(80),
        "https" => Some(443),
        _ => None,
    };
    if let Some(p) = parts.port {
        if Some(p) != default_port {
            out.push(':');
            out.push_str(&alloc::format!("{p}"));
        }
    }
    let path = parts.path.trim_end_matches('/');
    if path.is_empty() {
        out.push('/');
    } else {
        out.push_str(path);
    }
    if let Some(q) = parts.query {
        if !q.is_empty() {
            out.push('?');
            out.push_str(q);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_components() {
        let p = split("HTTPS://User@GitHub.com:8443/a/b/?x=1&id=abc#L10").unwrap();
        assert_eq!(p.scheme, "https");
        assert_eq!(p.host, "github.com");
        assert_eq!(p.port, Some(8443));
        assert_eq!(p.path, "/a/b/");
        assert_eq!(p.query_param("id"), Some("abc"));
        assert_eq!(p.fragment, Some("L10"));
        assert_eq!(p.segments().collect::<alloc::vec::Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn rejects_relative_and_hostless() {
        assert!(split("/x/y").is_none());
        assert!(split("mailto:someone@example.org").is_none());
        assert!(split("https:///path").is_none());
        assert!(split("https://exa mple.com/").is_none());
    }

    #[test]
    fn normalize_is_idempotent() {
        let n = normalize("https://WWW.Example.org:443/a/b/?q=1#frag");
        assert_eq!(n, "https://www.example.org/a/b?q=1");
        assert_eq!(normalize(&n), n);
        assert_eq!(normalize("http://h.example"), "http://h.example/");
    }
}
