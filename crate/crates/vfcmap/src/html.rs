//! Link extraction from HTML pages.

use std::collections::HashSet;

use scraper::{ElementRef, Html, Selector};
use url::Url;

/// Content types whose bodies are parsed for links.
pub fn is_html_like(content_type: Option<&str>, body: &[u8]) -> bool {
    match content_type {
        Some(ct) => {
            let ct = ct.to_ascii_lowercase();
            ct.contains("text/html") || ct.contains("application/xhtml")
        }
        // No header: sniff for markup.
        None => {
            let head = String::from_utf8_lossy(&body[..body.len().min(512)]).to_ascii_lowercase();
            head.contains("<html") || head.contains("<!doctype html") || head.contains("<a ")
        }
    }
}

fn resolve(base: &Url, href: &str) -> Option<String> {
    let href = href.trim();
    if href.is_empty() || href.starts_with('#') {
        return None;
    }
    let mut u = base.join(href).ok()?;
    if !matches!(u.scheme(), "http" | "https") {
        return None;
    }
    u.set_fragment(None);
    Some(u.to_string())
}

fn effective_base(doc: &Html, page_url: &str) -> Option<Url> {
    let page = Url::parse(page_url).ok()?;
    let sel = Selector::parse("base[href]").expect("static selector");
    let declared = doc
        .select(&sel)
        .next()
        .and_then(|b| b.value().attr("href"))
        .and_then(|h| page.join(h).ok());
    Some(declared.unwrap_or(page))
}

fn collect<'a>(base: &Url, roots: impl Iterator<Item = ElementRef<'a>>) -> Vec<String> {
    let anchors = Selector::parse("a[href]").expect("static selector");
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for root in roots {
        let own = root.value().name() == "a";
        let found = root.select(&anchors).chain(own.then_some(root));
        for a in found {
            if let Some(u) = a.value().attr("href").and_then(|h| resolve(base, h)) {
                if seen.insert(u.clone()) {
                    out.push(u);
                }
            }
        }
    }
    out
}

/// Absolute http(s) links of every anchor on the page, resolved against the
/// page URL (or its `<base>`), fragments dropped, first occurrence kept.
pub fn extract_links(html: &str, page_url: &str) -> Vec<String> {
    let doc = Html::parse_document(html);
    let Some(base) = effective_base(&doc, page_url) else { return Vec::new() };
    collect(&base, std::iter::once(doc.root_element()))
}

/// Links inside the elements matching `region`. With `mention`, only the
/// innermost matching elements whose text contains it are used.
pub fn extract_region_links(html: &str, page_url: &str, region: &Selector, mention: Option<&str>) -> Vec<String> {
    let doc = Html::parse_document(html);
    let Some(base) = effective_base(&doc, page_url) else { return Vec::new() };
    let regions: Vec<ElementRef> = doc.select(region).collect();
    let Some(needle) = mention else {
        return collect(&base, regions.into_iter());
    };
    let needle = needle.to_ascii_uppercase();
    let mentions = |e: &ElementRef| e.text().collect::<String>().to_ascii_uppercase().contains(&needle);
    let hits: Vec<ElementRef> = regions.iter().copied().filter(mentions).collect();
    let innermost = hits
        .iter()
        .copied()
        .filter(|e| !hits.iter().any(|o| o.id() != e.id() && o.ancestors().any(|a| a.id() == e.id())))
        .collect::<Vec<_>>();
    collect(&base, innermost.into_iter())
}

/// Absolute URLs of anchors matching `selector`.
pub fn select_links(html: &str, page_url: &str, selector: &Selector) -> Vec<String> {
    let doc = Html::parse_document(html);
    let Some(base) = effective_base(&doc, page_url) else { return Vec::new() };
    let mut seen = HashSet::new();
    doc.select(selector)
        .filter_map(|e| e.value().attr("href"))
        .filter_map(|h| resolve(&base, h))
        .filter(|u| seen.insert(u.clone()))
        .collect()
}
