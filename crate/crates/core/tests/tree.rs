use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::DateTime;
use proptest::prelude::*;
use vfcmap_core::tree::{build_tree, harvest_s1, CrawlPolicy, FetchStatus, FnFetcher, PageOutcome};
use vfcmap_core::{Category, CveId, HostAllowlist, NvdRecord, Reference};

/// A site: page index -> outgoing link targets. Targets >= PAGES are commits.
type Graph = Vec<Vec<usize>>;
const PAGES: usize = 12;

fn url_of(i: usize) -> String {
    if i < PAGES {
        format!("https://site.example/p{i}")
    } else {
        format!("https://github.com/o/r/commit/{:040x}", i)
    }
}

fn record(roots: &[usize]) -> NvdRecord {
    NvdRecord {
        cve_id: CveId::parse("CVE-2022-0001").unwrap(),
        description: String::new(),
        published: DateTime::UNIX_EPOCH,
        references: roots.iter().map(|&r| Reference::new(url_of(r), &[])).collect(),
        cpes: vec![],
    }
}

fn policy(max_depth: u32, budget: u32) -> CrawlPolicy {
    CrawlPolicy { max_depth, max_pages_per_record: budget, ..CrawlPolicy::default() }
}

/// Shortest hop distance from the roots, following links out of pages only.
fn distances(graph: &Graph, roots: &[usize]) -> BTreeMap<usize, u32> {
    let mut dist = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &r in roots {
        if dist.insert(r, 0).is_none() {
            queue.push_back(r);
        }
    }
    while let Some(n) = queue.pop_front() {
        if n >= PAGES {
            continue;
        }
        let d = dist[&n];
        for &m in &graph[n] {
            if !dist.contains_key(&m) {
                dist.insert(m, d + 1);
                queue.push_back(m);
            }
        }
    }
    dist
}

fn crawl(graph: &Graph, roots: &[usize], p: &CrawlPolicy) -> (vfcmap_core::tree::RefTree, Vec<String>) {
    let mut log = Vec::new();
    let tree = {
        let mut f = FnFetcher(|u: &str| {
            log.push(u.to_string());
            let i: usize = u.rsplit('p').next().unwrap().parse().unwrap();
            PageOutcome { status: FetchStatus::Fetched, links: graph[i].iter().map(|&t| url_of(t)).collect() }
        });
        build_tree(&record(roots), p, &HostAllowlist::default(), &mut f)
    };
    (tree, log)
}

fn graph() -> impl Strategy<Value = Graph> {
    prop::collection::vec(prop::collection::vec(0usize..PAGES + 6, 0..5), PAGES)
}

fn roots() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..PAGES + 6, 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn tree_matches_distance_oracle(g in graph(), r in roots(), max_depth in 1u32..4) {
        let (tree, log) = crawl(&g, &r, &policy(max_depth, 1000));
        let dist = distances(&g, &r);

        let nodes: BTreeSet<String> = tree.nodes.iter().map(|n| n.url.clone()).collect();
        let expected: BTreeSet<String> =
            dist.iter().filter(|(_, d)| **d <= max_depth).map(|(i, _)| url_of(*i)).collect();
        prop_assert_eq!(&nodes, &expected);

        let fetched: BTreeSet<String> = log.iter().cloned().collect();
        prop_assert_eq!(fetched.len(), log.len(), "a URL was fetched twice");
        let expected_fetch: BTreeSet<String> = dist
            .iter()
            .filter(|(i, d)| **i < PAGES && **d < max_depth)
            .map(|(i, _)| url_of(*i))
            .collect();
        prop_assert_eq!(fetched, expected_fetch);

        for n in &tree.nodes {
            prop_assert_eq!(Some(&n.depth), dist.iter().find(|(i, _)| url_of(**i) == n.url).map(|(_, d)| d));
            prop_assert!(n.depth <= max_depth);
        }
        prop_assert!(!tree.truncated);
    }

    #[test]
    fn deeper_crawls_only_add(g in graph(), r in roots(), max_depth in 1u32..3) {
        let allow = HostAllowlist::default();
        let rec = record(&r);
        let cands = |d| {
            let (tree, _) = crawl(&g, &r, &policy(d, 1000));
            harvest_s1(&rec, &tree, &allow, Category::C4, DateTime::UNIX_EPOCH)
                .candidates
                .into_iter()
                .map(|c| c.sha)
                .collect::<BTreeSet<_>>()
        };
        prop_assert!(cands(max_depth).is_subset(&cands(max_depth + 1)));
    }

    #[test]
    fn page_budget_bounds_fetches(g in graph(), r in roots(), budget in 1u32..6) {
        let (tree, log) = crawl(&g, &r, &policy(3, budget));
        prop_assert!(log.len() <= budget as usize);
        let (unbounded, all) = crawl(&g, &r, &policy(3, 1000));
        prop_assert!(!unbounded.truncated);
        prop_assert_eq!(tree.truncated, all.len() > budget as usize);
    }
}

#[test]
fn truncated_trees_flag_their_candidates() {
    // p0 -> p1, p2; p1 -> commit; p2 -> commit. Budget 2 stops before p2.
    let mut g: Graph = vec![Vec::new(); PAGES];
    g[0] = vec![1, 2];
    g[1] = vec![PAGES];
    g[2] = vec![PAGES + 1];
    let (tree, log) = crawl(&g, &[0], &policy(2, 2));
    assert_eq!(log.len(), 2);
    assert!(tree.truncated);
    let h = harvest_s1(&record(&[0]), &tree, &HostAllowlist::default(), Category::C4, DateTime::UNIX_EPOCH);
    assert_eq!(h.candidates.len(), 1);
    assert!(h.candidates[0].flags.contains(&vfcmap_core::CandidateFlag::TruncatedCrawl));
}

#[test]
fn depth_three_commit_is_out_of_reach() {
    // A -> {B, C}, B -> commit1, C -> D, D -> commit2.
    let mut g: Graph = vec![Vec::new(); PAGES];
    g[0] = vec![1, 2];
    g[1] = vec![PAGES];
    g[2] = vec![3];
    g[3] = vec![PAGES + 1];
    let (tree, log) = crawl(&g, &[0], &policy(2, 50));
    let urls: BTreeSet<&str> = tree.nodes.iter().map(|n| n.url.as_str()).collect();
    assert!(urls.contains(url_of(PAGES).as_str()));
    assert!(!urls.contains(url_of(PAGES + 1).as_str()));
    assert_eq!(log, vec![url_of(0), url_of(1), url_of(2)]);
}
