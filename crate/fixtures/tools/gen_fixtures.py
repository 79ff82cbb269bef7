#!/usr/bin/env python3
"""Regenerate the synthetic fixture set.

Writes:
  nvd/snapshot-200.json        200-record NVD 2.0 snapshot
  nvd/golden_partition.json    C1-C4 counts from the categorizer below
  tool/generic-3.csv           three-row generic-ranked tool output
  e2e/                         config, snapshot, cassettes, tool output,
                               verdict log and the hand-enumerated
                               expected candidate set

The categorizer here is written from the category definitions, not from the
Rust code. Run from anywhere: paths are relative to this file.
"""

import hashlib
import json
import random
import urllib.parse
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
ALLOW = {"github.com", "gitlab.com", "bitbucket.org"}
RESERVED = {
    "github.com": {"advisories", "orgs", "topics", "marketplace", "sponsors", "security"},
    "gitlab.com": {"explore", "groups", "users", "-", "help"},
    "bitbucket.org": {"account", "product", "support"},
}


def sha(label, n=40):
    return hashlib.sha1(label.encode()).hexdigest()[:n]


def cpe(vendor, product, version="*"):
    return f"cpe:2.3:a:{vendor}:{product}:{version}:*:*:*:*:*:*:*"


def nvd_entry(cve, refs, cpes, published="2021-05-01T12:15:00.000", desc=None):
    entry = {
        "cve": {
            "id": cve,
            "sourceIdentifier": "cve@mitre.org",
            "published": published,
            "lastModified": published,
            "vulnStatus": "Analyzed",
            "descriptions": [{"lang": "en", "value": desc or f"Synthetic description for {cve}."}],
            "references": [
                {"url": u, "source": "cve@mitre.org", **({"tags": t} if t else {})} for u, t in refs
            ],
        }
    }
    if cpes:
        entry["cve"]["configurations"] = [
            {"nodes": [{"operator": "OR", "negate": False, "cpeMatch": [
                {"vulnerable": True, "criteria": c, "matchCriteriaId": sha(c, 32)} for c in cpes
            ]}]}
        ]
    return entry


def snapshot(entries):
    return {
        "resultsPerPage": len(entries),
        "startIndex": 0,
        "totalResults": len(entries),
        "format": "NVD_CVE",
        "version": "2.0",
        "timestamp": "2024-01-01T00:00:00.000",
        "vulnerabilities": entries,
    }


# Independent categorizer ---------------------------------------------------

def is_git(url):
    u = urllib.parse.urlsplit(url)
    if u.scheme not in ("http", "https"):
        return False
    host = (u.hostname or "").rstrip(".").lower()
    if host.startswith("www."):
        host = host[4:]
    if host not in ALLOW:
        return False
    segs = [s for s in u.path.split("/") if s]
    return len(segs) >= 2 and segs[0].lower() not in RESERVED[host]


def category(refs):
    git = [t for u, t in refs if is_git(u)]
    other = [t for u, t in refs if not is_git(u)]
    if any("Patch" in t for t in git):
        return "C1"
    if git:
        return "C2"
    if any("Patch" in t for t in other):
        return "C3"
    return "C4"


# 200-record snapshot -------------------------------------------------------

def gen_snapshot_200():
    rng = random.Random(2024)
    owners = ["acme", "libfoo", "Example-Org", "zlib-ng", "webkit", "pallets", "psf"]
    repos = ["core", "parser", "server", "client", "widget", "flask", "requests"]

    def git_ref(i):
        o, r = rng.choice(owners), rng.choice(repos)
        s = sha(f"snap-{i}-{rng.random()}")
        n = rng.randint(1, 9999)
        return rng.choice([
            f"https://github.com/{o}/{r}/commit/{s}",
            f"https://github.com/{o}/{r}/commit/{s[:8]}",
            f"https://github.com/{o}/{r}/pull/{n}",
            f"https://github.com/{o}/{r}/issues/{n}",
            f"https://github.com/{o}/{r}/releases/tag/v1.{n}",
            f"https://github.com/{o}/{r}",
            f"https://www.github.com/{o}/{r}/commit/{s}",
            f"https://GitHub.com/{o}/{r}/pull/{n}/files",
            f"https://gitlab.com/{o}/{r}/-/merge_requests/{n}",
            f"https://gitlab.com/{o}/{r}/-/commit/{s}",
            f"https://gitlab.com/{o}/sub/{r}/-/issues/{n}",
            f"https://bitbucket.org/{o}/{r}/commits/{s}",
            f"https://bitbucket.org/{o}/{r}/pull-requests/{n}",
        ])

    def other_ref(i):
        n = rng.randint(1, 9999)
        return rng.choice([
            f"https://www.debian.org/security/2021/dsa-{n}",
            f"https://www.openwall.com/lists/oss-security/2021/05/{n % 28 + 1:02d}/1",
            f"https://lists.apache.org/thread/{sha(str(n), 12)}",
            f"https://security.gentoo.org/glsa/2021{n:04d}-01",
            f"https://github.com/advisories/GHSA-{sha(str(n), 4)}-{sha(str(n + 1), 4)}-{sha(str(n + 2), 4)}",
            f"https://gist.github.com/someone/{sha(str(n), 20)}",
            f"https://github.com.mirror.example/acme/core/commit/{sha(str(n))}",
            f"https://git.kernel.org/pub/scm/linux/kernel/git/torvalds/linux.git/commit/?id={sha(str(n))}",
            f"https://vendor.example/support/kb/{n}",
            f"https://www.exploit-db.com/exploits/{n}",
        ])

    other_tags = ["Third Party Advisory", "Vendor Advisory", "Mailing List", "Issue Tracking",
                  "Exploit", "Release Notes"]
    entries, golden = [], {"C1": 0, "C2": 0, "C3": 0, "C4": 0}
    per_record = []
    for i in range(200):
        cve = f"CVE-2021-{20000 + i}"
        k = rng.choice([0, 1, 1, 2, 2, 3, 4])
        refs = []
        for _ in range(k):
            url = git_ref(i) if rng.random() < 0.45 else other_ref(i)
            tags = []
            if rng.random() < 0.35:
                tags.append("Patch")
            if rng.random() < 0.5:
                tags.append(rng.choice(other_tags))
            refs.append((url, tags))
        cpes = [cpe(rng.choice(owners).lower(), rng.choice(repos), f"1.{rng.randint(0, 9)}")] if rng.random() < 0.8 else []
        day = 1 + i % 28
        entries.append(nvd_entry(cve, refs, cpes, published=f"2021-06-{day:02d}T10:{i % 60:02d}:00.000"))
        c = category(refs)
        golden[c] += 1
        per_record.append({"cve_id": cve, "category": c})
    write_json(ROOT / "nvd" / "snapshot-200.json", snapshot(entries))
    write_json(ROOT / "nvd" / "golden_partition.json", {"counts": golden, "records": per_record})


# Cassettes -----------------------------------------------------------------

def resp(url, status, body, content_type):
    head = f"VFCMAP-RESP 1\nstatus: {status}\nurl: {url}\n"
    if content_type:
        head += f"header: content-type: {content_type}\n"
    return head.encode() + b"\n" + (body.encode() if isinstance(body, str) else body)


class CassetteDir:
    def __init__(self, path):
        self.path = path
        self.index = []
        path.mkdir(parents=True, exist_ok=True)
        for old in path.glob("*.resp"):
            old.unlink()

    def add(self, url, body, status=200, content_type="text/html; charset=utf-8"):
        name = hashlib.sha256(url.encode()).hexdigest() + ".resp"
        (self.path / name).write_bytes(resp(url, status, body, content_type))
        self.index.append((name, status, url))

    def json(self, url, doc, status=200):
        self.add(url, json.dumps(doc, indent=1), status, "application/json")

    def finish(self):
        with open(self.path / "index.tsv", "w") as f:
            f.write("file\tstatus\turl\n")
            for name, status, url in sorted(self.index, key=lambda r: r[2]):
                f.write(f"{name}\t{status}\t{url}\n")


def page(title, links, extra=""):
    anchors = "\n".join(f'  <li><a href="{h}">{t}</a></li>' for h, t in links)
    return f"<!doctype html>\n<html><head><title>{title}</title></head>\n<body>\n<h1>{title}</h1>\n{extra}<ul>\n{anchors}\n</ul>\n</body></html>\n"


def gen_e2e():
    d = ROOT / "e2e"
    cas = CassetteDir(d / "cassettes")
    expected = []

    def expect(cve, repo, commit, sources):
        expected.append((cve, repo, commit, sources))

    # CVE-2011-2505: non-git Patch reference whose page links the fix commit.
    pma = sha("phpmyadmin-2505")
    pmasa = "http://www.phpmyadmin.net/home_page/security/PMASA-2011-5.php"
    cas.add(pmasa, page("PMASA-2011-5", [
        (f"https://github.com/phpmyadmin/phpmyadmin/commit/{pma}", "commit " + pma[:7]),
        ("http://www.phpmyadmin.net/home_page/downloads.php", "Downloads"),
    ], "<p>Possible session manipulation in Swekey authentication (CVE-2011-2505).</p>\n"))
    cas.add("http://www.phpmyadmin.net/home_page/downloads.php", page("Downloads", []))
    expect("CVE-2011-2505", "github.com/phpmyadmin/phpmyadmin", pma, "S1")

    # CVE-2021-26559: the fix is only on the Snyk advisory.
    af = sha("airflow-26559")
    search = "https://security.snyk.io/vuln/?search=CVE-2021-26559"
    cas.add(search, page("Search results", [
        ("/vuln/SNYK-PYTHON-APACHEAIRFLOW-1080393", "Improper Access Control in apache-airflow"),
    ]))
    cas.add("https://security.snyk.io/vuln/SNYK-PYTHON-APACHEAIRFLOW-1080393", f"""<!doctype html>
<html><body>
<h1>Improper Access Control</h1>
<p>Affected versions of apache-airflow are vulnerable (CVE-2021-26559).</p>
<nav><a href="https://snyk.io/plans">Plans</a></nav>
<section class="references" data-snyk-test="references">
  <h2>References</h2>
  <ul>
    <li><a href="https://github.com/apache/airflow/commit/{af}">GitHub Commit</a></li>
    <li><a href="https://lists.apache.org/thread.html/r3d5b2e8e7a9%40%3Cusers.airflow.apache.org%3E">Apache Mailing List</a></li>
  </ul>
</section>
</body></html>
""")
    expect("CVE-2021-26559", "github.com/apache/airflow", af, "S2")

    # CVE-2023-36053: Django archive page, several backports per CVE.
    dj = [sha(f"django-36053-{b}") for b in ("main", "4.2", "3.2")]
    other = [sha(f"django-31047-{b}") for b in ("main", "4.2")]
    cas.add("https://docs.djangoproject.com/en/dev/releases/security/", f"""<!doctype html>
<html><body>
<h1>Archive of security issues</h1>
<section id="issues-2023">
<h2>2023</h2>
<section id="july-3-2023-cve-2023-36053">
  <h3>July 3, 2023 - CVE-2023-36053</h3>
  <p>Potential regular expression denial of service in EmailValidator/URLValidator.</p>
  <p>Versions affected</p>
  <ul>
    <li>Django 5.0 <a href="https://github.com/django/django/commit/{dj[0]}">(patch)</a></li>
    <li>Django 4.2 <a href="https://github.com/django/django/commit/{dj[1]}">(patch)</a></li>
    <li>Django 3.2 <a href="https://github.com/django/django/commit/{dj[2]}">(patch)</a></li>
  </ul>
</section>
<section id="may-3-2023-cve-2023-31047">
  <h3>May 3, 2023 - CVE-2023-31047</h3>
  <p>Potential bypass of validation when uploading multiple files.</p>
  <ul>
    <li>Django 4.2 <a href="https://github.com/django/django/commit/{other[0]}">(patch)</a></li>
    <li>Django 4.1 <a href="https://github.com/django/django/commit/{other[1]}">(patch)</a></li>
  </ul>
</section>
</section>
</body></html>
""")
    for s in dj:
        expect("CVE-2023-36053", "github.com/django/django", s, "S2")

    # CVE-2024-10001: patch-tagged commit, also listed by GHSA.
    loc = sha("locust-10001")
    cas.json("https://api.github.com/advisories?cve_id=CVE-2024-10001&per_page=100", [{
        "ghsa_id": "GHSA-aaaa-bbbb-cccc",
        "cve_id": "CVE-2024-10001",
        "references": [
            "https://nvd.nist.gov/vuln/detail/CVE-2024-10001",
            f"https://github.com/locustio/locust/commit/{loc}",
        ],
    }])
    expect("CVE-2024-10001", "github.com/locustio/locust", loc, "S1,S2")

    # CVE-2024-10002: pull request with two commits, not merged.
    w = [sha("widget-pr-1"), sha("widget-pr-2")]
    pr = "https://api.github.com/repos/example-org/widget/pulls/17"
    cas.json(pr, {"number": 17, "state": "closed", "merged_at": None, "merge_commit_sha": sha("widget-test-merge")})
    cas.json(pr + "/commits?per_page=100", [{"sha": s} for s in w])
    for s in w:
        expect("CVE-2024-10002", "github.com/example-org/widget", s, "S1")

    # CVE-2024-10003: issue with no linked commits.
    cas.json("https://api.github.com/repos/example-org/widget/issues/42/timeline?per_page=100",
             [{"event": "labeled"}, {"event": "commented", "body": "thanks"}])

    # CVE-2024-10004: abbreviated SHA resolved through the API.
    gad = sha("gadget-10004")
    cas.json(f"https://api.github.com/repos/example-org/gadget/commits/{gad[:8]}", {"sha": gad})
    expect("CVE-2024-10004", "github.com/example-org/gadget", gad, "S1")

    # CVE-2024-10005: site graph A -> {B, C}, B -> commit, C -> D, D -> commit2.
    c1, c2 = sha("sprocket-depth2"), sha("sprocket-depth3")
    base = "https://vendor.example/advisory"
    cas.add(f"{base}/A", page("A", [(f"{base}/B", "B"), (f"{base}/C", "C")]))
    cas.add(f"{base}/B", page("B", [(f"https://github.com/example-org/sprocket/commit/{c1}", "fix")]))
    cas.add(f"{base}/C", page("C", [(f"{base}/D", "D")]))
    cas.add(f"{base}/D", page("D", [(f"https://github.com/example-org/sprocket/commit/{c2}", "fix 2")]))
    expect("CVE-2024-10005", "github.com/example-org/sprocket", c1, "S1")
    s3_only = sha("sprocket-tool")
    expect("CVE-2024-10005", "github.com/example-org/sprocket", s3_only, "S3")

    # CVE-2024-10006: OSV asserts a fix; one unrelated WEB reference fails the CPE check.
    fr = sha("frobnicator-10006")
    cas.json("https://api.osv.dev/v1/vulns/CVE-2024-10006", {
        "id": "PYSEC-2024-1",
        "aliases": ["CVE-2024-10006"],
        "references": [
            {"type": "FIX", "url": f"https://github.com/example-org/frobnicator/commit/{fr}"},
            {"type": "WEB", "url": f"https://github.com/other-org/unrelated/commit/{sha('unrelated')}"},
            {"type": "PACKAGE", "url": "https://pypi.org/project/frobnicator/"},
        ],
        "affected": [{"ranges": [{"type": "GIT", "repo": "https://github.com/example-org/frobnicator",
                                  "events": [{"introduced": "0"}, {"fixed": fr}]}]}],
    })
    expect("CVE-2024-10006", "github.com/example-org/frobnicator", fr, "S2,S3")

    # CVE-2024-10007: merge request on a record without CPE data.
    mr = "https://gitlab.com/api/v4/projects/example-group%2Fthing/merge_requests/5"
    t1, tm = sha("thing-mr-1"), sha("thing-mr-merge")
    cas.json(mr, {"iid": 5, "state": "merged", "merge_commit_sha": tm, "squash_commit_sha": None})
    cas.json(mr + "/commits?per_page=100", [{"id": t1}])
    expect("CVE-2024-10007", "gitlab.com/example-group/thing", t1, "S1")
    expect("CVE-2024-10007", "gitlab.com/example-group/thing", tm, "S1")
    cas.finish()

    records = [
        nvd_entry("CVE-2011-2505", [(pmasa, ["Patch", "Vendor Advisory"]),
                                    ("http://www.openwall.com/lists/oss-security/2011/07/02/6", ["Mailing List"])],
                  [cpe("phpmyadmin", "phpmyadmin", "3.4.0")], "2011-07-14T23:55:01.000",
                  "libraries/auth/swekey/swekey.auth.lib.php in phpMyAdmin 3.x allows session manipulation."),
        nvd_entry("CVE-2021-26559", [("https://lists.apache.org/thread.html/r5c9a1e5e4b8%40%3Cdev.airflow.apache.org%3E",
                                      ["Mailing List", "Vendor Advisory"])],
                  [cpe("apache", "airflow", "2.0.0")], "2021-02-17T15:15:13.000",
                  "Improper Access Control on Configurations Endpoint for the Stable API of Apache Airflow."),
        nvd_entry("CVE-2023-36053", [("https://www.djangoproject.com/weblog/2023/jul/03/security-releases/", ["Vendor Advisory"])],
                  [cpe("djangoproject", "django", "4.2")], "2023-07-03T13:15:09.000",
                  "Potential ReDoS in EmailValidator and URLValidator."),
        nvd_entry("CVE-2024-10001", [(f"https://github.com/locustio/locust/commit/{loc}", ["Patch"])],
                  [cpe("locust", "locust", "2.0")]),
        nvd_entry("CVE-2024-10002", [("https://github.com/example-org/widget/pull/17", ["Issue Tracking"])],
                  [cpe("example", "widget", "1.0")]),
        nvd_entry("CVE-2024-10003", [("https://github.com/example-org/widget/issues/42", [])],
                  [cpe("example", "widget", "1.1")]),
        nvd_entry("CVE-2024-10004", [(f"https://github.com/example-org/gadget/commit/{gad[:8]}", ["Patch"])],
                  [cpe("example", "gadget", "3.0")]),
        nvd_entry("CVE-2024-10005", [(f"{base}/A", ["Vendor Advisory"])], [cpe("example", "sprocket", "0.9")]),
        nvd_entry("CVE-2024-10006", [("https://pypi.org/project/frobnicator/", [])], [cpe("example", "frobnicator", "1.2")]),
        nvd_entry("CVE-2024-10007", [("https://gitlab.com/example-group/thing/-/merge_requests/5", [])], []),
    ]
    write_json(d / "snapshot.json", snapshot(records))

    with open(d / "tool.csv", "w") as f:
        f.write("cve_id,repo_url,sha,score,rank\n")
        f.write(f"CVE-2024-10006,https://github.com/example-org/frobnicator,{fr},81.5,1\n")
        f.write(f"CVE-2024-10006,https://github.com/example-org/frobnicator,{sha('frob-noise')},40,2\n")
        f.write(f"CVE-2024-10005,https://github.com/example-org/sprocket,{s3_only},65,1\n")
        f.write(f"CVE-2024-10005,https://github.com/example-org/sprocket,{sha('sprocket-noise')},60,2\n")

    with open(d / "expected_candidates.tsv", "w") as f:
        f.write("cve_id\trepo_id\tsha\tsources\n")
        for row in sorted(expected):
            f.write("\t".join(row) + "\n")

    # Two annotators over every expected candidate. bob disagrees on the
    # unvalidated merge commit and is unsure about the tool-only one.
    events = []
    for who in ("alice", "bob"):
        for i, (cve, repo, commit, _) in enumerate(sorted(expected)):
            decision = "TrueVfc"
            if commit == tm:
                decision = "NotVfc" if who == "alice" else "TrueVfc"
            if commit == s3_only:
                decision = "NotVfc" if who == "alice" else "Unsure"
            if commit == dj[2] and who == "bob":
                decision = "NotVfc"
            events.append({
                "event": "verdict",
                "session_id": "fixture",
                "candidate_id": f"{cve}:{repo}:{commit}",
                "annotator": who,
                "decision": decision,
                "note": "",
                "decided_at": f"2024-01-02T00:{i:02d}:00Z",
            })
    with open(d / "verdicts.jsonl", "w") as f:
        for e in events:
            f.write(json.dumps(e, separators=(",", ":")) + "\n")


def gen_tool():
    with open(ROOT / "tool" / "generic-3.csv", "w") as f:
        f.write("cve_id,repo_url,sha,score,rank\n")
        for rank, score in enumerate((92.0, 71.5, 64.0), start=1):
            f.write(f"CVE-2022-24439,https://github.com/gitpython-developers/GitPython,{sha(f'gitpython-{rank}')},{score},{rank}\n")


def write_json(path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    (ROOT / "tool").mkdir(parents=True, exist_ok=True)
    gen_snapshot_200()
    gen_e2e()
    gen_tool()
