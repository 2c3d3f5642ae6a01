//! Reference computations that share no code with the pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::rngs::StdRng;
use rand::Rng;
use revmine::catalog::Granularity;
use revmine::dataset::{Dataset, Value};
use revmine::plan::{FilterSet, ReviewState, TimeWindow};
use serde_json::Value as Json;

/// Float tolerance for derived metrics.
pub const EPS: f64 = 1e-9;

// ------------------------------------------------------------- dataset

#[derive(Debug, Clone)]
pub struct OComment {
    pub author: String,
    pub body: String,
    pub at: DateTime<Utc>,
    pub inline: bool,
}

#[derive(Debug, Clone)]
pub struct OReview {
    pub id: String,
    pub author: String,
    pub title: String,
    pub description: String,
    pub state: &'static str,
    pub created: DateTime<Utc>,
    pub merged: Option<DateTime<Utc>>,
    pub comments: Vec<OComment>,
    pub commits: usize,
    pub files: Vec<String>,
}

fn ts(v: &Json) -> Option<DateTime<Utc>> {
    v.as_str().map(|s| DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc))
}

fn read(path: &Path) -> Vec<Json> {
    match fs::read(path) {
        Ok(b) => serde_json::from_slice::<Json>(&b).unwrap().as_array().unwrap().clone(),
        Err(_) => Vec::new(),
    }
}

fn login(v: &Json, gh: bool) -> String {
    let s = if gh { &v["user"]["login"] } else { &v["author"]["username"] };
    s.as_str().unwrap_or("ghost").to_owned()
}

/// Reviews straight from the raw platform JSON in a run directory.
pub fn reviews(run_dir: &Path, gh: bool) -> Vec<OReview> {
    let raw = run_dir.join("raw");
    let mut pages: Vec<PathBuf> = fs::read_dir(raw.join("reviews")).unwrap().map(|e| e.unwrap().path()).collect();
    pages.sort();
    let mut out = Vec::new();
    for page in pages {
        for item in read(&page) {
            let n = item[if gh { "number" } else { "iid" }].as_u64().unwrap();
            let merged = ts(&item["merged_at"]);
            let state = match (gh, item["state"].as_str().unwrap()) {
                (true, "open") | (false, "opened") | (false, "locked") => "open",
                (true, _) if merged.is_some() => "merged",
                (false, "merged") => "merged",
                _ => "closed",
            };
            let mut docs: Vec<(Json, bool)> =
                read(&raw.join(format!("comments/review-{n}.json"))).into_iter().map(|c| (c, gh)).collect();
            if gh {
                docs.extend(read(&raw.join(format!("comments/review-{n}-general.json"))).into_iter().map(|c| (c, false)));
            }
            let comments = docs
                .into_iter()
                .filter(|(c, _)| c["system"].as_bool() != Some(true))
                .map(|(c, gh_inline)| OComment {
                    author: login(&c, gh),
                    body: c["body"].as_str().unwrap_or("").to_owned(),
                    at: ts(&c["created_at"]).unwrap(),
                    inline: if gh { gh_inline } else { c.get("position").is_some_and(|p| p.is_object()) },
                })
                .collect();
            let files = read(&raw.join(format!("files/review-{n}.json")))
                .iter()
                .map(|f| f[if gh { "filename" } else { "new_path" }].as_str().unwrap().to_owned())
                .collect();
            out.push(OReview {
                id: item["id"].to_string(),
                author: login(&item, gh),
                title: item["title"].as_str().unwrap().to_owned(),
                description: item[if gh { "body" } else { "description" }].as_str().unwrap_or("").to_owned(),
                state,
                created: ts(&item["created_at"]).unwrap(),
                merged: if state == "merged" { merged } else { None },
                comments,
                commits: read(&raw.join(format!("commits/review-{n}.json"))).len(),
                files,
            });
        }
    }
    out
}

fn hours(a: DateTime<Utc>, b: DateTime<Utc>) -> f64 {
    (b - a).num_seconds() as f64 / 3600.0
}

pub fn keep(r: &OReview, f: &FilterSet) -> bool {
    let lower = |s: &str| s.to_lowercase();
    if let Some(w) = &f.time_window {
        if r.created < w.start || r.created > w.end {
            return false;
        }
    }
    if let Some(s) = f.states.as_ref().filter(|s| !s.is_empty()) {
        if !s.iter().any(|s| s.as_str() == r.state) {
            return false;
        }
    }
    if let Some(m) = f.min_comments {
        if r.comments.len() < m as usize {
            return false;
        }
    }
    if let Some(a) = f.authors.as_ref().filter(|a| !a.is_empty()) {
        if !a.contains(&r.author) {
            return false;
        }
    }
    if let Some(e) = f.file_extensions.as_ref().filter(|e| !e.is_empty()) {
        if !r.files.iter().any(|p| e.iter().any(|x| lower(p).ends_with(&lower(x)))) {
            return false;
        }
    }
    if let Some(k) = f.keywords.as_ref().filter(|k| !k.is_empty()) {
        let hit = k.iter().any(|k| {
            let k = lower(k);
            lower(&r.title).contains(&k) || lower(&r.description).contains(&k) || r.comments.iter().any(|c| lower(&c.body).contains(&k))
        });
        if !hit {
            return false;
        }
    }
    true
}

pub fn random_filters(rng: &mut StdRng) -> FilterSet {
    let mut f = FilterSet::default();
    if rng.random_bool(0.4) {
        let start: DateTime<Utc> = "2023-01-01T00:00:00Z".parse().unwrap();
        let s = start + chrono::Duration::days(rng.random_range(-40..200));
        f.time_window = Some(TimeWindow { start: s, end: s + chrono::Duration::days(rng.random_range(0..150)) });
    }
    if rng.random_bool(0.4) {
        let all = [ReviewState::Open, ReviewState::Merged, ReviewState::Closed];
        f.states = Some(all.into_iter().filter(|_| rng.random_bool(0.5)).collect());
    }
    if rng.random_bool(0.4) {
        f.min_comments = Some(rng.random_range(0..4));
    }
    if rng.random_bool(0.3) {
        let users = ["alice", "bob", "carol", "dave", "zed"];
        f.authors = Some(users.into_iter().filter(|_| rng.random_bool(0.4)).map(String::from).collect());
    }
    if rng.random_bool(0.3) {
        let exts = [".java", ".rs", ".MD", ".py", ".c", ".go"];
        f.file_extensions = Some(exts.into_iter().filter(|_| rng.random_bool(0.4)).map(String::from).collect());
    }
    if rng.random_bool(0.3) {
        let kws = ["refactor", "LGTM", "nit", "typo", "absent-word", "très"];
        f.keywords = Some(kws.into_iter().filter(|_| rng.random_bool(0.4)).map(String::from).collect());
    }
    f
}

/// `base` plus every constraint of `extra` that `base` leaves open.
pub fn tighten(base: &FilterSet, extra: &FilterSet) -> FilterSet {
    FilterSet {
        time_window: base.time_window.or(extra.time_window),
        states: base.states.clone().or(extra.states.clone()),
        min_comments: base.min_comments.max(extra.min_comments),
        authors: base.authors.clone().or(extra.authors.clone()),
        file_extensions: base.file_extensions.clone().or(extra.file_extensions.clone()),
        keywords: base.keywords.clone().or(extra.keywords.clone()),
    }
}

fn float_matches(v: &Value, expected: Option<f64>) -> bool {
    match (v, expected) {
        (Value::Absent, None) => true,
        (Value::Float(x), Some(e)) => (x - e).abs() <= EPS,
        _ => false,
    }
}

/// Compares a dataset with the oracle's expected reviews.
pub fn check(ds: &Dataset, expected: &[OReview]) -> Result<(), String> {
    let reviews = ds.table(Granularity::Review).ok_or("no reviews table")?;
    if reviews.rows.len() != expected.len() {
        return Err(format!("{} review rows, oracle {}", reviews.rows.len(), expected.len()));
    }
    let by_id: BTreeMap<&str, &OReview> = expected.iter().map(|r| (r.id.as_str(), r)).collect();
    let idx = |n: &str| reviews.column_index(n).unwrap();
    for row in &reviews.rows {
        let id = row[idx("review_id")].to_field();
        let r = by_id.get(id.as_str()).ok_or_else(|| format!("review {id} not expected"))?;
        let reviewers: BTreeSet<&str> = r.comments.iter().map(|c| c.author.as_str()).filter(|a| *a != r.author).collect();
        let first = r.comments.iter().map(|c| c.at).min();
        let checks = [
            ("state", row[idx("state")] == Value::Str(r.state.into())),
            ("author", row[idx("author")] == Value::Str(r.author.clone())),
            ("comment_count", row[idx("comment_count")] == Value::Int(r.comments.len() as i64)),
            (
                "inline_comment_count",
                row[idx("inline_comment_count")] == Value::Int(r.comments.iter().filter(|c| c.inline).count() as i64),
            ),
            ("reviewer_count", row[idx("reviewer_count")] == Value::Int(reviewers.len() as i64)),
            ("commit_count", row[idx("commit_count")] == Value::Int(r.commits as i64)),
            ("files_changed", row[idx("files_changed")] == Value::Int(r.files.len() as i64)),
            ("review_duration_hours", float_matches(&row[idx("review_duration_hours")], r.merged.map(|m| hours(r.created, m)))),
            (
                "time_to_first_response_hours",
                float_matches(&row[idx("time_to_first_response_hours")], first.map(|f| hours(r.created, f))),
            ),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(format!("review {id}: {name} differs from oracle"));
        }
    }
    let children = |f: &dyn Fn(&OReview) -> usize| expected.iter().map(f).sum::<usize>();
    for (g, n) in [
        (Granularity::Comment, children(&|r| r.comments.len())),
        (Granularity::Commit, children(&|r| r.commits)),
        (Granularity::File, children(&|r| r.files.len())),
    ] {
        let got = ds.table(g).map_or(0, |t| t.rows.len());
        if got != n {
            return Err(format!("{} rows {got}, oracle {n}", g.table_name()));
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ CSV

/// Strict RFC 4180 reader: CRLF records, `"` quoting with `""` escapes.
pub fn parse_rfc4180(text: &str) -> Result<Vec<Vec<String>>, String> {
    let mut rows = Vec::new();
    let mut row = Vec::new();
    let mut field = String::new();
    let mut chars = text.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    field.push('"');
                }
                '"' => quoted = false,
                _ => field.push(c),
            }
            continue;
        }
        match c {
            '"' if field.is_empty() => quoted = true,
            '"' => return Err("quote inside unquoted field".into()),
            ',' => row.push(std::mem::take(&mut field)),
            '\r' => {
                if chars.next() != Some('\n') {
                    return Err("bare CR".into());
                }
                row.push(std::mem::take(&mut field));
                rows.push(std::mem::take(&mut row));
            }
            '\n' => return Err("bare LF outside quotes".into()),
            _ => field.push(c),
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    if !field.is_empty() || !row.is_empty() {
        return Err("missing final CRLF".into());
    }
    Ok(rows)
}

// ------------------------------------------------------------- calendar

/// Days since 1970-01-01 of a proleptic Gregorian date.
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn year_of_days(z: i64) -> i64 {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    yoe + era * 400 + i64::from(m <= 2)
}

/// ISO week label: the week belongs to the year of its Thursday.
pub fn iso_week(y: i64, m: i64, d: i64) -> String {
    let days = days_from_civil(y, m, d);
    let thursday = days - (days + 3).rem_euclid(7) + 3;
    let iso_year = year_of_days(thursday);
    let week = (thursday - days_from_civil(iso_year, 1, 1)) / 7 + 1;
    format!("{iso_year:04}-W{week:02}")
}
