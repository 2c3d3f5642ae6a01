//! Seeded synthetic review projects with known ground truth, rendered as
//! GitHub or GitLab API documents.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Platform {
    Github,
    Gitlab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    Open,
    Merged,
    Closed,
}

impl State {
    pub fn as_str(self) -> &'static str {
        match self {
            State::Open => "open",
            State::Merged => "merged",
            State::Closed => "closed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtComment {
    pub id: u64,
    pub inline: bool,
    pub author: String,
    pub body: String,
    pub created_at: DateTime<Utc>,
    pub path: Option<String>,
    pub line: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtCommit {
    pub sha: String,
    pub authored_at: DateTime<Utc>,
    pub committed_at: DateTime<Utc>,
    pub author_name: String,
    pub author_email: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Change {
    Added,
    Modified,
    Deleted,
    Renamed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtFile {
    pub path: String,
    pub old_path: Option<String>,
    pub change: Change,
    pub additions: u64,
    pub deletions: u64,
}

/// One review as the platform knows it. `comments` excludes GitLab
/// system notes, which are counted separately.
#[derive(Debug, Clone, PartialEq)]
pub struct GtReview {
    pub id: u64,
    pub number: u64,
    pub title: String,
    pub description: String,
    pub state: State,
    pub created_at: DateTime<Utc>,
    pub merged_at: Option<DateTime<Utc>>,
    pub closed_at: Option<DateTime<Utc>>,
    pub author: String,
    pub source_branch: String,
    pub target_branch: String,
    pub comments: Vec<GtComment>,
    pub system_notes: usize,
    pub commits: Vec<GtCommit>,
    pub files: Vec<GtFile>,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub reviews: usize,
    /// Exact number of reviews with at least one comment; random when `None`.
    pub with_comments: Option<usize>,
    pub start: DateTime<Utc>,
}

impl SynthConfig {
    pub fn new(seed: u64, reviews: usize) -> Self {
        Self {
            seed,
            reviews,
            with_comments: None,
            start: Utc.with_ymd_and_hms(2022, 12, 1, 9, 0, 0).unwrap(),
        }
    }

    pub fn with_comments(mut self, n: usize) -> Self {
        self.with_comments = Some(n);
        self
    }
}

const USERS: &[&str] = &["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"];

const BODIES: &[&str] = &[
    "LGTM, ship it",
    "Big Refactoring pass, please review carefully",
    "nit: rename this variable",
    "Could we extract method here?",
    "He said \"LGTM\", merge",
    "prefix handling looks wrong",
    "Please add a test for the edge case.",
    "Why not use the existing helper?",
    "line one\nline two",
    "Ça marche très bien 👍",
    "This fixes the flaky build",
    "Needs a changelog entry, otherwise fine",
    "refactor the parser before merging",
    "Typo in the docstring",
];

const TITLES: &[&str] = &[
    "Add retry to uploader",
    "Fix null pointer in parser",
    "Refactor config loading",
    "Bump dependency versions",
    "Improve error messages",
    "Support, commas, in titles",
    "Document the \"quoted\" option",
];

const PATHS: &[&str] = &[
    "src/main/java/org/demo/App.java",
    "src/main/java/org/demo/Parser.java",
    "src/lib.rs",
    "src/config.rs",
    "README.md",
    "docs/guide.md",
    "scripts/build.py",
    "native/io.c",
    "Makefile",
];

fn hex40(rng: &mut StdRng) -> String {
    (0..40).map(|_| char::from_digit(rng.random_range(0..16), 16).unwrap()).collect()
}

/// A generated project: reviews sorted by number, numbers ascending with
/// creation time.
#[derive(Debug, Clone)]
pub struct SyntheticProject {
    pub reviews: Vec<GtReview>,
}

impl SyntheticProject {
    pub fn generate(cfg: &SynthConfig) -> Self {
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let n = cfg.reviews;
        let commented: Vec<bool> = match cfg.with_comments {
            Some(k) => {
                let k = k.min(n);
                let mut v: Vec<bool> = (0..n).map(|i| i < k).collect();
                v.shuffle(&mut rng);
                v
            }
            None => (0..n).map(|_| rng.random_bool(0.6)).collect(),
        };
        let mut created = cfg.start;
        let mut comment_id = 5_000_000u64;
        let mut reviews = Vec::with_capacity(n);
        for (i, has_comments) in commented.into_iter().enumerate() {
            let number = i as u64 + 1;
            created += Duration::minutes(rng.random_range(60..4 * 24 * 60));
            let roll: f64 = rng.random();
            let state = if roll < 0.6 {
                State::Merged
            } else if roll < 0.85 {
                State::Closed
            } else {
                State::Open
            };
            let end = created + Duration::minutes(rng.random_range(30..10 * 24 * 60));
            let (merged_at, closed_at) = match state {
                State::Merged => (Some(end), Some(end)),
                State::Closed => (None, Some(end)),
                State::Open => (None, None),
            };
            let author = USERS.choose(&mut rng).unwrap().to_string();

            let mut comments = Vec::new();
            if has_comments {
                let count = rng.random_range(1..=5);
                let mut at = created;
                for _ in 0..count {
                    at += Duration::minutes(rng.random_range(1..600));
                    comment_id += rng.random_range(1..50);
                    let inline = rng.random_bool(0.5);
                    let author = if rng.random_bool(0.03) {
                        "ghost".to_string()
                    } else {
                        USERS.choose(&mut rng).unwrap().to_string()
                    };
                    comments.push(GtComment {
                        id: comment_id,
                        inline,
                        author,
                        body: BODIES.choose(&mut rng).unwrap().to_string(),
                        created_at: at,
                        path: inline.then(|| PATHS.choose(&mut rng).unwrap().to_string()),
                        line: inline.then(|| rng.random_range(1..400)),
                    });
                }
            }

            let mut commits = Vec::new();
            let mut at = created - Duration::hours(2);
            for c in 0..rng.random_range(1..=4) {
                let authored = at + Duration::minutes(rng.random_range(1..120));
                at = authored + Duration::minutes(rng.random_range(0..30));
                let name = USERS.choose(&mut rng).unwrap();
                commits.push(GtCommit {
                    sha: hex40(&mut rng),
                    authored_at: authored,
                    committed_at: at,
                    author_name: name.to_string(),
                    author_email: format!("{name}@example.org"),
                    message: format!("Change {c} for review {number}\n\nDetails, with \"quotes\"."),
                });
            }

            let mut files = Vec::new();
            let mut pool: Vec<&str> = PATHS.to_vec();
            pool.shuffle(&mut rng);
            for path in pool.into_iter().take(rng.random_range(1..=5)) {
                let change = match rng.random_range(0..10) {
                    0 => Change::Added,
                    1 => Change::Deleted,
                    2 => Change::Renamed,
                    _ => Change::Modified,
                };
                let (additions, deletions) = match change {
                    Change::Added => (rng.random_range(1..60), 0),
                    Change::Deleted => (0, rng.random_range(1..60)),
                    _ => (rng.random_range(0..40), rng.random_range(0..40)),
                };
                files.push(GtFile {
                    path: path.to_string(),
                    old_path: (change == Change::Renamed).then(|| format!("old/{path}")),
                    change,
                    additions,
                    deletions,
                });
            }

            reviews.push(GtReview {
                id: 90_000_000 + number * 7,
                number,
                title: format!("{} (#{number})", TITLES.choose(&mut rng).unwrap()),
                description: if rng.random_bool(0.2) {
                    String::new()
                } else {
                    format!("Implements item {number}.\nSee discussion, details below.")
                },
                state,
                created_at: created,
                merged_at,
                closed_at,
                author,
                source_branch: format!("feature/{number}"),
                target_branch: "main".into(),
                comments,
                system_notes: rng.random_range(0..3),
                commits,
                files,
            });
        }
        SyntheticProject { reviews }
    }

    pub fn review(&self, number: u64) -> Option<&GtReview> {
        self.reviews.iter().find(|r| r.number == number)
    }
}

fn gh_ts(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn gl_ts(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> Value {
    v.map(|x| Value::String(f(x))).unwrap_or(Value::Null)
}

fn gh_user(login: &str) -> Value {
    if login == "ghost" {
        Value::Null
    } else {
        json!({"login": login, "id": login.len() as u64 * 1000, "type": "User"})
    }
}

/// GitHub REST shapes.
pub mod github {
    use super::*;

    pub fn pull(r: &GtReview) -> Value {
        json!({
            "id": r.id,
            "number": r.number,
            "title": r.title,
            "body": if r.description.is_empty() { Value::Null } else { Value::String(r.description.clone()) },
            "state": if r.state == State::Open { "open" } else { "closed" },
            "created_at": gh_ts(&r.created_at),
            "updated_at": gh_ts(&r.closed_at.unwrap_or(r.created_at)),
            "merged_at": opt(r.merged_at.as_ref(), gh_ts),
            "closed_at": opt(r.closed_at.as_ref(), gh_ts),
            "user": gh_user(&r.author),
            "head": {"ref": r.source_branch, "sha": r.commits.last().map(|c| c.sha.clone())},
            "base": {"ref": r.target_branch},
            "draft": false,
        })
    }

    pub fn review_comments(r: &GtReview) -> Vec<Value> {
        r.comments
            .iter()
            .filter(|c| c.inline)
            .map(|c| {
                json!({
                    "id": c.id,
                    "user": gh_user(&c.author),
                    "body": c.body,
                    "created_at": gh_ts(&c.created_at),
                    "path": c.path,
                    "line": c.line,
                    "original_line": c.line,
                })
            })
            .collect()
    }

    pub fn issue_comments(r: &GtReview) -> Vec<Value> {
        r.comments
            .iter()
            .filter(|c| !c.inline)
            .map(|c| {
                json!({
                    "id": c.id,
                    "user": gh_user(&c.author),
                    "body": c.body,
                    "created_at": gh_ts(&c.created_at),
                })
            })
            .collect()
    }

    pub fn commits(r: &GtReview) -> Vec<Value> {
        r.commits
            .iter()
            .map(|c| {
                json!({
                    "sha": c.sha,
                    "commit": {
                        "author": {"name": c.author_name, "email": c.author_email, "date": gh_ts(&c.authored_at)},
                        "committer": {"name": c.author_name, "email": c.author_email, "date": gh_ts(&c.committed_at)},
                        "message": c.message,
                    },
                })
            })
            .collect()
    }

    pub fn files(r: &GtReview) -> Vec<Value> {
        r.files
            .iter()
            .map(|f| {
                let status = match f.change {
                    Change::Added => "added",
                    Change::Modified => "modified",
                    Change::Deleted => "removed",
                    Change::Renamed => "renamed",
                };
                let mut v = json!({
                    "filename": f.path,
                    "status": status,
                    "additions": f.additions,
                    "deletions": f.deletions,
                    "changes": f.additions + f.deletions,
                });
                if let Some(old) = &f.old_path {
                    v["previous_filename"] = json!(old);
                }
                v
            })
            .collect()
    }
}

/// GitLab REST shapes.
pub mod gitlab {
    use super::*;

    pub fn merge_request(r: &GtReview) -> Value {
        json!({
            "id": r.id,
            "iid": r.number,
            "project_id": 4242,
            "title": r.title,
            "description": r.description,
            "state": match r.state { State::Open => "opened", State::Merged => "merged", State::Closed => "closed" },
            "created_at": gl_ts(&r.created_at),
            "updated_at": gl_ts(&r.closed_at.unwrap_or(r.created_at)),
            "merged_at": opt(r.merged_at.as_ref(), gl_ts),
            "closed_at": if r.state == State::Closed { opt(r.closed_at.as_ref(), gl_ts) } else { Value::Null },
            "author": {"id": r.author.len(), "username": r.author},
            "source_branch": r.source_branch,
            "target_branch": r.target_branch,
        })
    }

    pub fn notes(r: &GtReview) -> Vec<Value> {
        let mut out: Vec<Value> = r
            .comments
            .iter()
            .map(|c| {
                let mut v = json!({
                    "id": c.id,
                    "body": c.body,
                    "author": {"username": c.author},
                    "created_at": gl_ts(&c.created_at),
                    "system": false,
                });
                if c.inline {
                    v["type"] = json!("DiffNote");
                    v["position"] = json!({
                        "new_path": c.path,
                        "old_path": c.path,
                        "new_line": c.line,
                        "old_line": null,
                    });
                } else {
                    v["type"] = Value::Null;
                }
                v
            })
            .collect();
        for i in 0..r.system_notes {
            out.push(json!({
                "id": r.id * 10 + i as u64,
                "body": "added 1 commit",
                "author": {"username": r.author},
                "created_at": gl_ts(&(r.created_at + Duration::seconds(i as i64 + 1))),
                "system": true,
                "type": null,
            }));
        }
        out
    }

    pub fn commits(r: &GtReview) -> Vec<Value> {
        r.commits
            .iter()
            .map(|c| {
                json!({
                    "id": c.sha,
                    "short_id": &c.sha[..8],
                    "title": c.message.lines().next().unwrap_or_default(),
                    "message": c.message,
                    "author_name": c.author_name,
                    "author_email": c.author_email,
                    "authored_date": gl_ts(&c.authored_at),
                    "committed_date": gl_ts(&c.committed_at),
                })
            })
            .collect()
    }

    /// Unified diff body with exactly the requested line counts.
    pub fn diff_text(additions: u64, deletions: u64) -> String {
        let mut d = format!("@@ -1,{} +1,{} @@\n context\n", deletions + 1, additions + 1);
        for i in 0..deletions {
            d.push_str(&format!("-old line {i}\n"));
        }
        for i in 0..additions {
            d.push_str(&format!("+new line {i}\n"));
        }
        d
    }

    pub fn diffs(r: &GtReview) -> Vec<Value> {
        r.files
            .iter()
            .map(|f| {
                json!({
                    "old_path": f.old_path.clone().unwrap_or_else(|| f.path.clone()),
                    "new_path": f.path,
                    "new_file": f.change == Change::Added,
                    "renamed_file": f.change == Change::Renamed,
                    "deleted_file": f.change == Change::Deleted,
                    "diff": diff_text(f.additions, f.deletions),
                })
            })
            .collect()
    }
}
