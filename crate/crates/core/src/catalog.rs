//! The built-in metric catalog.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricCategory {
    ReviewMeta,
    Commits,
    Comments,
    Files,
    Derived,
}

impl MetricCategory {
    pub const ALL: [MetricCategory; 5] = [
        MetricCategory::ReviewMeta,
        MetricCategory::Commits,
        MetricCategory::Comments,
        MetricCategory::Files,
        MetricCategory::Derived,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricCategory::ReviewMeta => "review_meta",
            MetricCategory::Commits => "commits",
            MetricCategory::Comments => "comments",
            MetricCategory::Files => "files",
            MetricCategory::Derived => "derived",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == name)
    }
}

impl fmt::Display for MetricCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Table a metric lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Review,
    Commit,
    Comment,
    File,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Review,
        Granularity::Commit,
        Granularity::Comment,
        Granularity::File,
    ];

    /// Table name used in datasets, CSV file stems and the service API.
    pub fn table_name(self) -> &'static str {
        match self {
            Granularity::Review => "reviews",
            Granularity::Commit => "commits",
            Granularity::Comment => "comments",
            Granularity::File => "files",
        }
    }

    pub fn from_table_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.table_name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    String,
    Integer,
    Float,
    Timestamp,
    Boolean,
}

impl ValueKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueKind::Integer | ValueKind::Float)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricDescriptor {
    pub metric_id: &'static str,
    pub category: MetricCategory,
    pub granularity: Granularity,
    pub value_kind: ValueKind,
    pub description: &'static str,
}

const fn metric(
    metric_id: &'static str,
    category: MetricCategory,
    granularity: Granularity,
    value_kind: ValueKind,
    description: &'static str,
) -> MetricDescriptor {
    MetricDescriptor {
        metric_id,
        category,
        granularity,
        value_kind,
        description,
    }
}

use Granularity as G;
use MetricCategory as C;
use ValueKind as V;

static CATALOG: [MetricDescriptor; 34] = [
    metric("review_id", C::ReviewMeta, G::Review, V::String, "Platform-global identifier of the pull/merge request"),
    metric("title", C::ReviewMeta, G::Review, V::String, "Review title"),
    metric("description", C::ReviewMeta, G::Review, V::String, "Review description; empty when the platform has none"),
    metric("state", C::ReviewMeta, G::Review, V::String, "One of open, merged, closed"),
    metric("created_at", C::ReviewMeta, G::Review, V::Timestamp, "Creation time (UTC)"),
    metric("merged_at", C::ReviewMeta, G::Review, V::Timestamp, "Merge time (UTC); absent unless merged"),
    metric("closed_at", C::ReviewMeta, G::Review, V::Timestamp, "Close time (UTC) when reported"),
    metric("author", C::ReviewMeta, G::Review, V::String, "Login of the review author"),
    metric("source_branch", C::ReviewMeta, G::Review, V::String, "Branch proposed for merge"),
    metric("target_branch", C::ReviewMeta, G::Review, V::String, "Branch merged into"),
    metric("commit_sha", C::Commits, G::Commit, V::String, "40-hex commit identifier"),
    metric("commit_committed_at", C::Commits, G::Commit, V::Timestamp, "Committer date (creation date of the commit object)"),
    metric("commit_authored_at", C::Commits, G::Commit, V::Timestamp, "Author date"),
    metric("commit_author", C::Commits, G::Commit, V::String, "Commit author identity as `name <email>`"),
    metric("commit_message", C::Commits, G::Commit, V::String, "Full commit message"),
    metric("commit_file_diffs", C::Commits, G::Commit, V::String, "Per-file diff stats `path:+adds/-dels` joined by `;`; absent when the platform reports none"),
    metric("comment_id", C::Comments, G::Comment, V::String, "Platform comment/note identifier"),
    metric("comment_kind", C::Comments, G::Comment, V::String, "inline or general"),
    metric("comment_author", C::Comments, G::Comment, V::String, "Login of the commenter"),
    metric("comment_body", C::Comments, G::Comment, V::String, "Comment text"),
    metric("comment_created_at", C::Comments, G::Comment, V::Timestamp, "Comment creation time (UTC)"),
    metric("comment_file_path", C::Comments, G::Comment, V::String, "Anchored file for inline comments"),
    metric("comment_line", C::Comments, G::Comment, V::Integer, "Anchored line for inline comments"),
    metric("file_path", C::Files, G::File, V::String, "Path of the changed file"),
    metric("file_change_type", C::Files, G::File, V::String, "added, modified, deleted or renamed"),
    metric("file_additions", C::Files, G::File, V::Integer, "Added lines"),
    metric("file_deletions", C::Files, G::File, V::Integer, "Deleted lines"),
    metric("review_duration_hours", C::Derived, G::Review, V::Float, "Hours from creation to merge; absent unless merged"),
    metric("comment_count", C::Derived, G::Review, V::Integer, "Number of inline and general comments"),
    metric("inline_comment_count", C::Derived, G::Review, V::Integer, "Number of inline comments"),
    metric("reviewer_count", C::Derived, G::Review, V::Integer, "Distinct commenters other than the review author"),
    metric("commit_count", C::Derived, G::Review, V::Integer, "Number of commits"),
    metric("files_changed", C::Derived, G::Review, V::Integer, "Number of changed files"),
    metric("time_to_first_response_hours", C::Derived, G::Review, V::Float, "Hours from creation to the earliest comment; absent without comments"),
];

/// Immutable view over the built-in metric catalog.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricCatalog;

/// Returns the built-in catalog.
pub fn catalog() -> MetricCatalog {
    MetricCatalog
}

impl MetricCatalog {
    pub fn descriptors(&self) -> &'static [MetricDescriptor] {
        &CATALOG
    }

    pub fn get(&self, metric_id: &str) -> Option<&'static MetricDescriptor> {
        CATALOG.iter().find(|m| m.metric_id == metric_id)
    }

    pub fn position(&self, metric_id: &str) -> Option<usize> {
        CATALOG.iter().position(|m| m.metric_id == metric_id)
    }

    pub fn members(&self, category: MetricCategory) -> impl Iterator<Item = &'static MetricDescriptor> {
        CATALOG.iter().filter(move |m| m.category == category)
    }

    pub fn len(&self) -> usize {
        CATALOG.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
