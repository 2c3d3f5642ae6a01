//! Platform-neutral review data model.

use serde::{Deserialize, Serialize};

use crate::plan::ReviewState;
use crate::platform_access::PlatformKind;
use crate::time::{self, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub platform: PlatformKind,
    pub review_id: String,
    pub number: u64,
    pub title: String,
    pub description: String,
    pub state: ReviewState,
    #[serde(with = "time::serde_ts")]
    pub created_at: Timestamp,
    #[serde(with = "time::serde_ts::option")]
    pub merged_at: Option<Timestamp>,
    #[serde(with = "time::serde_ts::option")]
    pub closed_at: Option<Timestamp>,
    pub author: String,
    pub source_branch: String,
    pub target_branch: String,
    pub commits: Vec<CommitRecord>,
    pub comments: Vec<CommentRecord>,
    pub files: Vec<FileChangeRecord>,
}

impl ReviewRecord {
    /// Restores the ordering invariants on child lists.
    pub fn sort_children(&mut self) {
        self.comments.sort_by_key(|c| c.created_at);
        self.commits.sort_by_key(|c| c.committed_at);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub path: String,
    pub additions: u64,
    pub deletions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub sha: String,
    #[serde(with = "time::serde_ts")]
    pub authored_at: Timestamp,
    #[serde(with = "time::serde_ts")]
    pub committed_at: Timestamp,
    pub author_name: String,
    pub author_email: String,
    pub message: String,
    pub diffs: Vec<FileDiff>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommentKind {
    Inline,
    General,
}

impl CommentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommentKind::Inline => "inline",
            CommentKind::General => "general",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub comment_id: String,
    pub kind: CommentKind,
    pub author: String,
    pub body: String,
    #[serde(with = "time::serde_ts")]
    pub created_at: Timestamp,
    pub file_path: Option<String>,
    pub line: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeType {
    Added,
    Modified,
    Deleted,
    Renamed,
}

impl ChangeType {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeType::Added => "added",
            ChangeType::Modified => "modified",
            ChangeType::Deleted => "deleted",
            ChangeType::Renamed => "renamed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChangeRecord {
    pub path: String,
    pub change_type: ChangeType,
    pub additions: u64,
    pub deletions: u64,
    pub old_path: Option<String>,
}
