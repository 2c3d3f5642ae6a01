use serde_json::Value;

use super::*;
use crate::plan::FilterSet;

pub(super) const ENDPOINTS: &[(EndpointId, &[&str])] = &[
    (EndpointId::ListReviews, &["/projects/{project}/merge_requests"]),
    (EndpointId::ReviewDetail, &["/projects/{project}/merge_requests/{n}"]),
    (EndpointId::ReviewCommits, &["/projects/{project}/merge_requests/{n}/commits"]),
    (EndpointId::ReviewComments, &["/projects/{project}/merge_requests/{n}/notes"]),
    (EndpointId::ReviewFiles, &["/projects/{project}/merge_requests/{n}/diffs"]),
    (EndpointId::IdentityProbe, &["/user"]),
    (EndpointId::ProjectProbe, &["/projects/{project}"]),
];

pub(super) fn list_query(filters: &FilterSet) -> Vec<(String, String)> {
    let mut q = Vec::new();
    if let Some(w) = &filters.time_window {
        q.push(("created_after".into(), time::format_ts(&w.start)));
        q.push(("created_before".into(), time::format_ts(&w.end)));
    }
    // The API takes a single state; several states fall back to `all`.
    let state = match filters.states.as_deref() {
        Some([ReviewState::Open]) => "opened",
        Some([ReviewState::Merged]) => "merged",
        Some([ReviewState::Closed]) => "closed",
        _ => "all",
    };
    q.push(("state".into(), state.into()));
    q.push(("order_by".into(), "created_at".into()));
    q.push(("sort".into(), "asc".into()));
    q.push(("per_page".into(), PAGE_SIZE.to_string()));
    q
}

pub(super) fn normalize_review(doc: &Value) -> NResult<ReviewRecord> {
    let state = match req_str(doc, "state")?.as_str() {
        // `locked` is a transient state while a merge is in progress.
        "opened" | "locked" => ReviewState::Open,
        "merged" => ReviewState::Merged,
        "closed" => ReviewState::Closed,
        other => return Err(NormalizationError::new("state", format!("unknown merge request state `{other}`"))),
    };
    finish_review(ReviewRecord {
        platform: PlatformKind::Gitlab,
        review_id: req_id(doc, "id")?,
        number: req_u64(doc, "iid")?,
        title: req_str(doc, "title")?,
        description: opt_str(doc, "description")?.unwrap_or_default(),
        state,
        created_at: req_ts(doc, "created_at")?,
        merged_at: opt_ts(doc, "merged_at")?,
        closed_at: opt_ts(doc, "closed_at")?,
        author: req_str(doc, "author.username")?,
        source_branch: req_str(doc, "source_branch")?,
        target_branch: req_str(doc, "target_branch")?,
        commits: Vec::new(),
        comments: Vec::new(),
        files: Vec::new(),
    })
}

pub(super) fn normalize_comment(raw: &Value) -> NResult<Option<CommentRecord>> {
    if req_bool(raw, "system") {
        return Ok(None);
    }
    let comment_id = req_id(raw, "id")?;
    let author = req_str(raw, "author.username")?;
    let body = opt_str(raw, "body")?.unwrap_or_default();
    let created_at = req_ts(raw, "created_at")?;
    let record = match lookup(raw, "position") {
        Some(pos @ Value::Object(_)) => {
            let path = match opt_str(pos, "new_path")? {
                Some(p) => p,
                None => req_str(pos, "old_path")?,
            };
            let line = match opt_u64(pos, "new_line")? {
                Some(l) => Some(l),
                None => opt_u64(pos, "old_line")?,
            };
            CommentRecord {
                comment_id,
                kind: CommentKind::Inline,
                author,
                body,
                created_at,
                file_path: Some(path),
                line: line.filter(|l| *l > 0),
            }
        }
        _ => CommentRecord {
            comment_id,
            kind: CommentKind::General,
            author,
            body,
            created_at,
            file_path: None,
            line: None,
        },
    };
    Ok(Some(record))
}

pub(super) fn normalize_commit(raw: &Value) -> NResult<CommitRecord> {
    Ok(CommitRecord {
        sha: req_str(raw, "id")?,
        authored_at: req_ts(raw, "authored_date")?,
        committed_at: req_ts(raw, "committed_date")?,
        author_name: req_str(raw, "author_name")?,
        author_email: opt_str(raw, "author_email")?.unwrap_or_default(),
        message: req_str(raw, "message")?,
        diffs: Vec::new(),
    })
}

/// Added/removed line counts from a unified diff hunk body.
fn diff_stats(diff: &str) -> (u64, u64) {
    let mut adds = 0;
    let mut dels = 0;
    for line in diff.lines() {
        if line.starts_with("+++") || line.starts_with("---") {
            continue;
        }
        if line.starts_with('+') {
            adds += 1;
        } else if line.starts_with('-') {
            dels += 1;
        }
    }
    (adds, dels)
}

pub(super) fn normalize_file(raw: &Value) -> NResult<FileChangeRecord> {
    let new_path = req_str(raw, "new_path")?;
    let old_path = req_str(raw, "old_path")?;
    let change_type = if req_bool(raw, "new_file") {
        ChangeType::Added
    } else if req_bool(raw, "deleted_file") {
        ChangeType::Deleted
    } else if req_bool(raw, "renamed_file") {
        ChangeType::Renamed
    } else {
        ChangeType::Modified
    };
    let (additions, deletions) = diff_stats(&opt_str(raw, "diff")?.unwrap_or_default());
    Ok(FileChangeRecord {
        path: new_path,
        change_type,
        additions,
        deletions,
        old_path: (change_type == ChangeType::Renamed).then_some(old_path),
    })
}
