use serde_json::Value;

use super::*;
use crate::plan::FilterSet;

pub(super) const ENDPOINTS: &[(EndpointId, &[&str])] = &[
    (EndpointId::ListReviews, &["/repos/{project}/pulls"]),
    (EndpointId::ReviewDetail, &["/repos/{project}/pulls/{n}"]),
    (EndpointId::ReviewCommits, &["/repos/{project}/pulls/{n}/commits"]),
    (
        EndpointId::ReviewComments,
        &["/repos/{project}/pulls/{n}/comments", "/repos/{project}/issues/{n}/comments"],
    ),
    (EndpointId::ReviewFiles, &["/repos/{project}/pulls/{n}/files"]),
    (EndpointId::IdentityProbe, &["/user"]),
    (EndpointId::ProjectProbe, &["/repos/{project}"]),
];

/// The pulls listing has no creation-date parameters, so only states are
/// pushed down; the time window is enforced at dataset build.
pub(super) fn list_query(filters: &FilterSet) -> Vec<(String, String)> {
    let state = match filters.states.as_deref() {
        Some([ReviewState::Open]) => "open",
        Some(states) if !states.is_empty() && !states.contains(&ReviewState::Open) => "closed",
        _ => "all",
    };
    vec![
        ("state".into(), state.into()),
        ("sort".into(), "created".into()),
        ("direction".into(), "asc".into()),
        ("per_page".into(), PAGE_SIZE.to_string()),
    ]
}

pub(super) fn parse_link_next(link: &str) -> Result<Option<String>, MalformedPagination> {
    let mut next = None;
    for part in link.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (url, params) = part
            .strip_prefix('<')
            .and_then(|rest| rest.split_once('>'))
            .ok_or_else(|| MalformedPagination(format!("unparsable Link entry `{part}`")))?;
        let is_next = params.split(';').any(|p| {
            let p = p.trim();
            p.strip_prefix("rel=")
                .map(|v| v.trim_matches('"').split_whitespace().any(|r| r == "next"))
                .unwrap_or(false)
        });
        if is_next {
            next = Some(url.to_owned());
        }
    }
    Ok(next)
}

fn login(doc: &Value, path: &str) -> NResult<String> {
    Ok(opt_str(doc, path)?.unwrap_or_else(|| "ghost".to_owned()))
}

pub(super) fn normalize_review(doc: &Value) -> NResult<ReviewRecord> {
    let merged_at = opt_ts(doc, "merged_at")?;
    let state = match req_str(doc, "state")?.as_str() {
        "open" => ReviewState::Open,
        "closed" if merged_at.is_some() => ReviewState::Merged,
        "closed" => ReviewState::Closed,
        other => return Err(NormalizationError::new("state", format!("unknown pull request state `{other}`"))),
    };
    finish_review(ReviewRecord {
        platform: PlatformKind::Github,
        review_id: req_id(doc, "id")?,
        number: req_u64(doc, "number")?,
        title: req_str(doc, "title")?,
        description: opt_str(doc, "body")?.unwrap_or_default(),
        state,
        created_at: req_ts(doc, "created_at")?,
        merged_at,
        closed_at: opt_ts(doc, "closed_at")?,
        author: login(doc, "user.login")?,
        source_branch: req_str(doc, "head.ref")?,
        target_branch: req_str(doc, "base.ref")?,
        commits: Vec::new(),
        comments: Vec::new(),
        files: Vec::new(),
    })
}

pub(super) fn normalize_comment(variant: Variant, raw: &Value) -> NResult<CommentRecord> {
    let common = (
        req_id(raw, "id")?,
        login(raw, "user.login")?,
        opt_str(raw, "body")?.unwrap_or_default(),
        req_ts(raw, "created_at")?,
    );
    let (comment_id, author, body, created_at) = common;
    match variant {
        Variant::General => Ok(CommentRecord {
            comment_id,
            kind: CommentKind::General,
            author,
            body,
            created_at,
            file_path: None,
            line: None,
        }),
        Variant::Primary => {
            let line = match opt_u64(raw, "line")? {
                Some(l) => Some(l),
                None => opt_u64(raw, "original_line")?,
            };
            Ok(CommentRecord {
                comment_id,
                kind: CommentKind::Inline,
                author,
                body,
                created_at,
                file_path: Some(req_str(raw, "path")?),
                line: line.filter(|l| *l > 0),
            })
        }
    }
}

pub(super) fn normalize_commit(raw: &Value) -> NResult<CommitRecord> {
    let diffs = match lookup(raw, "files") {
        Some(Value::Array(files)) => files
            .iter()
            .map(|f| {
                Ok(FileDiff {
                    path: req_str(f, "filename")?,
                    additions: opt_u64(f, "additions")?.unwrap_or(0),
                    deletions: opt_u64(f, "deletions")?.unwrap_or(0),
                })
            })
            .collect::<NResult<Vec<_>>>()?,
        _ => Vec::new(),
    };
    Ok(CommitRecord {
        sha: req_str(raw, "sha")?,
        authored_at: req_ts(raw, "commit.author.date")?,
        committed_at: req_ts(raw, "commit.committer.date")?,
        author_name: req_str(raw, "commit.author.name")?,
        author_email: opt_str(raw, "commit.author.email")?.unwrap_or_default(),
        message: req_str(raw, "commit.message")?,
        diffs,
    })
}

pub(super) fn normalize_file(raw: &Value) -> NResult<FileChangeRecord> {
    let status = req_str(raw, "status")?;
    let change_type = match status.as_str() {
        "added" => ChangeType::Added,
        "removed" => ChangeType::Deleted,
        "renamed" => ChangeType::Renamed,
        "modified" | "changed" | "copied" | "unchanged" => ChangeType::Modified,
        other => return Err(NormalizationError::new("status", format!("unknown file status `{other}`"))),
    };
    let old_path = if change_type == ChangeType::Renamed {
        Some(req_str(raw, "previous_filename")?)
    } else {
        None
    };
    Ok(FileChangeRecord {
        path: req_str(raw, "filename")?,
        change_type,
        additions: opt_u64(raw, "additions")?.unwrap_or(0),
        deletions: opt_u64(raw, "deletions")?.unwrap_or(0),
        old_path,
    })
}
