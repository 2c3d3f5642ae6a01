use std::collections::BTreeSet;

use super::{DatasetError, Value};
use crate::adapters::{CommentKind, CommentRecord, CommitRecord, FileChangeRecord, ReviewRecord};
use crate::time::hours_between;

fn opt_ts(ts: &Option<crate::time::Timestamp>) -> Value {
    ts.map(Value::Ts).unwrap_or(Value::Absent)
}

/// Value of a review-granularity metric for one review.
pub fn compute_metric(metric_id: &str, r: &ReviewRecord) -> Result<Value, DatasetError> {
    Ok(match metric_id {
        "review_id" => Value::Str(r.review_id.clone()),
        "title" => Value::Str(r.title.clone()),
        "description" => Value::Str(r.description.clone()),
        "state" => Value::Str(r.state.as_str().to_owned()),
        "created_at" => Value::Ts(r.created_at),
        "merged_at" => opt_ts(&r.merged_at),
        "closed_at" => opt_ts(&r.closed_at),
        "author" => Value::Str(r.author.clone()),
        "source_branch" => Value::Str(r.source_branch.clone()),
        "target_branch" => Value::Str(r.target_branch.clone()),
        "review_duration_hours" => match (r.state, &r.merged_at) {
            (crate::plan::ReviewState::Merged, Some(m)) => Value::Float(hours_between(&r.created_at, m)),
            _ => Value::Absent,
        },
        "comment_count" => Value::Int(r.comments.len() as i64),
        "inline_comment_count" => {
            Value::Int(r.comments.iter().filter(|c| c.kind == CommentKind::Inline).count() as i64)
        }
        "reviewer_count" => {
            let reviewers: BTreeSet<&str> = r
                .comments
                .iter()
                .map(|c| c.author.as_str())
                .filter(|a| *a != r.author)
                .collect();
            Value::Int(reviewers.len() as i64)
        }
        "commit_count" => Value::Int(r.commits.len() as i64),
        "files_changed" => Value::Int(r.files.len() as i64),
        "time_to_first_response_hours" => match r.comments.iter().map(|c| c.created_at).min() {
            Some(first) => Value::Float(hours_between(&r.created_at, &first)),
            None => Value::Absent,
        },
        other => return Err(DatasetError::UnknownMetric(other.to_owned())),
    })
}

pub fn commit_metric(metric_id: &str, c: &CommitRecord) -> Result<Value, DatasetError> {
    Ok(match metric_id {
        "commit_sha" => Value::Str(c.sha.clone()),
        "commit_committed_at" => Value::Ts(c.committed_at),
        "commit_authored_at" => Value::Ts(c.authored_at),
        "commit_author" => Value::Str(if c.author_email.is_empty() {
            c.author_name.clone()
        } else {
            format!("{} <{}>", c.author_name, c.author_email)
        }),
        "commit_message" => Value::Str(c.message.clone()),
        "commit_file_diffs" if c.diffs.is_empty() => Value::Absent,
        "commit_file_diffs" => Value::Str(
            c.diffs
                .iter()
                .map(|d| format!("{}:+{}/-{}", d.path, d.additions, d.deletions))
                .collect::<Vec<_>>()
                .join(";"),
        ),
        other => return Err(DatasetError::UnknownMetric(other.to_owned())),
    })
}

pub fn comment_metric(metric_id: &str, c: &CommentRecord) -> Result<Value, DatasetError> {
    Ok(match metric_id {
        "comment_id" => Value::Str(c.comment_id.clone()),
        "comment_kind" => Value::Str(c.kind.as_str().to_owned()),
        "comment_author" => Value::Str(c.author.clone()),
        "comment_body" => Value::Str(c.body.clone()),
        "comment_created_at" => Value::Ts(c.created_at),
        "comment_file_path" => c.file_path.clone().map(Value::Str).unwrap_or(Value::Absent),
        "comment_line" => c.line.map(|l| Value::Int(l as i64)).unwrap_or(Value::Absent),
        other => return Err(DatasetError::UnknownMetric(other.to_owned())),
    })
}

pub fn file_metric(metric_id: &str, f: &FileChangeRecord) -> Result<Value, DatasetError> {
    Ok(match metric_id {
        "file_path" => Value::Str(f.path.clone()),
        "file_change_type" => Value::Str(f.change_type.as_str().to_owned()),
        "file_additions" => Value::Int(f.additions as i64),
        "file_deletions" => Value::Int(f.deletions as i64),
        other => return Err(DatasetError::UnknownMetric(other.to_owned())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::ReviewState;
    use crate::platform_access::PlatformKind;
    use crate::time::parse_ts;

    fn review() -> ReviewRecord {
        ReviewRecord {
            platform: PlatformKind::Github,
            review_id: "1".into(),
            number: 1,
            title: "t".into(),
            description: String::new(),
            state: ReviewState::Merged,
            created_at: parse_ts("2023-03-01T10:00:00Z").unwrap(),
            merged_at: parse_ts("2023-03-02T10:00:00Z"),
            closed_at: parse_ts("2023-03-02T10:00:00Z"),
            author: "carol".into(),
            source_branch: "f".into(),
            target_branch: "main".into(),
            commits: vec![],
            comments: vec![],
            files: vec![],
        }
    }

    fn comment(author: &str, at: &str) -> CommentRecord {
        CommentRecord {
            comment_id: at.into(),
            kind: CommentKind::General,
            author: author.into(),
            body: String::new(),
            created_at: parse_ts(at).unwrap(),
            file_path: None,
            line: None,
        }
    }

    #[test]
    fn duration_in_hours() {
        assert_eq!(compute_metric("review_duration_hours", &review()).unwrap(), Value::Float(24.0));
        let mut open = review();
        open.state = ReviewState::Open;
        open.merged_at = None;
        assert_eq!(compute_metric("review_duration_hours", &open).unwrap(), Value::Absent);
    }

    #[test]
    fn reviewer_count_excludes_author() {
        let mut r = review();
        r.comments = vec![
            comment("alice", "2023-03-01T11:00:00Z"),
            comment("bob", "2023-03-01T12:00:00Z"),
            comment("alice", "2023-03-01T13:00:00Z"),
            comment("carol", "2023-03-01T10:30:00Z"),
        ];
        assert_eq!(compute_metric("reviewer_count", &r).unwrap(), Value::Int(2));
        assert_eq!(compute_metric("comment_count", &r).unwrap(), Value::Int(4));
        assert_eq!(compute_metric("time_to_first_response_hours", &r).unwrap(), Value::Float(0.5));
    }

    #[test]
    fn no_comments_means_absent_first_response() {
        assert_eq!(compute_metric("time_to_first_response_hours", &review()).unwrap(), Value::Absent);
        assert_eq!(compute_metric("comment_count", &review()).unwrap(), Value::Int(0));
        assert!(matches!(compute_metric("commit_sha", &review()), Err(DatasetError::UnknownMetric(_))));
    }
}
