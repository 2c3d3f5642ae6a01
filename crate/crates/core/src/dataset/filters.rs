use crate::adapters::ReviewRecord;
use crate::plan::FilterSet;

/// Case-insensitive literal search. Returns the byte range of the first
/// match in `hay`.
pub fn find_ci(hay: &str, needle: &str) -> Option<(usize, usize)> {
    let pattern: Vec<char> = needle.chars().flat_map(char::to_lowercase).collect();
    if pattern.is_empty() {
        return Some((0, 0));
    }
    for (start, _) in hay.char_indices() {
        let mut matched = 0;
        for (offset, c) in hay[start..].char_indices() {
            let fits = c.to_lowercase().all(|lc| {
                let ok = matched < pattern.len() && pattern[matched] == lc;
                matched += ok as usize;
                ok
            });
            if !fits {
                break;
            }
            if matched == pattern.len() {
                return Some((start, start + offset + c.len_utf8()));
            }
        }
    }
    None
}

pub fn contains_ci(hay: &str, needle: &str) -> bool {
    find_ci(hay, needle).is_some()
}

fn has_extension(path: &str, ext: &str) -> bool {
    path.to_lowercase().ends_with(&ext.to_lowercase())
}

/// Whether one review passes every present filter component.
pub fn review_matches(r: &ReviewRecord, f: &FilterSet) -> bool {
    fn active<T>(list: &Option<Vec<T>>) -> Option<&[T]> {
        list.as_deref().filter(|l| !l.is_empty())
    }
    if let Some(w) = &f.time_window {
        if !w.contains(&r.created_at) {
            return false;
        }
    }
    if let Some(states) = active(&f.states) {
        if !states.contains(&r.state) {
            return false;
        }
    }
    if let Some(min) = f.min_comments {
        if r.comments.len() < min as usize {
            return false;
        }
    }
    if let Some(authors) = active(&f.authors) {
        if !authors.contains(&r.author) {
            return false;
        }
    }
    if let Some(exts) = active(&f.file_extensions) {
        if !r.files.iter().any(|file| exts.iter().any(|e| has_extension(&file.path, e))) {
            return false;
        }
    }
    if let Some(keywords) = active(&f.keywords) {
        let hit = keywords.iter().any(|k| {
            contains_ci(&r.title, k)
                || contains_ci(&r.description, k)
                || r.comments.iter().any(|c| contains_ci(&c.body, k))
        });
        if !hit {
            return false;
        }
    }
    true
}

/// Keeps the reviews passing every filter. Children travel with their
/// review, so dropping a review drops its children.
pub fn apply_filters(records: Vec<ReviewRecord>, filters: &FilterSet) -> Vec<ReviewRecord> {
    records.into_iter().filter(|r| review_matches(r, filters)).collect()
}
