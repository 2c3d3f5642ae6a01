//! Test fixtures: synthetic forge projects, an in-process forge server, a
//! scripted LLM endpoint and a small recorded corpus.

pub mod llm;
pub mod server;
pub mod synth;

pub use llm::{LlmStub, StubReply};
pub use server::{ForgeOptions, ForgeServer, RequestRecord};
pub use synth::{Platform, SynthConfig, SyntheticProject};

/// Recorded API documents. Review 17 is the same change on both platforms.
pub mod corpus {
    pub mod github {
        pub const PULLS: &str = include_str!("../corpus/github/pulls.json");
        pub const PULL_17_COMMENTS: &str = include_str!("../corpus/github/pull_17_comments.json");
        pub const ISSUE_17_COMMENTS: &str = include_str!("../corpus/github/issue_17_comments.json");
        pub const PULL_17_COMMITS: &str = include_str!("../corpus/github/pull_17_commits.json");
        pub const PULL_17_FILES: &str = include_str!("../corpus/github/pull_17_files.json");
    }

    pub mod gitlab {
        pub const MERGE_REQUESTS: &str = include_str!("../corpus/gitlab/merge_requests.json");
        pub const MR_17_NOTES: &str = include_str!("../corpus/gitlab/mr_17_notes.json");
        pub const MR_17_COMMITS: &str = include_str!("../corpus/gitlab/mr_17_commits.json");
        pub const MR_17_DIFFS: &str = include_str!("../corpus/gitlab/mr_17_diffs.json");
    }
}
