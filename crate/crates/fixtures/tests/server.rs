use revmine_fixtures::{ForgeServer, LlmStub, Platform, StubReply, SynthConfig, SyntheticProject};

fn get(url: &str, headers: &[(&str, &str)]) -> reqwest::blocking::Response {
    let mut req = reqwest::blocking::Client::new().get(url);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    req.send().unwrap()
}

#[test]
fn github_listing_follows_link_headers() {
    let data = SyntheticProject::generate(&SynthConfig::new(3, 250));
    let srv = ForgeServer::start(Platform::Github, data);
    let auth = format!("Bearer {}", srv.token());
    let mut url = Some(format!("{}/repos/octo/demo/pulls?state=all&per_page=100", srv.base_url()));
    let mut seen = 0;
    let mut pages = 0;
    while let Some(u) = url.take() {
        let resp = get(&u, &[("authorization", &auth)]);
        assert_eq!(resp.status(), 200);
        let link = resp.headers().get("link").map(|v| v.to_str().unwrap().to_owned());
        let body: serde_json::Value = resp.json().unwrap();
        seen += body.as_array().unwrap().len();
        pages += 1;
        url = link.and_then(|l| {
            l.split(',')
                .find(|p| p.contains("rel=\"next\""))
                .map(|p| p.trim().trim_start_matches('<').split('>').next().unwrap().to_owned())
        });
    }
    assert_eq!((seen, pages), (250, 3));
}

#[test]
fn gitlab_filters_and_next_page() {
    let data = SyntheticProject::generate(&SynthConfig::new(3, 60));
    let merged = data.reviews.iter().filter(|r| r.state == revmine_fixtures::synth::State::Merged).count();
    let srv = ForgeServer::start(Platform::Gitlab, data);
    let tok = srv.token();
    let url = format!("{}/projects/4242/merge_requests?state=merged&per_page=100", srv.base_url());
    let resp = get(&url, &[("private-token", &tok)]);
    assert_eq!(resp.headers()["x-next-page"], "");
    let body: serde_json::Value = resp.json().unwrap();
    assert_eq!(body.as_array().unwrap().len(), merged);
}

#[test]
fn bad_token_and_injected_faults() {
    let srv = ForgeServer::start(Platform::Github, SyntheticProject::generate(&SynthConfig::new(1, 3)));
    let url = format!("{}/repos/octo/demo/pulls/1/files", srv.base_url());
    assert_eq!(get(&url, &[("authorization", "Bearer wrong")]).status(), 401);
    let auth = format!("Bearer {}", srv.token());
    srv.fail("/pulls/1/files", None, 500, Some(1));
    srv.throttle_once("/pulls/1/files", None, 2);
    assert_eq!(get(&url, &[("authorization", &auth)]).status(), 500);
    let r = get(&url, &[("authorization", &auth)]);
    assert_eq!((r.status().as_u16(), r.headers()["retry-after"].to_str().unwrap()), (429, "2"));
    assert_eq!(get(&url, &[("authorization", &auth)]).status(), 200);
    assert_eq!(srv.count_matching("/pulls/1/files"), 4);
    assert!(srv.served_body("/repos/octo/demo/pulls/1/files", 1).is_some());
}

#[test]
fn llm_stub_follows_script() {
    let stub = LlmStub::start(vec![StubReply::status(500, "boom"), StubReply::ok("{\"a\":1}")]);
    let client = reqwest::blocking::Client::new();
    let r1 = client.post(stub.url()).body("{}").send().unwrap();
    assert_eq!(r1.status(), 500);
    let r2: serde_json::Value = client.post(stub.url()).body("{\"x\":1}").send().unwrap().json().unwrap();
    assert_eq!(r2["choices"][0]["message"]["content"], "{\"a\":1}");
    assert_eq!(stub.calls().len(), 2);
}
