use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use protochem::llmclient::{
    Cassette, CassetteMode, ChatRequest, FnTransport, LlmClient, Message, SamplingOverrides, Transport, Usage,
    WireResponse,
};

#[test]
fn in_flight_never_exceeds_bound() {
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (f, p) = (in_flight.clone(), peak.clone());
    let t: Arc<dyn Transport> = Arc::new(FnTransport(move |_: &str, r: &ChatRequest| {
        let now = f.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(5));
        f.fetch_sub(1, Ordering::SeqCst);
        Ok(WireResponse {
            completions: vec![r.messages[0].content.clone()],
            usage: Usage::default(),
        })
    }));
    let client = Arc::new(LlmClient::new("m", t).with_concurrency(3));
    std::thread::scope(|s| {
        for i in 0..6 {
            let c = client.clone();
            s.spawn(move || {
                let out = c
                    .sample_group(&[Message::user(format!("q{i}"))], 5, &SamplingOverrides::default())
                    .unwrap();
                assert_eq!(out, vec![format!("q{i}"); 5]);
            });
        }
    });
    let peak = peak.load(Ordering::SeqCst);
    assert!(peak <= 3, "peak in-flight {peak}");
    assert!(peak >= 2, "expected overlap, peak {peak}");
}

#[test]
fn cassette_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let t: Arc<dyn Transport> = Arc::new(FnTransport(|_: &str, r: &ChatRequest| {
        Ok(WireResponse {
            completions: vec![format!("re:{}", r.messages[0].content)],
            usage: Usage::default(),
        })
    }));
    let rec = LlmClient::new("m", t).with_cassette(Arc::new(Cassette::open(&path, CassetteMode::Record).unwrap()));
    let first = rec.sample_group(&[Message::user("x")], 1, &SamplingOverrides::default()).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let dead: Arc<dyn Transport> = Arc::new(FnTransport(|_: &str, _: &ChatRequest| unreachable!("no network in replay")));
    let rep = LlmClient::new("m", dead).with_cassette(Arc::new(Cassette::open(&path, CassetteMode::Replay).unwrap()));
    assert_eq!(rep.sample_group(&[Message::user("x")], 1, &SamplingOverrides::default()).unwrap(), first);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(Cassette::open(&dir.path().join("missing"), CassetteMode::Replay).is_err());
}
