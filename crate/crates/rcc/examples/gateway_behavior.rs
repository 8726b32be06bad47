//! What the completion gateway does around a request.
//!
//! Run with `cargo run --example gateway_behavior`. The gateway owns the
//! three concerns every caller would otherwise duplicate: template
//! rendering, retry with exponential backoff on transient failures, and a
//! fair cap on in-flight requests. The mock backend scripts failures to
//! make the behavior visible offline.

use rcc::gateway::{Client, CompletionRequest, MockBehavior};
use rcc::Result;

fn main() -> Result<()> {
    // Requests are named templates plus variables — callers never
    // concatenate prompt strings.
    let client = Client::mock(vec![MockBehavior::Auto])?;
    let request = CompletionRequest::new("judge")
        .var("predicted", "A cat sits on a mat.")
        .var("reference", "Two cats sit on the mat, then one leaves.")
        .deterministic(); // judging wants temperature 0
    println!("judge reply: {:?}", client.complete(&request)?);

    // A transient failure (connection trouble, 429, 5xx) is retried with
    // exponential backoff; the call below succeeds on attempt three.
    let (client, backend) = Client::mock_with_handle(vec![
        MockBehavior::FailTransport,
        MockBehavior::Fail { status: 503 },
        MockBehavior::Auto,
    ])?;
    let reply = client.complete(&request)?;
    println!("after two transient failures ({} attempts): {reply:?}", backend.calls());

    // A permanent failure (plain 4xx) is not worth retrying: one attempt,
    // immediate error.
    let (client, backend) = Client::mock_with_handle(vec![
        MockBehavior::Fail { status: 400 },
        MockBehavior::Auto,
    ])?;
    let error = client.complete(&request).expect_err("400 is permanent");
    println!("\npermanent failure after {} attempt(s): {error}", backend.calls());

    // The in-flight gate is fair (FIFO) and capped by configuration; the
    // backend records the highest concurrency it ever saw.
    let (client, backend) =
        Client::mock_with_handle(vec![MockBehavior::Delay { ms: 5 }])?;
    std::thread::scope(|scope| {
        for _ in 0..12 {
            let client = &client;
            let request = &request;
            scope.spawn(move || client.complete(request).expect("mock reply"));
        }
    });
    println!(
        "\n12 threads, {} requests, peak in-flight {} (configured cap {})",
        backend.calls(),
        backend.max_in_flight_seen(),
        4
    );
    Ok(())
}
