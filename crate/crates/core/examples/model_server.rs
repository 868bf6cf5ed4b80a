//! Evaluating a model that lives behind the line-delimited JSON protocol.

use std::io::BufReader;
use std::os::unix::net::UnixStream;
use std::sync::Arc;
use std::thread;

use naopc::server::stub::{serve, Handler, StubOptions};
use naopc::server::{ClientOptions, ServerClient};
use naopc::{beam_limits, EvalCache, Instance, Payload};

pub fn run_example() -> naopc::Result<()> {
    // a server whose output falls by the weight of each removed feature
    let handler: Arc<Handler> = Arc::new(|_id: &str, removed: &[usize]| {
        Ok(1.0 - removed.iter().map(|&i| i as f64 / 15.0).sum::<f64>())
    });
    let (client_end, server_end) = UnixStream::pair()?;
    thread::spawn(move || {
        let reader = BufReader::new(server_end.try_clone()?);
        let options = StubOptions {
            shuffle_seed: Some(1),
            ..StubOptions::default()
        };
        serve(reader, server_end, handler, options)
    });
    let client = ServerClient::new(client_end.try_clone()?, client_end, ClientOptions::default())?;
    println!("server capabilities: {:?}", client.capabilities());

    let x = Instance::new("remote", 5, Payload::None)?;
    let cache = EvalCache::new();
    let limits = beam_limits(&client, &x, 4, &cache)?;
    println!(
        "limits [{:.4}, {:.4}] from {} evaluations",
        limits.lower,
        limits.upper,
        cache.len()
    );
    assert_eq!(limits.arg_upper.to_one_based(), vec![5, 4, 3, 2, 1]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> naopc::Result<()> {
    run_example()
}
