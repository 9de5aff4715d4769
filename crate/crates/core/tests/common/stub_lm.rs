//! A tiny HTTP endpoint speaking the top-k scoring protocol, backed by a
//! fixed deterministic model.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

/// Log-probabilities in nats over `vocab_size` ids after `last`.
pub fn model_logprobs(last: u32, vocab_size: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..vocab_size as u32)
        .map(|j| ((j * 7 + last * 3) % 11) as f64 * 0.4)
        .collect();
    super::normalize(&logits)
}

pub struct Stub {
    pub url: String,
    /// Raw request heads, one per request.
    pub heads: Arc<Mutex<Vec<String>>>,
}

/// Serves until the process exits. `log_base` is the base the endpoint
/// reports logarithms in; `short_by` drops that many distributions from
/// every response.
pub fn spawn(vocab_size: usize, log_base: f64, short_by: usize) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/score", listener.local_addr().unwrap());
    let heads = Arc::new(Mutex::new(Vec::new()));
    let seen = heads.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            seen.lock().unwrap().push(head);
            let req: Value = serde_json::from_slice(&body).unwrap();
            let top_k = req["top_k"].as_u64().unwrap() as usize;
            let tokens: Vec<u32> = req["tokens"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| t.as_u64().unwrap() as u32)
                .collect();
            let scale = log_base.ln();
            let dists: Vec<Value> = tokens
                .iter()
                .take(tokens.len().saturating_sub(short_by))
                .map(|&t| {
                    let lp = model_logprobs(t, vocab_size);
                    let mut order: Vec<u32> = (0..vocab_size as u32).collect();
                    order.sort_by(|&a, &b| lp[b as usize].total_cmp(&lp[a as usize]).then(a.cmp(&b)));
                    order.truncate(top_k);
                    let listed: f64 = order.iter().map(|&i| lp[i as usize].exp()).sum();
                    let entries: Vec<Value> = order.iter().map(|&i| json!([i, lp[i as usize] / scale])).collect();
                    let tail = if listed < 1.0 { json!((1.0 - listed).ln() / scale) } else { Value::Null };
                    json!({ "entries": entries, "tail_logprob": tail })
                })
                .collect();
            let body = json!({ "distributions": dists }).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    Stub { url, heads }
}
