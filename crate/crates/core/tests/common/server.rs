//! A chat-completions endpoint on a local port that answers every stage the
//! way a cooperative model would, and records what it was sent.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

/// A request seen by [`serve`]: lower-cased headers and the JSON body.
#[derive(Debug, Clone)]
pub struct Seen {
    pub headers: BTreeMap<String, String>,
    pub body: Value,
}

fn knowledge_features(user: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in user.lines() {
        let Some((head, _)) = line.split_once(": ") else { continue };
        let Some((rank, name)) = head.split_once(". ") else { continue };
        if rank.parse::<usize>().is_ok() && !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    }
    out
}

fn table_classes(user: &str) -> Vec<String> {
    user.lines()
        .filter(|l| l.starts_with('|'))
        .filter_map(|l| l.split('|').nth(1).map(|c| c.trim().to_string()))
        .filter(|c| !c.is_empty() && c != "Activity" && c != "QUERY" && !c.starts_with("---"))
        .collect()
}

/// Answers each stage the way a cooperative model would.
fn reply(system: &str, user: &str) -> String {
    if system.contains("most probable activity class") {
        let class = table_classes(user).into_iter().next().unwrap_or_default();
        format!("```json\n{}\n```", json!({"reason": "first row", "predicted_class": class}))
    } else if system.contains("| Index | Feature Name | Definition |") {
        let rows: Vec<String> = knowledge_features(user)
            .iter()
            .take(3)
            .enumerate()
            .map(|(i, f)| format!("| {} | {f} | a statistic | separates the pairs |", i + 1))
            .collect();
        format!("| Index | Feature Name | Definition | Discriminative Power |\n|---|---|---|---|\n{}", rows.join("\n"))
    } else if system.contains("| Index | Feature Name |") {
        let rows: Vec<String> = knowledge_features(user)
            .iter()
            .take(4)
            .enumerate()
            .map(|(i, f)| format!("| {} | {f} |", i + 1))
            .collect();
        format!("| Index | Feature Name |\n|---|---|\n{}", rows.join("\n"))
    } else {
        let rows: Vec<String> = table_classes(user)
            .iter()
            .enumerate()
            .map(|(i, c)| format!("| {} | {c} | close enough |", i + 1))
            .collect();
        format!("| Index | Activity | Reason |\n|---|---|---|\n{}", rows.join("\n"))
    }
}

/// Serves chat completions on a local port until the process exits.
pub fn serve() -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = BTreeMap::new();
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                }
            }
            let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap();
            let system = body["messages"][0]["content"].as_str().unwrap_or_default();
            let user = body["messages"][1]["content"].as_str().unwrap_or_default();
            let content = reply(system, user);
            log.lock().unwrap().push(Seen { headers, body: body.clone() });
            let payload = json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

