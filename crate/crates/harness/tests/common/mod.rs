#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub fn recipes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/recipes").canonicalize().unwrap()
}

/// Writes `text` as a config in `dir`, with `{recipes}` replaced by the
/// shipped recipe directory.
pub fn write_config(dir: &Path, file: &str, text: &str) -> PathBuf {
    let p = dir.join(file);
    std::fs::write(&p, text.replace("{recipes}", &recipes().to_string_lossy())).unwrap();
    p
}

/// A small polarization setup: 12 agents, one day.
pub const SMALL_POLARIZATION: &str = r#"
name = "small-polarization"
seed = 3
pois = "{recipes}/data/pois.csv"

[horizon]
days = 1
tick_minutes = 120

[population]
size = 12
cbg_file = "{recipes}/data/cbg.csv"

[network]
mean_degree = 3

[topic]
name = "gun control"
initial = [3, 7]

[[groups]]
id = "control"
size = 4

[[groups]]
id = "homophilic"
size = 4
interventions = [{ kind = "information_control", mode = "homophilic", injection_per_day = 1 }]

[[groups]]
id = "heterogeneous"
size = 4
interventions = [{ kind = "information_control", mode = "heterogeneous", injection_per_day = 1 }]

[[instruments]]
kind = "survey"
survey = "thermometer"
at = ["start", "end"]

[backend]
rules = "{recipes}/rules/polarization.rules"
"#;

/// A small monthly economy: 6 agents, three months.
pub const SMALL_UBI: &str = r#"
name = "small-ubi"
seed = 5

[horizon]
months = 3

[population]
size = 6
cbg_file = "{recipes}/data/cbg.csv"

[economy]

[[groups]]
id = "control"
size = 3

[[groups]]
id = "treatment"
size = 3
interventions = [{ kind = "status_modification", field = "ubi", op = "set", amount = 1000 }]

[[instruments]]
kind = "survey"
survey = "cesd"
at = ["month:3"]

[[instruments]]
kind = "interview"
at = "end"
group = "treatment"
count = 2
questions = ["What do you think of the monthly payment?"]

[backend]
rules = "{recipes}/rules/ubi.rules"
"#;

fn answer(prompt: &str, n: usize) -> String {
    if prompt.contains("A researcher is interviewing you") {
        return "It helps with groceries and rent.".into();
    }
    let items: Vec<&str> = prompt
        .lines()
        .filter_map(|l| {
            let t = l.trim_start();
            let (q, rest) = t.split_once('.')?;
            (q.starts_with('q') && q[1..].chars().all(|c| c.is_ascii_digit()) && !rest.is_empty()).then_some(q)
        })
        .collect();
    if !items.is_empty() {
        let body: Vec<String> = items.iter().enumerate().map(|(i, q)| format!("\"{q}\": {}", (i + n) % 4)).collect();
        return format!("{{{}}}", body.join(", "));
    }
    if prompt.contains("willingness to work") {
        return format!("{{\"work\": 0.6, \"consumption\": 0.{}}}", 20 + n % 10);
    }
    "I am not sure.".into()
}

/// A minimal OpenAI-style chat-completions server. Returns its base URL and
/// a request counter.
pub fn fake_llm() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let count = Arc::new(AtomicUsize::new(0));
    let c = count.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let c = c.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut writer = stream;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let mut len = 0usize;
                    loop {
                        let mut h = String::new();
                        if reader.read_line(&mut h).unwrap_or(0) == 0 {
                            return;
                        }
                        if h.trim().is_empty() {
                            break;
                        }
                        if let Some((k, v)) = h.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let prompt = req["messages"][0]["content"].as_str().unwrap_or("");
                    let n = c.fetch_add(1, Ordering::SeqCst);
                    let text = answer(prompt, n);
                    let resp = serde_json::json!({
                        "choices": [{ "message": { "role": "assistant", "content": text } }],
                        "usage": { "prompt_tokens": prompt.len() / 4, "completion_tokens": text.len() / 4 },
                    })
                    .to_string();
                    let head = format!("HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n", resp.len());
                    if writer.write_all(head.as_bytes()).and_then(|_| writer.write_all(resp.as_bytes())).is_err() {
                        return;
                    }
                }
            });
        }
    });
    (url, count)
}

pub fn sha_of_dir(dir: &Path) -> Vec<(String, u64, u64)> {
    use std::hash::{DefaultHasher, Hash, Hasher};
    socpilot_harness::cli::artifact_paths(dir)
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            let mut h = DefaultHasher::new();
            bytes.hash(&mut h);
            (p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), bytes.len() as u64, h.finish())
        })
        .collect()
}
