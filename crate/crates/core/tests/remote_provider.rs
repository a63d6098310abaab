use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use recurscan::code::{extract_functions, CodeConfig};
use recurscan::embed::{
    embed_variable_masked, encode, EmbeddingProvider, MaskContext, ReferenceEmbedder, RemoteConfig, RemoteProvider,
};
use recurscan::Error;
use serde_json::{json, Value};

#[derive(Clone, Copy)]
enum Mode {
    Ok,
    /// Answer 503 to the first n encode calls.
    FailFirst(usize),
    AlwaysFail,
    WrongCount,
    WrongDim,
    BadRequest,
}

struct Mock {
    url: String,
    encode_calls: Arc<AtomicUsize>,
    peak_in_flight: Arc<AtomicUsize>,
    last_request: Arc<Mutex<Value>>,
}

fn read_request(stream: &mut TcpStream) -> (String, Vec<u8>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h == "\r\n" || h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (path, body)
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let msg = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(msg.as_bytes());
}

fn spawn(mode: Mode, dim: usize, max_tokens: usize) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let encode_calls = Arc::new(AtomicUsize::new(0));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let last = Arc::new(Mutex::new(Value::Null));
    let embedder = Arc::new(ReferenceEmbedder::new(dim, max_tokens));
    let (calls, peak2, last2) = (encode_calls.clone(), peak.clone(), last.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (calls, in_flight, peak, last, embedder) = (
                calls.clone(),
                in_flight.clone(),
                peak2.clone(),
                last2.clone(),
                embedder.clone(),
            );
            thread::spawn(move || {
                let (path, body) = read_request(&mut stream);
                if path == "/info" {
                    let info = embedder.info();
                    respond(&mut stream, "200 OK", &serde_json::to_string(info).unwrap());
                    return;
                }
                let n = calls.fetch_add(1, Ordering::SeqCst);
                let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(20));
                let req: Value = serde_json::from_slice(&body).unwrap();
                *last.lock().unwrap() = req.clone();
                let tokens: Vec<String> = serde_json::from_value(req["tokens"].clone()).unwrap();
                let masks: Vec<usize> = serde_json::from_value(req["mask_positions"].clone()).unwrap();
                let mut vectors = embedder.encode_raw(&tokens, &masks).unwrap();
                let mut d = dim;
                let status = match mode {
                    Mode::FailFirst(k) if n < k => "503 Service Unavailable",
                    Mode::AlwaysFail => "503 Service Unavailable",
                    Mode::BadRequest => "400 Bad Request",
                    Mode::WrongCount => {
                        vectors.pop();
                        "200 OK"
                    }
                    Mode::WrongDim => {
                        d += 1;
                        "200 OK"
                    }
                    _ => "200 OK",
                };
                in_flight.fetch_sub(1, Ordering::SeqCst);
                respond(&mut stream, status, &json!({"dim": d, "vectors": vectors}).to_string());
            });
        }
    });
    Mock {
        url,
        encode_calls,
        peak_in_flight: peak,
        last_request: last,
    }
}

fn config(url: &str) -> RemoteConfig {
    let mut c = RemoteConfig::new(url);
    c.backoff = Duration::from_millis(5);
    c.timeout = Duration::from_secs(10);
    c
}

fn toks(s: &str) -> Vec<String> {
    s.split(' ').map(String::from).collect()
}

#[test]
fn remote_vectors_match_local_reference() {
    let mock = spawn(Mode::Ok, 64, 32);
    let remote = RemoteProvider::connect(config(&mock.url)).unwrap();
    assert_eq!(remote.info().name, "reference");
    assert_eq!(remote.info().dim, 64);
    let local = ReferenceEmbedder::new(64, 32);

    let t = toks("kfree ( client_dev ) ;");
    assert_eq!(encode(&remote, &t).unwrap(), encode(&local, &t).unwrap());

    let f = extract_functions(
        "void f(struct bus *bus) { err = device_register(&bus->dev); use(err); }",
        "t.c",
        &CodeConfig::default(),
    )
    .functions
    .remove(0);
    let s = &f.statements[0];
    let occ = s.occurrences.iter().find(|o| o.key == "bus->dev").unwrap();
    let r = embed_variable_masked(&remote, &f, s, occ, MaskContext::Statement).unwrap();
    let l = embed_variable_masked(&local, &f, s, occ, MaskContext::Statement).unwrap();
    assert_eq!(r, l);

    let req = mock.last_request.lock().unwrap().clone();
    assert_eq!(req["mask_positions"], json!([5]));
    assert_eq!(req["tokens"][5], "[MASK]");
}

#[test]
fn long_input_is_truncated_before_sending() {
    let mock = spawn(Mode::Ok, 8, 16);
    let remote = RemoteProvider::connect(config(&mock.url)).unwrap();
    let long: Vec<String> = (0..40).map(|i| format!("t{i}")).collect();
    assert_eq!(encode(&remote, &long).unwrap().len(), 16);
    assert_eq!(
        mock.last_request.lock().unwrap()["tokens"].as_array().unwrap().len(),
        16
    );
}

#[test]
fn transient_failures_are_retried() {
    let mock = spawn(Mode::FailFirst(2), 8, 16);
    let remote = RemoteProvider::connect(config(&mock.url)).unwrap();
    assert_eq!(encode(&remote, &toks("a b")).unwrap().len(), 2);
    assert_eq!(mock.encode_calls.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_three_retries() {
    let mock = spawn(Mode::AlwaysFail, 8, 16);
    let remote = RemoteProvider::connect(config(&mock.url)).unwrap();
    let err = encode(&remote, &toks("a b")).unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable(_)), "{err}");
    assert_eq!(mock.encode_calls.load(Ordering::SeqCst), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let mock = spawn(Mode::BadRequest, 8, 16);
    let remote = RemoteProvider::connect(config(&mock.url)).unwrap();
    assert!(matches!(encode(&remote, &toks("a")), Err(Error::ProviderProtocol(_))));
    assert_eq!(mock.encode_calls.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_answers_are_rejected() {
    let mock = spawn(Mode::WrongCount, 8, 16);
    let remote = RemoteProvider::connect(config(&mock.url)).unwrap();
    assert!(matches!(
        encode(&remote, &toks("a b c")),
        Err(Error::ProviderProtocol(_))
    ));

    let mock = spawn(Mode::WrongDim, 8, 16);
    let remote = RemoteProvider::connect(config(&mock.url)).unwrap();
    assert!(matches!(encode(&remote, &toks("a b c")), Err(Error::DimMismatch(8, 9))));
}

#[test]
fn unreachable_service() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let mut c = config(&url);
    c.retries = 1;
    assert!(matches!(RemoteProvider::connect(c), Err(Error::ProviderUnavailable(_))));
}

#[test]
fn in_flight_requests_are_capped() {
    let mock = spawn(Mode::Ok, 8, 16);
    let mut c = config(&mock.url);
    c.max_in_flight = 2;
    let remote = Arc::new(RemoteProvider::connect(c).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let remote = remote.clone();
            thread::spawn(move || encode(remote.as_ref(), &toks(&format!("a{i} b"))).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap().len(), 2);
    }
    assert_eq!(mock.encode_calls.load(Ordering::SeqCst), 8);
    assert!(mock.peak_in_flight.load(Ordering::SeqCst) <= 2);
}
