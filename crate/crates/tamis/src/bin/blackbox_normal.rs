//! JSON-lines density server: an iid normal log-density behind the
//! subprocess protocol, with optional fault injection for tests.
//!
//! Flags:
//!   --mean M          per-coordinate mean (default 0)
//!   --variance V      per-coordinate variance (default 1)
//!   --die-after N     exit(3) instead of answering the (N+1)-th request
//!   --garble-after N  answer the (N+1)-th and later requests with non-JSON
//!   --hang-after N    go silent instead of answering the (N+1)-th request

use std::io::{BufRead, Write};

use tamis::math::LN_2PI;

struct Opts {
    mean: f64,
    variance: f64,
    die_after: Option<u64>,
    garble_after: Option<u64>,
    hang_after: Option<u64>,
}

fn parse_opts() -> Opts {
    let mut opts = Opts {
        mean: 0.0,
        variance: 1.0,
        die_after: None,
        garble_after: None,
        hang_after: None,
    };
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let value = match args.next() {
            Some(v) => v,
            None => usage_error(&format!("flag {flag} needs a value")),
        };
        match flag.as_str() {
            "--mean" => opts.mean = parse_f64(&flag, &value),
            "--variance" => opts.variance = parse_f64(&flag, &value),
            "--die-after" => opts.die_after = Some(parse_u64(&flag, &value)),
            "--garble-after" => opts.garble_after = Some(parse_u64(&flag, &value)),
            "--hang-after" => opts.hang_after = Some(parse_u64(&flag, &value)),
            other => usage_error(&format!("unknown flag {other}")),
        }
    }
    if !opts.variance.is_finite() || opts.variance <= 0.0 {
        usage_error("--variance must be positive");
    }
    opts
}

fn parse_f64(flag: &str, value: &str) -> f64 {
    value
        .parse()
        .unwrap_or_else(|_| usage_error(&format!("bad value for {flag}: {value}")))
}

fn parse_u64(flag: &str, value: &str) -> u64 {
    value
        .parse()
        .unwrap_or_else(|_| usage_error(&format!("bad value for {flag}: {value}")))
}

fn usage_error(msg: &str) -> ! {
    eprintln!("blackbox-normal: {msg}");
    std::process::exit(2);
}

fn protocol_error(msg: &str) -> ! {
    eprintln!("blackbox-normal: protocol error: {msg}");
    std::process::exit(2);
}

fn main() {
    let opts = parse_opts();
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    let mut dim: Option<usize> = None;
    let mut answered: u64 = 0;

    for line in stdin.lock().lines() {
        let line = line.expect("read stdin");
        if line.trim().is_empty() {
            continue;
        }
        let msg: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => protocol_error(&format!("unparsable request {line:?}: {e}")),
        };
        if let Some(hello) = msg.get("hello") {
            let d = hello
                .get("dim")
                .and_then(serde_json::Value::as_u64)
                .unwrap_or_else(|| protocol_error("hello without a dim"));
            dim = Some(d as usize);
            writeln!(out, "{{\"hello\":{{\"dim\":{d}}}}}").expect("write stdout");
            out.flush().expect("flush stdout");
        } else if let Some(x) = msg.get("x") {
            let d = dim.unwrap_or_else(|| protocol_error("density request before hello"));
            let xs: Vec<f64> = x
                .as_array()
                .unwrap_or_else(|| protocol_error("x is not an array"))
                .iter()
                .map(|v| {
                    v.as_f64()
                        .unwrap_or_else(|| protocol_error("x entry is not a number"))
                })
                .collect();
            if xs.len() != d {
                protocol_error(&format!("x has {} entries, expected {d}", xs.len()));
            }
            if opts.die_after == Some(answered) {
                std::process::exit(3);
            }
            if opts.hang_after == Some(answered) {
                loop {
                    std::thread::sleep(std::time::Duration::from_secs(3600));
                }
            }
            if matches!(opts.garble_after, Some(g) if answered >= g) {
                writeln!(out, "this is not json").expect("write stdout");
                out.flush().expect("flush stdout");
                answered += 1;
                continue;
            }
            let logpi: f64 = xs
                .iter()
                .map(|xi| {
                    let diff = xi - opts.mean;
                    -0.5 * (LN_2PI + opts.variance.ln() + diff * diff / opts.variance)
                })
                .sum();
            writeln!(out, "{{\"logpi\":{logpi}}}").expect("write stdout");
            out.flush().expect("flush stdout");
            answered += 1;
        } else {
            protocol_error(&format!("unrecognized request {line:?}"));
        }
    }
}
