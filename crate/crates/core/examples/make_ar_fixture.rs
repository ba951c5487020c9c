//! Writes the seeded synthetic price series used by the acceptance suite.
//!
//! log close = log(base) + drift * t + d_t, with d_t an AR(1) deviation driven by Gaussian
//! shocks. Open/high/low are derived from neighbouring closes so every bar is valid.
//!
//! Usage: cargo run -p indtrend --example make_ar_fixture -- [out.csv] [seed] [drift] [phi] [sigma]
//!
//! Defaults reproduce `tests/fixtures/ar_fixture.csv`. The industry members were written with
//! `ALPHA 11 0.002 0.9 0.006`, `BETA 12 0.0025 0.85 0.006` and `GAMMA 13 0.0015 0.9 0.005`.

use std::fmt::Write as _;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).cloned().unwrap_or_else(|| "crates/core/tests/fixtures/ar_fixture.csv".into());
    let seed: u64 = args.get(2).map_or(20240301, |s| s.parse().unwrap());
    let drift: f64 = args.get(3).map_or(0.003, |s| s.parse().unwrap());
    let phi: f64 = args.get(4).map_or(0.9, |s| s.parse().unwrap());
    let sigma: f64 = args.get(5).map_or(0.005, |s| s.parse().unwrap());
    let rows = 400usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("date,open,high,low,close,volume\n");
    let mut date = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
    let mut dev = 0.0;
    let mut prev_close = 100.0f64;
    for t in 0..rows {
        dev = phi * dev + sigma * gaussian(&mut rng);
        let close = (100.0f64).ln() + drift * t as f64 + dev;
        let close = close.exp();
        let open = prev_close;
        let high = open.max(close) * (1.0 + 0.002 * rng.gen::<f64>());
        let low = open.min(close) * (1.0 - 0.002 * rng.gen::<f64>());
        let volume = (1e6 * (1.0 + 0.3 * gaussian(&mut rng)).abs()).round();
        let _ = writeln!(text, "{},{open:.4},{high:.4},{low:.4},{close:.4},{volume}", date.format("%Y-%m-%d"));
        prev_close = (close * 1e4).round() / 1e4;
        date = date.succ_opt().unwrap();
        while matches!(date.format("%a").to_string().as_str(), "Sat" | "Sun") {
            date = date.succ_opt().unwrap();
        }
    }
    std::fs::write(&out, text).expect("write fixture");
    eprintln!("wrote {rows} rows to {out}");
}
