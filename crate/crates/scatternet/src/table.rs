//! Plain-text summaries.

use std::fmt::Write;

use scatternet_core::{AggregateReport, Improvement};

use crate::harness::SweepRow;

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.0}%", x * 100.0))
}

pub fn report_table(label: &str, reports: &[&AggregateReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{label}");
    let _ = writeln!(
        s,
        "{:<10} {:>8} {:>8} {:>7} {:>7} {:>6} {:>9} {:>6} {:>7} {:>7}",
        "algo",
        "mu_d",
        "sigma_d",
        "mu_PDR",
        "sd_PDR",
        "%Sat",
        "avoidSat",
        "hops",
        "joined",
        "failed"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8} {:>7.3} {:>7.3} {:>6} {:>9} {:>6.2} {:>7} {:>7}",
            r.algo.name(),
            opt(r.mu_d_ms, 1),
            opt(r.sigma_d_ms, 1),
            r.mu_pdr,
            r.sigma_pdr,
            pct(Some(r.pct_sat)),
            pct(r.avoid_sat),
            r.mean_hops,
            r.n_joined,
            r.n_failed,
        );
    }
    s
}

pub fn improvement_line(g: &Improvement) -> String {
    format!(
        "delay gain {}  PDR gain {:.1}%  saturation reduction {:.1} pp",
        g.delay_gain
            .map_or_else(|| "-".to_string(), |d| format!("{:.1}%", d * 100.0)),
        g.pdr_gain * 100.0,
        g.sat_reduction_pp,
    )
}

pub fn sweep_table(baseline: &AggregateReport, rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "baseline: mu_d {} ms  mu_PDR {:.3}",
        opt(baseline.mu_d_ms, 1),
        baseline.mu_pdr
    );
    let _ = writeln!(
        s,
        "{:<36} {:>8} {:>8} {:>7} {:>6} {:>8} {:>8}",
        "w_m,w_h,w_b,w_ci,w_rl,w_rn", "mu_d", "sigma_d", "mu_PDR", "%Sat", "d_gain", "pdr_gain"
    );
    for r in rows {
        let w = format!(
            "{},{},{},{},{},{}",
            r.w_m, r.w_h, r.w_b, r.w_ci, r.w_rl, r.w_rn
        );
        let _ = writeln!(
            s,
            "{:<36} {:>8} {:>8} {:>7.3} {:>6} {:>8} {:>7.1}%",
            w,
            opt(r.mu_d_ms, 1),
            opt(r.sigma_d_ms, 1),
            r.mu_pdr,
            pct(Some(r.pct_sat)),
            pct(r.delay_gain),
            r.pdr_gain * 100.0
        );
    }
    s
}
