//! Profiler-style report derived from raw counters, speedups, and CSV/JSON
//! serialization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{GpuConfig, RawCounters};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub kernel_time_us: f64,
    pub load_insts_millions: f64,
    /// Issue-slot utilization in percent.
    pub sm_throughput_pct: f64,
    pub warp_cycles_per_executed_inst: f64,
    /// Long-scoreboard stall cycles per executed instruction.
    pub long_scoreboard_stall_cycles: f64,
    pub issued_warp_per_scheduler_per_cycle: f64,
    pub l1_hit_pct: f64,
    pub l2_hit_pct: f64,
    pub device_mb_read: f64,
    pub avg_hbm_read_gbps: f64,
    pub hbm_bw_utilization_pct: f64,
    pub local_loads_millions: f64,
}

impl SimMetrics {
    pub const FIELDS: [&'static str; 12] = [
        "kernel_time_us",
        "load_insts_millions",
        "sm_throughput_pct",
        "warp_cycles_per_executed_inst",
        "long_scoreboard_stall_cycles",
        "issued_warp_per_scheduler_per_cycle",
        "l1_hit_pct",
        "l2_hit_pct",
        "device_mb_read",
        "avg_hbm_read_gbps",
        "hbm_bw_utilization_pct",
        "local_loads_millions",
    ];

    pub fn values(&self) -> [f64; 12] {
        [
            self.kernel_time_us,
            self.load_insts_millions,
            self.sm_throughput_pct,
            self.warp_cycles_per_executed_inst,
            self.long_scoreboard_stall_cycles,
            self.issued_warp_per_scheduler_per_cycle,
            self.l1_hit_pct,
            self.l2_hit_pct,
            self.device_mb_read,
            self.avg_hbm_read_gbps,
            self.hbm_bw_utilization_pct,
            self.local_loads_millions,
        ]
    }

    pub fn from_values(v: [f64; 12]) -> Self {
        SimMetrics {
            kernel_time_us: v[0],
            load_insts_millions: v[1],
            sm_throughput_pct: v[2],
            warp_cycles_per_executed_inst: v[3],
            long_scoreboard_stall_cycles: v[4],
            issued_warp_per_scheduler_per_cycle: v[5],
            l1_hit_pct: v[6],
            l2_hit_pct: v[7],
            device_mb_read: v[8],
            avg_hbm_read_gbps: v[9],
            hbm_bw_utilization_pct: v[10],
            local_loads_millions: v[11],
        }
    }
}

/// Achieved read bandwidth in GB/s and its share of the device peak.
pub fn bandwidth(device_bytes: f64, time_us: f64, peak_bytes_per_sec: f64) -> (f64, f64) {
    if time_us <= 0.0 {
        return (0.0, 0.0);
    }
    let gbps = device_bytes / (time_us * 1e-6) / 1e9;
    (gbps, gbps * 1e9 / peak_bytes_per_sec * 100.0)
}

pub fn derive_report(raw: &RawCounters, gpu: &GpuConfig) -> Result<SimMetrics> {
    if raw.cycles == 0 && raw.issued_instructions == 0 {
        return Err(Error::EmptyKernel("no cycles and no instructions".into()));
    }
    let issued = raw.issued_instructions as f64;
    let per_inst = |x: u64| if issued > 0.0 { x as f64 / issued } else { 0.0 };
    let slots = raw.cycles as f64 * raw.scheduler_count() as f64;
    let util = if slots > 0.0 { issued / slots } else { 0.0 };
    let time_us = raw.cycles as f64 / gpu.sm_clock_hz * 1e6;
    let (gbps, bw_pct) = bandwidth(
        raw.device_bytes_read as f64,
        time_us,
        gpu.hbm_peak_bytes_per_sec,
    );
    Ok(SimMetrics {
        kernel_time_us: time_us,
        load_insts_millions: raw.executed_loads as f64 / 1e6,
        sm_throughput_pct: util * 100.0,
        warp_cycles_per_executed_inst: per_inst(raw.warp_active_cycles),
        long_scoreboard_stall_cycles: per_inst(raw.stall_cycles_by_reason.long_scoreboard),
        issued_warp_per_scheduler_per_cycle: util,
        l1_hit_pct: raw.l1.hit_pct(),
        l2_hit_pct: raw.l2.hit_pct(),
        device_mb_read: raw.device_bytes_read as f64 / 1e6,
        avg_hbm_read_gbps: gbps,
        hbm_bw_utilization_pct: bw_pct,
        local_loads_millions: raw.local_memory_loads as f64 / 1e6,
    })
}

/// One row of output: a report tied to the workload it measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub label: String,
    pub dataset: String,
    pub trace_digest: String,
    #[serde(default)]
    pub axis_value: Option<u32>,
    #[serde(default)]
    pub speedup: Option<f64>,
    pub metrics: SimMetrics,
}

impl Report {
    pub fn new(
        label: impl Into<String>,
        dataset: impl Into<String>,
        trace_digest: impl Into<String>,
        metrics: SimMetrics,
    ) -> Self {
        Report {
            label: label.into(),
            dataset: dataset.into(),
            trace_digest: trace_digest.into(),
            axis_value: None,
            speedup: None,
            metrics,
        }
    }
}

/// `baseline_time / candidate_time`, refusing reports of different workloads.
pub fn speedup(candidate: &Report, baseline: &Report) -> Result<f64> {
    if candidate.trace_digest != baseline.trace_digest {
        return Err(Error::WorkloadMismatch(format!(
            "{} ({}) vs {} ({})",
            candidate.dataset, candidate.trace_digest, baseline.dataset, baseline.trace_digest
        )));
    }
    if candidate.metrics.kernel_time_us <= 0.0 {
        return Err(Error::InvalidArgument(
            "candidate kernel time is zero".into(),
        ));
    }
    Ok(baseline.metrics.kernel_time_us / candidate.metrics.kernel_time_us)
}

/// Formats with four significant digits.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() {
            "0".into()
        } else {
            x.to_string()
        };
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (3 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s == "-0"
        || s.trim_start_matches('-')
            .chars()
            .all(|c| c == '0' || c == '.')
    {
        "0".into()
    } else {
        s
    }
}

fn round4(x: f64) -> f64 {
    sig4(x).parse().unwrap_or(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format '{s}'"))),
        }
    }
}

pub const ID_COLUMNS: [&str; 5] = ["label", "dataset", "trace_digest", "axis_value", "speedup"];

pub fn emit(reports: &[Report], format: Format, out: impl Write) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to emit".into()));
    }
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(ID_COLUMNS.iter().chain(SimMetrics::FIELDS.iter()))?;
            for r in reports {
                let mut rec = vec![
                    r.label.clone(),
                    r.dataset.clone(),
                    r.trace_digest.clone(),
                    r.axis_value.map_or(String::new(), |v| v.to_string()),
                    r.speedup.map_or(String::new(), sig4),
                ];
                rec.extend(r.metrics.values().iter().map(|&v| sig4(v)));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let rounded: Vec<Report> = reports
                .iter()
                .map(|r| Report {
                    speedup: r.speedup.map(round4),
                    metrics: SimMetrics::from_values(r.metrics.values().map(round4)),
                    ..r.clone()
                })
                .collect();
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &rounded)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn parse_json(text: &str) -> Result<Vec<Report>> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::{LevelCounters, StallBreakdown};

    fn raw() -> RawCounters {
        RawCounters {
            cycles: 1_000,
            issued_instructions: 800,
            executed_loads: 300,
            stall_cycles_by_reason: StallBreakdown {
                long_scoreboard: 1600,
                ..Default::default()
            },
            l1: LevelCounters { hits: 3, misses: 1 },
            l2: LevelCounters { hits: 0, misses: 1 },
            device_bytes_read: 128,
            local_memory_loads: 0,
            warp_active_cycles: 4000,
            active_sms: 1,
            schedulers_per_sm: 4,
            ..Default::default()
        }
    }

    #[test]
    fn derived_values() {
        let m = derive_report(&raw(), &GpuConfig::a100()).unwrap();
        assert!((m.issued_warp_per_scheduler_per_cycle - 0.2).abs() < 1e-12);
        assert!((m.sm_throughput_pct - 20.0).abs() < 1e-9);
        assert_eq!(m.long_scoreboard_stall_cycles, 2.0);
        assert_eq!(m.warp_cycles_per_executed_inst, 5.0);
        assert_eq!(m.l1_hit_pct, 75.0);
        assert!((m.device_mb_read - 128e-6).abs() < 1e-15);
    }

    #[test]
    fn zero_issue_is_zero_utilization() {
        let r = RawCounters {
            issued_instructions: 0,
            ..raw()
        };
        let m = derive_report(&r, &GpuConfig::a100()).unwrap();
        assert_eq!(m.issued_warp_per_scheduler_per_cycle, 0.0);
        let empty = RawCounters::default();
        assert!(matches!(
            derive_report(&empty, &GpuConfig::a100()),
            Err(Error::EmptyKernel(_))
        ));
    }

    #[test]
    fn bandwidth_cross_check() {
        let (gbps, pct) = bandwidth(144.57e6, 442.0, 2.0e12);
        assert!((gbps - 327.08).abs() < 0.01);
        assert!((gbps - 329.5).abs() / 329.5 < 0.01);
        assert!((pct - 16.35).abs() < 0.01);
    }

    #[test]
    fn sig4_format() {
        assert_eq!(sig4(329.54), "329.5");
        assert_eq!(sig4(0.24), "0.2400");
        assert_eq!(sig4(144.5678), "144.6");
        assert_eq!(sig4(2470000.0), "2470000");
        assert_eq!(sig4(0.0), "0");
        assert_eq!(sig4(-1.23456), "-1.235");
    }

    #[test]
    fn speedup_guard() {
        let m = derive_report(&raw(), &GpuConfig::a100()).unwrap();
        let a = Report::new("base", "random", "aa", m);
        assert_eq!(speedup(&a, &a).unwrap(), 1.0);
        let b = Report::new("base", "high_hot", "bb", m);
        assert!(matches!(speedup(&a, &b), Err(Error::WorkloadMismatch(_))));
    }

    #[test]
    fn csv_columns_follow_field_order() {
        let m = derive_report(&raw(), &GpuConfig::a100()).unwrap();
        let mut buf = Vec::new();
        emit(
            &[Report::new("base", "random", "aa", m)],
            Format::Csv,
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        assert_eq!(&header[ID_COLUMNS.len()..], &SimMetrics::FIELDS[..]);
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn json_round_trip() {
        let m = derive_report(&raw(), &GpuConfig::a100()).unwrap();
        let reports = vec![Report::new("base", "random", "aa", m)];
        let mut buf = Vec::new();
        emit(&reports, Format::Json, &mut buf).unwrap();
        let back = parse_json(std::str::from_utf8(&buf).unwrap()).unwrap();
        for (a, b) in back[0].metrics.values().iter().zip(m.values()) {
            assert!((a - b).abs() <= 5e-4 * b.abs() + 1e-12, "{a} vs {b}");
        }
        assert_eq!(back[0].trace_digest, "aa");
    }
}
