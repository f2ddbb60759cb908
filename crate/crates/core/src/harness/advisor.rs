//! Rule chain over a profile report that points at the next lever to try.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kernelmodel::WARP_SIZE;
use crate::metrics::SimMetrics;
use crate::optim::{OptimizationPlan, PointResult, SimSetup, TableWorkload};
use crate::simcore::{GpuConfig, Limiter};
use crate::workload::{coverage_from_histogram, EmbeddingModelConfig, HotnessHistogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepId {
    I,
    Ii,
    Iii,
    Iv,
    V,
    Vi,
    Vii,
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StepId::I => "i",
            StepId::Ii => "ii",
            StepId::Iii => "iii",
            StepId::Iv => "iv",
            StepId::V => "v",
            StepId::Vi => "vi",
            StepId::Vii => "vii",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub id: StepId,
    pub finding: String,
    /// A concrete command or plan for this tool; `None` when the step only
    /// records a finding.
    pub action: Option<String>,
    /// Metric values the rule looked at, by name.
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub steps: Vec<Step>,
}

impl Recommendation {
    /// Ids of the steps that suggest an action, in order.
    pub fn chain(&self) -> Vec<StepId> {
        self.steps
            .iter()
            .filter(|s| s.action.is_some())
            .map(|s| s.id)
            .collect()
    }

    pub fn is_no_action(&self) -> bool {
        self.chain().is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let cites: Vec<String> = s.metrics.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out += &format!("({}) {} [{}]\n", s.id, s.finding, cites.join(", "));
            if let Some(a) = &s.action {
                out += &format!("      -> {a}\n");
            }
        }
        if self.is_no_action() {
            out += "no action\n";
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvisorThresholds {
    /// Issued warps per scheduler per cycle below which the kernel can be latency-bound.
    pub issue_utilization: f64,
    /// Share of the warp cycles per instruction spent on long-scoreboard stalls.
    pub long_scoreboard_share: f64,
    /// Access share of the top 10% of unique rows that counts as high reuse.
    pub coverage10_pct: f64,
    /// Bandwidth utilization under which prefetching has headroom.
    pub hbm_utilization_pct: f64,
}

impl Default for AdvisorThresholds {
    fn default() -> Self {
        AdvisorThresholds {
            issue_utilization: 0.6,
            long_scoreboard_share: 0.5,
            coverage10_pct: 50.0,
            hbm_utilization_pct: 80.0,
        }
    }
}

/// Reuse summary of one table's accesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReuseSummary {
    /// Percent of accesses landing on the top 10% of unique rows.
    pub coverage10_pct: f64,
    /// Bytes of distinct rows the kernel touches.
    pub working_set_bytes: u64,
    /// Bytes of the rows that make up the top 10%.
    pub hot_set_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviseContext {
    pub warps_per_sm: u32,
    pub occupancy_pct: f64,
    pub limiter: Limiter,
    pub regs_per_thread: u32,
    pub reuse: Option<ReuseSummary>,
    pub plan: OptimizationPlan,
    pub gpu: GpuConfig,
}

impl ReuseSummary {
    pub fn from_workload(w: &TableWorkload, model: &EmbeddingModelConfig) -> Self {
        let distinct = HotnessHistogram::from_trace(&w.trace).distinct() as u64;
        let coverage = coverage_from_histogram(&w.profile, 100);
        ReuseSummary {
            coverage10_pct: coverage.covered_at(10.0).unwrap_or(0.0),
            working_set_bytes: distinct * model.row_bytes(),
            hot_set_bytes: (w.profile.distinct() as u64).div_ceil(10) * model.row_bytes(),
        }
    }
}

impl AdviseContext {
    /// Context of a simulated point, with the reuse profile of its workload.
    pub fn from_point(p: &PointResult, w: &TableWorkload, setup: &SimSetup) -> Self {
        AdviseContext {
            warps_per_sm: p.occupancy.warps_per_sm,
            occupancy_pct: p.occupancy.theoretical_occupancy_pct,
            limiter: p.occupancy.limiter,
            regs_per_thread: p.regs_allocated,
            reuse: Some(ReuseSummary::from_workload(w, &setup.model)),
            plan: p.plan,
            gpu: setup.gpu.clone(),
        }
    }
}

fn m(name: &str, v: f64) -> (String, f64) {
    (name.to_string(), v)
}

fn latency_bound(r: &SimMetrics, t: &AdvisorThresholds) -> (bool, f64) {
    let share = if r.warp_cycles_per_executed_inst > 0.0 {
        r.long_scoreboard_stall_cycles / r.warp_cycles_per_executed_inst
    } else {
        0.0
    };
    (
        share >= t.long_scoreboard_share
            && r.issued_warp_per_scheduler_per_cycle < t.issue_utilization,
        share,
    )
}

/// Upper bound on registers per thread for `warps` resident warps.
pub fn register_budget(warps: u32, gpu: &GpuConfig) -> u32 {
    gpu.regfile_regs_per_sm / (warps * WARP_SIZE)
}

pub fn advise(report: &SimMetrics, ctx: &AdviseContext, t: &AdvisorThresholds) -> Recommendation {
    let mut steps = Vec::new();
    let (bound, share) = latency_bound(report, t);
    let issue = report.issued_warp_per_scheduler_per_cycle;
    steps.push(Step {
        id: StepId::I,
        finding: if bound {
            format!("memory latency bound: long-scoreboard stalls are {:.0}% of warp cycles and issue utilization is low", share * 100.0)
        } else {
            "not memory latency bound".into()
        },
        action: None,
        metrics: vec![
            m("long_scoreboard_stall_cycles", report.long_scoreboard_stall_cycles),
            m("warp_cycles_per_executed_inst", report.warp_cycles_per_executed_inst),
            m("issued_warp_per_scheduler_per_cycle", issue),
            m("l1_hit_pct", report.l1_hit_pct),
            m("l2_hit_pct", report.l2_hit_pct),
        ],
    });
    if !bound {
        return Recommendation { steps };
    }

    let full = ctx.occupancy_pct >= 100.0;
    let optmt_applied = ctx.plan.regs.is_some();
    steps.push(Step {
        id: StepId::Ii,
        finding: if full {
            "occupancy is at the maximum".into()
        } else {
            let by = match ctx.limiter {
                Limiter::Registers => "registers",
                Limiter::SharedMemory => "shared memory",
                Limiter::WarpCap => "the warp cap",
            };
            format!(
                "occupancy {:.1}% ({} warps/SM) limited by {by}",
                ctx.occupancy_pct, ctx.warps_per_sm
            )
        },
        action: None,
        metrics: vec![
            m("theoretical_occupancy_pct", ctx.occupancy_pct),
            m("warps_per_sm", ctx.warps_per_sm as f64),
        ],
    });

    if !full && ctx.limiter == Limiter::Registers {
        let targets: Vec<u32> = (ctx.warps_per_sm + 1..=ctx.gpu.max_warps_per_sm)
            .filter(|w| w % 8 == 0)
            .collect();
        let budgets: Vec<String> = targets
            .iter()
            .map(|&w| format!("{w} warps: <= {} regs", register_budget(w, &ctx.gpu)))
            .collect();
        let (finding, action) = if optmt_applied {
            (
                format!("register cap {} already applied", ctx.regs_per_thread),
                None,
            )
        } else {
            let warps: Vec<String> = std::iter::once(ctx.warps_per_sm)
                .chain(targets.iter().copied())
                .map(|w| w.to_string())
                .collect();
            (
                format!(
                    "{} registers per thread limit residency ({})",
                    ctx.regs_per_thread,
                    budgets.join(", ")
                ),
                Some(format!(
                    "sweep-wlp --warps {} and keep the fastest cap as regs:<n>",
                    warps.join(",")
                )),
            )
        };
        steps.push(Step {
            id: StepId::Iii,
            finding,
            action,
            metrics: vec![
                m("regs_per_thread", ctx.regs_per_thread as f64),
                m("warps_per_sm", ctx.warps_per_sm as f64),
            ],
        });
    }

    steps.push(Step {
        id: StepId::Iv,
        finding: if optmt_applied {
            "still memory latency bound with the register cap applied; pinning and prefetching can help".into()
        } else {
            "re-profile after the register cap; pinning and prefetching are evaluated on this report meanwhile".into()
        },
        action: None,
        metrics: vec![m("long_scoreboard_stall_cycles", report.long_scoreboard_stall_cycles), m("issued_warp_per_scheduler_per_cycle", issue)],
    });

    let setaside = ctx.gpu.l2.max_setaside_bytes();
    let mut pin = false;
    let v = match ctx.reuse {
        None => Step {
            id: StepId::V,
            finding: "no reuse profile given; pinning check skipped".into(),
            action: None,
            metrics: vec![],
        },
        Some(r) => {
            let hot = r.coverage10_pct > t.coverage10_pct;
            let fits = r.hot_set_bytes <= setaside;
            pin = hot && fits;
            let finding = match (hot, fits) {
                (true, true) => format!(
                    "top 10% of rows take {:.1}% of accesses and their {} KiB fit the {} KiB set-aside",
                    r.coverage10_pct,
                    r.hot_set_bytes >> 10,
                    setaside >> 10
                ),
                (true, false) => format!("high reuse, but the hot rows ({} KiB) exceed the set-aside", r.hot_set_bytes >> 10),
                (false, _) => format!("low reuse concentration ({:.1}% of accesses on the top 10% of rows)", r.coverage10_pct),
            };
            Step {
                id: StepId::V,
                finding,
                action: pin.then(|| {
                    "add l2p to the plan (pin the hottest rows in the L2 set-aside)".to_string()
                }),
                metrics: vec![
                    m("coverage10_pct", r.coverage10_pct),
                    m("working_set_bytes", r.working_set_bytes as f64),
                    m("hot_set_bytes", r.hot_set_bytes as f64),
                    m("l2_bytes", ctx.gpu.l2.bytes as f64),
                ],
            }
        }
    };
    steps.push(v);

    let bw = report.hbm_bw_utilization_pct;
    let prefetch = bw < t.hbm_utilization_pct;
    let low_mt = !optmt_applied && ctx.warps_per_sm * 2 <= ctx.gpu.max_warps_per_sm;
    let distances = if low_mt {
        "1,2,4,6,8,10,12,14"
    } else {
        "1,2,3,4,6"
    };
    let base = if optmt_applied {
        ctx.plan.label()
    } else {
        "baseline".into()
    };
    steps.push(Step {
        id: StepId::Vi,
        finding: if prefetch {
            format!("bandwidth utilization {bw:.1}% leaves headroom for prefetching")
        } else {
            format!("bandwidth utilization {bw:.1}% is near saturation; prefetching would compete for it")
        },
        action: prefetch.then(|| format!("sweep-distance --scheme rpf,smpf,lmpf,l1dpf --distances {distances} --base {base}")),
        metrics: vec![m("hbm_bw_utilization_pct", bw), m("long_scoreboard_stall_cycles", report.long_scoreboard_stall_cycles)],
    });

    if prefetch || pin {
        let mt = if optmt_applied || steps.iter().any(|s| s.id == StepId::Iii) {
            "+optmt"
        } else {
            ""
        };
        let mut plans = vec!["baseline".to_string()];
        if !mt.is_empty() {
            plans.push("optmt".into());
        }
        if prefetch {
            plans.push(format!("rpf{mt}"));
        }
        if pin {
            plans.push(format!("l2p{mt}"));
        }
        if prefetch && pin {
            plans.push(format!("rpf+l2p{mt}"));
        }
        steps.push(Step {
            id: StepId::Vii,
            finding: "combine the levers that helped individually, each at its tuned setting"
                .into(),
            action: Some(format!("compare --plans {}", plans.join(","))),
            metrics: vec![],
        });
    }
    Recommendation { steps }
}
