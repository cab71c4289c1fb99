//! Cost ledger: provider calls and tokens per phase, with a per-layer breakdown.
//!
//! Token consumption of an LLM call is `prompt_tokens + completion_tokens`.
//! Wall time is recorded per phase for reporting; tests assert only on counts.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::time::Instant;

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::summarize::TokenUsage;

pub const CSV_HEADER: &str = "phase,layer,llm_calls,prompt_tokens,completion_tokens,embed_calls,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Build,
    Update,
    Query,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Build => "build",
            Phase::Update => "update",
            Phase::Query => "query",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// `texts` embeddings computed in one provider call.
    Embed {
        texts: u64,
    },
    Summarize,
    Generate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub llm_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub embed_calls: u64,
    pub wall_ms: u64,
}

impl Counters {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn usage(&self) -> TokenUsage {
        TokenUsage::new(self.prompt_tokens, self.completion_tokens)
    }

    fn apply(&mut self, event: Event, usage: TokenUsage) {
        match event {
            Event::Embed { texts } => self.embed_calls += texts,
            Event::Summarize | Event::Generate => self.llm_calls += 1,
        }
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
    }

    fn add(&mut self, other: &Counters) {
        self.llm_calls += other.llm_calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.embed_calls += other.embed_calls;
        self.wall_ms += other.wall_ms;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhaseRecord {
    pub totals: Counters,
    pub per_layer: BTreeMap<usize, Counters>,
}

#[derive(Debug, Default)]
struct Inner {
    active: Option<(Phase, Instant)>,
    phases: BTreeMap<Phase, PhaseRecord>,
}

/// Thread-safe accumulator of provider costs.
#[derive(Debug, Default)]
pub struct CostLedger {
    inner: Mutex<Inner>,
}

/// Closes the phase it was opened for when dropped.
#[must_use = "the phase closes when the guard is dropped"]
pub struct PhaseGuard<'a> {
    ledger: &'a CostLedger,
}

impl Drop for PhaseGuard<'_> {
    fn drop(&mut self) {
        self.ledger.end();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens `phase`. Only one phase may be open at a time.
    pub fn begin(&self, phase: Phase) -> Result<PhaseGuard<'_>> {
        let mut inner = self.inner.lock();
        if let Some((open, _)) = inner.active {
            return Err(Error::Usage(format!("cannot open phase {phase} while {open} is open")));
        }
        inner.active = Some((phase, Instant::now()));
        inner.phases.entry(phase).or_default();
        Ok(PhaseGuard { ledger: self })
    }

    fn end(&self) {
        let mut inner = self.inner.lock();
        if let Some((phase, started)) = inner.active.take() {
            let ms = started.elapsed().as_millis() as u64;
            inner.phases.entry(phase).or_default().totals.wall_ms += ms;
        }
    }

    pub fn active_phase(&self) -> Option<Phase> {
        self.inner.lock().active.map(|(p, _)| p)
    }

    /// Adds one provider event to the open phase (and to `layer`, if given).
    pub fn record(&self, event: Event, usage: TokenUsage, layer: Option<usize>) -> Result<()> {
        let mut inner = self.inner.lock();
        let Some((phase, _)) = inner.active else {
            return Err(Error::Usage("no active phase to record into".into()));
        };
        let rec = inner.phases.entry(phase).or_default();
        rec.totals.apply(event, usage);
        if let Some(l) = layer {
            rec.per_layer.entry(l).or_default().apply(event, usage);
        }
        Ok(())
    }

    pub fn phase(&self, phase: Phase) -> Option<PhaseRecord> {
        self.inner.lock().phases.get(&phase).cloned()
    }

    pub fn totals(&self, phase: Phase) -> Counters {
        self.phase(phase).map(|r| r.totals).unwrap_or_default()
    }

    /// Sum over every phase.
    pub fn grand_total(&self) -> Counters {
        let inner = self.inner.lock();
        let mut total = Counters::default();
        for rec in inner.phases.values() {
            total.add(&rec.totals);
        }
        total
    }

    pub fn phases_touched(&self) -> Vec<Phase> {
        self.inner.lock().phases.keys().copied().collect()
    }

    /// One row per phase touched; an untouched ledger reports a single zero row.
    pub fn report(&self, format: ReportFormat) -> String {
        self.render(format, false)
    }

    /// Like [`CostLedger::report`], followed by one row per (phase, layer).
    pub fn report_detailed(&self, format: ReportFormat) -> String {
        self.render(format, true)
    }

    fn render(&self, format: ReportFormat, layers: bool) -> String {
        let inner = self.inner.lock();
        let mut rows: Vec<(String, String, Counters)> = Vec::new();
        for (phase, rec) in &inner.phases {
            rows.push((phase.to_string(), "all".into(), rec.totals));
        }
        if rows.is_empty() {
            rows.push(("none".into(), "all".into(), Counters::default()));
        }
        if layers {
            for (phase, rec) in &inner.phases {
                for (layer, c) in &rec.per_layer {
                    rows.push((phase.to_string(), layer.to_string(), *c));
                }
            }
        }
        let mut out = String::new();
        match format {
            ReportFormat::Csv => {
                out.push_str(CSV_HEADER);
                out.push('\n');
                for (phase, layer, c) in rows {
                    let _ = writeln!(
                        out,
                        "{phase},{layer},{},{},{},{},{}",
                        c.llm_calls, c.prompt_tokens, c.completion_tokens, c.embed_calls, c.wall_ms
                    );
                }
            }
            ReportFormat::Table => {
                let _ = writeln!(
                    out,
                    "{:<7} {:>5} {:>9} {:>13} {:>17} {:>11} {:>12} {:>8}",
                    "phase",
                    "layer",
                    "llm_calls",
                    "prompt_tokens",
                    "completion_tokens",
                    "embed_calls",
                    "total_tokens",
                    "wall_ms"
                );
                for (phase, layer, c) in rows {
                    let _ = writeln!(
                        out,
                        "{phase:<7} {layer:>5} {:>9} {:>13} {:>17} {:>11} {:>12} {:>8}",
                        c.llm_calls,
                        c.prompt_tokens,
                        c.completion_tokens,
                        c.embed_calls,
                        c.total_tokens(),
                        c.wall_ms
                    );
                }
            }
        }
        out
    }
}
