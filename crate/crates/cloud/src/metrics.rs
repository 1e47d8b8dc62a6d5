use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use cloudedge_core::ddpg::{Phase, StepReport};

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    TrainStep {
        step: u64,
        phase: Phase,
        critic_loss: Option<f64>,
        actor_objective: Option<f64>,
    },
    Event {
        kind: String,
        episode: u32,
        cumulative_steps: u64,
        on_target: u32,
        train_steps: u64,
    },
}

/// JSON-lines metrics writer.
pub struct MetricsSink {
    out: Box<dyn Write + Send>,
    train_steps: bool,
}

impl MetricsSink {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        Self {
            out,
            train_steps: true,
        }
    }

    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(Box::new(BufWriter::new(File::create(path)?))))
    }

    /// Skip per-train-step records, keeping only events.
    pub fn events_only(mut self) -> Self {
        self.train_steps = false;
        self
    }

    pub fn write(&mut self, r: &Record) {
        if let Ok(line) = serde_json::to_string(r) {
            if writeln!(self.out, "{line}").is_err() {
                log::warn!("metrics write failed");
            }
        }
    }

    pub fn write_step(&mut self, report: &StepReport) {
        if self.train_steps {
            self.write(&Record::TrainStep {
                step: report.step,
                phase: report.phase,
                critic_loss: report.critic_loss,
                actor_objective: report.actor_objective,
            });
        }
    }

    pub fn flush(&mut self) {
        let _ = self.out.flush();
    }
}

impl Drop for MetricsSink {
    fn drop(&mut self) {
        self.flush();
    }
}
