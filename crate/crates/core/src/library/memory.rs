use serde::Serialize;

use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::peft::AdapterBundle;

/// Bytes per stored parameter.
pub const BYTES_PER_PARAM: usize = 4;

/// KiB for `params` f32 values.
pub fn kib(params: usize) -> f64 {
    (params * BYTES_PER_PARAM) as f64 / 1024.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskMemory {
    pub task: String,
    pub method: String,
    pub classes: usize,
    pub stored_params: usize,
    pub classifier_params: usize,
}

/// Parameter totals for three ways of serving the same tasks:
///
/// * `scratch`: one independent encoder plus classifier per task
/// * `full`: the shared `W0` plus a full `ΔW` and classifier per task
/// * `library`: the shared `W0` plus each stored bundle
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryReport {
    pub foundation_params: usize,
    pub tasks: Vec<TaskMemory>,
    pub library_params: usize,
    pub scratch_params: usize,
    pub full_params: usize,
}

fn foundation_params(w0: &EncoderWeights) -> usize {
    w0.num_params() - w0.head.as_ref().map_or(0, |h| h.num_params())
}

/// Builds the report for `bundles` sharing the foundation `w0`. A
/// reconstruction head on `w0` is not counted.
pub fn memory_report(w0: &EncoderWeights, bundles: &[AdapterBundle]) -> MemoryReport {
    let f = foundation_params(w0);
    let tasks: Vec<TaskMemory> = bundles
        .iter()
        .map(|b| TaskMemory {
            task: b.task.clone(),
            method: b.method.name().to_string(),
            classes: b.classes(),
            stored_params: b.stored_params(),
            classifier_params: b.classifier_params(),
        })
        .collect();
    let per_task_model: usize = tasks.iter().map(|t| f + t.classifier_params).sum();
    MemoryReport {
        foundation_params: f,
        library_params: f + tasks.iter().map(|t| t.stored_params).sum::<usize>(),
        scratch_params: per_task_model,
        full_params: f + per_task_model,
        tasks,
    }
}

impl MemoryReport {
    pub fn library_kib(&self) -> f64 {
        kib(self.library_params)
    }

    pub fn scratch_kib(&self) -> f64 {
        kib(self.scratch_params)
    }

    pub fn full_kib(&self) -> f64 {
        kib(self.full_params)
    }

    /// `library / scratch`.
    pub fn ratio_vs_scratch(&self) -> f64 {
        self.library_params as f64 / self.scratch_params as f64
    }

    /// `library / full`.
    pub fn ratio_vs_full(&self) -> f64 {
        self.library_params as f64 / self.full_params as f64
    }

    /// Percentage saved relative to the scratch strategy.
    pub fn savings_vs_scratch(&self) -> f64 {
        100.0 * (1.0 - self.ratio_vs_scratch())
    }

    pub fn savings_vs_full(&self) -> f64 {
        100.0 * (1.0 - self.ratio_vs_full())
    }

    /// Totals `(library, scratch, full)` for `n` tasks shaped like the
    /// average task in this report.
    pub fn project(&self, n: usize) -> Result<(f64, f64, f64)> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("projection needs at least one task"));
        }
        let k = self.tasks.len() as f64;
        let f = self.foundation_params as f64;
        let bundle = self.tasks.iter().map(|t| t.stored_params as f64).sum::<f64>() / k;
        let clf = self.tasks.iter().map(|t| t.classifier_params as f64).sum::<f64>() / k;
        let n = n as f64;
        Ok((f + n * bundle, n * (f + clf), f + n * (f + clf)))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "foundation {:>10} params {:>10.1} KiB\n",
            self.foundation_params,
            kib(self.foundation_params)
        );
        for t in &self.tasks {
            s += &format!(
                "task {:<16} {:<7} classes {} stored {:>10} params {:>10.1} KiB\n",
                t.task,
                t.method,
                t.classes,
                t.stored_params,
                kib(t.stored_params)
            );
        }
        s += &format!("library  {:>10} params {:>10.1} KiB\n", self.library_params, self.library_kib());
        s += &format!(
            "scratch  {:>10} params {:>10.1} KiB  library/scratch {:.3} (saves {:.1}%)\n",
            self.scratch_params,
            self.scratch_kib(),
            self.ratio_vs_scratch(),
            self.savings_vs_scratch()
        );
        s += &format!(
            "full     {:>10} params {:>10.1} KiB  library/full {:.3} (saves {:.1}%)\n",
            self.full_params,
            self.full_kib(),
            self.ratio_vs_full(),
            self.savings_vs_full()
        );
        s
    }
}
