// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

/// Pipeline stages in execution order. Each one writes `<artifact>.json`
/// and `<name>.log`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    GenData,
    Train,
    Trace,
    Cluster,
    Discover,
    Stats,
    Score,
    Calibrate,
    Detect,
    Sweep,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::GenData,
        Stage::Train,
        Stage::Trace,
        Stage::Cluster,
        Stage::Discover,
        Stage::Stats,
        Stage::Score,
        Stage::Calibrate,
        Stage::Detect,
        Stage::Sweep,
        Stage::Report,
    ];

    /// Subcommand name.
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Trace => "trace",
            Stage::Cluster => "cluster",
            Stage::Discover => "discover",
            Stage::Stats => "stats",
            Stage::Score => "score",
            Stage::Calibrate => "calibrate",
            Stage::Detect => "detect",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
        }
    }

    /// Value of the `artifact` field and stem of the artifact file.
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::GenData => "dataset",
            Stage::Train => "model",
            Stage::Trace => "traces",
            Stage::Cluster => "clusterings",
            Stage::Discover => "circuit",
            Stage::Stats => "stats",
            Stage::Score => "distribution",
            Stage::Calibrate => "detector",
            Stage::Detect => "detections",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.artifact())
    }

    pub fn log_name(self) -> String {
        format!("{}.log", self.name())
    }

    pub fn from_artifact(kind: &str) -> Option<Stage> {
        Self::ALL.into_iter().find(|s| s.artifact() == kind)
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            GenData => &[],
            Train => &[GenData],
            Trace => &[GenData, Train],
            Cluster => &[Trace],
            Discover => &[GenData, Train],
            Stats => &[Train, Trace, Cluster, Discover],
            Score => &[Train, Trace, Cluster, Discover],
            Calibrate => &[GenData, Train, Cluster],
            Detect => &[GenData, Train, Discover, Score, Calibrate],
            Sweep => &[GenData, Train, Trace, Discover],
            Report => &[GenData, Train, Cluster, Discover, Stats, Score, Calibrate, Detect],
        }
    }

    /// This stage and everything upstream of it, in pipeline order.
    pub fn closure(self) -> Vec<Stage> {
        let mut out = vec![self];
        let mut i = 0;
        while i < out.len() {
            for &u in out[i].upstream() {
                if !out.contains(&u) {
                    out.push(u);
                }
            }
            i += 1;
        }
        out.sort();
        out
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
