use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelSpec, SystemModel};
use crate::error::{Error, Result};
use crate::neural::{LyapunovNet, LyapunovRecord, PolicyNet, PolicyRecord};
use crate::objective::{ProblemConfig, ProblemSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// Parameters of both networks at one point of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub policy: PolicyRecord,
    pub lyapunov: LyapunovRecord,
}

/// Everything needed to rerun simulation, verification and export.
///
/// Floats go through the shortest representation that parses back to the
/// same bits, so a save/load cycle is value-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub policy: PolicyRecord,
    pub lyapunov: LyapunovRecord,
    pub seed: u64,
    pub system: ModelSpec,
    pub problem: ProblemConfig,
    pub training_meta: TrainingMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<Snapshot>,
}

impl Checkpoint {
    pub fn new(
        policy: &PolicyNet,
        lyap: &LyapunovNet,
        seed: u64,
        system: ModelSpec,
        problem: ProblemConfig,
        training_meta: TrainingMeta,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            policy: policy.to_record(),
            lyapunov: lyap.to_record(),
            seed,
            system,
            problem,
            training_meta,
            best: None,
        }
    }

    pub fn policy(&self) -> Result<PolicyNet> {
        PolicyNet::from_record(&self.policy)
    }

    pub fn lyapunov(&self) -> Result<LyapunovNet> {
        LyapunovNet::from_record(&self.lyapunov)
    }

    pub fn model(&self) -> Result<Box<dyn SystemModel>> {
        self.system.build()
    }

    pub fn problem_spec(&self, model: &dyn SystemModel) -> Result<ProblemSpec> {
        self.problem.resolve(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Checks the format version before decoding the rest.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse("missing or non-integer format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let text = ckpt.to_json()?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt = Checkpoint::from_json(&text)?;
    ckpt.policy()?;
    ckpt.lyapunov()?;
    Ok(ckpt)
}
