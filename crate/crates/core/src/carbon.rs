//! Energy → carbon: operational emissions through PUE and grid intensity, plus a
//! linear amortization of the GPUs' manufacturing footprint over their lifetime.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{InferenceConfig, LlmArchitecture};
use crate::gnn::{GnnError, Predictor};
use crate::graph::{extract_point, FeatureError};
use crate::roofline::GpuSpec;

/// Joules in one kilowatt-hour.
pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Error)]
pub enum CarbonError {
    #[error("invalid parameter `{0}`")]
    Param(&'static str),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error("predictor failed: {0}")]
    Predictor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatacenterParams {
    pub pue: f64,
    /// gCO2eq per kWh.
    pub carbon_intensity: f64,
}

impl Default for DatacenterParams {
    fn default() -> Self {
        Self {
            pue: 1.2,
            carbon_intensity: 400.0,
        }
    }
}

impl DatacenterParams {
    pub fn validate(&self) -> Result<(), CarbonError> {
        if !(self.pue >= 1.0 && self.pue.is_finite()) {
            return Err(CarbonError::Param("pue"));
        }
        if !(self.carbon_intensity >= 0.0 && self.carbon_intensity.is_finite()) {
            return Err(CarbonError::Param("carbon_intensity"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbodiedParams {
    /// gCO2eq per mm² of die.
    pub cpa: f64,
    pub lifetime_seconds: f64,
    /// Fixed per-device overhead, gCO2eq.
    pub packaging_g: f64,
}

impl Default for EmbodiedParams {
    fn default() -> Self {
        Self {
            cpa: 1.0,
            lifetime_seconds: 1.5768e8,
            packaging_g: 0.0,
        }
    }
}

impl EmbodiedParams {
    pub fn validate(&self) -> Result<(), CarbonError> {
        if !(self.cpa >= 0.0 && self.cpa.is_finite()) {
            return Err(CarbonError::Param("cpa"));
        }
        if !(self.lifetime_seconds > 0.0) {
            return Err(CarbonError::Param("lifetime_seconds"));
        }
        if !(self.packaging_g >= 0.0 && self.packaging_g.is_finite()) {
            return Err(CarbonError::Param("packaging_g"));
        }
        Ok(())
    }
}

pub fn joules_to_kwh(joules: f64) -> f64 {
    joules / JOULES_PER_KWH
}

/// `energy · PUE · intensity`, in gCO2eq.
pub fn operational_carbon(energy_kwh: f64, dc: &DatacenterParams) -> f64 {
    energy_kwh * dc.pue * dc.carbon_intensity
}

/// Share of the devices' manufacturing footprint consumed by `exec_seconds` of use.
pub fn embodied_carbon(gpu: &GpuSpec, n_gpu: u64, exec_seconds: f64, ep: &EmbodiedParams) -> f64 {
    n_gpu as f64 * (gpu.area_mm2 * ep.cpa + ep.packaging_g) * exec_seconds / ep.lifetime_seconds
}

/// Energy of one request, split by phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEnergy {
    pub prefill_joules: f64,
    pub decode_joules: f64,
}

impl PhaseEnergy {
    pub fn total(&self) -> f64 {
        self.prefill_joules + self.decode_joules
    }
}

/// Anything that can put a number of joules on a request.
pub trait EnergyPredictor {
    fn name(&self) -> String;

    fn predict(
        &self,
        arch: &LlmArchitecture,
        cfg: &InferenceConfig,
        gpu: &GpuSpec,
    ) -> Result<PhaseEnergy, CarbonError>;
}

/// Roofline execution time of the whole model, per phase, in seconds.
pub fn roofline_seconds(
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    gpu: &GpuSpec,
) -> Result<[f64; 2], CarbonError> {
    let raw = extract_point(arch, cfg, gpu)?;
    let [p, d] = raw.layer_seconds();
    let l = arch.layer_count as f64;
    Ok([p * l, d * l])
}

/// The trained model predicts a single total; it is split across phases in proportion
/// to their Roofline time.
impl EnergyPredictor for Predictor {
    fn name(&self) -> String {
        "gnn".into()
    }

    fn predict(
        &self,
        arch: &LlmArchitecture,
        cfg: &InferenceConfig,
        gpu: &GpuSpec,
    ) -> Result<PhaseEnergy, CarbonError> {
        let raw = extract_point(arch, cfg, gpu)?;
        let total = self.predict_joules(&raw.encode(&self.stats)?.input)?.max(0.0);
        let [p, d] = raw.layer_seconds();
        let share = if p + d > 0.0 { p / (p + d) } else { 1.0 };
        Ok(PhaseEnergy {
            prefill_joules: total * share,
            decode_joules: total * (1.0 - share),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyKwh {
    pub total: f64,
    pub prefill: f64,
    pub decode: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerGpu {
    pub energy_kwh: f64,
    pub operational_g: f64,
    pub embodied_g: f64,
    pub total_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assumptions {
    pub pue: f64,
    pub carbon_intensity: f64,
    pub cpa: f64,
    pub lifetime_seconds: f64,
    pub packaging_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonReport {
    pub predictor: String,
    pub architecture: String,
    pub gpu: String,
    pub config: InferenceConfig,
    pub energy_kwh: EnergyKwh,
    pub exec_seconds: f64,
    pub operational_g: f64,
    pub embodied_g: f64,
    pub total_g: f64,
    pub per_gpu: PerGpu,
    pub assumptions: Assumptions,
}

impl CarbonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for CarbonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(f, "request     {} on {}x {} ({})", self.architecture, c.gpu_count, self.gpu, self.predictor)?;
        writeln!(
            f,
            "workload    batch {}, prompt {} tokens, {} generated",
            c.batch_size, c.prompt_length, c.generated_tokens
        )?;
        writeln!(
            f,
            "energy      {:.6e} kWh (prefill {:.6e}, decode {:.6e})",
            self.energy_kwh.total, self.energy_kwh.prefill, self.energy_kwh.decode
        )?;
        writeln!(f, "exec time   {:.6e} s", self.exec_seconds)?;
        writeln!(f, "operational {:.6e} g", self.operational_g)?;
        writeln!(f, "embodied    {:.6e} g", self.embodied_g)?;
        writeln!(f, "total       {:.6e} gCO2eq ({:.6e} per GPU)", self.total_g, self.per_gpu.total_g)?;
        let a = &self.assumptions;
        write!(
            f,
            "assumptions PUE {}, {} g/kWh, {} g/mm², lifetime {} s, packaging {} g",
            a.pue, a.carbon_intensity, a.cpa, a.lifetime_seconds, a.packaging_g
        )
    }
}

/// Energy from `predictor`, execution time from the Roofline model, carbon from both.
pub fn estimate_request(
    predictor: &dyn EnergyPredictor,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    gpu: &GpuSpec,
    dc: &DatacenterParams,
    ep: &EmbodiedParams,
) -> Result<CarbonReport, CarbonError> {
    dc.validate()?;
    ep.validate()?;
    let energy = predictor.predict(arch, cfg, gpu)?;
    let [tp, td] = roofline_seconds(arch, cfg, gpu)?;
    let exec_seconds = tp + td;
    let kwh = EnergyKwh {
        total: joules_to_kwh(energy.total()),
        prefill: joules_to_kwh(energy.prefill_joules),
        decode: joules_to_kwh(energy.decode_joules),
    };
    let operational_g = operational_carbon(kwh.total, dc);
    let embodied_g = embodied_carbon(gpu, cfg.gpu_count, exec_seconds, ep);
    let n = cfg.gpu_count as f64;
    Ok(CarbonReport {
        predictor: predictor.name(),
        architecture: arch.name.clone(),
        gpu: gpu.name.clone(),
        config: *cfg,
        energy_kwh: kwh,
        exec_seconds,
        operational_g,
        embodied_g,
        total_g: operational_g + embodied_g,
        per_gpu: PerGpu {
            energy_kwh: kwh.total / n,
            operational_g: operational_g / n,
            embodied_g: embodied_g / n,
            total_g: (operational_g + embodied_g) / n,
        },
        assumptions: Assumptions {
            pue: dc.pue,
            carbon_intensity: dc.carbon_intensity,
            cpa: ep.cpa,
            lifetime_seconds: ep.lifetime_seconds,
            packaging_g: ep.packaging_g,
        },
    })
}
