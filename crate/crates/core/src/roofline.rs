//! GPU specifications and per-kernel Roofline performance.
//!
//! A kernel's attainable throughput is capped by peak compute (`th_max`) and by the
//! bandwidth of whichever channel feeds it: device memory for ordinary kernels,
//! the interconnect for all-reduce.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{toml_error, ArchError, DataType};
use crate::costmodel::CostTriple;

/// Built-in catalog: T4, L4, A100 and H100.
pub const BUILTIN_GPUS: &str = include_str!("../data/gpus.toml");

/// Environment variable naming a GPU catalog that replaces the built-in one.
pub const GPU_CATALOG_ENV: &str = "INFERCARBON_GPU_CATALOG";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RooflineError {
    #[error("GPU `{gpu}` has no peak throughput for {dtype}")]
    MissingThroughput { gpu: String, dtype: DataType },
    #[error("kernel moves no bytes over its limiting channel")]
    ZeroTraffic,
    #[error("GPU `{gpu}`: field `{field}` must be positive")]
    NonPositive { gpu: String, field: &'static str },
    #[error("unknown GPU `{0}`")]
    UnknownGpu(String),
    #[error(transparent)]
    Parse(#[from] ArchError),
}

fn default_s_block() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSpec {
    pub name: String,
    /// Peak operations per second per datatype.
    pub th_max: BTreeMap<DataType, f64>,
    /// Device memory bandwidth, bytes per second.
    pub bw_max: f64,
    /// Interconnect bandwidth, bytes per second.
    pub net_max: f64,
    pub power_w: f64,
    pub node_size: u64,
    pub area_mm2: f64,
    pub tech_nm: u64,
    #[serde(default = "default_s_block")]
    pub s_block: u64,
}

impl GpuSpec {
    pub fn validate(&self) -> Result<(), RooflineError> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(RooflineError::NonPositive {
                    gpu: self.name.clone(),
                    field,
                })
            }
        };
        positive("bw_max", self.bw_max)?;
        positive("net_max", self.net_max)?;
        positive("power_w", self.power_w)?;
        for v in self.th_max.values() {
            positive("th_max", *v)?;
        }
        if self.s_block == 0 {
            return Err(RooflineError::NonPositive {
                gpu: self.name.clone(),
                field: "s_block",
            });
        }
        if self.node_size == 0 {
            return Err(RooflineError::NonPositive {
                gpu: self.name.clone(),
                field: "node_size",
            });
        }
        Ok(())
    }

    pub fn throughput(&self, dtype: DataType) -> Result<f64, RooflineError> {
        self.th_max
            .get(&dtype)
            .copied()
            .ok_or_else(|| RooflineError::MissingThroughput {
                gpu: self.name.clone(),
                dtype,
            })
    }
}

/// Intensities at which the bandwidth ceilings meet the compute ceiling, in ops per byte.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgePoints {
    pub mrp: f64,
    pub nrp: f64,
}

pub fn ridge_points(gpu: &GpuSpec, dtype: DataType) -> Result<RidgePoints, RooflineError> {
    let th = gpu.throughput(dtype)?;
    Ok(RidgePoints {
        mrp: th / gpu.bw_max,
        nrp: th / gpu.net_max,
    })
}

/// `O / M` for ordinary kernels, `O / I` for all-reduce.
pub fn arithmetic_intensity(cost: &CostTriple, kind_is_allreduce: bool) -> Result<f64, RooflineError> {
    let denom = if kind_is_allreduce {
        cost.net_bytes
    } else {
        cost.mem_bytes
    };
    if denom == 0 {
        return Err(RooflineError::ZeroTraffic);
    }
    Ok(cost.ops as f64 / denom as f64)
}

/// Attainable throughput at a given intensity.
pub fn performance_at(intensity: f64, gpu: &GpuSpec, dtype: DataType, kind_is_allreduce: bool) -> Result<f64, RooflineError> {
    let th = gpu.throughput(dtype)?;
    let ridges = ridge_points(gpu, dtype)?;
    let (bandwidth, ridge) = if kind_is_allreduce {
        (gpu.net_max, ridges.nrp)
    } else {
        (gpu.bw_max, ridges.mrp)
    };
    Ok(if intensity < ridge {
        bandwidth * intensity
    } else {
        th
    })
}

pub fn roofline_performance(
    cost: &CostTriple,
    gpu: &GpuSpec,
    dtype: DataType,
    kind_is_allreduce: bool,
) -> Result<f64, RooflineError> {
    let intensity = arithmetic_intensity(cost, kind_is_allreduce)?;
    performance_at(intensity, gpu, dtype, kind_is_allreduce)
}

/// Roofline performance with zero-traffic kernels mapped to 0.
pub fn kernel_performance(
    cost: &CostTriple,
    gpu: &GpuSpec,
    dtype: DataType,
    kind_is_allreduce: bool,
) -> Result<f64, RooflineError> {
    match roofline_performance(cost, gpu, dtype, kind_is_allreduce) {
        Err(RooflineError::ZeroTraffic) => Ok(0.0),
        other => other,
    }
}

/// Roofline execution time `O / P`; zero for kernels with no work or no throughput.
pub fn kernel_seconds(cost: &CostTriple, performance: f64) -> f64 {
    if cost.ops == 0 || performance <= 0.0 {
        0.0
    } else {
        cost.ops as f64 / performance
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuCatalog {
    #[serde(default, rename = "gpu")]
    pub gpus: Vec<GpuSpec>,
}

impl GpuCatalog {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_GPUS).expect("built-in GPU catalog is valid")
    }

    pub fn parse(text: &str) -> Result<Self, RooflineError> {
        let catalog: GpuCatalog = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        for gpu in &catalog.gpus {
            gpu.validate()?;
        }
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self, RooflineError> {
        let text = std::fs::read_to_string(path).map_err(|e| ArchError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// The catalog named by [`GPU_CATALOG_ENV`], or the built-in one.
    pub fn from_env() -> Result<Self, RooflineError> {
        match std::env::var_os(GPU_CATALOG_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(Self::builtin()),
        }
    }

    pub fn get(&self, name: &str) -> Result<&GpuSpec, RooflineError> {
        self.gpus
            .iter()
            .find(|g| g.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| RooflineError::UnknownGpu(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a100() -> GpuSpec {
        GpuCatalog::builtin().get("A100").unwrap().clone()
    }

    #[test]
    fn builtin_catalog_has_four_gpus() {
        let c = GpuCatalog::builtin();
        let names: Vec<_> = c.gpus.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(names, ["T4", "L4", "A100", "H100"]);
        assert_eq!(c.get("a100").unwrap().area_mm2, 826.0);
    }

    #[test]
    fn a100_ridge_points() {
        let r = ridge_points(&a100(), DataType::Fp16).unwrap();
        assert!((r.mrp - 624e12 / 2039e9).abs() / r.mrp < 1e-12);
        assert!((r.mrp - 306.03).abs() < 0.01);
        assert!((r.nrp - 1040.0).abs() < 1e-9);
    }

    #[test]
    fn unit_ridge_point() {
        let mut g = a100();
        g.th_max.insert(DataType::Fp16, g.bw_max);
        assert_eq!(ridge_points(&g, DataType::Fp16).unwrap().mrp, 1.0);
    }

    #[test]
    fn missing_throughput() {
        let mut g = a100();
        g.th_max.remove(&DataType::Int8);
        assert!(matches!(
            ridge_points(&g, DataType::Int8),
            Err(RooflineError::MissingThroughput { .. })
        ));
    }

    #[test]
    fn intensity_examples() {
        assert_eq!(
            arithmetic_intensity(&CostTriple::new(1000, 2000, 0), false).unwrap(),
            0.5
        );
        assert_eq!(
            arithmetic_intensity(&CostTriple::new(4, 16, 24), true).unwrap(),
            4.0 / 24.0
        );
        assert_eq!(
            arithmetic_intensity(&CostTriple::ZERO, false),
            Err(RooflineError::ZeroTraffic)
        );
    }

    #[test]
    fn performance_examples() {
        let g = a100();
        let mem_bound = roofline_performance(&CostTriple::new(1000, 2000, 0), &g, DataType::Fp16, false).unwrap();
        assert!((mem_bound - 1.0195e12).abs() < 1.0);
        let compute_bound = roofline_performance(&CostTriple::new(4000, 10, 0), &g, DataType::Fp16, false).unwrap();
        assert_eq!(compute_bound, 6.24e14);
        let ridge = ridge_points(&g, DataType::Fp16).unwrap().mrp;
        let below = performance_at(ridge * (1.0 - 1e-15), &g, DataType::Fp16, false).unwrap();
        let at = performance_at(ridge, &g, DataType::Fp16, false).unwrap();
        assert!((g.bw_max * ridge - at).abs() / at < 1e-12);
        assert!((below - at).abs() / at < 1e-12);
    }

    #[test]
    fn zero_traffic_maps_to_zero_performance() {
        let g = a100();
        assert_eq!(
            kernel_performance(&CostTriple::ZERO, &g, DataType::Fp16, false).unwrap(),
            0.0
        );
        assert_eq!(kernel_seconds(&CostTriple::ZERO, 0.0), 0.0);
    }

    #[test]
    fn catalog_rejects_unknown_fields() {
        let text = "[[gpu]]\nname = \"X\"\nth_max = { FP16 = 1e12 }\nbw_max = 1e9\nnet_max = 1e9\npower_w = 1.0\nnode_size = 1\narea_mm2 = 1.0\ntech_nm = 5\nclock_mhz = 1000\n";
        match GpuCatalog::parse(text) {
            Err(RooflineError::Parse(ArchError::Parse { field, .. })) => {
                assert_eq!(field.as_deref(), Some("clock_mhz"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn catalog_rejects_non_positive_rates() {
        let text = "[[gpu]]\nname = \"X\"\nth_max = { FP16 = 1e12 }\nbw_max = 0.0\nnet_max = 1e9\npower_w = 1.0\nnode_size = 1\narea_mm2 = 1.0\ntech_nm = 5\n";
        assert!(matches!(
            GpuCatalog::parse(text),
            Err(RooflineError::NonPositive { field: "bw_max", .. })
        ));
    }

    #[test]
    fn narrower_dtypes_have_higher_ridges() {
        for g in GpuCatalog::builtin().gpus {
            let r32 = ridge_points(&g, DataType::Fp32).unwrap();
            let r16 = ridge_points(&g, DataType::Fp16).unwrap();
            let r8 = ridge_points(&g, DataType::Int8).unwrap();
            assert!(r8.mrp > r16.mrp && r16.mrp > r32.mrp, "{}", g.name);
            assert!(r8.nrp > r16.nrp && r16.nrp > r32.nrp, "{}", g.name);
            assert!(r16.nrp >= r16.mrp);
        }
    }
}
