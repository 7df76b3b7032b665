use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BenchmarkSpec, Scale};
use crate::template::{self, Bindings};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("device pool is empty")]
    EmptyPool,
    #[error("duplicate device id `{0}`")]
    DuplicateDevice(String),
    #[error("cannot spread {devices} devices over {nodes} nodes")]
    BadNodeCount { devices: usize, nodes: u32 },
    #[error("benchmark `{0}` needs at least 2 nodes: insufficient nodes")]
    InsufficientNodes(String),
}

/// Declared devices and the node each one lives on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePool {
    pub devices: Vec<String>,
    pub nodes: u32,
    pub node_assignment: BTreeMap<String, u32>,
}

impl DevicePool {
    /// Devices are split into `nodes` contiguous, equally sized (±1) blocks.
    pub fn new<S: Into<String>>(devices: impl IntoIterator<Item = S>, nodes: u32) -> Result<Self, PlanError> {
        let devices: Vec<String> = devices.into_iter().map(Into::into).collect();
        if devices.is_empty() {
            return Err(PlanError::EmptyPool);
        }
        let mut seen = BTreeSet::new();
        for d in &devices {
            if !seen.insert(d) {
                return Err(PlanError::DuplicateDevice(d.clone()));
            }
        }
        if nodes == 0 || nodes as usize > devices.len() {
            return Err(PlanError::BadNodeCount {
                devices: devices.len(),
                nodes,
            });
        }
        let n = devices.len();
        let node_assignment = devices
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), (i * nodes as usize / n) as u32))
            .collect();
        Ok(Self {
            devices,
            nodes,
            node_assignment,
        })
    }

    pub fn node_of(&self, device: &str) -> u32 {
        self.node_assignment.get(device).copied().unwrap_or(0)
    }

    pub fn node_devices(&self, node: u32) -> Vec<&String> {
        self.devices.iter().filter(|d| self.node_of(d) == node).collect()
    }
}

/// One process to launch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessPlan {
    pub bench: String,
    pub rank: usize,
    pub world_size: usize,
    pub devices: Vec<String>,
    pub node: u32,
    /// Whether this process is one rank of a gang.
    pub gang: bool,
    pub env: BTreeMap<String, String>,
    /// Argument vector, `sh -c <resolved run_cmd>`.
    pub command: Vec<String>,
    pub timeout_s: f64,
}

/// Lay out the processes of one benchmark over the pool.
pub fn plan_launches(spec: &BenchmarkSpec, pool: &DevicePool, base_dir: &Path) -> Result<Vec<ProcessPlan>, PlanError> {
    if pool.devices.is_empty() {
        return Err(PlanError::EmptyPool);
    }
    let (members, gang): (Vec<&String>, bool) = match spec.scale {
        Scale::SingleDevice => (pool.devices.iter().collect(), false),
        Scale::NodeDevices => (pool.node_devices(0), true),
        Scale::MultiNode => {
            if pool.nodes < 2 {
                return Err(PlanError::InsufficientNodes(spec.name.clone()));
            }
            (pool.devices.iter().collect(), true)
        }
    };
    let world_size = members.len();
    let bench_dir = base_dir.join("data").join(&spec.name);

    Ok(members
        .into_iter()
        .enumerate()
        .map(|(rank, device)| {
            let node = pool.node_of(device);
            let mut env = spec.env.clone();
            env.insert("BENCHFORGE_BENCH".into(), spec.name.clone());
            env.insert("BENCHFORGE_DEVICE".into(), device.clone());
            env.insert("BENCHFORGE_RANK".into(), rank.to_string());
            env.insert("BENCHFORGE_WORLD_SIZE".into(), world_size.to_string());
            env.insert("BENCHFORGE_NODE".into(), node.to_string());
            env.insert("BENCHFORGE_BASE_DIR".into(), base_dir.display().to_string());
            env.insert("BENCHFORGE_BENCH_DIR".into(), bench_dir.display().to_string());
            if gang {
                env.insert("BENCHFORGE_RENDEZVOUS".into(), format!("{}@127.0.0.1", spec.name));
            }
            let bindings = Bindings {
                device_id: Some(device.clone()),
                device_count: Some(world_size),
                rank: Some(rank),
                world_size: Some(world_size),
                ..Bindings::with_dirs(base_dir, &bench_dir)
            };
            ProcessPlan {
                bench: spec.name.clone(),
                rank,
                world_size,
                devices: vec![device.clone()],
                node,
                gang,
                env,
                command: vec!["sh".into(), "-c".into(), template::render(&spec.run_cmd, &bindings)],
                timeout_s: spec.timeout_s,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize, nodes: u32) -> DevicePool {
        DevicePool::new((0..n).map(|i| format!("gpu{i}")), nodes).unwrap()
    }

    #[test]
    fn single_device_one_plan_per_device() {
        let spec = BenchmarkSpec::new("b", "run --dev {device_id} --rank {rank}");
        let plans = plan_launches(&spec, &pool(8, 1), Path::new("/base")).unwrap();
        assert_eq!(plans.len(), 8);
        let devices: BTreeSet<_> = plans.iter().map(|p| p.devices[0].clone()).collect();
        assert_eq!(devices.len(), 8);
        assert!(plans.iter().all(|p| p.devices.len() == 1 && p.world_size == 8 && !p.gang));
        assert_eq!(plans[3].command[2], "run --dev gpu3 --rank 3");
        assert_eq!(plans[3].env["BENCHFORGE_DEVICE"], "gpu3");
    }

    #[test]
    fn node_devices_is_one_gang() {
        let spec = BenchmarkSpec {
            scale: Scale::NodeDevices,
            ..BenchmarkSpec::new("g", "x")
        };
        let plans = plan_launches(&spec, &pool(8, 1), Path::new("/b")).unwrap();
        assert_eq!(plans.len(), 8);
        assert!(plans.iter().all(|p| p.gang && p.world_size == 8));
        assert_eq!(plans.iter().map(|p| p.rank).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn multi_node_needs_two_nodes() {
        let spec = BenchmarkSpec {
            scale: Scale::MultiNode,
            ..BenchmarkSpec::new("m", "x")
        };
        assert_eq!(
            plan_launches(&spec, &pool(4, 1), Path::new("/b")),
            Err(PlanError::InsufficientNodes("m".into()))
        );
        let plans = plan_launches(&spec, &pool(4, 2), Path::new("/b")).unwrap();
        assert_eq!(plans.len(), 4);
        let nodes: Vec<_> = plans.iter().map(|p| p.env["BENCHFORGE_NODE"].clone()).collect();
        assert_eq!(nodes, ["0", "0", "1", "1"]);
    }

    #[test]
    fn minimal_pool() {
        let plans = plan_launches(&BenchmarkSpec::new("b", "x"), &pool(1, 1), Path::new("/b")).unwrap();
        assert_eq!(plans.len(), 1);
    }

    #[test]
    fn pool_validation() {
        assert_eq!(DevicePool::new(Vec::<String>::new(), 1), Err(PlanError::EmptyPool));
        assert!(matches!(DevicePool::new(["a", "a"], 1), Err(PlanError::DuplicateDevice(_))));
        assert!(DevicePool::new(["a"], 2).is_err());
        let p = DevicePool::new(["a", "b", "c"], 2).unwrap();
        assert_eq!(p.node_devices(0).len() + p.node_devices(1).len(), 3);
    }
}
