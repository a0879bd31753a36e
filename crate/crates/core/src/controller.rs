//! From VM-level plans to containers and enactment actions.

use std::collections::BTreeMap;
use std::fmt;

use crate::cloud::{CloudState, StepKey};
use crate::error::{CoreError, CoreResult};
use crate::ffsipp::{SchedulingPlan, VmRef};
use crate::landscape::{Catalog, Ms};

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerAssignment {
    pub id: String,
    pub service: usize,
    pub host: VmRef,
    pub vm_type: usize,
    pub cpu: f64,
    pub ram: f64,
    pub invocations: Vec<StepKey>,
    /// Steps of this container not yet running.
    pub new_invocations: Vec<StepKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerPlan {
    pub containers: Vec<ContainerAssignment>,
    /// Container index per assigned step.
    pub step_container: BTreeMap<StepKey, usize>,
    pub leases: Vec<(VmRef, u64)>,
    pub gamma: Vec<(usize, u64)>,
}

impl ContainerPlan {
    pub fn on_host(&self, host: VmRef) -> impl Iterator<Item = &ContainerAssignment> + '_ {
        self.containers.iter().filter(move |c| c.host == host)
    }
}

/// Wraps the steps of each service type on each VM in one container sized
/// to their summed demand.
pub fn transform(plan: &SchedulingPlan) -> ContainerPlan {
    let mut by_key: BTreeMap<(VmRef, usize), ContainerAssignment> = BTreeMap::new();
    for a in &plan.assignments {
        let c = by_key.entry((a.vm, a.service)).or_insert_with(|| ContainerAssignment {
            id: format!("c_{}_st{}", a.vm.tag(), a.service),
            service: a.service,
            host: a.vm,
            vm_type: a.vm_type,
            cpu: 0.0,
            ram: 0.0,
            invocations: Vec::new(),
            new_invocations: Vec::new(),
        });
        c.cpu += a.cpu;
        c.ram += a.ram;
        c.invocations.push((a.instance, a.step));
        if !a.running {
            c.new_invocations.push((a.instance, a.step));
        }
    }
    let containers: Vec<ContainerAssignment> = by_key.into_values().collect();
    let mut step_container = BTreeMap::new();
    for (i, c) in containers.iter().enumerate() {
        for &k in &c.invocations {
            step_container.insert(k, i);
        }
    }
    ContainerPlan {
        containers,
        step_container,
        leases: plan.leases.clone(),
        gamma: plan.gamma.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    LeaseVm { vm: VmRef, vm_type: usize, btus: u64 },
    ExtendLease { vm: u32, btus: u64 },
    DeployContainer { vm: VmRef, service: usize, cpu: f64, ram: f64 },
    ResizeContainer { vm: u32, service: usize, cpu: f64, ram: f64 },
    StopContainer { vm: u32, service: usize, drop_image: bool },
    InvokeService { instance: u32, step: usize, vm: VmRef, service: usize },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::LeaseVm { .. } => "lease_vm",
            Action::ExtendLease { .. } => "extend_lease",
            Action::DeployContainer { .. } => "deploy_container",
            Action::ResizeContainer { .. } => "resize_container",
            Action::StopContainer { .. } => "stop_container",
            Action::InvokeService { .. } => "invoke_service",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = self.kind();
        match self {
            Action::LeaseVm { vm, vm_type, btus } => write!(f, "{kind}\t{}\ttype={vm_type} btus={btus}", vm.tag()),
            Action::ExtendLease { vm, btus } => write!(f, "{kind}\tk{vm}\tbtus={btus}"),
            Action::DeployContainer { vm, service, cpu, ram } => write!(f, "{kind}\t{}\tst={service} cpu={cpu} ram={ram}", vm.tag()),
            Action::ResizeContainer { vm, service, cpu, ram } => write!(f, "{kind}\tk{vm}\tst={service} cpu={cpu} ram={ram}"),
            Action::StopContainer { vm, service, drop_image } => write!(f, "{kind}\tk{vm}\tst={service} drop_image={drop_image}"),
            Action::InvokeService { instance, step, vm, service } => write!(f, "{kind}\t{}\ti={instance} s={step} st={service}", vm.tag()),
        }
    }
}

/// Container policy of an approach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContainerPolicy {
    /// Idle containers absent from the plan shrink to zero instead of stopping.
    pub retain_idle: bool,
    /// Stopping a container also discards its image.
    pub drop_images: bool,
}

/// Derives the ordered actions that turn `cloud` into the planned layout:
/// leases and extensions, then stops and shrinks a VM needs to make room,
/// then deployments and growth, then remaining stops, then invocations.
pub fn plan_actions(plan: &ContainerPlan, cloud: &CloudState, catalog: &Catalog, policy: ContainerPolicy) -> CoreResult<Vec<Action>> {
    let mut leases = Vec::new();
    for &(vm, btus) in &plan.leases {
        match vm {
            VmRef::Existing(id) => {
                cloud.vm(id)?;
                leases.push(Action::ExtendLease { vm: id, btus });
            }
            VmRef::Fresh { vm_type, .. } => leases.push(Action::LeaseVm { vm, vm_type, btus }),
        }
    }
    for c in &plan.containers {
        if let VmRef::Existing(id) = c.host {
            cloud.vm(id)?;
        }
        if let VmRef::Fresh { .. } = c.host {
            if !plan.leases.iter().any(|(v, _)| *v == c.host) {
                return Err(CoreError::InvalidPlan(format!("container {} on a VM that is not leased", c.id)));
            }
        }
    }

    let mut hoisted = Vec::new();
    let mut grows = Vec::new();
    let mut stops = Vec::new();
    let hosts: Vec<VmRef> = {
        let mut h: Vec<VmRef> = plan.containers.iter().map(|c| c.host).collect();
        h.extend(cloud.vms.keys().map(|&id| VmRef::Existing(id)));
        h.sort();
        h.dedup();
        h
    };
    for host in hosts {
        let planned: Vec<&ContainerAssignment> = plan.on_host(host).collect();
        let VmRef::Existing(id) = host else {
            for c in planned {
                grows.push(Action::DeployContainer {
                    vm: host,
                    service: c.service,
                    cpu: c.cpu,
                    ram: c.ram,
                });
            }
            continue;
        };
        let vm = cloud.vm(id)?;
        let supply = &catalog.vm_types[vm.vm_type];
        let mut freeing = Vec::new();
        let mut growing = Vec::new();
        let (mut peak_cpu, mut peak_ram) = (vm.used_cpu(), vm.used_ram());
        for c in &planned {
            match vm.containers.get(&c.service) {
                Some(cur) if cur.cpu == c.cpu && cur.ram == c.ram => {}
                Some(cur) => {
                    let a = Action::ResizeContainer {
                        vm: id,
                        service: c.service,
                        cpu: c.cpu,
                        ram: c.ram,
                    };
                    if c.cpu >= cur.cpu && c.ram >= cur.ram {
                        peak_cpu += c.cpu - cur.cpu;
                        peak_ram += c.ram - cur.ram;
                        growing.push(a);
                    } else {
                        freeing.push(a);
                    }
                }
                None => {
                    peak_cpu += c.cpu;
                    peak_ram += c.ram;
                    growing.push(Action::DeployContainer {
                        vm: host,
                        service: c.service,
                        cpu: c.cpu,
                        ram: c.ram,
                    });
                }
            }
        }
        let switching = planned.iter().any(|c| !vm.containers.contains_key(&c.service));
        for (&service, cur) in &vm.containers {
            if planned.iter().any(|c| c.service == service) {
                continue;
            }
            if !cur.invocations.is_empty() {
                return Err(CoreError::InvalidPlan(format!("running container st{service} on k{id} missing from plan")));
            }
            if policy.retain_idle && !switching {
                if cur.cpu != 0.0 || cur.ram != 0.0 {
                    freeing.push(Action::ResizeContainer {
                        vm: id,
                        service,
                        cpu: 0.0,
                        ram: 0.0,
                    });
                }
            } else {
                freeing.push(Action::StopContainer {
                    vm: id,
                    service,
                    drop_image: policy.drop_images,
                });
            }
        }
        let needs_room = peak_cpu > supply.cpu_supply + 1e-9 || peak_ram > supply.ram_supply + 1e-9;
        if needs_room || switching && policy.drop_images {
            hoisted.extend(freeing);
        } else {
            stops.extend(freeing);
        }
        grows.extend(growing);
    }

    let mut invokes = Vec::new();
    for c in &plan.containers {
        for &(instance, step) in &c.new_invocations {
            invokes.push(Action::InvokeService {
                instance,
                step,
                vm: c.host,
                service: c.service,
            });
        }
    }
    let mut out = leases;
    out.extend(hoisted);
    out.extend(grows);
    out.extend(stops);
    out.extend(invokes);
    Ok(out)
}

/// An invocation started by [`apply_actions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Invocation {
    pub key: StepKey,
    pub vm: u32,
    pub service: usize,
    /// Earliest start: when the container is ready.
    pub start: Ms,
}

/// Applies `actions` to `cloud` in order. Fresh VMs receive ids as they are
/// leased; the mapping is returned together with the started invocations.
pub fn apply_actions(cloud: &mut CloudState, catalog: &Catalog, actions: &[Action], now: Ms) -> CoreResult<(BTreeMap<VmRef, u32>, Vec<Invocation>)> {
    let mut ids: BTreeMap<VmRef, u32> = BTreeMap::new();
    let resolve = |ids: &BTreeMap<VmRef, u32>, vm: VmRef| -> CoreResult<u32> {
        match vm {
            VmRef::Existing(id) => Ok(id),
            fresh => ids.get(&fresh).copied().ok_or_else(|| CoreError::InvalidPlan(format!("{} used before lease", fresh.tag()))),
        }
    };
    let mut started = Vec::new();
    for a in actions {
        match *a {
            Action::LeaseVm { vm, vm_type, btus } => {
                let id = cloud.lease(catalog, vm_type, btus, now);
                ids.insert(vm, id);
            }
            Action::ExtendLease { vm, btus } => cloud.extend(catalog, vm, btus, now)?,
            Action::DeployContainer { vm, service, cpu, ram } => {
                let id = resolve(&ids, vm)?;
                cloud.deploy(catalog, id, service, cpu, ram, now)?;
            }
            Action::ResizeContainer { vm, service, cpu, ram } => cloud.resize(vm, service, cpu, ram)?,
            Action::StopContainer { vm, service, drop_image } => cloud.stop(vm, service, drop_image)?,
            Action::InvokeService { instance, step, vm, service } => {
                let id = resolve(&ids, vm)?;
                let host = cloud.vm_mut(id)?;
                let c = host.containers.get_mut(&service).ok_or_else(|| CoreError::InvalidPlan(format!("no container st{service} on k{id}")))?;
                c.invocations.insert((instance, step));
                started.push(Invocation {
                    key: (instance, step),
                    vm: id,
                    service,
                    start: c.ready_at.max(now),
                });
            }
        }
    }
    Ok((ids, started))
}
