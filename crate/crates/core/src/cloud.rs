//! Leased VM instances with their image caches and containers.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{CoreError, CoreResult};
use crate::landscape::{ms, secs, Catalog, Ms};

/// Step of a process instance: `(instance id, step id)`.
pub type StepKey = (u32, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub service: usize,
    pub cpu: f64,
    pub ram: f64,
    pub ready_at: Ms,
    pub invocations: BTreeSet<StepKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmRuntime {
    pub id: u32,
    pub vm_type: usize,
    pub leased_at: Ms,
    pub ready_at: Ms,
    pub lease_end: Ms,
    pub btus: u64,
    /// Service images and the time they finish pulling.
    pub images: BTreeMap<usize, Ms>,
    pub containers: BTreeMap<usize, Container>,
}

impl VmRuntime {
    pub fn used_cpu(&self) -> f64 {
        self.containers.values().map(|c| c.cpu).sum()
    }

    pub fn used_ram(&self) -> f64 {
        self.containers.values().map(|c| c.ram).sum()
    }

    pub fn is_idle(&self) -> bool {
        self.containers.values().all(|c| c.invocations.is_empty())
    }

    pub fn remaining_lease(&self, now: Ms) -> Ms {
        (self.lease_end - now).max(0)
    }

    /// Time at which an invocation of `service` placed at `now` can start,
    /// following the pull and container-start latencies.
    pub fn start_time(&self, catalog: &Catalog, service: usize, now: Ms) -> Ms {
        if let Some(c) = self.containers.get(&service) {
            return c.ready_at.max(now);
        }
        let svc = &catalog.services[service];
        let image = self.images.get(&service).copied().unwrap_or_else(|| self.ready_at.max(now) + ms(svc.image_pull_time));
        image.max(now) + ms(svc.container_start_time)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CloudState {
    pub vms: BTreeMap<u32, VmRuntime>,
    next_id: u32,
    pub leasing_cost: f64,
    pub btus_billed: u64,
}

impl CloudState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vm(&self, id: u32) -> CoreResult<&VmRuntime> {
        self.vms.get(&id).ok_or(CoreError::UnknownVm(id))
    }

    pub fn vm_mut(&mut self, id: u32) -> CoreResult<&mut VmRuntime> {
        self.vms.get_mut(&id).ok_or(CoreError::UnknownVm(id))
    }

    /// Leases a new instance of `vm_type` for `btus` units and bills them.
    pub fn lease(&mut self, catalog: &Catalog, vm_type: usize, btus: u64, now: Ms) -> u32 {
        let t = &catalog.vm_types[vm_type];
        let id = self.next_id;
        self.next_id += 1;
        self.vms.insert(
            id,
            VmRuntime {
                id,
                vm_type,
                leased_at: now,
                ready_at: now + ms(t.startup_time),
                lease_end: now + btus as Ms * ms(t.btu_length),
                btus,
                images: BTreeMap::new(),
                containers: BTreeMap::new(),
            },
        );
        self.bill(t.cost_per_btu, btus);
        id
    }

    pub fn extend(&mut self, catalog: &Catalog, id: u32, btus: u64, now: Ms) -> CoreResult<()> {
        let vm = self.vm_mut(id)?;
        let t = &catalog.vm_types[vm.vm_type];
        vm.lease_end = vm.lease_end.max(now) + btus as Ms * ms(t.btu_length);
        vm.btus += btus;
        let price = t.cost_per_btu;
        self.bill(price, btus);
        Ok(())
    }

    fn bill(&mut self, price: f64, btus: u64) {
        self.leasing_cost += price * btus as f64;
        self.btus_billed += btus;
    }

    pub fn count_of_type(&self, vm_type: usize) -> u32 {
        self.vms.values().filter(|v| v.vm_type == vm_type).count() as u32
    }

    /// Creates the container for `service` on `id`, pulling the image first
    /// when it is not cached. Returns the container's ready time.
    pub fn deploy(&mut self, catalog: &Catalog, id: u32, service: usize, cpu: f64, ram: f64, now: Ms) -> CoreResult<Ms> {
        let vm = self.vm_mut(id)?;
        let svc = &catalog.services[service];
        let ready_vm = vm.ready_at.max(now);
        let image = *vm.images.entry(service).or_insert(ready_vm + ms(svc.image_pull_time));
        let ready_at = image.max(now) + ms(svc.container_start_time);
        vm.containers.insert(
            service,
            Container {
                service,
                cpu,
                ram,
                ready_at,
                invocations: BTreeSet::new(),
            },
        );
        Ok(ready_at)
    }

    pub fn resize(&mut self, id: u32, service: usize, cpu: f64, ram: f64) -> CoreResult<()> {
        let vm = self.vm_mut(id)?;
        let c = vm.containers.get_mut(&service).ok_or(CoreError::UnknownVm(id))?;
        c.cpu = cpu;
        c.ram = ram;
        Ok(())
    }

    /// Removes the container; with `drop_image` the cached image goes too.
    pub fn stop(&mut self, id: u32, service: usize, drop_image: bool) -> CoreResult<()> {
        let vm = self.vm_mut(id)?;
        vm.containers.remove(&service);
        if drop_image {
            vm.images.remove(&service);
        }
        Ok(())
    }

    pub fn terminate(&mut self, id: u32) -> Option<VmRuntime> {
        self.vms.remove(&id)
    }

    pub fn leased_cores(&self, catalog: &Catalog) -> f64 {
        self.vms.values().map(|v| catalog.vm_types[v.vm_type].cpu_supply / 100.0).sum::<f64>() + 0.0
    }

    /// Container sizes per VM never exceed the VM's supply.
    pub fn check_capacity(&self, catalog: &Catalog) -> Result<(), String> {
        for vm in self.vms.values() {
            let t = &catalog.vm_types[vm.vm_type];
            if vm.used_cpu() > t.cpu_supply + 1e-6 || vm.used_ram() > t.ram_supply + 1e-6 {
                return Err(format!("vm {} over capacity: cpu {} of {}, ram {} of {}", vm.id, vm.used_cpu(), t.cpu_supply, vm.used_ram(), t.ram_supply));
            }
        }
        Ok(())
    }

    pub fn remaining_lease_secs(&self, id: u32, now: Ms) -> f64 {
        self.vms.get(&id).map_or(0.0, |v| secs(v.remaining_lease(now)))
    }
}
