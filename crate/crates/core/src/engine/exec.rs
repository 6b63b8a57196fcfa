//! Coroutine-style processes on top of the event queue.
//!
//! A process is an `async` block that only ever suspends on [`Ctx::sleep`].
//! Each suspension schedules exactly one event addressed to the process, so
//! the process is resumed by the event loop in `(time, seq)` order and a run
//! stays single-threaded and deterministic.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::BTreeMap;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use super::{EngineError, EventKind, Metrics, RngStreams, SimRng, Simulation, Trace};

pub type TaskId = usize;

type Process = Pin<Box<dyn Future<Output = ()>>>;

struct Shared<W> {
    sim: RefCell<Simulation<TaskId>>,
    world: RefCell<W>,
    rngs: RefCell<RngStreams>,
    spawned: RefCell<Vec<(TaskId, Process)>>,
    next_task: Cell<TaskId>,
    /// Sequence number of the event currently being delivered.
    firing: Cell<Option<u64>>,
    /// Process being polled. A sleep always wakes the process that awaits
    /// it, even when it was created through a handle cloned from another.
    running: Cell<Option<TaskId>>,
}

/// Handle given to every process.
pub struct Ctx<W> {
    shared: Rc<Shared<W>>,
    task: TaskId,
}

impl<W> Clone for Ctx<W> {
    fn clone(&self) -> Self {
        Self { shared: Rc::clone(&self.shared), task: self.task }
    }
}

/// Result slot of a spawned process, filled when it completes.
pub struct JoinHandle<T>(Rc<RefCell<Option<T>>>);

impl<T> JoinHandle<T> {
    pub fn take(&self) -> Option<T> {
        self.0.borrow_mut().take()
    }

    pub fn is_finished(&self) -> bool {
        self.0.borrow().is_some()
    }
}

impl<T: Clone> JoinHandle<T> {
    pub fn get(&self) -> Option<T> {
        self.0.borrow().clone()
    }
}

fn spawn_on<W: 'static, F, Fut, T>(shared: &Rc<Shared<W>>, f: F) -> JoinHandle<T>
where
    F: FnOnce(Ctx<W>) -> Fut,
    Fut: Future<Output = T> + 'static,
    T: 'static,
{
    let task = shared.next_task.get();
    shared.next_task.set(task + 1);
    let slot = Rc::new(RefCell::new(None));
    let out = Rc::clone(&slot);
    let fut = f(Ctx { shared: Rc::clone(shared), task });
    let process: Process = Box::pin(async move {
        let v = fut.await;
        *out.borrow_mut() = Some(v);
    });
    shared.spawned.borrow_mut().push((task, process));
    let mut sim = shared.sim.borrow_mut();
    let now = sim.now();
    // Scheduling at the current clock cannot fail.
    sim.schedule(now, EventKind::AppStep, task).expect("spawn at current time");
    JoinHandle(slot)
}

impl<W: 'static> Ctx<W> {
    pub fn now(&self) -> f64 {
        self.shared.sim.borrow().now()
    }

    pub fn spawn<F, Fut, T>(&self, f: F) -> JoinHandle<T>
    where
        F: FnOnce(Ctx<W>) -> Fut,
        Fut: Future<Output = T> + 'static,
        T: 'static,
    {
        spawn_on(&self.shared, f)
    }

    pub fn sleep(&self, dt: f64) -> Sleep<W> {
        self.sleep_until(self.now() + dt.max(0.0), EventKind::Timer)
    }

    /// Suspend until `at` (clamped to the present), tagging the wake-up event.
    pub fn sleep_until(&self, at: f64, kind: EventKind) -> Sleep<W> {
        Sleep { ctx: self.clone(), at: at.max(self.now()), kind, seq: None }
    }

    pub fn world<R>(&self, f: impl FnOnce(&W) -> R) -> R {
        f(&self.shared.world.borrow())
    }

    pub fn world_mut<R>(&self, f: impl FnOnce(&mut W) -> R) -> R {
        f(&mut self.shared.world.borrow_mut())
    }

    pub fn with_rng<R>(&self, node: &str, purpose: &str, f: impl FnOnce(&mut SimRng) -> R) -> R {
        let mut rngs = self.shared.rngs.borrow_mut();
        f(rngs.get(node, purpose))
    }

    pub fn trace<I, K, V>(&self, node: &str, kind: &str, details: I)
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: ToString,
    {
        let mut sim = self.shared.sim.borrow_mut();
        let t = sim.now();
        sim.trace.record(t, node, kind, details);
    }

    pub fn metrics<R>(&self, f: impl FnOnce(&mut Metrics) -> R) -> R {
        f(&mut self.shared.sim.borrow_mut().metrics)
    }
}

/// Future returned by [`Ctx::sleep_until`].
pub struct Sleep<W> {
    ctx: Ctx<W>,
    at: f64,
    kind: EventKind,
    seq: Option<u64>,
}

impl<W> Future for Sleep<W> {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<()> {
        match self.seq {
            None => {
                let task = self.ctx.shared.running.get().unwrap_or(self.ctx.task);
                let (at, kind) = (self.at, self.kind);
                let seq = self
                    .ctx
                    .shared
                    .sim
                    .borrow_mut()
                    .schedule(at, kind, task)
                    .expect("sleep target is clamped to the clock");
                self.seq = Some(seq);
                Poll::Pending
            }
            Some(seq) if self.ctx.shared.firing.get() == Some(seq) => Poll::Ready(()),
            Some(_) => Poll::Pending,
        }
    }
}

/// Owns the processes and drives them from the event queue.
pub struct Runtime<W> {
    shared: Rc<Shared<W>>,
    tasks: BTreeMap<TaskId, Process>,
}

impl<W: 'static> Runtime<W> {
    pub fn new(world: W, seed: u64) -> Self {
        let shared = Rc::new(Shared {
            sim: RefCell::new(Simulation::new()),
            world: RefCell::new(world),
            rngs: RefCell::new(RngStreams::new(seed)),
            spawned: RefCell::new(Vec::new()),
            next_task: Cell::new(0),
            firing: Cell::new(None),
            running: Cell::new(None),
        });
        Self { shared, tasks: BTreeMap::new() }
    }

    pub fn spawn<F, Fut, T>(&self, f: F) -> JoinHandle<T>
    where
        F: FnOnce(Ctx<W>) -> Fut,
        Fut: Future<Output = T> + 'static,
        T: 'static,
    {
        spawn_on(&self.shared, f)
    }

    pub fn now(&self) -> f64 {
        self.shared.sim.borrow().now()
    }

    pub fn world(&self) -> Ref<'_, W> {
        self.shared.world.borrow()
    }

    pub fn world_mut(&self) -> RefMut<'_, W> {
        self.shared.world.borrow_mut()
    }

    pub fn trace(&self) -> Ref<'_, Trace> {
        Ref::map(self.shared.sim.borrow(), |s| &s.trace)
    }

    pub fn metrics(&self) -> Ref<'_, Metrics> {
        Ref::map(self.shared.sim.borrow(), |s| &s.metrics)
    }

    pub fn metrics_mut(&self) -> RefMut<'_, Metrics> {
        RefMut::map(self.shared.sim.borrow_mut(), |s| &mut s.metrics)
    }

    pub fn with_rng<R>(&self, node: &str, purpose: &str, f: impl FnOnce(&mut SimRng) -> R) -> R {
        f(self.shared.rngs.borrow_mut().get(node, purpose))
    }

    /// Processes that have not finished yet.
    pub fn live_tasks(&self) -> usize {
        self.tasks.len() + self.shared.spawned.borrow().len()
    }

    fn adopt_spawned(&mut self) {
        let new: Vec<_> = self.shared.spawned.borrow_mut().drain(..).collect();
        self.tasks.extend(new);
    }

    /// Resume processes for every event due at or before `t_end`.
    pub fn run_until(&mut self, t_end: f64) -> Result<(), EngineError> {
        let now = self.now();
        if t_end < now {
            return Err(EngineError::PastHorizon { t_end, now });
        }
        let mut cx = Context::from_waker(Waker::noop());
        loop {
            self.adopt_spawned();
            let Some(ev) = self.shared.sim.borrow_mut().scheduler.pop_due(t_end) else {
                break;
            };
            let Some(process) = self.tasks.get_mut(&ev.payload) else {
                continue;
            };
            self.shared.firing.set(Some(ev.seq));
            self.shared.running.set(Some(ev.payload));
            let done = process.as_mut().poll(&mut cx).is_ready();
            self.shared.firing.set(None);
            self.shared.running.set(None);
            if done {
                self.tasks.remove(&ev.payload);
            }
        }
        self.shared.sim.borrow_mut().scheduler.advance_to(t_end)
    }

    /// Tear down the runtime, returning the world and the recorded outputs.
    /// Unfinished processes are dropped.
    pub fn finish(mut self) -> (W, Trace, Metrics) {
        self.tasks.clear();
        self.shared.spawned.borrow_mut().clear();
        let shared = Rc::try_unwrap(self.shared).ok().expect("no process outlives the runtime");
        let sim = shared.sim.into_inner();
        (shared.world.into_inner(), sim.trace, sim.metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn processes_interleave_in_time_order() {
        let mut rt = Runtime::new(Vec::<(f64, &'static str)>::new(), 1);
        for (name, step) in [("a", 0.3), ("b", 0.5)] {
            rt.spawn(move |ctx: Ctx<Vec<(f64, &'static str)>>| async move {
                for _ in 0..3 {
                    ctx.sleep(step).await;
                    let t = ctx.now();
                    ctx.world_mut(|w| w.push((t, name)));
                }
            });
        }
        rt.run_until(10.0).unwrap();
        let order: Vec<_> = rt.world().iter().map(|x| x.1).collect();
        assert_eq!(order, vec!["a", "b", "a", "a", "b", "b"]);
        assert_eq!(rt.live_tasks(), 0);
        assert_eq!(rt.now(), 10.0);
    }

    #[test]
    fn horizon_suspends_and_resumes() {
        let mut rt = Runtime::new(0u32, 1);
        let h = rt.spawn(|ctx: Ctx<u32>| async move {
            ctx.sleep(5.0).await;
            ctx.world_mut(|w| *w += 1);
            ctx.now()
        });
        rt.run_until(4.0).unwrap();
        assert_eq!(*rt.world(), 0);
        assert!(!h.is_finished());
        rt.run_until(6.0).unwrap();
        assert_eq!(h.take(), Some(5.0));
    }

    #[test]
    fn nested_spawn_and_trace() {
        let mut rt = Runtime::new((), 9);
        rt.spawn(|ctx: Ctx<()>| async move {
            ctx.trace("n0", "start", [("k", 1)]);
            ctx.spawn(|c: Ctx<()>| async move {
                c.sleep(1.0).await;
                c.trace("n1", "child", Vec::<(String, String)>::new());
            });
            ctx.sleep(2.0).await;
            ctx.trace("n0", "end", Vec::<(String, String)>::new());
        });
        rt.run_until(3.0).unwrap();
        let kinds: Vec<_> = rt.trace().records().iter().map(|r| (r.t, r.kind.clone())).collect();
        assert_eq!(kinds, vec![(0.0, "start".into()), (1.0, "child".into()), (2.0, "end".into())]);
    }

    #[test]
    fn cloned_handle_wakes_the_awaiting_process() {
        let mut rt = Runtime::new(Vec::<f64>::new(), 2);
        rt.spawn(|ctx: Ctx<Vec<f64>>| async move {
            let other = ctx.clone();
            ctx.spawn(move |_| async move {
                other.sleep(1.0).await;
                let t = other.now();
                other.world_mut(|w| w.push(t));
            });
            ctx.sleep(3.0).await;
            let t = ctx.now();
            ctx.world_mut(|w| w.push(t));
        });
        rt.run_until(5.0).unwrap();
        assert_eq!(*rt.world(), vec![1.0, 3.0]);
    }

    #[test]
    fn same_seed_same_run() {
        let run = |seed| {
            let mut rt = Runtime::new(Vec::<u64>::new(), seed);
            rt.spawn(|ctx: Ctx<Vec<u64>>| async move {
                for _ in 0..5 {
                    let dt = ctx.with_rng("n", "delay", |r| r.random::<f64>());
                    ctx.sleep(dt).await;
                    let v = ctx.with_rng("n", "value", |r| r.random::<u64>());
                    ctx.world_mut(|w| w.push(v));
                }
            });
            rt.run_until(100.0).unwrap();
            let (w, _, _) = rt.finish();
            w
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}
