use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicUsize, Ordering::SeqCst};
use std::sync::Mutex;

use cloudedge_core::mdp::OBSERVATION_DIM;
use cloudedge_core::nn::{BlobError, Mlp, MlpSpec, ParamBlob};

/// Result of one inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub action: f32,
    /// Version of the parameters that produced it.
    pub version: u64,
    /// Times the reader lost a race with a toggle and had to re-acquire.
    pub retries: u32,
}

/// Two actor slots: inference reads the active one while new weights are
/// written into the other, which is then made active with one atomic store.
///
/// A reader registers in its slot's counter and re-checks that the slot is
/// still active; the writer fills the inactive slot only once its counter
/// is zero. Readers therefore never see a slot being written and never
/// wait on the writer.
pub struct DoubleBufferedActor {
    slots: [UnsafeCell<Mlp<f32>>; 2],
    readers: [AtomicUsize; 2],
    active: AtomicUsize,
    writer: Mutex<()>,
    spec: MlpSpec,
}

// Slot access is coordinated by `active`, `readers` and the writer mutex.
unsafe impl Sync for DoubleBufferedActor {}
unsafe impl Send for DoubleBufferedActor {}

impl std::fmt::Debug for DoubleBufferedActor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DoubleBufferedActor")
            .field("active", &self.active.load(SeqCst))
            .finish_non_exhaustive()
    }
}

impl DoubleBufferedActor {
    pub fn new(initial: Mlp<f32>) -> Self {
        let spec = initial.spec().clone();
        Self {
            slots: [UnsafeCell::new(initial.clone()), UnsafeCell::new(initial)],
            readers: [AtomicUsize::new(0), AtomicUsize::new(0)],
            active: AtomicUsize::new(0),
            writer: Mutex::new(()),
            spec,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn acquire(&self) -> (usize, u32) {
        let mut retries = 0;
        loop {
            let i = self.active.load(SeqCst);
            self.readers[i].fetch_add(1, SeqCst);
            if self.active.load(SeqCst) == i {
                return (i, retries);
            }
            self.readers[i].fetch_sub(1, SeqCst);
            retries += 1;
        }
    }

    /// Runs `f` on the active parameters.
    pub fn with_active<R>(&self, f: impl FnOnce(&Mlp<f32>) -> R) -> (R, u32) {
        let (i, retries) = self.acquire();
        // SAFETY: slot `i` is registered as read; the writer never touches a
        // slot with a non-zero reader count.
        let out = f(unsafe { &*self.slots[i].get() });
        self.readers[i].fetch_sub(1, SeqCst);
        (out, retries)
    }

    pub fn infer(&self, observation: &[f32; OBSERVATION_DIM]) -> Inference {
        let ((action, version), retries) = self.with_active(|net| {
            let y = net.predict(observation).expect("actor input width");
            (y[0], net.version())
        });
        Inference {
            action,
            version,
            retries,
        }
    }

    /// Version of the active parameters.
    pub fn version(&self) -> u64 {
        self.with_active(|n| n.version()).0
    }

    /// Copy of the active network.
    pub fn snapshot(&self) -> Mlp<f32> {
        self.with_active(|n| n.clone()).0
    }

    /// Writes `net` into the inactive slot and makes it active.
    pub fn apply(&self, net: Mlp<f32>) -> Result<u64, BlobError> {
        if net.spec() != &self.spec {
            return Err(BlobError::SpecMismatch {
                expected: self.spec.spec_hash(),
                got: net.spec().spec_hash(),
            });
        }
        let _w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let inactive = 1 - self.active.load(SeqCst);
        while self.readers[inactive].load(SeqCst) != 0 {
            std::hint::spin_loop();
            std::thread::yield_now();
        }
        let version = net.version();
        // SAFETY: the slot is inactive, has no registered readers, and new
        // readers back off because `active` does not point at it.
        unsafe {
            *self.slots[inactive].get() = net;
        }
        self.active.store(inactive, SeqCst);
        Ok(version)
    }

    /// Decodes a serialised blob and applies it. A bad blob leaves the
    /// active actor untouched.
    pub fn apply_blob(&self, bytes: &[u8]) -> Result<u64, BlobError> {
        let net = ParamBlob::from_bytes(bytes)?.into_net(&self.spec)?;
        self.apply(net)
    }
}
