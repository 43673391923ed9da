//! In-memory sessions with idle expiry.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime};

use mindrel_core::engine::{Engine, Session};
use tokio::sync::{Mutex as AsyncMutex, MutexGuard};

pub struct Entry {
    pub engine: Engine,
    pub created: SystemTime,
    snapshot: RwLock<Arc<Session>>,
    writer: AsyncMutex<()>,
    last_active: Mutex<Instant>,
}

impl Entry {
    fn new(engine: Engine, session: Session) -> Self {
        Self {
            engine,
            created: SystemTime::now(),
            snapshot: RwLock::new(Arc::new(session)),
            writer: AsyncMutex::new(()),
            last_active: Mutex::new(Instant::now()),
        }
    }

    /// Current state; never blocks on a running update.
    pub fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Exclusive right to replace the state, or `None` if another update holds it.
    pub fn try_writer(&self) -> Option<MutexGuard<'_, ()>> {
        self.writer.try_lock().ok()
    }

    /// Callers must hold the guard from [`try_writer`](Self::try_writer).
    pub fn publish(&self, _guard: &MutexGuard<'_, ()>, session: Session) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(session);
    }

    fn touch(&self, now: Instant) {
        *self.last_active.lock().expect("activity lock") = now;
    }

    fn expired(&self, now: Instant, ttl: Duration) -> bool {
        now.duration_since(*self.last_active.lock().expect("activity lock")) >= ttl
    }
}

pub struct SessionStore {
    ttl: Duration,
    entries: Mutex<HashMap<String, Arc<Entry>>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn insert(&self, engine: Engine, session: Session) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let entry = Arc::new(Entry::new(engine, session));
        self.entries.lock().expect("store lock").insert(id.clone(), entry);
        id
    }

    /// Live entry by id; refreshes its idle clock. Expired entries are dropped.
    pub fn get(&self, id: &str) -> Option<Arc<Entry>> {
        let now = Instant::now();
        let mut map = self.entries.lock().expect("store lock");
        let entry = map.get(id)?.clone();
        if entry.expired(now, self.ttl) {
            map.remove(id);
            return None;
        }
        entry.touch(now);
        Some(entry)
    }

    /// Drops every expired entry; returns how many were removed.
    pub fn sweep(&self) -> usize {
        let now = Instant::now();
        let mut map = self.entries.lock().expect("store lock");
        let before = map.len();
        map.retain(|_, e| !e.expired(now, self.ttl));
        before - map.len()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
