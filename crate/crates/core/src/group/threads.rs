//! In-process transport: one participant per thread.
//!
//! Collectives meet at a per-group rendezvous. Every member posts its
//! contribution, waits until all members have posted, then pulls what it
//! needs straight out of the other members' send regions into its own
//! receive region. A second phase holds every member inside the collective
//! until all copies are finished, so no send region is released early.
//! Data crosses between threads exactly once, with no intermediate message
//! buffer.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::thread;
use std::time::Duration;

use super::{copy_runs, shifted, Link, ProcessGroup};
use crate::error::{Error, Result};
use crate::layout::RoundLayout;

const POLL: Duration = Duration::from_millis(50);

/// Run `f` on `p` participant threads, each handed its world group.
/// Results come back in rank order. A panic in any participant aborts the
/// collectives of the others and is re-raised here.
pub fn run<T, F>(p: usize, f: F) -> Vec<T>
where
    F: Fn(ProcessGroup) -> T + Sync,
    T: Send,
{
    assert!(p >= 1, "need at least one participant");
    let shared = Arc::new(Shared::default());
    let world = shared.rendezvous(0, p);
    let f = &f;

    let outcomes: Vec<thread::Result<T>> = thread::scope(|s| {
        let handles: Vec<_> = (0..p)
            .map(|rank| {
                let link = ThreadLink { shared: Arc::clone(&shared), rdv: Arc::clone(&world), index: rank };
                let shared = Arc::clone(&shared);
                thread::Builder::new()
                    .name(format!("rank-{rank}"))
                    .spawn_scoped(s, move || {
                        let group = ProcessGroup::world(rank, p, Box::new(link));
                        let out = panic::catch_unwind(AssertUnwindSafe(|| f(group)));
                        if out.is_err() {
                            shared.aborted.store(true, Ordering::SeqCst);
                        }
                        out
                    })
                    .expect("failed to spawn participant thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("participant thread vanished")).collect()
    });

    let mut results = Vec::with_capacity(p);
    for out in outcomes {
        match out {
            Ok(v) => results.push(v),
            Err(payload) => panic::resume_unwind(payload),
        }
    }
    results
}

#[derive(Default)]
struct Shared {
    registry: Mutex<HashMap<u64, Weak<Rendezvous>>>,
    aborted: AtomicBool,
}

impl Shared {
    fn rendezvous(&self, id: u64, size: usize) -> Arc<Rendezvous> {
        let mut map = self.registry.lock().unwrap();
        if let Some(rdv) = map.get(&id).and_then(Weak::upgrade) {
            return rdv;
        }
        map.retain(|_, w| w.strong_count() > 0);
        let rdv = Arc::new(Rendezvous::new(size));
        map.insert(id, Arc::downgrade(&rdv));
        rdv
    }
}

#[derive(Clone, Copy)]
struct SendPtr {
    ptr: *const u8,
    len: usize,
}

// SAFETY: the pointer is only dereferenced while its owner is parked inside
// the same collective, holding a shared borrow of the region.
unsafe impl Send for SendPtr {}

enum Contribution {
    Exchange(Vec<Vec<u8>>),
    Alltoall { layout: RoundLayout, send: SendPtr },
}

struct Post {
    seq: u32,
    what: Contribution,
}

#[derive(Clone)]
enum Verdict {
    Ok,
    LayoutMismatch(usize),
    Protocol(String),
}

struct State {
    gen: u64,
    posts: Vec<Option<Post>>,
    arrived: usize,
    ready: bool,
    done: usize,
    verdict: Verdict,
}

struct Rendezvous {
    size: usize,
    state: Mutex<State>,
    cv: Condvar,
}

impl Rendezvous {
    fn new(size: usize) -> Self {
        Rendezvous {
            size,
            state: Mutex::new(State {
                gen: 0,
                posts: (0..size).map(|_| None).collect(),
                arrived: 0,
                ready: false,
                done: 0,
                verdict: Verdict::Ok,
            }),
            cv: Condvar::new(),
        }
    }

    fn wait<'a>(&self, shared: &Shared, guard: MutexGuard<'a, State>) -> Result<MutexGuard<'a, State>> {
        if shared.aborted.load(Ordering::SeqCst) {
            return Err(Error::Protocol("collective aborted: a participant panicked".into()));
        }
        Ok(self.cv.wait_timeout(guard, POLL).unwrap().0)
    }

    /// Post, wait for everyone, run `work` on the full set of posts with the
    /// lock released, then wait for everyone to finish.
    fn collective<R>(
        &self,
        shared: &Shared,
        index: usize,
        post: Post,
        take: impl FnOnce(&mut [Option<Post>]) -> R,
        work: impl FnOnce(R) -> Result<()>,
    ) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        st.posts[index] = Some(post);
        st.arrived += 1;
        if st.arrived == self.size {
            st.verdict = judge(&st.posts);
            st.ready = true;
            self.cv.notify_all();
        } else {
            while !st.ready {
                st = self.wait(shared, st)?;
            }
        }
        let verdict = st.verdict.clone();
        let taken = take(&mut st.posts);
        drop(st);

        let outcome = match verdict {
            Verdict::Ok => work(taken),
            Verdict::LayoutMismatch(rank) => Err(Error::LayoutMismatch { rank }),
            Verdict::Protocol(msg) => Err(Error::Protocol(msg)),
        };

        let mut st = self.state.lock().unwrap();
        st.done += 1;
        if st.done == self.size {
            st.posts.iter_mut().for_each(|p| *p = None);
            st.arrived = 0;
            st.ready = false;
            st.done = 0;
            st.verdict = Verdict::Ok;
            st.gen += 1;
            self.cv.notify_all();
        } else {
            let gen = st.gen;
            while st.gen == gen {
                st = self.wait(shared, st)?;
            }
        }
        outcome
    }
}

fn judge(posts: &[Option<Post>]) -> Verdict {
    let first = posts[0].as_ref().expect("all members posted");
    for (rank, post) in posts.iter().enumerate().skip(1) {
        let post = post.as_ref().expect("all members posted");
        if post.seq != first.seq {
            return Verdict::Protocol(format!(
                "member {rank} is at collective {} while member 0 is at {}",
                post.seq, first.seq
            ));
        }
        match (&first.what, &post.what) {
            (Contribution::Exchange(_), Contribution::Exchange(_)) => {}
            (Contribution::Alltoall { layout: a, .. }, Contribution::Alltoall { layout: b, .. }) => {
                if a != b {
                    return Verdict::LayoutMismatch(rank);
                }
            }
            _ => return Verdict::Protocol(format!("member {rank} called a different collective")),
        }
    }
    Verdict::Ok
}

struct ThreadLink {
    shared: Arc<Shared>,
    rdv: Arc<Rendezvous>,
    index: usize,
}

impl Link for ThreadLink {
    fn exchange(&mut self, seq: u32, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        let index = self.index;
        let mut incoming = Vec::new();
        self.rdv.collective(
            &self.shared,
            index,
            Post { seq, what: Contribution::Exchange(outgoing) },
            |posts| {
                posts
                    .iter_mut()
                    .map(|p| match p.as_mut().map(|p| &mut p.what) {
                        Some(Contribution::Exchange(msgs)) => std::mem::take(&mut msgs[index]),
                        _ => Vec::new(),
                    })
                    .collect::<Vec<_>>()
            },
            |msgs| {
                incoming = msgs;
                Ok(())
            },
        )?;
        Ok(incoming)
    }

    fn alltoall(&mut self, seq: u32, send: &[u8], recv: &mut [u8], layout: &RoundLayout) -> Result<()> {
        let index = self.index;
        let post = Post {
            seq,
            what: Contribution::Alltoall {
                layout: layout.clone(),
                send: SendPtr { ptr: send.as_ptr(), len: send.len() },
            },
        };
        self.rdv.collective(
            &self.shared,
            index,
            post,
            |posts| {
                posts
                    .iter()
                    .map(|p| match p.as_ref().map(|p| &p.what) {
                        Some(Contribution::Alltoall { send, .. }) => *send,
                        _ => SendPtr { ptr: std::ptr::null(), len: 0 },
                    })
                    .collect::<Vec<_>>()
            },
            |sources| {
                let template = layout.run_template();
                if template.is_empty() {
                    return Ok(());
                }
                let stride = layout.unit_stride_bytes();
                for (a, src) in sources.iter().enumerate() {
                    // SAFETY: member `a` posted this region and stays inside
                    // the collective, holding its shared borrow, until every
                    // member has passed the completion phase. Nobody writes
                    // to a send region, and `recv` belongs to this member
                    // alone.
                    let src = unsafe { std::slice::from_raw_parts(src.ptr, src.len) };
                    copy_runs(src, shifted(&template, index, stride), recv, shifted(&template, a, stride));
                }
                Ok(())
            },
        )
    }

    fn derive(&self, id: u64, members: &[usize], index: usize) -> Result<Box<dyn Link>> {
        let rdv = self.shared.rendezvous(id, members.len());
        if rdv.size != members.len() {
            return Err(Error::Protocol(format!(
                "group {id:#x} already exists with size {}, not {}",
                rdv.size,
                members.len()
            )));
        }
        Ok(Box::new(ThreadLink { shared: Arc::clone(&self.shared), rdv, index }))
    }
}
