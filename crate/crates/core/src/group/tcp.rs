//! TCP transport: one participant per process (or per thread on loopback).
//!
//! Setup: rank 0 listens on the root address. Every other rank binds its own
//! listener, connects to the root, sends its rank as a bare `u32` and then a
//! setup frame carrying its listener address. Once all ranks have joined the
//! root answers each of them with the address table, and the ranks complete
//! a full mesh: rank `i` connects to every rank `0 < j < i` (again sending
//! its rank first) and accepts from every rank above it.
//!
//! After setup one reader thread per connection drains incoming frames into
//! a mailbox keyed by `(group, sequence, source)`, so writes never block on
//! a peer that is itself busy writing.

use std::collections::{HashMap, VecDeque};
use std::io::{ErrorKind, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{self, SETUP_GROUP};
use super::{copy_runs, shifted, Link, ProcessGroup};
use crate::error::{Error, Result};
use crate::layout::{RoundLayout, Run};

#[derive(Debug, Clone)]
pub struct TcpOptions {
    /// Upper bound on connection setup and on any single receive.
    pub timeout: Duration,
}

impl Default for TcpOptions {
    fn default() -> Self {
        TcpOptions { timeout: Duration::from_secs(30) }
    }
}

/// Join a `size`-rank world as `rank`. Rank 0 binds `root` itself.
pub fn join(rank: usize, size: usize, root: &str, opts: &TcpOptions) -> Result<ProcessGroup> {
    if rank >= size {
        return Err(Error::RankOutOfRange { rank, size });
    }
    if rank == 0 {
        serve_root(TcpListener::bind(root)?, size, opts)
    } else {
        join_peer(rank, size, root, opts)
    }
}

/// Run `f` on `p` loopback ranks, one thread each. Results in rank order.
pub fn run_local<T, F>(p: usize, opts: &TcpOptions, f: F) -> Result<Vec<T>>
where
    F: Fn(ProcessGroup) -> T + Sync,
    T: Send,
{
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let root = listener.local_addr()?.to_string();
    let f = &f;
    let root = &root;
    thread::scope(|s| {
        let mut listener = Some(listener);
        let handles: Vec<_> = (0..p)
            .map(|rank| {
                let listener = if rank == 0 { listener.take() } else { None };
                s.spawn(move || -> Result<T> {
                    let group = match listener {
                        Some(l) => serve_root(l, p, opts)?,
                        None => join_peer(rank, p, root, opts)?,
                    };
                    Ok(f(group))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e))).collect()
    })
}

/// Act as rank 0 on an already bound listener.
pub fn serve_root(listener: TcpListener, size: usize, opts: &TcpOptions) -> Result<ProcessGroup> {
    let deadline = Instant::now() + opts.timeout;
    let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
    let mut addrs = vec![listener.local_addr()?.to_string(); size];

    listener.set_nonblocking(true)?;
    let mut joined = 0;
    while joined + 1 < size {
        let mut s = accept_until(&listener, deadline)?;
        s.set_read_timeout(Some(opts.timeout))?;
        let rank = wire::read_rank(&mut s)? as usize;
        if rank == 0 || rank >= size || streams[rank].is_some() {
            return Err(Error::Protocol(format!("unexpected join from rank {rank}")));
        }
        let (h, payload) = wire::read_frame(&mut s)?;
        if h.group != SETUP_GROUP || h.src as usize != rank {
            return Err(Error::Protocol(format!("rank {rank} sent a bad setup frame")));
        }
        addrs[rank] = String::from_utf8(payload)
            .map_err(|_| Error::Protocol(format!("rank {rank} sent a non-UTF-8 address")))?;
        streams[rank] = Some(s);
        joined += 1;
    }

    let table = addrs.join("\n");
    for (rank, s) in streams.iter_mut().enumerate() {
        if let Some(s) = s {
            wire::write_frame(s, SETUP_GROUP, 1, 0, table.as_bytes())
                .map_err(|e| Error::Transport { peer: rank, msg: e.to_string() })?;
        }
    }
    Net::start(0, streams, opts)
}

fn join_peer(rank: usize, size: usize, root: &str, opts: &TcpOptions) -> Result<ProcessGroup> {
    let deadline = Instant::now() + opts.timeout;
    let mut to_root = connect_until(root, deadline)?;
    to_root.set_read_timeout(Some(opts.timeout))?;

    let listener = TcpListener::bind((to_root.local_addr()?.ip(), 0))?;
    wire::write_rank(&mut to_root, rank as u32)?;
    let me = listener.local_addr()?.to_string();
    wire::write_frame(&mut to_root, SETUP_GROUP, 0, rank as u32, me.as_bytes())?;

    let (h, payload) = wire::read_frame(&mut to_root)?;
    if h.group != SETUP_GROUP || h.seq != 1 {
        return Err(Error::Protocol("expected the address table from rank 0".into()));
    }
    let table =
        String::from_utf8(payload).map_err(|_| Error::Protocol("address table is not UTF-8".into()))?;
    let addrs: Vec<&str> = table.split('\n').collect();
    if addrs.len() != size {
        return Err(Error::Protocol(format!("address table lists {} ranks, expected {size}", addrs.len())));
    }

    let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
    streams[0] = Some(to_root);
    for (j, addr) in addrs.iter().enumerate().take(rank).skip(1) {
        let mut s = connect_until(addr, deadline)?;
        wire::write_rank(&mut s, rank as u32)
            .map_err(|e| Error::Transport { peer: j, msg: e.to_string() })?;
        streams[j] = Some(s);
    }
    listener.set_nonblocking(true)?;
    for _ in rank + 1..size {
        let mut s = accept_until(&listener, deadline)?;
        s.set_read_timeout(Some(opts.timeout))?;
        let from = wire::read_rank(&mut s)? as usize;
        if from <= rank || from >= size || streams[from].is_some() {
            return Err(Error::Protocol(format!("unexpected mesh connection from rank {from}")));
        }
        streams[from] = Some(s);
    }
    Net::start(rank, streams, opts)
}

fn accept_until(listener: &TcpListener, deadline: Instant) -> Result<TcpStream> {
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false)?;
                return Ok(s);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(Error::Protocol("timed out waiting for ranks to connect".into()));
                }
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn connect_until(addr: &str, deadline: Instant) -> Result<TcpStream> {
    loop {
        let attempt = addr
            .to_socket_addrs()
            .and_then(|mut it| {
                it.next().ok_or_else(|| std::io::Error::new(ErrorKind::NotFound, "no address"))
            })
            .and_then(TcpStream::connect);
        match attempt {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => {
                if Instant::now() >= deadline {
                    return Err(Error::Protocol(format!("could not connect to {addr}: {e}")));
                }
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

type Key = (u64, u32, u32);

#[derive(Default)]
struct InboxState {
    frames: HashMap<Key, VecDeque<Vec<u8>>>,
    failed: HashMap<usize, String>,
}

#[derive(Default)]
struct Inbox {
    state: Mutex<InboxState>,
    cv: Condvar,
}

struct Net {
    rank: usize,
    writers: Vec<Option<Mutex<TcpStream>>>,
    inbox: Arc<Inbox>,
    timeout: Duration,
}

impl Net {
    fn start(rank: usize, streams: Vec<Option<TcpStream>>, opts: &TcpOptions) -> Result<ProcessGroup> {
        let size = streams.len();
        let inbox = Arc::new(Inbox::default());
        let mut writers = Vec::with_capacity(size);
        for (peer, s) in streams.into_iter().enumerate() {
            let Some(s) = s else {
                writers.push(None);
                continue;
            };
            s.set_read_timeout(None)?;
            s.set_nodelay(true)?;
            let mut reader = s.try_clone()?;
            let inbox = Arc::clone(&inbox);
            thread::Builder::new().name(format!("tcp-rx-{rank}-{peer}")).spawn(move || loop {
                match wire::read_frame(&mut reader) {
                    Ok((h, payload)) => {
                        let mut st = inbox.state.lock().unwrap();
                        st.frames.entry((h.group, h.seq, h.src)).or_default().push_back(payload);
                        inbox.cv.notify_all();
                    }
                    Err(e) => {
                        let mut st = inbox.state.lock().unwrap();
                        st.failed.insert(peer, e.to_string());
                        inbox.cv.notify_all();
                        break;
                    }
                }
            })?;
            writers.push(Some(Mutex::new(s)));
        }
        let net = Arc::new(Net { rank, writers, inbox, timeout: opts.timeout });
        let link = TcpLink { net, group: 0, members: (0..size).collect(), index: rank };
        Ok(ProcessGroup::world(rank, size, Box::new(link)))
    }

    fn send(&self, peer: usize, frame: &[u8]) -> Result<()> {
        let w = self.writers[peer]
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("no connection from {} to itself", self.rank)))?;
        let mut s = w.lock().unwrap();
        s.write_all(frame).map_err(|e| Error::Transport { peer, msg: e.to_string() })
    }

    fn recv(&self, peer: usize, key: Key) -> Result<Vec<u8>> {
        let deadline = Instant::now() + self.timeout;
        let mut st = self.inbox.state.lock().unwrap();
        loop {
            if let Some(q) = st.frames.get_mut(&key) {
                if let Some(payload) = q.pop_front() {
                    if q.is_empty() {
                        st.frames.remove(&key);
                    }
                    return Ok(payload);
                }
            }
            if let Some(msg) = st.failed.get(&peer) {
                return Err(Error::Transport { peer, msg: msg.clone() });
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Protocol(format!(
                    "timed out after {:?} waiting for group {:#x} sequence {} from rank {peer}",
                    self.timeout, key.0, key.1
                )));
            }
            st = self.inbox.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
    }
}

impl Drop for Net {
    fn drop(&mut self) {
        // write side only: unread inbound data must not turn into a reset
        for w in self.writers.iter().flatten() {
            let _ = w.lock().unwrap().shutdown(Shutdown::Write);
        }
    }
}

struct TcpLink {
    net: Arc<Net>,
    group: u64,
    /// World rank of each group member.
    members: Vec<usize>,
    index: usize,
}

impl TcpLink {
    fn recv_from(&self, a: usize, seq: u32) -> Result<Vec<u8>> {
        self.net.recv(self.members[a], (self.group, seq, a as u32))
    }
}

impl Link for TcpLink {
    fn exchange(&mut self, seq: u32, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        let mut own = Vec::new();
        for (b, msg) in outgoing.into_iter().enumerate() {
            if b == self.index {
                own = msg;
                continue;
            }
            let mut frame = wire::frame_with_capacity(msg.len());
            frame.extend_from_slice(&msg);
            wire::seal_frame(&mut frame, self.group, seq, self.index as u32);
            self.net.send(self.members[b], &frame)?;
        }
        let mut incoming = Vec::with_capacity(self.members.len());
        for a in 0..self.members.len() {
            if a == self.index {
                incoming.push(std::mem::take(&mut own));
            } else {
                incoming.push(self.recv_from(a, seq)?);
            }
        }
        Ok(incoming)
    }

    fn alltoall(&mut self, seq: u32, send: &[u8], recv: &mut [u8], layout: &RoundLayout) -> Result<()> {
        let template = layout.run_template();
        if template.is_empty() {
            return Ok(());
        }
        let stride = layout.unit_stride_bytes();
        let unit_bytes = layout.unit_bytes();
        let me = self.index;

        for b in (0..self.members.len()).filter(|&b| b != me) {
            let mut frame = wire::frame_with_capacity(unit_bytes);
            for r in shifted(&template, b, stride) {
                frame.extend_from_slice(&send[r.offset..r.end()]);
            }
            wire::seal_frame(&mut frame, self.group, seq, me as u32);
            self.net.send(self.members[b], &frame)?;
        }
        copy_runs(send, shifted(&template, me, stride), recv, shifted(&template, me, stride));

        for a in (0..self.members.len()).filter(|&a| a != me) {
            let payload = self.recv_from(a, seq)?;
            if payload.len() != unit_bytes {
                return Err(Error::Protocol(format!(
                    "rank {a} sent {} bytes, layout expects {unit_bytes}",
                    payload.len()
                )));
            }
            copy_runs(&payload, [Run { offset: 0, len: unit_bytes }], recv, shifted(&template, a, stride));
        }
        Ok(())
    }

    fn derive(&self, id: u64, members: &[usize], index: usize) -> Result<Box<dyn Link>> {
        Ok(Box::new(TcpLink {
            net: Arc::clone(&self.net),
            group: id,
            members: members.iter().map(|&m| self.members[m]).collect(),
            index,
        }))
    }
}
