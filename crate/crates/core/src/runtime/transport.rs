//! Packet transports: per-ordered-pair FIFO channels between workers.

use std::collections::VecDeque;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::time::Duration;

use super::RuntimeError;

/// A worker's view of the network.
pub trait Endpoint {
    fn send(&mut self, to: usize, packet: Vec<u8>) -> Result<(), RuntimeError>;
    /// Next packet if one is already available, with its sender.
    fn try_recv(&mut self) -> Result<Option<(usize, Vec<u8>)>, RuntimeError>;
    /// Blocks up to `timeout` for a packet to arrive; it is kept for `try_recv`.
    fn wait(&mut self, timeout: Duration) -> Result<(), RuntimeError>;
}

/// All channels of a single-threaded run, indexed `from * p + to`.
#[derive(Debug, Clone)]
pub struct Mailboxes {
    workers: usize,
    queues: Vec<VecDeque<Vec<u8>>>,
}

impl Mailboxes {
    pub fn new(workers: usize) -> Self {
        Self {
            workers,
            queues: vec![VecDeque::new(); workers * workers],
        }
    }

    pub fn endpoint(&mut self, id: usize) -> LocalEndpoint<'_> {
        LocalEndpoint { id, boxes: self }
    }

    pub fn pending(&self) -> impl Iterator<Item = (usize, usize, &Vec<u8>)> + '_ {
        let p = self.workers;
        self.queues
            .iter()
            .enumerate()
            .flat_map(move |(i, q)| q.iter().map(move |pk| (i / p, i % p, pk)))
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }
}

pub struct LocalEndpoint<'a> {
    id: usize,
    boxes: &'a mut Mailboxes,
}

impl Endpoint for LocalEndpoint<'_> {
    fn send(&mut self, to: usize, packet: Vec<u8>) -> Result<(), RuntimeError> {
        let p = self.boxes.workers;
        if to >= p {
            return Err(RuntimeError::Transport(format!("no worker {to}")));
        }
        self.boxes.queues[self.id * p + to].push_back(packet);
        Ok(())
    }

    fn try_recv(&mut self) -> Result<Option<(usize, Vec<u8>)>, RuntimeError> {
        let p = self.boxes.workers;
        for from in 0..p {
            if let Some(pk) = self.boxes.queues[from * p + self.id].pop_front() {
                return Ok(Some((from, pk)));
            }
        }
        Ok(None)
    }

    fn wait(&mut self, _timeout: Duration) -> Result<(), RuntimeError> {
        Ok(())
    }
}

/// Channel endpoint for workers running on their own threads.
pub struct ThreadEndpoint {
    id: usize,
    inbox: Receiver<(usize, Vec<u8>)>,
    peers: Vec<Sender<(usize, Vec<u8>)>>,
    stash: VecDeque<(usize, Vec<u8>)>,
}

/// One endpoint per worker, fully connected.
pub fn thread_endpoints(workers: usize) -> Vec<ThreadEndpoint> {
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..workers).map(|_| std::sync::mpsc::channel()).unzip();
    rxs.into_iter()
        .enumerate()
        .map(|(id, inbox)| ThreadEndpoint {
            id,
            inbox,
            peers: txs.clone(),
            stash: VecDeque::new(),
        })
        .collect()
}

impl ThreadEndpoint {
    /// Packets still queued for this endpoint, with their senders.
    pub fn drain(&mut self) -> Vec<(usize, Vec<u8>)> {
        let mut out: Vec<_> = self.stash.drain(..).collect();
        while let Ok(pk) = self.inbox.try_recv() {
            out.push(pk);
        }
        out
    }
}

impl Endpoint for ThreadEndpoint {
    fn send(&mut self, to: usize, packet: Vec<u8>) -> Result<(), RuntimeError> {
        self.peers
            .get(to)
            .ok_or_else(|| RuntimeError::Transport(format!("no worker {to}")))?
            .send((self.id, packet))
            .map_err(|_| RuntimeError::Transport(format!("worker {to} hung up")))
    }

    fn try_recv(&mut self) -> Result<Option<(usize, Vec<u8>)>, RuntimeError> {
        if let Some(pk) = self.stash.pop_front() {
            return Ok(Some(pk));
        }
        match self.inbox.try_recv() {
            Ok(pk) => Ok(Some(pk)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(RuntimeError::Transport("inbox disconnected".into())),
        }
    }

    fn wait(&mut self, timeout: Duration) -> Result<(), RuntimeError> {
        if !self.stash.is_empty() {
            return Ok(());
        }
        match self.inbox.recv_timeout(timeout) {
            Ok(pk) => {
                self.stash.push_back(pk);
                Ok(())
            }
            Err(RecvTimeoutError::Timeout) => Ok(()),
            Err(RecvTimeoutError::Disconnected) => Err(RuntimeError::Transport("inbox disconnected".into())),
        }
    }
}
