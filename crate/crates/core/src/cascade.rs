//! CASCADE information reconciliation.
//!
//! Alice only ever answers parity queries; Bob drives the protocol over a
//! [`MessageChannel`]. Every parity bit Alice sends is counted as leaked.
//! Parities Bob can infer from ones he already holds (the complement of a
//! half-block, repeated queries) are never requested again.

use std::collections::HashMap;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Registry;
use crate::rng::{derive_seed, Domain, StreamRng};
use crate::stats::h2;

pub const PASSES: usize = 4;
pub const VERIFICATION_PARITIES: usize = 64;
/// First-pass block size is `ceil(BLOCK_CONSTANT / error_estimate)`.
pub const BLOCK_CONSTANT: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum CascadeError {
    #[error("strings have lengths {alice} and {bob}")]
    Length { alice: usize, bob: usize },
    #[error("empty input")]
    Empty,
    #[error("error-rate estimate {0} outside (0, 0.5)")]
    Estimate(f64),
    #[error("bits must be 0 or 1")]
    NotABit,
    #[error("efficiency undefined at error rate {0}")]
    Undefined(f64),
    #[error("channel failure: {0}")]
    Channel(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// Public parameters both parties derive the block schedule from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub length: usize,
    pub error_estimate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Request {
    Start(SessionParams),
    /// Parities of every top-level block of a pass.
    BlockParities {
        pass: usize,
    },
    /// Parity of positions `start..end` of a pass's permuted order.
    RangeParity {
        pass: usize,
        start: usize,
        end: usize,
    },
    /// Parities of `count` random subsets drawn from `seed`.
    Verify {
        seed: u64,
        count: usize,
    },
    Finish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Ack,
    Parities(Vec<u8>),
    Parity(u8),
    Error(String),
}

impl Response {
    /// Parity bits carried by this message.
    pub fn disclosed_bits(&self) -> usize {
        match self {
            Response::Parities(p) => p.len(),
            Response::Parity(_) => 1,
            _ => 0,
        }
    }
}

/// Ordered, reliable request/response link to Alice.
pub trait MessageChannel {
    fn exchange(&mut self, request: Request) -> Result<Response, CascadeError>;
}

/// Block sizes and per-pass permutations.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub block_sizes: Vec<usize>,
    /// `order[p][i]` is the bit at position `i` of pass `p`.
    order: Vec<Vec<usize>>,
    /// Inverse of `order`.
    position: Vec<Vec<usize>>,
}

impl Schedule {
    pub fn new(params: &SessionParams) -> Result<Self, CascadeError> {
        let n = params.length;
        if n == 0 {
            return Err(CascadeError::Empty);
        }
        let b = params.error_estimate;
        if !(b > 0.0 && b < 0.5) {
            return Err(CascadeError::Estimate(b));
        }
        let k1 = ((BLOCK_CONSTANT / b).ceil() as usize).max(2);
        let mut block_sizes = Vec::with_capacity(PASSES);
        let mut order = Vec::with_capacity(PASSES);
        let mut position = Vec::with_capacity(PASSES);
        for pass in 0..PASSES {
            block_sizes.push(k1.saturating_mul(1 << pass).min(n));
            let mut perm: Vec<usize> = (0..n).collect();
            if pass > 0 {
                StreamRng::new(params.seed, Domain::CascadePermutation, pass as u64)
                    .shuffle(&mut perm);
            }
            let mut inv = vec![0; n];
            for (i, &x) in perm.iter().enumerate() {
                inv[x] = i;
            }
            order.push(perm);
            position.push(inv);
        }
        Ok(Self {
            block_sizes,
            order,
            position,
        })
    }

    pub fn blocks(&self, pass: usize) -> usize {
        self.order[pass].len().div_ceil(self.block_sizes[pass])
    }

    fn block_range(&self, pass: usize, block: usize) -> (usize, usize) {
        let k = self.block_sizes[pass];
        (block * k, ((block + 1) * k).min(self.order[pass].len()))
    }

    fn block_of(&self, pass: usize, bit: usize) -> usize {
        self.position[pass][bit] / self.block_sizes[pass]
    }

    fn parity(&self, bits: &[u8], pass: usize, start: usize, end: usize) -> u8 {
        self.order[pass][start..end]
            .iter()
            .fold(0, |acc, &i| acc ^ bits[i])
    }
}

fn subset_parities(bits: &[u8], seed: u64, count: usize) -> Vec<u8> {
    (0..count)
        .map(|c| {
            let mut rng = StreamRng::new(seed, Domain::CascadeVerify, c as u64);
            let mut acc = 0u8;
            for chunk in bits.chunks(64) {
                let mask = rand::RngCore::next_u64(&mut rng);
                for (i, &b) in chunk.iter().enumerate() {
                    acc ^= b & ((mask >> i) & 1) as u8;
                }
            }
            acc
        })
        .collect()
}

/// Alice's side: answers parity queries about her bits.
pub struct ParityServer {
    bits: Vec<u8>,
    schedule: Option<Schedule>,
}

impl ParityServer {
    pub fn new(bits: Vec<u8>) -> Self {
        Self {
            bits,
            schedule: None,
        }
    }

    pub fn handle(&mut self, request: &Request) -> Response {
        match self.try_handle(request) {
            Ok(r) => r,
            Err(e) => Response::Error(e.to_string()),
        }
    }

    fn try_handle(&mut self, request: &Request) -> Result<Response, CascadeError> {
        let not_started = || CascadeError::Protocol("query before session start".into());
        match *request {
            Request::Start(params) => {
                if params.length != self.bits.len() {
                    return Err(CascadeError::Length {
                        alice: self.bits.len(),
                        bob: params.length,
                    });
                }
                self.schedule = Some(Schedule::new(&params)?);
                Ok(Response::Ack)
            }
            Request::BlockParities { pass } => {
                let s = self.schedule.as_ref().ok_or_else(not_started)?;
                if pass >= PASSES {
                    return Err(CascadeError::Protocol(format!("no pass {pass}")));
                }
                Ok(Response::Parities(
                    (0..s.blocks(pass))
                        .map(|b| {
                            let (lo, hi) = s.block_range(pass, b);
                            s.parity(&self.bits, pass, lo, hi)
                        })
                        .collect(),
                ))
            }
            Request::RangeParity { pass, start, end } => {
                let s = self.schedule.as_ref().ok_or_else(not_started)?;
                if pass >= PASSES || start >= end || end > self.bits.len() {
                    return Err(CascadeError::Protocol(format!(
                        "bad range {start}..{end} in pass {pass}"
                    )));
                }
                Ok(Response::Parity(s.parity(&self.bits, pass, start, end)))
            }
            Request::Verify { seed, count } => {
                Ok(Response::Parities(subset_parities(&self.bits, seed, count)))
            }
            Request::Finish => Ok(Response::Ack),
        }
    }
}

/// Same-thread channel that keeps a transcript of every exchange.
pub struct InProcessChannel {
    server: ParityServer,
    pub transcript: Vec<(Request, Response)>,
}

impl InProcessChannel {
    pub fn new(alice_bits: Vec<u8>) -> Self {
        Self {
            server: ParityServer::new(alice_bits),
            transcript: Vec::new(),
        }
    }
}

impl MessageChannel for InProcessChannel {
    fn exchange(&mut self, request: Request) -> Result<Response, CascadeError> {
        let response = self.server.handle(&request);
        self.transcript.push((request, response.clone()));
        Ok(response)
    }
}

/// Channel to a [`ParityServer`] running on its own thread.
pub struct ThreadedChannel {
    requests: mpsc::Sender<Request>,
    responses: mpsc::Receiver<Response>,
    worker: Option<thread::JoinHandle<()>>,
}

impl ThreadedChannel {
    pub fn spawn(alice_bits: Vec<u8>) -> Self {
        let (req_tx, req_rx) = mpsc::channel::<Request>();
        let (resp_tx, resp_rx) = mpsc::channel();
        let worker = thread::spawn(move || {
            let mut server = ParityServer::new(alice_bits);
            for request in req_rx {
                let done = request == Request::Finish;
                if resp_tx.send(server.handle(&request)).is_err() || done {
                    break;
                }
            }
        });
        Self {
            requests: req_tx,
            responses: resp_rx,
            worker: Some(worker),
        }
    }
}

impl MessageChannel for ThreadedChannel {
    fn exchange(&mut self, request: Request) -> Result<Response, CascadeError> {
        self.requests
            .send(request)
            .map_err(|e| CascadeError::Channel(e.to_string()))?;
        self.responses
            .recv()
            .map_err(|e| CascadeError::Channel(e.to_string()))
    }
}

impl Drop for ThreadedChannel {
    fn drop(&mut self) {
        let _ = self.requests.send(Request::Finish);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationResult {
    pub corrected_bob_bits: Vec<u8>,
    /// Every parity bit Alice disclosed, verification included.
    pub leaked_bits: u64,
    pub passes: usize,
    pub verified: bool,
    pub corrections: u64,
    pub pass_leakage: Vec<u64>,
    pub verification_leakage: u64,
}

fn expect_parities(r: Response, len: usize) -> Result<Vec<u8>, CascadeError> {
    match r {
        Response::Parities(p) if p.len() == len => Ok(p),
        Response::Error(e) => Err(CascadeError::Protocol(e)),
        other => Err(CascadeError::Protocol(format!("unexpected {other:?}"))),
    }
}

struct Bob<'a, C: MessageChannel> {
    channel: &'a mut C,
    schedule: Schedule,
    bits: Vec<u8>,
    /// Alice's parities known to Bob, keyed by (pass, start, end).
    known: HashMap<(usize, usize, usize), u8>,
    /// Whether each block currently disagrees with Alice's parity.
    mismatch: Vec<Vec<bool>>,
    leaked: u64,
    corrections: u64,
}

impl<C: MessageChannel> Bob<'_, C> {
    fn alice_parity(&mut self, pass: usize, start: usize, end: usize) -> Result<u8, CascadeError> {
        if let Some(&p) = self.known.get(&(pass, start, end)) {
            return Ok(p);
        }
        match self
            .channel
            .exchange(Request::RangeParity { pass, start, end })?
        {
            Response::Parity(p) => {
                self.leaked += 1;
                self.known.insert((pass, start, end), p);
                Ok(p)
            }
            Response::Error(e) => Err(CascadeError::Protocol(e)),
            other => Err(CascadeError::Protocol(format!("unexpected {other:?}"))),
        }
    }

    /// Locate and flip one error in a block with odd disagreement.
    fn binary_search(&mut self, pass: usize, block: usize) -> Result<usize, CascadeError> {
        let (mut lo, mut hi) = self.schedule.block_range(pass, block);
        let mut whole = self.known[&(pass, lo, hi)];
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let left = self.alice_parity(pass, lo, mid)?;
            // The right half's parity follows from the whole and the left half.
            self.known.entry((pass, mid, hi)).or_insert(whole ^ left);
            if self.schedule.parity(&self.bits, pass, lo, mid) != left {
                hi = mid;
                whole = left;
            } else {
                lo = mid;
                whole ^= left;
            }
        }
        Ok(self.schedule.order[pass][lo])
    }

    fn flip(&mut self, bit: usize, passes_done: usize, queue: &mut Vec<(usize, usize)>) {
        self.bits[bit] ^= 1;
        self.corrections += 1;
        for q in 0..passes_done {
            let b = self.schedule.block_of(q, bit);
            self.mismatch[q][b] = !self.mismatch[q][b];
            if self.mismatch[q][b] {
                queue.push((q, b));
            }
        }
    }

    fn run_pass(&mut self, pass: usize) -> Result<(), CascadeError> {
        let blocks = self.schedule.blocks(pass);
        let parities = expect_parities(
            self.channel.exchange(Request::BlockParities { pass })?,
            blocks,
        )?;
        self.leaked += blocks as u64;
        let mut queue = Vec::new();
        let mut mismatch = vec![false; blocks];
        for (b, &p) in parities.iter().enumerate() {
            let (lo, hi) = self.schedule.block_range(pass, b);
            self.known.insert((pass, lo, hi), p);
            mismatch[b] = self.schedule.parity(&self.bits, pass, lo, hi) != p;
            if mismatch[b] {
                queue.push((pass, b));
            }
        }
        self.mismatch.push(mismatch);
        // Smaller (earlier-pass) blocks are cheaper to search, so they go first.
        while let Some((q, b)) = queue.pop() {
            if !self.mismatch[q][b] {
                continue;
            }
            let bit = self.binary_search(q, b)?;
            self.flip(bit, pass + 1, &mut queue);
            queue.sort_by(|x, y| y.cmp(x));
        }
        Ok(())
    }
}

/// Reconcile Bob's bits to Alice's over `channel`.
///
/// A failed verification is reported through `verified`, not as an error.
pub fn reconcile_over<C: MessageChannel>(
    channel: &mut C,
    bob_bits: &[u8],
    error_estimate: f64,
    seed: u64,
) -> Result<ReconciliationResult, CascadeError> {
    if bob_bits.is_empty() {
        return Err(CascadeError::Empty);
    }
    if bob_bits.iter().any(|&b| b > 1) {
        return Err(CascadeError::NotABit);
    }
    let params = SessionParams {
        length: bob_bits.len(),
        error_estimate,
        seed,
    };
    let schedule = Schedule::new(&params)?;
    match channel.exchange(Request::Start(params))? {
        Response::Ack => {}
        Response::Error(e) => return Err(CascadeError::Protocol(e)),
        other => return Err(CascadeError::Protocol(format!("unexpected {other:?}"))),
    }
    let mut bob = Bob {
        channel,
        schedule,
        bits: bob_bits.to_vec(),
        known: HashMap::new(),
        mismatch: Vec::new(),
        leaked: 0,
        corrections: 0,
    };
    let mut pass_leakage = Vec::with_capacity(PASSES);
    for pass in 0..PASSES {
        let before = bob.leaked;
        bob.run_pass(pass)?;
        pass_leakage.push(bob.leaked - before);
    }
    let verify_seed = derive_seed(seed, Domain::CascadeVerify, u64::MAX);
    let alice_checks = expect_parities(
        bob.channel.exchange(Request::Verify {
            seed: verify_seed,
            count: VERIFICATION_PARITIES,
        })?,
        VERIFICATION_PARITIES,
    )?;
    let verified = alice_checks == subset_parities(&bob.bits, verify_seed, VERIFICATION_PARITIES);
    bob.channel.exchange(Request::Finish)?;
    Ok(ReconciliationResult {
        leaked_bits: bob.leaked + VERIFICATION_PARITIES as u64,
        corrected_bob_bits: bob.bits,
        passes: PASSES,
        verified,
        corrections: bob.corrections,
        pass_leakage,
        verification_leakage: VERIFICATION_PARITIES as u64,
    })
}

fn check_pair(alice: &[u8], bob: &[u8]) -> Result<(), CascadeError> {
    if alice.len() != bob.len() {
        return Err(CascadeError::Length {
            alice: alice.len(),
            bob: bob.len(),
        });
    }
    if alice.iter().any(|&b| b > 1) {
        return Err(CascadeError::NotABit);
    }
    Ok(())
}

/// In-process reconciliation of two bit strings.
pub fn cascade_reconcile(
    alice_bits: &[u8],
    bob_bits: &[u8],
    error_estimate: f64,
    seed: u64,
) -> Result<ReconciliationResult, CascadeError> {
    check_pair(alice_bits, bob_bits)?;
    let mut channel = InProcessChannel::new(alice_bits.to_vec());
    reconcile_over(&mut channel, bob_bits, error_estimate, seed)
}

/// Leakage relative to the Shannon limit `length * H2(qber)`.
pub fn ec_efficiency(leaked: u64, length: usize, qber: f64) -> Result<f64, CascadeError> {
    if length == 0 {
        return Err(CascadeError::Empty);
    }
    if !(qber > 0.0 && qber < 0.5) {
        return Err(CascadeError::Undefined(qber));
    }
    Ok(leaked as f64 / (length as f64 * h2(qber)))
}

pub trait Reconciler: Send + Sync {
    fn name(&self) -> &'static str;
    fn reconcile(
        &self,
        alice_bits: &[u8],
        bob_bits: &[u8],
        error_estimate: f64,
        seed: u64,
    ) -> Result<ReconciliationResult, CascadeError>;
}

pub struct Cascade;

impl Reconciler for Cascade {
    fn name(&self) -> &'static str {
        "cascade"
    }

    fn reconcile(
        &self,
        alice_bits: &[u8],
        bob_bits: &[u8],
        error_estimate: f64,
        seed: u64,
    ) -> Result<ReconciliationResult, CascadeError> {
        cascade_reconcile(alice_bits, bob_bits, error_estimate, seed)
    }
}

/// Same protocol with Alice on a separate thread.
pub struct ThreadedCascade;

impl Reconciler for ThreadedCascade {
    fn name(&self) -> &'static str {
        "cascade-threaded"
    }

    fn reconcile(
        &self,
        alice_bits: &[u8],
        bob_bits: &[u8],
        error_estimate: f64,
        seed: u64,
    ) -> Result<ReconciliationResult, CascadeError> {
        check_pair(alice_bits, bob_bits)?;
        let mut channel = ThreadedChannel::spawn(alice_bits.to_vec());
        reconcile_over(&mut channel, bob_bits, error_estimate, seed)
    }
}

pub fn reconcilers() -> Registry<dyn Reconciler> {
    let mut r: Registry<dyn Reconciler> = Registry::new("reconciler");
    r.register("cascade", || Box::new(Cascade));
    r.register("cascade-threaded", || Box::new(ThreadedCascade));
    r
}

pub const DEFAULT_RECONCILER: &str = "cascade";
