//! Simulation-backed Modbus/TCP server.
//!
//! One thread accepts, one thread per connection handles requests. Every
//! request runs under the simulation lock, so a client never sees an image
//! that mixes voltages from before and after a write.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::client::ModbusClient;
use super::frame::{
    pack_bits, ExceptionCode, FrameError, MbapHeader, Pdu, Request, Response, HEADER_LEN,
    SUPPORTED,
};
use super::{setpoint_word, FieldLink, LinkError};
use crate::feeder::{apply_switch_config, FeederModel, SwitchConfig, SwitchState};
use crate::powerflow::{solve, SolverOptions, VoltageSolution};
use crate::regmap::{
    build_image, decode_voltage_word, AccessError, MeterMap, RegMapError, RegisterImage,
    WordOrder,
};

const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshPolicy {
    /// Re-solve before answering any state-changing write.
    OnWrite,
    /// Re-solve on a fixed period; writes only mark the state dirty.
    Tick(Duration),
}

impl FromStr for RefreshPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "on-write" {
            return Ok(RefreshPolicy::OnWrite);
        }
        let ms = s
            .strip_prefix("tick:")
            .and_then(|v| v.parse::<u64>().ok())
            .filter(|ms| *ms > 0)
            .ok_or_else(|| format!("bad refresh policy `{s}` (on-write | tick:<ms>)"))?;
        Ok(RefreshPolicy::Tick(Duration::from_millis(ms)))
    }
}

/// The simulated field: feeder, switch states, setpoints and the register
/// image derived from the last converged solve.
#[derive(Debug, Clone)]
pub struct Simulation {
    model: Arc<FeederModel>,
    map: MeterMap,
    opts: SolverOptions,
    config: SwitchConfig,
    setpoints: Vec<u16>,
    image: RegisterImage,
    solution: Option<VoltageSolution>,
    dirty: bool,
    solves: u64,
}

impl Simulation {
    pub fn new(model: Arc<FeederModel>, order: WordOrder) -> Result<Self, RegMapError> {
        let map = MeterMap::for_model(&model)?;
        Ok(Simulation::with_map(model, map, order, SolverOptions::default()))
    }

    /// Starts from the normal switch configuration and nominal setpoints.
    pub fn with_map(
        model: Arc<FeederModel>,
        map: MeterMap,
        order: WordOrder,
        opts: SolverOptions,
    ) -> Self {
        let config = model.normal_config();
        let setpoints = map.nominal_setpoints(&model);
        let mut sim = Simulation {
            model,
            map,
            opts,
            config,
            setpoints,
            image: RegisterImage::empty(order),
            solution: None,
            dirty: true,
            solves: 0,
        };
        sim.refresh();
        sim
    }

    pub fn model(&self) -> &Arc<FeederModel> {
        &self.model
    }

    pub fn map(&self) -> &MeterMap {
        &self.map
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.config
    }

    pub fn setpoints(&self) -> &[u16] {
        &self.setpoints
    }

    pub fn image(&self) -> &RegisterImage {
        &self.image
    }

    /// Last converged solution.
    pub fn solution(&self) -> Option<&VoltageSolution> {
        self.solution.as_ref()
    }

    pub fn solve_count(&self) -> u64 {
        self.solves
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// Re-solves the network and rebuilds the image. On failure the previous
    /// measurements stay and the stale flag is raised. Returns whether the
    /// solve converged.
    pub fn refresh(&mut self) -> bool {
        self.dirty = false;
        self.solves += 1;
        let view = match apply_switch_config(&self.model, &self.config) {
            Ok(v) => v,
            Err(e) => {
                warn!("switch configuration rejected: {e}");
                self.mark_stale();
                return false;
            }
        };
        let result = self
            .map
            .loads_from_setpoints_where(&self.model, &self.setpoints, |b| view.is_energized(b))
            .map_err(|e| e.to_string())
            .and_then(|loads| {
                solve(&self.model, &view, &loads, &self.opts).map_err(|e| e.to_string())
            });
        match result {
            Ok(sol) if sol.converged => {
                match build_image(
                    &sol,
                    &self.setpoints,
                    &self.config,
                    &self.map,
                    self.image.word_order(),
                ) {
                    Ok(img) => {
                        self.image = img;
                        self.solution = Some(sol);
                        true
                    }
                    Err(e) => {
                        warn!("image build failed: {e}");
                        self.mark_stale();
                        false
                    }
                }
            }
            Ok(sol) => {
                warn!(
                    "solve did not converge after {} iterations (mismatch {:.3e})",
                    sol.iterations, sol.max_mismatch
                );
                self.mark_stale();
                false
            }
            Err(e) => {
                warn!("solve failed: {e}");
                self.mark_stale();
                false
            }
        }
    }

    fn mark_stale(&mut self) {
        self.image.set_setpoints(&self.setpoints);
        if let Ok(coils) = self.map.coils_for(&self.config) {
            self.image.set_coils(&coils);
        }
        self.image.set_stale(true);
    }

    fn after_write(&mut self, changed: bool, sync: bool) {
        if !changed {
            return;
        }
        if sync {
            self.refresh();
        } else {
            self.dirty = true;
            self.image.set_setpoints(&self.setpoints);
            if let Ok(coils) = self.map.coils_for(&self.config) {
                self.image.set_coils(&coils);
            }
        }
    }

    fn set_coil_slots(&mut self, first: usize, values: &[bool]) -> Result<bool, AccessError> {
        if first + values.len() > self.map.switches().len() {
            return Err(AccessError::IllegalAddress);
        }
        let mut changed = false;
        for (k, &on) in values.iter().enumerate() {
            let name = self.map.switches()[first + k].clone();
            let state = SwitchState::from_closed(on);
            if self.config.get(&name) != Some(state) {
                changed = true;
                self.config
                    .set(&name, state)
                    .map_err(|_| AccessError::IllegalAddress)?;
            }
        }
        Ok(changed)
    }

    fn set_setpoint_slots(&mut self, first: usize, values: &[u16]) -> Result<bool, AccessError> {
        if first + values.len() > self.setpoints.len() {
            return Err(AccessError::IllegalAddress);
        }
        let slots = &mut self.setpoints[first..first + values.len()];
        let changed = slots != values;
        slots.copy_from_slice(values);
        Ok(changed)
    }

    /// Applies one request. `sync` re-solves before returning when state
    /// changed.
    pub fn handle(&mut self, req: &Request, sync: bool) -> Response {
        let f = req.function();
        match self.apply(req, sync) {
            Ok(resp) => resp,
            Err(AccessError::IllegalAddress) => {
                Response::exception(f, ExceptionCode::IllegalDataAddress)
            }
            Err(AccessError::IllegalValue) => Response::exception(f, ExceptionCode::IllegalDataValue),
        }
    }

    fn apply(&mut self, req: &Request, sync: bool) -> Result<Response, AccessError> {
        // Wire addresses are register numbers minus one.
        let number = |address: u16| address.checked_add(1).ok_or(AccessError::IllegalAddress);
        match req {
            Request::ReadHolding { address, qty } => {
                if *qty == 0 || *qty > crate::regmap::MAX_READ_REGISTERS {
                    return Err(AccessError::IllegalValue);
                }
                let values = self.image.read_holding(number(*address)?, *qty)?;
                Ok(Response::ReadHolding { values })
            }
            Request::ReadCoils { address, qty } => {
                if *qty == 0 || *qty > crate::regmap::MAX_READ_COILS {
                    return Err(AccessError::IllegalValue);
                }
                let bits = self.image.read_coils(number(*address)?, *qty)?;
                Ok(Response::ReadCoils {
                    packed: pack_bits(&bits),
                })
            }
            Request::WriteSingleCoil { address, on } => {
                let first = RegisterImage::writable_coils(number(*address)?, 1)?;
                let changed = self.set_coil_slots(first, &[*on])?;
                self.after_write(changed, sync);
                Ok(Response::WriteSingleCoil {
                    address: *address,
                    on: *on,
                })
            }
            Request::WriteMultipleCoils { address, values } => {
                if values.is_empty() || values.len() > 1968 {
                    return Err(AccessError::IllegalValue);
                }
                let first = RegisterImage::writable_coils(number(*address)?, values.len() as u16)?;
                let changed = self.set_coil_slots(first, values)?;
                self.after_write(changed, sync);
                Ok(Response::WriteMultipleCoils {
                    address: *address,
                    qty: values.len() as u16,
                })
            }
            Request::WriteSingleRegister { address, value } => {
                let first = RegisterImage::writable_setpoints(number(*address)?, 1)?;
                let changed = self.set_setpoint_slots(first, &[*value])?;
                self.after_write(changed, sync);
                Ok(Response::WriteSingleRegister {
                    address: *address,
                    value: *value,
                })
            }
            Request::WriteMultipleRegisters { address, values } => {
                if values.is_empty() || values.len() > 123 {
                    return Err(AccessError::IllegalValue);
                }
                let first =
                    RegisterImage::writable_setpoints(number(*address)?, values.len() as u16)?;
                let changed = self.set_setpoint_slots(first, values)?;
                self.after_write(changed, sync);
                Ok(Response::WriteMultipleRegisters {
                    address: *address,
                    qty: values.len() as u16,
                })
            }
        }
    }

    /// Answers a raw PDU, including exceptions for unsupported or malformed
    /// requests.
    pub fn handle_pdu(&mut self, pdu: &Pdu, sync: bool) -> Pdu {
        respond(pdu, |req| self.handle(req, sync))
    }
}

fn respond(pdu: &Pdu, mut handle: impl FnMut(&Request) -> Response) -> Pdu {
    if !SUPPORTED.contains(&pdu.function) {
        return Response::exception(pdu.function, ExceptionCode::IllegalFunction).to_pdu();
    }
    match Request::from_pdu(pdu) {
        Ok(req) => handle(&req).to_pdu(),
        Err(_) => Response::exception(pdu.function, ExceptionCode::IllegalDataValue).to_pdu(),
    }
}

/// In-process access with the same quantization a Modbus client sees.
impl FieldLink for Simulation {
    fn read_voltages(&mut self) -> Result<Vec<f64>, LinkError> {
        let n = self.map.meters().len();
        Ok(self.image.voltage_words()[..n]
            .iter()
            .map(|w| decode_voltage_word(*w))
            .collect())
    }

    fn read_switches(&mut self) -> Result<SwitchConfig, LinkError> {
        Ok(self.map.config_from_coils(self.image.coils()))
    }

    fn read_setpoints(&mut self) -> Result<Vec<u16>, LinkError> {
        Ok(self.image.setpoint_words()[..self.setpoints.len()].to_vec())
    }

    fn write_setpoints(&mut self, kw: &[(String, f64)]) -> Result<(), LinkError> {
        if kw.is_empty() {
            return Ok(());
        }
        let mut values = self.setpoints.clone();
        for (node, p) in kw {
            let slot = self
                .map
                .setpoints()
                .iter()
                .position(|s| &s.node == node)
                .ok_or_else(|| LinkError::UnmappedNode(node.clone()))?;
            values[slot] = setpoint_word(*p)?;
        }
        let changed = self.set_setpoint_slots(0, &values).expect("slot count");
        self.after_write(changed, true);
        Ok(())
    }

    fn write_switch(&mut self, name: &str, state: SwitchState) -> Result<(), LinkError> {
        let k = self
            .map
            .switches()
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| LinkError::UnmappedSwitch(name.to_string()))?;
        let changed = self
            .set_coil_slots(k, &[state.is_closed()])
            .expect("mapped coil");
        self.after_write(changed, true);
        Ok(())
    }
}

trait FrameHandler: Send + Sync + 'static {
    fn answer(&self, header: &MbapHeader, pdu: &Pdu) -> Pdu;
}

struct SimHandler {
    sim: Arc<Mutex<Simulation>>,
    sync: bool,
}

impl FrameHandler for SimHandler {
    fn answer(&self, _header: &MbapHeader, pdu: &Pdu) -> Pdu {
        let mut sim = self.sim.lock().unwrap_or_else(|e| e.into_inner());
        sim.handle_pdu(pdu, self.sync)
    }
}

struct RelayHandler {
    upstream: SocketAddr,
    link: Mutex<Option<ModbusClient>>,
}

impl FrameHandler for RelayHandler {
    fn answer(&self, _header: &MbapHeader, pdu: &Pdu) -> Pdu {
        let mut link = self.link.lock().unwrap_or_else(|e| e.into_inner());
        for attempt in 0..2 {
            if link.is_none() {
                match ModbusClient::connect(self.upstream) {
                    Ok(c) => *link = Some(c),
                    Err(e) => {
                        warn!("relay: upstream {} unreachable: {e}", self.upstream);
                        break;
                    }
                }
            }
            match link.as_mut().map(|c| c.transact_pdu(pdu)) {
                Some(Ok(resp)) => return resp,
                Some(Err(e)) => {
                    warn!("relay: upstream exchange failed (attempt {}): {e}", attempt + 1);
                    *link = None;
                }
                None => break,
            }
        }
        // Gateway target device failed to respond.
        Pdu::new(pdu.function | 0x80, vec![0x0B])
    }
}

/// A running server or relay.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    conns: Arc<Mutex<Vec<JoinHandle<()>>>>,
    sim: Option<Arc<Mutex<Simulation>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// The simulation behind a server (not available for relays).
    pub fn simulation(&self) -> Option<Arc<Mutex<Simulation>>> {
        self.sim.clone()
    }

    /// Stops accepting, closes connections and joins every thread.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    /// Blocks until the accept loop ends (it only ends on shutdown).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let conns: Vec<_> = self
            .conns
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .drain(..)
            .collect();
        for t in conns {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.stop_threads();
        }
    }
}

/// Serves `sim` on `bind` (port 0 picks a free port).
pub fn serve(
    sim: Simulation,
    bind: impl ToSocketAddrs,
    refresh: RefreshPolicy,
) -> io::Result<ServerHandle> {
    let sim = Arc::new(Mutex::new(sim));
    let handler = Arc::new(SimHandler {
        sim: sim.clone(),
        sync: refresh == RefreshPolicy::OnWrite,
    });
    let mut handle = spawn(bind, handler)?;
    if let RefreshPolicy::Tick(period) = refresh {
        let (sim2, stop) = (sim.clone(), handle.stop.clone());
        handle.threads.push(thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                thread::sleep(period);
                let mut s = sim2.lock().unwrap_or_else(|e| e.into_inner());
                if s.is_dirty() {
                    s.refresh();
                }
            }
        }));
    }
    handle.sim = Some(sim);
    info!("modbus server listening on {}", handle.addr);
    Ok(handle)
}

/// Accepts clients on `bind` and forwards every request to `upstream`
/// unchanged.
pub fn relay(bind: impl ToSocketAddrs, upstream: SocketAddr) -> io::Result<ServerHandle> {
    let handler = Arc::new(RelayHandler {
        upstream,
        link: Mutex::new(None),
    });
    let handle = spawn(bind, handler)?;
    info!("relay listening on {} -> {}", handle.addr, upstream);
    Ok(handle)
}

fn spawn<H: FrameHandler>(bind: impl ToSocketAddrs, handler: Arc<H>) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));
    let (stop2, conns2) = (stop.clone(), conns.clone());
    let accept = thread::spawn(move || {
        while !stop2.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    debug!("client {peer} connected");
                    let (h, s) = (handler.clone(), stop2.clone());
                    let t = thread::spawn(move || {
                        if let Err(e) = connection(stream, h.as_ref(), &s) {
                            debug!("client {peer}: {e}");
                        }
                    });
                    let mut list = conns2.lock().unwrap_or_else(|e| e.into_inner());
                    list.retain(|t| !t.is_finished());
                    list.push(t);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL / 5),
                Err(e) => {
                    warn!("accept failed: {e}");
                    thread::sleep(POLL);
                }
            }
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        threads: vec![accept],
        conns,
        sim: None,
    })
}

/// Fills `buf`, polling the stop flag while idle. `Ok(false)` means the peer
/// closed cleanly before the first byte or the server is stopping.
fn read_full(stream: &mut TcpStream, buf: &mut [u8], stop: &AtomicBool) -> io::Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        if stop.load(Ordering::SeqCst) {
            return Ok(false);
        }
        match stream.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn connection<H: FrameHandler + ?Sized>(
    mut stream: TcpStream,
    handler: &H,
    stop: &AtomicBool,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut head = [0u8; HEADER_LEN];
    loop {
        if !read_full(&mut stream, &mut head, stop)? {
            return Ok(());
        }
        let header = match MbapHeader::parse(&head) {
            Ok(h) => h,
            Err(e) => {
                // Without a trustworthy length the stream cannot be resynchronized.
                return Err(io::Error::new(ErrorKind::InvalidData, e));
            }
        };
        let mut body = vec![0u8; header.length as usize - 1];
        if !read_full(&mut stream, &mut body, stop)? {
            return Err(ErrorKind::UnexpectedEof.into());
        }
        let pdu = Pdu::new(body[0], body[1..].to_vec());
        let resp = handler.answer(&header, &pdu);
        let out = super::frame::encode_frame(
            &MbapHeader::for_pdu(header.transaction, header.unit, &resp),
            &resp,
        );
        stream.write_all(&out)?;
    }
}

impl From<FrameError> for io::Error {
    fn from(e: FrameError) -> Self {
        io::Error::new(ErrorKind::InvalidData, e)
    }
}
