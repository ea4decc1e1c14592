//! Line protocol for external plants.
//!
//! ```text
//! controller            plant
//! HELLO 1        ->
//!                <-     READY <name>
//! STEP <k> <a>   ->
//!                <-     OBS <k> <sensor> <performance>
//! ...
//! BYE            ->
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so values
//! survive the wire bit for bit.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::{Plant, PlantTick};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

fn protocol(message: impl Into<String>, line: &str) -> Error {
    Error::Protocol { message: message.into(), line: line.to_string() }
}

fn write_err(e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted => {
            Error::SessionEnded
        }
        _ => Error::Io(e),
    }
}

/// Controller side of a plant session.
pub struct ExternalPlant {
    name: String,
    dt: f64,
    tick: u64,
    timeout: Duration,
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    closed: bool,
}

impl ExternalPlant {
    /// Performs the handshake over an arbitrary byte stream pair.
    pub fn connect<R, W>(reader: R, writer: W, dt: f64, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("sampling interval {dt} must be positive")));
        }
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut plant = Self {
            name: String::new(),
            dt,
            tick: 0,
            timeout,
            writer: Box::new(writer),
            lines: rx,
            child: None,
            closed: false,
        };
        plant.send(&format!("HELLO {PROTOCOL_VERSION}"))?;
        let line = plant.recv()?;
        let name = line
            .strip_prefix("READY")
            .filter(|rest| rest.is_empty() || rest.starts_with(' '))
            .ok_or_else(|| protocol("expected READY", &line))?;
        plant.name = name.trim().to_string();
        debug!("connected to plant {:?}", plant.name);
        Ok(plant)
    }

    /// Spawns `command` through the shell and talks over its stdin/stdout.
    pub fn spawn(command: &str, dt: f64, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::connect(stdout, stdin, dt, timeout) {
            Ok(mut plant) => {
                plant.child = Some(child);
                Ok(plant)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn tcp(addr: impl ToSocketAddrs, dt: f64, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::connect(reader, stream, dt, timeout)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn send(&mut self, line: &str) -> Result<()> {
        if self.closed {
            return Err(Error::SessionEnded);
        }
        writeln!(self.writer, "{line}").map_err(write_err)?;
        self.writer.flush().map_err(write_err)
    }

    fn recv(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line.trim_end_matches('\r').to_string()),
            Ok(Err(e)) => Err(Error::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                self.closed = true;
                Err(Error::SessionEnded)
            }
        }
    }

    fn parse_obs(&self, line: &str, expected: u64) -> Result<(f64, f64)> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["OBS", tick, sensor, perf] => {
                let tick: u64 = tick.parse().map_err(|_| protocol("bad tick index", line))?;
                if tick != expected {
                    return Err(protocol(format!("expected tick {expected}, got {tick}"), line));
                }
                let sensor: f64 = sensor.parse().map_err(|_| protocol("bad sensor value", line))?;
                let perf: f64 = perf.parse().map_err(|_| protocol("bad performance value", line))?;
                Ok((sensor, perf))
            }
            _ => Err(protocol("expected OBS <tick> <sensor> <performance>", line)),
        }
    }

    /// Sends `BYE` and releases the transport.
    pub fn close(&mut self) {
        if !self.closed {
            let _ = self.send("BYE");
            self.closed = true;
        }
        if let Some(mut child) = self.child.take() {
            self.writer = Box::new(io::sink());
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                    _ => {
                        warn!("plant process did not exit after BYE; killing it");
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
    }
}

impl Plant for ExternalPlant {
    fn step(&mut self, action: f64) -> Result<PlantTick> {
        let tick = self.tick + 1;
        self.send(&format!("STEP {tick} {action}"))?;
        let line = self.recv()?;
        let (sensor, performance) = self.parse_obs(&line, tick)?;
        self.tick = tick;
        if !sensor.is_finite() || !performance.is_finite() {
            return Err(Error::Divergence { tick });
        }
        Ok(PlantTick { t: tick as f64 * self.dt, sensor, performance })
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn ticks(&self) -> u64 {
        self.tick
    }
}

impl Drop for ExternalPlant {
    fn drop(&mut self) {
        self.close();
    }
}

/// Plant side of the protocol. `handler(tick, action)` returns `(sensor, performance)`.
///
/// Returns the number of ticks served once the controller says `BYE` or
/// closes the stream.
pub fn serve<R, W, F>(reader: R, mut writer: W, name: &str, mut handler: F) -> Result<u64>
where
    R: BufRead,
    W: Write,
    F: FnMut(u64, f64) -> Result<(f64, f64)>,
{
    let mut lines = reader.lines();
    let hello = lines.next().transpose()?.ok_or(Error::SessionEnded)?;
    match hello.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["HELLO", v] if v.parse() == Ok(PROTOCOL_VERSION) => {}
        _ => return Err(protocol("expected HELLO 1", &hello)),
    }
    writeln!(writer, "READY {name}")?;
    writer.flush()?;
    let mut served = 0;
    for line in lines {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["BYE"] => break,
            ["STEP", tick, action] => {
                let tick: u64 = tick.parse().map_err(|_| protocol("bad tick index", &line))?;
                let action: f64 = action.parse().map_err(|_| protocol("bad action value", &line))?;
                if tick != served + 1 {
                    return Err(protocol(format!("expected tick {}", served + 1), &line));
                }
                let (sensor, perf) = handler(tick, action)?;
                writeln!(writer, "OBS {tick} {sensor} {perf}")?;
                writer.flush()?;
                served = tick;
            }
            [] => {}
            _ => return Err(protocol("unknown command", &line)),
        }
    }
    Ok(served)
}
