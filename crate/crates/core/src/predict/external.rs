//! External predictor processes speaking the [`protocol`](super::protocol) over stdin/stdout.

use std::io::{BufReader, BufWriter};
use std::process::{Child, ChildStdin, ChildStdout, Command, ExitStatus, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::protocol::{read_response, write_request};
use super::Predictor;
use crate::error::{Error, Result};
use crate::plan::TileSpec;
use crate::VoxelGrid;

const EXIT_GRACE: Duration = Duration::from_millis(500);

struct Session {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    last_index: Option<u32>,
}

impl Session {
    fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("empty external command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ExternalProcess {
                tile_index: 0,
                message: format!("cannot spawn {program:?}: {e}"),
            })?;
        let stdin = child.stdin.take().map(BufWriter::new);
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Session {
            child,
            stdin,
            stdout,
            last_index: None,
        })
    }

    fn round_trip(&mut self, tile_index: u32, input: &VoxelGrid) -> Result<VoxelGrid> {
        let stdin = self.stdin.as_mut().ok_or_else(|| Error::ExternalProcess {
            tile_index,
            message: "predictor input already closed".into(),
        })?;
        let sent = write_request(stdin, tile_index, input.dims(), input.values());
        let frame = sent.and_then(|_| read_response(&mut self.stdout, tile_index, input.dims()));
        let frame = match frame {
            Ok(frame) => frame,
            Err(e) => {
                // a dead child explains a broken stream better than the I/O error does
                if let Some(status) = self.exit_status_within(EXIT_GRACE) {
                    if !status.success() {
                        return Err(Error::ExternalProcess {
                            tile_index,
                            message: format!("predictor exited with {status} ({e})"),
                        });
                    }
                }
                return Err(e);
            }
        };
        self.last_index = Some(tile_index);
        VoxelGrid::new(input.dims(), input.spacing(), frame.payload).map_err(|e| Error::Protocol {
            tile_index,
            message: format!("invalid payload: {e}"),
        })
    }

    /// Exit status if the child terminates within `grace`; it may close its
    /// pipes slightly before it can be reaped.
    fn exit_status_within(&mut self, grace: Duration) -> Option<ExitStatus> {
        let deadline = Instant::now() + grace;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                _ => return None,
            }
        }
    }

    fn finish(mut self) -> Result<()> {
        drop(self.stdin.take());
        let status = self.child.wait().map_err(|e| Error::ExternalProcess {
            tile_index: self.last_index.unwrap_or(0),
            message: format!("wait failed: {e}"),
        })?;
        if !status.success() {
            return Err(Error::ExternalProcess {
                tile_index: self.last_index.unwrap_or(0),
                message: format!("predictor exited with {status} after the last tile"),
            });
        }
        Ok(())
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if self.stdin.take().is_some() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Pool of predictor processes; tile `i` goes to process `i % sessions`.
///
/// Each process sees one synchronous, ordered request stream.
pub struct ExternalPredictor {
    sessions: Vec<Mutex<Option<Session>>>,
}

impl ExternalPredictor {
    pub fn spawn(command: &[String], sessions: usize) -> Result<Self> {
        let sessions = (0..sessions.max(1))
            .map(|_| Session::spawn(command).map(|s| Mutex::new(Some(s))))
            .collect::<Result<_>>()?;
        Ok(ExternalPredictor { sessions })
    }

    /// Closes every stream and checks the exit status of each process.
    pub fn finish(self) -> Result<()> {
        for slot in self.sessions {
            if let Some(session) = slot.into_inner().unwrap_or_else(|p| p.into_inner()) {
                session.finish()?;
            }
        }
        Ok(())
    }
}

impl Predictor for ExternalPredictor {
    fn predict(&self, tile: &TileSpec, input: &VoxelGrid) -> Result<VoxelGrid> {
        let tile_index = u32::try_from(tile.index).map_err(|_| Error::Protocol {
            tile_index: u32::MAX,
            message: format!("tile index {} exceeds u32", tile.index),
        })?;
        if input.dims() != tile.size {
            return Err(Error::DimMismatch {
                left: tile.size,
                right: input.dims(),
            });
        }
        let slot = &self.sessions[tile.index % self.sessions.len()];
        let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());
        let session = guard.as_mut().ok_or_else(|| Error::ExternalProcess {
            tile_index,
            message: "predictor session already failed".into(),
        })?;
        let out = session.round_trip(tile_index, input);
        if out.is_err() {
            // the stream is out of sync after any failure
            *guard = None;
        }
        out
    }
}

/// Runs `tiles` through one external process in order, one frame pair per tile.
pub fn run_external(command: &[String], tiles: &[(TileSpec, VoxelGrid)]) -> Result<Vec<VoxelGrid>> {
    let predictor = ExternalPredictor::spawn(command, 1)?;
    let out = tiles
        .iter()
        .map(|(spec, grid)| predictor.predict(spec, grid))
        .collect::<Result<Vec<_>>>()?;
    predictor.finish()?;
    Ok(out)
}
