//! External embedding backends over a child process's stdin/stdout.
//!
//! ```text
//! child  -> EMBED v1 dim=<D>\n
//! parent -> TILE <size> <n_bytes>\n <n_bytes of RGB>
//! child  -> VEC\n <D little-endian f32>
//! ```

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::NnError;

pub const PROTOCOL: &str = "EMBED v1";

enum Reply {
    Vector(Vec<f32>),
    /// Stdout closed after a `VEC` line with this many whole floats.
    ShortVector(usize),
    Closed(String),
    Bad(String),
}

pub struct EmbedBackend {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<Reply>,
    dim: usize,
    served: usize,
    timeout: Duration,
}

impl EmbedBackend {
    /// Starts `program args…` and waits for its handshake.
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<EmbedBackend, NnError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| NnError::BackendUnavailable {
                last_good: None,
                message: format!("cannot start {program}: {e}"),
            })?;
        let stdin = child.stdin.take();
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));

        let mut line = String::new();
        let read = stdout.read_line(&mut line);
        let dim = match read {
            Ok(0) | Err(_) => {
                let _ = child.kill();
                return Err(NnError::BackendUnavailable {
                    last_good: None,
                    message: "backend closed before the handshake".into(),
                });
            }
            Ok(_) => parse_handshake(line.trim_end_matches('\n')).inspect_err(|_| {
                let _ = child.kill();
            })?,
        };

        let (tx, replies) = mpsc::channel();
        thread::spawn(move || loop {
            let reply = read_reply(&mut stdout, dim);
            let stop = !matches!(reply, Reply::Vector(_));
            if tx.send(reply).is_err() || stop {
                break;
            }
        });
        Ok(EmbedBackend {
            child,
            stdin,
            replies,
            dim,
            served: 0,
            timeout,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn last_good(&self) -> Option<usize> {
        self.served.checked_sub(1)
    }

    fn unavailable(&self, message: String) -> NnError {
        NnError::BackendUnavailable { last_good: self.last_good(), message }
    }

    /// Embeds one `size × size` RGB tile.
    pub fn embed(&mut self, size: usize, rgb: &[u8]) -> Result<Vec<f32>, NnError> {
        if rgb.len() != size * size * 3 {
            return Err(NnError::ShapeMismatch(format!("{size}x{size} RGB tile with {} bytes", rgb.len())));
        }
        let stdin = self.stdin.as_mut().ok_or_else(|| NnError::BackendUnavailable {
            last_good: self.served.checked_sub(1),
            message: "backend input already closed".into(),
        })?;
        let sent = write!(stdin, "TILE {size} {}\n", rgb.len())
            .and_then(|_| stdin.write_all(rgb))
            .and_then(|_| stdin.flush());
        if let Err(e) = sent {
            return Err(self.unavailable(format!("write failed: {e}")));
        }
        match self.replies.recv_timeout(self.timeout) {
            Ok(Reply::Vector(v)) => {
                self.served += 1;
                Ok(v)
            }
            Ok(Reply::ShortVector(got)) => Err(NnError::DimensionMismatch { expected: self.dim, got }),
            Ok(Reply::Bad(m)) => Err(NnError::ProtocolError(m)),
            Ok(Reply::Closed(m)) => Err(self.unavailable(m)),
            Err(RecvTimeoutError::Timeout) => Err(self.unavailable(format!("no reply within {:?}", self.timeout))),
            Err(RecvTimeoutError::Disconnected) => Err(self.unavailable("backend output closed".into())),
        }
    }
}

impl Drop for EmbedBackend {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn parse_handshake(line: &str) -> Result<usize, NnError> {
    let rest = line
        .strip_prefix(PROTOCOL)
        .and_then(|r| r.strip_prefix(" dim="))
        .ok_or_else(|| NnError::ProtocolError(format!("bad handshake {line:?}")))?;
    match rest.parse::<usize>() {
        Ok(d) if d > 0 => Ok(d),
        _ => Err(NnError::ProtocolError(format!("bad dimension in handshake {line:?}"))),
    }
}

fn read_reply<R: BufRead>(out: &mut R, dim: usize) -> Reply {
    let mut line = Vec::new();
    match out.read_until(b'\n', &mut line) {
        Ok(0) => return Reply::Closed("backend exited".into()),
        Err(e) => return Reply::Closed(format!("read failed: {e}")),
        Ok(_) => {}
    }
    if line != b"VEC\n" {
        if !line.ends_with(b"\n") {
            return Reply::Closed("backend exited mid-line".into());
        }
        return Reply::Bad(format!("expected VEC, got {:?}", String::from_utf8_lossy(&line)));
    }
    let mut buf = vec![0u8; dim * 4];
    let mut filled = 0;
    while filled < buf.len() {
        match out.read(&mut buf[filled..]) {
            Ok(0) => {
                return if filled % 4 == 0 {
                    Reply::ShortVector(filled / 4)
                } else {
                    Reply::Bad(format!("vector ended inside a float ({filled} bytes)"))
                };
            }
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Reply::Closed(format!("read failed: {e}")),
        }
    }
    let v: Vec<f32> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Reply::Bad("non-finite value in vector".into());
    }
    Reply::Vector(v)
}

/// Faults the echo backend can inject, for exercising error paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoFaults {
    /// Send this many floats fewer than declared, then exit.
    pub short_by: usize,
    /// Exit after serving this many tiles.
    pub exit_after: Option<usize>,
}

/// Deterministic embedding used by the echo backend: float `j` is the mean
/// of the tile bytes at positions `≡ j (mod dim)`, scaled to `[0, 1]`.
pub fn echo_embedding(rgb: &[u8], dim: usize) -> Vec<f32> {
    let mut sum = vec![0u64; dim];
    let mut cnt = vec![0u64; dim];
    for (i, &b) in rgb.iter().enumerate() {
        sum[i % dim] += b as u64;
        cnt[i % dim] += 1;
    }
    sum.iter()
        .zip(&cnt)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s as f32 / c as f32 / 255.0 })
        .collect()
}

/// Serves the protocol on `input`/`output` until EOF.
pub fn run_echo_backend<R: BufRead, W: Write>(mut input: R, mut output: W, dim: usize, faults: EchoFaults) -> io::Result<()> {
    writeln!(output, "{PROTOCOL} dim={dim}")?;
    output.flush()?;
    let mut served = 0usize;
    let mut line = String::new();
    loop {
        if faults.exit_after == Some(served) {
            return Ok(());
        }
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (size, n) = match parts.as_slice() {
            ["TILE", s, n] => match (s.parse::<usize>(), n.parse::<usize>()) {
                (Ok(s), Ok(n)) if n == s * s * 3 => (s, n),
                _ => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad TILE line {line:?}"))),
            },
            _ => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad request {line:?}"))),
        };
        let _ = size;
        let mut rgb = vec![0u8; n];
        input.read_exact(&mut rgb)?;
        let v = echo_embedding(&rgb, dim);
        let keep = dim.saturating_sub(faults.short_by);
        output.write_all(b"VEC\n")?;
        for x in &v[..keep] {
            output.write_all(&x.to_le_bytes())?;
        }
        output.flush()?;
        if keep < dim {
            return Ok(());
        }
        served += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handshake_parsing() {
        assert_eq!(parse_handshake("EMBED v1 dim=512").unwrap(), 512);
        assert!(parse_handshake("EMBED v2 dim=8").is_err());
        assert!(parse_handshake("EMBED v1 dim=0").is_err());
        assert!(parse_handshake("EMBED v1 dim=x").is_err());
    }

    #[test]
    fn echo_backend_in_memory() {
        let tile = vec![51u8; 2 * 2 * 3];
        let mut req = b"TILE 2 12\n".to_vec();
        req.extend_from_slice(&tile);
        let mut out = Vec::new();
        run_echo_backend(&req[..], &mut out, 4, EchoFaults::default()).unwrap();
        let mut r = &out[..];
        let mut hs = String::new();
        r.read_line(&mut hs).unwrap();
        assert_eq!(parse_handshake(hs.trim_end()).unwrap(), 4);
        match read_reply(&mut r, 4) {
            Reply::Vector(v) => assert_eq!(v, vec![0.2; 4]),
            _ => panic!("expected a vector"),
        }
        assert!(matches!(read_reply(&mut r, 4), Reply::Closed(_)));
    }

    #[test]
    fn short_and_garbled_replies() {
        let mut short = b"VEC\n".to_vec();
        short.extend_from_slice(&[0u8; 12]);
        assert!(matches!(read_reply(&mut &short[..], 4), Reply::ShortVector(3)));
        short.push(0);
        assert!(matches!(read_reply(&mut &short[..], 4), Reply::Bad(_)));
        assert!(matches!(read_reply(&mut &b"NOPE\n"[..], 4), Reply::Bad(_)));
    }
}
