//! Runs an arbitrary model as a subprocess over `DNB1` files.
//!
//! The command template must contain `{in}` and `{out}`. Each call gets a
//! fresh directory under the configured workdir, writes the input there as
//! `in.dnb`, substitutes shell-quoted paths into the template, and runs it
//! with `sh -c`. Exit status 0 plus an `out.dnb` of the input's shape is
//! success; anything else maps to a distinct error.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::image::{load_raw_f32, save_raw_f32, Image};

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalConfig {
    pub command: String,
    pub workdir: PathBuf,
    pub timeout: Duration,
    /// Upper bound on simultaneously running subprocesses.
    pub max_concurrent: usize,
    /// Whether the model claims bit-identical output for identical input.
    pub deterministic: bool,
}

impl ExternalConfig {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalConfig {
            command: command.into(),
            workdir: std::env::temp_dir(),
            timeout: Duration::from_secs(600),
            max_concurrent: 1,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.command.contains("{in}") || !self.command.contains("{out}") {
            return Err(Error::InvalidParams(
                "external command must contain {in} and {out}".into(),
            ));
        }
        if self.max_concurrent == 0 {
            return Err(Error::InvalidParams("external concurrency must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExternalOutput {
    pub image: Image,
    /// Wall time of the subprocess alone.
    pub subprocess: Duration,
}

#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct ExternalBackend {
    config: ExternalConfig,
    slots: Semaphore,
}

impl ExternalBackend {
    pub fn new(config: ExternalConfig) -> Result<Self> {
        config.validate()?;
        let slots = Semaphore::new(config.max_concurrent);
        Ok(ExternalBackend { config, slots })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    pub fn run(&self, x: &Image) -> Result<ExternalOutput> {
        let _permit = self.slots.acquire();
        external_denoise(&self.config.command, x, &self.config.workdir, self.config.timeout)
    }
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.to_string_lossy().replace('\'', r"'\''"))
}

pub fn external_denoise(
    command: &str,
    x: &Image,
    workdir: &Path,
    timeout: Duration,
) -> Result<ExternalOutput> {
    if !command.contains("{in}") || !command.contains("{out}") {
        return Err(Error::InvalidParams(
            "external command must contain {in} and {out}".into(),
        ));
    }
    std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let dir = tempfile::Builder::new()
        .prefix("dnb-")
        .tempdir_in(workdir)
        .map_err(|e| Error::io(workdir, e))?;
    let in_path = dir.path().join("in.dnb");
    let out_path = dir.path().join("out.dnb");
    save_raw_f32(x, &in_path)?;
    let script = command
        .replace("{in}", &shell_quote(&in_path))
        .replace("{out}", &shell_quote(&out_path));

    let start = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&script)
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::io("sh", e))?;
    let mut stderr_pipe = child.stderr.take().expect("stderr is piped");
    let stderr_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr_pipe.read_to_string(&mut s);
        s
    });

    let status = loop {
        match child.try_wait().map_err(|e| Error::io("sh", e))? {
            Some(status) => break status,
            None if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::ExternalTimeout {
                    seconds: timeout.as_secs_f64(),
                });
            }
            None => std::thread::sleep(Duration::from_millis(2)),
        }
    };
    let subprocess = start.elapsed();
    let stderr = stderr_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::ExternalExit {
            status: status.to_string(),
            stderr: stderr.trim_end().to_string(),
        });
    }
    if !out_path.exists() {
        return Err(Error::ExternalMissingOutput { path: out_path });
    }
    let image = load_raw_f32(&out_path)?;
    if !image.same_shape(x) {
        return Err(Error::ExternalShapeMismatch {
            expected: x.shape_string(),
            actual: image.shape_string(),
        });
    }
    Ok(ExternalOutput { image, subprocess })
}
