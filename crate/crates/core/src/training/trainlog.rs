//! Per-step CSV log of loss components.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, UdorError};
use crate::losses::LossBreakdown;

pub const LOG_HEADER: &str = "step,rec,cla,rem,adv_g,adv_c,gp,total";

pub struct TrainLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TrainLog {
    /// Opens the log for a run that has completed `start_step` steps. Rows
    /// past `start_step` (left by a run that died after its last checkpoint)
    /// are dropped so a resumed run does not duplicate them.
    pub fn open(path: &Path, start_step: u64) -> Result<Self> {
        let io = |e| UdorError::io(path, e);
        if start_step == 0 || !path.exists() {
            let mut f = File::create(path).map_err(io)?;
            writeln!(f, "{LOG_HEADER}").map_err(io)?;
        } else {
            let text = fs::read_to_string(path).map_err(io)?;
            let mut kept = String::with_capacity(text.len());
            for (i, line) in text.lines().enumerate() {
                let keep = i == 0
                    || line
                        .split(',')
                        .next()
                        .and_then(|s| s.parse::<u64>().ok())
                        .is_some_and(|s| s <= start_step);
                if keep {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
            fs::write(path, kept).map_err(io)?;
        }
        let file = OpenOptions::new().append(true).open(path).map_err(io)?;
        Ok(TrainLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, step: u64, b: &LossBreakdown) -> Result<()> {
        writeln!(
            self.out,
            "{step},{},{},{},{},{},{},{}",
            b.rec, b.cla, b.rem, b.adv_generator, b.adv_critic, b.gp, b.total
        )
        .map_err(|e| UdorError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| UdorError::io(&self.path, e))
    }
}

impl Drop for TrainLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Reads a log back as `(step, breakdown)` rows.
pub fn read_log(path: &Path) -> Result<Vec<(u64, LossBreakdown)>> {
    let text = fs::read_to_string(path).map_err(|e| UdorError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(UdorError::Format(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || UdorError::Format(format!("{} line {}", path.display(), i + 2));
            let v: Vec<&str> = line.split(',').collect();
            if v.len() != 8 {
                return Err(bad());
            }
            let f = |j: usize| v[j].parse::<f64>().map_err(|_| bad());
            Ok((
                v[0].parse().map_err(|_| bad())?,
                LossBreakdown {
                    rec: f(1)?,
                    cla: f(2)?,
                    rem: f(3)?,
                    adv_generator: f(4)?,
                    adv_critic: f(5)?,
                    gp: f(6)?,
                    total: f(7)?,
                },
            ))
        })
        .collect()
}
