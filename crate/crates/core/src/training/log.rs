//! Per-step training log as CSV.

use std::io::Write;

use crate::distortion::LossBreakdown;
use crate::error::Result;

pub const LOG_COLUMNS: [&str; 7] = ["step", "pixel_l2", "perceptual", "adversarial", "disc_obj", "rate_bpp", "total"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: LossBreakdown,
}

pub fn write_log<W: Write>(out: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_COLUMNS)?;
    for r in rows {
        let l = &r.loss;
        w.write_record([
            r.step.to_string(),
            l.pixel_l2.to_string(),
            l.perceptual.to_string(),
            l.adversarial.to_string(),
            l.disc_obj.to_string(),
            l.rate_bpp.to_string(),
            l.total.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
