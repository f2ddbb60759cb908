/// Fixed-point fraction bits for sub-cycle service times.
const FRAC: u32 = 16;

/// Rate limiter for device memory: requests leave at the peak byte rate,
/// with up to a burst's worth admitted back to back. Requests beyond the
/// burst queue in arrival order.
#[derive(Debug, Clone)]
pub struct HbmQueue {
    ticks_per_byte_num: u128,
    ticks_per_byte_den: u128,
    tolerance_ticks: u64,
    tat: u64,
    pub bytes_read: u64,
    pub requests: u64,
    pub total_delay_cycles: u64,
}

impl HbmQueue {
    pub fn new(peak_bytes_per_sec: f64, clock_hz: f64, burst_bytes: u64) -> Self {
        // ticks per byte = 2^FRAC * clock / peak, held as an exact ratio of
        // integers scaled to milli-units.
        let num = ((clock_hz * 1000.0).round() as u128) << FRAC;
        let den = (peak_bytes_per_sec * 1000.0).round().max(1.0) as u128;
        let tolerance_ticks = (burst_bytes as u128 * num / den) as u64;
        HbmQueue {
            ticks_per_byte_num: num,
            ticks_per_byte_den: den,
            tolerance_ticks,
            tat: 0,
            bytes_read: 0,
            requests: 0,
            total_delay_cycles: 0,
        }
    }

    pub fn unlimited() -> Self {
        HbmQueue {
            ticks_per_byte_num: 0,
            ticks_per_byte_den: 1,
            tolerance_ticks: 0,
            tat: 0,
            bytes_read: 0,
            requests: 0,
            total_delay_cycles: 0,
        }
    }

    /// Queueing delay in cycles for a request of `bytes` arriving at `now`.
    pub fn request(&mut self, now: u64, bytes: u64) -> u64 {
        let now_t = now << FRAC;
        let service = (bytes as u128 * self.ticks_per_byte_num / self.ticks_per_byte_den) as u64;
        let start = self.tat.max(now_t);
        let wait = (start - now_t).saturating_sub(self.tolerance_ticks);
        self.tat = start + service;
        self.bytes_read += bytes;
        self.requests += 1;
        let delay = wait.div_ceil(1 << FRAC);
        self.total_delay_cycles += delay;
        delay
    }
}
