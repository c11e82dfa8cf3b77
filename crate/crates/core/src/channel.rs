//! Packetization and a packet-clocked Gilbert-Elliott loss channel.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Bitstream, LossMap};
use crate::error::{Error, Result};

/// Burstiness used when a configuration is derived from a loss target.
pub const DEFAULT_P_BG: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub p_gb: f64,
    pub p_bg: f64,
    pub e_g: f64,
    pub e_b: f64,
    pub payload_bytes: usize,
    /// Throughput in bits per second.
    pub t_net: f64,
    /// Latency budget in seconds.
    pub tau: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            p_gb: 0.0,
            p_bg: DEFAULT_P_BG,
            e_g: 0.0,
            e_b: 1.0,
            payload_bytes: 1024,
            t_net: 10e6,
            tau: 0.1,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_gb", self.p_gb), ("p_bg", self.p_bg), ("e_g", self.e_g), ("e_b", self.e_b)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.p_gb + self.p_bg > 0.0) {
            return Err(Error::InvalidParameter("p_gb + p_bg must be positive".into()));
        }
        if self.payload_bytes < 64 {
            return Err(Error::InvalidParameter(format!(
                "payload_bytes {} below 64",
                self.payload_bytes
            )));
        }
        if !(self.t_net > 0.0) || !(self.tau >= 0.0) {
            return Err(Error::InvalidParameter("t_net must be positive and tau non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Stationary loss probability of the chain.
pub fn analytical_loss_rate(cfg: &ChannelConfig) -> Result<f64> {
    let denom = cfg.p_gb + cfg.p_bg;
    if !(denom > 0.0) {
        return Err(Error::InvalidParameter("degenerate chain: p_gb + p_bg = 0".into()));
    }
    Ok((cfg.p_bg * cfg.e_g + cfg.p_gb * cfg.e_b) / denom)
}

/// Channel whose stationary loss rate equals `target_bler`, with the default
/// burstiness and an all-or-nothing loss per state.
pub fn bler_to_config(target_bler: f64) -> Result<ChannelConfig> {
    if !(0.0..=0.5).contains(&target_bler) {
        return Err(Error::InvalidParameter(format!("target BLER {target_bler} outside [0, 0.5]")));
    }
    let p_bg = DEFAULT_P_BG;
    Ok(ChannelConfig {
        p_gb: target_bler * p_bg / (1.0 - target_bler),
        p_bg,
        e_g: 0.0,
        e_b: 1.0,
        ..ChannelConfig::default()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelState {
    Good,
    Bad,
}

impl ChannelState {
    pub fn as_char(self) -> char {
        match self {
            ChannelState::Good => 'G',
            ChannelState::Bad => 'B',
        }
    }
}

/// The two-state chain. Each step draws two uniforms: one decides the loss
/// in the current state, the other the next state. The next state is Bad
/// iff the draw falls below `p_gb` (from Good) or `1 - p_bg` (from Bad), so
/// for a fixed seed a larger `p_gb` only ever adds Bad steps.
pub struct GilbertElliott {
    cfg: ChannelConfig,
    state: ChannelState,
    rng: ChaCha8Rng,
}

impl GilbertElliott {
    pub fn new(cfg: &ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(GilbertElliott {
            cfg: cfg.clone(),
            state: ChannelState::Good,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn state(&self) -> ChannelState {
        self.state
    }

    /// Sends one packet; returns the state it was sent in and whether it
    /// got through.
    pub fn step(&mut self) -> (ChannelState, bool) {
        let u_loss: f64 = self.rng.gen();
        let u_next: f64 = self.rng.gen();
        let s = self.state;
        let (e, to_bad) = match s {
            ChannelState::Good => (self.cfg.e_g, self.cfg.p_gb),
            ChannelState::Bad => (self.cfg.e_b, 1.0 - self.cfg.p_bg),
        };
        let lost = u_loss < e;
        self.state = if u_next < to_bad {
            ChannelState::Bad
        } else {
            ChannelState::Good
        };
        (s, !lost)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketKind {
    /// Control plane: header, slice directory, poses, polygons. Never lost.
    Reliable { index: u32 },
    Data { frame_idx: u32, slice_idx: u32, fragment_idx: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub kind: PacketKind,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct Packetized {
    pub packets: Vec<Packet>,
    pub frame_count: u32,
    pub slices_per_frame: u32,
    pub total_bytes: usize,
    /// Estimated transmission time in seconds.
    pub tau_est: f64,
}

/// Splits the stream into packets. The header, slice directory and the
/// control bytes form the reliable stream; each slice becomes
/// ⌈len / payload⌉ data fragments.
pub fn packetize(bits: &Bitstream, control: &[u8], cfg: &ChannelConfig) -> Result<Packetized> {
    cfg.validate()?;
    let pb = cfg.payload_bytes;
    let mut packets = Vec::new();
    let reliable = bits.header_len() + control.len();
    let n_rel = reliable.div_ceil(pb).max(1);
    for i in 0..n_rel {
        packets.push(Packet {
            kind: PacketKind::Reliable { index: i as u32 },
            len: (reliable - i * pb).min(pb),
        });
    }
    let slices = bits.slices_per_frame();
    for f in 0..bits.frame_count() {
        for s in 0..slices {
            let len = bits.entry(f, s).len as usize;
            let n = len.div_ceil(pb).max(1);
            for k in 0..n {
                packets.push(Packet {
                    kind: PacketKind::Data {
                        frame_idx: f,
                        slice_idx: s,
                        fragment_idx: k as u32,
                    },
                    len: (len - k * pb).min(pb),
                });
            }
        }
    }
    let total_bytes = bits.total_bytes() + control.len();
    Ok(Packetized {
        packets,
        frame_count: bits.frame_count(),
        slices_per_frame: slices,
        total_bytes,
        tau_est: estimate_tau(total_bytes, cfg.t_net),
    })
}

pub fn estimate_tau(total_bytes: usize, t_net: f64) -> f64 {
    total_bytes as f64 * 8.0 / t_net
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketRecord {
    pub packet: Packet,
    pub state: ChannelState,
    pub delivered: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PacketTrace {
    pub records: Vec<PacketRecord>,
    pub frame_count: u32,
    pub slices_per_frame: u32,
}

/// Runs every packet through the chain. Reliable packets are delivered and
/// do not advance it.
pub fn transmit(packets: &Packetized, cfg: &ChannelConfig) -> Result<PacketTrace> {
    let mut chain = GilbertElliott::new(cfg)?;
    let records = packets
        .packets
        .iter()
        .map(|&packet| match packet.kind {
            PacketKind::Reliable { .. } => PacketRecord {
                packet,
                state: chain.state(),
                delivered: true,
            },
            PacketKind::Data { .. } => {
                let (state, delivered) = chain.step();
                PacketRecord {
                    packet,
                    state,
                    delivered,
                }
            }
        })
        .collect();
    Ok(PacketTrace {
        records,
        frame_count: packets.frame_count,
        slices_per_frame: packets.slices_per_frame,
    })
}

impl PacketTrace {
    fn data(&self) -> impl Iterator<Item = &PacketRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r.packet.kind, PacketKind::Data { .. }))
    }

    pub fn data_packets(&self) -> usize {
        self.data().count()
    }

    pub fn lost_packets(&self) -> usize {
        self.data().filter(|r| !r.delivered).count()
    }

    /// Fraction of data packets lost; 0 when there were none.
    pub fn realized_loss_rate(&self) -> f64 {
        let n = self.data_packets();
        if n == 0 {
            0.0
        } else {
            self.lost_packets() as f64 / n as f64
        }
    }

    /// A slice is available iff every one of its fragments was delivered.
    pub fn availability(&self) -> LossMap {
        let mut map = vec![vec![true; self.slices_per_frame as usize]; self.frame_count as usize];
        for r in self.data() {
            if let PacketKind::Data { frame_idx, slice_idx, .. } = r.packet.kind {
                if !r.delivered {
                    map[frame_idx as usize][slice_idx as usize] = false;
                }
            }
        }
        map
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["packet_idx", "frame_idx", "slice_idx", "fragment_idx", "state", "delivered"])?;
        for (i, r) in self.records.iter().enumerate() {
            let (f, s, k) = match r.packet.kind {
                PacketKind::Reliable { .. } => (String::new(), String::new(), String::new()),
                PacketKind::Data {
                    frame_idx,
                    slice_idx,
                    fragment_idx,
                } => (frame_idx.to_string(), slice_idx.to_string(), fragment_idx.to_string()),
            };
            out.write_record([
                i.to_string(),
                f,
                s,
                k,
                r.state.as_char().to_string(),
                (r.delivered as u8).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean length of maximal runs of `true` in `lost`; 0 without losses.
pub fn mean_burst_length(lost: &[bool]) -> f64 {
    let mut runs = 0usize;
    let mut total = 0usize;
    let mut prev = false;
    for &l in lost {
        if l {
            total += 1;
            if !prev {
                runs += 1;
            }
        }
        prev = l;
    }
    if runs == 0 {
        0.0
    } else {
        total as f64 / runs as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_batch, CodecParams};
    use crate::types::{Frame, FrameRole};

    fn cfg(p_gb: f64, p_bg: f64, e_g: f64, e_b: f64) -> ChannelConfig {
        ChannelConfig {
            p_gb,
            p_bg,
            e_g,
            e_b,
            ..ChannelConfig::default()
        }
    }

    fn stream(frames: usize) -> Bitstream {
        let f = Frame::filled(320, 192, [0, 0, 0], FrameRole::Delta).unwrap();
        encode_batch(&vec![f; frames], &CodecParams::default()).unwrap()
    }

    #[test]
    fn analytical_examples() {
        assert!((analytical_loss_rate(&cfg(0.1, 0.5, 0.0, 1.0)).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((analytical_loss_rate(&cfg(0.5, 0.5, 0.01, 0.5)).unwrap() - 0.255).abs() < 1e-15);
        for (a, b) in [(0.2, 0.7), (0.01, 0.9), (1.0, 0.0)] {
            assert!((analytical_loss_rate(&cfg(a, b, 0.3, 0.3)).unwrap() - 0.3).abs() < 1e-15);
        }
        assert!(analytical_loss_rate(&cfg(0.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn bler_mapping() {
        assert_eq!(bler_to_config(0.0).unwrap().p_gb, 0.0);
        assert!((bler_to_config(0.25).unwrap().p_gb - 0.1).abs() < 1e-15);
        for x in [0.05, 0.1, 0.25, 0.5] {
            let c = bler_to_config(x).unwrap();
            assert!((analytical_loss_rate(&c).unwrap() - x).abs() < 1e-12);
        }
        assert!(bler_to_config(0.51).is_err());
        assert!(bler_to_config(-0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1.2, 0.3, 0.0, 1.0).validate().is_err());
        assert!(cfg(0.0, 0.0, 0.0, 1.0).validate().is_err());
        let small = ChannelConfig {
            payload_bytes: 63,
            ..ChannelConfig::default()
        };
        assert!(small.validate().is_err());
    }

    #[test]
    fn fragment_counts() {
        let bs = stream(1);
        let c = ChannelConfig {
            payload_bytes: 64,
            ..ChannelConfig::default()
        };
        let p = packetize(&bs, &[], &c).unwrap();
        for s in 0..12 {
            let len = bs.entry(0, s).len as usize;
            let n = p
                .packets
                .iter()
                .filter(|q| matches!(q.kind, PacketKind::Data { slice_idx, .. } if slice_idx == s))
                .count();
            assert_eq!(n, len.div_ceil(64));
        }
        let reliable = p
            .packets
            .iter()
            .filter(|q| matches!(q.kind, PacketKind::Reliable { .. }))
            .count();
        assert_eq!(reliable, bs.header_len().div_ceil(64));
        assert_eq!(p.packets.iter().map(|q| q.len).sum::<usize>(), bs.total_bytes());
    }

    #[test]
    fn single_small_slice() {
        let f = Frame::filled(16, 16, [0, 0, 0], FrameRole::Delta).unwrap();
        let bs = encode_batch(&[f], &CodecParams { slice_rows: 2, ..CodecParams::default() }).unwrap();
        assert_eq!(bs.slices_per_frame(), 1);
        let p = packetize(&bs, &[], &ChannelConfig::default()).unwrap();
        assert_eq!(p.packets.len(), 2);
        assert!(matches!(p.packets[0].kind, PacketKind::Reliable { index: 0 }));
    }

    #[test]
    fn two_kib_slice_is_two_fragments() {
        let n = 2048usize.div_ceil(1024);
        assert_eq!(n, 2);
        // and through packetize, with a payload that divides a slice exactly
        let bs = stream(1);
        let len = bs.entry(0, 0).len as usize;
        let c = ChannelConfig {
            payload_bytes: len.div_ceil(2).max(64),
            ..ChannelConfig::default()
        };
        let p = packetize(&bs, &[], &c).unwrap();
        let frags = p
            .packets
            .iter()
            .filter(|q| matches!(q.kind, PacketKind::Data { slice_idx: 0, .. }))
            .count();
        assert_eq!(frags, len.div_ceil(c.payload_bytes));
    }

    #[test]
    fn tau_estimate() {
        assert!((estimate_tau(150_000, 10e6) - 0.12).abs() < 1e-12);
        assert!((estimate_tau(62_500, 10e6) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn extreme_loss_probabilities() {
        let bs = stream(3);
        let p = packetize(&bs, &[1, 2, 3], &ChannelConfig::default()).unwrap();
        let t = transmit(&p, &cfg(0.3, 0.3, 0.0, 0.0)).unwrap();
        assert!(t.records.iter().all(|r| r.delivered));
        assert!(t.availability().iter().flatten().all(|&a| a));
        let t = transmit(&p, &cfg(0.3, 0.3, 1.0, 1.0)).unwrap();
        for r in &t.records {
            assert_eq!(r.delivered, matches!(r.packet.kind, PacketKind::Reliable { .. }));
        }
        assert_eq!(t.realized_loss_rate(), 1.0);
        assert!(t.availability().iter().flatten().all(|&a| !a));
    }

    #[test]
    fn availability_is_and_of_fragments() {
        let bs = stream(2);
        let c = ChannelConfig {
            payload_bytes: 64,
            seed: 17,
            ..bler_to_config(0.25).unwrap()
        };
        let p = packetize(&bs, &[], &c).unwrap();
        let t = transmit(&p, &c).unwrap();
        let avail = t.availability();
        for f in 0..2u32 {
            for s in 0..12u32 {
                let all = t.records.iter().all(|r| match r.packet.kind {
                    PacketKind::Data { frame_idx, slice_idx, .. } if frame_idx == f && slice_idx == s => r.delivered,
                    _ => true,
                });
                assert_eq!(avail[f as usize][s as usize], all);
            }
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let bs = stream(4);
        let c = bler_to_config(0.1).unwrap().with_seed(99);
        let p = packetize(&bs, &[], &c).unwrap();
        assert_eq!(transmit(&p, &c).unwrap(), transmit(&p, &c).unwrap());
    }

    #[test]
    fn losses_nest_across_targets() {
        let bs = stream(10);
        let mut prev: Option<Vec<bool>> = None;
        for x in [0.0, 0.05, 0.1, 0.25, 0.5] {
            let c = bler_to_config(x).unwrap().with_seed(5);
            let p = packetize(&bs, &[], &c).unwrap();
            let lost: Vec<bool> = transmit(&p, &c).unwrap().records.iter().map(|r| !r.delivered).collect();
            if let Some(prev) = prev {
                assert!(prev.iter().zip(&lost).all(|(&a, &b)| !a || b));
            }
            prev = Some(lost);
        }
    }

    #[test]
    fn long_run_rate_and_bursts() {
        let c = cfg(0.1, 0.5, 0.0, 1.0).with_seed(3);
        let mut chain = GilbertElliott::new(&c).unwrap();
        let lost: Vec<bool> = (0..1_000_000).map(|_| !chain.step().1).collect();
        let rate = lost.iter().filter(|&&l| l).count() as f64 / lost.len() as f64;
        assert!((rate - 1.0 / 6.0).abs() <= 0.002, "rate {rate}");
        let burst = mean_burst_length(&lost);
        assert!((burst - 2.0).abs() <= 0.1, "burst {burst}");
    }

    #[test]
    fn burst_length_helper() {
        assert_eq!(mean_burst_length(&[false, true, true, false, true]), 1.5);
        assert_eq!(mean_burst_length(&[false; 4]), 0.0);
    }

    #[test]
    fn csv_export() {
        let bs = stream(1);
        let c = bler_to_config(0.25).unwrap();
        let p = packetize(&bs, &[], &c).unwrap();
        let t = transmit(&p, &c).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "packet_idx,frame_idx,slice_idx,fragment_idx,state,delivered");
        assert_eq!(lines.next().unwrap(), "0,,,,G,1");
        assert_eq!(text.lines().count(), t.records.len() + 1);
    }
}
