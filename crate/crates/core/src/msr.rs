//! Model-specific register encodings used by the voltage and frequency
//! control path: the overclocking mailbox (0x150) and the P-state control
//! registers of the EIST (0x199, 0x1AA) and HWP (0x774) interfaces.
//!
//! Everything here is a pure bit manipulation; nothing touches hardware.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MSR_OC_MAILBOX: u32 = 0x150;
pub const MSR_PERF_CTL: u32 = 0x199;
pub const MSR_MISC_PWR_MGMT: u32 = 0x1AA;
pub const MSR_HWP_REQUEST: u32 = 0x774;

const MAILBOX_BUSY: u64 = 1 << 63;
const DOMAIN_SHIFT: u32 = 40;
const DOMAIN_MASK: u64 = 0x7;
const COMMAND_SHIFT: u32 = 32;
const COMMAND_MASK: u64 = 0xFF;
const MODE_BIT: u64 = 1 << 20;
const OFFSET_SHIFT: u32 = 21;
const OFFSET_MASK: u64 = 0x7FF;
const STATIC_SHIFT: u32 = 8;
const STATIC_MASK: u64 = 0xFFF;

pub const OFFSET_MIN_MV: i16 = -1024;
pub const OFFSET_MAX_MV: i16 = 1023;
pub const STATIC_MAX_UNITS: u16 = 2047;

/// Default bus clock the ratio multiplies.
pub const DEFAULT_BASE_CLOCK_MHZ: u32 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MsrError {
    #[error("{field} value {value} outside {min}..={max}")]
    Range {
        field: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("malformed mailbox word {word:#018x}: {reason}")]
    Format { word: u64, reason: &'static str },
    #[error("MSR {address:#x}: value {value:#018x} violates the register contract")]
    InvalidWrite { address: u32, value: u64 },
}

/// Voltage domain addressed by a mailbox command, bits [42:40].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Cores = 0x0,
    CoreGpu = 0x1,
    LlcRing = 0x2,
    SystemAgent = 0x3,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Cores, Domain::CoreGpu, Domain::LlcRing, Domain::SystemAgent];

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            0x0 => Some(Domain::Cores),
            0x1 => Some(Domain::CoreGpu),
            0x2 => Some(Domain::LlcRing),
            0x3 => Some(Domain::SystemAgent),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Mailbox command byte, bits [39:32].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    ReadVoltage = 0x10,
    WriteVoltage = 0x11,
}

impl Command {
    pub const ALL: [Command; 2] = [Command::ReadVoltage, Command::WriteVoltage];

    pub fn from_byte(byte: u8) -> Option<Self> {
        match byte {
            0x10 => Some(Command::ReadVoltage),
            0x11 => Some(Command::WriteVoltage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Offset = 0,
    Static = 1,
}

/// Voltage payload: a signed millivolt offset or an absolute voltage in
/// 1/1024 V units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoltagePayload {
    Offset { mv: i16 },
    Static { units: u16 },
}

impl VoltagePayload {
    pub fn mode(self) -> Mode {
        match self {
            VoltagePayload::Offset { .. } => Mode::Offset,
            VoltagePayload::Static { .. } => Mode::Static,
        }
    }
}

/// Decoded form of an OC mailbox word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MailboxCommand {
    pub domain: Domain,
    pub command: Command,
    pub payload: VoltagePayload,
}

impl MailboxCommand {
    pub fn write_offset(domain: Domain, mv: i16) -> Self {
        MailboxCommand {
            domain,
            command: Command::WriteVoltage,
            payload: VoltagePayload::Offset { mv },
        }
    }

    pub fn mode(&self) -> Mode {
        self.payload.mode()
    }

    /// Static voltage in volts, when in static mode.
    pub fn static_volts(&self) -> Option<f64> {
        match self.payload {
            VoltagePayload::Static { units } => Some(f64::from(units) / 1024.0),
            VoltagePayload::Offset { .. } => None,
        }
    }
}

/// Encodes a mailbox command into the 64-bit word written to MSR 0x150.
pub fn encode_mailbox(cmd: &MailboxCommand) -> Result<u64, MsrError> {
    let mut word = MAILBOX_BUSY | ((cmd.domain as u64) << DOMAIN_SHIFT) | ((cmd.command as u64) << COMMAND_SHIFT);
    match cmd.payload {
        VoltagePayload::Offset { mv } => {
            if !(OFFSET_MIN_MV..=OFFSET_MAX_MV).contains(&mv) {
                return Err(MsrError::Range {
                    field: "offset_mv",
                    value: mv.into(),
                    min: OFFSET_MIN_MV.into(),
                    max: OFFSET_MAX_MV.into(),
                });
            }
            // 11-bit two's complement
            word |= ((mv as u64) & OFFSET_MASK) << OFFSET_SHIFT;
        }
        VoltagePayload::Static { units } => {
            if units > STATIC_MAX_UNITS {
                return Err(MsrError::Range {
                    field: "static_units",
                    value: units.into(),
                    min: 0,
                    max: STATIC_MAX_UNITS.into(),
                });
            }
            word |= MODE_BIT | (u64::from(units) << STATIC_SHIFT);
        }
    }
    Ok(word)
}

/// Decodes an OC mailbox word. The static field is read over its full
/// twelve bits; only the encoder restricts it to 2047.
pub fn decode_mailbox(word: u64) -> Result<MailboxCommand, MsrError> {
    if word & MAILBOX_BUSY == 0 {
        return Err(MsrError::Format {
            word,
            reason: "bit 63 must be set",
        });
    }
    let domain = Domain::from_bits(((word >> DOMAIN_SHIFT) & DOMAIN_MASK) as u8).ok_or(MsrError::Format {
        word,
        reason: "unknown domain",
    })?;
    let command = Command::from_byte(((word >> COMMAND_SHIFT) & COMMAND_MASK) as u8).ok_or(MsrError::Format {
        word,
        reason: "unknown command",
    })?;
    let payload = if word & MODE_BIT == 0 {
        let raw = ((word >> OFFSET_SHIFT) & OFFSET_MASK) as u16;
        // sign-extend from bit 10
        let mv = ((raw << 5) as i16) >> 5;
        VoltagePayload::Offset { mv }
    } else {
        VoltagePayload::Static {
            units: ((word >> STATIC_SHIFT) & STATIC_MASK) as u16,
        }
    };
    Ok(MailboxCommand {
        domain,
        command,
        payload,
    })
}

/// A processor performance state, identified by its clock ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PState {
    ratio: u8,
}

impl PState {
    pub fn new(ratio: u8) -> Result<Self, MsrError> {
        if ratio == 0 {
            return Err(MsrError::Range {
                field: "ratio",
                value: 0,
                min: 1,
                max: 255,
            });
        }
        Ok(PState { ratio })
    }

    pub fn ratio(self) -> u8 {
        self.ratio
    }

    /// Frequency at the default 100 MHz bus clock.
    pub fn frequency_mhz(self) -> u32 {
        pstate_frequency(self, DEFAULT_BASE_CLOCK_MHZ)
    }
}

impl TryFrom<u8> for PState {
    type Error = MsrError;
    fn try_from(ratio: u8) -> Result<Self, Self::Error> {
        PState::new(ratio)
    }
}

impl From<PState> for u8 {
    fn from(p: PState) -> u8 {
        p.ratio
    }
}

impl fmt::Display for PState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#04x}", self.ratio)
    }
}

pub fn pstate_frequency(p: PState, base_clock_mhz: u32) -> u32 {
    u32::from(p.ratio) * base_clock_mhz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PStateInterface {
    Eist,
    Hwp,
}

/// One planned register write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MsrWrite {
    pub address: u32,
    pub value: u64,
}

impl MsrWrite {
    pub fn new(address: u32, value: u64) -> Result<Self, MsrError> {
        if address == MSR_OC_MAILBOX && value & MAILBOX_BUSY == 0 {
            return Err(MsrError::InvalidWrite { address, value });
        }
        Ok(MsrWrite { address, value })
    }

    pub fn mailbox(cmd: &MailboxCommand) -> Result<Self, MsrError> {
        Ok(MsrWrite {
            address: MSR_OC_MAILBOX,
            value: encode_mailbox(cmd)?,
        })
    }
}

impl fmt::Display for MsrWrite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "wrmsr {:#x} {:#018x}", self.address, self.value)
    }
}

/// Register writes that pin the processor to `p`.
///
/// EIST: bit 0 of 0x1AA hands P-state selection to software, then the
/// ratio goes into bits [15:8] of 0x199. HWP: min [7:0], max [15:8] and
/// desired [23:16] of 0x774 all carry the same ratio.
pub fn plan_pstate_request(p: PState, interface: PStateInterface) -> Vec<MsrWrite> {
    let ratio = u64::from(p.ratio);
    match interface {
        PStateInterface::Eist => vec![
            MsrWrite {
                address: MSR_MISC_PWR_MGMT,
                value: 1,
            },
            MsrWrite {
                address: MSR_PERF_CTL,
                value: ratio << 8,
            },
        ],
        PStateInterface::Hwp => vec![MsrWrite {
            address: MSR_HWP_REQUEST,
            value: ratio | (ratio << 8) | (ratio << 16),
        }],
    }
}

/// Parses `0x`-prefixed or bare hexadecimal text into a word.
pub fn parse_hex_u64(text: &str) -> Option<u64> {
    let t = text.trim();
    let digits = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    let digits: String = digits.chars().filter(|c| *c != '_').collect();
    u64::from_str_radix(&digits, 16).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_minus_100mv() {
        let cmd = MailboxCommand::write_offset(Domain::Cores, -100);
        assert_eq!(encode_mailbox(&cmd).unwrap(), 0x8000_0011_F380_0000);
        assert_eq!(decode_mailbox(0x8000_0011_F380_0000).unwrap(), cmd);
    }

    #[test]
    fn zero_offset_identity() {
        let cmd = MailboxCommand::write_offset(Domain::Cores, 0);
        assert_eq!(encode_mailbox(&cmd).unwrap(), 0x8000_0011_0000_0000);
        assert_eq!(decode_mailbox(0x8000_0011_0000_0000).unwrap(), cmd);
    }

    #[test]
    fn offset_out_of_range() {
        let cmd = MailboxCommand::write_offset(Domain::Cores, -1025);
        assert!(matches!(encode_mailbox(&cmd), Err(MsrError::Range { .. })));
        let cmd = MailboxCommand::write_offset(Domain::Cores, 1024);
        assert!(matches!(encode_mailbox(&cmd), Err(MsrError::Range { .. })));
    }

    #[test]
    fn static_one_volt() {
        let cmd = MailboxCommand {
            domain: Domain::Cores,
            command: Command::WriteVoltage,
            payload: VoltagePayload::Static { units: 1024 },
        };
        let word = encode_mailbox(&cmd).unwrap();
        assert_eq!((word >> 8) & 0xFFF, 0x400);
        assert_eq!(word & (1 << 20), 1 << 20);
        let back = decode_mailbox(word).unwrap();
        assert_eq!(back, cmd);
        assert_eq!(back.static_volts(), Some(1.0));
        let too_big = MailboxCommand {
            payload: VoltagePayload::Static { units: 2048 },
            ..cmd
        };
        assert!(encode_mailbox(&too_big).is_err());
    }

    #[test]
    fn decode_accepts_wide_static_field() {
        let word = 0x8000_0011_0000_0000 | (1 << 20) | (0xFFF << 8);
        let cmd = decode_mailbox(word).unwrap();
        assert_eq!(cmd.payload, VoltagePayload::Static { units: 0xFFF });
    }

    #[test]
    fn decode_rejects_malformed() {
        assert!(matches!(
            decode_mailbox(0x0000_0011_F380_0000),
            Err(MsrError::Format { .. })
        ));
        // command 0x12
        assert!(decode_mailbox(0x8000_0012_0000_0000).is_err());
        // domain 0x4
        assert!(decode_mailbox(0x8000_0411_0000_0000).is_err());
    }

    #[test]
    fn sign_extension_extremes() {
        for mv in [OFFSET_MIN_MV, OFFSET_MAX_MV, -1, 1] {
            let cmd = MailboxCommand::write_offset(Domain::LlcRing, mv);
            let word = encode_mailbox(&cmd).unwrap();
            assert_eq!(decode_mailbox(word).unwrap(), cmd);
        }
    }

    #[test]
    fn pstate_frequencies() {
        let f = |r| PState::new(r).unwrap().frequency_mhz();
        assert_eq!(f(0x20), 3200);
        assert_eq!(f(0x08), 800);
        assert_eq!(f(0x1B), 2700);
        assert_eq!(f(0x24), 3600);
        assert_eq!(pstate_frequency(PState::new(0x20).unwrap(), 133), 32 * 133);
        assert!(PState::new(0).is_err());
    }

    #[test]
    fn pstate_request_plans() {
        let eist = plan_pstate_request(PState::new(0x1B).unwrap(), PStateInterface::Eist);
        assert_eq!(
            eist,
            vec![
                MsrWrite {
                    address: 0x1AA,
                    value: 1
                },
                MsrWrite {
                    address: 0x199,
                    value: 0x1B00
                }
            ]
        );
        let hwp = plan_pstate_request(PState::new(0x20).unwrap(), PStateInterface::Hwp);
        assert_eq!(hwp.len(), 1);
        assert_eq!(hwp[0].address, 0x774);
        let v = hwp[0].value;
        assert_eq!((v & 0xFF, (v >> 8) & 0xFF, (v >> 16) & 0xFF), (0x20, 0x20, 0x20));
    }

    #[test]
    fn mailbox_write_requires_bit_63() {
        assert!(MsrWrite::new(MSR_OC_MAILBOX, 0x11F3800000).is_err());
        assert!(MsrWrite::new(MSR_OC_MAILBOX, 0x8000_0011_F380_0000).is_ok());
        assert!(MsrWrite::new(MSR_PERF_CTL, 0x1B00).is_ok());
    }

    #[test]
    fn hex_parsing() {
        assert_eq!(parse_hex_u64("0x80000011f3800000"), Some(0x8000_0011_F380_0000));
        assert_eq!(parse_hex_u64("1B"), Some(0x1B));
        assert_eq!(parse_hex_u64("0x8000_0011"), Some(0x8000_0011));
        assert_eq!(parse_hex_u64("zz"), None);
    }

    fn arb_payload() -> impl Strategy<Value = VoltagePayload> {
        prop_oneof![
            (OFFSET_MIN_MV..=OFFSET_MAX_MV).prop_map(|mv| VoltagePayload::Offset { mv }),
            (0..=STATIC_MAX_UNITS).prop_map(|units| VoltagePayload::Static { units }),
        ]
    }

    fn arb_command() -> impl Strategy<Value = MailboxCommand> {
        (0usize..4, 0usize..2, arb_payload()).prop_map(|(d, c, payload)| MailboxCommand {
            domain: Domain::ALL[d],
            command: Command::ALL[c],
            payload,
        })
    }

    fn payload_mask(p: VoltagePayload) -> u64 {
        match p {
            VoltagePayload::Offset { .. } => OFFSET_MASK << OFFSET_SHIFT,
            VoltagePayload::Static { .. } => STATIC_MASK << STATIC_SHIFT,
        }
    }

    proptest! {
        #[test]
        fn fields_are_disjoint(a in arb_command(), d in 0usize..4, c in 0usize..2, p in arb_payload()) {
            let wa = encode_mailbox(&a).unwrap();
            let with_domain = MailboxCommand { domain: Domain::ALL[d], ..a };
            let diff = wa ^ encode_mailbox(&with_domain).unwrap();
            prop_assert_eq!(diff & !(DOMAIN_MASK << DOMAIN_SHIFT), 0);
            let with_cmd = MailboxCommand { command: Command::ALL[c], ..a };
            let diff = wa ^ encode_mailbox(&with_cmd).unwrap();
            prop_assert_eq!(diff & !(COMMAND_MASK << COMMAND_SHIFT), 0);
            if p.mode() == a.mode() {
                let with_payload = MailboxCommand { payload: p, ..a };
                let diff = wa ^ encode_mailbox(&with_payload).unwrap();
                prop_assert_eq!(diff & !payload_mask(p), 0);
            }
        }
    }
}
