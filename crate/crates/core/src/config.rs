//! Tunable constants for the radio model and every protocol, plus the flat
//! `key = value` override file.

use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct RadioConfig {
    pub range_m: f64,
    pub data_rate_bps: f64,
    pub frame_overhead_bytes: u32,
    pub ifq_capacity: usize,
    pub retry_limit: u32,
    pub backoff_min_us: u64,
    pub backoff_max_us: u64,
    /// Sender-side turnaround after a successful unicast (SIFS plus ACK).
    pub ack_us: u64,
    /// Upper bound of the random delay applied to routing broadcasts.
    pub broadcast_jitter_ms: u64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            range_m: 250.0,
            data_rate_bps: 2_000_000.0,
            frame_overhead_bytes: 58,
            ifq_capacity: 50,
            retry_limit: 7,
            backoff_min_us: 100,
            backoff_max_us: 2000,
            ack_us: 162,
            broadcast_jitter_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SendBufferParams {
    pub capacity: usize,
    pub timeout_s: f64,
}

impl Default for SendBufferParams {
    fn default() -> Self {
        SendBufferParams { capacity: 64, timeout_s: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsdvParams {
    pub periodic_interval_s: f64,
    pub full_dump_every: u32,
    pub min_trigger_spacing_s: f64,
    /// Consecutive missed full dumps before a silent neighbor is declared lost.
    pub missed_updates: u32,
}

impl Default for DsdvParams {
    fn default() -> Self {
        DsdvParams { periodic_interval_s: 15.0, full_dump_every: 3, min_trigger_spacing_s: 1.0, missed_updates: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AodvParams {
    pub hello_interval_s: f64,
    pub allowed_hello_loss: u32,
    pub active_route_timeout_s: f64,
    pub node_traversal_time_s: f64,
    pub ttl_start: u32,
    pub ttl_increment: u32,
    pub ttl_threshold: u32,
    pub rreq_retries: u32,
    pub net_diameter: u32,
    pub hello_enabled: bool,
    pub link_layer_detection: bool,
}

impl Default for AodvParams {
    fn default() -> Self {
        AodvParams {
            hello_interval_s: 1.0,
            allowed_hello_loss: 2,
            active_route_timeout_s: 10.0,
            node_traversal_time_s: 0.04,
            ttl_start: 1,
            ttl_increment: 2,
            ttl_threshold: 7,
            rreq_retries: 2,
            net_diameter: 35,
            hello_enabled: true,
            link_layer_detection: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsrParams {
    pub cache_capacity: usize,
    pub route_expiry_s: f64,
    pub nonprop_timeout_s: f64,
    pub rreq_timeout_s: f64,
    pub max_rreq_timeout_s: f64,
}

impl Default for DsrParams {
    fn default() -> Self {
        DsrParams {
            cache_capacity: 64,
            route_expiry_s: 300.0,
            nonprop_timeout_s: 0.03,
            rreq_timeout_s: 0.5,
            max_rreq_timeout_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZrpParams {
    pub radius: u32,
    pub beacon_interval_s: f64,
    pub beacon_loss: u32,
    pub iarp_refresh_s: f64,
    pub iarp_min_spacing_s: f64,
    pub query_timeout_s: f64,
    pub query_retries: u32,
    pub route_expiry_s: f64,
}

impl Default for ZrpParams {
    fn default() -> Self {
        ZrpParams {
            radius: 2,
            beacon_interval_s: 1.0,
            beacon_loss: 3,
            iarp_refresh_s: 5.0,
            iarp_min_spacing_s: 0.5,
            query_timeout_s: 1.0,
            query_retries: 3,
            route_expiry_s: 300.0,
        }
    }
}

/// All constants of one run besides the scenario itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimParams {
    pub radio: RadioConfig,
    pub sendbuf: SendBufferParams,
    pub dsdv: DsdvParams,
    pub aodv: AodvParams,
    pub dsr: DsrParams,
    pub zrp: ZrpParams,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(&'static str),
}

trait Value: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn show(&self) -> String;
}

impl Value for f64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for u32 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for usize {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "1" | "on" => Some(true),
            "false" | "0" | "off" => Some(false),
            _ => None,
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        impl SimParams {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            fn set_raw(&mut self, key: &str, value: &str) -> Result<(), bool> {
                match key {
                    $($key => {
                        self.$($field).+ = Value::parse_value(value).ok_or(true)?;
                        Ok(())
                    })*
                    _ => Err(false),
                }
            }

            fn get_raw(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(Value::show(&self.$($field).+)),)*
                    _ => None,
                }
            }
        }
    };
}

keys! {
    "radio.range_m" => radio.range_m;
    "radio.data_rate_bps" => radio.data_rate_bps;
    "radio.frame_overhead_bytes" => radio.frame_overhead_bytes;
    "radio.ifq_capacity" => radio.ifq_capacity;
    "radio.retry_limit" => radio.retry_limit;
    "radio.backoff_min_us" => radio.backoff_min_us;
    "radio.backoff_max_us" => radio.backoff_max_us;
    "radio.ack_us" => radio.ack_us;
    "radio.broadcast_jitter_ms" => radio.broadcast_jitter_ms;
    "sendbuf.capacity" => sendbuf.capacity;
    "sendbuf.timeout_s" => sendbuf.timeout_s;
    "dsdv.periodic_interval_s" => dsdv.periodic_interval_s;
    "dsdv.full_dump_every" => dsdv.full_dump_every;
    "dsdv.min_trigger_spacing_s" => dsdv.min_trigger_spacing_s;
    "dsdv.missed_updates" => dsdv.missed_updates;
    "aodv.hello_interval_s" => aodv.hello_interval_s;
    "aodv.allowed_hello_loss" => aodv.allowed_hello_loss;
    "aodv.active_route_timeout_s" => aodv.active_route_timeout_s;
    "aodv.node_traversal_time_s" => aodv.node_traversal_time_s;
    "aodv.ttl_start" => aodv.ttl_start;
    "aodv.ttl_increment" => aodv.ttl_increment;
    "aodv.ttl_threshold" => aodv.ttl_threshold;
    "aodv.rreq_retries" => aodv.rreq_retries;
    "aodv.net_diameter" => aodv.net_diameter;
    "aodv.hello_enabled" => aodv.hello_enabled;
    "aodv.link_layer_detection" => aodv.link_layer_detection;
    "dsr.cache_capacity" => dsr.cache_capacity;
    "dsr.route_expiry_s" => dsr.route_expiry_s;
    "dsr.nonprop_timeout_s" => dsr.nonprop_timeout_s;
    "dsr.rreq_timeout_s" => dsr.rreq_timeout_s;
    "dsr.max_rreq_timeout_s" => dsr.max_rreq_timeout_s;
    "zrp.radius" => zrp.radius;
    "zrp.beacon_interval_s" => zrp.beacon_interval_s;
    "zrp.beacon_loss" => zrp.beacon_loss;
    "zrp.iarp_refresh_s" => zrp.iarp_refresh_s;
    "zrp.iarp_min_spacing_s" => zrp.iarp_min_spacing_s;
    "zrp.query_timeout_s" => zrp.query_timeout_s;
    "zrp.query_retries" => zrp.query_retries;
    "zrp.route_expiry_s" => zrp.route_expiry_s;
}

impl SimParams {
    pub fn get(&self, key: &str) -> Option<String> {
        self.get_raw(key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_raw(key, value).map_err(|known| {
            if known {
                ConfigError::BadValue { line: 0, key: key.into(), value: value.into() }
            } else {
                ConfigError::UnknownKey { line: 0, key: key.into() }
            }
        })
    }

    /// Applies an override file: one `key = value` per line; blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_overrides(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            self.set(key, value).map_err(|e| match e {
                ConfigError::BadValue { key, value, .. } => ConfigError::BadValue { line, key, value },
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
                other => other,
            })?;
        }
        self.validate()
    }

    pub fn parse_overrides(text: &str) -> Result<Self, ConfigError> {
        let mut p = SimParams::default();
        p.apply_overrides(text)?;
        Ok(p)
    }

    /// Every key with its current value, in the override-file syntax.
    pub fn to_overrides_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get_raw(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.radio;
        if !(r.range_m > 0.0) {
            return Err(ConfigError::Invalid("radio range must be positive"));
        }
        if !(r.data_rate_bps > 0.0) {
            return Err(ConfigError::Invalid("data rate must be positive"));
        }
        if r.ifq_capacity == 0 {
            return Err(ConfigError::Invalid("interface queue capacity must be at least 1"));
        }
        if r.backoff_min_us > r.backoff_max_us {
            return Err(ConfigError::Invalid("backoff window is empty"));
        }
        if self.sendbuf.capacity == 0 || !(self.sendbuf.timeout_s > 0.0) {
            return Err(ConfigError::Invalid("send buffer needs positive capacity and timeout"));
        }
        if !(self.dsdv.periodic_interval_s > 0.0) || self.dsdv.full_dump_every == 0 {
            return Err(ConfigError::Invalid("dsdv periods must be positive"));
        }
        if !(self.aodv.hello_interval_s > 0.0) || !(self.aodv.node_traversal_time_s > 0.0) {
            return Err(ConfigError::Invalid("aodv intervals must be positive"));
        }
        if self.zrp.radius == 0 || !(self.zrp.beacon_interval_s > 0.0) || !(self.zrp.iarp_refresh_s > 0.0) {
            return Err(ConfigError::Invalid("zrp radius and intervals must be positive"));
        }
        if self.dsr.cache_capacity == 0 {
            return Err(ConfigError::Invalid("dsr cache capacity must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn secs(s: f64) -> SimTime {
    SimTime::from_secs_f64(s)
}
